#pragma once

#include "mixdiff/dataset.hpp"
#include "mixdiff/types.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace mixdiff {

/// Linear classifier: logits(x) = W x + b with W of shape K x d.
/// Its representation map is the identity, so the input space doubles as
/// the embedding space and embedding-level mixup coincides with
/// input-level mixup for this model.
struct LinearSoftmaxModel {
  Eigen::MatrixXd weights;  // K x d
  Eigen::VectorXd bias;     // K

  int dim() const { return static_cast<int>(weights.cols()); }
  int num_classes() const { return static_cast<int>(weights.rows()); }

  Eigen::VectorXd logits(const FeatureVector& x) const { return weights * x + bias; }

  void validate() const;
};

/// JSON persistence: {"W": [[...]], "b": [...], "K": k, "d": d}.
void save_model(const LinearSoftmaxModel& model, const std::string& path);
LinearSoftmaxModel load_model(const std::string& path);

/// The classifier abstraction f(.). Implementations enforce their access
/// levels and must tolerate concurrent predict calls.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual int dim() const = 0;
  virtual int num_classes() const = 0;
  virtual bool supports(AccessLevel level) const = 0;
  virtual std::vector<ModelOutput> predict(const std::vector<FeatureVector>& batch,
                                           AccessLevel level) const = 0;
  virtual std::string describe() const = 0;
};

/// In-process backend over a LinearSoftmaxModel; supports every level.
class LocalBackend : public Backend {
 public:
  explicit LocalBackend(LinearSoftmaxModel model);

  int dim() const override { return model_.dim(); }
  int num_classes() const override { return model_.num_classes(); }
  bool supports(AccessLevel) const override { return true; }
  std::vector<ModelOutput> predict(const std::vector<FeatureVector>& batch,
                                   AccessLevel level) const override;
  std::string describe() const override { return "local"; }

  const LinearSoftmaxModel& model() const { return model_; }

 private:
  LinearSoftmaxModel model_;
};

/// Multinomial logistic regression, full-batch gradient descent from zero
/// initialization. Deterministic given the seed; the per-epoch training
/// loss is kept non-increasing by backtracking on the learning rate.
LinearSoftmaxModel fit_logistic(const LabeledDataset& data, int epochs, double learning_rate,
                                std::uint64_t seed);

/// Mean cross-entropy of the model on the labeled ID rows.
double logistic_loss(const LinearSoftmaxModel& model, const LabeledDataset& data);

enum class GradLoss { CEUniform, Entropy };

/// Analytic gradient of the chosen loss w.r.t. the input.
/// CEUniform: -(1/K) sum_k log p_k.  Entropy: -sum_k p_k log p_k.
FeatureVector grad_input(const LinearSoftmaxModel& model, const FeatureVector& x, GradLoss loss);

}  // namespace mixdiff

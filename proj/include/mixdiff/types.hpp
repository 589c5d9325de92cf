#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixdiff {

/// A point in input space (or embedding space); the unit the mixup
/// operators work on. Dense, double precision throughout.
using FeatureVector = Eigen::VectorXd;

/// Error carrying the name of the module that raised it, so the CLI can
/// emit "ERROR <module>: <message>" lines.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

inline bool all_finite(const Eigen::VectorXd& v) {
  return v.allFinite();
}

enum class OutputKind { Logits, Probs, LabelOneHot, Embedding };

std::string to_string(OutputKind kind);

/// One model response for one input. For Logits/Probs/LabelOneHot the
/// vector has one entry per class; for Embedding it is the representation
/// vector and carries no class semantics.
struct ModelOutput {
  OutputKind kind = OutputKind::Logits;
  Eigen::VectorXd values;

  int num_classes() const {
    return kind == OutputKind::Embedding ? 0 : static_cast<int>(values.size());
  }

  static ModelOutput logits(Eigen::VectorXd v) { return {OutputKind::Logits, std::move(v)}; }
  static ModelOutput probs(Eigen::VectorXd v) { return {OutputKind::Probs, std::move(v)}; }
  static ModelOutput label_one_hot(Eigen::VectorXd v) { return {OutputKind::LabelOneHot, std::move(v)}; }
  static ModelOutput embedding(Eigen::VectorXd v) { return {OutputKind::Embedding, std::move(v)}; }

  /// Throws core errors if the kind-specific invariants do not hold
  /// (probabilities sum to 1 within 1e-9, one-hot has a single 1, all
  /// entries finite).
  void validate() const;
};

/// Index of the largest entry; ties break toward the lowest class index.
/// Rejects Embedding outputs.
int argmax_class(const ModelOutput& out);

enum class AccessLevel { Logits, Probs, Labels, Embeddings };
enum class BaseScore { MSP, MLS, Energy, Entropy, MCM };
enum class AuxStrategy { InBatch, RandomID, OracleAsAux };
enum class OracleSelection { ByPredictedLabel, UnlabeledTopM, RandomOracle };

std::string to_string(AccessLevel level);
std::string to_string(BaseScore score);
std::string to_string(AuxStrategy strategy);
std::string to_string(OracleSelection selection);

AccessLevel access_level_from_string(const std::string& s);
BaseScore base_score_from_string(const std::string& s);
AuxStrategy aux_strategy_from_string(const std::string& s);
OracleSelection oracle_selection_from_string(const std::string& s);

/// One labeled (or unlabeled) in-distribution exemplar.
struct OracleExemplar {
  std::string id;
  FeatureVector features;
};

/// M in-distribution exemplars per class (labeled) or a flat pool of
/// M*K exemplars (unlabeled).
struct OracleSet {
  bool labeled = true;
  std::map<int, std::vector<OracleExemplar>> by_class;  // labeled only
  std::vector<OracleExemplar> pool;                     // unlabeled only

  int exemplars_per_class() const;
  int total() const;
  const std::vector<OracleExemplar>& class_exemplars(int k) const;

  /// Flat view over every exemplar (class order for labeled sets).
  std::vector<const OracleExemplar*> flattened() const;

  void validate() const;
};

/// Full configuration of one detection run.
struct MixDiffConfig {
  int num_aux = 3;       // N; ignored for InBatch/OracleAsAux where N is derived
  int num_ratios = 3;    // R
  int oracle_size = 3;   // M
  double gamma = 1.0;
  AccessLevel access_level = AccessLevel::Logits;
  BaseScore base_score = BaseScore::Entropy;
  AuxStrategy aux_strategy = AuxStrategy::InBatch;
  OracleSelection oracle_selection = OracleSelection::ByPredictedLabel;
  bool compare_enabled = true;
  double mcm_temperature = 1.0;

  void validate() const;
};

/// {r/(R+1) : r = 1..R}, strictly increasing, strictly inside (0,1).
std::vector<double> mixup_ratio_grid(int num_ratios);

}  // namespace mixdiff

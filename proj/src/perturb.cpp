#include "mixdiff/perturb.hpp"

namespace mixdiff {

namespace {

[[noreturn]] void perturb_error(const std::string& msg) { throw Error("perturb", msg); }

}  // namespace

FeatureVector mixup(const FeatureVector& x, const FeatureVector& x_aux, double lambda) {
  if (x.size() != x_aux.size())
    perturb_error("mixup dimension mismatch: " + std::to_string(x.size()) + " vs " +
                  std::to_string(x_aux.size()));
  if (!(lambda > 0.0) || lambda > 1.0)
    perturb_error("mixup ratio must lie in (0, 1], got " + std::to_string(lambda));
  if (lambda == 1.0) return x;
  return lambda * x + (1.0 - lambda) * x_aux;
}

PerturbedBatch perturb_batch(const FeatureVector& x, const std::string& source_id,
                             const std::vector<FeatureVector>& aux,
                             const std::vector<std::string>& aux_ids,
                             const std::vector<double>& ratios) {
  if (aux.empty()) perturb_error("no auxiliary samples");
  if (ratios.empty()) perturb_error("no mixup ratios");
  if (!aux_ids.empty() && aux_ids.size() != aux.size())
    perturb_error("auxiliary ids do not match the auxiliary list");

  PerturbedBatch batch;
  batch.num_aux = static_cast<int>(aux.size());
  batch.num_ratios = static_cast<int>(ratios.size());
  batch.entries.reserve(aux.size() * ratios.size());
  for (std::size_t i = 0; i < aux.size(); ++i) {
    for (std::size_t r = 0; r < ratios.size(); ++r) {
      PerturbedBatch::Entry e;
      e.features = mixup(x, aux[i], ratios[r]);
      e.aux_index = static_cast<int>(i);
      e.ratio_index = static_cast<int>(r);
      e.lambda = ratios[r];
      e.source_id = source_id;
      e.aux_id = aux_ids.empty() ? std::string() : aux_ids[i];
      batch.entries.push_back(std::move(e));
    }
  }
  return batch;
}

ModelOutput one_hot(const ModelOutput& out) {
  if (out.kind != OutputKind::Logits && out.kind != OutputKind::Probs)
    perturb_error("one_hot expects logits or probabilities, got " + to_string(out.kind));
  int k = argmax_class(out);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(out.values.size());
  v[k] = 1.0;
  return ModelOutput::label_one_hot(std::move(v));
}

}  // namespace mixdiff

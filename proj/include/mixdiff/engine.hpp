#pragma once

#include "mixdiff/backend.hpp"
#include "mixdiff/dataset.hpp"
#include "mixdiff/rng.hpp"
#include "mixdiff/scoring.hpp"
#include "mixdiff/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mixdiff {

/// Precomputed oracle side of the comparison: for each (aux i, ratio r)
/// the model outputs of the M perturbed oracles averaged in their native
/// space, plus the induced score outside label mode. Valid only for the
/// auxiliary set and ratio grid it was built with, both of which it
/// carries.
struct OracleCache {
  std::vector<ModelOutput> averaged;  // indexed i * R + r
  std::vector<double> scores;         // empty in label mode
  std::vector<FeatureVector> aux;     // mixing-space vectors
  std::vector<std::string> aux_ids;
  std::vector<double> ratios;
  std::vector<std::string> oracle_ids;

  int num_aux() const { return static_cast<int>(aux.size()); }
  int num_ratios() const { return static_cast<int>(ratios.size()); }
  const ModelOutput& at(int i, int r) const { return averaged[i * num_ratios() + r]; }
  double score_at(int i, int r) const { return scores[i * num_ratios() + r]; }
};

struct TermBreakdown {
  int aux_index = 0;
  int ratio_index = 0;
  std::string aux_id;
  double lambda = 0.0;
  double term = 0.0;  // s_ir - s*_ir (score modes), 1 - freq (label mode)
};

struct MixDiffResult {
  std::string target_id;
  int predicted_class = -1;
  std::optional<double> base_score;  // absent in label mode
  double mixdiff_score = 0.0;
  double final_score = 0.0;
  bool is_ood = false;  // ground truth passthrough for evaluation
  std::vector<TermBreakdown> breakdown;
};

/// Picks the oracle exemplars for one target.
///   ByPredictedLabel: the M exemplars of argmax(target_out).
///   UnlabeledTopM:    the M pool samples whose probability vectors have
///                     the highest dot product with the target's
///                     (pool_probs parallel to oracles.pool); ties break
///                     toward the lower sample id.
///   RandomOracle:     M draws without replacement from the full pool.
std::vector<OracleExemplar> select_oracles(const OracleSet& oracles,
                                           const ModelOutput& target_out,
                                           const MixDiffConfig& cfg,
                                           const std::vector<Eigen::VectorXd>* pool_probs = nullptr,
                                           const Eigen::VectorXd* target_probs = nullptr,
                                           Rng* rng = nullptr);

/// Builds the oracle side for one auxiliary set: for each (i, r) the mean
/// over m of the backend outputs of mixup(oracle_m, aux_i, lambda_r). In
/// label mode the mean of one-hot outputs is a per-class frequency vector
/// and no scalar score is stored.
OracleCache build_oracle_cache(const Backend& backend,
                               const std::vector<OracleExemplar>& oracles,
                               const std::vector<FeatureVector>& aux,
                               const std::vector<std::string>& aux_ids,
                               const MixDiffConfig& cfg);

/// Scores one target against a prepared cache. exclude_aux skips one
/// auxiliary index (the in-batch self entry). The aux argument must match
/// the set the cache was built with.
MixDiffResult mixdiff_score(const Backend& backend, const FeatureVector& target,
                            const std::string& target_id, const OracleCache& cache,
                            const std::vector<FeatureVector>& aux, const MixDiffConfig& cfg,
                            int exclude_aux = -1);

/// End-to-end detection over a dataset: target predictions, oracle
/// selection, cache construction and reuse, per-target scoring. One result
/// per target, in input order, independent of scheduling. jobs <= 0 uses
/// the hardware concurrency.
std::vector<MixDiffResult> run_detection(const Backend& backend, const LabeledDataset& targets,
                                         const OracleSet& oracles, const MixDiffConfig& cfg,
                                         std::uint64_t seed, int jobs = 0);

/// Projected gradient descent inside the L-infinity ball of radius eps.
/// ID inputs descend cross-entropy against the uniform distribution (the
/// detector should flag them); OOD inputs descend Shannon entropy (the
/// detector should clear them).
FeatureVector pgd_attack(const LinearSoftmaxModel& model, const FeatureVector& x, bool is_id,
                         double eps, int steps, double step_size);

}  // namespace mixdiff

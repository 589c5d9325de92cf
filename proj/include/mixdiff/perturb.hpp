#pragma once

#include "mixdiff/types.hpp"

#include <string>
#include <vector>

namespace mixdiff {

/// lambda * x + (1 - lambda) * x_aux, elementwise. lambda must lie in
/// (0, 1]; 1 returns x exactly.
FeatureVector mixup(const FeatureVector& x, const FeatureVector& x_aux, double lambda);

/// All N*R mixtures of one source with the auxiliary set, i-major r-minor.
struct PerturbedBatch {
  struct Entry {
    FeatureVector features;
    int aux_index = 0;
    int ratio_index = 0;
    double lambda = 0.0;
    std::string source_id;
    std::string aux_id;
  };
  std::vector<Entry> entries;
  int num_aux = 0;
  int num_ratios = 0;
};

PerturbedBatch perturb_batch(const FeatureVector& x, const std::string& source_id,
                             const std::vector<FeatureVector>& aux,
                             const std::vector<std::string>& aux_ids,
                             const std::vector<double>& ratios);

/// One-hot at the argmax of a Logits or Probs output; ties break toward
/// the lowest class index.
ModelOutput one_hot(const ModelOutput& out);

}  // namespace mixdiff

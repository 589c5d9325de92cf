#include "mixdiff/types.hpp"

#include <algorithm>
#include <cmath>

namespace mixdiff {

namespace {

[[noreturn]] void core_error(const std::string& msg) { throw Error("core", msg); }

}  // namespace

std::string to_string(OutputKind kind) {
  switch (kind) {
    case OutputKind::Logits: return "logits";
    case OutputKind::Probs: return "probs";
    case OutputKind::LabelOneHot: return "label_one_hot";
    case OutputKind::Embedding: return "embedding";
  }
  return "?";
}

void ModelOutput::validate() const {
  if (values.size() == 0) core_error("model output is empty");
  if (!all_finite(values)) core_error("model output has non-finite entries");
  if (kind == OutputKind::Probs) {
    if (values.minCoeff() < 0.0 || values.maxCoeff() > 1.0)
      core_error("probability entries outside [0,1]");
    if (std::abs(values.sum() - 1.0) > 1e-9)
      core_error("probabilities do not sum to 1 within 1e-9");
  } else if (kind == OutputKind::LabelOneHot) {
    int ones = 0;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      if (values[i] == 1.0) {
        ++ones;
      } else if (values[i] != 0.0) {
        core_error("one-hot output has an entry that is neither 0 nor 1");
      }
    }
    if (ones != 1) core_error("one-hot output must have exactly one entry equal to 1");
  }
}

int argmax_class(const ModelOutput& out) {
  if (out.kind == OutputKind::Embedding)
    core_error("argmax is undefined for embedding outputs");
  if (out.values.size() == 0) core_error("argmax of empty output");
  int best = 0;
  for (Eigen::Index i = 1; i < out.values.size(); ++i) {
    if (out.values[i] > out.values[best]) best = static_cast<int>(i);
  }
  return best;
}

std::string to_string(AccessLevel level) {
  switch (level) {
    case AccessLevel::Logits: return "logits";
    case AccessLevel::Probs: return "probs";
    case AccessLevel::Labels: return "labels";
    case AccessLevel::Embeddings: return "embeddings";
  }
  return "?";
}

std::string to_string(BaseScore score) {
  switch (score) {
    case BaseScore::MSP: return "msp";
    case BaseScore::MLS: return "mls";
    case BaseScore::Energy: return "energy";
    case BaseScore::Entropy: return "entropy";
    case BaseScore::MCM: return "mcm";
  }
  return "?";
}

std::string to_string(AuxStrategy strategy) {
  switch (strategy) {
    case AuxStrategy::InBatch: return "in_batch";
    case AuxStrategy::RandomID: return "random_id";
    case AuxStrategy::OracleAsAux: return "oracle_as_aux";
  }
  return "?";
}

std::string to_string(OracleSelection selection) {
  switch (selection) {
    case OracleSelection::ByPredictedLabel: return "by_predicted_label";
    case OracleSelection::UnlabeledTopM: return "unlabeled_top_m";
    case OracleSelection::RandomOracle: return "random_oracle";
  }
  return "?";
}

AccessLevel access_level_from_string(const std::string& s) {
  if (s == "logits") return AccessLevel::Logits;
  if (s == "probs") return AccessLevel::Probs;
  if (s == "labels") return AccessLevel::Labels;
  if (s == "embeddings") return AccessLevel::Embeddings;
  core_error("unknown access level '" + s + "'");
}

BaseScore base_score_from_string(const std::string& s) {
  if (s == "msp") return BaseScore::MSP;
  if (s == "mls") return BaseScore::MLS;
  if (s == "energy") return BaseScore::Energy;
  if (s == "entropy") return BaseScore::Entropy;
  if (s == "mcm") return BaseScore::MCM;
  core_error("unknown base score '" + s + "'");
}

AuxStrategy aux_strategy_from_string(const std::string& s) {
  if (s == "in_batch") return AuxStrategy::InBatch;
  if (s == "random_id") return AuxStrategy::RandomID;
  if (s == "oracle_as_aux") return AuxStrategy::OracleAsAux;
  core_error("unknown auxiliary strategy '" + s + "'");
}

OracleSelection oracle_selection_from_string(const std::string& s) {
  if (s == "by_predicted_label") return OracleSelection::ByPredictedLabel;
  if (s == "unlabeled_top_m") return OracleSelection::UnlabeledTopM;
  if (s == "random_oracle") return OracleSelection::RandomOracle;
  core_error("unknown oracle selection '" + s + "'");
}

int OracleSet::exemplars_per_class() const {
  if (labeled) {
    if (by_class.empty()) return 0;
    return static_cast<int>(by_class.begin()->second.size());
  }
  return static_cast<int>(pool.size());
}

int OracleSet::total() const {
  if (!labeled) return static_cast<int>(pool.size());
  int n = 0;
  for (const auto& [k, v] : by_class) n += static_cast<int>(v.size());
  return n;
}

const std::vector<OracleExemplar>& OracleSet::class_exemplars(int k) const {
  auto it = by_class.find(k);
  if (it == by_class.end())
    throw Error("engine", "no oracle exemplars for class " + std::to_string(k));
  return it->second;
}

std::vector<const OracleExemplar*> OracleSet::flattened() const {
  std::vector<const OracleExemplar*> out;
  if (labeled) {
    for (const auto& [k, v] : by_class)
      for (const auto& e : v) out.push_back(&e);
  } else {
    for (const auto& e : pool) out.push_back(&e);
  }
  return out;
}

void OracleSet::validate() const {
  if (labeled) {
    if (by_class.empty()) core_error("labeled oracle set has no classes");
    std::size_t m = by_class.begin()->second.size();
    for (const auto& [k, v] : by_class) {
      if (k < 0) core_error("oracle class index must be nonnegative");
      if (v.empty()) core_error("oracle class " + std::to_string(k) + " has no exemplars");
      if (v.size() != m) core_error("oracle classes have unequal exemplar counts");
      for (const auto& e : v)
        if (!all_finite(e.features)) core_error("oracle exemplar has non-finite features");
    }
    if (!pool.empty()) core_error("labeled oracle set must not carry a flat pool");
  } else {
    if (pool.empty()) core_error("unlabeled oracle pool is empty");
    if (!by_class.empty()) core_error("unlabeled oracle set must not carry class keys");
    for (const auto& e : pool)
      if (!all_finite(e.features)) core_error("oracle exemplar has non-finite features");
  }
}

void MixDiffConfig::validate() const {
  if (num_aux < 1) core_error("num_aux must be positive");
  if (num_ratios < 1) core_error("num_ratios must be positive");
  if (oracle_size < 1) core_error("oracle_size must be positive");
  if (!std::isfinite(gamma)) core_error("gamma must be finite");
  if (!(mcm_temperature > 0.0)) core_error("mcm_temperature must be positive");
  if (access_level == AccessLevel::Labels && !compare_enabled)
    core_error("compare_enabled=false is undefined in label mode");
  if (oracle_selection == OracleSelection::UnlabeledTopM && access_level == AccessLevel::Labels)
    core_error("unlabeled_top_m selection needs probability outputs, unavailable in label mode");
}

std::vector<double> mixup_ratio_grid(int num_ratios) {
  if (num_ratios < 1) core_error("mixup ratio grid needs R >= 1");
  std::vector<double> grid(num_ratios);
  for (int r = 1; r <= num_ratios; ++r)
    grid[r - 1] = static_cast<double>(r) / (num_ratios + 1);
  return grid;
}

}  // namespace mixdiff

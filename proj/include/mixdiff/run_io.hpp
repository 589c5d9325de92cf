#pragma once

#include "mixdiff/engine.hpp"
#include "mixdiff/metrics.hpp"
#include "mixdiff/types.hpp"

#include <map>
#include <string>
#include <vector>

namespace mixdiff {

/// key = value config file mirroring MixDiffConfig. '#' starts a comment;
/// unknown keys are an error. Keys: num_aux, num_ratios, oracle_size,
/// gamma, access_level, base_score, aux_strategy, oracle_selection,
/// compare_enabled, mcm_temperature.
MixDiffConfig load_config(const std::string& path);
void save_config(const MixDiffConfig& cfg, const std::string& path);

/// Results as JSONL, one object per line with stable field order:
/// {"id","predicted_class","base_score","mixdiff_score","final_score","ood"}.
void save_results_jsonl(const std::vector<MixDiffResult>& results, const std::string& path);
std::vector<MixDiffResult> load_results_jsonl(const std::string& path);

/// auroc / fpr95 / aucpr / threshold_mass for the base, mixdiff-only and
/// final score variants of a result list (base null when absent, variants
/// null when the results hold a single class).
std::string metrics_report_json(const std::vector<MixDiffResult>& results);

/// Plot-ready CSV: per-interval OOD-ID gaps of the mixdiff score bucketed
/// by the base score, below and above its TPR95 threshold.
std::string interval_gap_csv(const std::vector<MixDiffResult>& results);

/// Plot-ready CSV: Pearson correlation matrix of the score variants.
std::string score_correlation_csv(const std::vector<MixDiffResult>& results);

/// Run manifest written atomically next to the outputs. Timings are the
/// one field allowed to differ between otherwise identical runs.
struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  MixDiffConfig config;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::map<std::string, double> timings_ms;
  std::string artifact_version;
};

void save_manifest(const RunManifest& manifest, const std::string& path);

/// Atomic text write: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace mixdiff

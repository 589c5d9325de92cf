#include "mixdiff/run_io.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace mixdiff {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void io_error(const std::string& msg) { throw Error("cli", msg); }

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

json config_to_json(const MixDiffConfig& cfg) {
  json obj;
  obj["num_aux"] = cfg.num_aux;
  obj["num_ratios"] = cfg.num_ratios;
  obj["oracle_size"] = cfg.oracle_size;
  obj["gamma"] = cfg.gamma;
  obj["access_level"] = to_string(cfg.access_level);
  obj["base_score"] = to_string(cfg.base_score);
  obj["aux_strategy"] = to_string(cfg.aux_strategy);
  obj["oracle_selection"] = to_string(cfg.oracle_selection);
  obj["compare_enabled"] = cfg.compare_enabled;
  obj["mcm_temperature"] = cfg.mcm_temperature;
  return obj;
}

}  // namespace

MixDiffConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) io_error("cannot open config file '" + path + "'");
  MixDiffConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      io_error("config line " + std::to_string(line_no) + " is not key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "num_aux") cfg.num_aux = std::stoi(value);
      else if (key == "num_ratios") cfg.num_ratios = std::stoi(value);
      else if (key == "oracle_size") cfg.oracle_size = std::stoi(value);
      else if (key == "gamma") cfg.gamma = std::stod(value);
      else if (key == "access_level") cfg.access_level = access_level_from_string(value);
      else if (key == "base_score") cfg.base_score = base_score_from_string(value);
      else if (key == "aux_strategy") cfg.aux_strategy = aux_strategy_from_string(value);
      else if (key == "oracle_selection") cfg.oracle_selection = oracle_selection_from_string(value);
      else if (key == "compare_enabled") cfg.compare_enabled = (value == "true" || value == "1");
      else if (key == "mcm_temperature") cfg.mcm_temperature = std::stod(value);
      else io_error("unknown config key '" + key + "'");
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      io_error("cannot parse config value for '" + key + "' on line " + std::to_string(line_no));
    }
  }
  cfg.validate();
  return cfg;
}

void save_config(const MixDiffConfig& cfg, const std::string& path) {
  std::ostringstream out;
  out << "num_aux = " << cfg.num_aux << "\n"
      << "num_ratios = " << cfg.num_ratios << "\n"
      << "oracle_size = " << cfg.oracle_size << "\n"
      << "gamma = " << cfg.gamma << "\n"
      << "access_level = " << to_string(cfg.access_level) << "\n"
      << "base_score = " << to_string(cfg.base_score) << "\n"
      << "aux_strategy = " << to_string(cfg.aux_strategy) << "\n"
      << "oracle_selection = " << to_string(cfg.oracle_selection) << "\n"
      << "compare_enabled = " << (cfg.compare_enabled ? "true" : "false") << "\n"
      << "mcm_temperature = " << cfg.mcm_temperature << "\n";
  write_file_atomic(path, out.str());
}

void save_results_jsonl(const std::vector<MixDiffResult>& results, const std::string& path) {
  std::ostringstream out;
  for (const auto& r : results) {
    json obj;
    obj["id"] = r.target_id;
    obj["predicted_class"] = r.predicted_class;
    if (r.base_score)
      obj["base_score"] = *r.base_score;
    else
      obj["base_score"] = nullptr;
    obj["mixdiff_score"] = r.mixdiff_score;
    obj["final_score"] = r.final_score;
    obj["ood"] = r.is_ood;
    out << obj.dump() << "\n";
  }
  write_file_atomic(path, out.str());
}

std::vector<MixDiffResult> load_results_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) io_error("cannot open results file '" + path + "'");
  std::vector<MixDiffResult> results;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      io_error("malformed results line: " + std::string(e.what()));
    }
    MixDiffResult r;
    r.target_id = obj.at("id").get<std::string>();
    r.predicted_class = obj.at("predicted_class").get<int>();
    if (!obj.at("base_score").is_null()) r.base_score = obj["base_score"].get<double>();
    r.mixdiff_score = obj.at("mixdiff_score").get<double>();
    r.final_score = obj.at("final_score").get<double>();
    r.is_ood = obj.at("ood").get<bool>();
    results.push_back(std::move(r));
  }
  return results;
}

std::string metrics_report_json(const std::vector<MixDiffResult>& results) {
  if (results.empty()) io_error("no results to report metrics for");

  auto scored = [&](auto getter) {
    ScoredSet s;
    s.reserve(results.size());
    for (const auto& r : results) s.push_back({getter(r), r.is_ood});
    return s;
  };

  json report = json::object();
  // Metrics need both classes; a pure ID or pure OOD stream reports null.
  auto emit = [&](const std::string& name, const ScoredSet& s) {
    try {
      json m;
      m["auroc"] = auroc(s);
      m["fpr95"] = fpr_at_tpr(s, 0.95);
      m["aucpr"] = aucpr(s);
      auto mass = threshold_mass(s, 0.95);
      m["threshold_mass"] = {{"id_over", mass.id_over},
                             {"id_under", mass.id_under},
                             {"ood_over", mass.ood_over},
                             {"ood_under", mass.ood_under}};
      report[name] = std::move(m);
    } catch (const Error&) {
      report[name] = nullptr;
    }
  };

  bool has_base = results.front().base_score.has_value();
  if (has_base)
    emit("base", scored([](const MixDiffResult& r) { return *r.base_score; }));
  else
    report["base"] = nullptr;
  emit("mixdiff_only", scored([](const MixDiffResult& r) { return r.mixdiff_score; }));
  emit("final", scored([](const MixDiffResult& r) { return r.final_score; }));
  return report.dump(2) + "\n";
}

std::string interval_gap_csv(const std::vector<MixDiffResult>& results) {
  std::vector<double> base, other;
  std::vector<bool> ood;
  for (const auto& r : results) {
    if (!r.base_score) io_error("interval gaps need a base score");
    base.push_back(*r.base_score);
    other.push_back(r.mixdiff_score);
    ood.push_back(r.is_ood);
  }
  std::ostringstream csv;
  csv.precision(17);
  csv << "side,bin,lo,hi,id_count,ood_count,base_gap,mixdiff_gap\n";
  for (auto [side, name] : {std::pair{IntervalSide::Below, "below"},
                            std::pair{IntervalSide::Above, "above"}}) {
    std::vector<IntervalGap> gaps;
    try {
      gaps = interval_gap(base, other, ood, side, 0.95);
    } catch (const Error&) {
      continue;  // no samples on that side of the threshold
    }
    for (std::size_t b = 0; b < gaps.size(); ++b) {
      csv << name << ',' << b << ',' << gaps[b].lo << ',' << gaps[b].hi << ','
          << gaps[b].id_count << ',' << gaps[b].ood_count << ',';
      if (gaps[b].base_gap) csv << *gaps[b].base_gap;
      csv << ',';
      if (gaps[b].other_gap) csv << *gaps[b].other_gap;
      csv << "\n";
    }
  }
  return csv.str();
}

std::string score_correlation_csv(const std::vector<MixDiffResult>& results) {
  std::vector<std::pair<std::string, std::vector<double>>> columns;
  bool has_base = !results.empty() && results.front().base_score.has_value();
  if (has_base) columns.push_back({"base", {}});
  columns.push_back({"mixdiff_only", {}});
  columns.push_back({"final", {}});
  for (const auto& r : results) {
    std::size_t c = 0;
    if (has_base) columns[c++].second.push_back(*r.base_score);
    columns[c++].second.push_back(r.mixdiff_score);
    columns[c++].second.push_back(r.final_score);
  }
  Eigen::MatrixXd corr = score_correlation(columns);
  std::ostringstream csv;
  csv.precision(17);
  csv << "score";
  for (const auto& [name, col] : columns) csv << ',' << name;
  csv << "\n";
  for (std::size_t i = 0; i < columns.size(); ++i) {
    csv << columns[i].first;
    for (std::size_t j = 0; j < columns.size(); ++j) csv << ',' << corr(i, j);
    csv << "\n";
  }
  return csv.str();
}

void save_manifest(const RunManifest& manifest, const std::string& path) {
  json obj;
  obj["artifact_version"] = manifest.artifact_version;
  obj["command"] = manifest.command;
  obj["seed"] = manifest.seed;
  obj["config"] = config_to_json(manifest.config);
  obj["inputs"] = manifest.inputs;
  obj["outputs"] = manifest.outputs;
  obj["timings_ms"] = manifest.timings_ms;
  write_file_atomic(path, obj.dump(2) + "\n");
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) io_error("cannot open '" + tmp.string() + "' for writing");
    out << content;
    if (!out) io_error("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) io_error("cannot rename '" + tmp.string() + "' to '" + target.string() + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace mixdiff

// Command-line front end: detect, verify-theory, serve, attack, synth.

#include "mixdiff/backend.hpp"
#include "mixdiff/dataset.hpp"
#include "mixdiff/engine.hpp"
#include "mixdiff/metrics.hpp"
#include "mixdiff/remote.hpp"
#include "mixdiff/run_io.hpp"
#include "mixdiff/server.hpp"
#include "mixdiff/theory.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mixdiff;

namespace {

constexpr const char* kArtifactVersion = "0.1.0";

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

struct ConfigFlags {
  std::string config_path;
  std::string access_level, base_score, aux_strategy, oracle_selection;
  int num_aux = -1, num_ratios = -1, oracle_size = -1;
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double mcm_temperature = std::numeric_limits<double>::quiet_NaN();
  int compare = -1;  // -1 unset, 0 off, 1 on

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key = value lines)");
    cmd->add_option("--access-level", access_level, "logits|probs|labels|embeddings");
    cmd->add_option("--base-score", base_score, "msp|mls|energy|entropy|mcm");
    cmd->add_option("--aux-strategy", aux_strategy, "in_batch|random_id|oracle_as_aux");
    cmd->add_option("--oracle-selection", oracle_selection,
                    "by_predicted_label|unlabeled_top_m|random_oracle");
    cmd->add_option("--num-aux", num_aux, "auxiliary samples N (random_id)");
    cmd->add_option("--num-ratios", num_ratios, "mixup ratios R");
    cmd->add_option("--oracle-size", oracle_size, "oracle exemplars per class M");
    cmd->add_option("--gamma", gamma, "scaling of the mixdiff term");
    cmd->add_option("--mcm-temperature", mcm_temperature, "MCM temperature");
    cmd->add_flag("--compare,!--no-compare", compare, "enable the oracle comparison");
  }

  MixDiffConfig resolve() const {
    MixDiffConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (!access_level.empty()) cfg.access_level = access_level_from_string(access_level);
    if (!base_score.empty()) cfg.base_score = base_score_from_string(base_score);
    if (!aux_strategy.empty()) cfg.aux_strategy = aux_strategy_from_string(aux_strategy);
    if (!oracle_selection.empty())
      cfg.oracle_selection = oracle_selection_from_string(oracle_selection);
    if (num_aux > 0) cfg.num_aux = num_aux;
    if (num_ratios > 0) cfg.num_ratios = num_ratios;
    if (oracle_size > 0) cfg.oracle_size = oracle_size;
    if (!std::isnan(gamma)) cfg.gamma = gamma;
    if (!std::isnan(mcm_temperature)) cfg.mcm_temperature = mcm_temperature;
    if (compare != -1) cfg.compare_enabled = compare != 0;
    cfg.validate();
    return cfg;
  }
};

std::unique_ptr<Backend> open_backend(const std::string& spec) {
  if (spec.rfind("local:", 0) == 0)
    return std::make_unique<LocalBackend>(load_model(spec.substr(6)));
  if (spec.rfind("remote:", 0) == 0) {
    RemoteConfig rc;
    rc.url = spec.substr(7);
    return std::make_unique<RemoteBackend>(rc);
  }
  throw Error("cli", "backend must be local:<model.json> or remote:<url>");
}

int cmd_detect(const std::string& data_path, const std::string& oracles_path,
               const std::string& backend_spec, const std::string& out_dir, std::uint64_t seed,
               int jobs, const ConfigFlags& flags) {
  auto t0 = std::chrono::steady_clock::now();
  MixDiffConfig cfg = flags.resolve();

  LabeledDataset targets = load_dataset(data_path, dataset_format_from_path(data_path));
  LabeledDataset oracle_ds = load_dataset(oracles_path, dataset_format_from_path(oracles_path));
  if (targets.dim != oracle_ds.dim)
    throw Error("cli", "target and oracle datasets have different dimensions");
  bool labeled = cfg.oracle_selection != OracleSelection::UnlabeledTopM;
  OracleSet oracles = make_oracle_set(oracle_ds, cfg.oracle_size, labeled);
  double load_ms = elapsed_ms(t0);

  auto backend = open_backend(backend_spec);
  auto t1 = std::chrono::steady_clock::now();
  std::vector<MixDiffResult> results = run_detection(*backend, targets, oracles, cfg, seed, jobs);
  double detect_ms = elapsed_ms(t1);

  fs::create_directories(out_dir);
  fs::path out(out_dir);
  save_results_jsonl(results, (out / "results.jsonl").string());
  write_file_atomic((out / "metrics.json").string(), metrics_report_json(results));
  save_label_table(oracle_ds, (out / "label_table.json").string());

  // Plot-ready analyses; skipped when undefined (label mode, single class,
  // or a constant score column).
  try {
    write_file_atomic((out / "interval_gap.csv").string(), interval_gap_csv(results));
  } catch (const Error&) {
  }
  try {
    write_file_atomic((out / "score_correlation.csv").string(), score_correlation_csv(results));
  } catch (const Error&) {
  }

  RunManifest manifest;
  manifest.command = "detect";
  manifest.seed = seed;
  manifest.config = cfg;
  manifest.inputs = {{"data", data_path}, {"oracles", oracles_path}, {"backend", backend_spec}};
  manifest.outputs = {{"results", (out / "results.jsonl").string()},
                      {"metrics", (out / "metrics.json").string()},
                      {"label_table", (out / "label_table.json").string()}};
  manifest.timings_ms = {{"load", load_ms}, {"detect", detect_ms}, {"total", elapsed_ms(t0)}};
  manifest.artifact_version = kArtifactVersion;
  save_manifest(manifest, (out / "manifest.json").string());
  return 0;
}

int cmd_verify_theory(const std::string& spec_path, const std::string& out_dir,
                      std::uint64_t seed_override, bool has_seed, int epochs, double lr,
                      int lattice_points) {
  auto t0 = std::chrono::steady_clock::now();
  SyntheticSpec spec =
      spec_path.empty() ? default_synthetic_spec() : load_synthetic_spec(spec_path);
  if (has_seed) spec.seed = seed_override;

  LabeledDataset data = sample_synthetic(spec);
  LinearSoftmaxModel model = fit_logistic(data, epochs, lr, spec.seed);
  BinaryMarginModel margin = binary_margin(model);

  fs::create_directories(out_dir);
  fs::path out(out_dir);

  Rng rng = Rng::split(spec.seed, 11, 0);
  std::vector<std::pair<FeatureVector, FeatureVector>> pairs;
  for (int i = 0; i < 200; ++i) {
    std::size_t a = rng.bounded(data.records.size());
    std::size_t b = rng.bounded(data.records.size());
    if (a == b) b = (b + 1) % data.records.size();
    pairs.emplace_back(data.records[a].features, data.records[b].features);
  }
  std::vector<double> lambdas = {0.5, 0.7, 0.9, 0.99};

  json summary;
  bool all_pass = true;
  auto check = [&](const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << "  " << name
              << (detail.empty() ? "" : "  (" + detail + ")") << "\n";
    summary["checks"][name] = {{"pass", ok}, {"detail", detail}};
    all_pass = all_pass && ok;
  };

  for (BaseScore h : {BaseScore::MSP, BaseScore::Entropy, BaseScore::MLS}) {
    TaylorDecayReport report = verify_taylor_decay(margin, h, pairs, lambdas);
    std::ostringstream csv;
    csv << "lambda,max_abs_residual\n";
    csv.precision(17);
    for (std::size_t i = 0; i < report.lambdas.size(); ++i)
      csv << report.lambdas[i] << "," << report.max_abs_residual[i] << "\n";
    write_file_atomic((out / ("decay_" + to_string(h) + ".csv")).string(), csv.str());

    std::ostringstream detail;
    detail << "fitted_c=" << report.fitted_c << " monotone=" << report.monotone_fraction;
    check("taylor_decay_" + to_string(h), report.pass, detail.str());
    if (h == BaseScore::MLS) {
      double worst =
          *std::max_element(report.max_abs_residual.begin(), report.max_abs_residual.end());
      check("mls_residual_zero", worst <= 1e-12, "max=" + std::to_string(worst));
    }
    if (h == BaseScore::MSP) {
      int ok99 = 0;
      for (const auto& [xt, xi] : pairs)
        if (std::abs(omega_terms(margin, h, xt, xi, 0.99).residual) <= 1e-3) ++ok99;
      double frac = static_cast<double>(ok99) / pairs.size();
      check("msp_residual_0.99_under_1e-3", frac >= 0.95, "fraction=" + std::to_string(frac));
      check("msp_monotone_decay", report.monotone_fraction >= 0.95,
            "fraction=" + std::to_string(report.monotone_fraction));
    }
    check("omega2_zero_" + to_string(h), report.omega2_zero, "");
  }

  double extent = lattice_extent(data);
  auto grid = make_lattice(extent, lattice_points);
  Rng pair_rng = Rng::split(spec.seed, 12, 0);
  auto hard_pairs = mine_hard_ood_pairs(margin, spec, BaseScore::MSP, 100, pair_rng);
  check("hard_ood_pairs_found", static_cast<int>(hard_pairs.size()) == 100,
        "found=" + std::to_string(hard_pairs.size()));

  int nonempty = 0;
  bool lattice_written = false;
  for (const auto& [xt, xm] : hard_pairs) {
    auto qualifying = find_calibrating_aux(margin, BaseScore::MSP, xt, xm, 0.5, grid);
    if (!qualifying.empty()) ++nonempty;
    if (!lattice_written) {
      std::ostringstream csv;
      csv << "x,y,qualifies\n";
      csv.precision(17);
      for (const auto& p : grid) {
        bool q = calibration_gap(margin, BaseScore::MSP, xt, xm, p, 0.5) > 0.0;
        csv << p[0] << "," << p[1] << "," << (q ? 1 : 0) << "\n";
      }
      write_file_atomic((out / "lattice_msp.csv").string(), csv.str());
      lattice_written = true;
    }
  }
  double frac = hard_pairs.empty() ? 0.0 : static_cast<double>(nonempty) / hard_pairs.size();
  check("msp_calibrating_aux_exists", frac >= 0.95, "fraction=" + std::to_string(frac));

  auto mls_pairs = mine_hard_ood_pairs(margin, spec, BaseScore::MLS, 1, pair_rng);
  if (mls_pairs.empty()) {
    check("mls_all_lattice_points_qualify", false, "no pair with f(x_m) > f(x_t) > 0 found");
  } else {
    auto qualifying = find_calibrating_aux(margin, BaseScore::MLS, mls_pairs[0].first,
                                           mls_pairs[0].second, 0.5, grid);
    check("mls_all_lattice_points_qualify", qualifying.size() == grid.size(),
          std::to_string(qualifying.size()) + "/" + std::to_string(grid.size()));
  }

  summary["pass"] = all_pass;
  summary["elapsed_ms"] = elapsed_ms(t0);
  write_file_atomic((out / "summary.json").string(), summary.dump(2) + "\n");
  return all_pass ? 0 : 1;
}

std::atomic<ModelServer*> g_server{nullptr};

void handle_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

int cmd_serve(const std::string& model_path, const std::string& level, const std::string& host,
              int port, int max_batch, double latency_ms) {
  ServerConfig cfg;
  cfg.host = host;
  cfg.port = port;
  cfg.access_level = access_level_from_string(level);
  cfg.max_batch = max_batch;
  cfg.artificial_latency_ms = latency_ms;

  ModelServer server(load_model(model_path), cfg);
  g_server.store(&server);
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);

  std::cerr << "serving " << model_path << " on " << host << ":" << port << " at level " << level
            << "\n";
  bool ok = server.run();
  g_server.store(nullptr);
  if (!ok) throw Error("modelserver", "cannot bind " + host + ":" + std::to_string(port));
  return 0;
}

int cmd_attack(const std::string& data_path, const std::string& oracles_path,
               const std::string& model_path, double eps, const std::string& steps_csv,
               double step_size, const std::string& mode, const std::string& out_dir,
               std::uint64_t seed, int jobs, const ConfigFlags& flags) {
  auto t0 = std::chrono::steady_clock::now();
  if (mode != "in" && mode != "out" && mode != "both")
    throw Error("cli", "mode must be in, out or both");
  if (model_path.rfind("remote:", 0) == 0)
    throw Error("backend", "gradients unavailable for remote backends; the attack needs a local model");
  MixDiffConfig cfg = flags.resolve();

  std::vector<int> steps_list;
  std::stringstream ss(steps_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    steps_list.push_back(std::stoi(tok));
    if (steps_list.back() < 0) throw Error("cli", "steps must be nonnegative");
  }
  if (steps_list.empty()) throw Error("cli", "no step counts given");

  LabeledDataset targets = load_dataset(data_path, dataset_format_from_path(data_path));
  LabeledDataset oracle_ds = load_dataset(oracles_path, dataset_format_from_path(oracles_path));
  LinearSoftmaxModel model = load_model(model_path);
  bool labeled = cfg.oracle_selection != OracleSelection::UnlabeledTopM;
  OracleSet oracles = make_oracle_set(oracle_ds, cfg.oracle_size, labeled);
  LocalBackend backend(model);

  std::ostringstream csv;
  csv << "mode,steps,score_variant,auroc\n";
  csv.precision(17);

  for (int steps : steps_list) {
    LabeledDataset attacked = targets;
    for (auto& rec : attacked.records) {
      bool covered =
          mode == "both" || (mode == "in" && !rec.is_ood) || (mode == "out" && rec.is_ood);
      if (covered)
        rec.features = pgd_attack(model, rec.features, !rec.is_ood, eps, steps, step_size);
    }
    auto results = run_detection(backend, attacked, oracles, cfg, seed, jobs);

    auto scored = [&](auto getter) {
      ScoredSet s;
      for (const auto& r : results) s.push_back({getter(r), r.is_ood});
      return s;
    };
    if (results.front().base_score) {
      csv << mode << "," << steps << ",base,"
          << auroc(scored([](const MixDiffResult& r) { return *r.base_score; })) << "\n";
    }
    csv << mode << "," << steps << ",mixdiff_only,"
        << auroc(scored([](const MixDiffResult& r) { return r.mixdiff_score; })) << "\n";
    csv << mode << "," << steps << ",final,"
        << auroc(scored([](const MixDiffResult& r) { return r.final_score; })) << "\n";
  }

  fs::create_directories(out_dir);
  fs::path out(out_dir);
  write_file_atomic((out / "attack_auroc.csv").string(), csv.str());

  RunManifest manifest;
  manifest.command = "attack";
  manifest.seed = seed;
  manifest.config = cfg;
  manifest.inputs = {{"data", data_path},
                     {"oracles", oracles_path},
                     {"model", model_path},
                     {"eps", std::to_string(eps)},
                     {"steps", steps_csv},
                     {"step_size", std::to_string(step_size)},
                     {"mode", mode}};
  manifest.outputs = {{"auroc_csv", (out / "attack_auroc.csv").string()}};
  manifest.timings_ms = {{"total", elapsed_ms(t0)}};
  manifest.artifact_version = kArtifactVersion;
  save_manifest(manifest, (out / "manifest.json").string());
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_path,
              const std::string& model_out, std::uint64_t seed_override, bool has_seed, int epochs,
              double lr) {
  SyntheticSpec spec =
      spec_path.empty() ? default_synthetic_spec() : load_synthetic_spec(spec_path);
  if (has_seed) spec.seed = seed_override;
  LabeledDataset data = sample_synthetic(spec);
  save_dataset(data, out_path, dataset_format_from_path(out_path));
  if (!model_out.empty()) {
    LinearSoftmaxModel model = fit_logistic(data, epochs, lr, spec.seed);
    save_model(model, model_out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"perturb-and-compare OOD detection toolkit"};
  app.require_subcommand(1);

  auto* detect = app.add_subcommand("detect", "run OOD detection over a dataset");
  std::string d_data, d_oracles, d_backend, d_out;
  std::uint64_t d_seed = 0;
  int d_jobs = 0;
  ConfigFlags d_flags;
  detect->add_option("--data", d_data, "target dataset (.csv or .jsonl)")->required();
  detect->add_option("--oracles", d_oracles, "oracle dataset of labeled ID samples")->required();
  detect->add_option("--backend", d_backend, "local:<model.json> or remote:<url>")->required();
  detect->add_option("--out", d_out, "output directory")->required();
  detect->add_option("--seed", d_seed, "run seed")->required();
  detect->add_option("--jobs", d_jobs, "worker threads (default: cores)");
  d_flags.add_to(detect);

  auto* verify = app.add_subcommand(
      "verify-theory",
      "synthetic checks of the score decomposition and calibrating-auxiliary existence");
  std::string v_spec, v_out;
  std::uint64_t v_seed = 0;
  int v_epochs = 6, v_lattice = 121;
  double v_lr = 0.02;
  verify->add_option("--spec", v_spec, "synthetic spec JSON (default: built-in)");
  verify->add_option("--out", v_out, "output directory")->required();
  auto* v_seed_opt = verify->add_option("--seed", v_seed, "override the spec seed");
  verify->add_option("--epochs", v_epochs, "logistic training epochs");
  verify->add_option("--lr", v_lr, "logistic learning rate");
  verify->add_option("--lattice-points", v_lattice, "lattice points per axis");

  auto* serve = app.add_subcommand("serve", "expose a local model over HTTP at one access level");
  std::string s_model, s_level = "probs", s_host = "127.0.0.1";
  int s_port = 8080, s_max_batch = 256;
  double s_latency = 0.0;
  serve->add_option("--model", s_model, "model JSON")->required();
  serve->add_option("--level", s_level, "logits|probs|labels|embeddings");
  serve->add_option("--host", s_host, "bind address");
  serve->add_option("--port", s_port, "bind port");
  serve->add_option("--max-batch", s_max_batch, "max predict batch size");
  serve->add_option("--latency-ms", s_latency, "artificial per-request latency");

  auto* attack = app.add_subcommand("attack", "PGD sweep and detection AUROC per step count");
  std::string a_data, a_oracles, a_model, a_steps = "0,1,5,10", a_mode = "both", a_out;
  double a_eps = 0.0, a_step_size = 0.0;
  std::uint64_t a_seed = 0;
  int a_jobs = 0;
  ConfigFlags a_flags;
  attack->add_option("--data", a_data, "target dataset")->required();
  attack->add_option("--oracles", a_oracles, "oracle dataset")->required();
  attack->add_option("--model", a_model, "local model JSON (gradients required)")->required();
  attack->add_option("--eps", a_eps, "L-infinity budget")->required();
  attack->add_option("--steps", a_steps, "comma-separated step counts");
  attack->add_option("--step-size", a_step_size, "PGD step size")->required();
  attack->add_option("--mode", a_mode, "attack subset: in|out|both");
  attack->add_option("--out", a_out, "output directory")->required();
  attack->add_option("--seed", a_seed, "run seed")->required();
  attack->add_option("--jobs", a_jobs, "worker threads");
  a_flags.add_to(attack);

  auto* synth =
      app.add_subcommand("synth", "sample a synthetic dataset (and optionally fit a model)");
  std::string y_spec, y_out, y_model;
  std::uint64_t y_seed = 0;
  int y_epochs = 150;
  double y_lr = 0.2;
  synth->add_option("--spec", y_spec, "synthetic spec JSON (default: built-in)");
  synth->add_option("--out", y_out, "dataset output (.csv or .jsonl)")->required();
  synth->add_option("--fit-model", y_model, "also fit a logistic model and write it here");
  auto* y_seed_opt = synth->add_option("--seed", y_seed, "override the spec seed");
  synth->add_option("--epochs", y_epochs, "logistic training epochs");
  synth->add_option("--lr", y_lr, "logistic learning rate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return 2;
  }

  try {
    if (*detect) return cmd_detect(d_data, d_oracles, d_backend, d_out, d_seed, d_jobs, d_flags);
    if (*verify)
      return cmd_verify_theory(v_spec, v_out, v_seed, v_seed_opt->count() > 0, v_epochs, v_lr,
                               v_lattice);
    if (*serve) return cmd_serve(s_model, s_level, s_host, s_port, s_max_batch, s_latency);
    if (*attack)
      return cmd_attack(a_data, a_oracles, a_model, a_eps, a_steps, a_step_size, a_mode, a_out,
                        a_seed, a_jobs, a_flags);
    if (*synth) return cmd_synth(y_spec, y_out, y_model, y_seed, y_seed_opt->count() > 0, y_epochs, y_lr);
  } catch (const Error& e) {
    std::cerr << "ERROR " << e.module() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ERROR cli: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

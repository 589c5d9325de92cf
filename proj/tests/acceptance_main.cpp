// Acceptance suite: one line per criterion, PASS/FAIL, nonzero exit on any
// failure. The CLI binary path comes in as argv[1] for the end-to-end
// determinism checks.

#include "mixdiff/backend.hpp"
#include "mixdiff/dataset.hpp"
#include "mixdiff/engine.hpp"
#include "mixdiff/metrics.hpp"
#include "mixdiff/perturb.hpp"
#include "mixdiff/remote.hpp"
#include "mixdiff/run_io.hpp"
#include "mixdiff/scoring.hpp"
#include "mixdiff/server.hpp"
#include "mixdiff/theory.hpp"
#include "support/naive_reference.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace mixdiff;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------
// harness

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void run_criterion(int id, const std::string& name, const std::function<Outcome()>& body) {
  auto t0 = std::chrono::steady_clock::now();
  Outcome outcome;
  try {
    outcome = body();
  } catch (const std::exception& e) {
    outcome.pass = false;
    outcome.detail = std::string("exception: ") + e.what();
  }
  double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!outcome.pass) ++g_failures;
  std::printf("%s  criterion %2d: %s (%s; %.2fs)\n", outcome.pass ? "PASS" : "FAIL", id,
              name.c_str(), outcome.detail.c_str(), sec);
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------------
// data generators

LabeledDataset random_targets(Rng& rng, int num_classes, int dim, int n_id, int n_ood) {
  LabeledDataset ds;
  ds.dim = dim;
  for (int k = 0; k < num_classes; ++k) ds.label_names.push_back(std::to_string(k));
  int idx = 0;
  for (int i = 0; i < n_id; ++i) {
    DatasetRecord rec;
    rec.id = "t" + std::to_string(idx++);
    int k = static_cast<int>(rng.bounded(num_classes));
    Eigen::VectorXd x(dim);
    for (int j = 0; j < dim; ++j) x[j] = 1.5 * k + rng.next_gaussian();
    rec.features = x;
    rec.label = k;
    ds.records.push_back(std::move(rec));
  }
  for (int i = 0; i < n_ood; ++i) {
    DatasetRecord rec;
    rec.id = "t" + std::to_string(idx++);
    Eigen::VectorXd x(dim);
    for (int j = 0; j < dim; ++j) x[j] = -2.5 + rng.next_gaussian();
    rec.features = x;
    rec.is_ood = true;
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

LabeledDataset random_oracle_rows(Rng& rng, int num_classes, int dim, int per_class) {
  LabeledDataset ds;
  ds.dim = dim;
  for (int k = 0; k < num_classes; ++k) ds.label_names.push_back(std::to_string(k));
  int idx = 0;
  for (int k = 0; k < num_classes; ++k) {
    for (int i = 0; i < per_class; ++i) {
      DatasetRecord rec;
      rec.id = "o" + std::to_string(idx++);
      Eigen::VectorXd x(dim);
      for (int j = 0; j < dim; ++j) x[j] = 1.5 * k + rng.next_gaussian();
      rec.features = x;
      rec.label = k;
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

LinearSoftmaxModel random_model(Rng& rng, int num_classes, int dim) {
  LinearSoftmaxModel model;
  model.weights.resize(num_classes, dim);
  model.bias.resize(num_classes);
  for (int r = 0; r < num_classes; ++r) {
    for (int c = 0; c < dim; ++c) model.weights(r, c) = rng.next_gaussian();
    model.bias[r] = 0.25 * rng.next_gaussian();
  }
  return model;
}

// Overconfidence benchmark: three ID Gaussians around the origin and OOD
// components placed farther out along each class-mean direction, which a
// linear softmax scores with high confidence.
struct Benchmark {
  LabeledDataset train, oracle_ds, tune, eval;
  LinearSoftmaxModel model;
};

LabeledDataset benchmark_split(std::uint64_t seed, std::uint64_t stream, int id_per_class,
                               int ood_per_component, const std::string& prefix) {
  const double radius = 3.0, ood_scale = 2.0, sd = 0.7;
  LabeledDataset ds;
  ds.dim = 2;
  ds.label_names = {"0", "1", "2"};
  int idx = 0;
  for (int k = 0; k < 3; ++k) {
    double angle = std::numbers::pi * (0.5 + 2.0 * k / 3.0);
    Eigen::Vector2d mean(radius * std::cos(angle), radius * std::sin(angle));
    Rng rng = Rng::split(seed, stream, k);
    for (int i = 0; i < id_per_class; ++i) {
      DatasetRecord rec;
      rec.id = prefix + std::to_string(idx++);
      rec.features = Eigen::Vector2d(mean[0] + sd * rng.next_gaussian(),
                                     mean[1] + sd * rng.next_gaussian());
      rec.label = k;
      ds.records.push_back(std::move(rec));
    }
    Rng ood_rng = Rng::split(seed, stream + 100, k);
    for (int i = 0; i < ood_per_component; ++i) {
      DatasetRecord rec;
      rec.id = prefix + std::to_string(idx++);
      rec.features = Eigen::Vector2d(ood_scale * mean[0] + sd * ood_rng.next_gaussian(),
                                     ood_scale * mean[1] + sd * ood_rng.next_gaussian());
      rec.is_ood = true;
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

Benchmark make_benchmark(std::uint64_t seed) {
  Benchmark b;
  b.train = benchmark_split(seed, 1, 80, 0, "tr");
  b.oracle_ds = benchmark_split(seed, 2, 10, 0, "or");
  b.tune = benchmark_split(seed, 3, 30, 30, "tu");
  b.eval = benchmark_split(seed, 4, 40, 40, "ev");
  b.model = fit_logistic(b.train, 200, 0.5, seed);
  return b;
}

ScoredSet scored_from(const std::vector<MixDiffResult>& results,
                      const std::function<double(const MixDiffResult&)>& getter) {
  ScoredSet s;
  s.reserve(results.size());
  for (const auto& r : results) s.push_back({getter(r), r.is_ood});
  return s;
}

// ---------------------------------------------------------------------
// brute-force metric references (independent of src/metrics.cpp)

double ref_auroc(const ScoredSet& s) {
  double num = 0.0;
  long pairs = 0;
  for (const auto& o : s) {
    if (!o.is_ood) continue;
    for (const auto& i : s) {
      if (i.is_ood) continue;
      ++pairs;
      if (o.score > i.score)
        num += 1.0;
      else if (o.score == i.score)
        num += 0.5;
    }
  }
  return num / pairs;
}

double ref_threshold(const ScoredSet& s, double tpr) {
  long n_ood = 0;
  for (const auto& e : s) n_ood += e.is_ood;
  double best = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (const auto& cand : s) {
    long over = 0;
    for (const auto& e : s) over += e.is_ood && e.score >= cand.score;
    if (static_cast<double>(over) / n_ood >= tpr && (!found || cand.score > best)) {
      best = cand.score;
      found = true;
    }
  }
  return best;
}

double ref_fpr(const ScoredSet& s, double tpr) {
  double t = ref_threshold(s, tpr);
  long over = 0, n = 0;
  for (const auto& e : s) {
    if (e.is_ood) continue;
    ++n;
    over += e.score >= t;
  }
  return static_cast<double>(over) / n;
}

double ref_aucpr(const ScoredSet& s) {
  std::set<double, std::greater<>> thresholds;
  for (const auto& e : s) thresholds.insert(e.score);
  long total = 0;
  for (const auto& e : s) total += e.is_ood;
  double area = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    long tp = 0, fp = 0;
    for (const auto& e : s) {
      if (e.score >= t) (e.is_ood ? tp : fp)++;
    }
    double recall = static_cast<double>(tp) / total;
    area += (recall - prev_recall) * (static_cast<double>(tp) / (tp + fp));
    prev_recall = recall;
  }
  return area;
}

// ---------------------------------------------------------------------
// criteria

Outcome criterion_alg1_equivalence() {
  Rng rng(0xACCE0101ULL);
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int configs = 0;

  const AccessLevel levels[] = {AccessLevel::Logits, AccessLevel::Probs, AccessLevel::Labels,
                                AccessLevel::Embeddings};
  const BaseScore logit_scores[] = {BaseScore::MSP, BaseScore::MLS, BaseScore::Energy,
                                    BaseScore::Entropy, BaseScore::MCM};
  const BaseScore prob_scores[] = {BaseScore::MSP, BaseScore::Entropy, BaseScore::MCM};
  const AuxStrategy strategies[] = {AuxStrategy::InBatch, AuxStrategy::RandomID,
                                    AuxStrategy::OracleAsAux};
  const OracleSelection selections[] = {OracleSelection::ByPredictedLabel,
                                        OracleSelection::UnlabeledTopM,
                                        OracleSelection::RandomOracle};

  for (int trial = 0; trial < 200; ++trial) {
    MixDiffConfig cfg;
    cfg.access_level = levels[trial % 4];
    cfg.aux_strategy = strategies[(trial / 4) % 3];
    cfg.oracle_selection = selections[(trial / 12) % 3];
    if (cfg.access_level == AccessLevel::Labels &&
        cfg.oracle_selection == OracleSelection::UnlabeledTopM)
      cfg.oracle_selection = OracleSelection::RandomOracle;

    int num_classes = 2 + static_cast<int>(rng.bounded(4));  // K <= 5
    int dim = 1 + static_cast<int>(rng.bounded(8));          // d <= 8
    cfg.oracle_size = 1 + static_cast<int>(rng.bounded(4));  // M <= 4
    if (cfg.aux_strategy == AuxStrategy::OracleAsAux && cfg.oracle_size < 2) cfg.oracle_size = 2;
    cfg.num_aux = 1 + static_cast<int>(rng.bounded(4));   // N <= 4
    if (cfg.aux_strategy == AuxStrategy::RandomID)        // pool holds M*K samples
      cfg.num_aux = std::min(cfg.num_aux, cfg.oracle_size * num_classes);
    cfg.num_ratios = 1 + static_cast<int>(rng.bounded(4));  // R <= 4
    cfg.gamma = std::round(4.0 * (2.0 * rng.next_double() - 1.0)) / 2.0;
    cfg.mcm_temperature = 0.5 + 2.0 * rng.next_double();
    cfg.compare_enabled = cfg.access_level == AccessLevel::Labels || rng.next_double() < 0.85;
    if (cfg.access_level == AccessLevel::Probs)
      cfg.base_score = prob_scores[trial % 3];
    else
      cfg.base_score = logit_scores[trial % 5];

    auto model = random_model(rng, num_classes, dim);
    auto targets = random_targets(rng, num_classes, dim, 4, 2);
    auto oracle_rows = random_oracle_rows(rng, num_classes, dim, cfg.oracle_size);
    auto oracles = make_oracle_set(oracle_rows, cfg.oracle_size,
                                   cfg.oracle_selection != OracleSelection::UnlabeledTopM);

    std::uint64_t seed = rng.next_u64();
    LocalBackend backend(model);
    auto got = run_detection(backend, targets, oracles, cfg, seed);
    auto expected = naive::run_detection(model, targets, oracles, cfg, seed);
    if (got.size() != expected.size()) return {false, "result count mismatch"};
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (got[i].predicted_class != expected[i].predicted_class)
        return {false, "predicted class mismatch at trial " + std::to_string(trial)};
      worst = std::max(worst, std::abs(got[i].mixdiff_score - expected[i].mixdiff_score));
      worst = std::max(worst, std::abs(got[i].final_score - expected[i].final_score));
      if (got[i].base_score && expected[i].base_score)
        worst = std::max(worst, std::abs(*got[i].base_score - *expected[i].base_score));
    }
    ++configs;
  }
  double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool pass = worst <= 1e-12 && sec < 10.0 && configs == 200;
  return {pass, std::to_string(configs) + " configs, max |diff| " + fmt(worst) + ", " +
                    fmt(sec) + "s < 10s"};
}

Outcome criterion_trivial_symmetry() {
  Rng rng(0xACCE0202ULL);
  auto model = random_model(rng, 3, 2);
  LocalBackend backend(model);
  FeatureVector target(2);
  target << 0.8, -0.3;
  std::vector<FeatureVector> aux = {Eigen::Vector2d(0.5, 0.1), Eigen::Vector2d(-0.7, 0.9)};
  std::vector<std::string> aux_ids = {"a0", "a1"};
  std::vector<OracleExemplar> sole = {{"o0", target}};

  int checked = 0;
  for (AccessLevel level : {AccessLevel::Logits, AccessLevel::Probs, AccessLevel::Embeddings}) {
    for (BaseScore s : {BaseScore::MSP, BaseScore::MLS, BaseScore::Energy, BaseScore::Entropy,
                        BaseScore::MCM}) {
      if (level == AccessLevel::Probs && (s == BaseScore::MLS || s == BaseScore::Energy))
        continue;
      MixDiffConfig cfg;
      cfg.num_ratios = 3;
      cfg.oracle_size = 1;
      cfg.access_level = level;
      cfg.base_score = s;
      auto cache = build_oracle_cache(backend, sole, aux, aux_ids, cfg);
      auto result = mixdiff_score(backend, target, "t", cache, aux, cfg);
      if (result.mixdiff_score != 0.0)
        return {false, "nonzero mixdiff " + fmt(result.mixdiff_score) + " at level " +
                           to_string(level) + " score " + to_string(s)};
      ++checked;
    }
  }

  // Label mode: every (i, r) agreement term must be exactly zero.
  MixDiffConfig label_cfg;
  label_cfg.num_ratios = 3;
  label_cfg.oracle_size = 1;
  label_cfg.access_level = AccessLevel::Labels;
  auto cache = build_oracle_cache(backend, sole, aux, aux_ids, label_cfg);
  auto result = mixdiff_score(backend, target, "t", cache, aux, label_cfg);
  for (const auto& tb : result.breakdown)
    if (tb.term != 0.0) return {false, "label-mode term " + fmt(tb.term) + " != 0"};
  if (result.mixdiff_score != 0.0) return {false, "label-mode mixdiff != 0"};
  ++checked;

  return {true, std::to_string(checked) + " mode/score combinations exactly zero"};
}

Outcome criterion_taylor() {
  auto t0 = std::chrono::steady_clock::now();
  auto spec = default_synthetic_spec();
  auto data = sample_synthetic(spec);
  auto model = fit_logistic(data, 6, 0.02, spec.seed);
  auto margin = binary_margin(model);

  Rng rng = Rng::split(spec.seed, 11, 0);
  std::vector<std::pair<FeatureVector, FeatureVector>> pairs;
  for (int i = 0; i < 200; ++i) {
    std::size_t a = rng.bounded(data.records.size());
    std::size_t b = rng.bounded(data.records.size());
    if (a == b) b = (b + 1) % data.records.size();
    pairs.emplace_back(data.records[a].features, data.records[b].features);
  }

  int ok99 = 0;
  bool omega2_zero = true;
  for (const auto& [xt, xi] : pairs) {
    auto t = omega_terms(margin, BaseScore::MSP, xt, xi, 0.99);
    if (std::abs(t.residual) <= 1e-3) ++ok99;
    for (double l : {0.5, 0.7, 0.9, 0.99}) {
      if (omega_terms(margin, BaseScore::MSP, xt, xi, l).omega2 != 0.0) omega2_zero = false;
      if (omega_terms(margin, BaseScore::Entropy, xt, xi, l).omega2 != 0.0) omega2_zero = false;
      if (omega_terms(margin, BaseScore::MLS, xt, xi, l).omega2 != 0.0) omega2_zero = false;
    }
  }
  double frac99 = ok99 / 200.0;

  auto msp_report = verify_taylor_decay(margin, BaseScore::MSP, pairs, {0.5, 0.7, 0.9, 0.99});
  auto mls_report = verify_taylor_decay(margin, BaseScore::MLS, pairs, {0.5, 0.7, 0.9, 0.99});
  double mls_worst =
      *std::max_element(mls_report.max_abs_residual.begin(), mls_report.max_abs_residual.end());

  double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool pass = frac99 >= 0.95 && msp_report.monotone_fraction >= 0.95 && mls_worst <= 1e-12 &&
              omega2_zero && sec < 5.0;
  return {pass, "msp |res(0.99)|<=1e-3 for " + fmt(100 * frac99) + "%, monotone " +
                    fmt(100 * msp_report.monotone_fraction) + "%, mls max res " + fmt(mls_worst) +
                    " (fp-identity <=1e-12), omega2 all zero, " + fmt(sec) + "s < 5s"};
}

Outcome criterion_aux_existence() {
  auto t0 = std::chrono::steady_clock::now();
  auto spec = default_synthetic_spec();
  auto data = sample_synthetic(spec);
  auto model = fit_logistic(data, 6, 0.02, spec.seed);
  auto margin = binary_margin(model);

  double extent = lattice_extent(data);
  auto grid = make_lattice(extent, 121);

  Rng rng = Rng::split(spec.seed, 12, 0);
  auto hard_pairs = mine_hard_ood_pairs(margin, spec, BaseScore::MSP, 100, rng);
  if (hard_pairs.size() != 100)
    return {false, "only " + std::to_string(hard_pairs.size()) + " hard-OOD pairs mined"};

  int nonempty = 0;
  for (const auto& [xt, xm] : hard_pairs)
    if (!find_calibrating_aux(margin, BaseScore::MSP, xt, xm, 0.5, grid).empty()) ++nonempty;
  double frac = nonempty / 100.0;

  auto mls_pairs = mine_hard_ood_pairs(margin, spec, BaseScore::MLS, 1, rng);
  if (mls_pairs.empty()) return {false, "no MLS pair with f(x_m) > f(x_t) > 0"};
  auto mls_qualifying =
      find_calibrating_aux(margin, BaseScore::MLS, mls_pairs[0].first, mls_pairs[0].second, 0.5, grid);
  bool mls_all = mls_qualifying.size() == grid.size();

  double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool pass = frac >= 0.95 && mls_all && sec < 30.0;
  return {pass, "msp non-empty for " + fmt(100 * frac) + "% of pairs, mls " +
                    std::to_string(mls_qualifying.size()) + "/" + std::to_string(grid.size()) +
                    " lattice points, " + fmt(sec) + "s < 30s"};
}

MixDiffConfig benchmark_config() {
  MixDiffConfig cfg;
  cfg.access_level = AccessLevel::Logits;
  cfg.base_score = BaseScore::Entropy;
  cfg.aux_strategy = AuxStrategy::InBatch;
  cfg.oracle_selection = OracleSelection::ByPredictedLabel;
  cfg.oracle_size = 5;
  cfg.num_ratios = 3;
  return cfg;
}

Outcome criterion_detection_improvement() {
  auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> gamma_grid = {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0};
  double gain_sum = 0.0;

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Benchmark b = make_benchmark(seed);
    LocalBackend backend(b.model);
    MixDiffConfig cfg = benchmark_config();
    auto oracles = make_oracle_set(b.oracle_ds, cfg.oracle_size, true);

    // gamma tuned on the disjoint tune split: final = base + gamma*mixdiff
    // is affine in gamma, so one detection run covers the whole grid.
    auto tune_results = run_detection(backend, b.tune, oracles, cfg, seed);
    double best_gamma = 0.0, best_auroc = -1.0;
    for (double g : gamma_grid) {
      double a = auroc(scored_from(
          tune_results, [g](const MixDiffResult& r) { return *r.base_score + g * r.mixdiff_score; }));
      if (a > best_auroc) {
        best_auroc = a;
        best_gamma = g;
      }
    }

    auto eval_results = run_detection(backend, b.eval, oracles, cfg, seed + 1000);
    double base_auroc =
        auroc(scored_from(eval_results, [](const MixDiffResult& r) { return *r.base_score; }));
    double final_auroc = auroc(scored_from(eval_results, [&](const MixDiffResult& r) {
      return *r.base_score + best_gamma * r.mixdiff_score;
    }));
    gain_sum += final_auroc - base_auroc;
  }
  double mean_gain = gain_sum / 10.0;
  double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool pass = mean_gain >= 0.02 && sec < 60.0;
  return {pass, "mean AUROC gain " + fmt(mean_gain) + " >= 0.02 over 10 seeds, " + fmt(sec) +
                    "s < 60s"};
}

Outcome criterion_label_mode() {
  double auroc_sum = 0.0, random_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Benchmark b = make_benchmark(seed);
    LocalBackend backend(b.model);
    MixDiffConfig cfg = benchmark_config();
    cfg.access_level = AccessLevel::Labels;
    cfg.num_ratios = 7;  // fine grid so the flip window is sampled
    cfg.oracle_size = 8;
    auto oracles = make_oracle_set(b.oracle_ds, cfg.oracle_size, true);
    auto results = run_detection(backend, b.eval, oracles, cfg, seed);
    auroc_sum +=
        auroc(scored_from(results, [](const MixDiffResult& r) { return r.mixdiff_score; }));

    Rng rng = Rng::split(seed, 77, 0);
    ScoredSet random_scores;
    for (const auto& rec : b.eval.records) random_scores.push_back({rng.next_double(), rec.is_ood});
    random_sum += auroc(random_scores);
  }
  double mean = auroc_sum / 10.0;
  double random_mean = random_sum / 10.0;
  bool pass = mean >= 0.55 && std::abs(random_mean - 0.5) <= 0.03;
  return {pass, "label-mode mixdiff AUROC " + fmt(mean) + " >= 0.55, uniform-random baseline " +
                    fmt(random_mean) + " in 0.5 +/- 0.03"};
}

Outcome criterion_metric_oracles() {
  Rng rng(0xACCE0707ULL);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ScoredSet s;
    bool ood_seen = false, id_seen = false;
    for (int i = 0; i < 30; ++i) {
      double score = trial % 2 == 0 ? rng.next_gaussian()
                                    : std::round(rng.next_gaussian() * 4.0) / 4.0;
      bool ood = rng.next_double() < 0.4;
      if (i == 28 && !ood_seen) ood = true;
      if (i == 29 && !id_seen) ood = false;
      ood_seen |= ood;
      id_seen |= !ood;
      s.push_back({score, ood});
    }
    worst = std::max(worst, std::abs(auroc(s) - ref_auroc(s)));
    worst = std::max(worst, std::abs(fpr_at_tpr(s, 0.95) - ref_fpr(s, 0.95)));
    worst = std::max(worst, std::abs(aucpr(s) - ref_aucpr(s)));
    auto mass = threshold_mass(s, 0.95);
    double t = ref_threshold(s, 0.95);
    long io = 0, in = 0, oo = 0, on = 0;
    for (const auto& e : s) {
      if (e.is_ood) {
        ++on;
        oo += e.score >= t;
      } else {
        ++in;
        io += e.score >= t;
      }
    }
    worst = std::max(worst, std::abs(mass.id_over - static_cast<double>(io) / in));
    worst = std::max(worst, std::abs(mass.ood_over - static_cast<double>(oo) / on));
  }

  ScoredSet perfect = {{3.0, true}, {2.5, true}, {1.0, false}, {0.0, false}};
  bool perfect_ok = auroc(perfect) == 1.0;

  ScoredSet big;
  for (int i = 0; i < 2000; ++i) big.push_back({rng.next_gaussian(), rng.next_double() < 0.5});
  double random_auroc = auroc(big);
  bool random_ok = random_auroc >= 0.45 && random_auroc <= 0.55;

  bool pass = worst <= 1e-12 && perfect_ok && random_ok;
  return {pass, "max |oracle diff| " + fmt(worst) + ", perfect=1.0 " +
                    (perfect_ok ? "ok" : "BAD") + ", random AUROC " + fmt(random_auroc)};
}

Outcome criterion_wire_fidelity() {
  Benchmark b = make_benchmark(21);
  // 500 targets: bump the eval split.
  LabeledDataset targets = benchmark_split(21, 40, 84, 83, "wt");
  targets.records.resize(500);
  bool has_ood = false;
  for (const auto& r : targets.records) has_ood |= r.is_ood;
  if (!has_ood || targets.records.size() != 500) return {false, "bad wire fixture"};

  MixDiffConfig cfg = benchmark_config();
  cfg.aux_strategy = AuxStrategy::RandomID;
  cfg.num_aux = 4;
  auto oracles = make_oracle_set(b.oracle_ds, cfg.oracle_size, true);

  LocalBackend local(b.model);
  auto local_results = run_detection(local, targets, oracles, cfg, 5);

  ServerConfig server_cfg;
  server_cfg.access_level = AccessLevel::Logits;
  ModelServer server(b.model, server_cfg);
  if (!server.start()) return {false, "server failed to bind"};
  std::string url = "http://127.0.0.1:" + std::to_string(server.port());

  RemoteBackend remote({url});
  auto remote_results = run_detection(remote, targets, oracles, cfg, 5);

  double worst = 0.0;
  for (std::size_t i = 0; i < local_results.size(); ++i)
    worst = std::max(worst, std::abs(local_results[i].final_score - remote_results[i].final_score));

  // A probs-level server denies logits and only ever emits probabilities.
  ServerConfig probs_cfg;
  probs_cfg.access_level = AccessLevel::Probs;
  ModelServer probs_server(b.model, probs_cfg);
  if (!probs_server.start()) return {false, "probs server failed to bind"};
  httplib::Client raw("127.0.0.1", probs_server.port());
  nlohmann::json body;
  body["level"] = "logits";
  body["inputs"] = {{0.0, 0.0}};
  auto denied = raw.Post("/v1/predict", body.dump(), "application/json");
  bool denied_ok = denied && denied->status == 403;

  body["level"] = "probs";
  body["inputs"] = {{1.0, -2.0}, {0.5, 4.0}, {-3.0, 0.0}};
  auto probs_res = raw.Post("/v1/predict", body.dump(), "application/json");
  bool probs_ok = probs_res && probs_res->status == 200;
  if (probs_ok) {
    auto reply = nlohmann::json::parse(probs_res->body);
    for (const auto& row : reply["outputs"]) {
      double sum = 0.0;
      for (const auto& v : row) {
        double x = v.get<double>();
        probs_ok = probs_ok && x >= 0.0 && x <= 1.0;
        sum += x;
      }
      probs_ok = probs_ok && std::abs(sum - 1.0) <= 1e-9;
    }
  }

  bool pass = worst <= 1e-8 && denied_ok && probs_ok;
  return {pass, "max |final diff| " + fmt(worst) + " <= 1e-8 over 500 targets, 403 " +
                    (denied_ok ? "ok" : "BAD") + ", probs purity " + (probs_ok ? "ok" : "BAD")};
}

// Eval split for the attack: the same ID geometry, with OOD in the
// high-entropy zones (centroid and the midpoints between adjacent
// classes), so the clean entropy detector works and the attack has
// something to erode.
LabeledDataset adversarial_eval(std::uint64_t seed) {
  const double radius = 3.0, sd = 0.7;
  LabeledDataset ds;
  ds.dim = 2;
  ds.label_names = {"0", "1", "2"};
  int idx = 0;
  for (int k = 0; k < 3; ++k) {
    double angle = std::numbers::pi * (0.5 + 2.0 * k / 3.0);
    Rng rng = Rng::split(seed, 60, k);
    for (int i = 0; i < 40; ++i) {
      DatasetRecord rec;
      rec.id = "ae" + std::to_string(idx++);
      rec.features = Eigen::Vector2d(radius * std::cos(angle) + sd * rng.next_gaussian(),
                                     radius * std::sin(angle) + sd * rng.next_gaussian());
      rec.label = k;
      ds.records.push_back(std::move(rec));
    }
  }
  Rng origin_rng = Rng::split(seed, 61, 0);
  for (int i = 0; i < 30; ++i) {
    DatasetRecord rec;
    rec.id = "ae" + std::to_string(idx++);
    rec.features = Eigen::Vector2d(sd * origin_rng.next_gaussian(), sd * origin_rng.next_gaussian());
    rec.is_ood = true;
    ds.records.push_back(std::move(rec));
  }
  for (int k = 0; k < 3; ++k) {
    double angle = std::numbers::pi * (0.5 + 2.0 * k / 3.0 + 1.0 / 3.0);  // between classes
    Rng rng = Rng::split(seed, 62, k);
    for (int i = 0; i < 30; ++i) {
      DatasetRecord rec;
      rec.id = "ae" + std::to_string(idx++);
      rec.features = Eigen::Vector2d(1.5 * std::cos(angle) + sd * rng.next_gaussian(),
                                     1.5 * std::sin(angle) + sd * rng.next_gaussian());
      rec.is_ood = true;
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

Outcome criterion_adversarial() {
  Benchmark b = make_benchmark(33);
  LabeledDataset eval = adversarial_eval(33);
  LocalBackend backend(b.model);
  MixDiffConfig cfg = benchmark_config();
  cfg.aux_strategy = AuxStrategy::OracleAsAux;  // N = M - 1
  auto oracles = make_oracle_set(b.oracle_ds, cfg.oracle_size, true);

  const double eps = 1.0, step_size = 0.1;
  std::vector<int> steps_list = {0, 1, 5, 10};
  std::vector<double> base_aurocs, mixdiff_aurocs;
  for (int steps : steps_list) {
    LabeledDataset attacked = eval;
    for (auto& rec : attacked.records)
      rec.features = pgd_attack(b.model, rec.features, !rec.is_ood, eps, steps, step_size);
    auto results = run_detection(backend, attacked, oracles, cfg, 9);
    base_aurocs.push_back(
        auroc(scored_from(results, [](const MixDiffResult& r) { return *r.base_score; })));
    mixdiff_aurocs.push_back(
        auroc(scored_from(results, [](const MixDiffResult& r) { return r.mixdiff_score; })));
  }

  bool monotone = true;
  for (std::size_t i = 1; i < base_aurocs.size(); ++i)
    if (base_aurocs[i] > base_aurocs[i - 1] + 1e-12) monotone = false;
  bool ordering = mixdiff_aurocs.back() > base_aurocs.back();

  std::ostringstream detail;
  detail << "base AUROC by steps";
  for (double a : base_aurocs) detail << " " << fmt(a);
  detail << (monotone ? " (non-increasing)" : " (NOT monotone)") << ", mixdiff-only at 10 steps "
         << fmt(mixdiff_aurocs.back()) << (ordering ? " > " : " <= ") << fmt(base_aurocs.back());
  return {monotone && ordering, detail.str()};
}

Outcome criterion_gradients() {
  Rng rng(0xACCE0A0AULL);
  const double fd_step = 1e-6;
  double worst = 0.0;
  for (GradLoss loss : {GradLoss::CEUniform, GradLoss::Entropy}) {
    for (int trial = 0; trial < 100; ++trial) {
      int k = 2 + static_cast<int>(rng.bounded(4));
      int d = 1 + static_cast<int>(rng.bounded(6));
      auto model = random_model(rng, k, d);
      Eigen::VectorXd x(d);
      for (int i = 0; i < d; ++i) x[i] = rng.next_gaussian();

      auto value = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd probs = softmax(model.logits(p));
        if (loss == GradLoss::CEUniform) {
          double acc = 0.0;
          for (Eigen::Index i = 0; i < probs.size(); ++i) acc -= std::log(probs[i]) / probs.size();
          return acc;
        }
        return entropy(probs);
      };

      FeatureVector g = grad_input(model, x, loss);
      for (int i = 0; i < d; ++i) {
        Eigen::VectorXd hi = x, lo = x;
        hi[i] += fd_step;
        lo[i] -= fd_step;
        double fd = (value(hi) - value(lo)) / (2.0 * fd_step);
        double rel = std::abs(g[i] - fd) / std::max(std::abs(fd), 1e-3);
        worst = std::max(worst, rel);
      }
    }
  }
  return {worst < 1e-5, "200 instances (100 per loss), worst relative error " + fmt(worst)};
}

Outcome criterion_determinism(const std::string& cli) {
  if (cli.empty()) return {false, "CLI path not supplied as argv[1]"};

  fs::path tmp = fs::temp_directory_path() / ("mixdiff-accept-" + std::to_string(::getpid()));
  fs::create_directories(tmp);
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{tmp};

  Benchmark b = make_benchmark(55);
  std::string data = (tmp / "data.csv").string();
  std::string oracle_rows = (tmp / "oracles.csv").string();
  std::string model = (tmp / "model.json").string();
  save_dataset(b.eval, data, DatasetFormat::Csv);
  save_dataset(b.oracle_ds, oracle_rows, DatasetFormat::Csv);
  save_model(b.model, model);

  auto run = [&](const std::string& args, const std::string& tag) {
    std::string cmd = cli + " " + args + " >" + (tmp / ("out-" + tag)).string() + " 2>" +
                      (tmp / ("err-" + tag)).string();
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };

  std::string detect_args = "detect --data " + data + " --oracles " + oracle_rows +
                            " --backend local:" + model +
                            " --seed 17 --oracle-size 5 --num-ratios 3 --aux-strategy random_id"
                            " --num-aux 4 --oracle-selection random_oracle";
  if (run(detect_args + " --out " + (tmp / "d1").string(), "d1") != 0)
    return {false, "detect run 1 failed"};
  if (run(detect_args + " --out " + (tmp / "d2").string(), "d2") != 0)
    return {false, "detect run 2 failed"};
  for (const char* name : {"results.jsonl", "metrics.json", "label_table.json"}) {
    if (read_file((tmp / "d1" / name).string()) != read_file((tmp / "d2" / name).string()))
      return {false, std::string(name) + " differs between identical detect runs"};
  }

  std::string attack_args = "attack --data " + data + " --oracles " + oracle_rows + " --model " +
                            model +
                            " --eps 0.5 --steps 0,5 --step-size 0.05 --mode both --seed 23"
                            " --oracle-size 5 --num-ratios 2 --aux-strategy oracle_as_aux";
  if (run(attack_args + " --out " + (tmp / "a1").string(), "a1") != 0)
    return {false, "attack run 1 failed"};
  if (run(attack_args + " --out " + (tmp / "a2").string(), "a2") != 0)
    return {false, "attack run 2 failed"};
  if (read_file((tmp / "a1" / "attack_auroc.csv").string()) !=
      read_file((tmp / "a2" / "attack_auroc.csv").string()))
    return {false, "attack_auroc.csv differs between identical runs"};

  return {true, "detect and attack outputs byte-identical across reruns"};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli = argc > 1 ? argv[1] : "";

  run_criterion(1, "batched engine equals the per-target transcription", criterion_alg1_equivalence);
  run_criterion(2, "identical target and sole oracle give exactly zero", criterion_trivial_symmetry);
  run_criterion(3, "second-order decomposition residuals decay", criterion_taylor);
  run_criterion(4, "calibrating auxiliaries exist on the lattice", criterion_aux_existence);
  run_criterion(5, "detection improvement on the overconfidence benchmark",
                criterion_detection_improvement);
  run_criterion(6, "label-mode detection beats chance", criterion_label_mode);
  run_criterion(7, "metrics match brute-force enumeration", criterion_metric_oracles);
  run_criterion(8, "remote detection matches local within the wire budget", criterion_wire_fidelity);
  run_criterion(9, "PGD degrades the base score first", criterion_adversarial);
  run_criterion(10, "input gradients match finite differences", criterion_gradients);
  run_criterion(11, "seeded CLI runs are byte-identical",
                [&] { return criterion_determinism(cli); });

  if (g_failures == 0) {
    std::printf("acceptance: all 11 criteria passed\n");
    return 0;
  }
  std::printf("acceptance: %d criteria FAILED\n", g_failures);
  return 1;
}

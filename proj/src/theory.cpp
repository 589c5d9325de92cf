#include "mixdiff/theory.hpp"

#include "mixdiff/perturb.hpp"
#include "mixdiff/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace mixdiff {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void theory_error(const std::string& msg) { throw Error("theory", msg); }

double sigmoid(double f) {
  if (f >= 0.0) {
    double e = std::exp(-f);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(f);
  return e / (1.0 + e);
}

double sigmoid_d1(double f) {
  double s = sigmoid(f);
  return s * (1.0 - s);
}

double sigmoid_d2(double f) {
  double s = sigmoid(f);
  return s * (1.0 - s) * (1.0 - 2.0 * s);
}

}  // namespace

void SyntheticSpec::validate() const {
  if (components.empty()) theory_error("synthetic spec has no components");
  std::set<int> labels;
  for (const auto& c : components) {
    if (c.count < 1) theory_error("component counts must be positive");
    if (!(c.variance[0] > 0.0) || !(c.variance[1] > 0.0))
      theory_error("component covariance must be positive definite");
    if (!c.is_ood) {
      if (c.label < 0) theory_error("ID components must carry a class label");
      labels.insert(c.label);
    }
  }
  if (labels.size() < 2) theory_error("need >=2 ID classes");
}

SyntheticSpec default_synthetic_spec() {
  SyntheticSpec spec;
  spec.seed = 7;
  spec.components = {
      {{-3.0, -3.0}, {1.0, 1.0}, 200, 0, false},
      {{3.0, 3.0}, {1.0, 1.0}, 200, 1, false},
      {{-3.0, 3.0}, {1.0, 1.0}, 100, -1, true},
      {{3.0, -3.0}, {1.0, 1.0}, 100, -1, true},
  };
  return spec;
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) theory_error("cannot open synthetic spec '" + path + "'");
  json obj;
  try {
    in >> obj;
  } catch (const json::exception& e) {
    theory_error("malformed synthetic spec: " + std::string(e.what()));
  }
  SyntheticSpec spec;
  spec.seed = obj.value("seed", 0ULL);
  if (!obj.contains("components") || !obj["components"].is_array())
    theory_error("synthetic spec needs a components array");
  for (const auto& c : obj["components"]) {
    SyntheticComponent comp;
    auto mean = c.at("mean");
    auto var = c.at("variance");
    if (mean.size() != 2 || var.size() != 2)
      theory_error("components are 2-dimensional: mean and variance need 2 entries");
    comp.mean = {mean[0].get<double>(), mean[1].get<double>()};
    comp.variance = {var[0].get<double>(), var[1].get<double>()};
    comp.count = c.at("count").get<int>();
    std::string role = c.at("role").get<std::string>();
    if (role == "ood") {
      comp.is_ood = true;
      comp.label = -1;
    } else if (role.rfind("id", 0) == 0) {
      comp.is_ood = false;
      comp.label = std::stoi(role.substr(2));
    } else {
      theory_error("component role must be 'id<k>' or 'ood', got '" + role + "'");
    }
    spec.components.push_back(comp);
  }
  spec.validate();
  return spec;
}

void save_synthetic_spec(const SyntheticSpec& spec, const std::string& path) {
  json obj;
  obj["seed"] = spec.seed;
  obj["components"] = json::array();
  for (const auto& c : spec.components) {
    json jc;
    jc["mean"] = {c.mean[0], c.mean[1]};
    jc["variance"] = {c.variance[0], c.variance[1]};
    jc["count"] = c.count;
    jc["role"] = c.is_ood ? "ood" : ("id" + std::to_string(c.label));
    obj["components"].push_back(std::move(jc));
  }
  std::ofstream out(path);
  if (!out) theory_error("cannot open '" + path + "' for writing");
  out << obj.dump(2) << "\n";
}

LabeledDataset sample_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  LabeledDataset ds;
  ds.dim = 2;
  std::set<int> labels;
  for (const auto& c : spec.components)
    if (!c.is_ood) labels.insert(c.label);
  for (int l : labels) ds.label_names.push_back(std::to_string(l));

  // Components draw from independent streams so count changes in one
  // component do not reshuffle the others.
  int sample_index = 0;
  for (std::size_t ci = 0; ci < spec.components.size(); ++ci) {
    const auto& c = spec.components[ci];
    Rng rng = Rng::split(spec.seed, 100 + ci, 0);
    double sd0 = std::sqrt(c.variance[0]);
    double sd1 = std::sqrt(c.variance[1]);
    for (int i = 0; i < c.count; ++i) {
      DatasetRecord rec;
      rec.id = "s" + std::to_string(sample_index++);
      rec.features = Eigen::Vector2d(c.mean[0] + sd0 * rng.next_gaussian(),
                                     c.mean[1] + sd1 * rng.next_gaussian());
      rec.is_ood = c.is_ood;
      if (!c.is_ood) {
        int dense = static_cast<int>(std::distance(labels.begin(), labels.find(c.label)));
        rec.label = dense;
      }
      ds.records.push_back(std::move(rec));
    }
  }
  ds.validate();
  return ds;
}

BinaryMarginModel binary_margin(const LinearSoftmaxModel& model) {
  if (model.num_classes() != 2)
    theory_error("margin form needs a binary model, got K=" + std::to_string(model.num_classes()));
  BinaryMarginModel m;
  m.w = (model.weights.row(1) - model.weights.row(0)).transpose();
  m.b = model.bias[1] - model.bias[0];
  return m;
}

double margin_score(BaseScore h, double f) {
  switch (h) {
    case BaseScore::MSP:
      return -std::max(sigmoid(f), 1.0 - sigmoid(f));
    case BaseScore::Entropy: {
      double s = sigmoid(f);
      double acc = 0.0;
      if (s > 0.0) acc -= s * std::log(s);
      if (s < 1.0) acc -= (1.0 - s) * std::log(1.0 - s);
      return acc;
    }
    case BaseScore::MLS:
      return -f;
    default:
      theory_error("derivatives not implemented for " + to_string(h));
  }
}

double margin_score_d1(BaseScore h, double f) {
  switch (h) {
    case BaseScore::MSP:
      return f > 0.0 ? -sigmoid_d1(f) : sigmoid_d1(f);
    case BaseScore::Entropy:
      // d/df of the binary entropy of sigmoid(f) is -f * sigma'(f).
      return -f * sigmoid_d1(f);
    case BaseScore::MLS:
      return -1.0;
    default:
      theory_error("derivatives not implemented for " + to_string(h));
  }
}

double margin_score_d2(BaseScore h, double f) {
  switch (h) {
    case BaseScore::MSP:
      return f > 0.0 ? -sigmoid_d2(f) : sigmoid_d2(f);
    case BaseScore::Entropy:
      return -sigmoid_d1(f) - f * sigmoid_d2(f);
    case BaseScore::MLS:
      return 0.0;
    default:
      theory_error("derivatives not implemented for " + to_string(h));
  }
}

OmegaTerms omega_terms(const BinaryMarginModel& model, BaseScore h, const FeatureVector& x_t,
                       const FeatureVector& x_i, double lambda) {
  if (!(lambda > 0.0) || !(lambda < 1.0))
    theory_error("omega terms are defined for lambda in (0, 1)");
  if (x_t.size() != x_i.size() || x_t.size() != model.w.size())
    theory_error("dimension mismatch in omega terms");

  const double f_t = model.f(x_t);
  const double diff = (x_t - x_i).dot(model.w);  // (x_t - x_i)^T f'(x_t)
  const double d1 = margin_score_d1(h, f_t);
  const double d2 = margin_score_d2(h, f_t);
  const double lm1 = lambda - 1.0;

  OmegaTerms t;
  t.lambda = lambda;
  t.base = margin_score(h, f_t);
  t.omega1 = lm1 * diff * d1;
  t.omega2 = 0.0;  // f'' = 0 for the linear model
  t.omega3 = 0.5 * lm1 * lm1 * diff * diff * d2;
  t.approx = t.base + t.omega1 + t.omega2 + t.omega3;
  t.exact = margin_score(h, model.f(mixup(x_t, x_i, lambda)));
  t.residual = t.exact - t.approx;
  return t;
}

TaylorDecayReport verify_taylor_decay(
    const BinaryMarginModel& model, BaseScore h,
    const std::vector<std::pair<FeatureVector, FeatureVector>>& pairs,
    std::vector<double> lambdas, double slack_factor) {
  if (pairs.empty()) theory_error("taylor decay needs at least one pair");
  if (lambdas.size() < 2) theory_error("taylor decay needs at least two lambdas");

  TaylorDecayReport report;
  report.lambdas = lambdas;
  report.slack_factor = slack_factor;
  report.max_abs_residual.assign(lambdas.size(), 0.0);

  // Residuals per pair, in order of lambda ascending toward 1.
  std::vector<std::size_t> order(lambdas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return lambdas[a] < lambdas[b]; });

  std::size_t monotone = 0;
  for (const auto& [x_t, x_i] : pairs) {
    double prev = std::numeric_limits<double>::infinity();
    bool mono = true;
    for (std::size_t k = 0; k < order.size(); ++k) {
      std::size_t li = order[k];
      OmegaTerms t = omega_terms(model, h, x_t, x_i, lambdas[li]);
      double res = std::abs(t.residual);
      report.max_abs_residual[li] = std::max(report.max_abs_residual[li], res);
      if (t.omega2 != 0.0) report.omega2_zero = false;
      // Allow a hair of floating-point noise when comparing residuals.
      if (res > prev + 1e-12) mono = false;
      prev = res;
    }
    if (mono) ++monotone;
  }
  report.monotone_fraction = static_cast<double>(monotone) / pairs.size();

  // Fit |residual| <= C (1-lambda)^2 on the two grid points closest to 1,
  // then demand it everywhere with the slack factor applied.
  std::size_t near1 = order[order.size() - 1];
  std::size_t near2 = order[order.size() - 2];
  double c = 0.0;
  for (std::size_t li : {near1, near2}) {
    double denom = (1.0 - lambdas[li]) * (1.0 - lambdas[li]);
    if (denom > 0.0) c = std::max(c, report.max_abs_residual[li] / denom);
  }
  report.fitted_c = c;
  report.bound_pass = true;
  for (std::size_t li = 0; li < lambdas.size(); ++li) {
    double bound = slack_factor * c * (1.0 - lambdas[li]) * (1.0 - lambdas[li]);
    // An identically-zero residual curve (the affine MLS case) passes with
    // c = 0; otherwise allow fp noise around the fitted bound.
    if (report.max_abs_residual[li] > bound + 1e-12) report.bound_pass = false;
  }
  report.pass = report.bound_pass && report.omega2_zero;
  return report;
}

double calibration_gap(const BinaryMarginModel& model, BaseScore h, const FeatureVector& x_t,
                       const FeatureVector& x_m, const FeatureVector& x_i, double lambda) {
  OmegaTerms wt = omega_terms(model, h, x_t, x_i, lambda);
  OmegaTerms wm = omega_terms(model, h, x_m, x_i, lambda);
  return margin_score(h, model.f(x_t)) - margin_score(h, model.f(x_m)) +
         (wt.omega1 - wm.omega1) + (wt.omega2 - wm.omega2) + (wt.omega3 - wm.omega3);
}

bool aux_existence_precondition(const BinaryMarginModel& model, BaseScore h,
                                const FeatureVector& x_t, const FeatureVector& x_m) {
  double f_t = model.f(x_t);
  double f_m = model.f(x_m);
  if (h == BaseScore::MLS) return f_m > f_t && f_t > 0.0;
  return (0.0 < f_m && f_m < f_t) || (f_t < f_m && f_m < 0.0);
}

std::vector<FeatureVector> find_calibrating_aux(const BinaryMarginModel& model, BaseScore h,
                                                const FeatureVector& x_t, const FeatureVector& x_m,
                                                double lambda,
                                                const std::vector<FeatureVector>& grid) {
  if (h != BaseScore::MSP && h != BaseScore::Entropy && h != BaseScore::MLS)
    theory_error("derivatives not implemented for " + to_string(h));
  if (!aux_existence_precondition(model, h, x_t, x_m)) {
    if (h == BaseScore::MLS)
      theory_error("MLS existence condition violated: need f(x_m) > f(x_t) > 0");
    theory_error("hard-OOD precondition violated: need 0 < f(x_m) < f(x_t) or f(x_t) < f(x_m) < 0");
  }

  const double closed_form =
      lambda * (model.f(x_m) - model.f(x_t));  // MLS only, auxiliary independent

  std::vector<FeatureVector> qualifying;
  for (const auto& x_i : grid) {
    double gap = calibration_gap(model, h, x_t, x_m, x_i, lambda);
    if (h == BaseScore::MLS && std::abs(gap - closed_form) > 1e-12)
      theory_error("MLS gap deviates from its closed form");
    if (gap > 0.0) qualifying.push_back(x_i);
  }
  return qualifying;
}

double msp_aux_margin_bound(const BinaryMarginModel& model, const FeatureVector& x_t,
                            const FeatureVector& x_m, double lambda) {
  double f_t = model.f(x_t);
  double f_m = model.f(x_m);
  if (!((0.0 < f_m && f_m < f_t)))
    theory_error("the MSP bound is stated for the positive hard-OOD branch");
  double c = f_t - f_m;
  double denom = sigmoid_d1(f_t) - sigmoid_d1(f_m);
  return f_t + (1.0 / (2.0 * (lambda - 1.0)) + c * sigmoid_d1(f_m)) / denom;
}

std::vector<std::pair<FeatureVector, FeatureVector>> mine_hard_ood_pairs(
    const BinaryMarginModel& model, const SyntheticSpec& spec, BaseScore h, int count, Rng& rng,
    int max_draws) {
  spec.validate();

  // Dense class index per ID component, matching sample_synthetic's label
  // ordering. The margin's sign picks the predicted class: f > 0 is the
  // dense class 1 side.
  std::set<int> labels;
  for (const auto& c : spec.components)
    if (!c.is_ood) labels.insert(c.label);
  auto dense_of = [&](int label) {
    return static_cast<int>(std::distance(labels.begin(), labels.find(label)));
  };
  std::vector<const SyntheticComponent*> ood_components;
  std::vector<std::vector<const SyntheticComponent*>> id_components(labels.size());
  for (const auto& c : spec.components) {
    if (c.is_ood)
      ood_components.push_back(&c);
    else
      id_components[dense_of(c.label)].push_back(&c);
  }
  if (ood_components.empty()) theory_error("spec has no OOD components to mine targets from");

  auto draw_from = [&](const SyntheticComponent& c) {
    return FeatureVector(Eigen::Vector2d(
        c.mean[0] + std::sqrt(c.variance[0]) * rng.next_gaussian(),
        c.mean[1] + std::sqrt(c.variance[1]) * rng.next_gaussian()));
  };

  std::vector<std::pair<FeatureVector, FeatureVector>> pairs;
  for (int trial = 0; trial < max_draws && static_cast<int>(pairs.size()) < count; ++trial) {
    const auto& oc = *ood_components[rng.bounded(ood_components.size())];
    FeatureVector x_t = draw_from(oc);
    int predicted = model.f(x_t) > 0.0 ? 1 : 0;
    if (predicted >= static_cast<int>(id_components.size()) || id_components[predicted].empty())
      continue;
    const auto& ic =
        *id_components[predicted][rng.bounded(id_components[predicted].size())];
    FeatureVector x_m = draw_from(ic);
    if (aux_existence_precondition(model, h, x_t, x_m)) pairs.emplace_back(x_t, x_m);
  }
  return pairs;
}

std::vector<FeatureVector> make_lattice(double extent, int points_per_axis) {
  if (!(extent > 0.0)) theory_error("lattice extent must be positive");
  if (points_per_axis < 2) theory_error("lattice needs at least 2 points per axis");
  std::vector<FeatureVector> points;
  points.reserve(static_cast<std::size_t>(points_per_axis) * points_per_axis);
  double step = 2.0 * extent / (points_per_axis - 1);
  for (int i = 0; i < points_per_axis; ++i) {
    for (int j = 0; j < points_per_axis; ++j) {
      points.push_back(Eigen::Vector2d(-extent + i * step, -extent + j * step));
    }
  }
  return points;
}

double lattice_extent(const LabeledDataset& ds) {
  double m = 0.0;
  for (const auto& r : ds.records) m = std::max(m, r.features.cwiseAbs().maxCoeff());
  return 3.0 * m;
}

}  // namespace mixdiff

#include "mixdiff/scoring.hpp"

#include <atomic>
#include <cmath>
#include <iostream>

namespace mixdiff {

namespace {

[[noreturn]] void scoring_error(const std::string& msg) { throw Error("scoring", msg); }

double check_finite(double v) {
  if (!std::isfinite(v)) scoring_error("score is not finite");
  return v;
}

void warn_mcm_probs_once() {
  static std::atomic<bool> warned{false};
  if (!warned.exchange(true))
    std::cerr << "WARN scoring: MCM temperature applies to logits only; "
                 "with probability inputs MCM degrades to MSP\n";
}

}  // namespace

void ScoreFn::validate() const {
  if (!(temperature > 0.0)) scoring_error("temperature must be positive");
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  if (logits.size() == 0) scoring_error("softmax of empty vector");
  if (!all_finite(logits)) scoring_error("softmax input has non-finite entries");
  Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
  Eigen::VectorXd e = shifted.array().exp();
  return e / e.sum();
}

double logsumexp(const Eigen::VectorXd& v) {
  if (v.size() == 0) scoring_error("logsumexp of empty vector");
  double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

double entropy(const Eigen::VectorXd& probs) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    double p = probs[i];
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

bool score_accepts(BaseScore kind, OutputKind out) {
  switch (kind) {
    case BaseScore::MSP:
    case BaseScore::Entropy:
    case BaseScore::MCM:
      return out == OutputKind::Logits || out == OutputKind::Probs;
    case BaseScore::MLS:
    case BaseScore::Energy:
      return out == OutputKind::Logits;
  }
  return false;
}

double score(const ScoreFn& fn, const ModelOutput& out) {
  fn.validate();
  if (!score_accepts(fn.kind, out.kind))
    scoring_error(to_string(fn.kind) + " cannot score a " + to_string(out.kind) + " output");
  if (out.values.size() == 0) scoring_error("cannot score an empty output");
  if (!all_finite(out.values)) scoring_error("cannot score a non-finite output");

  switch (fn.kind) {
    case BaseScore::MSP: {
      if (out.kind == OutputKind::Probs) return check_finite(-out.values.maxCoeff());
      return check_finite(-softmax(out.values).maxCoeff());
    }
    case BaseScore::MLS:
      return check_finite(-out.values.maxCoeff());
    case BaseScore::Energy:
      return check_finite(-logsumexp(out.values));
    case BaseScore::Entropy: {
      if (out.kind == OutputKind::Probs) return check_finite(entropy(out.values));
      return check_finite(entropy(softmax(out.values)));
    }
    case BaseScore::MCM: {
      if (out.kind == OutputKind::Probs) {
        warn_mcm_probs_once();
        return check_finite(-out.values.maxCoeff());
      }
      Eigen::VectorXd scaled = out.values / fn.temperature;
      return check_finite(-softmax(scaled).maxCoeff());
    }
  }
  scoring_error("unhandled score kind");
}

}  // namespace mixdiff

#pragma once

#include "mixdiff/types.hpp"

namespace mixdiff {

/// Base OOD scoring function h(.). Convention across the whole library:
/// larger score means more OOD.
struct ScoreFn {
  BaseScore kind = BaseScore::MSP;
  double temperature = 1.0;  // MCM only

  void validate() const;
};

/// Stable softmax (max subtraction). Entries positive, sum to 1.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Stable log(sum(exp(v))).
double logsumexp(const Eigen::VectorXd& v);

/// Shannon entropy of a probability vector, natural log, 0*log(0) = 0.
double entropy(const Eigen::VectorXd& probs);

/// True when the scoring function can consume the given output kind.
/// MSP/Entropy/MCM accept Logits or Probs; MLS/Energy accept Logits only;
/// LabelOneHot and Embedding are rejected by all (label mode bypasses h).
bool score_accepts(BaseScore kind, OutputKind out);

/// Scores one model output. With Probs input MCM cannot apply its
/// temperature (it scales logits), degrades to MSP and warns once.
double score(const ScoreFn& fn, const ModelOutput& out);

}  // namespace mixdiff

#pragma once

#include "mixdiff/types.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mixdiff {

/// Carrier for every metric input. OOD is the positive class and higher
/// scores mean more OOD.
struct ScoredSample {
  double score = 0.0;
  bool is_ood = false;
};
using ScoredSet = std::vector<ScoredSample>;

/// Mann-Whitney statistic P(score_ood > score_id) + 0.5 P(equal),
/// computed with midranks.
double auroc(const ScoredSet& s);

/// The largest threshold t such that the fraction of OOD scores >= t is
/// at least tpr.
double tpr_threshold(const ScoredSet& s, double tpr);

/// Fraction of ID scores at or above the TPR threshold.
double fpr_at_tpr(const ScoredSet& s, double tpr = 0.95);

/// Area under the precision-recall curve, step-wise summation over
/// descending unique score thresholds (no trapezoids), OOD positive.
double aucpr(const ScoredSet& s);

/// Empirical mass of each class on either side of the TPR threshold,
/// detection predicate score >= t.
struct ThresholdMass {
  double id_over = 0.0;
  double id_under = 0.0;
  double ood_over = 0.0;
  double ood_under = 0.0;
};
ThresholdMass threshold_mass(const ScoredSet& s, double tpr = 0.95);

enum class IntervalSide { Below, Above, All };

/// Per-interval difference of OOD and ID means for a secondary score,
/// with samples bucketed by 5 equal-width intervals of the base score.
struct IntervalGap {
  double lo = 0.0;
  double hi = 0.0;
  int id_count = 0;
  int ood_count = 0;
  // null when the interval lacks one of the classes
  std::optional<double> base_gap;   // mean(base|ood) - mean(base|id)
  std::optional<double> other_gap;  // mean(other|ood) - mean(other|id)
};

/// Side selects the samples kept before bucketing: Below/Above restrict to
/// base scores under/over the TPR threshold of the base score.
std::vector<IntervalGap> interval_gap(const std::vector<double>& base,
                                      const std::vector<double>& other,
                                      const std::vector<bool>& is_ood,
                                      IntervalSide side = IntervalSide::All,
                                      double tpr = 0.95);

/// Pearson correlation matrix of named, equal-length score columns.
/// Symmetric with unit diagonal; zero-variance columns are an error.
Eigen::MatrixXd score_correlation(
    const std::vector<std::pair<std::string, std::vector<double>>>& columns);

}  // namespace mixdiff

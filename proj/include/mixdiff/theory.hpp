#pragma once

#include "mixdiff/backend.hpp"
#include "mixdiff/dataset.hpp"
#include "mixdiff/rng.hpp"
#include "mixdiff/types.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mixdiff {

/// Synthetic 2-D Gaussian mixture: two or more ID components with class
/// labels plus OOD components, diagonal covariance.
struct SyntheticComponent {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Vector2d variance = Eigen::Vector2d::Ones();  // diagonal of the covariance
  int count = 0;
  int label = -1;  // class index for ID components, -1 for OOD
  bool is_ood = false;
};

struct SyntheticSpec {
  std::vector<SyntheticComponent> components;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Four unit-variance components: ID class 0 at (-3,-3), ID class 1 at
/// (3,3), OOD at (-3,3) and (3,-3).
SyntheticSpec default_synthetic_spec();

SyntheticSpec load_synthetic_spec(const std::string& path);
void save_synthetic_spec(const SyntheticSpec& spec, const std::string& path);

LabeledDataset sample_synthetic(const SyntheticSpec& spec);

/// Scalar margin view of a binary linear classifier: f(x) = w.x + b with
/// sigma(f) the probability of class 1. Two-class logits collapse to
/// w = W.row(1) - W.row(0), b = b1 - b0.
struct BinaryMarginModel {
  Eigen::VectorXd w;
  double b = 0.0;

  double f(const FeatureVector& x) const { return w.dot(x) + b; }
};

BinaryMarginModel binary_margin(const LinearSoftmaxModel& model);

/// Scalar score h(f), h'(f), h''(f) in margin form for MSP, Entropy and
/// MLS (MLS uses the margin convention h(f) = -f). Other scores have no
/// implemented derivatives.
double margin_score(BaseScore h, double f);
double margin_score_d1(BaseScore h, double f);
double margin_score_d2(BaseScore h, double f);

/// Second-order decomposition of the mixed sample's score around
/// lambda = 1. For a linear model f'' = 0, so omega2 is identically zero.
struct OmegaTerms {
  double omega1 = 0.0;
  double omega2 = 0.0;
  double omega3 = 0.0;
  double lambda = 0.0;
  double base = 0.0;      // h(f(x_t))
  double approx = 0.0;    // base + omega1 + omega2 + omega3
  double exact = 0.0;     // h(f(mixup(x_t, x_i, lambda)))
  double residual = 0.0;  // exact - approx
};

OmegaTerms omega_terms(const BinaryMarginModel& model, BaseScore h, const FeatureVector& x_t,
                       const FeatureVector& x_i, double lambda);

/// Residual behaviour of the decomposition over a lambda grid: the
/// residual must vanish like (1 - lambda)^2. The bound constant is fitted
/// on the two grid points closest to 1 and relaxed by slack_factor.
struct TaylorDecayReport {
  std::vector<double> lambdas;           // as given
  std::vector<double> max_abs_residual;  // per lambda, over all pairs
  double fitted_c = 0.0;
  double slack_factor = 10.0;
  double monotone_fraction = 0.0;  // pairs whose |residual| shrinks toward lambda = 1
  bool bound_pass = false;
  bool omega2_zero = true;
  bool pass = false;
};

TaylorDecayReport verify_taylor_decay(const BinaryMarginModel& model, BaseScore h,
                                      const std::vector<std::pair<FeatureVector, FeatureVector>>& pairs,
                                      std::vector<double> lambdas, double slack_factor = 10.0);

/// Calibration gap of the second-order expansion:
///   h(f(x_t)) - h(f(x_m)) + sum_l (omega_l(x_t, x_i) - omega_l(x_m, x_i)).
double calibration_gap(const BinaryMarginModel& model, BaseScore h, const FeatureVector& x_t,
                       const FeatureVector& x_m, const FeatureVector& x_i, double lambda);

/// Existence precondition for the calibrating-auxiliary search. MSP and
/// Entropy use the hard-OOD condition 0 < f(x_m) < f(x_t) or
/// f(x_t) < f(x_m) < 0; MLS uses f(x_m) > f(x_t) > 0, under which the gap
/// reduces to lambda * (f(x_m) - f(x_t)) independent of the auxiliary.
bool aux_existence_precondition(const BinaryMarginModel& model, BaseScore h,
                                const FeatureVector& x_t, const FeatureVector& x_m);

/// Every grid point whose calibration gap is positive. Checks the
/// precondition and, for MLS, cross-checks each gap against the closed
/// form to 1e-12.
std::vector<FeatureVector> find_calibrating_aux(const BinaryMarginModel& model, BaseScore h,
                                                const FeatureVector& x_t, const FeatureVector& x_m,
                                                double lambda,
                                                const std::vector<FeatureVector>& grid);

/// Lower bound on f(x_i) that pushes the first-order term difference over
/// 1/2 for MSP (sufficient, not necessary, for a positive gap when the
/// omega3 difference is also nonnegative).
double msp_aux_margin_bound(const BinaryMarginModel& model, const FeatureVector& x_t,
                            const FeatureVector& x_m, double lambda);

/// Rejection-samples (x_t, x_m) pairs from the spec's components until
/// count of them satisfy the existence precondition for h: x_t drawn from
/// the OOD components, x_m from the ID components of x_t's predicted
/// class. Returns fewer pairs if max_draws trials run out.
std::vector<std::pair<FeatureVector, FeatureVector>> mine_hard_ood_pairs(
    const BinaryMarginModel& model, const SyntheticSpec& spec, BaseScore h, int count, Rng& rng,
    int max_draws = 500000);

/// Axis-aligned lattice covering [-extent, extent]^2.
std::vector<FeatureVector> make_lattice(double extent, int points_per_axis);

/// 3x the largest coordinate magnitude in the dataset.
double lattice_extent(const LabeledDataset& ds);

}  // namespace mixdiff

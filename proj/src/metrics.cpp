#include "mixdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mixdiff {

namespace {

[[noreturn]] void metrics_error(const std::string& msg) { throw Error("metrics", msg); }

void check_two_classes(const ScoredSet& s) {
  if (s.empty()) metrics_error("empty scored set");
  std::size_t ood = 0;
  for (const auto& e : s) {
    if (!std::isfinite(e.score)) metrics_error("scores must be finite");
    if (e.is_ood) ++ood;
  }
  if (ood == 0 || ood == s.size())
    metrics_error("scored set needs at least one ID and one OOD entry");
}

}  // namespace

double auroc(const ScoredSet& s) {
  check_two_classes(s);
  const std::size_t n = s.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return s[a].score < s[b].score; });

  // Midranks over tie groups, then the Mann-Whitney U statistic.
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && s[order[j + 1]].score == s[order[i]].score) ++j;
    double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }

  double rank_sum_ood = 0.0;
  std::size_t n_ood = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (s[k].is_ood) {
      rank_sum_ood += rank[k];
      ++n_ood;
    }
  }
  std::size_t n_id = n - n_ood;
  double u = rank_sum_ood - 0.5 * static_cast<double>(n_ood) * (n_ood + 1);
  return u / (static_cast<double>(n_ood) * static_cast<double>(n_id));
}

double tpr_threshold(const ScoredSet& s, double tpr) {
  check_two_classes(s);
  if (!(tpr > 0.0) || tpr > 1.0) metrics_error("tpr must lie in (0, 1]");
  std::vector<double> ood_scores;
  for (const auto& e : s)
    if (e.is_ood) ood_scores.push_back(e.score);
  std::sort(ood_scores.begin(), ood_scores.end(), std::greater<>());
  // Smallest count c with c / n_ood >= tpr; the c-th largest OOD score is
  // the largest threshold catching at least that fraction.
  std::size_t c = static_cast<std::size_t>(std::ceil(tpr * ood_scores.size() - 1e-12));
  if (c == 0) c = 1;
  return ood_scores[c - 1];
}

double fpr_at_tpr(const ScoredSet& s, double tpr) {
  double t = tpr_threshold(s, tpr);
  std::size_t id_over = 0, id_total = 0;
  for (const auto& e : s) {
    if (!e.is_ood) {
      ++id_total;
      if (e.score >= t) ++id_over;
    }
  }
  return static_cast<double>(id_over) / static_cast<double>(id_total);
}

double aucpr(const ScoredSet& s) {
  check_two_classes(s);
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return s[a].score > s[b].score; });

  std::size_t total_ood = 0;
  for (const auto& e : s)
    if (e.is_ood) ++total_ood;

  double area = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    // Consume one unique threshold (all entries tied at this score).
    std::size_t j = i;
    while (j < order.size() && s[order[j]].score == s[order[i]].score) {
      if (s[order[j]].is_ood)
        ++tp;
      else
        ++fp;
      ++j;
    }
    double recall = static_cast<double>(tp) / static_cast<double>(total_ood);
    double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

ThresholdMass threshold_mass(const ScoredSet& s, double tpr) {
  double t = tpr_threshold(s, tpr);
  std::size_t id_over = 0, id_total = 0, ood_over = 0, ood_total = 0;
  for (const auto& e : s) {
    if (e.is_ood) {
      ++ood_total;
      if (e.score >= t) ++ood_over;
    } else {
      ++id_total;
      if (e.score >= t) ++id_over;
    }
  }
  ThresholdMass m;
  m.id_over = static_cast<double>(id_over) / id_total;
  m.id_under = static_cast<double>(id_total - id_over) / id_total;
  m.ood_over = static_cast<double>(ood_over) / ood_total;
  m.ood_under = static_cast<double>(ood_total - ood_over) / ood_total;
  return m;
}

std::vector<IntervalGap> interval_gap(const std::vector<double>& base,
                                      const std::vector<double>& other,
                                      const std::vector<bool>& is_ood, IntervalSide side,
                                      double tpr) {
  if (base.size() != other.size() || base.size() != is_ood.size())
    metrics_error("interval_gap arrays are misaligned");
  if (base.empty()) metrics_error("interval_gap needs samples");

  std::vector<std::size_t> kept;
  if (side == IntervalSide::All) {
    kept.resize(base.size());
    std::iota(kept.begin(), kept.end(), 0);
  } else {
    ScoredSet s(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) s[i] = {base[i], static_cast<bool>(is_ood[i])};
    double t = tpr_threshold(s, tpr);
    for (std::size_t i = 0; i < base.size(); ++i) {
      bool over = base[i] >= t;
      if ((side == IntervalSide::Above) == over) kept.push_back(i);
    }
    if (kept.empty()) metrics_error("no samples on the requested side of the threshold");
  }

  double lo = base[kept[0]], hi = base[kept[0]];
  for (auto i : kept) {
    lo = std::min(lo, base[i]);
    hi = std::max(hi, base[i]);
  }
  constexpr int kBins = 5;
  double width = (hi - lo) / kBins;

  std::vector<IntervalGap> gaps(kBins);
  std::vector<double> base_id(kBins, 0.0), base_ood(kBins, 0.0);
  std::vector<double> other_id(kBins, 0.0), other_ood(kBins, 0.0);
  for (int b = 0; b < kBins; ++b) {
    gaps[b].lo = lo + b * width;
    gaps[b].hi = (b == kBins - 1) ? hi : lo + (b + 1) * width;
  }
  for (auto i : kept) {
    int b = width > 0.0 ? static_cast<int>((base[i] - lo) / width) : 0;
    b = std::clamp(b, 0, kBins - 1);
    if (is_ood[i]) {
      ++gaps[b].ood_count;
      base_ood[b] += base[i];
      other_ood[b] += other[i];
    } else {
      ++gaps[b].id_count;
      base_id[b] += base[i];
      other_id[b] += other[i];
    }
  }
  for (int b = 0; b < kBins; ++b) {
    if (gaps[b].id_count > 0 && gaps[b].ood_count > 0) {
      gaps[b].base_gap = base_ood[b] / gaps[b].ood_count - base_id[b] / gaps[b].id_count;
      gaps[b].other_gap = other_ood[b] / gaps[b].ood_count - other_id[b] / gaps[b].id_count;
    }
  }
  return gaps;
}

Eigen::MatrixXd score_correlation(
    const std::vector<std::pair<std::string, std::vector<double>>>& columns) {
  if (columns.size() < 2) metrics_error("correlation needs at least two columns");
  const std::size_t n = columns[0].second.size();
  if (n < 3) metrics_error("correlation needs at least three rows");
  for (const auto& [name, col] : columns)
    if (col.size() != n) metrics_error("column '" + name + "' has mismatched length");

  const std::size_t k = columns.size();
  Eigen::MatrixXd centered(n, k);
  for (std::size_t j = 0; j < k; ++j) {
    double mean = std::accumulate(columns[j].second.begin(), columns[j].second.end(), 0.0) / n;
    for (std::size_t i = 0; i < n; ++i) centered(i, j) = columns[j].second[i] - mean;
    double var = centered.col(j).squaredNorm();
    if (var <= 0.0) metrics_error("column '" + columns[j].first + "' has zero variance");
  }

  Eigen::MatrixXd corr(k, k);
  for (std::size_t a = 0; a < k; ++a) {
    corr(a, a) = 1.0;
    for (std::size_t b = a + 1; b < k; ++b) {
      double r = centered.col(a).dot(centered.col(b)) /
                 (centered.col(a).norm() * centered.col(b).norm());
      corr(a, b) = r;
      corr(b, a) = r;
    }
  }
  return corr;
}

}  // namespace mixdiff

#include "mixdiff/engine.hpp"

#include "mixdiff/metrics.hpp"
#include "mixdiff/perturb.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

namespace mixdiff {

namespace {

[[noreturn]] void engine_error(const std::string& msg) { throw Error("engine", msg); }

constexpr std::uint64_t kStreamAux = 1;
constexpr std::uint64_t kStreamOracle = 2;

bool label_mode(const MixDiffConfig& cfg) { return cfg.access_level == AccessLevel::Labels; }

/// Level at which perturbed samples are evaluated. Under embedding access
/// the mixing happens on representation vectors and the scores come from
/// the logits of the mixed representations.
AccessLevel eval_level(const MixDiffConfig& cfg) {
  return cfg.access_level == AccessLevel::Embeddings ? AccessLevel::Logits : cfg.access_level;
}

ScoreFn score_fn(const MixDiffConfig& cfg) { return {cfg.base_score, cfg.mcm_temperature}; }

/// Maps raw inputs into the space mixup operates on: the identity except
/// under embedding access, where inputs pass through the backend's
/// representation map first.
std::vector<FeatureVector> to_mix_space(const Backend& backend,
                                        const std::vector<FeatureVector>& raw,
                                        const MixDiffConfig& cfg) {
  if (cfg.access_level != AccessLevel::Embeddings) return raw;
  auto outs = backend.predict(raw, AccessLevel::Embeddings);
  std::vector<FeatureVector> mixed;
  mixed.reserve(outs.size());
  for (auto& o : outs) mixed.push_back(std::move(o.values));
  return mixed;
}

Eigen::VectorXd probs_from_output(const ModelOutput& out) {
  switch (out.kind) {
    case OutputKind::Probs: return out.values;
    case OutputKind::Logits: return softmax(out.values);
    default:
      engine_error("probability vector unavailable for " + to_string(out.kind) + " outputs");
  }
}

/// Partial Fisher-Yates: k draws without replacement from [0, n).
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.bounded(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

std::vector<OracleExemplar> select_oracles(const OracleSet& oracles,
                                           const ModelOutput& target_out,
                                           const MixDiffConfig& cfg,
                                           const std::vector<Eigen::VectorXd>* pool_probs,
                                           const Eigen::VectorXd* target_probs, Rng* rng) {
  switch (cfg.oracle_selection) {
    case OracleSelection::ByPredictedLabel: {
      if (!oracles.labeled)
        engine_error("by_predicted_label selection needs a labeled oracle set");
      int k = argmax_class(target_out);
      return oracles.class_exemplars(k);  // throws when the class is absent
    }
    case OracleSelection::UnlabeledTopM: {
      if (oracles.labeled) engine_error("unlabeled_top_m selection needs an unlabeled pool");
      if (pool_probs == nullptr || target_probs == nullptr)
        engine_error("unlabeled_top_m selection needs precomputed probability vectors");
      if (pool_probs->size() != oracles.pool.size())
        engine_error("pool probability vectors do not match the oracle pool");
      const int m = cfg.oracle_size;
      if (static_cast<int>(oracles.pool.size()) < m)
        engine_error("oracle pool smaller than the requested top-M");
      std::vector<std::size_t> order(oracles.pool.size());
      std::iota(order.begin(), order.end(), 0);
      std::vector<double> sim(oracles.pool.size());
      for (std::size_t i = 0; i < oracles.pool.size(); ++i)
        sim[i] = target_probs->dot((*pool_probs)[i]);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (sim[a] != sim[b]) return sim[a] > sim[b];
        return oracles.pool[a].id < oracles.pool[b].id;  // ties toward the lower id
      });
      std::vector<OracleExemplar> selected;
      selected.reserve(m);
      for (int i = 0; i < m; ++i) selected.push_back(oracles.pool[order[i]]);
      return selected;
    }
    case OracleSelection::RandomOracle: {
      if (rng == nullptr) engine_error("random_oracle selection needs a seeded rng");
      auto flat = oracles.flattened();
      const int m = cfg.oracle_size;
      if (static_cast<int>(flat.size()) < m)
        engine_error("oracle pool smaller than the requested draw");
      auto idx = draw_without_replacement(flat.size(), static_cast<std::size_t>(m), *rng);
      std::vector<OracleExemplar> selected;
      selected.reserve(m);
      for (auto i : idx) selected.push_back(*flat[i]);
      return selected;
    }
  }
  engine_error("unhandled oracle selection");
}

OracleCache build_oracle_cache(const Backend& backend,
                               const std::vector<OracleExemplar>& oracles,
                               const std::vector<FeatureVector>& aux,
                               const std::vector<std::string>& aux_ids,
                               const MixDiffConfig& cfg) {
  if (oracles.empty()) engine_error("no oracle exemplars");
  if (aux.empty()) engine_error("no auxiliary samples");
  if (aux_ids.size() != aux.size()) engine_error("auxiliary ids do not match the auxiliary list");

  OracleCache cache;
  cache.ratios = mixup_ratio_grid(cfg.num_ratios);
  cache.aux = to_mix_space(backend, aux, cfg);
  cache.aux_ids = aux_ids;
  for (const auto& o : oracles) cache.oracle_ids.push_back(o.id);

  std::vector<FeatureVector> oracle_feats;
  oracle_feats.reserve(oracles.size());
  for (const auto& o : oracles) oracle_feats.push_back(o.features);
  oracle_feats = to_mix_space(backend, oracle_feats, cfg);

  const int n = static_cast<int>(cache.aux.size());
  const int r_count = static_cast<int>(cache.ratios.size());
  const int m_count = static_cast<int>(oracle_feats.size());

  // All M*N*R mixtures in one backend call, (i, r)-major, m-minor.
  std::vector<FeatureVector> mixtures;
  mixtures.reserve(static_cast<std::size_t>(n) * r_count * m_count);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < r_count; ++r)
      for (int m = 0; m < m_count; ++m)
        mixtures.push_back(mixup(oracle_feats[m], cache.aux[i], cache.ratios[r]));

  std::vector<ModelOutput> outs;
  try {
    outs = backend.predict(mixtures, eval_level(cfg));
  } catch (const Error& e) {
    throw Error(e.module(), "oracle cache build failed over M=" + std::to_string(m_count) +
                                " oracles, N=" + std::to_string(n) + " auxiliaries, R=" +
                                std::to_string(r_count) + " ratios: " + e.what());
  }

  const bool scored = !label_mode(cfg);
  ScoreFn fn = score_fn(cfg);
  cache.averaged.reserve(static_cast<std::size_t>(n) * r_count);
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < r_count; ++r) {
      const std::size_t base = (static_cast<std::size_t>(i) * r_count + r) * m_count;
      Eigen::VectorXd sum = outs[base].values;
      for (int m = 1; m < m_count; ++m) sum += outs[base + m].values;
      sum /= static_cast<double>(m_count);
      ModelOutput avg;
      // The average of one-hot vectors is a per-class frequency vector,
      // not a one-hot; keep it as probabilities over predicted labels.
      avg.kind = label_mode(cfg) ? OutputKind::Probs : outs[base].kind;
      avg.values = std::move(sum);
      if (scored) cache.scores.push_back(score(fn, avg));
      cache.averaged.push_back(std::move(avg));
    }
  }
  return cache;
}

MixDiffResult mixdiff_score(const Backend& backend, const FeatureVector& target,
                            const std::string& target_id, const OracleCache& cache,
                            const std::vector<FeatureVector>& aux, const MixDiffConfig& cfg,
                            int exclude_aux) {
  cfg.validate();
  if (cache.aux.empty() || cache.averaged.empty()) engine_error("oracle cache is empty");
  if (cache.ratios != mixup_ratio_grid(cfg.num_ratios))
    engine_error("oracle cache was built with a different ratio grid");
  if (!aux.empty()) {
    std::vector<FeatureVector> mixed = to_mix_space(backend, aux, cfg);
    if (mixed.size() != cache.aux.size())
      engine_error("auxiliary set does not match the oracle cache");
    for (std::size_t i = 0; i < mixed.size(); ++i)
      if (mixed[i].size() != cache.aux[i].size() || mixed[i] != cache.aux[i])
        engine_error("auxiliary set does not match the oracle cache");
  }

  const int n = cache.num_aux();
  const int r_count = cache.num_ratios();
  if (exclude_aux >= n) engine_error("excluded auxiliary index out of range");
  const int n_included = exclude_aux >= 0 ? n - 1 : n;
  if (n_included < 1) engine_error("no auxiliary samples left after exclusion");

  FeatureVector target_mix = to_mix_space(backend, {target}, cfg)[0];

  std::vector<FeatureVector> mixtures;
  std::vector<std::pair<int, int>> pair_of;  // (i, r) per mixture
  mixtures.reserve(static_cast<std::size_t>(n_included) * r_count);
  for (int i = 0; i < n; ++i) {
    if (i == exclude_aux) continue;
    for (int r = 0; r < r_count; ++r) {
      mixtures.push_back(mixup(target_mix, cache.aux[i], cache.ratios[r]));
      pair_of.emplace_back(i, r);
    }
  }
  std::vector<ModelOutput> outs = backend.predict(mixtures, eval_level(cfg));

  MixDiffResult result;
  result.target_id = target_id;

  ModelOutput target_out = backend.predict({target}, eval_level(cfg))[0];
  result.predicted_class = argmax_class(target_out);

  double sum = 0.0;
  result.breakdown.reserve(outs.size());
  ScoreFn fn = score_fn(cfg);
  for (std::size_t idx = 0; idx < outs.size(); ++idx) {
    auto [i, r] = pair_of[idx];
    double term = 0.0;
    if (label_mode(cfg)) {
      int k_ir = argmax_class(outs[idx]);
      term = 1.0 - cache.at(i, r).values[k_ir];
    } else {
      double s_ir = score(fn, outs[idx]);
      term = cfg.compare_enabled ? s_ir - cache.score_at(i, r) : s_ir;
    }
    sum += term;
    TermBreakdown tb;
    tb.aux_index = i;
    tb.ratio_index = r;
    tb.aux_id = i < static_cast<int>(cache.aux_ids.size()) ? cache.aux_ids[i] : std::string();
    tb.lambda = cache.ratios[r];
    tb.term = term;
    result.breakdown.push_back(std::move(tb));
  }
  result.mixdiff_score = sum / static_cast<double>(outs.size());

  if (label_mode(cfg)) {
    result.final_score = result.mixdiff_score;
  } else {
    result.base_score = score(fn, target_out);
    result.final_score = cfg.compare_enabled
                             ? *result.base_score + cfg.gamma * result.mixdiff_score
                             : result.mixdiff_score;
  }
  return result;
}

std::vector<MixDiffResult> run_detection(const Backend& backend, const LabeledDataset& targets,
                                         const OracleSet& oracles, const MixDiffConfig& cfg,
                                         std::uint64_t seed, int jobs) {
  cfg.validate();
  targets.validate();
  oracles.validate();
  if (targets.dim != backend.dim())
    engine_error("target dimension does not match the backend");

  const std::size_t batch = targets.size();

  // Strategy feasibility, checked before any backend call.
  switch (cfg.aux_strategy) {
    case AuxStrategy::InBatch:
      if (batch < 2) engine_error("in_batch auxiliaries need a batch of at least 2 targets");
      break;
    case AuxStrategy::OracleAsAux:
      if (cfg.oracle_size < 2) engine_error("oracle_as_aux needs at least 2 oracle exemplars");
      break;
    case AuxStrategy::RandomID:
      if (oracles.total() < cfg.num_aux)
        engine_error("random_id needs an ID pool of at least num_aux samples");
      break;
  }

  std::vector<FeatureVector> feats;
  feats.reserve(batch);
  for (const auto& r : targets.records) feats.push_back(r.features);

  // Per-target outputs at the configured level; under embedding access the
  // class prediction and base score come from the logits.
  std::vector<ModelOutput> target_outs = backend.predict(feats, eval_level(cfg));

  // Probability vectors for unlabeled oracle selection.
  std::vector<Eigen::VectorXd> pool_probs;
  std::vector<Eigen::VectorXd> target_probs;
  if (cfg.oracle_selection == OracleSelection::UnlabeledTopM) {
    std::vector<FeatureVector> pool_feats;
    for (const auto* e : oracles.flattened()) pool_feats.push_back(e->features);
    for (const auto& o : backend.predict(pool_feats, eval_level(cfg)))
      pool_probs.push_back(probs_from_output(o));
    for (const auto& o : target_outs) target_probs.push_back(probs_from_output(o));
  }

  // Shared auxiliary set for strategies that do not depend on the target.
  std::vector<FeatureVector> shared_aux;
  std::vector<std::string> shared_aux_ids;
  if (cfg.aux_strategy == AuxStrategy::InBatch) {
    shared_aux = feats;
    for (const auto& r : targets.records) shared_aux_ids.push_back(r.id);
  } else if (cfg.aux_strategy == AuxStrategy::RandomID) {
    // One fixed auxiliary set per run so the oracle side can be
    // precomputed once and shared across targets.
    Rng rng = Rng::split(seed, kStreamAux, 0);
    auto flat = oracles.flattened();
    auto idx = draw_without_replacement(flat.size(), static_cast<std::size_t>(cfg.num_aux), rng);
    for (auto i : idx) {
      shared_aux.push_back(flat[i]->features);
      shared_aux_ids.push_back(flat[i]->id);
    }
  }

  struct Plan {
    std::vector<OracleExemplar> oracles;
    const std::vector<FeatureVector>* aux = nullptr;
    const std::vector<std::string>* aux_ids = nullptr;
    std::vector<FeatureVector> own_aux;
    std::vector<std::string> own_aux_ids;
    int exclude = -1;
    std::string cache_key;
  };
  std::vector<Plan> plans(batch);

  for (std::size_t t = 0; t < batch; ++t) {
    Plan& plan = plans[t];
    Rng rng = Rng::split(seed, kStreamOracle, t);
    plan.oracles = select_oracles(
        oracles, target_outs[t], cfg, pool_probs.empty() ? nullptr : &pool_probs,
        target_probs.empty() ? nullptr : &target_probs[t], &rng);

    if (cfg.aux_strategy == AuxStrategy::OracleAsAux) {
      // The first selected exemplar stays oracle-only; the other M-1 make
      // up the auxiliary set, so N = M - 1.
      if (plan.oracles.size() < 2)
        engine_error("oracle_as_aux needs at least 2 oracle exemplars");
      for (std::size_t i = 1; i < plan.oracles.size(); ++i) {
        plan.own_aux.push_back(plan.oracles[i].features);
        plan.own_aux_ids.push_back(plan.oracles[i].id);
      }
      plan.aux = &plan.own_aux;
      plan.aux_ids = &plan.own_aux_ids;
    } else {
      plan.aux = &shared_aux;
      plan.aux_ids = &shared_aux_ids;
      if (cfg.aux_strategy == AuxStrategy::InBatch) plan.exclude = static_cast<int>(t);
    }

    std::string key;
    for (const auto& o : plan.oracles) key += o.id + ";";
    key += "|";
    for (const auto& id : *plan.aux_ids) key += id + ";";
    plan.cache_key = std::move(key);
  }

  // Build each distinct cache once, serially; scoring shares them
  // read-only.
  std::map<std::string, OracleCache> caches;
  for (const auto& plan : plans) {
    if (caches.find(plan.cache_key) == caches.end()) {
      caches.emplace(plan.cache_key,
                     build_oracle_cache(backend, plan.oracles, *plan.aux, *plan.aux_ids, cfg));
    }
  }

  std::vector<MixDiffResult> results(batch);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    for (;;) {
      std::size_t t = next.fetch_add(1);
      if (t >= batch) return;
      try {
        const Plan& plan = plans[t];
        MixDiffResult r =
            mixdiff_score(backend, targets.records[t].features, targets.records[t].id,
                          caches.at(plan.cache_key), {}, cfg, plan.exclude);
        r.is_ood = targets.records[t].is_ood;
        results[t] = std::move(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  int n_threads = jobs > 0 ? jobs : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::clamp(n_threads, 1, static_cast<int>(batch));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

FeatureVector pgd_attack(const LinearSoftmaxModel& model, const FeatureVector& x, bool is_id,
                         double eps, int steps, double step_size) {
  if (eps < 0.0) engine_error("eps must be nonnegative");
  if (steps < 0) engine_error("steps must be nonnegative");
  if (step_size < 0.0) engine_error("step_size must be nonnegative");

  GradLoss loss = is_id ? GradLoss::CEUniform : GradLoss::Entropy;
  FeatureVector adv = x;
  for (int s = 0; s < steps; ++s) {
    FeatureVector g = grad_input(model, adv, loss);
    adv -= step_size * g.array().sign().matrix();
    adv = adv.cwiseMax((x.array() - eps).matrix()).cwiseMin((x.array() + eps).matrix());
  }
  return adv;
}

}  // namespace mixdiff

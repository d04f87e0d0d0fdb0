#pragma once

// Adaptive dictionary size and sparsity level: score history, pruning of
// coherent and unused atoms, promotion of candidates, and the full schedule.

#include "itkrm/candidates.hpp"
#include "itkrm/engine.hpp"
#include "itkrm/linalg.hpp"
#include "itkrm/trajectory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace itkrm {

/// Last m per-atom scores (index 0 = most recent) plus birth iterations.
class ScoreHistory {
 public:
  ScoreHistory() = default;
  ScoreHistory(Index K, int memory, int birth = 0)
      : memory_(memory),
        scores_(static_cast<std::size_t>(K)),
        observed_(static_cast<std::size_t>(K), 0),
        birth_(static_cast<std::size_t>(K), birth) {
    if (memory < 1) throw std::invalid_argument("score history needs memory >= 1");
  }

  Index size() const { return static_cast<Index>(scores_.size()); }
  int memory() const { return memory_; }
  int birth(Index k) const { return birth_[idx(k)]; }
  const std::vector<std::int64_t>& scores(Index k) const { return scores_[idx(k)]; }
  /// Whether all m slots hold observed (or initialized) values.
  bool full(Index k) const { return observed_[idx(k)] >= memory_; }

  std::int64_t recent(Index k) const {
    const auto& s = scores_[idx(k)];
    return s.empty() ? 0 : s.front();
  }
  std::int64_t max_recent(Index k) const {
    const auto& s = scores_[idx(k)];
    return s.empty() ? 0 : *std::max_element(s.begin(), s.end());
  }

  void push(const std::vector<std::int64_t>& latest) {
    if (latest.size() != scores_.size()) throw std::invalid_argument("score vector length does not match history");
    for (std::size_t k = 0; k < scores_.size(); ++k) {
      auto& s = scores_[k];
      s.insert(s.begin(), latest[k]);
      if (static_cast<int>(s.size()) > memory_) s.pop_back();
      observed_[k] = std::min(memory_, observed_[k] + 1);
    }
  }

  void add_to_recent(Index k, std::int64_t v) {
    auto& s = scores_[idx(k)];
    if (s.empty()) s.push_back(v);
    else s.front() += v;
  }

  void append(std::int64_t init, int birth) {
    scores_.emplace_back(static_cast<std::size_t>(memory_), init);
    observed_.push_back(memory_);
    birth_.push_back(birth);
  }

  /// Removes the given atoms; indices may be in any order.
  void erase(std::vector<Index> ks) {
    std::sort(ks.begin(), ks.end(), std::greater<>());
    for (Index k : ks) {
      scores_.erase(scores_.begin() + k);
      observed_.erase(observed_.begin() + k);
      birth_.erase(birth_.begin() + k);
    }
  }

 private:
  std::size_t idx(Index k) const {
    if (k < 0 || k >= size()) throw std::out_of_range("atom index out of range");
    return static_cast<std::size_t>(k);
  }

  int memory_ = 1;
  std::vector<std::vector<std::int64_t>> scores_;
  std::vector<int> observed_;
  std::vector<int> birth_;
};

struct AdaptiveConfig {
  double mu_max = 0.7;
  double min_observations = 1.0;  // M
  double add_threshold = 1.0;     // M_Gamma
  int memory = 1;                 // m: history length, embargo, candidate sub-batches
  Index candidate_count = 1;      // L
  int max_prune = 1;              // delta
  int start_adapt = 1;
  int start_prune = 2;
  int freeze_add_tail = 3;
  bool undercomplete_guard = true;
  std::uint64_t seed = 0;
  double recovery_threshold = 0.99;
  Index block_size = 256;
  bool deterministic_reduction = true;
  double dead_atom_floor = 1e-3;

  /// m = L = round(log d), delta = round(d/5), M_Gamma = d, and the schedule
  /// offsets m, 2m, 3m.
  static AdaptiveConfig defaults(Index d, double M) {
    AdaptiveConfig c;
    const double dd = static_cast<double>(d);
    c.memory = std::max(1, static_cast<int>(std::lround(std::log(dd))));
    c.candidate_count = c.memory;
    c.min_observations = M;
    c.add_threshold = dd;
    c.max_prune = std::max(1, static_cast<int>(std::lround(dd / 5.0)));
    c.start_adapt = c.memory;
    c.start_prune = 2 * c.memory;
    c.freeze_add_tail = 3 * c.memory;
    return c;
  }

  void validate() const {
    if (!(mu_max > 0.0 && mu_max < 1.0)) throw std::invalid_argument("mu_max must lie in (0, 1)");
    if (!(min_observations > 0.0)) throw std::invalid_argument("min_observations must be positive");
    if (!(add_threshold > 0.0)) throw std::invalid_argument("add_threshold must be positive");
    if (memory < 1) throw std::invalid_argument("memory must be >= 1");
    if (candidate_count < 0) throw std::invalid_argument("candidate_count must be >= 0");
    if (max_prune < 1) throw std::invalid_argument("max_prune must be >= 1");
    if (start_adapt < 1 || start_prune < start_adapt) throw std::invalid_argument("need 1 <= start_adapt <= start_prune");
    if (freeze_add_tail < 0) throw std::invalid_argument("freeze_add_tail must be >= 0");
  }
};

struct SparsityState {
  int S_e = 1;
  std::vector<int> S_bar_history;
  double S_t = 0.0;
};

/// S_e moves one step toward S_bar, clamped to [1, min(d, K)].
inline SparsityState update_sparsity(SparsityState state, int S_bar, Index d, Index K) {
  if (S_bar < 0) throw std::invalid_argument("S_bar must be >= 0");
  const int step = (S_bar > state.S_e) - (S_bar < state.S_e);
  const int cap = static_cast<int>(std::max<Index>(1, std::min(d, K)));
  state.S_e = std::clamp(state.S_e + step, 1, cap);
  state.S_bar_history.push_back(S_bar);
  return state;
}

struct PruneResult {
  Dictionary dictionary;
  ScoreHistory history;
  int count = 0;
  std::vector<Index> removed;  // indices in the input dictionary
};

/// Merges the most coherent pairs above mu_max, weighted by the most recent
/// scores. Each atom takes part in at most one merge per call.
inline PruneResult prune_coherent(const Dictionary& dico, const ScoreHistory& history, double mu_max) {
  if (history.size() != dico.size()) throw std::invalid_argument("history size does not match dictionary");
  PruneResult r{dico, history, 0, {}};
  if (dico.size() < 2) return r;
  Matrix h = gram(dico);
  h.diagonal().setZero();
  for (;;) {
    const CoherentPair p = most_coherent_pair(h);
    if (p.first < 0 || !(p.value > mu_max)) break;
    const Index k = p.first, kp = p.second;
    const double sign = sign_of(h(k, kp));
    const auto vk = static_cast<double>(r.history.recent(k));
    const auto vkp = static_cast<double>(r.history.recent(kp));
    Vector merged = vkp * dico.atom(kp) + sign * vk * dico.atom(k);
    if (!(merged.norm() > 1e-12)) merged = dico.atom(kp) + sign * dico.atom(k);
    if (!(merged.norm() > 1e-12)) merged = dico.atom(k);
    r.dictionary.set_atom(k, merged);
    r.history.add_to_recent(k, r.history.recent(kp));
    r.removed.push_back(kp);
    h.row(k).setZero();
    h.col(k).setZero();
    h.row(kp).setZero();
    h.col(kp).setZero();
    ++r.count;
  }
  if (!r.removed.empty()) {
    r.dictionary.remove_atoms(r.removed);
    r.history.erase(r.removed);
  }
  return r;
}

/// Deletes atoms whose maximal recent score stays below M, at most delta
/// per call (smallest maxima first), never within `memory` iterations of
/// their birth, and at most K/2 when K < d/10.
inline PruneResult prune_unused(const Dictionary& dico, const ScoreHistory& history, double M, int delta,
                                int iteration, bool undercomplete_guard = true) {
  if (history.size() != dico.size()) throw std::invalid_argument("history size does not match dictionary");
  PruneResult r{dico, history, 0, {}};
  const Index K = dico.size();
  std::vector<Index> unused;
  for (Index k = 0; k < K; ++k) {
    if (!history.full(k) || iteration - history.birth(k) < history.memory()) continue;
    if (static_cast<double>(history.max_recent(k)) < M) unused.push_back(k);
  }
  std::stable_sort(unused.begin(), unused.end(),
                   [&](Index a, Index b) { return history.max_recent(a) < history.max_recent(b); });
  std::size_t limit = static_cast<std::size_t>(std::max(0, delta));
  if (undercomplete_guard && static_cast<double>(K) < static_cast<double>(dico.dim()) / 10.0)
    limit = std::min(limit, static_cast<std::size_t>(K / 2));
  limit = std::min(limit, static_cast<std::size_t>(K - 1));
  if (unused.size() > limit) unused.resize(limit);
  if (unused.empty()) return r;
  r.removed = unused;
  r.count = static_cast<int>(unused.size());
  r.dictionary.remove_atoms(unused);
  r.history.erase(unused);
  return r;
}

struct AddResult {
  Dictionary dictionary;
  ScoreHistory history;
  int count = 0;
};

/// Appends candidates scoring at least M_add, best first, when their
/// coherence with the growing dictionary is at most mu_max.
inline AddResult add_atoms(const Dictionary& dico, const ScoreHistory& history, const CandidateSet& cands,
                           double mu_max, double M_add, std::int64_t M_init, int iteration) {
  if (history.size() != dico.size()) throw std::invalid_argument("history size does not match dictionary");
  AddResult r{dico, history, 0};
  for (Index l : detail::order_by_score(cands.scores)) {
    if (static_cast<double>(cands.scores[static_cast<std::size_t>(l)]) < M_add) break;
    const Vector gamma = cands.atoms.col(l);
    const double mu = r.dictionary.empty() ? 0.0 : (r.dictionary.atoms().transpose() * gamma).cwiseAbs().maxCoeff();
    if (mu <= mu_max) {
      r.dictionary.append_atom(gamma);
      r.history.append(M_init, iteration);
      ++r.count;
    }
  }
  return r;
}

/// Adaptive learning from an initial dictionary of any size, starting at
/// sparsity level 1.
inline Trajectory run_adaptive(const Dictionary& initial, SignalSource& source, const AdaptiveConfig& cfg,
                               int iterations, const std::function<void(const IterationRecord&)>& on_iteration = {}) {
  cfg.validate();
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  Trajectory traj;
  Dictionary dico = initial;
  ScoreHistory history(dico.size(), cfg.memory, 0);
  SparsityState sparsity;
  const Index d = dico.dim();
  const auto M_init = static_cast<std::int64_t>(std::llround(cfg.min_observations));

  EngineConfig ecfg;
  ecfg.variant = Variant::adaptive;
  ecfg.candidate_subbatches = cfg.memory;
  ecfg.min_observations = cfg.min_observations;
  ecfg.learn_candidates = true;
  ecfg.deterministic_reduction = cfg.deterministic_reduction;
  ecfg.dead_atom_floor = cfg.dead_atom_floor;
  ecfg.block_size = cfg.block_size;

  for (int t = 1; t <= iterations; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const SignalBatch& batch = source.batch(t);
    ecfg.sparsity = std::clamp(sparsity.S_e, 1, static_cast<int>(std::min(d, dico.size())));
    CounterRng rng(cfg.seed, stream_for(streams::kCandidates, static_cast<std::uint64_t>(t)));
    const CandidateSet cands = CandidateSet::random(d, cfg.candidate_count, rng);
    IterationOutput out = run_iteration(dico, batch, ecfg, cands, rng);
    history.push(out.atom_scores);

    IterationRecord rec;
    rec.iter = t;
    rec.S_e = ecfg.sparsity;
    rec.S_bar = out.S_bar;
    rec.S_bar_raw = out.S_bar_raw;
    rec.S_t = out.S_t;

    PruneResult pc = prune_coherent(out.dictionary, history, cfg.mu_max);
    rec.merges = pc.count;
    dico = std::move(pc.dictionary);
    history = std::move(pc.history);

    if (t >= cfg.start_prune) {
      PruneResult pu = prune_unused(dico, history, cfg.min_observations, cfg.max_prune, t, cfg.undercomplete_guard);
      rec.pruned_unused = pu.count;
      dico = std::move(pu.dictionary);
      history = std::move(pu.history);
    }
    if (t >= cfg.start_adapt && t <= iterations - cfg.freeze_add_tail) {
      AddResult ad = add_atoms(dico, history, out.candidates, cfg.mu_max, cfg.add_threshold, M_init, t);
      rec.added = ad.count;
      dico = std::move(ad.dictionary);
      history = std::move(ad.history);
    }
    if (t >= cfg.start_adapt) sparsity = update_sparsity(sparsity, out.S_bar, d, dico.size());
    sparsity.S_t = out.S_t;

    rec.K = dico.size();
    fill_recovery_metrics(rec, source.generating(), dico, cfg.recovery_threshold);
    rec.wallclock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    traj.records.push_back(rec);
    if (on_iteration) on_iteration(rec);
  }
  traj.final_dictionary = dico;
  traj.final_S_e = sparsity.S_e;
  traj.final_scores.resize(static_cast<std::size_t>(history.size()));
  for (Index k = 0; k < history.size(); ++k) traj.final_scores[static_cast<std::size_t>(k)] = history.recent(k);
  return traj;
}

/// Sparsity level after a run: the value the next iteration would use.
inline int final_sparsity(const Trajectory& traj) {
  if (traj.final_S_e > 0) return traj.final_S_e;
  return traj.records.empty() ? 1 : traj.records.back().S_e;
}

}  // namespace itkrm

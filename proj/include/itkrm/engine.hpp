#pragma once

// Iterative thresholding and K residual means: one iteration over a batch
// (plain, or augmented with value counters, candidate learning and the
// recoverable-sparsity estimate) and the fixed-size learning loop.

#include "itkrm/candidates.hpp"
#include "itkrm/linalg.hpp"
#include "itkrm/parallel.hpp"
#include "itkrm/rng.hpp"
#include "itkrm/signals.hpp"
#include "itkrm/trajectory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

namespace itkrm {

struct EngineConfig {
  int sparsity = 1;  // S_e
  Variant variant = Variant::plain;
  int candidate_subbatches = 1;   // m
  double min_observations = 1.0;  // M, adaptive counter only
  bool learn_candidates = true;   // false: candidates pass through untouched
  bool deterministic_reduction = true;
  double dead_atom_floor = 1e-3;
  Index block_size = 256;
};

/// Thresholds of the value counters for one batch. Natural logarithms.
struct CounterConfig {
  Variant variant = Variant::plain;
  Index batch_size = 1;           // N
  double min_observations = 1.0;  // M
  Index dictionary_size = 1;      // K
  Index dim = 1;                  // d

  /// An atom scores iff |x(k)|^2 >= tau. Zero for plain/replacement.
  double atom_tau(double residual_sq, double approx_sq) const {
    if (variant != Variant::adaptive) return 0.0;
    const double log_term = std::log(2.0 * static_cast<double>(batch_size) / min_observations);
    return (2.0 * log_term * residual_sq + approx_sq) / static_cast<double>(dim);
  }

  /// Noise floor for the recoverable sparsity count.
  double sparsity_theta(double residual_sq, double approx_sq) const {
    const double log_term = std::log(4.0 * static_cast<double>(dictionary_size));
    return (2.0 * log_term * residual_sq + approx_sq) / static_cast<double>(dim);
  }
};

/// Indices of the S largest |<psi_k, y>| given the inner products; ties go
/// to the lower index. Returned sorted ascending.
inline Support top_s_support(const Eigen::Ref<const Vector>& ip, int S, std::vector<Index>& scratch) {
  const Index K = ip.size();
  if (S < 1 || S > K) throw std::invalid_argument("sparsity must lie in [1, K]");
  scratch.resize(static_cast<std::size_t>(K));
  std::iota(scratch.begin(), scratch.end(), Index{0});
  auto better = [&](Index a, Index b) {
    const double fa = std::abs(ip(a)), fb = std::abs(ip(b));
    return fa > fb || (fa == fb && a < b);
  };
  std::nth_element(scratch.begin(), scratch.begin() + (S - 1), scratch.end(), better);
  Support s(scratch.begin(), scratch.begin() + S);
  std::sort(s.begin(), s.end());
  return s;
}

/// Thresholding: argmax over |I| = S of ||Psi_I^* y||_1.
inline Support threshold_support(const Dictionary& dico, const Vector& y, int S) {
  if (y.size() != dico.dim()) throw std::invalid_argument("signal length does not match dictionary");
  std::vector<Index> scratch;
  const Vector ip = dico.atoms().transpose() * y;
  return top_s_support(ip, S, scratch);
}

namespace detail {

struct SignalWork {
  std::vector<Index> scratch;
  Support support;
  Matrix sub_g;
  Vector b, x, proj, a, residual_ip;
};

/// Thresholding, coefficients via the sub-Gram and the residual.
inline void sparse_code(const Dictionary& dico, const Matrix& g, const Eigen::Ref<const Vector>& y,
                        const Eigen::Ref<const Vector>& ip, int S, SignalWork& w) {
  w.support = top_s_support(ip, S, w.scratch);
  const auto s = static_cast<Index>(w.support.size());
  w.sub_g.resize(s, s);
  w.b.resize(s);
  for (Index i = 0; i < s; ++i) {
    w.b(i) = ip(w.support[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < s; ++j)
      w.sub_g(i, j) = g(w.support[static_cast<std::size_t>(i)], w.support[static_cast<std::size_t>(j)]);
  }
  w.x = pinv_solve_sym(w.sub_g, w.b);
  w.proj.setZero(dico.dim());
  for (Index i = 0; i < s; ++i) w.proj.noalias() += w.x(i) * dico.atom(w.support[static_cast<std::size_t>(i)]);
  w.a = y - w.proj;
}

/// <psi_k, a> for all k without touching the d x K dictionary again:
/// Psi^* a = Psi^* y - G_{:,I} x.
inline void residual_inner_products(const Matrix& g, const Eigen::Ref<const Vector>& ip, SignalWork& w) {
  w.residual_ip = ip;
  for (std::size_t i = 0; i < w.support.size(); ++i)
    w.residual_ip.noalias() -= w.x(static_cast<Index>(i)) * g.col(w.support[i]);
}

struct Accumulators {
  Matrix atoms;
  std::vector<std::int64_t> scores;
  Matrix cand;
  std::vector<std::int64_t> cand_scores;
  std::int64_t sparsity_hits = 0;
  std::int64_t coefficient_hits = 0;
  std::int64_t residual_hits = 0;

  Accumulators(Index d, Index K, Index L)
      : atoms(Matrix::Zero(d, K)),
        scores(static_cast<std::size_t>(K), 0),
        cand(Matrix::Zero(d, L)),
        cand_scores(static_cast<std::size_t>(L), 0) {}

  void add(const Accumulators& o) {
    atoms += o.atoms;
    cand += o.cand;
    for (std::size_t k = 0; k < scores.size(); ++k) scores[k] += o.scores[k];
    for (std::size_t l = 0; l < cand_scores.size(); ++l) cand_scores[l] += o.cand_scores[l];
    sparsity_hits += o.sparsity_hits;
    coefficient_hits += o.coefficient_hits;
    residual_hits += o.residual_hits;
  }
};

struct SignalHits {
  int coefficient = 0;
  int residual = 0;
};

/// Everything one signal contributes to the iteration.
inline SignalHits process_signal(const Dictionary& dico, const Matrix& g, const Eigen::Ref<const Vector>& y,
                                 const Eigen::Ref<const Vector>& ip, int S, const CounterConfig& counters,
                                 const Matrix* cand_atoms, double tau_gamma, SignalWork& w, Accumulators& acc) {
  SignalHits hits;
  if (!(y.squaredNorm() > 0.0)) return hits;
  sparse_code(dico, g, y, ip, S, w);
  const double a2 = w.a.squaredNorm();
  const double p2 = w.proj.squaredNorm();
  const double tau = counters.atom_tau(a2, p2);
  for (std::size_t i = 0; i < w.support.size(); ++i) {
    const Index k = w.support[i];
    acc.atoms.col(k).noalias() += sign_of(ip(k)) * w.a + std::abs(ip(k)) * dico.atom(k);
    const double xk = w.x(static_cast<Index>(i));
    if (xk * xk >= tau) ++acc.scores[static_cast<std::size_t>(k)];
  }
  if (cand_atoms != nullptr) accumulate_candidate(*cand_atoms, w.a, a2, tau_gamma, acc.cand, acc.cand_scores.data());
  if (counters.variant == Variant::adaptive) {
    const double theta = counters.sparsity_theta(a2, p2);
    for (Index i = 0; i < w.x.size(); ++i)
      if (w.x(i) * w.x(i) >= theta) ++hits.coefficient;
    residual_inner_products(g, ip, w);
    for (Index k = 0; k < w.residual_ip.size(); ++k)
      if (w.residual_ip(k) * w.residual_ip(k) >= theta) ++hits.residual;
    acc.coefficient_hits += hits.coefficient;
    acc.residual_hits += hits.residual;
    acc.sparsity_hits += hits.coefficient + hits.residual;
  }
  return hits;
}

}  // namespace detail

/// Per-signal contribution, exposed for inspection and tests; run_iteration
/// uses the same code path.
struct SignalContribution {
  Support selected;
  Vector coeffs;     // Psi_I^+ y
  Vector residual;   // y - P(Psi_I) y
  Matrix atom_increments;  // d x S, [a + P(psi_k) y] sign(<psi_k, y>) per selected k
  std::vector<bool> score_hits;  // aligned with `selected`
  int coefficient_hits = 0;
  int residual_hits = 0;
  int sparsity_hits = 0;
};

inline SignalContribution signal_update(const Dictionary& dico, const Vector& y, int S, const CounterConfig& counters) {
  if (y.size() != dico.dim()) throw std::invalid_argument("signal length does not match dictionary");
  const Matrix g = gram(dico);
  const Vector ip = dico.atoms().transpose() * y;
  detail::SignalWork w;
  detail::Accumulators acc(dico.dim(), dico.size(), 0);
  const detail::SignalHits hits = detail::process_signal(dico, g, y, ip, S, counters, nullptr, 0.0, w, acc);
  SignalContribution c;
  if (!(y.squaredNorm() > 0.0)) return c;
  c.selected = w.support;
  c.coeffs = w.x;
  c.residual = w.a;
  c.atom_increments.resize(dico.dim(), static_cast<Index>(w.support.size()));
  for (std::size_t i = 0; i < w.support.size(); ++i) {
    const Index k = w.support[i];
    c.atom_increments.col(static_cast<Index>(i)) = acc.atoms.col(k);
    c.score_hits.push_back(acc.scores[static_cast<std::size_t>(k)] > 0);
  }
  c.coefficient_hits = hits.coefficient;
  c.residual_hits = hits.residual;
  c.sparsity_hits = hits.coefficient + hits.residual;
  return c;
}

/// Residual computed with the generating support and signs:
/// [y - P(Psi_I) y + P(psi_k) y] sigma(k).
inline Vector oracle_residual(const Dictionary& dico, const Vector& y, const SignalTruth& truth, Index k) {
  const auto it = std::find(truth.support.begin(), truth.support.end(), k);
  if (it == truth.support.end()) throw std::invalid_argument("oracle residual: atom not in the true support");
  const double sigma = sign_of(truth.coeffs[static_cast<std::size_t>(it - truth.support.begin())]);
  const Projection p = project_onto_span(dico, truth.support, y);
  const Vector psi = dico.atom(k);
  return (y - p.projection + psi.dot(y) * psi) * sigma;
}

struct IterationOutput {
  Dictionary dictionary;
  Vector raw_norms;
  std::vector<std::int64_t> atom_scores;
  std::vector<bool> dead;
  CandidateSet candidates;
  std::int64_t sparsity_accumulator = 0;
  int S_bar = 0;          // round(accumulator / N)
  double S_bar_raw = 0.0;
  double S_t = 0.0;       // mean coefficient hits per signal
  double residual_hits_mean = 0.0;
  Index signals_used = 0;
};

/// One pass over the batch. `candidates` should hold L unit atoms (may be
/// empty); `rng` only redraws candidates that never won a residual.
inline IterationOutput run_iteration(const Dictionary& dico, const SignalBatch& batch, const EngineConfig& cfg,
                                     const CandidateSet& candidates, CounterRng& rng) {
  const Index d = dico.dim();
  const Index K = dico.size();
  const Index N = batch.count();
  if (batch.dim() != d) throw std::invalid_argument("batch dimension does not match dictionary");
  if (N < 1) throw std::invalid_argument("empty batch");
  if (cfg.sparsity < 1 || cfg.sparsity > std::min(d, K)) throw std::invalid_argument("sparsity must lie in [1, min(d, K)]");
  if (cfg.candidate_subbatches < 1) throw std::invalid_argument("candidate_subbatches must be >= 1");
  if (cfg.variant == Variant::adaptive && !(cfg.min_observations > 0.0))
    throw std::invalid_argument("adaptive counter needs min_observations > 0");

  const Matrix g = gram(dico);
  const CounterConfig counters{cfg.variant, N, cfg.min_observations, K, d};
  const bool learn = cfg.variant != Variant::plain && cfg.learn_candidates && !candidates.empty();
  const int m = cfg.candidate_subbatches;
  const Index n_gamma = N / m;
  const double tau_gamma = candidate_threshold(cfg.variant, K, d, n_gamma);

  CandidateSet cands = candidates;
  const Index L = learn ? cands.size() : 0;
  cands.subbatch_size = n_gamma;
  cands.subbatch_index = 0;
  cands.accumulator = Matrix::Zero(d, cands.size());
  if (learn) std::fill(cands.scores.begin(), cands.scores.end(), 0);

  detail::Accumulators total(d, K, L);

  // Segment boundaries where candidates are renormalized.
  std::vector<Index> bounds{0};
  if (learn && n_gamma > 0)
    for (int j = 1; j < m; ++j) bounds.push_back(j * n_gamma);
  bounds.push_back(N);

  const Index block = std::max<Index>(1, cfg.block_size);
  for (std::size_t seg = 0; seg + 1 < bounds.size(); ++seg) {
    const Index lo = bounds[seg], hi = bounds[seg + 1];
    const Matrix* cand_atoms = learn ? &cands.atoms : nullptr;
    auto run_range = [&](Index from, Index to, detail::Accumulators& acc) {
      detail::SignalWork w;
      for (Index b0 = from; b0 < to; b0 += block) {
        const Index len = std::min(block, to - b0);
        const Matrix ip = dico.atoms().transpose() * batch.signals.middleCols(b0, len);
        for (Index j = 0; j < len; ++j)
          detail::process_signal(dico, g, batch.signals.col(b0 + j), ip.col(j), cfg.sparsity, counters, cand_atoms,
                                 tau_gamma, w, acc);
      }
    };
    if (hi > lo) {
      std::vector<detail::Accumulators> parts;
      if (cfg.deterministic_reduction) {
        // Fixed blocks combined by a tree whose shape depends only on N.
        const auto nblocks = static_cast<std::size_t>((hi - lo + block - 1) / block);
        parts.assign(nblocks, detail::Accumulators(d, K, L));
        parallel_for(nblocks, [&](std::size_t b) {
          const Index from = lo + static_cast<Index>(b) * block;
          run_range(from, std::min(hi, from + block), parts[b]);
        });
      } else {
        const auto workers = static_cast<std::size_t>(std::max(1u, worker_count()));
        const Index chunk = (hi - lo + static_cast<Index>(workers) - 1) / static_cast<Index>(workers);
        parts.assign(workers, detail::Accumulators(d, K, L));
        parallel_for(workers, [&](std::size_t p) {
          const Index from = lo + static_cast<Index>(p) * chunk;
          if (from < hi) run_range(from, std::min(hi, from + chunk), parts[p]);
        });
      }
      tree_reduce(parts, [](detail::Accumulators& a, const detail::Accumulators& b) { a.add(b); });
      if (learn) {
        cands.accumulator += parts[0].cand;
        for (Index l = 0; l < L; ++l) cands.scores[static_cast<std::size_t>(l)] += parts[0].cand_scores[static_cast<std::size_t>(l)];
        parts[0].cand.setZero();
        std::fill(parts[0].cand_scores.begin(), parts[0].cand_scores.end(), 0);
      }
      total.add(parts[0]);
    }
    if (learn && seg + 2 < bounds.size())
      finish_candidate_subbatch(cands, cfg.variant == Variant::adaptive, rng);
  }

  IterationOutput out;
  out.raw_norms.resize(K);
  out.dead.assign(static_cast<std::size_t>(K), false);
  out.atom_scores = total.scores;
  Matrix next(d, K);
  for (Index k = 0; k < K; ++k) {
    const double n = total.atoms.col(k).norm();
    out.raw_norms(k) = n;
    if (n < cfg.dead_atom_floor || !std::isfinite(n)) {
      next.col(k) = dico.atom(k);
      out.atom_scores[static_cast<std::size_t>(k)] = 0;
      out.dead[static_cast<std::size_t>(k)] = true;
    } else {
      next.col(k) = total.atoms.col(k) / n;
    }
  }
  out.dictionary = Dictionary::normalized(std::move(next));
  cands.accumulator = Matrix::Zero(d, cands.size());
  out.candidates = std::move(cands);
  out.signals_used = N;
  out.sparsity_accumulator = total.sparsity_hits;
  out.S_bar_raw = static_cast<double>(total.sparsity_hits) / static_cast<double>(N);
  out.S_bar = static_cast<int>(std::lround(out.S_bar_raw));
  out.S_t = static_cast<double>(total.coefficient_hits) / static_cast<double>(N);
  out.residual_hits_mean = static_cast<double>(total.residual_hits) / static_cast<double>(N);
  return out;
}

// ---------------------------------------------------------------------------
// Signal sources and the fixed-size learning loop

class SignalSource {
 public:
  virtual ~SignalSource() = default;
  /// Training batch for iteration `iteration` (1-based).
  virtual const SignalBatch& batch(int iteration) = 0;
  /// Generating dictionary when known, for recovery metrics.
  virtual const Dictionary* generating() const { return nullptr; }
};

/// Fresh synthetic signals every iteration, keyed by the iteration number.
class SyntheticSource : public SignalSource {
 public:
  SyntheticSource(SignalModel model, Index batch_size) : model_(std::move(model)), n_(batch_size) {}
  const SignalBatch& batch(int iteration) override {
    current_ = generate_batch(model_, n_, static_cast<std::uint64_t>(iteration));
    return current_;
  }
  const Dictionary* generating() const override { return &model_.dictionary; }
  const SignalModel& model() const { return model_; }

 private:
  SignalModel model_;
  Index n_;
  SignalBatch current_;
};

/// The same corpus every iteration (image patches).
class FixedSource : public SignalSource {
 public:
  explicit FixedSource(SignalBatch batch) : batch_(std::move(batch)) {}
  const SignalBatch& batch(int) override { return batch_; }

 private:
  SignalBatch batch_;
};

enum class ReplacementStrategy { none, random, candidate };

struct LearnConfig {
  EngineConfig engine;
  ReplacementStrategy replacement = ReplacementStrategy::none;
  ReplacementPolicy policy;
  Index candidate_count = 0;  // L
  std::uint64_t seed = 0;     // candidate draws
  double recovery_threshold = 0.99;
  bool keep_dictionaries = false;
  std::function<void(const IterationRecord&)> on_iteration;
};

/// Fixed-size learning: plain iterations, optionally followed by coherent
/// and unused atom replacement from learned (or random) candidates.
inline Trajectory run_learning(const Dictionary& initial, SignalSource& source, const LearnConfig& cfg, int iterations) {
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  Trajectory traj;
  traj.final_dictionary = initial;
  if (cfg.keep_dictionaries) traj.dictionaries.push_back(initial);
  EngineConfig ecfg = cfg.engine;
  ecfg.variant = cfg.replacement == ReplacementStrategy::none ? Variant::plain : Variant::replacement;
  ecfg.learn_candidates = cfg.replacement == ReplacementStrategy::candidate;
  const Index L = cfg.replacement == ReplacementStrategy::none ? 0 : cfg.candidate_count;

  Dictionary dico = initial;
  for (int t = 1; t <= iterations; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const SignalBatch& batch = source.batch(t);
    CounterRng rng(cfg.seed, stream_for(streams::kCandidates, static_cast<std::uint64_t>(t)));
    const CandidateSet cands = CandidateSet::random(dico.dim(), L, rng);
    IterationOutput out = run_iteration(dico, batch, ecfg, cands, rng);

    IterationRecord rec;
    rec.iter = t;
    Dictionary next = std::move(out.dictionary);
    std::vector<std::int64_t> scores = std::move(out.atom_scores);
    if (cfg.replacement != ReplacementStrategy::none) {
      ReplacementResult rc = replace_coherent(next, scores, out.candidates, cfg.policy, t);
      ReplacementResult ru = replace_unused(rc.dictionary, rc.scores, rc.candidates, cfg.policy, out.dead, t);
      rec.replaced = rc.replaced + ru.replaced;
      traj.events.insert(traj.events.end(), rc.events.begin(), rc.events.end());
      traj.events.insert(traj.events.end(), ru.events.begin(), ru.events.end());
      next = std::move(ru.dictionary);
      scores = std::move(ru.scores);
    }
    rec.max_atom_movement = max_atom_movement(dico, next);
    dico = std::move(next);
    rec.K = dico.size();
    rec.S_e = ecfg.sparsity;
    fill_recovery_metrics(rec, source.generating(), dico, cfg.recovery_threshold);
    rec.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    traj.records.push_back(rec);
    traj.final_scores = std::move(scores);
    if (cfg.keep_dictionaries) traj.dictionaries.push_back(dico);
    if (cfg.on_iteration) cfg.on_iteration(rec);
  }
  traj.final_dictionary = dico;
  return traj;
}

}  // namespace itkrm

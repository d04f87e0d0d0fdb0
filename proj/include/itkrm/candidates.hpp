#pragma once

// Replacement candidates learned from residuals (one-sparse residual means)
// and the coherent/unused atom replacement that consumes them.

#include "itkrm/linalg.hpp"
#include "itkrm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace itkrm {

/// Which flavour of the augmented iteration is running; it selects the
/// counter thresholds.
enum class Variant { plain, replacement, adaptive };

struct CandidateSet {
  Matrix atoms;                  // d x L, unit columns
  std::vector<std::int64_t> scores;
  Matrix accumulator;            // d x L raw sums
  Index subbatch_size = 0;       // N_Gamma
  int subbatch_index = 0;

  Index size() const { return atoms.cols(); }
  bool empty() const { return atoms.cols() == 0; }

  static CandidateSet random(Index d, Index L, CounterRng& rng) {
    CandidateSet c;
    c.atoms.resize(d, L);
    for (Index l = 0; l < L; ++l) c.atoms.col(l) = rng.unit_vector(d);
    c.scores.assign(static_cast<std::size_t>(L), 0);
    c.accumulator = Matrix::Zero(d, L);
    return c;
  }

  void remove(Index l) {
    const Index L = atoms.cols();
    for (Index j = l; j + 1 < L; ++j) {
      atoms.col(j) = atoms.col(j + 1);
      if (accumulator.cols() == L) accumulator.col(j) = accumulator.col(j + 1);
    }
    atoms.conservativeResize(atoms.rows(), L - 1);
    if (accumulator.cols() == L) accumulator.conservativeResize(accumulator.rows(), L - 1);
    scores.erase(scores.begin() + l);
  }
};

/// tau_Gamma, relative to ||a||^2. Replacement: 2 log(2K)/d; adaptive:
/// 2 log(2 N_Gamma / d)/d, floored at zero.
inline double candidate_threshold(Variant variant, Index K, Index d, Index subbatch_size) {
  const double dd = static_cast<double>(d);
  if (variant == Variant::adaptive)
    return std::max(0.0, 2.0 * std::log(2.0 * static_cast<double>(subbatch_size) / dd) / dd);
  return 2.0 * std::log(2.0 * static_cast<double>(K)) / dd;
}

/// One residual attributed to its best-matching candidate. Writes into the
/// given accumulator and score slots so block-parallel callers can keep
/// private copies. Returns the winning index, or -1 for a zero residual.
inline Index accumulate_candidate(const Matrix& atoms, const Vector& residual, double residual_sq,
                                  double tau_gamma, Matrix& accumulator, std::int64_t* scores) {
  if (atoms.cols() == 0 || !(residual_sq > 0.0)) return -1;
  const Vector ips = atoms.transpose() * residual;
  Index best = 0;
  for (Index l = 1; l < ips.size(); ++l)
    if (std::abs(ips(l)) > std::abs(ips(best))) best = l;
  accumulator.col(best) += sign_of(ips(best)) * residual;
  if (ips(best) * ips(best) >= tau_gamma * residual_sq) ++scores[best];
  return best;
}

inline void candidate_signal_update(CandidateSet& cands, const Vector& residual, double tau_gamma) {
  if (cands.accumulator.cols() != cands.size()) cands.accumulator = Matrix::Zero(cands.atoms.rows(), cands.size());
  accumulate_candidate(cands.atoms, residual, residual.squaredNorm(), tau_gamma, cands.accumulator,
                       cands.scores.data());
}

/// Sub-batch boundary: accumulated sums become the new candidates and the
/// sums restart. Candidates that never won a residual are redrawn.
inline void finish_candidate_subbatch(CandidateSet& cands, bool reset_scores, CounterRng& rng) {
  for (Index l = 0; l < cands.size(); ++l) {
    const double n = cands.accumulator.col(l).norm();
    cands.atoms.col(l) = n > 0.0 ? Vector(cands.accumulator.col(l) / n) : rng.unit_vector(cands.atoms.rows());
  }
  cands.accumulator.setZero();
  if (reset_scores) std::fill(cands.scores.begin(), cands.scores.end(), 0);
  ++cands.subbatch_index;
}

enum class CombineMode { del, merge, add };

struct ReplacementPolicy {
  double mu_max = 0.7;
  CombineMode combine = CombineMode::merge;
};

struct ReplacementEvent {
  int iteration = 0;
  std::string kind;  // "coherent" or "unused"
  Index first = -1;
  Index second = -1;
  double score_first = 0.0;
  double score_second = 0.0;
};

struct ReplacementResult {
  Dictionary dictionary;
  std::vector<std::int64_t> scores;
  CandidateSet candidates;
  int replaced = 0;
  std::vector<ReplacementEvent> events;
};

namespace detail {

inline std::vector<Index> order_by_score(const std::vector<std::int64_t>& scores) {
  std::vector<Index> order(scores.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return scores[a] > scores[b]; });
  return order;
}

inline void reorder_candidates(CandidateSet& c) {
  const auto order = order_by_score(c.scores);
  CandidateSet out;
  out.atoms.resize(c.atoms.rows(), c.size());
  out.scores.resize(c.scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.atoms.col(static_cast<Index>(i)) = c.atoms.col(order[i]);
    out.scores[i] = c.scores[static_cast<std::size_t>(order[i])];
  }
  out.subbatch_size = c.subbatch_size;
  out.subbatch_index = c.subbatch_index;
  c = std::move(out);
}

inline Vector combine_pair(const Dictionary& dico, Index k, Index kp, double h, double vk, double vkp,
                           CombineMode mode) {
  const Vector psi_k = dico.atom(k);
  const Vector psi_kp = dico.atom(kp);
  Vector merged;
  switch (mode) {
    case CombineMode::del:
      // Keep the strictly more used atom; ties keep k.
      merged = vkp > vk ? psi_kp : Vector(h * psi_k);
      break;
    case CombineMode::merge:
      merged = vkp * psi_kp + h * vk * psi_k;
      break;
    case CombineMode::add:
      merged = psi_kp + h * psi_k;
      break;
  }
  if (!(merged.norm() > 1e-12)) merged = psi_kp + h * psi_k;
  if (!(merged.norm() > 1e-12)) merged = psi_k;
  return merged.normalized();
}

}  // namespace detail

/// Coherent-atom replacement: while the most coherent pair exceeds mu_max
/// and candidates remain, merge the pair into slot k and put the most
/// valuable surviving candidate into slot k'.
inline ReplacementResult replace_coherent(const Dictionary& dico, const std::vector<std::int64_t>& scores,
                                          const CandidateSet& cands, const ReplacementPolicy& policy,
                                          int iteration = 0) {
  ReplacementResult r{dico, scores, cands, 0, {}};
  if (dico.size() < 2) return r;
  detail::reorder_candidates(r.candidates);
  Matrix g = gram(r.dictionary);
  CoherentPair pair = most_coherent_pair(g);
  while (pair.value > policy.mu_max && !r.candidates.empty()) {
    const Index k = pair.first;
    const Index kp = pair.second;
    const double h = sign_of(g(k, kp));
    const auto vk = static_cast<double>(r.scores[static_cast<std::size_t>(k)]);
    const auto vkp = static_cast<double>(r.scores[static_cast<std::size_t>(kp)]);
    const Vector merged = detail::combine_pair(r.dictionary, k, kp, h, vk, vkp, policy.combine);

    // Discard candidates more coherent with the rest of the dictionary than the pair itself.
    const Matrix cg = r.candidates.atoms.transpose() * r.dictionary.atoms();
    std::vector<double> mu(static_cast<std::size_t>(r.candidates.size()), 0.0);
    for (Index l = 0; l < cg.rows(); ++l)
      for (Index i = 0; i < cg.cols(); ++i)
        if (i != k && i != kp) mu[static_cast<std::size_t>(l)] = std::max(mu[static_cast<std::size_t>(l)], std::abs(cg(l, i)));
    for (Index l = r.candidates.size() - 1; l >= 0; --l) {
      if (mu[static_cast<std::size_t>(l)] > pair.value) {
        r.candidates.remove(l);
        mu.erase(mu.begin() + l);
      }
    }

    if (!r.candidates.empty()) {
      r.events.push_back({iteration, "coherent", k, kp, vk, vkp});
      r.dictionary.set_atom(k, merged);
      r.scores[static_cast<std::size_t>(k)] += r.scores[static_cast<std::size_t>(kp)];
      r.dictionary.set_atom(kp, r.candidates.atoms.col(0));
      r.scores[static_cast<std::size_t>(kp)] = mu[0] < policy.mu_max ? r.candidates.scores[0] : 0;
      r.candidates.remove(0);
      ++r.replaced;
      const Matrix& a = r.dictionary.atoms();
      const Vector rk = a.transpose() * a.col(k);
      const Vector rkp = a.transpose() * a.col(kp);
      g.row(k) = rk.transpose();
      g.col(k) = rk;
      g.row(kp) = rkp.transpose();
      g.col(kp) = rkp;
    }
    pair = most_coherent_pair(g);
  }
  return r;
}

/// Unused atoms (score 0 or flagged dead) receive leftover candidates that
/// pass the coherence test, best candidate first. The installed atom keeps
/// score 0. Without suitable candidates the atom stays as it is.
inline ReplacementResult replace_unused(const Dictionary& dico, const std::vector<std::int64_t>& scores,
                                        const CandidateSet& cands, const ReplacementPolicy& policy,
                                        const std::vector<bool>& dead = {}, int iteration = 0) {
  ReplacementResult r{dico, scores, cands, 0, {}};
  detail::reorder_candidates(r.candidates);
  for (Index k = 0; k < r.dictionary.size() && !r.candidates.empty(); ++k) {
    const bool is_dead = static_cast<std::size_t>(k) < dead.size() && dead[static_cast<std::size_t>(k)];
    if (r.scores[static_cast<std::size_t>(k)] != 0 && !is_dead) continue;
    while (!r.candidates.empty()) {
      const Vector gamma = r.candidates.atoms.col(0);
      double mu = 0.0;
      for (Index i = 0; i < r.dictionary.size(); ++i)
        if (i != k) mu = std::max(mu, std::abs(r.dictionary.atom(i).dot(gamma)));
      const double cand_score = static_cast<double>(r.candidates.scores[0]);
      r.candidates.remove(0);
      if (mu < policy.mu_max) {
        r.events.push_back({iteration, "unused", k, -1, static_cast<double>(r.scores[static_cast<std::size_t>(k)]),
                            cand_score});
        r.dictionary.set_atom(k, gamma);
        r.scores[static_cast<std::size_t>(k)] = 0;
        ++r.replaced;
        break;
      }
    }
  }
  return r;
}

}  // namespace itkrm

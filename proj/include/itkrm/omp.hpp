#pragma once

// Orthogonal Matching Pursuit and approximation-quality metrics.

#include "itkrm/linalg.hpp"
#include "itkrm/parallel.hpp"
#include "itkrm/signals.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace itkrm {

struct OmpResult {
  Support support;  // selection order
  Vector coefficients;  // aligned with support
  Vector residual;
  std::vector<Vector> step_residuals;  // residual after step s is step_residuals[s - 1]
};

inline constexpr double kOmpRelativeStop = 1e-12;

namespace detail {

/// OMP on precomputed inner products; `forced` atoms are selected first.
inline OmpResult omp_with_gram(const Matrix& atoms, const Matrix& g, const Vector& y, int S,
                               const std::vector<Index>& forced = {}) {
  const Index K = atoms.cols();
  OmpResult r;
  r.residual = y;
  r.coefficients = Vector();
  const double ynorm = y.norm();
  if (!(ynorm > 0.0)) return r;
  const Vector ip_y = atoms.transpose() * y;
  std::vector<bool> taken(static_cast<std::size_t>(K), false);
  for (int step = 0; step < S; ++step) {
    if (r.residual.norm() < kOmpRelativeStop * ynorm) break;
    Index best = -1;
    if (static_cast<std::size_t>(step) < forced.size()) {
      best = forced[static_cast<std::size_t>(step)];
    } else {
      const Vector ip = atoms.transpose() * r.residual;
      double best_val = -1.0;
      for (Index k = 0; k < K; ++k) {
        if (taken[static_cast<std::size_t>(k)]) continue;
        const double v = std::abs(ip(k));
        if (v > best_val) {
          best_val = v;
          best = k;
        }
      }
    }
    if (best < 0) break;
    taken[static_cast<std::size_t>(best)] = true;
    r.support.push_back(best);
    const auto s = static_cast<Index>(r.support.size());
    Matrix sub(s, s);
    Vector b(s);
    for (Index i = 0; i < s; ++i) {
      b(i) = ip_y(r.support[static_cast<std::size_t>(i)]);
      for (Index j = 0; j < s; ++j) sub(i, j) = g(r.support[static_cast<std::size_t>(i)], r.support[static_cast<std::size_t>(j)]);
    }
    r.coefficients = pinv_solve_sym(sub, b);
    Vector approx = Vector::Zero(y.size());
    for (Index i = 0; i < s; ++i) approx.noalias() += r.coefficients(i) * atoms.col(r.support[static_cast<std::size_t>(i)]);
    r.residual = y - approx;
    r.step_residuals.push_back(r.residual);
  }
  return r;
}

}  // namespace detail

/// Greedy selection of argmax |<psi_k, residual>| (ties: lowest index) with
/// re-projection after every step; stops after S steps or once the residual
/// falls below 1e-12 ||y||.
inline OmpResult omp(const Dictionary& dico, const Vector& y, int S) {
  if (y.size() != dico.dim()) throw std::invalid_argument("signal length does not match dictionary");
  if (S < 0 || S > std::min(dico.dim(), dico.size())) throw std::invalid_argument("OMP sparsity must lie in [0, min(d, K)]");
  return detail::omp_with_gram(dico.atoms(), gram(dico), y, S);
}

struct ApproxReport {
  std::vector<int> sparsity;
  std::vector<double> relative_error;  // ||Y_ref - Y~||_F^2 / ||Y_ref||_F^2
  bool degenerate = false;             // reference has zero energy
};

struct ApproxOptions {
  bool augment_flat = false;  // prepend the constant atom 1/sqrt(d)
  bool force_flat = false;    // always select it first, on top of S atoms
};

/// Approximates `batch` by OMP for every S in `s_range` and measures the
/// error against `reference` (defaults to the batch itself).
inline ApproxReport approximation_power(const Dictionary& dico, const SignalBatch& batch, const std::vector<int>& s_range,
                                        const ApproxOptions& opts = {}, const SignalBatch* reference = nullptr) {
  const SignalBatch& ref = reference != nullptr ? *reference : batch;
  if (batch.dim() != dico.dim() || ref.dim() != dico.dim()) throw std::invalid_argument("batch dimension does not match dictionary");
  if (ref.count() != batch.count()) throw std::invalid_argument("reference batch size does not match");
  const Index d = dico.dim();
  Matrix atoms = dico.atoms();
  std::vector<Index> forced;
  if (opts.augment_flat) {
    Matrix aug(d, atoms.cols() + 1);
    aug.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(d)));
    aug.rightCols(atoms.cols()) = atoms;
    atoms = std::move(aug);
    if (opts.force_flat) forced.push_back(0);
  }
  int s_max = 0;
  for (int s : s_range) {
    if (s < 0) throw std::invalid_argument("sparsity values must be >= 0");
    s_max = std::max(s_max, s);
  }
  const int steps = s_max + static_cast<int>(forced.size());
  if (steps > std::min(d, atoms.cols())) throw std::invalid_argument("sparsity exceeds min(d, K)");
  const Matrix g = atoms.transpose() * atoms;

  const Index N = batch.count();
  const Index block = 512;
  const auto nblocks = static_cast<std::size_t>((N + block - 1) / block);
  std::vector<std::vector<double>> parts(nblocks, std::vector<double>(s_range.size(), 0.0));
  parallel_for(nblocks, [&](std::size_t b) {
    const Index lo = static_cast<Index>(b) * block, hi = std::min(N, lo + block);
    for (Index n = lo; n < hi; ++n) {
      const Vector y = batch.signals.col(n);
      const OmpResult r = detail::omp_with_gram(atoms, g, y, steps, forced);
      for (std::size_t i = 0; i < s_range.size(); ++i) {
        const int s = s_range[i] + static_cast<int>(forced.size());
        Vector approx;
        if (s == 0 || r.step_residuals.empty()) approx = Vector::Zero(d);
        else approx = y - r.step_residuals[static_cast<std::size_t>(std::min<int>(s, static_cast<int>(r.step_residuals.size())) - 1)];
        parts[b][i] += (ref.signals.col(n) - approx).squaredNorm();
      }
    }
  });
  tree_reduce(parts, [](std::vector<double>& a, const std::vector<double>& o) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += o[i];
  });

  ApproxReport rep;
  rep.sparsity = s_range;
  const double energy = ref.signals.squaredNorm();
  rep.degenerate = !(energy > 0.0);
  for (std::size_t i = 0; i < s_range.size(); ++i)
    rep.relative_error.push_back(rep.degenerate ? 0.0 : (nblocks > 0 ? parts[0][i] : 0.0) / energy);
  return rep;
}

inline void write_approx_csv(std::ostream& os, const ApproxReport& rep) {
  os << "S,relative_error\n";
  for (std::size_t i = 0; i < rep.sparsity.size(); ++i) os << rep.sparsity[i] << ',' << rep.relative_error[i] << '\n';
}

/// Per-reference-atom distances to the closest estimate atom, ascending.
inline std::vector<double> sorted_atom_errors(const Dictionary& reference, const Dictionary& estimate) {
  const Matching m = match_atoms(reference, estimate);
  std::vector<double> out;
  out.reserve(m.abs_ip.size());
  for (double ip : m.abs_ip) out.push_back(atom_distance_from_ip(ip));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace itkrm

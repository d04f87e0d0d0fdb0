#pragma once

// Synthetic training data: sparse coefficient models, the normalized noisy
// signal model y = (Phi x + r) / sqrt(1 + ||r||^2), and the structured or
// adversarial dictionaries used in the recovery experiments.

#include "itkrm/linalg.hpp"
#include "itkrm/parallel.hpp"
#include "itkrm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

namespace itkrm {

// ---------------------------------------------------------------------------
// Coefficient models

/// c_i proportional to q^(i-1) for i <= S, q ~ U[q_min, q_max].
struct GeometricCoeffs {
  double q_min = 0.9;
  double q_max = 1.0;
  int sparsity = 6;
};

/// c_1 = 1/sqrt(1+b^2), c_2 = b c_1, b ~ U[b_min, b_max].
struct TwoSparseCoeffs {
  double b_min = 0.9;
  double b_max = 1.0;
};

/// c_i = 1/sqrt(S) for i <= S.
struct BalancedCoeffs {
  int sparsity = 1;
};

using SimpleCoeffModel = std::variant<GeometricCoeffs, TwoSparseCoeffs, BalancedCoeffs>;

struct MixtureCoeffs {
  std::vector<std::pair<double, SimpleCoeffModel>> components;  // (weight, model)
};

using CoefficientModel = std::variant<GeometricCoeffs, TwoSparseCoeffs, BalancedCoeffs, MixtureCoeffs>;

inline int model_sparsity(const SimpleCoeffModel& m) {
  return std::visit(
      [](const auto& v) -> int {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, TwoSparseCoeffs>) return 2;
        else return v.sparsity;
      },
      m);
}

inline void validate_simple(const SimpleCoeffModel& m) {
  std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, GeometricCoeffs>) {
          if (!(v.q_min > 0.0 && v.q_min <= v.q_max && v.q_max <= 1.0))
            throw std::invalid_argument("geometric model needs 0 < q_min <= q_max <= 1");
          if (v.sparsity < 1) throw std::invalid_argument("sparsity must be positive");
        } else if constexpr (std::is_same_v<T, TwoSparseCoeffs>) {
          if (!(v.b_min >= 0.0 && v.b_min <= v.b_max && v.b_max <= 1.0))
            throw std::invalid_argument("two-sparse model needs 0 <= b_min <= b_max <= 1");
        } else {
          if (v.sparsity < 1) throw std::invalid_argument("sparsity must be positive");
        }
      },
      m);
}

inline void validate(const CoefficientModel& model) {
  if (const auto* mix = std::get_if<MixtureCoeffs>(&model)) {
    if (mix->components.empty()) throw std::invalid_argument("mixture needs at least one component");
    double total = 0.0;
    for (const auto& [w, m] : mix->components) {
      if (!(w >= 0.0)) throw std::invalid_argument("mixture weights must be nonnegative");
      total += w;
      validate_simple(m);
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture weights must sum to 1");
    return;
  }
  std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (!std::is_same_v<T, MixtureCoeffs>) validate_simple(SimpleCoeffModel(v));
      },
      model);
}

/// Largest sparsity any draw of the model can produce.
inline int max_sparsity(const CoefficientModel& model) {
  if (const auto* mix = std::get_if<MixtureCoeffs>(&model)) {
    int s = 0;
    for (const auto& [w, m] : mix->components) s = std::max(s, model_sparsity(m));
    return s;
  }
  return std::visit(
      [](const auto& v) -> int {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, MixtureCoeffs>) return 0;
        else return model_sparsity(SimpleCoeffModel(v));
      },
      model);
}

struct CoefficientDraw {
  Vector c;      // length K, nonnegative, non-increasing, unit l2 norm
  int sparsity;  // c(i) = 0 for i >= sparsity
};

namespace detail {

inline Vector draw_simple(const SimpleCoeffModel& m, CounterRng& rng) {
  return std::visit(
      [&](const auto& v) -> Vector {
        using T = std::decay_t<decltype(v)>;
        Vector c;
        if constexpr (std::is_same_v<T, GeometricCoeffs>) {
          const double q = v.q_min == v.q_max ? v.q_min : rng.uniform(v.q_min, v.q_max);
          c.resize(v.sparsity);
          double p = 1.0;
          for (int i = 0; i < v.sparsity; ++i, p *= q) c(i) = p;
        } else if constexpr (std::is_same_v<T, TwoSparseCoeffs>) {
          const double b = v.b_min == v.b_max ? v.b_min : rng.uniform(v.b_min, v.b_max);
          const double c1 = 1.0 / std::sqrt(1.0 + b * b);
          c.resize(2);
          c << c1, b * c1;
          return c;
        } else {
          c = Vector::Constant(v.sparsity, 1.0);
        }
        // l2 renormalization; the l1 constant (1-q)/(1-q^S) is not used.
        return c / c.norm();
      },
      m);
}

}  // namespace detail

/// Draws one coefficient sequence, zero padded to length K.
inline CoefficientDraw draw_coefficients(const CoefficientModel& model, CounterRng& rng, Index K) {
  Vector head;
  if (const auto* mix = std::get_if<MixtureCoeffs>(&model)) {
    const double u = rng.uniform();
    double acc = 0.0;
    const SimpleCoeffModel* chosen = &mix->components.back().second;
    for (const auto& [w, m] : mix->components) {
      acc += w;
      if (u < acc) {
        chosen = &m;
        break;
      }
    }
    head = detail::draw_simple(*chosen, rng);
  } else {
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (!std::is_same_v<T, MixtureCoeffs>) head = detail::draw_simple(SimpleCoeffModel(v), rng);
        },
        model);
  }
  if (head.size() > K) throw std::invalid_argument("coefficient sparsity exceeds dictionary size");
  CoefficientDraw out{Vector::Zero(K), static_cast<int>(head.size())};
  out.c.head(head.size()) = head;
  return out;
}

// ---------------------------------------------------------------------------
// Signal model and batches

struct SignalModel {
  Dictionary dictionary;
  CoefficientModel coeffs = GeometricCoeffs{};
  double noise_std = 0.0;  // per component, E||r||^2 = d * noise_std^2
  double outlier_rate = 0.0;
  double outlier_std = 0.0;  // per component
  std::uint64_t seed = 0;
};

struct SignalTruth {
  Support support;              // sorted ascending
  std::vector<double> coeffs;   // x(k) = sigma(k) c(p(k)), aligned with support
  int sparsity = 0;
  bool is_outlier = false;
};

struct SignalBatch {
  Matrix signals;  // d x N
  std::optional<std::vector<SignalTruth>> truth;
  double noise_std = 0.0;

  Index dim() const { return signals.rows(); }
  Index count() const { return signals.cols(); }
};

inline void validate(const SignalModel& m) {
  validate(m.coeffs);
  if (!(m.noise_std >= 0.0) || !(m.outlier_std >= 0.0)) throw std::invalid_argument("noise levels must be >= 0");
  if (!(m.outlier_rate >= 0.0 && m.outlier_rate < 1.0)) throw std::invalid_argument("outlier_rate must lie in [0, 1)");
  if (max_sparsity(m.coeffs) > m.dictionary.size()) throw std::invalid_argument("sparsity exceeds dictionary size");
}

/// Generates signal n of batch `batch_stream`; deterministic in (seed, batch_stream, n).
inline void generate_signal(const SignalModel& model, std::uint64_t batch_stream, Index n,
                            Eigen::Ref<Vector> y, SignalTruth& truth) {
  CounterRng rng(model.seed, stream_for(streams::kSignals, batch_stream), static_cast<std::uint64_t>(n));
  const Index d = model.dictionary.dim();
  const Index K = model.dictionary.size();
  truth = SignalTruth{};
  if (model.outlier_rate > 0.0 && rng.uniform() < model.outlier_rate) {
    for (Index i = 0; i < d; ++i) y(i) = model.outlier_std * rng.normal();
    truth.is_outlier = true;
    return;
  }
  const CoefficientDraw draw = draw_coefficients(model.coeffs, rng, K);
  const int s = draw.sparsity;
  // First s entries of a uniform permutation: position i holds the atom
  // carrying the i-th largest coefficient.
  std::vector<Index> atoms;
  atoms.reserve(static_cast<std::size_t>(s));
  while (static_cast<int>(atoms.size()) < s) {
    const auto k = static_cast<Index>(rng.below(static_cast<std::uint64_t>(K)));
    if (std::find(atoms.begin(), atoms.end(), k) == atoms.end()) atoms.push_back(k);
  }
  y.setZero();
  std::vector<std::pair<Index, double>> entries;
  entries.reserve(atoms.size());
  for (int i = 0; i < s; ++i) {
    const double x = rng.sign() * draw.c(i);
    y += x * model.dictionary.atom(atoms[static_cast<std::size_t>(i)]);
    entries.emplace_back(atoms[static_cast<std::size_t>(i)], x);
  }
  if (model.noise_std > 0.0) {
    double rr = 0.0;
    for (Index i = 0; i < d; ++i) {
      const double r = model.noise_std * rng.normal();
      rr += r * r;
      y(i) += r;
    }
    y /= std::sqrt(1.0 + rr);
  }
  std::sort(entries.begin(), entries.end());
  truth.sparsity = s;
  for (const auto& [k, x] : entries) {
    truth.support.push_back(k);
    truth.coeffs.push_back(x);
  }
}

/// N signals of the model; `batch_stream` selects an independent batch
/// (learners pass the iteration number to get fresh signals).
inline SignalBatch generate_batch(const SignalModel& model, Index N, std::uint64_t batch_stream = 0) {
  validate(model);
  if (N < 1) throw std::invalid_argument("batch size must be positive");
  SignalBatch batch;
  batch.signals.resize(model.dictionary.dim(), N);
  batch.truth.emplace(static_cast<std::size_t>(N));
  batch.noise_std = model.noise_std;
  constexpr Index kBlock = 1024;
  const auto blocks = static_cast<std::size_t>((N + kBlock - 1) / kBlock);
  parallel_for(blocks, [&](std::size_t b) {
    const Index lo = static_cast<Index>(b) * kBlock;
    const Index hi = std::min(N, lo + kBlock);
    for (Index n = lo; n < hi; ++n)
      generate_signal(model, batch_stream, n, batch.signals.col(n), (*batch.truth)[static_cast<std::size_t>(n)]);
  });
  return batch;
}

/// Monte Carlo estimates of the model constants over the non-outlier signals.
struct SignalStats {
  double gamma1S = 0.0;        // E ||c(1..S)||_1
  double gamma2S = 0.0;        // E ||c(1..S)||_2^2
  double dynamic_range = 0.0;  // max c(1)/c(S)
  double gap = 0.0;            // max c(S+1)/c(S)
  double approx_err = 0.0;     // max ||c(S+1..)||_2 / c(1)
  double ncr = 0.0;            // max noise_std / c(S)
  Index signals_used = 0;
};

inline SignalStats empirical_signal_stats(const SignalBatch& batch) {
  if (!batch.truth) throw std::invalid_argument("signal stats need ground truth");
  SignalStats st;
  for (const auto& t : *batch.truth) {
    if (t.is_outlier || t.coeffs.empty()) continue;
    std::vector<double> c;
    for (double x : t.coeffs) c.push_back(std::abs(x));
    std::sort(c.begin(), c.end(), std::greater<>());
    double l1 = 0.0, l2 = 0.0;
    for (double v : c) {
      l1 += v;
      l2 += v * v;
    }
    st.gamma1S += l1;
    st.gamma2S += l2;
    const double cS = c.back();
    st.dynamic_range = std::max(st.dynamic_range, c.front() / cS);
    st.ncr = std::max(st.ncr, batch.noise_std / cS);
    // Exactly sparse models: nothing lives outside the support.
    ++st.signals_used;
  }
  if (st.signals_used > 0) {
    st.gamma1S /= static_cast<double>(st.signals_used);
    st.gamma2S /= static_cast<double>(st.signals_used);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Dictionaries

inline bool is_power_of_two(Index n) { return n > 0 && (n & (n - 1)) == 0; }

/// Sylvester Hadamard matrix of order n (entries +-1).
inline Matrix sylvester_hadamard(Index n) {
  if (!is_power_of_two(n)) throw std::invalid_argument("Hadamard order must be a power of two");
  Matrix h = Matrix::Ones(1, 1);
  while (h.rows() < n) {
    const Index m = h.rows();
    Matrix next(2 * m, 2 * m);
    next << h, h, h, -h;
    h = std::move(next);
  }
  return h;
}

/// Dirac basis followed by the first K - d normalized Hadamard columns.
inline Dictionary make_dirac_hadamard(Index d, Index K) {
  if (!is_power_of_two(d)) throw std::invalid_argument("dirac-hadamard needs d to be a power of two");
  if (K < 1 || K > 2 * d) throw std::invalid_argument("dirac-hadamard needs 1 <= K <= 2d");
  Matrix atoms = Matrix::Zero(d, K);
  for (Index k = 0; k < std::min(d, K); ++k) atoms(k, k) = 1.0;
  if (K > d) atoms.rightCols(K - d) = sylvester_hadamard(d).leftCols(K - d) / std::sqrt(static_cast<double>(d));
  return Dictionary::normalized(std::move(atoms));
}

inline Dictionary make_random_sphere(Index d, Index K, CounterRng& rng) {
  if (d < 1 || K < 1) throw std::invalid_argument("random dictionary needs d, K >= 1");
  Matrix atoms(d, K);
  for (Index k = 0; k < K; ++k) atoms.col(k) = rng.unit_vector(d);
  return Dictionary::normalized(std::move(atoms));
}

/// Unit vector drawn uniformly from the sphere orthogonal to `v` (unit).
inline Vector random_orthogonal_unit(const Vector& v, CounterRng& rng) {
  for (;;) {
    Vector z = rng.gaussian_vector(v.size());
    z -= v.dot(z) * v;
    const double n = z.norm();
    if (n > 1e-12) return z / n;
  }
}

/// psi_k = alpha phi_k + omega z_k with alpha = 1 - eps^2/2, so that
/// ||psi_k - phi_k|| = eps for every atom.
inline Dictionary make_perturbed(const Dictionary& generating, double eps, CounterRng& rng) {
  if (!(eps >= 0.0 && eps <= std::sqrt(2.0))) throw std::invalid_argument("perturbation must lie in [0, sqrt 2]");
  const double alpha = 1.0 - eps * eps / 2.0;
  const double omega = std::sqrt(std::max(0.0, eps * eps - eps * eps * eps * eps / 4.0));
  Matrix atoms(generating.dim(), generating.size());
  for (Index k = 0; k < generating.size(); ++k) {
    const Vector phi = generating.atom(k);
    atoms.col(k) = alpha * phi + omega * random_orthogonal_unit(phi, rng);
  }
  return Dictionary::normalized(std::move(atoms));
}

struct SpuriousTriple {
  Index double_idx;   // generating atom that ends up represented twice
  Index lost_idx;     // slot that receives the 1:1 combination
  Index partner_idx;  // slot that receives the duplicate
};

/// Spurious fixed point: per triple the estimate holds phi_double twice and
/// (phi_lost + h phi_partner)/||.|| once, so phi_lost and phi_partner are missing.
inline Dictionary make_spurious_estimate(const Dictionary& generating, const std::vector<SpuriousTriple>& triples) {
  std::vector<Index> used;
  for (const auto& t : triples) {
    for (Index i : {t.double_idx, t.lost_idx, t.partner_idx}) {
      if (i < 0 || i >= generating.size()) throw std::out_of_range("triple index out of range");
      if (std::find(used.begin(), used.end(), i) != used.end())
        throw std::invalid_argument("spurious triples must not overlap");
      used.push_back(i);
    }
  }
  Matrix atoms = generating.atoms();
  for (const auto& t : triples) {
    const Vector lost = generating.atom(t.lost_idx);
    const Vector partner = generating.atom(t.partner_idx);
    const double h = sign_of(partner.dot(lost));
    atoms.col(t.lost_idx) = (lost + h * partner).normalized();
    atoms.col(t.partner_idx) = generating.atom(t.double_idx);
  }
  return Dictionary::normalized(std::move(atoms));
}

/// Initialization built to end near spurious fixed points: `pair_count`
/// generating atoms are each approximated twice, psi_{j+-} = alpha phi_j +- omega z_j,
/// with z_j a balanced signed sum of the other atoms (projected orthogonal to
/// phi_j, normalized). Every other slot is phi_i perturbed at the same alpha.
inline Dictionary make_bad_initialization(const Dictionary& generating, double alpha, Index pair_count,
                                          CounterRng& rng) {
  const Index K = generating.size();
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  if (pair_count < 0 || 2 * pair_count > K) throw std::invalid_argument("2 * pair_count must not exceed K");
  const double omega = std::sqrt(std::max(0.0, 1.0 - alpha * alpha));

  std::vector<Index> order(static_cast<std::size_t>(K));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index i = K - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::uint64_t>(i + 1))]);

  Matrix atoms(generating.dim(), K);
  std::vector<bool> assigned(static_cast<std::size_t>(K), false);
  for (Index p = 0; p < pair_count; ++p) {
    const Index j = order[static_cast<std::size_t>(2 * p)];
    const Index other = order[static_cast<std::size_t>(2 * p + 1)];
    const Vector phi = generating.atom(j);
    Vector z = Vector::Zero(generating.dim());
    for (Index i = 0; i < K; ++i)
      if (i != j) z += rng.sign() * generating.atom(i);
    z -= phi.dot(z) * phi;
    if (z.norm() < 1e-12) z = random_orthogonal_unit(phi, rng);
    z.normalize();
    atoms.col(j) = alpha * phi + omega * z;
    atoms.col(other) = alpha * phi - omega * z;
    assigned[static_cast<std::size_t>(j)] = assigned[static_cast<std::size_t>(other)] = true;
  }
  for (Index i = 0; i < K; ++i) {
    if (assigned[static_cast<std::size_t>(i)]) continue;
    const Vector phi = generating.atom(i);
    atoms.col(i) = omega > 0.0 ? Vector(alpha * phi + omega * random_orthogonal_unit(phi, rng)) : phi;
  }
  return Dictionary::normalized(std::move(atoms));
}

}  // namespace itkrm

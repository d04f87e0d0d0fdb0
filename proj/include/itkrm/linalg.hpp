#pragma once

// Dictionary type and the dense linear algebra shared by every learner:
// projections through the Gram matrix, coherence, operator norms and the
// asymmetric dictionary distance used to score recovery.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace itkrm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Indices of selected atoms. Kept sorted ascending by every producer in
/// this library so coefficient vectors have a canonical order.
using Support = std::vector<Index>;

inline constexpr double kUnitNormTolerance = 1e-10;
inline constexpr double kPinvRelativeCutoff = 1e-10;

/// sign(0) is +1 throughout.
inline double sign_of(double v) { return v < 0.0 ? -1.0 : 1.0; }

/// A d x K matrix whose columns (atoms) have unit Euclidean norm.
class Dictionary {
 public:
  Dictionary() = default;

  /// Normalizes every column. Throws if a column is zero or not finite.
  static Dictionary normalized(Matrix atoms) {
    if (atoms.rows() < 1 || atoms.cols() < 1) {
      throw std::invalid_argument("dictionary needs d >= 1 and K >= 1");
    }
    for (Index k = 0; k < atoms.cols(); ++k) {
      const double n = atoms.col(k).norm();
      if (!(n > 0.0) || !std::isfinite(n)) {
        throw std::invalid_argument("cannot normalize atom " + std::to_string(k));
      }
      atoms.col(k) /= n;
    }
    return Dictionary(std::move(atoms));
  }

  /// Takes columns that are already unit norm; verifies within 1e-10.
  static Dictionary from_unit_columns(Matrix atoms) {
    if (atoms.rows() < 1 || atoms.cols() < 1) {
      throw std::invalid_argument("dictionary needs d >= 1 and K >= 1");
    }
    for (Index k = 0; k < atoms.cols(); ++k) {
      if (std::abs(atoms.col(k).norm() - 1.0) > kUnitNormTolerance) {
        throw std::invalid_argument("atom " + std::to_string(k) + " is not unit norm");
      }
    }
    return Dictionary(std::move(atoms));
  }

  Index dim() const { return atoms_.rows(); }
  Index size() const { return atoms_.cols(); }
  const Matrix& atoms() const { return atoms_; }
  auto atom(Index k) const { return atoms_.col(k); }
  bool empty() const { return atoms_.cols() == 0; }

  /// Overwrites atom k with v / ||v||.
  void set_atom(Index k, const Vector& v) {
    const double n = v.norm();
    if (!(n > 0.0)) throw std::invalid_argument("cannot install a zero atom");
    atoms_.col(k) = v / n;
  }

  void append_atom(const Vector& v) {
    const double n = v.norm();
    if (!(n > 0.0)) throw std::invalid_argument("cannot append a zero atom");
    atoms_.conservativeResize(v.size(), atoms_.cols() + 1);
    atoms_.col(atoms_.cols() - 1) = v / n;
  }

  /// Removes the listed atoms (any order, duplicates ignored).
  void remove_atoms(std::vector<Index> drop) {
    std::sort(drop.begin(), drop.end());
    drop.erase(std::unique(drop.begin(), drop.end()), drop.end());
    if (static_cast<Index>(drop.size()) >= atoms_.cols()) {
      throw std::invalid_argument("cannot remove every atom");
    }
    Matrix kept(atoms_.rows(), atoms_.cols() - static_cast<Index>(drop.size()));
    Index out = 0;
    std::size_t j = 0;
    for (Index k = 0; k < atoms_.cols(); ++k) {
      if (j < drop.size() && drop[j] == k) {
        ++j;
        continue;
      }
      kept.col(out++) = atoms_.col(k);
    }
    atoms_ = std::move(kept);
  }

 private:
  explicit Dictionary(Matrix atoms) : atoms_(std::move(atoms)) {}
  Matrix atoms_;
};

inline Matrix gram(const Dictionary& dico) { return dico.atoms().transpose() * dico.atoms(); }

inline Matrix cross_gram(const Dictionary& a, const Dictionary& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("cross_gram: dimension mismatch");
  return a.atoms().transpose() * b.atoms();
}

/// Largest |<psi_k, psi_j>| over k != j.
inline double coherence(const Dictionary& dico) {
  if (dico.size() < 2) throw std::domain_error("coherence needs at least two atoms");
  const Matrix g = gram(dico);
  double mu = 0.0;
  for (Index j = 0; j < g.cols(); ++j)
    for (Index i = 0; i < j; ++i) mu = std::max(mu, std::abs(g(i, j)));
  return std::min(mu, 1.0);
}

/// Most coherent pair (i < j, ties to the lexicographically first pair) of a
/// precomputed Gram matrix; returns {-1, -1, 0} when K < 2.
struct CoherentPair {
  Index first = -1;
  Index second = -1;
  double value = 0.0;
};

inline CoherentPair most_coherent_pair(const Matrix& g) {
  CoherentPair best;
  for (Index i = 0; i < g.rows(); ++i) {
    for (Index j = i + 1; j < g.cols(); ++j) {
      const double v = std::abs(g(i, j));
      if (best.first < 0 || v > best.value) best = {i, j, v};
    }
  }
  return best;
}

/// Moore-Penrose solve of G x = b for symmetric positive semidefinite G via
/// eigendecomposition; eigenvalues below 1e-10 * lambda_max are dropped.
inline Vector pinv_solve_sym(const Matrix& g, const Vector& b) {
  const Index s = g.rows();
  if (s == 0) return Vector();
  if (s == 1) {
    return g(0, 0) > 0.0 ? Vector::Constant(1, b(0) / g(0, 0)) : Vector::Zero(1);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(g);
  const Vector& lam = es.eigenvalues();
  const double cutoff = kPinvRelativeCutoff * std::max(lam.maxCoeff(), 0.0);
  Vector proj = es.eigenvectors().transpose() * b;
  for (Index i = 0; i < s; ++i) proj(i) = lam(i) > cutoff && lam(i) > 0.0 ? proj(i) / lam(i) : 0.0;
  return es.eigenvectors() * proj;
}

inline Matrix sub_gram(const Matrix& g, const Support& support) {
  const auto s = static_cast<Index>(support.size());
  Matrix out(s, s);
  for (Index a = 0; a < s; ++a)
    for (Index b = 0; b < s; ++b) out(a, b) = g(support[a], support[b]);
  return out;
}

inline Matrix columns(const Dictionary& dico, const Support& support) {
  Matrix out(dico.dim(), static_cast<Index>(support.size()));
  for (std::size_t i = 0; i < support.size(); ++i) out.col(static_cast<Index>(i)) = dico.atom(support[i]);
  return out;
}

inline void validate_support(const Dictionary& dico, const Support& support) {
  if (support.empty()) throw std::invalid_argument("support must not be empty");
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (support[i] < 0 || support[i] >= dico.size()) throw std::out_of_range("support index out of range");
    for (std::size_t j = 0; j < i; ++j)
      if (support[i] == support[j]) throw std::invalid_argument("support indices must be distinct");
  }
}

struct Projection {
  Vector projection;    // P(Psi_I) y
  Vector coefficients;  // Psi_I^+ y, ordered as the support
};

/// Orthogonal projection of y onto span(Psi_I) through the sub-Gram route.
inline Projection project_onto_span(const Dictionary& dico, const Support& support, const Vector& y) {
  validate_support(dico, support);
  if (y.size() != dico.dim()) throw std::invalid_argument("signal length does not match dictionary");
  const Matrix sub = columns(dico, support);
  const Vector x = pinv_solve_sym(sub.transpose() * sub, sub.transpose() * y);
  return {sub * x, x};
}

/// ||Psi||_{2,2}^2, the largest eigenvalue of the (smaller) Gram matrix.
inline double operator_norm_sq(const Dictionary& dico) {
  const Matrix& a = dico.atoms();
  const Matrix g = a.rows() <= a.cols() ? Matrix(a * a.transpose()) : Matrix(a.transpose() * a);
  Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// delta_I: largest deviation from 1 of the eigenvalues of Psi_I^* Psi_I.
inline double isometry_constant(const Dictionary& dico, const Support& support) {
  validate_support(dico, support);
  const Matrix sub = columns(dico, support);
  Eigen::SelfAdjointEigenSolver<Matrix> es(sub.transpose() * sub, Eigen::EigenvaluesOnly);
  const Vector& lam = es.eigenvalues();
  return std::max(std::abs(lam.minCoeff() - 1.0), std::abs(lam.maxCoeff() - 1.0));
}

inline double atom_distance_from_ip(double abs_ip) { return std::sqrt(std::max(0.0, 2.0 - 2.0 * std::min(abs_ip, 1.0))); }

/// Per reference atom: best-matching estimate atom and |<phi_k, psi_match>|.
struct Matching {
  std::vector<Index> index;
  std::vector<double> abs_ip;
};

inline Matching match_atoms(const Dictionary& reference, const Dictionary& estimate) {
  if (reference.empty() || estimate.empty()) throw std::invalid_argument("empty dictionary");
  const Matrix cg = cross_gram(reference, estimate).cwiseAbs();
  Matching m;
  m.index.resize(static_cast<std::size_t>(reference.size()));
  m.abs_ip.resize(static_cast<std::size_t>(reference.size()));
  for (Index k = 0; k < cg.rows(); ++k) {
    Index best = 0;
    for (Index l = 1; l < cg.cols(); ++l)
      if (cg(k, l) > cg(k, best)) best = l;
    m.index[static_cast<std::size_t>(k)] = best;
    m.abs_ip[static_cast<std::size_t>(k)] = cg(k, best);
  }
  return m;
}

struct AsymDistance {
  double value = 0.0;
  std::vector<Index> matching;
};

/// max_k min_l sqrt(2 - 2|<phi_k, psi_l>|). Not symmetric; sizes may differ.
inline AsymDistance asym_distance(const Dictionary& reference, const Dictionary& estimate) {
  Matching m = match_atoms(reference, estimate);
  double worst = 0.0;
  for (double ip : m.abs_ip) worst = std::max(worst, atom_distance_from_ip(ip));
  return {worst, std::move(m.index)};
}

/// (1/K) sum_k min_l ||phi_k -+ psi_l||.
inline double mean_atom_distance(const Dictionary& reference, const Dictionary& estimate) {
  const Matching m = match_atoms(reference, estimate);
  double sum = 0.0;
  for (double ip : m.abs_ip) sum += atom_distance_from_ip(ip);
  return sum / static_cast<double>(m.abs_ip.size());
}

/// Fraction of reference atoms with max_j |<phi_k, psi_j>| >= threshold.
inline double recovery_rate(const Dictionary& reference, const Dictionary& estimate, double threshold = 0.99) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("recovery threshold must lie in (0, 1]");
  const Matching m = match_atoms(reference, estimate);
  const auto hits = std::count_if(m.abs_ip.begin(), m.abs_ip.end(), [&](double v) { return v >= threshold; });
  return static_cast<double>(hits) / static_cast<double>(m.abs_ip.size());
}

/// Checks of the contraction preconditions for an estimate against the
/// generating dictionary. Nothing here is used by the learners.
struct DiagnosticsReport {
  double coherence = 0.0;          // mu(Psi)
  double operator_norm_sq = 0.0;   // ||Psi||^2
  double cross_coherence = 0.0;    // mu(Phi, Psi) after matching
  double alpha_min = 0.0;
  double alpha_max = 0.0;
  double generating_coherence = 0.0;
  double diag_dominance_ratio = 0.0;  // alpha_min / max(mu(Phi,Psi), mu(Phi))
  bool matching_is_permutation = false;
  bool diagonally_dominant = false;
};

inline DiagnosticsReport theorem_conditions_report(const Dictionary& generating, const Dictionary& estimate) {
  if (generating.dim() != estimate.dim()) throw std::invalid_argument("dimension mismatch");
  if (generating.size() != estimate.size()) throw std::invalid_argument("report needs equally sized dictionaries");
  DiagnosticsReport r;
  r.coherence = estimate.size() >= 2 ? coherence(estimate) : 0.0;
  r.generating_coherence = generating.size() >= 2 ? coherence(generating) : 0.0;
  r.operator_norm_sq = operator_norm_sq(estimate);

  const Matching m = match_atoms(generating, estimate);
  r.alpha_min = *std::min_element(m.abs_ip.begin(), m.abs_ip.end());
  r.alpha_max = *std::max_element(m.abs_ip.begin(), m.abs_ip.end());

  std::vector<Index> sorted = m.index;
  std::sort(sorted.begin(), sorted.end());
  r.matching_is_permutation = std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();

  const Matrix cg = cross_gram(generating, estimate).cwiseAbs();
  for (Index k = 0; k < cg.rows(); ++k)
    for (Index l = 0; l < cg.cols(); ++l)
      if (l != m.index[static_cast<std::size_t>(k)]) r.cross_coherence = std::max(r.cross_coherence, cg(k, l));

  const double denom = std::max(r.cross_coherence, r.generating_coherence);
  r.diag_dominance_ratio = denom > 0.0 ? r.alpha_min / denom : std::numeric_limits<double>::infinity();
  r.diagonally_dominant = r.matching_is_permutation && r.alpha_min > r.cross_coherence;
  return r;
}

}  // namespace itkrm

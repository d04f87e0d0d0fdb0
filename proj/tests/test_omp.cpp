#include "itkrm/omp.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace itkrm;

namespace {

double best_two_term_error(const Dictionary& dico, const Vector& y) {
  double best = y.squaredNorm();
  for (Index i = 0; i < dico.size(); ++i)
    for (Index j = i + 1; j < dico.size(); ++j) {
      Matrix a(dico.dim(), 2);
      a << dico.atom(i), dico.atom(j);
      const Vector c = a.completeOrthogonalDecomposition().solve(y);
      best = std::min(best, (y - a * c).squaredNorm());
    }
  return best;
}

}  // namespace

TEST(Omp, OrthonormalPicksTopInnerProducts) {
  const Dictionary phi = Dictionary::normalized(Matrix::Identity(6, 6));
  Vector y(6);
  y << 0.1, -3.0, 0.5, 2.0, 0.0, -0.2;
  const OmpResult r = omp(phi, y, 3);
  EXPECT_EQ(r.support, (Support{1, 3, 2}));
  EXPECT_NEAR(r.residual.squaredNorm(), y.squaredNorm() - 9.0 - 4.0 - 0.25, 1e-12);
}

TEST(Omp, ExactRecoveryInIncoherentDictionary) {
  const Dictionary phi = make_dirac_hadamard(64, 128);
  SignalModel m;
  m.dictionary = phi;
  m.coeffs = GeometricCoeffs{0.5, 1.0, 3};
  m.seed = 3;
  const SignalBatch b = generate_batch(m, 200);
  for (Index n = 0; n < b.count(); ++n) {
    const OmpResult r = omp(phi, b.signals.col(n), 3);
    Support s = r.support;
    std::sort(s.begin(), s.end());
    EXPECT_EQ(s, (*b.truth)[static_cast<std::size_t>(n)].support);
    EXPECT_LE(r.residual.norm(), 1e-10);
  }
}

TEST(Omp, NeverBeatsExhaustiveBestTwoTerm) {
  CounterRng rng(6);
  int strictly_worse = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const Dictionary dico = make_random_sphere(6, 8, rng);
    const Vector y = rng.gaussian_vector(6);
    const double e_omp = omp(dico, y, 2).residual.squaredNorm();
    const double e_best = best_two_term_error(dico, y);
    ASSERT_GE(e_omp, e_best - 1e-10);
    if (e_omp > e_best + 1e-10) ++strictly_worse;
  }
  EXPECT_GT(strictly_worse, 0);  // the bound is not vacuous
}

TEST(Omp, ResidualsShrinkAndStayOrthogonal) {
  CounterRng rng(7);
  const Dictionary dico = make_random_sphere(16, 30, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector y = rng.gaussian_vector(16);
    const OmpResult r = omp(dico, y, 10);
    double prev = y.norm();
    for (std::size_t s = 0; s < r.step_residuals.size(); ++s) {
      const double cur = r.step_residuals[s].norm();
      EXPECT_LT(cur, prev);
      prev = cur;
      for (std::size_t i = 0; i <= s; ++i)
        EXPECT_LE(std::abs(dico.atom(r.support[i]).dot(r.step_residuals[s])), 1e-8 * y.norm());
    }
    // No atom is selected twice.
    Support s = r.support;
    std::sort(s.begin(), s.end());
    EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
  }
}

TEST(Omp, StopsEarlyOnExactFitAndZeroSignal) {
  const Dictionary phi = Dictionary::normalized(Matrix::Identity(4, 4));
  Vector y = Vector::Zero(4);
  y(2) = 1.0;
  EXPECT_EQ(omp(phi, y, 3).support.size(), 1u);
  EXPECT_TRUE(omp(phi, Vector::Zero(4), 2).support.empty());
  EXPECT_THROW(omp(phi, y, 5), std::invalid_argument);
  EXPECT_THROW(omp(phi, Vector::Zero(3), 1), std::invalid_argument);
}

TEST(Omp, TiesGoToLowestIndex) {
  const Dictionary phi = Dictionary::normalized(Matrix::Identity(3, 3));
  EXPECT_EQ(omp(phi, Vector::Ones(3), 1).support, (Support{0}));
}

TEST(ApproximationPower, FlatPatchesNeedOnlyTheFlatAtom) {
  CounterRng rng(1);
  const Dictionary dico = make_random_sphere(16, 20, rng);
  SignalBatch b;
  b.signals.resize(16, 10);
  for (Index n = 0; n < 10; ++n) b.signals.col(n).setConstant(0.1 * static_cast<double>(n + 1));
  ApproxOptions opts;
  opts.augment_flat = true;
  const ApproxReport rep = approximation_power(dico, b, {1, 2}, opts);
  EXPECT_LE(rep.relative_error[0], 1e-10);
  opts.force_flat = true;
  EXPECT_LE(approximation_power(dico, b, {0}, opts).relative_error[0], 1e-10);
}

TEST(ApproximationPower, ZeroSignalsAreDegenerate) {
  CounterRng rng(1);
  const Dictionary dico = make_random_sphere(8, 10, rng);
  SignalBatch b;
  b.signals = Matrix::Zero(8, 5);
  const ApproxReport rep = approximation_power(dico, b, {1, 2, 3});
  EXPECT_TRUE(rep.degenerate);
  for (double e : rep.relative_error) EXPECT_EQ(e, 0.0);
}

TEST(ApproximationPower, MonotoneAndMatchesPerSignalOmp) {
  CounterRng rng(2);
  const Dictionary dico = make_random_sphere(12, 20, rng);
  SignalBatch b;
  b.signals.resize(12, 1100);
  for (Index n = 0; n < b.count(); ++n) b.signals.col(n) = rng.gaussian_vector(12);
  std::vector<int> range{0, 1, 2, 3, 4, 5, 6};
  const ApproxReport rep = approximation_power(dico, b, range);
  EXPECT_DOUBLE_EQ(rep.relative_error[0], 1.0);
  for (std::size_t i = 1; i < range.size(); ++i) EXPECT_LE(rep.relative_error[i], rep.relative_error[i - 1]);
  double err = 0.0;
  for (Index n = 0; n < b.count(); ++n) err += omp(dico, b.signals.col(n), 4).residual.squaredNorm();
  EXPECT_NEAR(rep.relative_error[4], err / b.signals.squaredNorm(), 1e-12);
  std::ostringstream os;
  write_approx_csv(os, rep);
  EXPECT_EQ(os.str().substr(0, 17), "S,relative_error\n");
  EXPECT_THROW(approximation_power(dico, b, {13}), std::invalid_argument);
}

TEST(ApproximationPower, ErrorAgainstCleanReference) {
  const Dictionary phi = Dictionary::normalized(Matrix::Identity(4, 4));
  SignalBatch clean, noisy;
  clean.signals = Matrix::Identity(4, 4);
  noisy.signals = clean.signals + 0.1 * Matrix::Ones(4, 4);
  // S = 4 reproduces the noisy batch exactly; the error is the noise energy.
  const ApproxReport rep = approximation_power(phi, noisy, {4}, {}, &clean);
  EXPECT_NEAR(rep.relative_error[0], 16 * 0.01 / 4.0, 1e-12);
}

TEST(SortedAtomErrors, SpuriousEstimate) {
  CounterRng rng(3);
  const Dictionary phi = Dictionary::normalized(Matrix::Identity(8, 8));
  EXPECT_EQ(sorted_atom_errors(phi, phi), std::vector<double>(8, 0.0));
  const Dictionary psi = make_spurious_estimate(phi, {{0, 1, 2}});
  const auto e = sorted_atom_errors(phi, psi);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(e[static_cast<std::size_t>(i)], 0.0, 1e-7);
  EXPECT_NEAR(e[6], std::sqrt(2.0 - std::sqrt(2.0)), 1e-12);
  EXPECT_NEAR(e[7], std::sqrt(2.0 - std::sqrt(2.0)), 1e-12);
}

#include "itkrm/candidates.hpp"
#include "itkrm/signals.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace itkrm;

namespace {

Dictionary identity(Index d) { return Dictionary::normalized(Matrix::Identity(d, d)); }

CandidateSet make_cands(const Matrix& atoms, std::vector<std::int64_t> scores) {
  CandidateSet c;
  c.atoms = atoms;
  for (Index l = 0; l < c.atoms.cols(); ++l) c.atoms.col(l).normalize();
  c.scores = std::move(scores);
  c.accumulator = Matrix::Zero(atoms.rows(), atoms.cols());
  return c;
}

}  // namespace

TEST(CandidateThreshold, Values) {
  EXPECT_NEAR(candidate_threshold(Variant::replacement, 192, 128, 0), 2.0 * std::log(384.0) / 128.0, 1e-15);
  EXPECT_NEAR(candidate_threshold(Variant::adaptive, 96, 64, 7500), 2.0 * std::log(2.0 * 7500 / 64.0) / 64.0, 1e-15);
  EXPECT_EQ(candidate_threshold(Variant::adaptive, 96, 64, 10), 0.0);
}

TEST(CandidateUpdate, ZeroResidualIsNoOp) {
  CounterRng rng(1);
  CandidateSet c = CandidateSet::random(5, 3, rng);
  const Matrix before = c.atoms;
  candidate_signal_update(c, Vector::Zero(5), 0.1);
  EXPECT_EQ(c.accumulator.norm(), 0.0);
  EXPECT_EQ(c.scores, (std::vector<std::int64_t>{0, 0, 0}));
  EXPECT_TRUE(c.atoms.isApprox(before));
}

TEST(CandidateUpdate, AlignedResidualScoresAndAccumulatesWithSign) {
  const Index d = 16;
  Matrix g = Matrix::Zero(d, 2);
  g(1, 0) = 1.0;
  g(2, 0) = -1.0;
  g(5, 1) = 1.0;
  CandidateSet c = make_cands(g, {0, 0});
  Vector a = Vector::Zero(d);
  a(1) = -0.3;
  a(2) = 0.3;  // -(phi_2 - phi_3) * 0.3
  const double tau = candidate_threshold(Variant::replacement, 24, d, 0);
  candidate_signal_update(c, a, tau);
  EXPECT_EQ(c.scores[0], 1);
  EXPECT_EQ(c.scores[1], 0);
  EXPECT_NEAR(c.accumulator(1, 0), 0.3, 1e-15);
  EXPECT_NEAR(c.accumulator(2, 0), -0.3, 1e-15);
  EXPECT_EQ(c.accumulator.col(1).norm(), 0.0);
}

TEST(CandidateUpdate, PureNoiseScoresStayNearNOverK) {
  const Index d = 64, K = 96, L = 4, n = 20000;
  CounterRng rng(3);
  CandidateSet c = CandidateSet::random(d, L, rng);
  const double tau = candidate_threshold(Variant::replacement, K, d, 0);
  for (Index i = 0; i < n; ++i) candidate_signal_update(c, rng.gaussian_vector(d), tau);
  for (auto s : c.scores) EXPECT_LE(static_cast<double>(s), n / static_cast<double>(K) + 3.0 * std::sqrt(n / static_cast<double>(K)));
}

TEST(CandidateUpdate, SubbatchNormalizesAndResets) {
  CounterRng rng(4);
  CandidateSet c = CandidateSet::random(6, 3, rng);
  c.accumulator.col(0) = Vector::Constant(6, 2.0);
  c.scores = {5, 2, 0};
  finish_candidate_subbatch(c, false, rng);
  EXPECT_NEAR((c.atoms.col(0) - Vector::Constant(6, 1.0 / std::sqrt(6.0))).norm(), 0.0, 1e-15);
  for (Index l = 0; l < 3; ++l) EXPECT_NEAR(c.atoms.col(l).norm(), 1.0, 1e-14);
  EXPECT_EQ(c.accumulator.norm(), 0.0);
  EXPECT_EQ(c.scores, (std::vector<std::int64_t>{5, 2, 0}));
  EXPECT_EQ(c.subbatch_index, 1);
  finish_candidate_subbatch(c, true, rng);
  EXPECT_EQ(c.scores, (std::vector<std::int64_t>{0, 0, 0}));
}

TEST(ReplaceCoherent, NoPairAboveThresholdIsIdentity) {
  const Dictionary dico = identity(4);
  Matrix g = Matrix::Zero(4, 1);
  g(0, 0) = 1.0;
  const CandidateSet c = make_cands(g, {9});
  const ReplacementResult r = replace_coherent(dico, {1, 2, 3, 4}, c, {});
  EXPECT_EQ(r.replaced, 0);
  EXPECT_TRUE(r.dictionary.atoms().isApprox(dico.atoms()));
  EXPECT_EQ(r.scores, (std::vector<std::int64_t>{1, 2, 3, 4}));
  EXPECT_EQ(r.candidates.size(), 1);
}

TEST(ReplaceCoherent, DuplicateReplacedByCandidate) {
  Matrix a = Matrix::Identity(5, 4);
  a.col(1) = a.col(0);
  const Dictionary dico = Dictionary::from_unit_columns(a);
  Matrix g = Matrix::Zero(5, 1);
  g(4, 0) = 1.0;
  const ReplacementResult r = replace_coherent(dico, {7, 7, 3, 3}, make_cands(g, {11}), {0.7, CombineMode::merge});
  EXPECT_EQ(r.replaced, 1);
  EXPECT_NEAR(std::abs(r.dictionary.atom(0)(0)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(r.dictionary.atom(1)(4)), 1.0, 1e-14);
  EXPECT_EQ(r.scores[0], 14);
  EXPECT_EQ(r.scores[1], 11);
  EXPECT_TRUE(r.candidates.empty());
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].kind, "coherent");
  EXPECT_LE(coherence(r.dictionary), 0.7);
}

TEST(ReplaceCoherent, OppositeSignPairMergesToSameDirection) {
  Matrix a = Matrix::Identity(5, 4);
  a.col(1) = -a.col(0);
  const Dictionary dico = Dictionary::from_unit_columns(a);
  Matrix g = Matrix::Zero(5, 1);
  g(4, 0) = 1.0;
  for (CombineMode mode : {CombineMode::del, CombineMode::merge, CombineMode::add}) {
    const ReplacementResult r = replace_coherent(dico, {4, 6, 1, 1}, make_cands(g, {2}), {0.7, mode});
    EXPECT_NEAR(std::abs(r.dictionary.atom(0)(0)), 1.0, 1e-14);
    EXPECT_EQ(r.scores[0], 10);
  }
}

TEST(ReplaceCoherent, MergeWeightsByScores) {
  // Two coherent atoms at 0.8; merge is v(k') psi_k' + h v(k) psi_k.
  Matrix a = Matrix::Zero(4, 3);
  a(0, 0) = 1.0;
  a(0, 1) = 0.8;
  a(1, 1) = 0.6;
  a(3, 2) = 1.0;
  const Dictionary dico = Dictionary::from_unit_columns(a);
  Matrix g = Matrix::Zero(4, 1);
  g(2, 0) = 1.0;
  const ReplacementResult r = replace_coherent(dico, {1, 3, 5}, make_cands(g, {0}), {});
  const Vector expect = (3.0 * a.col(1) + 1.0 * a.col(0)).normalized();
  EXPECT_NEAR((r.dictionary.atom(0) - expect).norm(), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(r.dictionary.atom(1)(2)), 1.0, 1e-14);
}

TEST(ReplaceCoherent, DiscardsCandidatesCoherentWithRest) {
  Matrix a = Matrix::Identity(5, 4);
  a.col(1) = (a.col(0) + 0.2 * a.col(3)).normalized();
  const Dictionary dico = Dictionary::from_unit_columns(a);
  Matrix g(5, 2);
  g.col(0) = Vector::Unit(5, 3);  // best scored, identical to atom 3
  g.col(1) = Vector::Unit(5, 4);
  const ReplacementResult r = replace_coherent(dico, {1, 1, 1, 1}, make_cands(g, {50, 10}), {});
  EXPECT_EQ(r.replaced, 1);
  EXPECT_NEAR(std::abs(r.dictionary.atom(1)(4)), 1.0, 1e-14);
  EXPECT_EQ(r.scores[1], 10);
}

TEST(ReplaceCoherent, ExhaustedCandidatesLeavePair) {
  Matrix a = Matrix::Identity(4, 3);
  a.col(1) = a.col(0);
  a.col(2) = Vector::Unit(4, 3);
  const Dictionary dico = Dictionary::from_unit_columns(a);
  CandidateSet none;
  none.atoms.resize(4, 0);
  const ReplacementResult r = replace_coherent(dico, {1, 1, 1}, none, {});
  EXPECT_EQ(r.replaced, 0);
  EXPECT_TRUE(r.dictionary.atoms().isApprox(dico.atoms()));
}

TEST(ReplaceCoherent, PropertyCoherenceBoundWithRichPool) {
  CounterRng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    Matrix a = make_random_sphere(32, 20, rng).atoms();
    for (int j = 0; j < 3; ++j) a.col(2 * j + 1) = (a.col(2 * j) + 0.1 * rng.gaussian_vector(32)).normalized();
    const Dictionary dico = Dictionary::from_unit_columns(a);
    Matrix pool(32, 10);
    for (Index l = 0; l < 10; ++l) pool.col(l) = rng.unit_vector(32);
    std::vector<std::int64_t> sc(20, 5), cs(10);
    for (auto& s : cs) s = static_cast<std::int64_t>(rng.below(30));
    const ReplacementResult r = replace_coherent(dico, sc, make_cands(pool, cs), {0.7, CombineMode::merge});
    EXPECT_GE(r.replaced, 3);
    if (!r.candidates.empty()) EXPECT_LE(coherence(r.dictionary), 0.7 + 1e-12);
    for (Index k = 0; k < r.dictionary.size(); ++k) EXPECT_NEAR(r.dictionary.atom(k).norm(), 1.0, 1e-10);
  }
}

TEST(ReplaceUnused, AllUsedIsNoOp) {
  const Dictionary dico = identity(3);
  Matrix g = Matrix::Zero(3, 1);
  g(0, 0) = 1.0;
  const ReplacementResult r = replace_unused(dico, {1, 1, 1}, make_cands(g, {3}), {});
  EXPECT_EQ(r.replaced, 0);
  EXPECT_TRUE(r.dictionary.atoms().isApprox(dico.atoms()));
}

TEST(ReplaceUnused, DeadAtomGetsIncoherentCandidate) {
  const Dictionary dico = identity(4);
  Matrix g(4, 2);
  g.col(0) = Vector::Unit(4, 0);                               // coherent with atom 0, best score
  g.col(1) = Vector(Vector::Unit(4, 2) + Vector::Unit(4, 3));  // 0.707 to atom 3 only when placed at 2
  g.col(1) = Vector::Unit(4, 2) + 0.5 * Vector::Unit(4, 3);
  const ReplacementResult r = replace_unused(dico, {4, 4, 0, 4}, make_cands(g, {9, 2}), {});
  EXPECT_EQ(r.replaced, 1);
  EXPECT_NEAR((r.dictionary.atom(2) - g.col(1).normalized()).norm(), 0.0, 1e-14);
  EXPECT_EQ(r.scores[2], 0);
  EXPECT_TRUE(r.candidates.empty());
}

TEST(ReplaceUnused, FlaggedDeadAndExhaustion) {
  const Dictionary dico = identity(4);
  Matrix g = Matrix::Zero(4, 1);
  g(1, 0) = 1.0;
  g(2, 0) = 0.1;
  const ReplacementResult r = replace_unused(dico, {0, 3, 0, 3}, make_cands(g, {1}), {}, {false, true, false, false});
  // Atom 0 (score zero) comes first but the candidate is coherent with atom 1.
  EXPECT_TRUE(r.dictionary.atom(0).isApprox(dico.atom(0)));
  EXPECT_TRUE(r.dictionary.atom(2).isApprox(dico.atom(2)));
  EXPECT_EQ(r.replaced, 0);
}

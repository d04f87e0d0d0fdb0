#include "itkrm/parallel.hpp"
#include "itkrm/rng.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <stdexcept>

using namespace itkrm;

TEST(CounterRng, SameKeySameSequence) {
  CounterRng a(7, 3, 11), b(7, 3, 11), c(7, 3, 12), e(7, 4, 11);
  for (int i = 0; i < 100; ++i) {
    const auto va = a();
    EXPECT_EQ(va, b());
    (void)c();
    (void)e();
  }
  CounterRng a2(7, 3, 11), c2(7, 3, 12), e2(7, 4, 11);
  EXPECT_NE(a2(), c2());
  EXPECT_NE(CounterRng(7, 3, 11)(), e2());
}

TEST(CounterRng, UniformMomentsAndRange) {
  CounterRng rng(1);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sq += u * u;
  }
  // Mean 1/2 and variance 1/12 within 5 standard errors.
  EXPECT_NEAR(sum / n, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
  EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12.0, 0.002);
}

TEST(CounterRng, NormalMoments) {
  CounterRng rng(2);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0, s4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s1 += x;
    s2 += x * x;
    s4 += x * x * x * x;
  }
  EXPECT_NEAR(s1 / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 5.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(s4 / n, 3.0, 5.0 * std::sqrt(96.0 / n));
}

TEST(CounterRng, BelowIsUniformOverSmallRange) {
  CounterRng rng(3);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[rng.below(7)];
  for (int c : counts) EXPECT_NEAR(c, n / 7.0, 5.0 * std::sqrt(n / 7.0));
}

TEST(CounterRng, UnitVectorHasUnitNorm) {
  CounterRng rng(4);
  for (int i = 0; i < 50; ++i) EXPECT_NEAR(rng.unit_vector(9).norm(), 1.0, 1e-14);
}

TEST(Parallel, RunsEveryTaskOnce) {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t t) { hits[t]++; }, 4);
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(Parallel, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(
                   50, [](std::size_t t) {
                     if (t == 17) throw std::runtime_error("boom");
                   },
                   3),
               std::runtime_error);
}

TEST(Parallel, TreeReduceOrderIsFixed) {
  // Floating-point sums whose result depends on association order.
  std::vector<double> values;
  for (int i = 0; i < 37; ++i) values.push_back(std::pow(10.0, (i % 7) * 3) * (i % 2 ? 1.0 : -1.0) + 0.1 * i);
  auto a = values, b = values;
  tree_reduce(a, [](double& x, const double& y) { x += y; });
  tree_reduce(b, [](double& x, const double& y) { x += y; });
  EXPECT_EQ(a[0], b[0]);
  std::vector<int> ints(13);
  std::iota(ints.begin(), ints.end(), 1);
  tree_reduce(ints, [](int& x, const int& y) { x += y; });
  EXPECT_EQ(ints[0], 91);
}

TEST(Parallel, WorkerCountFromEnvironment) {
  ::setenv("ITKRM_WORKERS", "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  ::setenv("ITKRM_WORKERS", "nonsense", 1);
  EXPECT_GE(worker_count(), 1u);
  ::unsetenv("ITKRM_WORKERS");
}

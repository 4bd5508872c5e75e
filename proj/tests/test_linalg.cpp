#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>

#include "scsp/linalg.hpp"
#include "test_util.hpp"

namespace scsp {
namespace {

TEST(Eigh, IdentityHasUnitEigenvalues) {
  const auto r = eigh_symmetric(DenseMatrix::identity(2));
  EXPECT_DOUBLE_EQ(r.eigenvalues[0], 1.0);
  EXPECT_DOUBLE_EQ(r.eigenvalues[1], 1.0);
}

TEST(Eigh, DiagonalGivesAxisVectors) {
  DenseMatrix a(2, 2);
  a(0, 0) = 3.0;
  a(1, 1) = 2.0;
  const auto r = eigh_symmetric(a);
  EXPECT_DOUBLE_EQ(r.eigenvalues[0], 2.0);
  EXPECT_DOUBLE_EQ(r.eigenvalues[1], 3.0);
  EXPECT_DOUBLE_EQ(std::abs(r.eigenvectors(1, 0)), 1.0);
  EXPECT_DOUBLE_EQ(std::abs(r.eigenvectors(0, 1)), 1.0);
}

TEST(Eigh, TwoByTwoLaplacian) {
  // lambda^2 - 2 lambda = 0
  const DenseMatrix a(2, 2, {1.0, -1.0, -1.0, 1.0});
  const auto r = eigh_symmetric(a);
  EXPECT_NEAR(r.eigenvalues[0], 0.0, 1e-14);
  EXPECT_NEAR(r.eigenvalues[1], 2.0, 1e-14);
}

TEST(Eigh, RejectsBadInput) {
  EXPECT_THROW(eigh_symmetric(DenseMatrix(2, 3)), DimensionError);
  DenseMatrix a = DenseMatrix::identity(2);
  a(0, 1) = a(1, 0) = std::nan("");
  EXPECT_THROW(eigh_symmetric(a), NumericError);
  DenseMatrix b = DenseMatrix::identity(2);
  b(0, 1) = 1e-3;
  EXPECT_THROW(eigh_symmetric(b), ContractError);
}

TEST(Eigh, InvariantsOnRandomMatrices) {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 40);
    const auto a = testing::random_symmetric(n, rng, trial % 3 == 0 ? 100.0 : 1.0);
    const auto r = eigh_symmetric(a);
    ASSERT_TRUE(std::is_sorted(r.eigenvalues.begin(), r.eigenvalues.end()));
    const auto& v = r.eigenvectors;
    const auto vtv = matmul(v.transpose(), v);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) ASSERT_NEAR(vtv(i, j), i == j ? 1.0 : 0.0, 1e-8);
    double tr = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) tr += a(i, i);
    for (double l : r.eigenvalues) sum += l;
    EXPECT_NEAR(sum, tr, 1e-8 * std::max(1.0, a.max_abs()));
  }
}

TEST(Eigh, AgreesWithEigenSelfAdjointSolver) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 30);
    const auto a = testing::random_symmetric(n, rng);
    Eigen::MatrixXd m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m(i, j) = a(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(m);
    const auto r = eigh_symmetric(a);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(r.eigenvalues[i], ref.eigenvalues()(i), 1e-9);
  }
}

TEST(KMeans, SinglePoint) {
  const DenseMatrix p(1, 2, {3.0, -1.0});
  const auto r = kmeans(p, 1, 5);
  EXPECT_EQ(r.labels, std::vector<int>{0});
  EXPECT_EQ(r.centers.row(0)[0], 3.0);
  EXPECT_EQ(r.centers.row(0)[1], -1.0);
  EXPECT_EQ(r.objective, 0.0);
}

TEST(KMeans, TwoWellSeparatedPairs) {
  const DenseMatrix p(4, 1, {0.0, 0.1, 10.0, 10.1});
  const auto bf = testing::brute_force_kmeans_1d({0.0, 0.1, 10.0, 10.1}, 2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = kmeans(p, 2, seed);
    EXPECT_TRUE(testing::same_partition(r.labels, bf.labels));
    EXPECT_NEAR(r.objective, bf.objective, 1e-12);
  }
  EXPECT_TRUE(testing::same_partition(bf.labels, {0, 0, 1, 1}));
}

TEST(KMeans, SaturatedKGivesZeroObjective) {
  const DenseMatrix p(5, 1, {4.0, -2.0, 7.5, 0.0, 1.0});
  const auto r = kmeans(p, 5, 3);
  EXPECT_EQ(r.objective, 0.0);
  std::vector<int> sorted = r.labels;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(KMeans, ParameterErrors) {
  const DenseMatrix p(3, 1, {0.0, 1.0, 2.0});
  EXPECT_THROW(kmeans(p, 0, 1), ParameterError);
  EXPECT_THROW(kmeans(p, 4, 1), ParameterError);
  EXPECT_THROW(kmeans(p, 2, 1, 0), ParameterError);
}

TEST(KMeans, IdenticalPointsStillFillEveryCluster) {
  const DenseMatrix p(6, 2, 1.0);
  const auto r = kmeans(p, 3, 9);
  std::vector<int> counts(3, 0);
  for (int l : r.labels) ++counts[static_cast<std::size_t>(l)];
  for (int c : counts) EXPECT_GT(c, 0);
  EXPECT_EQ(r.objective, 0.0);
}

TEST(KMeans, ObjectiveNonIncreasingAndDeterministic) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 20 + uniform_index(rng, 60);
    DenseMatrix p(n, 3);
    for (double& x : p.data()) x = normal01(rng);
    const std::size_t k = 2 + uniform_index(rng, 6);
    const auto r = kmeans(p, k, 100 + trial);
    for (std::size_t i = 1; i < r.objective_history.size(); ++i)
      EXPECT_LE(r.objective_history[i], r.objective_history[i - 1] + 1e-12);
    EXPECT_NEAR(r.objective, kmeans_objective(p, r.labels, r.centers), 1e-12);
    const auto again = kmeans(p, k, 100 + trial);
    EXPECT_EQ(again.labels, r.labels);
  }
}

TEST(KMeans, BeatsRandomRelabelings) {
  Rng rng(21);
  DenseMatrix p(40, 2);
  for (double& x : p.data()) x = normal01(rng);
  const auto r = kmeans(p, 4, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<int> lab(40);
    for (auto& l : lab) l = static_cast<int>(uniform_index(rng, 4));
    // Objective of the relabeling with its own optimal centers.
    DenseMatrix c(4, 2);
    std::vector<double> cnt(4, 0.0);
    for (std::size_t i = 0; i < 40; ++i) {
      c(lab[i], 0) += p(i, 0);
      c(lab[i], 1) += p(i, 1);
      cnt[lab[i]] += 1;
    }
    for (std::size_t k = 0; k < 4; ++k)
      if (cnt[k] > 0) c(k, 0) /= cnt[k], c(k, 1) /= cnt[k];
    EXPECT_LE(r.objective, kmeans_objective(p, lab, c) + 1e-12);
  }
}

}  // namespace
}  // namespace scsp

#include "cacc/gp.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cacc::gp;

namespace {

TrainingSet window(double t0, std::vector<double> v) {
  TrainingSet s;
  for (std::size_t i = 0; i < v.size(); ++i) s.timestamps.push_back(t0 + 0.1 * static_cast<double>(i));
  s.velocities = std::move(v);
  return s;
}

}  // namespace

TEST(Kernel, Values) {
  EXPECT_DOUBLE_EQ(rbf_kernel(3.0, 3.0, 0.7), 1.0);
  EXPECT_NEAR(rbf_kernel(0.0, std::sqrt(2.0), 1.0), std::exp(-1.0), 1e-15);
  EXPECT_LT(rbf_kernel(0.0, 100.0, 1.0), 1e-12);
  EXPECT_THROW(rbf_kernel(0, 1, 0), std::invalid_argument);
}

TEST(Kernel, MatrixShapes) {
  const HyperParams h{1.0, 0.2};
  auto k = kernel_matrix({{0.0}, {1.0}}, h);
  ASSERT_EQ(k.rows(), 1);
  EXPECT_DOUBLE_EQ(k(0, 0), 1.0 + 0.04);

  k = kernel_matrix({{0.0, 1e-7}, {1.0, 1.0}}, h);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
  EXPECT_NEAR(es.eigenvalues()(0), 0.04, 1e-9);
  EXPECT_NEAR(es.eigenvalues()(1), 2.04, 1e-9);
}

TEST(Kernel, CholeskySucceedsAcrossGrid) {
  const auto w = window(0.0, {1, 2, 3, 4, 5});
  for (int i = 0; i < FitGrid::kSize; ++i)
    for (int j = 0; j < FitGrid::kSize; ++j) {
      const Eigen::LLT<Eigen::MatrixXd> llt(kernel_matrix(w, {FitGrid::length_scale(i), FitGrid::noise_std(j)}));
      EXPECT_EQ(llt.info(), Eigen::Success);
    }
}

TEST(HyperParams, Validation) {
  EXPECT_THROW((HyperParams{0.0, 0.1}.validate()), std::invalid_argument);
  EXPECT_THROW((HyperParams{1.0, 0.0}.validate()), std::invalid_argument);
  TrainingSet bad{{0.0, 0.0}, {1.0, 2.0}};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Predict, MatchesExplicitInverseOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> vel(0.0, 30.0), ls(0.05, 5.0), ns(0.01, 1.0), off(-0.5, 2.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Model m{{ls(rng), ns(rng)}, window(12.3, {vel(rng), vel(rng), vel(rng), vel(rng), vel(rng)})};
    std::vector<double> q;
    for (int j = 0; j < 10; ++j) q.push_back(12.3 + off(rng));
    const auto got = predict(m, q);
    const auto want = oracle::dense_gp(m, q);
    for (int j = 0; j < 10; ++j) {
      EXPECT_NEAR(got.mean[j], want.mean[j], 1e-9 * std::max(1.0, std::abs(want.mean[j])));
      EXPECT_NEAR(got.variance[j], std::max(0.0, want.variance[j]), 1e-9);
      EXPECT_GE(got.variance[j], 0.0);
      EXPECT_LE(got.variance[j], 1.0);
    }
  }
}

TEST(Predict, PriorAndInterpolationLimits) {
  const Model far{{0.3, 0.1}, window(0.0, {5, 6, 7, 8, 9})};
  const std::vector<double> q{100.0};
  const auto p = predict(far, q);
  EXPECT_NEAR(p.mean[0], 0.0, 1e-12);
  EXPECT_NEAR(p.variance[0], 1.0, 1e-12);

  const Model tight{{0.3, 1e-6}, window(0.0, {5, 6, 7, 8, 9})};
  const std::vector<double> at_train{0.2};
  EXPECT_NEAR(predict(tight, at_train).mean[0], 7.0, 1e-6);
}

TEST(Fit, ConstantVelocityPrefersLongestLengthScale) {
  const auto h = fit(window(0.0, {20, 20, 20, 20, 20}));
  EXPECT_DOUBLE_EQ(h.length_scale, FitGrid::kLengthMax);
}

TEST(Fit, TimeShiftInvariant) {
  const auto a = window(0.0, {0.3, -0.2, 0.1, 0.4, 0.0});
  auto b = a;
  for (double& t : b.timestamps) t += 37.0;
  EXPECT_EQ(fit(a), fit(b));
}

TEST(Fit, MatchesExhaustiveGridLikelihood) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    // Draw from a GP with length 0.3 s and noise 0.05.
    auto w = window(0.0, {0, 0, 0, 0, 0});
    Eigen::MatrixXd k = kernel_matrix(w, {0.3, 0.05});
    Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(k).matrixL();
    Eigen::VectorXd e(5);
    for (int i = 0; i < 5; ++i) e(i) = z(rng);
    const Eigen::VectorXd y = l * e;
    for (int i = 0; i < 5; ++i) w.velocities[i] = y(i);

    double best = -1e300;
    HyperParams want;
    for (int i = 0; i < FitGrid::kSize; ++i)
      for (int j = 0; j < FitGrid::kSize; ++j) {
        const HyperParams h{FitGrid::length_scale(i), FitGrid::noise_std(j)};
        const double ll = log_marginal_likelihood(w, h);
        if (ll > best + 1e-9 * std::abs(best)) {
          best = ll;
          want = h;
        }
      }
    const auto got = fit(w);
    EXPECT_NEAR(log_marginal_likelihood(w, got), best, 1e-8 * std::max(1.0, std::abs(best)));
  }
}

TEST(Fit, RejectsDegenerateInput) {
  EXPECT_THROW(fit(window(0.0, {1.0})), std::invalid_argument);
}

TEST(RelativeToLatest, SubtractsNewestSample) {
  const auto r = relative_to_latest(window(0.0, {18, 19, 20}));
  EXPECT_EQ(r.velocities, (std::vector<double>{-2, -1, 0}));
}

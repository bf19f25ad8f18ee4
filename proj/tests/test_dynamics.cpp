#include "cacc/dynamics.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace cacc;

namespace {

VehicleState at(double x, double v = 0.0, double a = 0.0) { return {x, v, a, 0.0}; }

bool has(const ViolationReport& r, ConstraintKind k) {
  return std::any_of(r.begin(), r.end(), [&](const auto& v) { return v.kind == k; });
}

}  // namespace

TEST(Gap, BumperArithmetic) {
  EXPECT_DOUBLE_EQ(gap(at(100), at(80), 5), 15.0);
  EXPECT_DOUBLE_EQ(gap(at(85), at(80), 5), 0.0);
  EXPECT_DOUBLE_EQ(gap(at(83), at(80), 5), -2.0);
}

TEST(DesiredSpacing, ConstantTimeGap) {
  VehicleParams p;
  EXPECT_DOUBLE_EQ(desired_spacing(p, 0.0), 2.0);
  EXPECT_DOUBLE_EQ(desired_spacing(p, 20.0), 14.0);
  EXPECT_DOUBLE_EQ(desired_spacing(p, 10.0), 8.0);
  EXPECT_THROW(desired_spacing(p, -1.0), std::invalid_argument);
}

TEST(ErrorState, Examples) {
  VehicleParams p;
  // gap = x_pred - x_fol - 5
  auto e = error_state(p, at(19, 20), at(0, 20));
  EXPECT_NEAR(e.spacing_error, 0.0, 1e-12);
  EXPECT_NEAR(e.velocity_error, 0.0, 1e-12);
  e = error_state(p, at(21, 22), at(0, 20));
  EXPECT_NEAR(e.spacing_error, 2.0, 1e-12);
  EXPECT_NEAR(e.velocity_error, 2.0, 1e-12);
  e = error_state(p, at(15, 18), at(0, 20));
  EXPECT_NEAR(e.spacing_error, -4.0, 1e-12);
  EXPECT_NEAR(e.velocity_error, -2.0, 1e-12);
}

TEST(Step, DrivelineReachesInputInOneStep) {
  VehicleParams p;  // f = 10, dt = 0.1
  for (double u : {-4.0, -1.3, 0.0, 2.2, 3.0}) {
    const auto s = step(p, at(0, 10, 0.7), u, 0.0, 0.1);
    EXPECT_NEAR(s.acceleration, u, 1e-15);
  }
}

TEST(Step, CoastingAndEuler) {
  VehicleParams p;
  auto s = step(p, at(0, 20, 0), 0.0, 0.0, 0.1);
  EXPECT_DOUBLE_EQ(s.position, 2.0);
  EXPECT_DOUBLE_EQ(s.velocity, 20.0);
  s = step(p, at(0, 0, 1), 1.0, 0.0, 0.1);
  EXPECT_DOUBLE_EQ(s.velocity, 0.1);
  EXPECT_DOUBLE_EQ(s.timestamp, 0.1);
  EXPECT_THROW(step(p, at(0), 0.0, 0.0, 0.0), std::invalid_argument);
}

TEST(Step, ErrorRecursionMatchesAbsoluteStates) {
  VehicleParams p;
  VehicleState pred = at(40, 22, 0.5), fol = at(10, 20, -0.3);
  auto e = error_state(p, pred, fol);
  const double up = 1.2, uf = -0.8;
  const auto pred2 = step(p, pred, up, 0.0, 0.1);
  const auto fol2 = step(p, fol, uf, pred.acceleration, 0.1);
  const auto e2 = step_error(p, e, uf, pred.acceleration, 0.1);
  const auto direct = error_state(p, pred2, fol2);
  EXPECT_NEAR(e2.spacing_error, direct.spacing_error, 1e-12);
  EXPECT_NEAR(e2.velocity_error, direct.velocity_error, 1e-12);
  EXPECT_NEAR(e2.acceleration, direct.acceleration, 1e-12);
}

TEST(HardConstraints, BoundaryIsFeasible) {
  VehicleParams p;
  EXPECT_TRUE(check_hard_constraints(p, at(0, p.speed_max, 3.0), 3.0, 0.01).empty());
}

TEST(HardConstraints, Violations) {
  VehicleParams p;
  auto r = check_hard_constraints(p, at(0, 10, 3.5), 0.0, 5.0);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].kind, ConstraintKind::AccelMax);
  EXPECT_NEAR(r[0].margin, 0.5, 1e-12);
  EXPECT_TRUE(has(check_hard_constraints(p, at(0, 10, 0), 0.0, 0.0), ConstraintKind::PositiveGap));
  EXPECT_TRUE(has(check_hard_constraints(p, at(0, 10, 0), -4.5, 1.0), ConstraintKind::InputMin));
  EXPECT_TRUE(has(check_hard_constraints(p, at(0, 31, 0), 0.0, 1.0), ConstraintKind::SpeedMax));
  // Tolerance absorbs round-off but not a real breach.
  EXPECT_TRUE(check_hard_constraints(p, at(0, 10, 3.0 + 1e-9), 0.0, 1.0, 1e-6).empty());
}

TEST(VehicleParams, Validation) {
  VehicleParams p;
  EXPECT_NO_THROW(p.validate());
  p.time_gap = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.accel_max = -1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

#pragma once

// Longitudinal vehicle model: gap geometry, constant time-gap spacing policy,
// forward-Euler propagation of the (position, velocity, acceleration) triple
// and hard-constraint checks.

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace cacc {

struct VehicleParams {
  double vehicle_length = 5.0;       // [m]
  double standstill_distance = 2.0;  // [m]
  double time_gap = 0.6;             // [s]
  double driveline_constant = 10.0;  // [1/s]
  double accel_min = -4.0;           // [m/s^2]
  double accel_max = 3.0;            // [m/s^2]
  double input_min = -4.0;           // [m/s^2]
  double input_max = 3.0;            // [m/s^2]
  double speed_max = 30.0;           // [m/s]

  void validate() const {
    auto require = [](bool ok, const char* field) {
      if (!ok) throw std::invalid_argument(std::string("VehicleParams.") + field + " out of range");
    };
    require(accel_min < 0.0 && accel_max > 0.0, "accel_min/accel_max");
    require(input_min < 0.0 && input_max > 0.0, "input_min/input_max");
    require(driveline_constant > 0.0, "driveline_constant");
    require(time_gap > 0.0, "time_gap");
    require(standstill_distance > 0.0, "standstill_distance");
    require(speed_max > 0.0, "speed_max");
    require(vehicle_length >= 0.0, "vehicle_length");
  }
};

struct VehicleState {
  double position = 0.0;      // rear bumper [m]
  double velocity = 0.0;      // [m/s]
  double acceleration = 0.0;  // [m/s^2]
  double timestamp = 0.0;     // [s]

  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

// S_n = [spacing error, velocity error, acceleration]
struct ErrorState {
  double spacing_error = 0.0;
  double velocity_error = 0.0;
  double acceleration = 0.0;
};

/// Bumper-to-bumper distance. The subtracted length is passed explicitly so the
/// caller decides whose length separates the bumpers; a negative result means
/// the vehicles overlap.
inline double gap(const VehicleState& predecessor, const VehicleState& follower, double length) {
  return predecessor.position - follower.position - length;
}

inline double desired_spacing(const VehicleParams& params, double velocity) {
  if (velocity < 0.0) throw std::invalid_argument("desired_spacing: negative velocity");
  return params.time_gap * velocity + params.standstill_distance;
}

inline ErrorState error_state(const VehicleParams& params, const VehicleState& predecessor,
                              const VehicleState& follower) {
  ErrorState e;
  e.spacing_error = gap(predecessor, follower, params.vehicle_length) -
                    desired_spacing(params, follower.velocity);
  e.velocity_error = predecessor.velocity - follower.velocity;
  e.acceleration = follower.acceleration;
  return e;
}

/// One forward-Euler step of the absolute kinematics. Velocity is floored at 0.
/// `predecessor_accel` only drives the error coordinates, which are derived on
/// demand from absolute states, so it does not enter the absolute update; it
/// is kept in the signature so error-state and absolute propagation share a call.
inline VehicleState step(const VehicleParams& params, const VehicleState& state, double input,
                         [[maybe_unused]] double predecessor_accel, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  VehicleState next;
  next.acceleration =
      state.acceleration + dt * params.driveline_constant * (input - state.acceleration);
  next.velocity = std::max(0.0, state.velocity + dt * state.acceleration);
  next.position = state.position + dt * state.velocity;
  next.timestamp = state.timestamp + dt;
  return next;
}

/// Error-state recursion S(k+1) = (I + dt A) S(k) + dt B u(k) + dt D a_pred(k).
inline ErrorState step_error(const VehicleParams& params, const ErrorState& s, double input,
                             double predecessor_accel, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_error: dt must be positive");
  ErrorState next;
  next.spacing_error = s.spacing_error + dt * (s.velocity_error - params.time_gap * s.acceleration);
  next.velocity_error = s.velocity_error + dt * (predecessor_accel - s.acceleration);
  next.acceleration = s.acceleration + dt * params.driveline_constant * (input - s.acceleration);
  return next;
}

enum class ConstraintKind { AccelMin, AccelMax, InputMin, InputMax, SpeedMax, PositiveGap };

inline const char* to_string(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::AccelMin: return "accel_min";
    case ConstraintKind::AccelMax: return "accel_max";
    case ConstraintKind::InputMin: return "input_min";
    case ConstraintKind::InputMax: return "input_max";
    case ConstraintKind::SpeedMax: return "speed_max";
    case ConstraintKind::PositiveGap: return "positive_gap";
  }
  return "unknown";
}

struct ConstraintViolation {
  ConstraintKind kind;
  double margin;  // amount by which the bound is exceeded (>= 0)
};

using ViolationReport = std::vector<ConstraintViolation>;

/// Checks acceleration, input and speed bounds (non-strict, with `tolerance`
/// slack) and the strictly positive gap.
inline ViolationReport check_hard_constraints(const VehicleParams& params, const VehicleState& state,
                                              double input, double gap_m, double tolerance = 0.0) {
  ViolationReport report;
  auto upper = [&](ConstraintKind kind, double value, double bound) {
    if (value > bound + tolerance) report.push_back({kind, value - bound});
  };
  auto lower = [&](ConstraintKind kind, double value, double bound) {
    if (value < bound - tolerance) report.push_back({kind, bound - value});
  };
  lower(ConstraintKind::AccelMin, state.acceleration, params.accel_min);
  upper(ConstraintKind::AccelMax, state.acceleration, params.accel_max);
  lower(ConstraintKind::InputMin, input, params.input_min);
  upper(ConstraintKind::InputMax, input, params.input_max);
  upper(ConstraintKind::SpeedMax, state.velocity, params.speed_max);
  if (!(gap_m > 0.0)) report.push_back({ConstraintKind::PositiveGap, -gap_m});
  return report;
}

}  // namespace cacc

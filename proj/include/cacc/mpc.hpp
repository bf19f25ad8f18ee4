#pragma once

// Per-vehicle receding-horizon controller. The horizon problem is assembled as
// a dense QP over the stacked decision vector
//
//   z = [ u(0..N-1) | S(1..N) | gap slack(1..N) | state-box slack (relaxed only) ]
//
// with S = [spacing error, velocity error, acceleration]. Own absolute
// velocity and position along the horizon are affine in the acceleration
// components of z, which keeps the multi-predecessor coupling cost quadratic.

#include "cacc/dynamics.hpp"
#include "cacc/qp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

namespace cacc::mpc {

struct Weights {
  // diag(1, 1, 0.1) and 0.1 scaled by 30 so the objective lands in the
  // range of the default trigger thresholds (200..700).
  Eigen::Matrix3d state_weight = Eigen::Vector3d(30.0, 30.0, 3.0).asDiagonal();  // Q
  Eigen::Vector3d state_reference = Eigen::Vector3d::Zero();                    // R
  double position_coupling = 3.0;  // c_d, default for every coupled predecessor
  double velocity_coupling = 3.0;  // c_v
  // Optional per-predecessor overrides keyed by vehicle index.
  std::map<int, double> position_coupling_by_vehicle;
  std::map<int, double> velocity_coupling_by_vehicle;

  double position_coupling_for(int vehicle) const {
    auto it = position_coupling_by_vehicle.find(vehicle);
    return it == position_coupling_by_vehicle.end() ? position_coupling : it->second;
  }
  double velocity_coupling_for(int vehicle) const {
    auto it = velocity_coupling_by_vehicle.find(vehicle);
    return it == velocity_coupling_by_vehicle.end() ? velocity_coupling : it->second;
  }

  void validate() const {
    if (!state_weight.isApprox(state_weight.transpose()))
      throw std::invalid_argument("Weights.state_weight must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(state_weight);
    if (es.eigenvalues().minCoeff() < -1e-12)
      throw std::invalid_argument("Weights.state_weight must be positive semidefinite");
    if (position_coupling < 0.0 || velocity_coupling < 0.0)
      throw std::invalid_argument("Weights coupling coefficients must be non-negative");
    for (const auto& [k, v] : position_coupling_by_vehicle)
      if (v < 0.0) throw std::invalid_argument("Weights.position_coupling_by_vehicle negative");
    for (const auto& [k, v] : velocity_coupling_by_vehicle)
      if (v < 0.0) throw std::invalid_argument("Weights.velocity_coupling_by_vehicle negative");
  }
};

/// Estimated trajectory of one predecessor over horizon steps 1..N. The
/// acceleration entry k is the mean acceleration over [t+k*dt, t+(k+1)*dt],
/// i.e. the disturbance a_{n-1}(k) of the error-state recursion.
struct NeighborForecast {
  int vehicle_index = -1;
  std::vector<double> timestamps;
  std::vector<double> positions;
  std::vector<double> velocities;
  std::vector<double> accelerations;
};

/// Everything one vehicle knows when it plans.
struct PlanRequest {
  VehicleParams params;
  Weights weights;
  int ego_index = 0;
  VehicleState current;
  ErrorState current_error;          // sensed (followers) or reference-relative (leader)
  double previous_input = 0.0;
  std::vector<double> predecessor_accel;   // N entries; zeros if unknown
  std::vector<NeighborForecast> forecasts; // coupled predecessors, any order
  int horizon = 10;
  double dt = 0.1;
  bool is_leader = false;
  bool relax_state_bounds = false;

  // Soft positive-gap constraint.
  double gap_margin = 0.1;           // epsilon [m]
  double gap_slack_penalty = 1e4;    // per m^2
  double state_slack_penalty = 1e4;  // relaxed state-box rows
};

enum class SolveStatus { Optimal, InfeasibleRelaxed };

struct HorizonPlan {
  std::vector<double> inputs;               // u(0..N-1)
  std::vector<VehicleState> predicted_states;  // k = 0..N
  std::vector<ErrorState> predicted_errors;    // k = 0..N
  double objective_value = 0.0;             // tracking + coupling cost, no slack penalties
  double slack_penalty = 0.0;
  SolveStatus status = SolveStatus::Optimal;
  double kkt_residual = 0.0;

  std::vector<double> predicted_velocities() const {
    std::vector<double> v;
    for (std::size_t k = 1; k < predicted_states.size(); ++k) v.push_back(predicted_states[k].velocity);
    return v;
  }
};

/// Index bookkeeping for the stacked decision vector.
struct Layout {
  int horizon = 0;
  bool gap_slacks = false;
  int state_box_rows = 0;  // relaxed mode: one slack per state-box row

  int input(int k) const { return k; }
  int state(int k, int component) const { return horizon + 3 * (k - 1) + component; }  // k = 1..N
  int gap_slack(int k) const { return 4 * horizon + (k - 1); }
  int state_slack(int row) const { return 4 * horizon + (gap_slacks ? horizon : 0) + row; }
  int size() const { return 4 * horizon + (gap_slacks ? horizon : 0) + state_box_rows; }
};

struct MpcProblem {
  qp::Problem qp;
  Layout layout;
  std::vector<int> state_box_rows;  // inequality rows that bound states
  std::vector<int> penalty_variables;
  std::vector<double> penalty_weights;
};

namespace detail {

// a' z + c
struct Affine {
  Eigen::VectorXd coef;
  double c = 0.0;
};

inline void add_square(qp::Problem& p, double w, const Affine& e) {
  if (w == 0.0) return;
  p.hessian.noalias() += 2.0 * w * e.coef * e.coef.transpose();
  p.linear += 2.0 * w * e.c * e.coef;
  p.constant += w * e.c * e.c;
}

struct RowBuilder {
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> rhs;
  void add(const Affine& e, double bound) {  // e <= bound
    rows.push_back(e.coef);
    rhs.push_back(bound - e.c);
  }
  void fill(Eigen::MatrixXd& m, Eigen::VectorXd& v, Eigen::Index n) const {
    m.resize(static_cast<Eigen::Index>(rows.size()), n);
    v.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
      v(static_cast<Eigen::Index>(i)) = rhs[i];
    }
  }
};

inline const NeighborForecast* find_forecast(const std::vector<NeighborForecast>& fs, int index) {
  for (const auto& f : fs)
    if (f.vehicle_index == index) return &f;
  return nullptr;
}

}  // namespace detail

inline void validate_request(const PlanRequest& req) {
  if (req.horizon < 1) throw std::invalid_argument("mpc: horizon must be at least 1");
  if (!(req.dt > 0.0)) throw std::invalid_argument("mpc: dt must be positive");
  const auto n = static_cast<std::size_t>(req.horizon);
  if (req.predecessor_accel.size() != n)
    throw std::invalid_argument("mpc: predecessor_accel length must equal horizon");
  for (const auto& f : req.forecasts) {
    if (f.positions.size() != n || f.velocities.size() != n || f.accelerations.size() != n ||
        f.timestamps.size() != n)
      throw std::invalid_argument("mpc: forecast length must equal horizon");
    if (f.vehicle_index < 0 || f.vehicle_index >= req.ego_index)
      throw std::invalid_argument("mpc: forecasts must come from predecessors");
  }
  req.params.validate();
  req.weights.validate();
}

inline MpcProblem build_qp(const PlanRequest& req) {
  validate_request(req);
  const int N = req.horizon;
  const double dt = req.dt;
  const auto& P = req.params;

  MpcProblem out;
  Layout& L = out.layout;
  L.horizon = N;
  L.gap_slacks = !req.is_leader;
  // State-box rows: a >= a_min, a <= a_max, v <= v_max for each k = 1..N.
  L.state_box_rows = req.relax_state_bounds ? 3 * N : 0;
  const int nz = L.size();

  qp::Problem& p = out.qp;
  p.hessian = Eigen::MatrixXd::Zero(nz, nz);
  p.linear = Eigen::VectorXd::Zero(nz);
  p.constant = 0.0;

  auto var = [&](int index) {
    detail::Affine e{Eigen::VectorXd::Zero(nz), 0.0};
    e.coef(index) = 1.0;
    return e;
  };
  auto constant = [&](double c) { return detail::Affine{Eigen::VectorXd::Zero(nz), c}; };

  // Error-state recursion as equality rows: S(k+1) - (I + dt A) S(k) - dt B u(k) = dt D a_p(k).
  const double f = P.driveline_constant, delta = P.time_gap;
  std::vector<detail::Affine> dd(N + 1), dv(N + 1), acc(N + 1);
  dd[0] = constant(req.current_error.spacing_error);
  dv[0] = constant(req.current_error.velocity_error);
  acc[0] = constant(req.current.acceleration);
  for (int k = 1; k <= N; ++k) {
    dd[k] = var(L.state(k, 0));
    dv[k] = var(L.state(k, 1));
    acc[k] = var(L.state(k, 2));
  }
  {
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> rhs;
    auto equal = [&](const detail::Affine& lhs, const detail::Affine& rhs_expr) {
      rows.push_back(lhs.coef - rhs_expr.coef);
      rhs.push_back(rhs_expr.c - lhs.c);
    };
    for (int k = 0; k < N; ++k) {
      const double ap = req.predecessor_accel[static_cast<std::size_t>(k)];
      detail::Affine next_dd{dd[k].coef + dt * dv[k].coef - dt * delta * acc[k].coef,
                             dd[k].c + dt * dv[k].c - dt * delta * acc[k].c};
      detail::Affine next_dv{dv[k].coef - dt * acc[k].coef, dv[k].c - dt * acc[k].c + dt * ap};
      detail::Affine u = var(L.input(k));
      detail::Affine next_a{(1.0 - dt * f) * acc[k].coef + dt * f * u.coef, (1.0 - dt * f) * acc[k].c};
      equal(dd[k + 1], next_dd);
      equal(dv[k + 1], next_dv);
      equal(acc[k + 1], next_a);
    }
    p.eq_matrix.resize(static_cast<Eigen::Index>(rows.size()), nz);
    p.eq_rhs.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      p.eq_matrix.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
      p.eq_rhs(static_cast<Eigen::Index>(i)) = rhs[i];
    }
  }

  // Own absolute velocity and position: v(k+1) = v(k) + dt a(k), x(k+1) = x(k) + dt v(k).
  std::vector<detail::Affine> vel(N + 1), pos(N + 1);
  vel[0] = constant(req.current.velocity);
  pos[0] = constant(req.current.position);
  for (int k = 0; k < N; ++k) {
    vel[k + 1] = {vel[k].coef + dt * acc[k].coef, vel[k].c + dt * acc[k].c};
    pos[k + 1] = {pos[k].coef + dt * vel[k].coef, pos[k].c + dt * vel[k].c};
  }

  // Tracking cost over the predicted states k = 1..N.
  Eigen::Matrix3d Q = req.weights.state_weight;
  if (req.is_leader) {
    // No spacing error for the leader.
    Q.row(0).setZero();
    Q.col(0).setZero();
  }
  const Eigen::Vector3d& R = req.weights.state_reference;
  for (int k = 1; k <= N; ++k) {
    const detail::Affine e[3] = {{dd[k].coef, dd[k].c - R(0)},
                                 {dv[k].coef, dv[k].c - R(1)},
                                 {acc[k].coef, acc[k].c - R(2)}};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double w = Q(i, j);
        if (w == 0.0) continue;
        p.hessian.noalias() += w * (e[i].coef * e[j].coef.transpose() + e[j].coef * e[i].coef.transpose());
        p.linear += w * (e[i].c * e[j].coef + e[j].c * e[i].coef);
        p.constant += w * e[i].c * e[j].c;
      }
    }
  }

  // Multi-predecessor coupling.
  if (!req.is_leader) {
    const int n = req.ego_index;
    for (const auto& fc : req.forecasts) {
      const int i = fc.vehicle_index;
      const double cd = req.weights.position_coupling_for(i);
      const double cv = req.weights.velocity_coupling_for(i);
      for (int k = 1; k <= N; ++k) {
        const auto s = static_cast<std::size_t>(k - 1);
        // x_i - x_n - sum_{j=i+1}^{n} (d*_j + l_j); d*_n uses own predicted velocity.
        double offset = 0.0;
        for (int j = i + 1; j < n; ++j) {
          const NeighborForecast* fj = detail::find_forecast(req.forecasts, j);
          const double vj = fj ? fj->velocities[s] : fc.velocities[s];
          offset += P.time_gap * std::max(0.0, vj) + P.standstill_distance + P.vehicle_length;
        }
        offset += P.standstill_distance + P.vehicle_length;
        detail::Affine pos_err{-pos[k].coef - P.time_gap * vel[k].coef,
                               fc.positions[s] - pos[k].c - P.time_gap * vel[k].c - offset};
        detail::add_square(p, cd, pos_err);
        detail::Affine vel_err{-vel[k].coef, fc.velocities[s] - vel[k].c};
        detail::add_square(p, cv, vel_err);
      }
    }
  }

  // Inequalities.
  detail::RowBuilder rb;
  for (int k = 0; k < N; ++k) {
    const auto u = var(L.input(k));
    rb.add(u, P.input_max);
    rb.add({-u.coef, -u.c}, -P.input_min);
  }
  for (int k = 0; k < N; ++k) {
    const auto u = var(L.input(k));
    const auto prev = k == 0 ? constant(req.previous_input) : var(L.input(k - 1));
    const detail::Affine rate{u.coef - prev.coef, u.c - prev.c};
    rb.add(rate, dt * P.input_max);
    rb.add({-rate.coef, -rate.c}, -dt * P.input_min);
  }
  int box = 0;
  auto add_box = [&](detail::Affine e, double bound) {
    if (req.relax_state_bounds) e.coef(L.state_slack(box)) = -1.0;
    out.state_box_rows.push_back(static_cast<int>(rb.rows.size()));
    rb.add(e, bound);
    ++box;
  };
  for (int k = 1; k <= N; ++k) {
    add_box(acc[k], P.accel_max);
    add_box({-acc[k].coef, -acc[k].c}, -P.accel_min);
    add_box(vel[k], P.speed_max);
  }
  if (L.gap_slacks) {
    // gap(k) = dd(k) + delta v(k) + d_s >= eps - s_k
    for (int k = 1; k <= N; ++k) {
      detail::Affine e{-(dd[k].coef + P.time_gap * vel[k].coef),
                       -(dd[k].c + P.time_gap * vel[k].c + P.standstill_distance)};
      e.coef(L.gap_slack(k)) = -1.0;
      rb.add(e, -req.gap_margin);
      rb.add({-var(L.gap_slack(k)).coef, 0.0}, 0.0);
      out.penalty_variables.push_back(L.gap_slack(k));
      out.penalty_weights.push_back(req.gap_slack_penalty);
    }
  }
  if (req.relax_state_bounds) {
    for (int row = 0; row < L.state_box_rows; ++row) {
      rb.add({-var(L.state_slack(row)).coef, 0.0}, 0.0);
      out.penalty_variables.push_back(L.state_slack(row));
      out.penalty_weights.push_back(req.state_slack_penalty);
    }
  }
  for (std::size_t i = 0; i < out.penalty_variables.size(); ++i) {
    const int v = out.penalty_variables[i];
    p.hessian(v, v) += 2.0 * out.penalty_weights[i];
  }
  rb.fill(p.in_matrix, p.in_rhs, nz);
  return out;
}

/// Tracking + coupling cost evaluated directly on a trajectory, independently
/// of the QP matrices.
inline double evaluate_cost(const PlanRequest& req, const std::vector<VehicleState>& states,
                            const std::vector<ErrorState>& errors) {
  const int N = req.horizon;
  const auto& P = req.params;
  Eigen::Matrix3d Q = req.weights.state_weight;
  if (req.is_leader) {
    Q.row(0).setZero();
    Q.col(0).setZero();
  }
  double cost = 0.0;
  for (int k = 1; k <= N; ++k) {
    const auto& e = errors[static_cast<std::size_t>(k)];
    const Eigen::Vector3d s =
        Eigen::Vector3d(e.spacing_error, e.velocity_error, e.acceleration) - req.weights.state_reference;
    cost += s.dot(Q * s);
    if (req.is_leader) continue;
    const auto& own = states[static_cast<std::size_t>(k)];
    const auto step = static_cast<std::size_t>(k - 1);
    for (const auto& fc : req.forecasts) {
      const int i = fc.vehicle_index;
      double spacing = 0.0;
      for (int j = i + 1; j <= req.ego_index; ++j) {
        double vj;
        if (j == req.ego_index) {
          vj = own.velocity;
        } else {
          const NeighborForecast* fj = detail::find_forecast(req.forecasts, j);
          vj = std::max(0.0, fj ? fj->velocities[step] : fc.velocities[step]);
        }
        spacing += desired_spacing(P, std::max(0.0, vj)) + P.vehicle_length;
      }
      const double ep = fc.positions[step] - own.position - spacing;
      const double ev = fc.velocities[step] - own.velocity;
      cost += req.weights.position_coupling_for(i) * ep * ep +
              req.weights.velocity_coupling_for(i) * ev * ev;
    }
  }
  return cost;
}

inline HorizonPlan extract_plan(const PlanRequest& req, const MpcProblem& mp, const qp::Solution& sol) {
  const auto& L = mp.layout;
  HorizonPlan plan;
  const int N = req.horizon;
  plan.inputs.resize(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) plan.inputs[static_cast<std::size_t>(k)] = sol.z(L.input(k));

  plan.predicted_states.push_back(req.current);
  plan.predicted_errors.push_back(req.current_error);
  VehicleState s = req.current;
  for (int k = 1; k <= N; ++k) {
    VehicleState next;
    next.acceleration = sol.z(L.state(k, 2));
    next.velocity = s.velocity + req.dt * s.acceleration;
    next.position = s.position + req.dt * s.velocity;
    next.timestamp = req.current.timestamp + k * req.dt;
    plan.predicted_states.push_back(next);
    plan.predicted_errors.push_back(
        {sol.z(L.state(k, 0)), sol.z(L.state(k, 1)), sol.z(L.state(k, 2))});
    s = next;
  }
  double penalty = 0.0;
  for (std::size_t i = 0; i < mp.penalty_variables.size(); ++i) {
    const double v = sol.z(mp.penalty_variables[i]);
    penalty += mp.penalty_weights[i] * v * v;
  }
  plan.slack_penalty = penalty;
  plan.objective_value = sol.objective - penalty;
  plan.kkt_residual = qp::kkt_residuals(mp.qp, sol).max();
  return plan;
}

inline qp::Solution solve_qp(const qp::Problem& problem) { return qp::solve(problem); }

/// build_qp + solve_qp; falls back to relaxed state bounds when infeasible.
inline HorizonPlan plan(const PlanRequest& request) {
  PlanRequest req = request;
  req.relax_state_bounds = false;
  auto mp = build_qp(req);
  auto sol = solve_qp(mp.qp);
  bool relaxed = false;
  if (sol.status != qp::Status::Optimal) {
    req.relax_state_bounds = true;
    mp = build_qp(req);
    sol = solve_qp(mp.qp);
    relaxed = true;
    if (sol.status != qp::Status::Optimal)
      throw std::runtime_error("mpc: relaxed problem infeasible (input or rate bounds inconsistent)");
  }
  auto out = extract_plan(req, mp, sol);
  out.status = relaxed ? SolveStatus::InfeasibleRelaxed : SolveStatus::Optimal;
  return out;
}

}  // namespace cacc::mpc

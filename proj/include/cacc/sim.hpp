#pragma once

// Scenario orchestration: the fixed-step loop wiring vehicle dynamics, MPC,
// triggering, the lossy channel and the estimators; metrics and Monte-Carlo
// batches.

#include "cacc/comms.hpp"
#include "cacc/dynamics.hpp"
#include "cacc/estimator.hpp"
#include "cacc/gp.hpp"
#include "cacc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>
#include <exception>
#include <thread>
#include <utility>
#include <vector>

namespace cacc::sim {

/// Piecewise-linear reference speed for the leader; constant outside the knots.
struct LeaderProfile {
  std::vector<std::pair<double, double>> knots{{0.0, 15.0}, {5.0, 15.0}, {15.0, 25.0},
                                               {35.0, 25.0}, {45.0, 18.0}, {60.0, 18.0}};

  double speed(double t) const {
    if (knots.empty()) throw std::logic_error("LeaderProfile: no knots");
    if (t <= knots.front().first) return knots.front().second;
    for (std::size_t i = 1; i < knots.size(); ++i) {
      const auto [t1, v1] = knots[i];
      if (t <= t1) {
        const auto [t0, v0] = knots[i - 1];
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
      }
    }
    return knots.back().second;
  }

  void validate() const {
    if (knots.empty()) throw std::invalid_argument("leader_profile: needs at least one knot");
    for (std::size_t i = 0; i < knots.size(); ++i) {
      if (knots[i].second < 0.0) throw std::invalid_argument("leader_profile: negative speed");
      if (i > 0 && !(knots[i].first > knots[i - 1].first))
        throw std::invalid_argument("leader_profile: knot times must be strictly increasing");
    }
  }
};

struct ScenarioConfig {
  int vehicle_count = 10;
  double duration = 60.0;  // [s]
  double step = 0.1;       // [s]
  double per = 0.0;
  comms::TriggerPolicy policy;
  mpc::Weights weights;
  VehicleParams params;
  LeaderProfile leader_profile;
  std::uint64_t seed = 1;
  int horizon = 10;
  double warmup = 0.5;            // [s] transmit every slot before this time
  double gap_margin = 0.1;        // [m]
  double gap_slack_penalty = 1e4;

  int step_count() const { return static_cast<int>(std::llround(duration / step)); }

  void validate() const {
    if (vehicle_count < 2) throw std::invalid_argument("vehicle_count: must be at least 2");
    if (!(step > 0.0)) throw std::invalid_argument("step: must be positive");
    if (!(duration > 0.0)) throw std::invalid_argument("duration: must be positive");
    const double ratio = duration / step;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio))
      throw std::invalid_argument("duration: must be an integer multiple of step");
    if (!(per >= 0.0 && per <= 1.0)) throw std::invalid_argument("per: must lie in [0, 1]");
    if (horizon < static_cast<int>(comms::kForecastSize))
      throw std::invalid_argument("horizon: must be at least 10 (MBC forecast length)");
    if (warmup < 0.0) throw std::invalid_argument("warmup: must be non-negative");
    policy.validate();
    weights.validate();
    params.validate();
    leader_profile.validate();
  }
};

struct TraceRow {
  int step = 0;
  double time = 0.0;
  int vehicle = 0;
  double position = 0.0;
  double velocity = 0.0;
  double acceleration = 0.0;
  double input = 0.0;
  double gap = std::numeric_limits<double>::quiet_NaN();          // NaN for the leader
  double desired_gap = std::numeric_limits<double>::quiet_NaN();  // NaN for the leader
  double cost = 0.0;
  bool event = false;
  std::vector<int> delivered_to;
  double kkt_residual = 0.0;
  bool relaxed = false;
};

struct TraceLog {
  int vehicle_count = 0;
  int step_count = 0;
  double step = 0.0;
  double duration = 0.0;
  std::vector<TraceRow> rows;  // step-major, vehicle-minor

  const TraceRow& at(int k, int n) const {
    return rows[static_cast<std::size_t>(k) * static_cast<std::size_t>(vehicle_count) +
                static_cast<std::size_t>(n)];
  }
};

struct Metrics {
  double mean_spacing_error = 0.0;         // [m]
  double mean_speed_difference = 0.0;      // [m/s]
  double mean_acceleration_difference = 0.0;  // [m/s^2]
  double mean_comm_rate = 0.0;             // [Hz] per vehicle
  double mean_delivery_rate = 0.0;         // [Hz] per (sender, receiver) link
  bool collision = false;
  double min_gap = std::numeric_limits<double>::infinity();
  int constraint_violations = 0;           // applied steps outside accel/input/rate bounds
  double max_kkt_residual = 0.0;
  int relaxed_solves = 0;
  std::vector<std::vector<double>> per_vehicle_event_times;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

inline constexpr double kBoundTolerance = 1e-6;

/// Metrics recomputed purely from a trace.
inline Metrics compute_metrics(const TraceLog& trace, const VehicleParams& params) {
  const int nv = trace.vehicle_count, K = trace.step_count;
  if (nv < 1 || K < 1 || trace.rows.size() != static_cast<std::size_t>(nv) * static_cast<std::size_t>(K))
    throw std::invalid_argument("compute_metrics: incomplete trace");
  Metrics m;
  m.per_vehicle_event_times.assign(static_cast<std::size_t>(nv), {});
  double spacing_sum = 0.0, speed_sum = 0.0, accel_sum = 0.0;
  long spacing_count = 0, events = 0, deliveries = 0;
  std::vector<double> prev_input(static_cast<std::size_t>(nv), 0.0);
  for (int k = 0; k < K; ++k) {
    double vmax = -std::numeric_limits<double>::infinity(), vmin = -vmax;
    double amax = vmax, amin = vmin;
    for (int n = 0; n < nv; ++n) {
      const auto& r = trace.at(k, n);
      if (r.step != k || r.vehicle != n) throw std::invalid_argument("compute_metrics: rows out of order");
      vmax = std::max(vmax, r.velocity);
      vmin = std::min(vmin, r.velocity);
      amax = std::max(amax, r.acceleration);
      amin = std::min(amin, r.acceleration);
      if (n > 0) {
        spacing_sum += std::abs(r.gap - r.desired_gap);
        ++spacing_count;
        m.min_gap = std::min(m.min_gap, r.gap);
        if (!(r.gap > 0.0)) m.collision = true;
      }
      if (r.event) {
        ++events;
        m.per_vehicle_event_times[static_cast<std::size_t>(n)].push_back(r.time);
        deliveries += static_cast<long>(r.delivered_to.size());
      }
      const bool bad =
          r.acceleration < params.accel_min - kBoundTolerance ||
          r.acceleration > params.accel_max + kBoundTolerance ||
          r.input < params.input_min - kBoundTolerance || r.input > params.input_max + kBoundTolerance ||
          (k > 0 && (r.input - prev_input[static_cast<std::size_t>(n)] > trace.step * params.input_max + kBoundTolerance ||
                     r.input - prev_input[static_cast<std::size_t>(n)] < trace.step * params.input_min - kBoundTolerance));
      if (bad) ++m.constraint_violations;
      prev_input[static_cast<std::size_t>(n)] = r.input;
      m.max_kkt_residual = std::max(m.max_kkt_residual, r.kkt_residual);
      if (r.relaxed) ++m.relaxed_solves;
    }
    speed_sum += vmax - vmin;
    accel_sum += amax - amin;
  }
  m.mean_spacing_error = spacing_count > 0 ? spacing_sum / static_cast<double>(spacing_count) : 0.0;
  m.mean_speed_difference = speed_sum / K;
  m.mean_acceleration_difference = accel_sum / K;
  m.mean_comm_rate = static_cast<double>(events) / (nv * trace.duration);
  // Deliveries per directed link (sender ahead of receiver) per second.
  const double link_count = 0.5 * nv * (nv - 1);
  m.mean_delivery_rate = link_count > 0 ? static_cast<double>(deliveries) / (link_count * trace.duration) : 0.0;
  return m;
}

struct ScenarioResult {
  Metrics metrics;
  TraceLog trace;
};

namespace detail {

struct VehicleRuntime {
  VehicleState state;
  double previous_input = 0.0;
  estimator::NeighborStore store;
  comms::TriggerState trigger;
  std::deque<std::pair<double, double>> history;  // (time, velocity), newest last
};

}  // namespace detail

/// Builds the horizon request vehicle `n` solves at the current step.
inline mpc::PlanRequest make_plan_request(const ScenarioConfig& cfg, int n,
                                          const std::vector<detail::VehicleRuntime>& vehicles, double now) {
  const int N = cfg.horizon;
  const double dt = cfg.step;
  const auto& self = vehicles[static_cast<std::size_t>(n)];
  mpc::PlanRequest req;
  req.params = cfg.params;
  req.weights = cfg.weights;
  req.ego_index = n;
  req.current = self.state;
  req.previous_input = self.previous_input;
  req.horizon = N;
  req.dt = dt;
  req.gap_margin = cfg.gap_margin;
  req.gap_slack_penalty = cfg.gap_slack_penalty;
  req.predecessor_accel.assign(static_cast<std::size_t>(N), 0.0);

  if (n == 0) {
    req.is_leader = true;
    const auto& prof = cfg.leader_profile;
    req.current_error = {0.0, prof.speed(now) - self.state.velocity, self.state.acceleration};
    for (int k = 0; k < N; ++k)
      req.predecessor_accel[static_cast<std::size_t>(k)] =
          (prof.speed(now + (k + 1) * dt) - prof.speed(now + k * dt)) / dt;
    return req;
  }

  const auto& ahead = vehicles[static_cast<std::size_t>(n - 1)].state;
  const auto sensed = estimator::sense_immediate_predecessor(cfg.params, self.state, ahead);
  req.current_error = {sensed.gap - desired_spacing(cfg.params, self.state.velocity),
                       sensed.relative_velocity, self.state.acceleration};
  for (int i = 0; i < n; ++i) {
    const auto* rec = self.store.find(i);
    if (!rec) continue;  // cold start: no coupling until first message
    auto fc = estimator::forecast_neighbor(*rec, now, N, dt);
    if (i == n - 1) req.predecessor_accel = fc.accelerations;
    req.forecasts.push_back(std::move(fc));
  }
  return req;
}

inline ScenarioResult run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  const int nv = cfg.vehicle_count;
  const int K = cfg.step_count();
  const double dt = cfg.step;

  std::vector<detail::VehicleRuntime> vehicles(static_cast<std::size_t>(nv));
  const double v0 = cfg.leader_profile.speed(0.0);
  const double spacing = desired_spacing(cfg.params, v0) + cfg.params.vehicle_length;
  for (int n = 0; n < nv; ++n) {
    auto& v = vehicles[static_cast<std::size_t>(n)];
    v.state = {-n * spacing, v0, 0.0, 0.0};
    // Steady cruise before t = 0 fills the first GP window.
    for (int j = static_cast<int>(comms::kWindowSize) - 1; j >= 1; --j) v.history.emplace_back(-j * dt, v0);
  }

  comms::Channel channel(cfg.per, cfg.seed);
  ScenarioResult result;
  auto& trace = result.trace;
  trace.vehicle_count = nv;
  trace.step_count = K;
  trace.step = dt;
  trace.duration = cfg.duration;
  trace.rows.reserve(static_cast<std::size_t>(nv) * static_cast<std::size_t>(K));

  std::vector<mpc::HorizonPlan> plans(static_cast<std::size_t>(nv));
  for (int k = 0; k < K; ++k) {
    const double now = k * dt;
    for (auto& v : vehicles) {
      v.history.emplace_back(now, v.state.velocity);
      while (v.history.size() > comms::kWindowSize) v.history.pop_front();
      v.state.timestamp = now;
    }

    // Plans read only information available at the start of the step.
    for (int n = 0; n < nv; ++n)
      plans[static_cast<std::size_t>(n)] = mpc::plan(make_plan_request(cfg, n, vehicles, now));

    std::vector<comms::MbcMessage> sent;
    std::vector<std::vector<int>> delivered(static_cast<std::size_t>(nv));
    std::vector<bool> fired(static_cast<std::size_t>(nv), false);
    for (int n = 0; n < nv; ++n) {
      auto& v = vehicles[static_cast<std::size_t>(n)];
      const auto& plan = plans[static_cast<std::size_t>(n)];
      const bool warm = now < cfg.warmup - comms::kTimeEpsilon;
      const bool fire =
          warm || comms::evaluate_trigger(cfg.policy, v.trigger, now, plan.objective_value) ==
                      comms::TriggerDecision::Fire;
      if (!fire) continue;
      fired[static_cast<std::size_t>(n)] = true;
      v.trigger.record(now);
      gp::TrainingSet window;
      for (const auto& [t, vel] : v.history) {
        window.timestamps.push_back(t);
        window.velocities.push_back(vel);
      }
      const gp::HyperParams hyper = gp::fit(gp::relative_to_latest(window));
      auto msg = comms::build_message(n, v.state, {hyper, window}, plan, now);
      std::vector<int> receivers;
      for (int r = n + 1; r < nv; ++r) receivers.push_back(r);
      delivered[static_cast<std::size_t>(n)] = channel.broadcast(msg, receivers);
      sent.push_back(std::move(msg));
    }
    for (const auto& msg : sent)
      for (int r : delivered[static_cast<std::size_t>(msg.sender_index)])
        vehicles[static_cast<std::size_t>(r)].store.ingest(msg);

    for (int n = 0; n < nv; ++n) {
      const auto& v = vehicles[static_cast<std::size_t>(n)];
      const auto& plan = plans[static_cast<std::size_t>(n)];
      TraceRow row;
      row.step = k;
      row.time = now;
      row.vehicle = n;
      row.position = v.state.position;
      row.velocity = v.state.velocity;
      row.acceleration = v.state.acceleration;
      row.input = plan.inputs.front();
      if (n > 0) {
        row.gap = gap(vehicles[static_cast<std::size_t>(n - 1)].state, v.state, cfg.params.vehicle_length);
        row.desired_gap = desired_spacing(cfg.params, v.state.velocity);
      }
      row.cost = plan.objective_value;
      row.event = fired[static_cast<std::size_t>(n)];
      row.delivered_to = delivered[static_cast<std::size_t>(n)];
      row.kkt_residual = plan.kkt_residual;
      row.relaxed = plan.status == mpc::SolveStatus::InfeasibleRelaxed;
      trace.rows.push_back(std::move(row));
    }

    // Synchronous update.
    for (int n = 0; n < nv; ++n) {
      auto& v = vehicles[static_cast<std::size_t>(n)];
      const double u = plans[static_cast<std::size_t>(n)].inputs.front();
      const double ap = n > 0 ? vehicles[static_cast<std::size_t>(n - 1)].state.acceleration : 0.0;
      v.state = step(cfg.params, v.state, u, ap, dt);
      v.previous_input = u;
    }
  }

  result.metrics = compute_metrics(trace, cfg.params);
  return result;
}

struct MetricSummary {
  double mean = 0.0;
  double std_error = 0.0;
};

struct BatchResult {
  MetricSummary spacing_error;
  MetricSummary speed_difference;
  MetricSummary acceleration_difference;
  MetricSummary comm_rate;
  MetricSummary delivery_rate;
  int runs = 0;
  int collisions = 0;
  int constraint_violations = 0;
  double min_gap = std::numeric_limits<double>::infinity();
  double max_kkt_residual = 0.0;
  std::vector<Metrics> per_run;
};

inline MetricSummary summarize(const std::vector<double>& xs) {
  MetricSummary s;
  const double n = static_cast<double>(xs.size());
  // Shifted by the first sample so identical runs give exactly that value and 0 spread.
  const double x0 = xs.front();
  double shift = 0.0;
  for (double x : xs) shift += x - x0;
  shift /= n;
  s.mean = x0 + shift;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - x0 - shift) * (x - x0 - shift);
    s.std_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return s;
}

inline BatchResult aggregate(std::vector<Metrics> runs) {
  BatchResult b;
  b.runs = static_cast<int>(runs.size());
  std::vector<double> se, sd, ad, cr, dr;
  for (const auto& m : runs) {
    se.push_back(m.mean_spacing_error);
    sd.push_back(m.mean_speed_difference);
    ad.push_back(m.mean_acceleration_difference);
    cr.push_back(m.mean_comm_rate);
    dr.push_back(m.mean_delivery_rate);
    b.collisions += m.collision ? 1 : 0;
    b.constraint_violations += m.constraint_violations;
    b.min_gap = std::min(b.min_gap, m.min_gap);
    b.max_kkt_residual = std::max(b.max_kkt_residual, m.max_kkt_residual);
  }
  b.spacing_error = summarize(se);
  b.speed_difference = summarize(sd);
  b.acceleration_difference = summarize(ad);
  b.comm_rate = summarize(cr);
  b.delivery_rate = summarize(dr);
  b.per_run = std::move(runs);
  return b;
}

/// Runs seeds base, base+1, ... and aggregates mean and standard error.
inline BatchResult run_batch(const ScenarioConfig& cfg, int runs, unsigned threads = 0) {
  if (runs < 1) throw std::invalid_argument("run_batch: runs must be at least 1");
  cfg.validate();
  std::vector<Metrics> metrics(static_cast<std::size_t>(runs));
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(runs));
  auto work = [&](unsigned worker) {
    for (int r = static_cast<int>(worker); r < runs; r += static_cast<int>(threads)) {
      ScenarioConfig c = cfg;
      c.seed = cfg.seed + static_cast<std::uint64_t>(r);
      metrics[static_cast<std::size_t>(r)] = run_scenario(c).metrics;
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        try {
          work(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return aggregate(std::move(metrics));
}

/// Inter-event intervals outside [min_inter_event, max_inter_event + step].
/// Intervals are measured between consecutive events of one vehicle.
inline int count_zeno_violations(const Metrics& m, const comms::TriggerPolicy& policy, double step) {
  int bad = 0;
  for (const auto& times : m.per_vehicle_event_times)
    for (std::size_t i = 1; i < times.size(); ++i) {
      const double gap = times[i] - times[i - 1];
      if (gap < policy.min_inter_event - comms::kTimeEpsilon ||
          gap > policy.max_inter_event + step + comms::kTimeEpsilon)
        ++bad;
    }
  return bad;
}

}  // namespace cacc::sim

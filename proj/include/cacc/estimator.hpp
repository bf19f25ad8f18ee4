#pragma once

// Per-vehicle beliefs about predecessors, fed by delivered MBC messages and
// extrapolated between packets.

#include "cacc/comms.hpp"
#include "cacc/dynamics.hpp"
#include "cacc/gp.hpp"
#include "cacc/mpc.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace cacc::estimator {

struct NeighborRecord {
  int vehicle_index = -1;
  comms::MbcMessage last_message;
  double last_update_time = 0.0;
  double reconstructed_position = 0.0;
  double reconstructed_velocity = 0.0;
};

/// GP posterior mean of the sender's velocity at `times`, modelled relative to
/// the newest window sample.
inline std::vector<double> gp_velocity_mean(const comms::MbcMessage& msg, std::span<const double> times) {
  const gp::Model model{msg.gp_hyper, gp::relative_to_latest({msg.window_timestamps, msg.window_velocities})};
  auto mean = gp::predict(model, times).mean;
  for (double& m : mean) m += msg.velocity();
  return mean;
}

/// Velocity of the sender on the grid send_time + j*dt, j = 0..count-1:
/// sample at send time, then the transmitted MPC forecast, then the GP
/// posterior mean; zero-order hold if the GP cannot be evaluated.
inline std::vector<double> velocity_grid(const comms::MbcMessage& msg, double dt, std::size_t count) {
  std::vector<double> v(count);
  std::vector<double> gp_times;
  std::vector<std::size_t> gp_slots;
  const double last_forecast = msg.forecast_timestamps.empty() ? msg.send_time : msg.forecast_timestamps.back();
  for (std::size_t j = 0; j < count; ++j) {
    const double t = msg.send_time + static_cast<double>(j) * dt;
    if (j == 0) {
      v[j] = msg.velocity();
    } else if (t <= last_forecast + comms::kTimeEpsilon) {
      // Linear interpolation over (send_time, forecast...) knots.
      double t0 = msg.send_time, v0 = msg.velocity();
      for (std::size_t k = 0; k < msg.forecast_timestamps.size(); ++k) {
        const double t1 = msg.forecast_timestamps[k], v1 = msg.forecast_velocities[k];
        if (t <= t1 + comms::kTimeEpsilon) {
          v[j] = std::abs(t1 - t) <= comms::kTimeEpsilon ? v1 : v0 + (v1 - v0) * (t - t0) / (t1 - t0);
          break;
        }
        t0 = t1;
        v0 = v1;
      }
    } else {
      gp_times.push_back(t);
      gp_slots.push_back(j);
    }
  }
  if (!gp_times.empty()) {
    std::vector<double> mean;
    try {
      mean = gp_velocity_mean(msg, gp_times);
    } catch (const std::exception&) {
      const std::size_t first = gp_slots.front();
      mean.assign(gp_times.size(), first > 0 ? v[first - 1] : msg.velocity());
    }
    for (std::size_t i = 0; i < gp_slots.size(); ++i) v[gp_slots[i]] = mean[i];
  }
  return v;
}

inline std::size_t grid_index(double t, double origin, double dt) {
  const double steps = std::round((t - origin) / dt);
  if (steps < 0.0) throw std::invalid_argument("estimator: query precedes the message");
  return static_cast<std::size_t>(steps);
}

/// Forecast over horizon steps 1..N relative to `now`.
inline mpc::NeighborForecast forecast_neighbor(const NeighborRecord& record, double now, int horizon,
                                               double dt) {
  const auto& msg = record.last_message;
  const std::size_t j0 = grid_index(now, msg.send_time, dt);
  const std::size_t count = j0 + static_cast<std::size_t>(horizon) + 1;
  const auto v = velocity_grid(msg, dt, count);
  std::vector<double> x(count);
  x[0] = msg.position;
  for (std::size_t j = 1; j < count; ++j) x[j] = x[j - 1] + dt * v[j - 1];

  mpc::NeighborForecast f;
  f.vehicle_index = record.vehicle_index;
  for (int k = 1; k <= horizon; ++k) {
    const std::size_t j = j0 + static_cast<std::size_t>(k);
    f.timestamps.push_back(now + k * dt);
    f.positions.push_back(x[j]);
    f.velocities.push_back(v[j]);
    f.accelerations.push_back((v[j] - v[j - 1]) / dt);
  }
  return f;
}

class NeighborStore {
 public:
  /// Keeps the newest message per sender; older or duplicate messages are ignored.
  void ingest(const comms::MbcMessage& message) {
    auto it = records_.find(message.sender_index);
    if (it != records_.end() &&
        !(message.send_time > it->second.last_message.send_time + comms::kTimeEpsilon))
      return;
    NeighborRecord rec;
    rec.vehicle_index = message.sender_index;
    rec.last_message = message;
    rec.last_update_time = message.send_time;
    rec.reconstructed_position = message.position;
    rec.reconstructed_velocity = message.velocity();
    records_[message.sender_index] = std::move(rec);
  }

  /// Moves every reconstruction forward to `now`; earlier times are ignored.
  void advance_to(double now, double dt) {
    for (auto& [index, rec] : records_) {
      if (now <= rec.last_update_time + comms::kTimeEpsilon) continue;
      const std::size_t j = grid_index(now, rec.last_message.send_time, dt);
      const auto v = velocity_grid(rec.last_message, dt, j + 1);
      double x = rec.last_message.position;
      for (std::size_t i = 0; i < j; ++i) x += dt * v[i];
      rec.reconstructed_position = x;
      rec.reconstructed_velocity = v[j];
      rec.last_update_time = now;
    }
  }

  const NeighborRecord* find(int vehicle_index) const {
    auto it = records_.find(vehicle_index);
    return it == records_.end() ? nullptr : &it->second;
  }

  const std::map<int, NeighborRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  friend bool operator==(const NeighborStore& a, const NeighborStore& b) {
    if (a.records_.size() != b.records_.size()) return false;
    for (const auto& [k, r] : a.records_) {
      auto it = b.records_.find(k);
      if (it == b.records_.end() || !(it->second.last_message == r.last_message) ||
          it->second.last_update_time != r.last_update_time)
        return false;
    }
    return true;
  }

 private:
  std::map<int, NeighborRecord> records_;
};

struct SensedPredecessor {
  double gap = 0.0;                // [m]
  double relative_velocity = 0.0;  // v_pred - v_ego [m/s]
};

/// Ideal ranging sensor on the vehicle directly ahead.
inline SensedPredecessor sense_immediate_predecessor(const VehicleParams& ego_params, const VehicleState& ego,
                                                     const VehicleState& predecessor) {
  return {gap(predecessor, ego, ego_params.vehicle_length), predecessor.velocity - ego.velocity};
}

}  // namespace cacc::estimator

#pragma once

// Transmission scheduling, MBC packet construction and the i.i.d. packet
// erasure channel.

#include "cacc/dynamics.hpp"
#include "cacc/gp.hpp"
#include "cacc/mpc.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cacc::comms {

// Slack for comparing times that are accumulated multiples of the step.
inline constexpr double kTimeEpsilon = 1e-9;

enum class TriggerMode { TimeTriggered, ControlAware };

inline const char* to_string(TriggerMode m) {
  return m == TriggerMode::TimeTriggered ? "ttc" : "etc";
}

struct TriggerPolicy {
  TriggerMode mode = TriggerMode::ControlAware;
  double threshold = 700.0;       // beta, compared against the MPC objective
  double min_inter_event = 0.1;   // [s]
  double max_inter_event = 0.6;   // [s]

  void validate() const {
    if (!(min_inter_event > 0.0) || !(max_inter_event >= min_inter_event))
      throw std::invalid_argument("TriggerPolicy: need 0 < min_inter_event <= max_inter_event");
    if (mode == TriggerMode::ControlAware && !(threshold >= 0.0))
      throw std::invalid_argument("TriggerPolicy: threshold must be non-negative");
  }
};

struct TriggerState {
  std::optional<double> last_event_time;
  int events_count = 0;

  void record(double now) {
    last_event_time = now;
    ++events_count;
  }
};

enum class TriggerDecision { Hold, Fire };

/// Evaluated once per communication slot.
inline TriggerDecision evaluate_trigger(const TriggerPolicy& policy, const TriggerState& state,
                                        double now, double current_cost) {
  if (state.last_event_time && now < *state.last_event_time - kTimeEpsilon)
    throw std::invalid_argument("evaluate_trigger: clock regression");
  if (policy.mode == TriggerMode::TimeTriggered) return TriggerDecision::Fire;
  if (!state.last_event_time) return TriggerDecision::Fire;
  const double elapsed = now - *state.last_event_time;
  if (elapsed < policy.min_inter_event - kTimeEpsilon) return TriggerDecision::Hold;
  const bool cost_hit = std::abs(current_cost) >= policy.threshold;
  const bool timeout = elapsed >= policy.max_inter_event - kTimeEpsilon;
  return (cost_hit || timeout) ? TriggerDecision::Fire : TriggerDecision::Hold;
}

inline constexpr std::size_t kWindowSize = 5;
inline constexpr std::size_t kForecastSize = 10;

struct MbcMessage {
  int sender_index = -1;
  double send_time = 0.0;
  gp::HyperParams gp_hyper;
  std::vector<double> window_timestamps;
  std::vector<double> window_velocities;
  double position = 0.0;
  double acceleration = 0.0;
  std::vector<double> forecast_timestamps;
  std::vector<double> forecast_velocities;

  friend bool operator==(const MbcMessage&, const MbcMessage&) = default;

  gp::Model gp_model() const { return {gp_hyper, {window_timestamps, window_velocities}}; }

  /// Velocity at send time (the newest window sample).
  double velocity() const { return window_velocities.back(); }

  void validate() const {
    if (window_timestamps.size() != kWindowSize || window_velocities.size() != kWindowSize)
      throw std::invalid_argument("MbcMessage: velocity window must hold exactly 5 samples");
    if (forecast_timestamps.size() != kForecastSize || forecast_velocities.size() != kForecastSize)
      throw std::invalid_argument("MbcMessage: forecast must hold exactly 10 values");
    for (std::size_t i = 0; i < kWindowSize; ++i) {
      if (i > 0 && !(window_timestamps[i] > window_timestamps[i - 1]))
        throw std::invalid_argument("MbcMessage: window timestamps must be strictly ascending");
      if (window_timestamps[i] > send_time + kTimeEpsilon)
        throw std::invalid_argument("MbcMessage: window timestamp after send_time");
    }
    for (std::size_t i = 0; i < kForecastSize; ++i) {
      if (i > 0 && !(forecast_timestamps[i] > forecast_timestamps[i - 1]))
        throw std::invalid_argument("MbcMessage: forecast timestamps must be strictly ascending");
      if (!(forecast_timestamps[i] > send_time))
        throw std::invalid_argument("MbcMessage: forecast timestamp not after send_time");
    }
    gp_hyper.validate();
  }
};

inline void to_json(nlohmann::json& j, const MbcMessage& m) {
  j = nlohmann::json{
      {"sender_index", m.sender_index},
      {"send_time", m.send_time},
      {"gp_hyper", {{"length_scale", m.gp_hyper.length_scale}, {"noise_std", m.gp_hyper.noise_std}}},
      {"velocity_window", {{"timestamps", m.window_timestamps}, {"velocities", m.window_velocities}}},
      {"position", m.position},
      {"acceleration", m.acceleration},
      {"predicted_velocities",
       {{"timestamps", m.forecast_timestamps}, {"velocities", m.forecast_velocities}}},
  };
}

inline void from_json(const nlohmann::json& j, MbcMessage& m) {
  j.at("sender_index").get_to(m.sender_index);
  j.at("send_time").get_to(m.send_time);
  j.at("gp_hyper").at("length_scale").get_to(m.gp_hyper.length_scale);
  j.at("gp_hyper").at("noise_std").get_to(m.gp_hyper.noise_std);
  j.at("velocity_window").at("timestamps").get_to(m.window_timestamps);
  j.at("velocity_window").at("velocities").get_to(m.window_velocities);
  j.at("position").get_to(m.position);
  j.at("acceleration").get_to(m.acceleration);
  j.at("predicted_velocities").at("timestamps").get_to(m.forecast_timestamps);
  j.at("predicted_velocities").at("velocities").get_to(m.forecast_velocities);
}

/// Packs the sender's fitted GP, its velocity window, current state and the
/// planned velocities of the horizon solved at `now`.
inline MbcMessage build_message(int sender_index, const VehicleState& snapshot, const gp::Model& model,
                                const mpc::HorizonPlan& plan, double now) {
  if (plan.predicted_states.empty() ||
      std::abs(plan.predicted_states.front().timestamp - now) > kTimeEpsilon)
    throw std::invalid_argument("build_message: stale plan");
  if (model.training.size() != kWindowSize)
    throw std::invalid_argument("build_message: velocity window must hold exactly 5 samples");
  if (plan.predicted_states.size() < kForecastSize + 1)
    throw std::invalid_argument("build_message: plan horizon shorter than 10 steps");

  MbcMessage m;
  m.sender_index = sender_index;
  m.send_time = now;
  m.gp_hyper = model.hyper;
  m.window_timestamps = model.training.timestamps;
  m.window_velocities = model.training.velocities;
  m.position = snapshot.position;
  m.acceleration = snapshot.acceleration;
  for (std::size_t k = 1; k <= kForecastSize; ++k) {
    m.forecast_timestamps.push_back(plan.predicted_states[k].timestamp);
    m.forecast_velocities.push_back(plan.predicted_states[k].velocity);
  }
  m.validate();
  return m;
}

/// Packet-erasure channel with i.i.d. per-link losses.
class Channel {
 public:
  Channel(double packet_error_rate, std::uint64_t seed) : per_(packet_error_rate), rng_(seed) {
    if (!(per_ >= 0.0 && per_ <= 1.0)) throw std::invalid_argument("Channel: PER must lie in [0, 1]");
  }

  double packet_error_rate() const { return per_; }

  /// One draw per receiver, in the given order; returns the receivers reached.
  std::vector<int> broadcast(const MbcMessage& message, const std::vector<int>& receivers) {
    std::vector<int> delivered;
    for (int r : receivers) {
      if (r == message.sender_index) throw std::invalid_argument("broadcast: receiver equals sender");
      if (uniform() >= per_) delivered.push_back(r);
    }
    return delivered;
  }

 private:
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  double per_;
  std::mt19937_64 rng_;
};

}  // namespace cacc::comms

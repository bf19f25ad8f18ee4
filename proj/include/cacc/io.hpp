#pragma once

// Scenario config (JSON), trace CSV export and metrics JSON. Output formats
// carry a schema string.

#include "cacc/comms.hpp"
#include "cacc/sim.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cacc::io {

inline constexpr const char* kTraceSchema = "cacc-trace/1";
inline constexpr const char* kMetricsSchema = "cacc-metrics/1";
inline constexpr const char* kSweepSchema = "cacc-sweep/1";

/// Configuration problem tied to one field; `what()` names the field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::runtime_error("config field '" + field + "': " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

namespace detail {

template <typename T>
void read(const nlohmann::json& obj, const char* key, T& out, const std::string& prefix) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    it->get_to(out);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(prefix + key, std::string("wrong type (") + e.what() + ")");
  }
}

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> known,
                           const std::string& prefix) {
  if (!obj.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) throw ConfigError(prefix + key, "unknown field");
}

// Maps a validation message ("field: ...", "Type.field ...") onto the config
// field path it concerns.
inline ConfigError as_config_error(const std::invalid_argument& e) {
  const std::string msg = e.what();
  std::string field = msg.substr(0, std::min(msg.find(':'), msg.find(' ')));
  static const std::pair<const char*, const char*> kTypePrefixes[] = {
      {"VehicleParams.", "params."}, {"Weights.", "weights."}, {"TriggerPolicy", "policy"}};
  for (const auto& [type, path] : kTypePrefixes)
    if (field.rfind(type, 0) == 0) field = path + field.substr(std::string(type).size());
  return ConfigError(field, msg);
}

}  // namespace detail

inline nlohmann::json to_json(const VehicleParams& p) {
  return {{"vehicle_length", p.vehicle_length},     {"standstill_distance", p.standstill_distance},
          {"time_gap", p.time_gap},                 {"driveline_constant", p.driveline_constant},
          {"accel_min", p.accel_min},               {"accel_max", p.accel_max},
          {"input_min", p.input_min},               {"input_max", p.input_max},
          {"speed_max", p.speed_max}};
}

inline nlohmann::json to_json(const mpc::Weights& w) {
  nlohmann::json q = nlohmann::json::array();
  for (int i = 0; i < 3; ++i) q.push_back({w.state_weight(i, 0), w.state_weight(i, 1), w.state_weight(i, 2)});
  nlohmann::json j = {{"state_weight", q},
                      {"state_reference", {w.state_reference(0), w.state_reference(1), w.state_reference(2)}},
                      {"position_coupling", w.position_coupling},
                      {"velocity_coupling", w.velocity_coupling}};
  if (!w.position_coupling_by_vehicle.empty()) {
    nlohmann::json m;
    for (const auto& [k, v] : w.position_coupling_by_vehicle) m[std::to_string(k)] = v;
    j["position_coupling_by_vehicle"] = m;
  }
  if (!w.velocity_coupling_by_vehicle.empty()) {
    nlohmann::json m;
    for (const auto& [k, v] : w.velocity_coupling_by_vehicle) m[std::to_string(k)] = v;
    j["velocity_coupling_by_vehicle"] = m;
  }
  return j;
}

inline nlohmann::json to_json(const sim::ScenarioConfig& c) {
  nlohmann::json knots = nlohmann::json::array();
  for (const auto& [t, v] : c.leader_profile.knots) knots.push_back({t, v});
  return {{"vehicle_count", c.vehicle_count},
          {"duration", c.duration},
          {"step", c.step},
          {"per", c.per},
          {"seed", c.seed},
          {"horizon", c.horizon},
          {"warmup", c.warmup},
          {"gap_margin", c.gap_margin},
          {"gap_slack_penalty", c.gap_slack_penalty},
          {"policy",
           {{"mode", comms::to_string(c.policy.mode)},
            {"threshold", c.policy.threshold},
            {"min_inter_event", c.policy.min_inter_event},
            {"max_inter_event", c.policy.max_inter_event}}},
          {"weights", to_json(c.weights)},
          {"params", to_json(c.params)},
          {"leader_profile", knots}};
}

inline comms::TriggerMode parse_mode(const std::string& s, const std::string& field) {
  if (s == "ttc" || s == "time-triggered") return comms::TriggerMode::TimeTriggered;
  if (s == "etc" || s == "control-aware") return comms::TriggerMode::ControlAware;
  throw ConfigError(field, "expected 'ttc' or 'etc', got '" + s + "'");
}

/// Fields absent from `j` keep their defaults. Unknown fields are errors.
inline sim::ScenarioConfig config_from_json(const nlohmann::json& j) {
  using detail::read;
  sim::ScenarioConfig c;
  detail::reject_unknown(j,
                         {"vehicle_count", "duration", "step", "per", "seed", "horizon", "warmup",
                          "gap_margin", "gap_slack_penalty", "policy", "weights", "params",
                          "leader_profile", "schema"},
                         "");
  read(j, "vehicle_count", c.vehicle_count, "");
  read(j, "duration", c.duration, "");
  read(j, "step", c.step, "");
  read(j, "per", c.per, "");
  read(j, "seed", c.seed, "");
  read(j, "horizon", c.horizon, "");
  read(j, "warmup", c.warmup, "");
  read(j, "gap_margin", c.gap_margin, "");
  read(j, "gap_slack_penalty", c.gap_slack_penalty, "");

  if (auto it = j.find("policy"); it != j.end()) {
    const auto& p = *it;
    detail::reject_unknown(p, {"mode", "threshold", "min_inter_event", "max_inter_event"}, "policy.");
    if (auto m = p.find("mode"); m != p.end()) {
      if (!m->is_string()) throw ConfigError("policy.mode", "expected a string");
      c.policy.mode = parse_mode(m->get<std::string>(), "policy.mode");
    }
    read(p, "threshold", c.policy.threshold, "policy.");
    read(p, "min_inter_event", c.policy.min_inter_event, "policy.");
    read(p, "max_inter_event", c.policy.max_inter_event, "policy.");
  }
  if (auto it = j.find("params"); it != j.end()) {
    const auto& p = *it;
    detail::reject_unknown(p,
                           {"vehicle_length", "standstill_distance", "time_gap", "driveline_constant",
                            "accel_min", "accel_max", "input_min", "input_max", "speed_max"},
                           "params.");
    read(p, "vehicle_length", c.params.vehicle_length, "params.");
    read(p, "standstill_distance", c.params.standstill_distance, "params.");
    read(p, "time_gap", c.params.time_gap, "params.");
    read(p, "driveline_constant", c.params.driveline_constant, "params.");
    read(p, "accel_min", c.params.accel_min, "params.");
    read(p, "accel_max", c.params.accel_max, "params.");
    read(p, "input_min", c.params.input_min, "params.");
    read(p, "input_max", c.params.input_max, "params.");
    read(p, "speed_max", c.params.speed_max, "params.");
  }
  if (auto it = j.find("weights"); it != j.end()) {
    const auto& w = *it;
    detail::reject_unknown(w,
                           {"state_weight", "state_reference", "position_coupling", "velocity_coupling",
                            "position_coupling_by_vehicle", "velocity_coupling_by_vehicle"},
                           "weights.");
    if (auto q = w.find("state_weight"); q != w.end()) {
      std::vector<std::vector<double>> rows;
      read(w, "state_weight", rows, "weights.");
      if (rows.size() != 3) throw ConfigError("weights.state_weight", "expected a 3x3 matrix");
      for (int r = 0; r < 3; ++r) {
        if (rows[static_cast<std::size_t>(r)].size() != 3)
          throw ConfigError("weights.state_weight", "expected a 3x3 matrix");
        for (int col = 0; col < 3; ++col) c.weights.state_weight(r, col) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)];
      }
    }
    if (auto rr = w.find("state_reference"); rr != w.end()) {
      std::vector<double> ref;
      read(w, "state_reference", ref, "weights.");
      if (ref.size() != 3) throw ConfigError("weights.state_reference", "expected 3 values");
      c.weights.state_reference = Eigen::Vector3d(ref[0], ref[1], ref[2]);
    }
    read(w, "position_coupling", c.weights.position_coupling, "weights.");
    read(w, "velocity_coupling", c.weights.velocity_coupling, "weights.");
    auto read_map = [&](const char* key, std::map<int, double>& out) {
      auto m = w.find(key);
      if (m == w.end()) return;
      if (!m->is_object()) throw ConfigError(std::string("weights.") + key, "expected an object");
      for (const auto& [k, v] : m->items()) {
        try {
          out[std::stoi(k)] = v.get<double>();
        } catch (const std::exception&) {
          throw ConfigError(std::string("weights.") + key + "." + k, "expected vehicle index -> number");
        }
      }
    };
    read_map("position_coupling_by_vehicle", c.weights.position_coupling_by_vehicle);
    read_map("velocity_coupling_by_vehicle", c.weights.velocity_coupling_by_vehicle);
  }
  if (auto it = j.find("leader_profile"); it != j.end()) {
    std::vector<std::pair<double, double>> knots;
    if (!it->is_array()) throw ConfigError("leader_profile", "expected an array of [time, speed] pairs");
    for (const auto& k : *it) {
      if (!k.is_array() || k.size() != 2 || !k[0].is_number() || !k[1].is_number())
        throw ConfigError("leader_profile", "expected an array of [time, speed] pairs");
      knots.emplace_back(k[0].get<double>(), k[1].get<double>());
    }
    c.leader_profile.knots = std::move(knots);
  }

  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw detail::as_config_error(e);
  }
  return c;
}

inline sim::ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("cannot parse config file '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kTraceHeader =
    "step,time,vehicle,position,velocity,acceleration,input,gap,desired_gap,cost,event,delivered_to,"
    "kkt_residual,relaxed";

/// One row per (step, vehicle); doubles at round-trip precision; the leader's
/// gap columns are empty; delivered_to is a ';'-separated receiver list.
/// A non-null `config` is embedded as a single-line "# config=" comment.
inline void write_trace_csv(std::ostream& out, const sim::TraceLog& trace,
                            const nlohmann::json& config = nullptr) {
  out << "# schema=" << kTraceSchema << '\n';
  if (!config.is_null()) out << "# config=" << config.dump() << '\n';
  out << kTraceHeader << '\n';
  for (const auto& r : trace.rows) {
    out << r.step << ',' << format_double(r.time) << ',' << r.vehicle << ',' << format_double(r.position)
        << ',' << format_double(r.velocity) << ',' << format_double(r.acceleration) << ','
        << format_double(r.input) << ',' << format_double(r.gap) << ',' << format_double(r.desired_gap)
        << ',' << format_double(r.cost) << ',' << (r.event ? 1 : 0) << ',';
    for (std::size_t i = 0; i < r.delivered_to.size(); ++i) out << (i ? ";" : "") << r.delivered_to[i];
    out << ',' << format_double(r.kkt_residual) << ',' << (r.relaxed ? 1 : 0) << '\n';
  }
}

inline nlohmann::json to_json(const sim::Metrics& m) {
  return {{"mean_spacing_error", m.mean_spacing_error},
          {"mean_speed_difference", m.mean_speed_difference},
          {"mean_acceleration_difference", m.mean_acceleration_difference},
          {"mean_comm_rate", m.mean_comm_rate},
          {"mean_delivery_rate", m.mean_delivery_rate},
          {"collision", m.collision},
          {"min_gap", m.min_gap},
          {"constraint_violations", m.constraint_violations},
          {"max_kkt_residual", m.max_kkt_residual},
          {"relaxed_solves", m.relaxed_solves},
          {"per_vehicle_event_times", m.per_vehicle_event_times}};
}

inline nlohmann::json to_json(const sim::MetricSummary& s) {
  return {{"mean", s.mean}, {"std_error", s.std_error}};
}

inline nlohmann::json to_json(const sim::BatchResult& b) {
  return {{"runs", b.runs},
          {"spacing_error", to_json(b.spacing_error)},
          {"speed_difference", to_json(b.speed_difference)},
          {"acceleration_difference", to_json(b.acceleration_difference)},
          {"comm_rate", to_json(b.comm_rate)},
          {"delivery_rate", to_json(b.delivery_rate)},
          {"collisions", b.collisions},
          {"constraint_violations", b.constraint_violations},
          {"min_gap", b.min_gap},
          {"max_kkt_residual", b.max_kkt_residual}};
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace cacc::io

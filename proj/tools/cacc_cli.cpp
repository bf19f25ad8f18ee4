// Command-line front end: run | sweep | baseline | compare.

#include "cacc/io.hpp"
#include "cacc/sim.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using cacc::sim::ScenarioConfig;
using nlohmann::json;
namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  int runs = 70;
  std::vector<double> thresholds{200, 300, 400, 500, 600, 700};
  std::optional<double> per;
  std::optional<std::string> mode;
  unsigned threads = 0;
  bool permissive = false;
};

ScenarioConfig resolve(const Options& o) {
  ScenarioConfig cfg = o.config_path.empty() ? ScenarioConfig{} : cacc::io::load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.per) cfg.per = *o.per;
  if (o.mode) cfg.policy.mode = cacc::io::parse_mode(*o.mode, "--mode");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw cacc::io::detail::as_config_error(e);
  }
  return cfg;
}

fs::path prepare_out(const Options& o) {
  fs::path dir(o.out_dir);
  fs::create_directories(dir);
  return dir;
}

json header(const char* schema, const ScenarioConfig& cfg) {
  return {{"schema", schema}, {"seed", cfg.seed}, {"config", cacc::io::to_json(cfg)}};
}

// Collisions and Zeno-violating event sequences in a batch.
struct Invariants {
  int collisions = 0;
  int zeno = 0;
  bool ok() const { return collisions == 0 && zeno == 0; }
};

Invariants check(const cacc::sim::BatchResult& b, const ScenarioConfig& cfg) {
  Invariants inv;
  for (const auto& m : b.per_run) {
    inv.collisions += m.collision ? 1 : 0;
    inv.zeno += cacc::sim::count_zeno_violations(m, cfg.policy, cfg.step);
  }
  return inv;
}

json batch_json(const cacc::sim::BatchResult& b, const ScenarioConfig& cfg) {
  json j = cacc::io::to_json(b);
  j["mode"] = cacc::comms::to_string(cfg.policy.mode);
  j["per"] = cfg.per;
  j["threshold"] = cfg.policy.threshold;
  j["zeno_violations"] = check(b, cfg).zeno;
  return j;
}

int finish(const Invariants& inv, bool permissive) {
  if (inv.ok()) return 0;
  std::cerr << "invariant violation: " << inv.collisions << " collision run(s), " << inv.zeno
            << " inter-event interval(s) outside bounds\n";
  return permissive ? 0 : 3;
}

int cmd_run(const Options& o) {
  const ScenarioConfig cfg = resolve(o);
  const auto dir = prepare_out(o);
  const auto result = cacc::sim::run_scenario(cfg);

  const auto trace_path = dir / "trace.csv";
  std::ofstream trace(trace_path);
  if (!trace) throw std::runtime_error("cannot write '" + trace_path.string() + "'");
  cacc::io::write_trace_csv(trace, result.trace, header(cacc::io::kTraceSchema, cfg));
  trace.close();
  if (!trace) throw std::runtime_error("failed writing '" + trace_path.string() + "'");

  json doc = header(cacc::io::kMetricsSchema, cfg);
  doc["metrics"] = cacc::io::to_json(result.metrics);
  const int zeno = cacc::sim::count_zeno_violations(result.metrics, cfg.policy, cfg.step);
  doc["zeno_violations"] = zeno;
  cacc::io::write_json_file((dir / "metrics.json").string(), doc);

  std::cout << "comm rate " << result.metrics.mean_comm_rate << " Hz, spacing error "
            << result.metrics.mean_spacing_error << " m, speed difference "
            << result.metrics.mean_speed_difference << " m/s\n";
  return finish({result.metrics.collision ? 1 : 0, zeno}, o.permissive);
}

int cmd_sweep(const Options& o) {
  if (o.thresholds.empty()) throw CLI::ValidationError("--thresholds", "needs at least one value");
  ScenarioConfig cfg = resolve(o);
  cfg.policy.mode = cacc::comms::TriggerMode::ControlAware;
  const auto dir = prepare_out(o);

  json doc = header(cacc::io::kSweepSchema, cfg);
  doc["runs"] = o.runs;
  doc["rows"] = json::array();
  Invariants total;
  const auto csv_path = dir / "sweep.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write '" + csv_path.string() + "'");
  csv << "# schema=" << cacc::io::kSweepSchema << '\n'
      << "# config=" << header(cacc::io::kSweepSchema, cfg).dump() << '\n'
      << "threshold,runs,comm_rate,comm_rate_se,spacing_error,spacing_error_se,speed_difference,"
         "speed_difference_se,acceleration_difference,acceleration_difference_se\n";
  for (double beta : o.thresholds) {
    ScenarioConfig c = cfg;
    c.policy.threshold = beta;
    const auto b = cacc::sim::run_batch(c, o.runs, o.threads);
    const auto inv = check(b, c);
    total.collisions += inv.collisions;
    total.zeno += inv.zeno;
    using cacc::io::format_double;
    csv << format_double(beta) << ',' << b.runs << ',' << format_double(b.comm_rate.mean) << ','
        << format_double(b.comm_rate.std_error) << ',' << format_double(b.spacing_error.mean) << ','
        << format_double(b.spacing_error.std_error) << ',' << format_double(b.speed_difference.mean) << ','
        << format_double(b.speed_difference.std_error) << ','
        << format_double(b.acceleration_difference.mean) << ','
        << format_double(b.acceleration_difference.std_error) << '\n';
    doc["rows"].push_back(batch_json(b, c));
    std::cout << "threshold " << beta << ": comm rate " << b.comm_rate.mean << " Hz, spacing error "
              << b.spacing_error.mean << " m\n";
  }
  csv.close();
  if (!csv) throw std::runtime_error("failed writing '" + csv_path.string() + "'");
  cacc::io::write_json_file((dir / "sweep.json").string(), doc);
  return finish(total, o.permissive);
}

int cmd_baseline(const Options& o) {
  ScenarioConfig cfg = resolve(o);
  cfg.policy.mode = cacc::comms::TriggerMode::TimeTriggered;
  const auto dir = prepare_out(o);
  json doc = header(cacc::io::kMetricsSchema, cfg);
  doc["runs"] = o.runs;
  doc["baselines"] = json::array();
  Invariants total;
  for (double per : {0.0, 0.6}) {
    ScenarioConfig c = cfg;
    c.per = per;
    const auto b = cacc::sim::run_batch(c, o.runs, o.threads);
    const auto inv = check(b, c);
    total.collisions += inv.collisions;
    total.zeno += inv.zeno;
    doc["baselines"].push_back(batch_json(b, c));
    std::cout << "ttc per " << per << ": comm rate " << b.comm_rate.mean << " Hz, delivery rate "
              << b.delivery_rate.mean << " Hz per link\n";
  }
  cacc::io::write_json_file((dir / "baseline.json").string(), doc);
  return finish(total, o.permissive);
}

int cmd_compare(const Options& o) {
  ScenarioConfig etc = resolve(o);
  etc.policy.mode = cacc::comms::TriggerMode::ControlAware;
  ScenarioConfig ttc = etc;
  ttc.policy.mode = cacc::comms::TriggerMode::TimeTriggered;
  const auto dir = prepare_out(o);

  const auto bt = cacc::sim::run_batch(ttc, o.runs, o.threads);
  const auto be = cacc::sim::run_batch(etc, o.runs, o.threads);
  const double reduction = 100.0 * (1.0 - be.comm_rate.mean / bt.comm_rate.mean);
  const double speed_change =
      100.0 * (be.speed_difference.mean - bt.speed_difference.mean) / bt.speed_difference.mean;

  json doc = header(cacc::io::kMetricsSchema, etc);
  doc["runs"] = o.runs;
  doc["ttc"] = batch_json(bt, ttc);
  doc["etc"] = batch_json(be, etc);
  doc["comm_rate_reduction_percent"] = reduction;
  doc["speed_difference_change_percent"] = speed_change;
  cacc::io::write_json_file((dir / "compare.json").string(), doc);

  std::cout << "comm rate " << bt.comm_rate.mean << " Hz (ttc) vs " << be.comm_rate.mean
            << " Hz (etc): " << reduction << "% reduction; speed difference change " << speed_change
            << "%\n";
  Invariants total = check(bt, ttc);
  const auto inv = check(be, etc);
  total.collisions += inv.collisions;
  total.zeno += inv.zeno;
  return finish(total, o.permissive);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CACC platoon simulator with control-aware, model-based communication"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Scenario config (JSON); defaults apply when omitted")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", o.out_dir, "Output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "Base seed (overrides the config)");
    sub->add_option("--per", o.per, "Packet error rate (overrides the config)")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--mode", o.mode, "Trigger mode (overrides the config)")
        ->check(CLI::IsMember({"ttc", "etc"}));
    sub->add_flag("--permissive", o.permissive, "Exit 0 despite collisions or interval violations");
  };
  auto add_batch = [&](CLI::App* sub) {
    sub->add_option("--runs", o.runs, "Runs per batch, seeds seed..seed+runs-1")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--threads", o.threads, "Worker threads (0 = hardware concurrency)");
  };

  auto* run = app.add_subcommand("run", "Simulate one scenario; writes trace.csv and metrics.json");
  add_common(run);
  auto* sweep = app.add_subcommand("sweep", "Threshold sweep; writes sweep.csv and sweep.json");
  add_common(sweep);
  add_batch(sweep);
  sweep->add_option("--thresholds", o.thresholds, "Comma-separated trigger thresholds")
      ->delimiter(',')
      ->expected(1, -1)
      ->capture_default_str();
  auto* baseline = app.add_subcommand("baseline", "Time-triggered batches at PER 0 and 0.6");
  add_common(baseline);
  add_batch(baseline);
  auto* compare = app.add_subcommand("compare", "Time-triggered vs control-aware on the same seeds");
  add_common(compare);
  add_batch(compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) return cmd_run(o);
    if (*sweep) return cmd_sweep(o);
    if (*baseline) return cmd_baseline(o);
    if (*compare) return cmd_compare(o);
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

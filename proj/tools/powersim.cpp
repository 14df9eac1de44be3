// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

// powersim: run, sweep and compare simulated power-capped inference nodes.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "powersim/experiment.hpp"

namespace {

using namespace powersim;

struct Options {
  std::vector<std::string> configs;
  std::vector<std::string> presets;
  std::vector<double> qps;
  std::vector<double> slo_scales;
  std::optional<int> repeats;
  std::optional<std::uint64_t> seed;
  std::string out;
  int parallel = 1;
  std::string trace;
  std::string calibration;
  std::string workload_mode;
  std::optional<long> requests;
};

void add_source(CLI::App* cmd, Options& o, bool many) {
  if (many) {
    cmd->add_option("--config", o.configs, "Experiment config JSON (repeatable)");
    cmd->add_option("--preset", o.presets, "Named preset (repeatable)");
  } else {
    cmd->add_option("--config", o.configs, "Experiment config JSON")->expected(1);
    cmd->add_option("--preset", o.presets, "Named preset")->expected(1);
  }
  cmd->add_option("--qps", o.qps, "QPS per GPU (comma separated for sweeps)")->delimiter(',');
  cmd->add_option("--seed", o.seed, "Base seed");
  cmd->add_option("--trace", o.trace, "Token-length trace (CSV or JSONL)");
  cmd->add_option("--calibration", o.calibration, "Calibration JSON");
  cmd->add_option("--workload", o.workload_mode,
                  "poisson-trace | two-phase-synthetic | file-trace");
  cmd->add_option("--requests", o.requests, "Number of generated requests");
}

ExperimentConfig apply_overrides(ExperimentConfig c, const Options& o) {
  if (!o.workload_mode.empty()) c.workload.mode = workload_mode_from_string(o.workload_mode);
  if (!o.trace.empty()) {
    c.workload.mode = WorkloadMode::kFileTrace;
    c.workload.trace_path = o.trace;
  }
  if (!o.calibration.empty()) c.calibration_path = o.calibration;
  if (o.seed) c.workload.seed = *o.seed;
  if (o.requests) c.workload.num_requests = *o.requests;
  if (!o.qps.empty()) {
    c.qps_list = o.qps;
    c.workload.qps_per_gpu = o.qps.front();
  }
  if (!o.slo_scales.empty()) c.slo_scales = o.slo_scales;
  if (o.repeats) c.repeats = *o.repeats;
  return c;
}

std::vector<ExperimentConfig> resolve(const Options& o) {
  std::vector<ExperimentConfig> out;
  for (const auto& path : o.configs) out.push_back(load_experiment(path));
  for (const auto& name : o.presets) out.push_back(preset(name));
  if (out.empty()) out.emplace_back();
  for (auto& c : out) c = apply_overrides(std::move(c), o);
  return out;
}

void print_summary(const std::string& name, const SummaryMetrics& s) {
  std::printf("%s: attainment %.4f  goodput %.4f req/s  ttft_p90 %.3f s  tpot_p90 %.4f s  "
              "qps/W %.6f\n",
              name.c_str(), s.attainment, s.goodput, s.ttft_p90, s.tpot_p90, s.qps_per_watt);
}

int cmd_run(const Options& o) {
  const auto cfg = resolve(o).front();
  const double scale = cfg.slo_scales.empty() ? 1.0 : cfg.slo_scales.front();
  const auto run = run_once(cfg, cfg.workload.qps_per_gpu, scale, cfg.workload.seed);
  write_run_artifacts(o.out, run);
  print_summary(cfg.name, run.summary);
  return 0;
}

int cmd_sweep(const Options& o) {
  const auto cfg = resolve(o).front();
  const auto result = run_sweep(cfg, o.out, o.parallel);
  write_curve_csv(std::cout, result.curve);
  return 0;
}

int cmd_compare(const Options& o) {
  const auto configs = resolve(o);
  const auto result = run_compare(configs, o.out, o.parallel);
  write_compare_table(std::cout, result);
  return 0;
}

int cmd_gen_trace(const Options& o) {
  const auto cfg = resolve(o).front();
  auto spec = cfg.workload;
  spec.gpu_count = cfg.sim.gpu_count;
  const auto workload = build_workload(spec);
  std::ostringstream text;
  write_trace_csv(text, workload.requests);
  if (o.out.empty() || o.out == "-") {
    std::cout << text.str();
  } else {
    write_file_atomic(o.out, text.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event simulator of a power-capped disaggregated inference node"};
  app.require_subcommand(1);
  Options o;

  auto* run = app.add_subcommand("run", "Single run; writes config, records, summary, time series, events");
  add_source(run, o, false);
  run->add_option("--slo-scale", o.slo_scales, "SLO scale factor")->delimiter(',');
  run->add_option("--out", o.out, "Output directory")->required();

  auto* sweep = app.add_subcommand("sweep", "QPS x SLO-scale sweep with repeats");
  add_source(sweep, o, false);
  sweep->add_option("--slo-scale", o.slo_scales, "SLO scale factors")->delimiter(',');
  sweep->add_option("--repeats", o.repeats, "Runs per point (seed = base + repeat)");
  sweep->add_option("--parallel", o.parallel, "Concurrent runs")->check(CLI::PositiveNumber);
  sweep->add_option("--out", o.out, "Output directory")->required();

  auto* compare = app.add_subcommand("compare", "Run several configurations on one workload");
  add_source(compare, o, true);
  compare->add_option("--parallel", o.parallel, "Concurrent runs")->check(CLI::PositiveNumber);
  compare->add_option("--out", o.out, "Output directory");

  auto* gen = app.add_subcommand("gen-trace", "Write the configured workload as a CSV trace");
  add_source(gen, o, false);
  gen->add_option("--out", o.out, "Output file ('-' for stdout)");

  app.add_subcommand("presets", "List preset names")->callback([] {
    for (const auto& n : preset_names()) std::cout << n << '\n';
  });

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(o);
    if (sweep->parsed()) return cmd_sweep(o);
    if (compare->parsed()) return cmd_compare(o);
    if (gen->parsed()) return cmd_gen_trace(o);
  } catch (const std::exception& e) {
    std::cerr << "powersim: error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

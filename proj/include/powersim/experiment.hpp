// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "powersim/controller.hpp"
#include "powersim/engine.hpp"
#include "powersim/metrics.hpp"
#include "powersim/perf_model.hpp"
#include "powersim/workload.hpp"

namespace powersim {

struct ExperimentConfig {
  std::string name = "custom";
  SimConfig sim = SimConfig::disaggregated(4, 600, 4, 600, 4800);
  WorkloadSpec workload;
  ControllerConfig controller;
  std::string calibration_path;  // empty: built-in defaults
  std::vector<double> qps_list;  // sweep axis; empty means workload.qps_per_gpu
  std::vector<double> slo_scales{1.0};
  int repeats = 1;               // run r uses seed workload.seed + r

  void validate() const;
};

// Fully resolved: every default is written out.
nlohmann::json experiment_to_json(const ExperimentConfig& c);
// A "preset" key selects the starting point; other keys override it.
ExperimentConfig experiment_from_json(const nlohmann::json& doc, ExperimentConfig base = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);

std::vector<std::string> preset_names();
ExperimentConfig preset(const std::string& name);  // ConfigError for unknown names

struct RunOutput {
  ExperimentConfig config;  // with the run's qps, seed and SLO scale applied
  double slo_scale = 1.0;
  std::vector<RequestSpec> requests;
  SimResult sim;
  SummaryMetrics summary;
};

RunOutput run_once(const ExperimentConfig& config, double qps_per_gpu, double slo_scale,
                   std::uint64_t seed);
RunOutput run_once(const ExperimentConfig& config);

// config.json, requests.csv, summary.json, timeseries.csv, events.jsonl; each
// written to a temporary name and renamed into place.
void write_run_artifacts(const std::filesystem::path& dir, const RunOutput& run);
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

struct SweepRun {
  double qps_per_gpu = 0.0;
  double slo_scale = 1.0;
  int repeat = 0;
  std::uint64_t seed = 0;
  SummaryMetrics summary;
};

struct SweepResult {
  std::vector<SweepRun> runs;
  std::vector<CurvePoint> curve;  // repeats averaged; one row per (qps, scale)
};

// Runs every (qps, scale, repeat) tuple on up to `parallel` threads. With a
// non-empty `out`, writes attainment_curve.csv, slo_scaling.csv, runs.csv and
// per-point config/summary/records under out/points/.
SweepResult run_sweep(const ExperimentConfig& config, const std::filesystem::path& out,
                      int parallel);

struct CompareRow {
  std::string name;
  SummaryMetrics summary;
};

struct CompareResult {
  std::vector<CompareRow> rows;
  std::map<std::string, std::string> winners;  // metric -> config name
};

// All configs must describe the same workload; ValidationError otherwise.
CompareResult run_compare(const std::vector<ExperimentConfig>& configs,
                          const std::filesystem::path& out, int parallel);
void write_compare_table(std::ostream& out, const CompareResult& result);

// Runs fn(0..count-1) on up to `threads` threads; rethrows the first failure.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace powersim

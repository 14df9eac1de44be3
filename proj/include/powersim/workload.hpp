// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace powersim {

struct RequestSpec {
  long id = 0;
  double arrival_time = 0.0;  // seconds from run start
  long input_tokens = 1;
  long output_tokens = 1;

  bool operator==(const RequestSpec&) const = default;
};

struct SloTarget {
  double ttft_s = 1.0;
  double tpot_s = 0.040;

  SloTarget scaled(double factor) const { return {ttft_s * factor, tpot_s * factor}; }
  bool operator==(const SloTarget&) const = default;
};

// Piecewise-constant SLO over time. Entry i applies from its start time until
// the next entry's start time.
class SloSchedule {
 public:
  SloSchedule() = default;
  explicit SloSchedule(SloTarget constant) : steps_{{0.0, constant}} {}
  explicit SloSchedule(std::vector<std::pair<double, SloTarget>> steps);

  SloTarget at(double t) const;
  SloSchedule scaled(double factor) const;
  const std::vector<std::pair<double, SloTarget>>& steps() const { return steps_; }

 private:
  std::vector<std::pair<double, SloTarget>> steps_{{0.0, SloTarget{}}};
};

enum class WorkloadMode { kPoissonTrace, kTwoPhaseSynthetic, kFileTrace };

std::string to_string(WorkloadMode mode);
WorkloadMode workload_mode_from_string(const std::string& name);

// Token-length source for poisson-trace mode. Uniform draws come from the
// length stream; `fixed` repeats one shape.
struct LengthDistribution {
  enum class Kind { kUniform, kFixed } kind = Kind::kUniform;
  long input_min = 512;
  long input_max = 8192;
  long output_min = 128;
  long output_max = 256;
};

struct SyntheticPhase {
  long count = 1000;
  long input_tokens = 8192;
  long output_tokens = 128;
  std::optional<SloTarget> slo;
};

struct WorkloadSpec {
  WorkloadMode mode = WorkloadMode::kPoissonTrace;
  double qps_per_gpu = 1.0;
  int gpu_count = 8;
  std::uint64_t seed = 0;
  long num_requests = 2000;
  LengthDistribution lengths;
  std::vector<SyntheticPhase> phases = default_two_phase();
  std::string trace_path;
  long max_input_tokens = 8192;

  double aggregate_rate() const { return qps_per_gpu * gpu_count; }
  void validate() const;

  static std::vector<SyntheticPhase> default_two_phase();
};

struct Workload {
  std::vector<RequestSpec> requests;
  std::optional<SloSchedule> slo_schedule;  // set by synthetic phases with SLO overrides
};

// Exponential gaps with mean 1/(qps_per_gpu * gpu_count), lengths assigned in
// order. Deterministic for a fixed seed.
std::vector<RequestSpec> gen_poisson_arrivals(const WorkloadSpec& spec,
                                              const std::vector<std::pair<long, long>>& lengths);

// Phases are concatenated in order; arrival gaps continue across the phase
// boundary. Each SLO override takes effect at its phase's first arrival.
Workload gen_two_phase_synthetic(const WorkloadSpec& spec);

std::vector<std::pair<long, long>> sample_lengths(const LengthDistribution& dist, long count,
                                                  std::uint64_t seed);

// CSV with header "input_tokens,output_tokens[,arrival_time]" or JSONL with
// the same keys. Missing arrival times are synthesized from `spec`.
std::vector<RequestSpec> load_trace(const std::filesystem::path& path, const WorkloadSpec& spec);
std::vector<RequestSpec> parse_trace(std::istream& in, bool jsonl, const WorkloadSpec& spec,
                                     const std::string& source = "trace");

void write_trace_csv(std::ostream& out, const std::vector<RequestSpec>& requests);

Workload build_workload(const WorkloadSpec& spec);

nlohmann::json workload_spec_to_json(const WorkloadSpec& spec);
WorkloadSpec workload_spec_from_json(const nlohmann::json& doc, WorkloadSpec base = {});

}  // namespace powersim

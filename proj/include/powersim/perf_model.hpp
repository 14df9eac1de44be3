// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace powersim {

enum class Phase { kPrefill, kDecode };

std::string to_string(Phase phase);

// Relative speedup as a function of the GPU power cap, normalized to 1.0 at
// the lowest anchor. Interpolated piecewise-linearly; never extrapolated.
struct PowerCurve {
  std::vector<std::pair<int, double>> anchors;  // (watts, speedup)

  // Throws ValidationError naming `field` if anchors are empty, unsorted,
  // non-monotone, outside [min_power, max_power] or not normalized.
  void validate(const std::string& field, int min_power, int max_power) const;
  double at(int watts) const;
};

struct LatencyModelParams {
  double prefill_base_rate = 13000.0;       // tokens/s, batch 1, lowest anchor
  double prefill_batch_efficiency = 0.15;   // per added batch slot
  double decode_step_fixed = 0.008;         // s
  double decode_step_per_seq = 0.00025;     // s per active sequence
  double kv_bytes_per_token = 131072.0;     // Llama-3.1-8B, fp16
  double fabric_bandwidth = 48e9;           // bytes/s
  double transfer_fixed_overhead = 0.0005;  // s

  void validate() const;
};

struct CalibrationFile {
  int min_power = 400;
  int max_power = 750;
  PowerCurve prefill{{{400, 1.0}, {700, 1.72}, {750, 1.8}}};
  PowerCurve decode{{{400, 1.0}, {600, 1.4}, {750, 1.45}}};
  LatencyModelParams latency;

  void validate() const;
};

CalibrationFile calibration_from_json(const nlohmann::json& doc);
nlohmann::json calibration_to_json(const CalibrationFile& cal);

// An empty file yields the defaults.
CalibrationFile load_calibration(const std::filesystem::path& path);

// Maps (phase, power cap, batch shape) to latency in seconds. Immutable after
// construction; safe to share across threads.
class PerfModel {
 public:
  PerfModel() : PerfModel(CalibrationFile{}) {}
  explicit PerfModel(CalibrationFile cal);

  const CalibrationFile& calibration() const { return cal_; }
  int min_power() const { return cal_.min_power; }
  int max_power() const { return cal_.max_power; }

  double speedup(Phase phase, int watts) const;

  // Whole-batch latency: total tokens over the batched throughput at `watts`.
  double prefill_latency(long total_tokens, int batch_size, int watts) const;

  // One decode step emitting one token for each active sequence.
  double decode_step_latency(int active_sequences, int watts) const;

  double kv_transfer_latency(long input_tokens) const;

 private:
  void check_power(int watts) const;

  CalibrationFile cal_;
};

}  // namespace powersim

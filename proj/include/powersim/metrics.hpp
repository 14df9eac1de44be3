// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "powersim/workload.hpp"

namespace powersim {

// Simulated time is kept in integer microseconds; metrics convert to seconds.
using Micros = std::int64_t;

inline Micros to_micros(double seconds) { return static_cast<Micros>(std::llround(seconds * 1e6)); }
inline double to_seconds(Micros us) { return static_cast<double>(us) / 1e6; }

// Lifecycle timestamps of one request. Prefill enqueue equals arrival.
struct Lifecycle {
  Micros arrival = 0;
  Micros prefill_start = -1;
  Micros prefill_end = -1;  // first token
  Micros transfer_start = -1;
  Micros transfer_end = -1;
  Micros decode_join = -1;
  Micros completion = -1;

  bool monotone() const;
};

struct RequestRecord {
  long id = 0;
  long input_tokens = 0;
  long output_tokens = 0;
  Micros arrival = 0;
  Micros queuing_delay = 0;
  Micros exec_time = 0;
  Micros ttft = 0;  // queuing_delay + exec_time
  Micros completion = 0;
  double tpot_s = 0.0;
  bool met_ttft = false;
  bool met_tpot = false;
  SloTarget slo;

  double ttft_s() const { return to_seconds(ttft); }
  bool attained() const { return met_ttft && met_tpot; }
};

// Inclusive comparisons against the SLO.
std::pair<bool, bool> score_request(const RequestRecord& record, const SloTarget& slo);

RequestRecord make_record(const RequestSpec& spec, const Lifecycle& life, const SloTarget& slo);

// Nearest rank on sorted samples: the value at 1-based index ceil(p/100 * n).
// Throws DomainError on empty input.
double percentile(std::vector<double> samples, double p);

struct PowerSample {
  Micros t = 0;
  long total_watts = 0;  // sum of effective caps from t until the next sample
};

// Time-weighted mean of the power step function over [begin, end].
double avg_provisioned_power(std::span<const PowerSample> series, Micros begin, Micros end);

struct AttainmentGoodput {
  double attainment = 0.0;
  double goodput = 0.0;  // attained requests per second
  double run_duration_s = 0.0;
};

// Last completion minus first arrival.
double run_duration(std::span<const RequestRecord> records);
AttainmentGoodput attainment_and_goodput(std::span<const RequestRecord> records,
                                         double run_duration_s);

inline double qps_per_watt(double goodput, double avg_gpu_power) {
  return avg_gpu_power > 0.0 ? goodput / avg_gpu_power : 0.0;
}
// Node-level variant: GPU power taken as `gpu_share` of the node total.
inline double node_qps_per_watt(double goodput, double avg_gpu_power, double gpu_share = 0.6) {
  return avg_gpu_power > 0.0 ? goodput / (avg_gpu_power / gpu_share) : 0.0;
}

struct SummaryMetrics {
  long requests = 0;
  long attained = 0;
  double attainment = 0.0;
  double goodput = 0.0;
  double throughput = 0.0;
  double run_duration_s = 0.0;
  double ttft_p50 = 0.0, ttft_p90 = 0.0, ttft_p99 = 0.0;
  double tpot_p50 = 0.0, tpot_p90 = 0.0, tpot_p99 = 0.0;
  double mean_queuing_delay_s = 0.0;
  double mean_exec_time_s = 0.0;
  double avg_provisioned_gpu_power = 0.0;
  double qps_per_watt = 0.0;
  double node_power_estimate = 0.0;
  double node_qps_per_watt = 0.0;
};

SummaryMetrics summarize(std::span<const RequestRecord> records,
                         std::span<const PowerSample> power, double gpu_share = 0.6);

nlohmann::json summary_to_json(const SummaryMetrics& s);

struct CurvePoint {
  double qps_per_gpu = 0.0;
  double slo_scale = 1.0;
  double attainment = 0.0;
  double attainment_min = 0.0;
  double attainment_max = 0.0;
  double goodput = 0.0;
  double qps_per_watt = 0.0;
};

// Sorted by (slo_scale, qps_per_gpu).
std::vector<CurvePoint> attainment_curve(std::vector<CurvePoint> points);

// Largest QPS whose attainment is at least `threshold`, scanning the curve.
std::optional<double> max_qps_at_attainment(std::span<const CurvePoint> curve, double threshold);

void write_records_csv(std::ostream& out, std::span<const RequestRecord> records);
void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve);

}  // namespace powersim

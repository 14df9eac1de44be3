// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "powersim/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "powersim/errors.hpp"

namespace powersim {

bool Lifecycle::monotone() const {
  const Micros chain[] = {arrival, prefill_start, prefill_end, transfer_start,
                          transfer_end, decode_join, completion};
  for (std::size_t i = 1; i < std::size(chain); ++i) {
    if (chain[i] < chain[i - 1]) return false;
  }
  return true;
}

std::pair<bool, bool> score_request(const RequestRecord& record, const SloTarget& slo) {
  return {record.ttft_s() <= slo.ttft_s, record.tpot_s <= slo.tpot_s};
}

RequestRecord make_record(const RequestSpec& spec, const Lifecycle& life, const SloTarget& slo) {
  RequestRecord r;
  r.id = spec.id;
  r.input_tokens = spec.input_tokens;
  r.output_tokens = spec.output_tokens;
  r.arrival = life.arrival;
  r.queuing_delay = life.prefill_start - life.arrival;
  r.exec_time = life.prefill_end - life.prefill_start;
  r.ttft = r.queuing_delay + r.exec_time;
  r.completion = life.completion;
  r.tpot_s = spec.output_tokens > 1
                 ? to_seconds(life.completion - life.prefill_end) /
                       static_cast<double>(spec.output_tokens - 1)
                 : 0.0;
  r.slo = slo;
  std::tie(r.met_ttft, r.met_tpot) = score_request(r, slo);
  return r;
}

double percentile(std::vector<double> samples, double p) {
  if (samples.empty()) throw DomainError("percentile of an empty sample set");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  // Small tolerance so that e.g. p=90, n=10 lands on rank 9 despite rounding.
  auto rank = static_cast<long>(std::ceil(p * n / 100.0 - 1e-9));
  rank = std::clamp(rank, 1L, static_cast<long>(samples.size()));
  return samples[static_cast<std::size_t>(rank - 1)];
}

double avg_provisioned_power(std::span<const PowerSample> series, Micros begin, Micros end) {
  if (series.empty()) return 0.0;
  auto value_at = [&](Micros t) {
    long v = series.front().total_watts;
    for (const auto& s : series) {
      if (s.t <= t) v = s.total_watts;
      else break;
    }
    return v;
  };
  if (end <= begin) return static_cast<double>(value_at(begin));
  double area = 0.0;
  Micros t = begin;
  long current = value_at(begin);
  for (const auto& s : series) {
    if (s.t <= begin) continue;
    if (s.t >= end) break;
    area += static_cast<double>(current) * static_cast<double>(s.t - t);
    t = s.t;
    current = s.total_watts;
  }
  area += static_cast<double>(current) * static_cast<double>(end - t);
  return area / static_cast<double>(end - begin);
}

double run_duration(std::span<const RequestRecord> records) {
  if (records.empty()) return 0.0;
  Micros first = records.front().arrival, last = records.front().completion;
  for (const auto& r : records) {
    first = std::min(first, r.arrival);
    last = std::max(last, r.completion);
  }
  return to_seconds(last - first);
}

AttainmentGoodput attainment_and_goodput(std::span<const RequestRecord> records,
                                         double run_duration_s) {
  AttainmentGoodput out;
  out.run_duration_s = run_duration_s;
  if (records.empty()) return out;
  long met = 0;
  for (const auto& r : records) met += r.attained() ? 1 : 0;
  out.attainment = static_cast<double>(met) / static_cast<double>(records.size());
  out.goodput = run_duration_s > 0.0 ? static_cast<double>(met) / run_duration_s : 0.0;
  return out;
}

SummaryMetrics summarize(std::span<const RequestRecord> records,
                         std::span<const PowerSample> power, double gpu_share) {
  SummaryMetrics s;
  s.requests = static_cast<long>(records.size());
  s.run_duration_s = run_duration(records);
  const auto ag = attainment_and_goodput(records, s.run_duration_s);
  s.attainment = ag.attainment;
  s.goodput = ag.goodput;
  Micros first = 0, last = 0;
  if (!records.empty()) {
    first = records.front().arrival;
    last = records.front().completion;
    std::vector<double> ttft, tpot;
    double q = 0.0, e = 0.0;
    for (const auto& r : records) {
      s.attained += r.attained() ? 1 : 0;
      ttft.push_back(r.ttft_s());
      tpot.push_back(r.tpot_s);
      q += to_seconds(r.queuing_delay);
      e += to_seconds(r.exec_time);
      first = std::min(first, r.arrival);
      last = std::max(last, r.completion);
    }
    const double n = static_cast<double>(records.size());
    s.throughput = s.run_duration_s > 0.0 ? n / s.run_duration_s : 0.0;
    s.mean_queuing_delay_s = q / n;
    s.mean_exec_time_s = e / n;
    s.ttft_p50 = percentile(ttft, 50);
    s.ttft_p90 = percentile(ttft, 90);
    s.ttft_p99 = percentile(ttft, 99);
    s.tpot_p50 = percentile(tpot, 50);
    s.tpot_p90 = percentile(tpot, 90);
    s.tpot_p99 = percentile(tpot, 99);
  }
  s.avg_provisioned_gpu_power = avg_provisioned_power(power, first, last);
  s.qps_per_watt = qps_per_watt(s.goodput, s.avg_provisioned_gpu_power);
  s.node_power_estimate = s.avg_provisioned_gpu_power / gpu_share;
  s.node_qps_per_watt = node_qps_per_watt(s.goodput, s.avg_provisioned_gpu_power, gpu_share);
  return s;
}

nlohmann::json summary_to_json(const SummaryMetrics& s) {
  return {
      {"requests", s.requests},
      {"attained", s.attained},
      {"attainment", s.attainment},
      {"goodput", s.goodput},
      {"throughput", s.throughput},
      {"run_duration_s", s.run_duration_s},
      {"ttft_p50", s.ttft_p50},
      {"ttft_p90", s.ttft_p90},
      {"ttft_p99", s.ttft_p99},
      {"tpot_p50", s.tpot_p50},
      {"tpot_p90", s.tpot_p90},
      {"tpot_p99", s.tpot_p99},
      {"mean_queuing_delay_s", s.mean_queuing_delay_s},
      {"mean_exec_time_s", s.mean_exec_time_s},
      {"avg_provisioned_gpu_power", s.avg_provisioned_gpu_power},
      {"qps_per_watt", s.qps_per_watt},
      {"node_power_estimate", s.node_power_estimate},
      {"node_qps_per_watt", s.node_qps_per_watt},
  };
}

std::vector<CurvePoint> attainment_curve(std::vector<CurvePoint> points) {
  std::stable_sort(points.begin(), points.end(), [](const CurvePoint& a, const CurvePoint& b) {
    if (a.slo_scale != b.slo_scale) return a.slo_scale < b.slo_scale;
    return a.qps_per_gpu < b.qps_per_gpu;
  });
  return points;
}

std::optional<double> max_qps_at_attainment(std::span<const CurvePoint> curve, double threshold) {
  std::optional<double> best;
  for (const auto& p : curve) {
    if (p.attainment >= threshold && (!best || p.qps_per_gpu > *best)) best = p.qps_per_gpu;
  }
  return best;
}

namespace {

std::string seconds(Micros us) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", to_seconds(us));
  return buf;
}

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_records_csv(std::ostream& out, std::span<const RequestRecord> records) {
  out << "id,arrival_s,input_tokens,output_tokens,queuing_delay_s,exec_s,ttft_s,tpot_s,met_ttft,"
         "met_tpot\n";
  for (const auto& r : records) {
    out << r.id << ',' << seconds(r.arrival) << ',' << r.input_tokens << ',' << r.output_tokens
        << ',' << seconds(r.queuing_delay) << ',' << seconds(r.exec_time) << ','
        << seconds(r.ttft) << ',' << real(r.tpot_s) << ',' << (r.met_ttft ? 1 : 0) << ','
        << (r.met_tpot ? 1 : 0) << '\n';
  }
}

void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve) {
  out << "qps_per_gpu,slo_scale,attainment,attainment_min,attainment_max,goodput,qps_per_watt\n";
  for (const auto& p : curve) {
    out << real(p.qps_per_gpu) << ',' << real(p.slo_scale) << ',' << real(p.attainment) << ','
        << real(p.attainment_min) << ',' << real(p.attainment_max) << ',' << real(p.goodput)
        << ',' << real(p.qps_per_watt) << '\n';
  }
}

}  // namespace powersim

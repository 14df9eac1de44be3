// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>
#include <sstream>
#include <vector>

#include "powersim/errors.hpp"
#include "powersim/metrics.hpp"

using namespace powersim;

namespace {

RequestRecord record(double arrival, double ttft, double tpot, double completion,
                     SloTarget slo = {}) {
  RequestRecord r;
  r.arrival = to_micros(arrival);
  r.queuing_delay = to_micros(ttft / 2);
  r.exec_time = to_micros(ttft) - r.queuing_delay;
  r.ttft = r.queuing_delay + r.exec_time;
  r.tpot_s = tpot;
  r.completion = to_micros(completion);
  r.slo = slo;
  std::tie(r.met_ttft, r.met_tpot) = score_request(r, slo);
  return r;
}

}  // namespace

TEST_CASE("score_request is inclusive") {
  const SloTarget slo{1.0, 0.040};
  CHECK(score_request(record(0, 0.9, 0.038, 5), slo) == std::pair{true, true});
  CHECK(score_request(record(0, 1.0, 0.040, 5), slo) == std::pair{true, true});
  CHECK(score_request(record(0, 1.000001, 0.0400001, 5), slo) == std::pair{false, false});
  CHECK(score_request(record(0, 2.0, 0.0, 5), slo) == std::pair{false, true});
}

TEST_CASE("make_record splits TTFT and divides TPOT by the decode tokens") {
  Lifecycle life;
  life.arrival = 1'000'000;
  life.prefill_start = 1'200'000;
  life.prefill_end = 1'500'000;
  life.transfer_start = life.prefill_end;
  life.transfer_end = life.decode_join = 1'520'000;
  life.completion = 1'900'000;
  const auto r = make_record({7, 1.0, 4000, 5}, life, {1.0, 0.040});
  CHECK(r.queuing_delay == 200'000);
  CHECK(r.exec_time == 300'000);
  CHECK(r.ttft == r.queuing_delay + r.exec_time);
  CHECK(r.tpot_s == doctest::Approx(0.1));
  CHECK(r.met_ttft);
  CHECK_FALSE(r.met_tpot);

  const auto single = make_record({8, 1.0, 4000, 1}, life, {1.0, 0.040});
  CHECK(single.tpot_s == 0.0);
  CHECK(single.met_tpot);
}

TEST_CASE("attainment and goodput") {
  const std::vector<RequestRecord> three = {record(0, 0.5, 0.02, 2), record(1, 0.5, 0.02, 5),
                                            record(2, 3.0, 0.02, 10)};
  const auto ag = attainment_and_goodput(three, 10.0);
  CHECK(ag.attainment == doctest::Approx(2.0 / 3.0));
  CHECK(ag.goodput == doctest::Approx(0.2));
  CHECK(run_duration(three) == doctest::Approx(10.0));

  const auto none = attainment_and_goodput({}, 0.0);
  CHECK(none.attainment == 0.0);
  CHECK(none.goodput == 0.0);

  const std::vector<RequestRecord> all = {record(0, 0.1, 0.01, 1), record(0, 0.2, 0.01, 2)};
  CHECK(attainment_and_goodput(all, run_duration(all)).attainment == 1.0);
}

TEST_CASE("percentile is nearest rank") {
  CHECK(percentile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 90) == 9);
  CHECK(percentile({10, 9, 8, 7, 6, 5, 4, 3, 2, 1}, 50) == 5);
  CHECK(percentile({4.2}, 1) == 4.2);
  CHECK(percentile({4.2}, 99) == 4.2);
  CHECK(percentile({1, 2, 3}, 100) == 3);
  CHECK(percentile({1, 2, 3}, 0) == 1);
  CHECK_THROWS_AS(percentile({}, 90), DomainError);
}

TEST_CASE("QPS per watt") {
  const std::vector<PowerSample> flat = {{0, 4800}};
  CHECK(avg_provisioned_power(flat, 0, to_micros(100)) == doctest::Approx(4800));
  CHECK(qps_per_watt(12.0, 4800.0) == doctest::Approx(0.0025));
  CHECK(node_qps_per_watt(12.0, 4800.0, 0.6) == doctest::Approx(12.0 / 8000.0));
  CHECK(qps_per_watt(1.0, 0.0) == 0.0);

  // Caps halved for half the run: the midpoint.
  const std::vector<PowerSample> halved = {{0, 4800}, {to_micros(50), 2400}};
  CHECK(avg_provisioned_power(halved, 0, to_micros(100)) == doctest::Approx(3600));
  // A window starting after a change uses the value in force then.
  CHECK(avg_provisioned_power(halved, to_micros(60), to_micros(80)) == doctest::Approx(2400));
  CHECK(avg_provisioned_power({}, 0, 10) == 0.0);
}

TEST_CASE("summary over records") {
  const std::vector<RequestRecord> recs = {record(0, 0.5, 0.02, 2), record(1, 0.7, 0.03, 5),
                                           record(2, 3.0, 0.05, 10)};
  const std::vector<PowerSample> power = {{0, 4800}};
  const auto s = summarize(recs, power);
  CHECK(s.requests == 3);
  CHECK(s.attained == 2);
  CHECK(s.goodput <= s.throughput);
  CHECK(s.ttft_p90 == doctest::Approx(3.0));
  CHECK(s.tpot_p50 == doctest::Approx(0.03));
  CHECK(s.avg_provisioned_gpu_power == doctest::Approx(4800));
  CHECK(s.node_power_estimate == doctest::Approx(8000));
  CHECK(s.mean_queuing_delay_s + s.mean_exec_time_s == doctest::Approx((0.5 + 0.7 + 3.0) / 3));
  const auto j = summary_to_json(s);
  CHECK(j.at("attained") == 2);
  CHECK(j.contains("node_qps_per_watt"));

  const auto empty = summarize({}, power);
  CHECK(empty.attainment == 0.0);
  CHECK(empty.goodput == 0.0);
}

TEST_CASE("attainment is a recount and monotone in the SLO") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ttft(0.0, 2.0), tpot(0.0, 0.08);
  std::vector<RequestRecord> recs;
  for (int i = 0; i < 500; ++i) recs.push_back(record(i * 0.1, ttft(rng), tpot(rng), i * 0.1 + 3));
  long met = 0;
  for (const auto& r : recs) met += (r.ttft_s() <= 1.0 && r.tpot_s <= 0.040) ? 1 : 0;
  CHECK(attainment_and_goodput(recs, 10.0).attainment == static_cast<double>(met) / 500.0);

  for (const auto& r : recs) {
    const auto [t1, p1] = score_request(r, {1.0, 0.040});
    const auto [t2, p2] = score_request(r, SloTarget{1.0, 0.040}.scaled(2.0));
    CHECK((!t1 || t2));
    CHECK((!p1 || p2));
  }
}

TEST_CASE("attainment curve and threshold query") {
  std::vector<CurvePoint> pts = {{2.0, 1.0, 0.5}, {1.0, 1.0, 0.95}, {1.5, 1.0, 0.82},
                                 {1.0, 2.0, 1.0}};
  const auto curve = attainment_curve(pts);
  REQUIRE(curve.size() == 4);
  CHECK(curve[0].qps_per_gpu == 1.0);
  CHECK(curve[1].qps_per_gpu == 1.5);
  CHECK(curve[2].qps_per_gpu == 2.0);
  CHECK(curve[3].slo_scale == 2.0);
  const std::vector<CurvePoint> tight(curve.begin(), curve.begin() + 3);
  CHECK(max_qps_at_attainment(tight, 0.8) == 1.5);
  CHECK_FALSE(max_qps_at_attainment(tight, 0.99));
  CHECK(attainment_curve({}).empty());

  std::ostringstream out;
  write_curve_csv(out, tight);
  CHECK(out.str().rfind("qps_per_gpu,slo_scale,attainment", 0) == 0);
}

TEST_CASE("records CSV") {
  std::ostringstream out;
  const std::vector<RequestRecord> recs = {record(0.5, 0.25, 0.02, 2)};
  write_records_csv(out, recs);
  const auto text = out.str();
  CHECK(text.rfind("id,arrival_s,input_tokens,output_tokens,queuing_delay_s,exec_s,ttft_s,tpot_s,"
                   "met_ttft,met_tpot",
                   0) == 0);
  CHECK(text.find("0.500000") != std::string::npos);
}

TEST_CASE("lifecycle monotonicity") {
  Lifecycle ok{0, 1, 2, 2, 3, 3, 9};
  CHECK(ok.monotone());
  Lifecycle bad{0, 5, 2, 2, 3, 3, 9};
  CHECK_FALSE(bad.monotone());
}

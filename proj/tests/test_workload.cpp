// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "powersim/errors.hpp"
#include "powersim/rng.hpp"
#include "powersim/workload.hpp"

using namespace powersim;

namespace {

WorkloadSpec poisson_spec(double qps_per_gpu, int gpus, std::uint64_t seed) {
  WorkloadSpec spec;
  spec.mode = WorkloadMode::kPoissonTrace;
  spec.qps_per_gpu = qps_per_gpu;
  spec.gpu_count = gpus;
  spec.seed = seed;
  return spec;
}

std::string to_csv(const std::vector<RequestSpec>& reqs) {
  std::ostringstream out;
  write_trace_csv(out, reqs);
  return out.str();
}

}  // namespace

TEST_CASE("random streams are reproducible and independent") {
  RandomStream a(7, 0), b(7, 0), c(7, 1);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  RandomStream d(3, 1);
  for (int i = 0; i < 10000; ++i) {
    const long v = d.uniform_int(512, 8192);
    REQUIRE(v >= 512);
    REQUIRE(v <= 8192);
    const double u = d.uniform_open();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("poisson arrivals have the configured mean gap") {
  const auto spec = poisson_spec(1.5, 8, 0);
  std::vector<std::pair<long, long>> lengths(1000, {4096, 128});
  const auto reqs = gen_poisson_arrivals(spec, lengths);
  REQUIRE(reqs.size() == 1000);
  // Sample mean of the generated gaps (first gap measured from t = 0).
  double sum = 0.0;
  double prev = 0.0;
  for (const auto& r : reqs) {
    sum += r.arrival_time - prev;
    prev = r.arrival_time;
  }
  const double mean_gap = sum / reqs.size();
  CHECK(mean_gap == doctest::Approx(1.0 / 12.0).epsilon(0.10));
}

TEST_CASE("poisson arrivals: single request, ordering, determinism, errors") {
  const auto spec = poisson_spec(1.0, 8, 42);
  const auto one = gen_poisson_arrivals(spec, {{100, 10}});
  REQUIRE(one.size() == 1);
  CHECK(one[0].arrival_time >= 0.0);
  CHECK(one[0].id == 0);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto reqs = gen_poisson_arrivals(poisson_spec(2.0, 8, seed),
                                           sample_lengths(LengthDistribution{}, 300, seed));
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      REQUIRE(reqs[i].id == static_cast<long>(i));
      if (i > 0) REQUIRE(reqs[i].arrival_time >= reqs[i - 1].arrival_time);
    }
  }

  const auto lengths = sample_lengths(LengthDistribution{}, 500, 9);
  CHECK(to_csv(gen_poisson_arrivals(spec, lengths)) == to_csv(gen_poisson_arrivals(spec, lengths)));
  CHECK_THROWS_AS(gen_poisson_arrivals(spec, {}), DomainError);
}

TEST_CASE("two-phase synthetic workload") {
  WorkloadSpec spec;
  spec.mode = WorkloadMode::kTwoPhaseSynthetic;
  spec.qps_per_gpu = 2.0;

  SUBCASE("defaults") {
    const auto w = gen_two_phase_synthetic(spec);
    REQUIRE(w.requests.size() == 2000);
    long total_input = 0;
    for (std::size_t i = 0; i < w.requests.size(); ++i) {
      const auto& r = w.requests[i];
      total_input += r.input_tokens;
      if (i < 1000) {
        CHECK(r.input_tokens == 8192);
        CHECK(r.output_tokens == 128);
      } else {
        CHECK(r.input_tokens == 500);
        CHECK(r.output_tokens == 500);
      }
    }
    CHECK(total_input == 8192L * 1000 + 500L * 1000);
    REQUIRE(w.slo_schedule.has_value());
    const double boundary = w.requests[1000].arrival_time;
    CHECK(w.slo_schedule->at(0.0) == SloTarget{1.0, 0.040});
    CHECK(w.slo_schedule->at(std::nextafter(boundary, 0.0)) == SloTarget{1.0, 0.040});
    CHECK(w.slo_schedule->at(boundary) == SloTarget{1.0, 0.020});
    CHECK(w.slo_schedule->at(1e9).ttft_s == 1.0);
  }
  SUBCASE("phase counts (1,1)") {
    spec.phases[0].count = 1;
    spec.phases[1].count = 1;
    const auto w = gen_two_phase_synthetic(spec);
    REQUIRE(w.requests.size() == 2);
    CHECK(w.requests[0].input_tokens == 8192);
    CHECK(w.requests[1].input_tokens == 500);
    CHECK(w.requests[0].arrival_time <= w.requests[1].arrival_time);
  }
  SUBCASE("seed changes gaps but not lengths or phase order") {
    auto other = spec;
    other.seed = 99;
    const auto a = gen_two_phase_synthetic(spec).requests;
    const auto b = gen_two_phase_synthetic(other).requests;
    REQUIRE(a.size() == b.size());
    long differing_arrivals = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].input_tokens == b[i].input_tokens);
      CHECK(a[i].output_tokens == b[i].output_tokens);
      CHECK(a[i].id == b[i].id);
      if (a[i].arrival_time != b[i].arrival_time) ++differing_arrivals;
    }
    CHECK(differing_arrivals == static_cast<long>(a.size()));
  }
}

TEST_CASE("trace loading") {
  WorkloadSpec spec = poisson_spec(1.0, 8, 0);  // lambda = 8

  SUBCASE("row without arrival gets synthesized arrival") {
    std::istringstream in("input_tokens,output_tokens\n4096,128\n");
    const auto reqs = parse_trace(in, false, spec);
    REQUIRE(reqs.size() == 1);
    CHECK(reqs[0].input_tokens == 4096);
    CHECK(reqs[0].output_tokens == 128);
    CHECK(reqs[0].arrival_time == gen_poisson_arrivals(spec, {{4096, 128}})[0].arrival_time);
  }
  SUBCASE("headerless rows and clamping") {
    std::istringstream in("16000,128\n100,5\n7,7\n");
    const auto reqs = parse_trace(in, false, spec);
    REQUIRE(reqs.size() == 3);
    CHECK(reqs[0].input_tokens == 8192);
    for (long i = 0; i < 3; ++i) CHECK(reqs[i].id == i);
  }
  SUBCASE("explicit arrival times are kept") {
    std::istringstream in("input_tokens,output_tokens,arrival_time\n10,2,0.5\n20,3,1.25\n");
    const auto reqs = parse_trace(in, false, spec);
    REQUIRE(reqs.size() == 2);
    CHECK(reqs[1].arrival_time == 1.25);
  }
  SUBCASE("jsonl") {
    std::istringstream in(R"({"input_tokens": 300, "output_tokens": 4, "arrival_time": 0.1}
{"input_tokens": 9000, "output_tokens": 4, "arrival_time": 0.2}
)");
    const auto reqs = parse_trace(in, true, spec);
    REQUIRE(reqs.size() == 2);
    CHECK(reqs[1].input_tokens == 8192);
  }
  SUBCASE("malformed row reports its line number") {
    std::istringstream in("input_tokens,output_tokens\n10,2\nabc,3\n");
    CHECK_THROWS_WITH_AS(parse_trace(in, false, spec), doctest::Contains("trace:3"),
                         ValidationError);
  }
  SUBCASE("zero-length record rejected") {
    std::istringstream in("input_tokens,output_tokens\n0,2\n");
    CHECK_THROWS_AS(parse_trace(in, false, spec), ValidationError);
  }
  SUBCASE("round trip through the export format") {
    const auto reqs = gen_poisson_arrivals(spec, sample_lengths(LengthDistribution{}, 50, 1));
    const auto path = std::filesystem::temp_directory_path() / "powersim_trace_rt.csv";
    {
      std::ofstream out(path);
      write_trace_csv(out, reqs);
    }
    const auto back = load_trace(path, spec);
    REQUIRE(back.size() == reqs.size());
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      CHECK(back[i].input_tokens == reqs[i].input_tokens);
      CHECK(back[i].arrival_time == doctest::Approx(reqs[i].arrival_time).epsilon(1e-6));
    }
  }
}

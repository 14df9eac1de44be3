// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <vector>

#include "powersim/controller.hpp"
#include "powersim/errors.hpp"

using namespace powersim;

namespace {

std::vector<WorkerView> pools(int prefill, int prefill_cap, int decode, int decode_cap) {
  std::vector<WorkerView> v;
  for (int i = 0; i < prefill + decode; ++i) {
    WorkerView w;
    w.id = i;
    w.role = i < prefill ? Role::kPrefill : Role::kDecode;
    w.cap = i < prefill ? prefill_cap : decode_cap;
    v.push_back(w);
  }
  return v;
}

ControllerConfig config(Policy policy) {
  ControllerConfig c;
  c.policy = policy;
  return c;
}

// Samples carrying one value at t = 10 s, so the default 5 s window sees them.
struct Metrics {
  std::vector<TimedSample> ttft;
  std::vector<TimedSample> tpot;
};

Metrics metrics(double ttft, double tpot) {
  return {{{to_micros(10.0), ttft}}, {{to_micros(10.0), tpot}}};
}

ControlSnapshot snapshot(std::vector<WorkerView> workers, const Metrics& m, long prefill_queue) {
  ControlSnapshot s;
  if (!workers.empty()) workers.front().queued_requests = prefill_queue;
  s.workers = std::move(workers);
  s.slo = SloTarget{1.0, 0.040};
  s.ttft_samples = m.ttft;
  s.tpot_samples = m.tpot;
  return s;
}

const Micros kNow = to_micros(10.0);

}  // namespace

TEST_CASE("guard truth table") {
  struct Row {
    double ttft, tpot;
    long queue;
    ActionKind kind;
    Direction dir;
  };
  const std::vector<Row> rows = {
      {1.4, 0.018, 12, ActionKind::kMovePower, Direction::kDecodeToPrefill},
      {1.4, 0.018, 8, ActionKind::kNone, {}},    // queue must exceed the threshold
      {1.4, 0.050, 12, ActionKind::kNone, {}},   // both SLOs violated
      {0.5, 0.050, 0, ActionKind::kMovePower, Direction::kPrefillToDecode},
      {1.0, 0.050, 0, ActionKind::kNone, {}},    // TTFT at the SLO is not below it
      {0.5, 0.040, 0, ActionKind::kNone, {}},    // TPOT at the SLO is not a violation
      {0.5, 0.020, 50, ActionKind::kNone, {}},   // everything met
  };
  for (const auto& r : rows) {
    CAPTURE(r.ttft);
    CAPTURE(r.tpot);
    CAPTURE(r.queue);
    Controller ctl(config(Policy::kDynPower));
    const auto m = metrics(r.ttft, r.tpot);
    // 650/550 leaves power headroom in both directions.
    const auto a = ctl.tick(snapshot(pools(4, 650, 4, 550), m, r.queue), kNow);
    CHECK(a.kind == r.kind);
    if (r.kind != ActionKind::kNone) CHECK(a.direction == r.dir);
  }
}

TEST_CASE("empty metric windows count as met") {
  Controller ctl(config(Policy::kDynBoth));
  const Metrics m;
  const auto a = ctl.tick(snapshot(pools(4, 600, 4, 600), m, 100), kNow);
  CHECK(a.kind == ActionKind::kNone);
  CHECK(ctl.last_stats().ttft == 0.0);
  CHECK(ctl.last_stats().tpot == 0.0);
}

TEST_CASE("cooldown is strict and restarts on every move") {
  auto cfg = config(Policy::kDynPower);
  Controller ctl(cfg);
  const auto m = metrics(1.4, 0.018);
  auto snap = snapshot(pools(4, 600, 4, 600), m, 12);
  REQUIRE(ctl.tick(snap, kNow).kind == ActionKind::kMovePower);
  CHECK(ctl.last_move_time() == kNow);
  CHECK(ctl.tick(snap, kNow + to_micros(1.0)).kind == ActionKind::kNone);
  CHECK(ctl.tick(snap, kNow + to_micros(4.0)).kind == ActionKind::kNone);
  CHECK(ctl.tick(snap, kNow + to_micros(4.0) + 1).kind == ActionKind::kMovePower);
}

TEST_CASE("no decision while a move is still landing") {
  Controller ctl(config(Policy::kDynBoth));
  const auto m = metrics(1.4, 0.018);
  auto snap = snapshot(pools(4, 600, 4, 600), m, 12);
  snap.settles_pending = true;
  CHECK(ctl.tick(snap, kNow).kind == ActionKind::kNone);
  snap.settles_pending = false;
  snap.role_change_pending = true;
  CHECK(ctl.tick(snap, kNow).kind == ActionKind::kNone);
}

TEST_CASE("static policy never acts") {
  Controller ctl(config(Policy::kStatic));
  const auto m = metrics(5.0, 0.001);
  const auto a = ctl.tick(snapshot(pools(4, 600, 4, 600), m, 100), kNow);
  CHECK(a.kind == ActionKind::kNone);
  CHECK_FALSE(a.saturated);
}

TEST_CASE("move_power arithmetic") {
  const auto cfg = config(Policy::kDynPower);
  SUBCASE("4P4D at 600 W") {
    const auto v = pools(4, 600, 4, 600);
    const auto m = move_power(Direction::kDecodeToPrefill, v, cfg);
    REQUIRE(m);
    CHECK(m->freed_watts == 200);
    REQUIRE(m->donors.size() == 4);
    for (const auto& d : m->donors) CHECK(d.new_cap == 550);
    REQUIRE(m->recipients.size() == 4);
    for (const auto& r : m->recipients) CHECK(r.new_cap == 650);
    CHECK(m->donors.front().worker == 4);
    CHECK(m->recipients.front().worker == 0);
  }
  SUBCASE("5P3D at 600 W") {
    const auto v = pools(5, 600, 3, 600);
    const auto m = move_power(Direction::kDecodeToPrefill, v, cfg);
    REQUIRE(m);
    CHECK(m->freed_watts == 150);
    REQUIRE(m->recipients.size() == 5);
    for (const auto& r : m->recipients) CHECK(r.new_cap == 630);
  }
  SUBCASE("donors clamp at their floor") {
    const auto v = pools(4, 700, 4, 420);
    const auto m = move_power(Direction::kDecodeToPrefill, v, cfg);
    REQUIRE(m);
    CHECK(m->freed_watts == 80);
    for (const auto& d : m->donors) CHECK(d.new_cap == 400);
    for (const auto& r : m->recipients) CHECK(r.new_cap == 720);
  }
  SUBCASE("recipients clamp at their ceiling, the rest stays unallocated") {
    const auto v = pools(4, 725, 4, 475);
    const auto m = move_power(Direction::kDecodeToPrefill, v, cfg);
    REQUIRE(m);
    CHECK(m->freed_watts == 200);
    for (const auto& d : m->donors) CHECK(d.new_cap == 425);
    for (const auto& r : m->recipients) CHECK(r.new_cap == 750);
  }
  SUBCASE("prefill to decode stops at the decode ceiling") {
    const auto v = pools(4, 650, 4, 550);
    const auto m = move_power(Direction::kPrefillToDecode, v, cfg);
    REQUIRE(m);
    for (const auto& d : m->donors) CHECK(d.new_cap == 600);
    for (const auto& r : m->recipients) CHECK(r.new_cap == 600);
  }
  SUBCASE("saturated pools give no move") {
    CHECK_FALSE(move_power(Direction::kDecodeToPrefill, pools(4, 750, 4, 450), cfg));
    CHECK_FALSE(move_power(Direction::kPrefillToDecode, pools(4, 600, 4, 600), cfg));
  }
}

TEST_CASE("power_limits_reached") {
  const auto cfg = config(Policy::kDynBoth);
  CHECK(power_limits_reached(Direction::kDecodeToPrefill, pools(4, 750, 4, 450), cfg));
  CHECK(power_limits_reached(Direction::kDecodeToPrefill, pools(4, 600, 4, 400), cfg));
  CHECK_FALSE(power_limits_reached(Direction::kDecodeToPrefill, pools(4, 600, 4, 600), cfg));
  // Decode sits at the 600 W dynamic ceiling by default.
  CHECK(power_limits_reached(Direction::kPrefillToDecode, pools(4, 600, 4, 600), cfg));
  auto raised = cfg;
  raised.decode_dynamic_ceiling = 750;
  CHECK_FALSE(power_limits_reached(Direction::kPrefillToDecode, pools(4, 600, 4, 600), raised));
  CHECK(power_limits_reached(Direction::kPrefillToDecode, pools(4, 400, 4, 600), raised));
}

TEST_CASE("move_gpu picks the idlest donor and redistributes uniformly") {
  const auto cfg = config(Policy::kDynBoth);
  auto v = pools(5, 600, 3, 600);
  v[5].active_sequences = 3;
  v[6].active_sequences = 0;
  v[7].active_sequences = 5;
  auto m = move_gpu(Direction::kDecodeToPrefill, v, 4800, cfg);
  REQUIRE(m);
  CHECK(m->worker == 6);
  CHECK(m->uniform_cap == 600);

  v[5].active_sequences = 0;
  m = move_gpu(Direction::kDecodeToPrefill, v, 4800, cfg);
  REQUIRE(m);
  CHECK(m->worker == 5);  // tie goes to the lowest id

  v = pools(4, 600, 4, 600);
  v[0].queued_tokens = 9000;
  v[1].queued_tokens = 100;
  v[2].queued_tokens = 100;
  v[3].queued_tokens = 4000;
  m = move_gpu(Direction::kPrefillToDecode, v, 4800, cfg);
  REQUIRE(m);
  CHECK(m->worker == 1);

  // Budget over N is clamped into [min_p, max_p].
  CHECK(move_gpu(Direction::kDecodeToPrefill, pools(4, 750, 4, 750), 6000, cfg)->uniform_cap == 750);
  CHECK(move_gpu(Direction::kDecodeToPrefill, pools(4, 750, 4, 750), 8000, cfg)->uniform_cap == 750);
  CHECK(move_gpu(Direction::kDecodeToPrefill, pools(4, 400, 4, 400), 2400, cfg)->uniform_cap == 400);
}

TEST_CASE("move_gpu keeps one worker per role") {
  const auto cfg = config(Policy::kDynGpu);
  CHECK_FALSE(move_gpu(Direction::kPrefillToDecode, pools(1, 600, 7, 600), 4800, cfg));
  CHECK_FALSE(move_gpu(Direction::kDecodeToPrefill, pools(7, 600, 1, 600), 4800, cfg));
  auto v = pools(6, 600, 2, 600);
  v[6].draining = true;
  CHECK_FALSE(move_gpu(Direction::kDecodeToPrefill, v, 4800, cfg));
}

TEST_CASE("rolling metrics") {
  std::vector<TimedSample> ttft;
  for (int i = 1; i <= 10; ++i) ttft.push_back({to_micros(i * 0.1), 0.2 * i});
  const std::vector<TimedSample> none;
  auto s = rolling_metrics(ttft, none, to_micros(1.0), to_micros(5.0), Statistic::kP90);
  CHECK(s.ttft == doctest::Approx(1.8));
  CHECK(s.tpot == 0.0);

  s = rolling_metrics(none, none, to_micros(1.0), to_micros(5.0), Statistic::kP90);
  CHECK(s.ttft == 0.0);
  CHECK(s.tpot == 0.0);

  const std::vector<TimedSample> one{{to_micros(3.0), 0.7}};
  CHECK(rolling_metrics(one, one, to_micros(4.0), to_micros(5.0), Statistic::kP90).ttft == 0.7);
  CHECK(rolling_metrics(one, one, to_micros(4.0), to_micros(5.0), Statistic::kMean).tpot == 0.7);

  // The window is [now - window, now]: older samples fall out.
  s = rolling_metrics(ttft, none, to_micros(1.0), to_micros(0.35), Statistic::kMean);
  CHECK(s.ttft == doctest::Approx((1.4 + 1.6 + 1.8 + 2.0) / 4));
  s = rolling_metrics(ttft, none, to_micros(0.5), to_micros(5.0), Statistic::kMean);
  CHECK(s.ttft == doctest::Approx((0.2 + 0.4 + 0.6 + 0.8 + 1.0) / 5));
}

TEST_CASE("policy masking of the two axes") {
  const auto m = metrics(1.4, 0.018);
  SUBCASE("dyn-power saturates at 750/450 and never moves a GPU") {
    Controller ctl(config(Policy::kDynPower));
    const auto a = ctl.tick(snapshot(pools(4, 750, 4, 450), m, 12), kNow);
    CHECK(a.kind == ActionKind::kNone);
    CHECK(a.limits_reached);
    CHECK(a.saturated);
    // Saturation is reported once until a move happens again.
    CHECK_FALSE(ctl.tick(snapshot(pools(4, 750, 4, 450), m, 12), kNow + to_micros(5.0)).saturated);
  }
  SUBCASE("dyn-gpu goes straight to a GPU move") {
    Controller ctl(config(Policy::kDynGpu));
    const auto a = ctl.tick(snapshot(pools(4, 600, 4, 600), m, 12), kNow);
    CHECK(a.kind == ActionKind::kMoveGpu);
    CHECK_FALSE(a.power);
    REQUIRE(a.gpu);
    CHECK(a.gpu->worker == 4);
    CHECK(a.gpu->uniform_cap == 600);
  }
  SUBCASE("dyn-both prefers power while headroom remains") {
    Controller ctl(config(Policy::kDynBoth));
    const auto a = ctl.tick(snapshot(pools(4, 600, 4, 600), m, 12), kNow);
    CHECK(a.kind == ActionKind::kMovePower);
    CHECK_FALSE(a.gpu);
    CHECK_FALSE(a.limits_reached);
  }
}

TEST_CASE("a power step that exhausts the axis escalates in the same tick") {
  Controller ctl(config(Policy::kDynBoth));
  const auto m = metrics(1.4, 0.018);
  const auto a = ctl.tick(snapshot(pools(4, 700, 4, 500), m, 12), kNow);
  CHECK(a.kind == ActionKind::kMoveGpu);
  CHECK(a.limits_reached);
  REQUIRE(a.power);
  REQUIRE(a.gpu);
  for (const auto& r : a.power->recipients) CHECK(r.new_cap == 750);
  CHECK(a.gpu->uniform_cap == 600);
  CHECK(ctl.last_move_time() == kNow);

  Controller already(config(Policy::kDynBoth));
  const auto b = already.tick(snapshot(pools(4, 750, 4, 450), m, 12), kNow);
  CHECK(b.kind == ActionKind::kMoveGpu);
  CHECK_FALSE(b.power);
}

TEST_CASE("prefill to decode escalation stops at one prefill GPU") {
  Controller ctl(config(Policy::kDynBoth));
  const auto m = metrics(0.3, 0.060);
  const auto a = ctl.tick(snapshot(pools(1, 600, 7, 600), m, 0), kNow);
  CHECK(a.kind == ActionKind::kNone);
  CHECK(a.saturated);
}

TEST_CASE("config validation") {
  ControllerConfig c;
  CHECK_NOTHROW(c.validate());
  c.decode_dynamic_ceiling = 800;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.cooldown_s = 0.2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.power_step = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  const auto round = controller_config_from_json(controller_config_to_json(config(Policy::kDynGpu)));
  CHECK(round.policy == Policy::kDynGpu);
  CHECK_THROWS_AS(controller_config_from_json({{"polcy", "dyn-gpu"}}), ConfigError);
  CHECK_THROWS_AS(policy_from_string("dynamic"), ConfigError);
}

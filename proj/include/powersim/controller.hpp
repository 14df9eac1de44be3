// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "powersim/metrics.hpp"
#include "powersim/workload.hpp"

namespace powersim {

enum class Role { kPrefill, kDecode };
enum class Policy { kStatic, kDynPower, kDynGpu, kDynBoth };
enum class Direction { kDecodeToPrefill, kPrefillToDecode };
enum class ActionKind { kNone, kMovePower, kMoveGpu };
enum class Statistic { kP90, kMean };

std::string to_string(Role role);
std::string to_string(Policy policy);
std::string to_string(Direction direction);
Policy policy_from_string(const std::string& name);

inline Role donor_role(Direction d) {
  return d == Direction::kDecodeToPrefill ? Role::kDecode : Role::kPrefill;
}
inline Role recipient_role(Direction d) {
  return d == Direction::kDecodeToPrefill ? Role::kPrefill : Role::kDecode;
}

struct ControllerConfig {
  Policy policy = Policy::kStatic;
  long queue_threshold = 8;            // requests waiting for prefill
  double cooldown_s = 4.0;
  double tick_period_s = 0.25;
  int power_step = 50;                 // W per donor per move
  int min_p = 400;
  int max_p = 750;
  int decode_dynamic_ceiling = 600;
  double metric_window_s = 5.0;
  Statistic statistic = Statistic::kP90;

  void validate() const;
};

nlohmann::json controller_config_to_json(const ControllerConfig& c);
ControllerConfig controller_config_from_json(const nlohmann::json& doc, ControllerConfig base = {});

// Controller's view of one GPU. `cap` is the commanded cap.
struct WorkerView {
  int id = 0;
  Role role = Role::kPrefill;
  int cap = 600;
  bool draining = false;
  long queued_requests = 0;
  long queued_tokens = 0;
  int active_sequences = 0;
};

struct TimedSample {
  Micros t = 0;
  double value = 0.0;
};

struct ControlSnapshot {
  std::vector<WorkerView> workers;
  int node_budget = 4800;
  bool settles_pending = false;
  bool role_change_pending = false;
  SloTarget slo;
  // Time-ordered samples; TTFT stamped at first token, TPOT at completion.
  std::span<const TimedSample> ttft_samples;
  std::span<const TimedSample> tpot_samples;
  double rate_prefill = 0.0;  // arrivals/s over the metric window
  double rate_decode = 0.0;   // completions/s over the metric window
};

struct MetricStats {
  double ttft = 0.0;
  double tpot = 0.0;
};

// Statistic over samples with t in [now - window, now]; an empty window is 0.
MetricStats rolling_metrics(std::span<const TimedSample> ttft, std::span<const TimedSample> tpot,
                            Micros now, Micros window, Statistic statistic);

struct CapChange {
  int worker = 0;
  int new_cap = 0;
};

struct PowerMove {
  std::vector<CapChange> donors;      // lowered first
  std::vector<CapChange> recipients;  // raised once every donor has settled
  int freed_watts = 0;
};

struct GpuMove {
  int worker = 0;
  int uniform_cap = 600;
};

// One tick's decision. A power step that exhausts the power axis is followed
// by a GPU move in the same tick; `kind` is then kMoveGpu with both parts set.
struct Action {
  ActionKind kind = ActionKind::kNone;
  Direction direction = Direction::kDecodeToPrefill;
  std::optional<PowerMove> power;
  std::optional<GpuMove> gpu;
  bool limits_reached = false;  // power axis exhausted (or disabled) after any power step
  bool saturated = false;       // guard held but neither axis could act
};

int donor_floor(Direction d, const ControllerConfig& cfg);
int recipient_ceiling(Direction d, const ControllerConfig& cfg);

bool power_limits_reached(Direction d, std::span<const WorkerView> workers,
                          const ControllerConfig& cfg);

// Lowers every donor by power_step (clamped at its floor) and splits the freed
// watts evenly across recipients (clamped at their ceiling); the remainder
// stays unallocated. Empty when limits are reached.
std::optional<PowerMove> move_power(Direction d, std::span<const WorkerView> workers,
                                    const ControllerConfig& cfg);

// Picks the donor-role worker with the least outstanding work. Empty when the
// donor role would be left without a worker.
std::optional<GpuMove> move_gpu(Direction d, std::span<const WorkerView> workers, int node_budget,
                                const ControllerConfig& cfg);

// Interface the simulator calls every tick period.
class ControlPolicy {
 public:
  virtual ~ControlPolicy() = default;
  virtual Policy policy() const = 0;
  virtual double tick_period_s() const = 0;
  virtual Action tick(const ControlSnapshot& snapshot, Micros now) = 0;
};

// Reactive power / GPU reallocation with cooldown. The two guards are
//   TTFT > SLO and |Q_P| > threshold and TPOT < SLO  -> decode to prefill
//   TPOT > SLO and TTFT < SLO                        -> prefill to decode
// each also requiring the cooldown to have elapsed. Power moves first; a GPU
// moves as soon as the power axis is exhausted for that direction.
class Controller : public ControlPolicy {
 public:
  explicit Controller(ControllerConfig cfg);

  Policy policy() const override { return cfg_.policy; }
  double tick_period_s() const override { return cfg_.tick_period_s; }
  Action tick(const ControlSnapshot& snapshot, Micros now) override;

  const ControllerConfig& config() const { return cfg_; }
  Micros last_move_time() const { return last_move_; }
  const MetricStats& last_stats() const { return last_stats_; }

 private:
  ControllerConfig cfg_;
  Micros last_move_ = 0;
  MetricStats last_stats_;
  std::array<bool, 2> saturation_reported_{false, false};
};

}  // namespace powersim

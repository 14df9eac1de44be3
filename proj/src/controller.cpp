// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "powersim/controller.hpp"

#include <algorithm>
#include <numeric>

#include "powersim/errors.hpp"
#include "powersim/json_keys.hpp"

namespace powersim {

std::string to_string(Role role) { return role == Role::kPrefill ? "prefill" : "decode"; }

std::string to_string(Policy policy) {
  switch (policy) {
    case Policy::kStatic: return "static";
    case Policy::kDynPower: return "dyn-power";
    case Policy::kDynGpu: return "dyn-gpu";
    case Policy::kDynBoth: return "dyn-both";
  }
  return "?";
}

std::string to_string(Direction direction) {
  return direction == Direction::kDecodeToPrefill ? "decode->prefill" : "prefill->decode";
}

Policy policy_from_string(const std::string& name) {
  if (name == "static") return Policy::kStatic;
  if (name == "dyn-power") return Policy::kDynPower;
  if (name == "dyn-gpu") return Policy::kDynGpu;
  if (name == "dyn-both") return Policy::kDynBoth;
  throw ConfigError("controller.policy: unknown policy '" + name + "'");
}

void ControllerConfig::validate() const {
  if (!(min_p <= decode_dynamic_ceiling && decode_dynamic_ceiling <= max_p)) {
    throw ConfigError("controller: requires min_p <= decode_dynamic_ceiling <= max_p");
  }
  if (!(tick_period_s > 0.0)) throw ConfigError("controller.tick_period_s must be > 0");
  if (!(cooldown_s > tick_period_s)) throw ConfigError("controller.cooldown_s must exceed tick_period_s");
  if (power_step <= 0) throw ConfigError("controller.power_step must be > 0");
  if (queue_threshold < 0) throw ConfigError("controller.queue_threshold must be >= 0");
  if (!(metric_window_s > 0.0)) throw ConfigError("controller.metric_window_s must be > 0");
}

nlohmann::json controller_config_to_json(const ControllerConfig& c) {
  return {
      {"policy", to_string(c.policy)},
      {"queue_threshold", c.queue_threshold},
      {"cooldown_s", c.cooldown_s},
      {"tick_period_s", c.tick_period_s},
      {"power_step", c.power_step},
      {"min_p", c.min_p},
      {"max_p", c.max_p},
      {"decode_dynamic_ceiling", c.decode_dynamic_ceiling},
      {"metric_window_s", c.metric_window_s},
      {"metric_statistic", c.statistic == Statistic::kP90 ? "p90" : "mean"},
  };
}

ControllerConfig controller_config_from_json(const nlohmann::json& doc, ControllerConfig c) {
  require_known_keys(doc, {"policy", "queue_threshold", "cooldown_s", "tick_period_s", "power_step",
                          "min_p", "max_p", "decode_dynamic_ceiling", "metric_window_s",
                          "metric_statistic"},
                     "controller");
  try {
    if (doc.contains("policy")) c.policy = policy_from_string(doc.at("policy").get<std::string>());
    c.queue_threshold = doc.value("queue_threshold", c.queue_threshold);
    c.cooldown_s = doc.value("cooldown_s", c.cooldown_s);
    c.tick_period_s = doc.value("tick_period_s", c.tick_period_s);
    c.power_step = doc.value("power_step", c.power_step);
    c.min_p = doc.value("min_p", c.min_p);
    c.max_p = doc.value("max_p", c.max_p);
    c.decode_dynamic_ceiling = doc.value("decode_dynamic_ceiling", c.decode_dynamic_ceiling);
    c.metric_window_s = doc.value("metric_window_s", c.metric_window_s);
    if (doc.contains("metric_statistic")) {
      const auto s = doc.at("metric_statistic").get<std::string>();
      if (s == "p90") c.statistic = Statistic::kP90;
      else if (s == "mean") c.statistic = Statistic::kMean;
      else throw ConfigError("controller.metric_statistic: unknown '" + s + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("controller: ") + e.what());
  }
  return c;
}

namespace {

double window_stat(std::span<const TimedSample> samples, Micros now, Micros window,
                   Statistic statistic) {
  auto first = std::lower_bound(samples.begin(), samples.end(), now - window,
                                [](const TimedSample& s, Micros t) { return s.t < t; });
  auto last = std::upper_bound(samples.begin(), samples.end(), now,
                               [](Micros t, const TimedSample& s) { return t < s.t; });
  if (first >= last) return 0.0;
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(last - first));
  for (auto it = first; it != last; ++it) values.push_back(it->value);
  if (statistic == Statistic::kMean) {
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  }
  return percentile(std::move(values), 90.0);
}

}  // namespace

MetricStats rolling_metrics(std::span<const TimedSample> ttft, std::span<const TimedSample> tpot,
                            Micros now, Micros window, Statistic statistic) {
  return {window_stat(ttft, now, window, statistic), window_stat(tpot, now, window, statistic)};
}

int donor_floor(Direction, const ControllerConfig& cfg) { return cfg.min_p; }

int recipient_ceiling(Direction d, const ControllerConfig& cfg) {
  return d == Direction::kDecodeToPrefill ? cfg.max_p : cfg.decode_dynamic_ceiling;
}

bool power_limits_reached(Direction d, std::span<const WorkerView> workers,
                          const ControllerConfig& cfg) {
  const int floor = donor_floor(d, cfg);
  const int ceiling = recipient_ceiling(d, cfg);
  bool all_donors_at_floor = true;
  bool all_recipients_at_ceiling = true;
  for (const auto& w : workers) {
    if (w.role == donor_role(d) && w.cap > floor) all_donors_at_floor = false;
    if (w.role == recipient_role(d) && w.cap < ceiling) all_recipients_at_ceiling = false;
  }
  return all_donors_at_floor || all_recipients_at_ceiling;
}

std::optional<PowerMove> move_power(Direction d, std::span<const WorkerView> workers,
                                    const ControllerConfig& cfg) {
  if (power_limits_reached(d, workers, cfg)) return std::nullopt;
  const int floor = donor_floor(d, cfg);
  const int ceiling = recipient_ceiling(d, cfg);
  PowerMove move;
  int recipients = 0;
  for (const auto& w : workers) {
    if (w.role == donor_role(d)) {
      const int next = std::max(floor, w.cap - cfg.power_step);
      if (next < w.cap) {
        move.donors.push_back({w.id, next});
        move.freed_watts += w.cap - next;
      }
    } else {
      ++recipients;
    }
  }
  if (move.donors.empty() || recipients == 0) return std::nullopt;
  const int share = move.freed_watts / recipients;
  for (const auto& w : workers) {
    if (w.role != recipient_role(d)) continue;
    const int next = std::min(ceiling, w.cap + share);
    if (next > w.cap) move.recipients.push_back({w.id, next});
  }
  return move;
}

std::optional<GpuMove> move_gpu(Direction d, std::span<const WorkerView> workers, int node_budget,
                                const ControllerConfig& cfg) {
  const WorkerView* pick = nullptr;
  int candidates = 0;
  auto load = [d](const WorkerView& w) {
    return d == Direction::kDecodeToPrefill ? static_cast<long>(w.active_sequences) : w.queued_tokens;
  };
  for (const auto& w : workers) {
    if (w.role != donor_role(d) || w.draining) continue;
    ++candidates;
    if (pick == nullptr || load(w) < load(*pick)) pick = &w;
  }
  if (candidates < 2 || pick == nullptr) return std::nullopt;
  const int n = static_cast<int>(workers.size());
  return GpuMove{pick->id, std::clamp(node_budget / n, cfg.min_p, cfg.max_p)};
}

Controller::Controller(ControllerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

Action Controller::tick(const ControlSnapshot& snap, Micros now) {
  Action none;
  if (cfg_.policy == Policy::kStatic) return none;

  last_stats_ = rolling_metrics(snap.ttft_samples, snap.tpot_samples, now,
                                to_micros(cfg_.metric_window_s), cfg_.statistic);
  // A move is still landing: donors settling or a GPU draining.
  if (snap.settles_pending || snap.role_change_pending) return none;

  const bool cooled = now - last_move_ > to_micros(cfg_.cooldown_s);
  if (!cooled) return none;

  long prefill_queue = 0;
  for (const auto& w : snap.workers) {
    if (w.role == Role::kPrefill) prefill_queue += w.queued_requests;
  }
  const double ttft = last_stats_.ttft;
  const double tpot = last_stats_.tpot;

  Direction dir;
  if (ttft > snap.slo.ttft_s && prefill_queue > cfg_.queue_threshold && tpot < snap.slo.tpot_s) {
    dir = Direction::kDecodeToPrefill;
  } else if (tpot > snap.slo.tpot_s && ttft < snap.slo.ttft_s) {
    dir = Direction::kPrefillToDecode;
  } else {
    return none;
  }

  const bool power_axis = cfg_.policy == Policy::kDynPower || cfg_.policy == Policy::kDynBoth;
  const bool gpu_axis = cfg_.policy == Policy::kDynGpu || cfg_.policy == Policy::kDynBoth;

  Action action;
  action.direction = dir;
  action.limits_reached = !power_axis || power_limits_reached(dir, snap.workers, cfg_);

  std::vector<WorkerView> after(snap.workers.begin(), snap.workers.end());
  if (!action.limits_reached) {
    if (auto move = move_power(dir, snap.workers, cfg_)) {
      for (auto& w : after) {
        for (const auto& c : move->donors) w.cap = c.worker == w.id ? c.new_cap : w.cap;
        for (const auto& c : move->recipients) w.cap = c.worker == w.id ? c.new_cap : w.cap;
      }
      action.kind = ActionKind::kMovePower;
      action.power = std::move(*move);
      action.limits_reached = power_limits_reached(dir, after, cfg_);
    }
  }
  if (action.limits_reached && gpu_axis) {
    if (auto move = move_gpu(dir, after, snap.node_budget, cfg_)) {
      action.kind = ActionKind::kMoveGpu;
      action.gpu = *move;
    }
  }

  const auto slot = static_cast<std::size_t>(dir);
  if (action.kind == ActionKind::kNone) {
    // Report saturation once per direction until some move happens again.
    action.saturated = !saturation_reported_[slot];
    saturation_reported_[slot] = true;
    return action;
  }
  saturation_reported_ = {false, false};
  last_move_ = now;
  return action;
}

}  // namespace powersim

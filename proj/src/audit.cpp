// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "powersim/audit.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>

#include "powersim/errors.hpp"

namespace powersim {

long AuditReport::count(const std::string& rule) const {
  return std::count_if(violations.begin(), violations.end(),
                       [&](const AuditViolation& v) { return v.rule == rule; });
}

namespace {

struct GpuState {
  Role role = Role::kPrefill;
  bool draining = false;
  int commanded = 0;
  int effective = 0;

  int charged() const { return std::max(commanded, effective); }
  bool settling() const { return commanded < effective; }
};

Role role_from(const std::string& name) {
  if (name == "prefill") return Role::kPrefill;
  if (name == "decode") return Role::kDecode;
  throw ValidationError("trace: unknown role '" + name + "'");
}

Direction direction_from(const std::string& name) {
  if (name == to_string(Direction::kDecodeToPrefill)) return Direction::kDecodeToPrefill;
  if (name == to_string(Direction::kPrefillToDecode)) return Direction::kPrefillToDecode;
  throw ValidationError("trace: unknown direction '" + name + "'");
}

class TraceAuditor {
 public:
  AuditReport run(const EventTrace& trace) {
    if (trace.empty() || trace.front().kind != "init") {
      fail(0, "time_order", "trace does not start with an init event");
      return std::move(report_);
    }
    init(trace.front());
    for (std::size_t i = 1; i < trace.size(); ++i) {
      const auto& ev = trace[i];
      if (ev.t < now_) fail(ev.t, "time_order", "event " + ev.kind + " goes back in time");
      now_ = ev.t;
      apply(ev);
      check_state();
      ++report_.events;
    }
    for (const auto& [move, cap] : uniform_pending_) {
      fail(now_, "uniform_caps", "redistribution of move " + std::to_string(move) + " never landed");
    }
    return std::move(report_);
  }

 private:
  void fail(Micros t, const std::string& rule, std::string detail) {
    report_.violations.push_back({t, rule, std::move(detail)});
  }

  void init(const TraceEvent& ev) {
    const auto& d = ev.data;
    budget_ = d.at("node_power_budget").get<long>();
    policy_ = policy_from_string(d.at("policy").get<std::string>());
    coalesced_ = d.at("mode").get<std::string>() == "coalesced";
    buffer_capacity_ = d.value("buffer_capacity", 32);
    const auto roles = d.at("roles");
    const auto caps = d.at("caps");
    for (std::size_t i = 0; i < caps.size(); ++i) {
      GpuState g;
      g.role = coalesced_ ? Role::kPrefill : role_from(roles.at(i).get<std::string>());
      g.commanded = g.effective = caps.at(i).get<int>();
      gpus_.push_back(g);
    }
    if (d.contains("cooldown_us")) {
      has_controller_ = true;
      cooldown_ = d.at("cooldown_us").get<Micros>();
      cfg_.min_p = d.at("min_p").get<int>();
      cfg_.max_p = d.at("max_p").get<int>();
      cfg_.decode_dynamic_ceiling = d.at("decode_dynamic_ceiling").get<int>();
    }
    pool_rule_ = !coalesced_ && pools_uniform();
    now_ = ev.t;
    check_state();
  }

  GpuState& gpu(const nlohmann::json& id) {
    const auto i = id.get<std::size_t>();
    if (i >= gpus_.size()) throw ValidationError("trace: worker id out of range");
    return gpus_[i];
  }

  bool any_settling() const {
    return std::any_of(gpus_.begin(), gpus_.end(), [](const GpuState& g) { return g.settling(); });
  }

  bool pools_uniform() const {
    for (Role role : {Role::kPrefill, Role::kDecode}) {
      std::set<int> caps;
      for (const auto& g : gpus_) {
        if (g.role == role && !g.draining) caps.insert(g.commanded);
      }
      if (caps.size() > 1) return false;
    }
    return true;
  }

  // A new move id counts as one controller action.
  void action(long move, const std::string& kind) {
    if (move == last_move_id_) return;
    ++report_.actions;
    if (has_controller_ && last_action_ && now_ - *last_action_ <= cooldown_) {
      fail(now_, "cooldown",
           kind + " only " + std::to_string(now_ - *last_action_) + " us after the previous move");
    }
    last_action_ = now_;
    last_move_id_ = move;
  }

  void apply(const TraceEvent& ev) {
    const auto& d = ev.data;
    const std::string& k = ev.kind;
    if (k == "cap_command") {
      if (policy_ == Policy::kStatic) fail(now_, "policy_mask", "cap change under static policy");
      auto& g = gpu(d.at("worker"));
      const int from = d.at("from").get<int>();
      const int to = d.at("to").get<int>();
      if (from != g.commanded) fail(now_, "raise_order", "cap_command 'from' disagrees with replay");
      if (to > from && any_settling()) {
        fail(now_, "raise_order",
             "raise on worker " + d.at("worker").dump() + " while a decrease is still settling");
      }
      g.commanded = to;
      if (auto it = open_raises_.find(d.at("move").get<long>()); it != open_raises_.end()) {
        it->second.erase(d.at("worker").get<int>());
        if (it->second.empty()) open_raises_.erase(it);
      }
    } else if (k == "cap_effective") {
      auto& g = gpu(d.at("worker"));
      g.effective = d.at("cap").get<int>();
    } else if (k == "move_power") {
      const long move = d.at("move").get<long>();
      action(move, k);
      if (policy_ == Policy::kStatic || policy_ == Policy::kDynGpu) {
        fail(now_, "policy_mask", "power move under " + to_string(policy_));
      }
      superseded_.clear();
      std::set<int> raises;
      for (const auto& r : d.at("recipients")) {
        raises.insert(r.at(0).get<int>());
        superseded_[r.at(0).get<int>()] = r.at(1).get<int>();
      }
      if (!d.value("superseded", false)) {
        superseded_.clear();
        if (!raises.empty()) open_raises_[move] = std::move(raises);
      }
      superseded_move_ = move;
    } else if (k == "move_gpu") {
      const long move = d.at("move").get<long>();
      action(move, k);
      ++report_.gpu_moves;
      if (policy_ == Policy::kStatic || policy_ == Policy::kDynPower) {
        fail(now_, "policy_mask", "GPU move under " + to_string(policy_));
      }
      if (has_controller_ && policy_ != Policy::kDynGpu) check_limits(move, d);
    } else if (k == "distribute_uniform") {
      const int cap = d.at("cap").get<int>();
      const int n = static_cast<int>(gpus_.size());
      const int expect = std::clamp(static_cast<int>(budget_ / n), cfg_.min_p, cfg_.max_p);
      if (has_controller_ && cap != expect) {
        fail(now_, "uniform_caps",
             "uniform cap " + std::to_string(cap) + " W, expected " + std::to_string(expect));
      }
      uniform_pending_[d.at("move").get<long>()] = cap;
    } else if (k == "distribute_uniform_done") {
      const long move = d.at("move").get<long>();
      const int cap = d.at("cap").get<int>();
      uniform_pending_.erase(move);
      for (std::size_t i = 0; i < gpus_.size(); ++i) {
        if (gpus_[i].commanded != cap) {
          fail(now_, "uniform_caps",
               "worker " + std::to_string(i) + " at " + std::to_string(gpus_[i].commanded) +
                   " W after redistribution to " + std::to_string(cap) + " W");
        }
      }
    } else if (k == "drain_start") {
      if (policy_ == Policy::kDynPower || policy_ == Policy::kStatic) {
        fail(now_, "policy_mask", "role change under " + to_string(policy_));
      }
      gpu(d.at("worker")).draining = true;
    } else if (k == "role_flip") {
      if (policy_ == Policy::kDynPower || policy_ == Policy::kStatic) {
        fail(now_, "policy_mask", "role change under " + to_string(policy_));
      }
      auto& g = gpu(d.at("worker"));
      g.role = role_from(d.at("role").get<std::string>());
      g.draining = false;
    } else if (k == "transfer_start") {
      if (++slots_ > buffer_capacity_) {
        fail(now_, "buffer", std::to_string(slots_) + " transfer slots in use");
      }
    } else if (k == "transfer_end") {
      --slots_;
    }
  }

  void check_limits(long move, const nlohmann::json& d) {
    const Direction dir = direction_from(d.at("direction").get<std::string>());
    std::vector<WorkerView> views;
    for (std::size_t i = 0; i < gpus_.size(); ++i) {
      WorkerView v;
      v.id = static_cast<int>(i);
      v.role = gpus_[i].role;
      v.cap = gpus_[i].commanded;
      v.draining = gpus_[i].draining;
      if (superseded_move_ == move) {
        if (auto it = superseded_.find(v.id); it != superseded_.end()) v.cap = it->second;
      }
      views.push_back(v);
    }
    if (!power_limits_reached(dir, views, cfg_)) {
      fail(now_, "gpu_limits", "GPU move " + std::to_string(move) + " with power headroom left");
    }
  }

  void check_state() {
    long charged = 0;
    for (const auto& g : gpus_) charged += g.charged();
    if (charged > budget_) {
      fail(now_, "budget", std::to_string(charged) + " W charged over a " + std::to_string(budget_) +
                               " W budget");
    }
    if (!coalesced_) {
      const auto n = static_cast<long>(gpus_.size());
      const auto prefill = std::count_if(gpus_.begin(), gpus_.end(),
                                         [](const GpuState& g) { return g.role == Role::kPrefill; });
      if (prefill < 1 || prefill > n - 1) {
        fail(now_, "role_bounds", std::to_string(prefill) + " prefill GPUs of " + std::to_string(n));
      }
    }
    if (pool_rule_ && !any_settling() && open_raises_.empty() && uniform_pending_.empty() &&
        !pools_uniform()) {
      fail(now_, "pool_uniform", "same-role GPUs hold different caps between moves");
    }
  }

  AuditReport report_;
  std::vector<GpuState> gpus_;
  long budget_ = 0;
  Policy policy_ = Policy::kStatic;
  bool coalesced_ = false;
  bool has_controller_ = false;
  bool pool_rule_ = false;
  int buffer_capacity_ = 32;
  int slots_ = 0;
  Micros cooldown_ = 0;
  ControllerConfig cfg_;
  Micros now_ = 0;
  std::optional<Micros> last_action_;
  long last_move_id_ = -1;
  std::map<long, std::set<int>> open_raises_;
  std::map<long, int> uniform_pending_;
  std::map<int, int> superseded_;
  long superseded_move_ = -1;
};

}  // namespace

AuditReport audit_trace(const EventTrace& trace) { return TraceAuditor{}.run(trace); }

AuditReport audit_records(const SimResult& result, std::span<const RequestSpec> workload) {
  AuditReport report;
  auto fail = [&](Micros t, const std::string& rule, std::string detail) {
    report.violations.push_back({t, rule, std::move(detail)});
  };
  if (result.records.size() != workload.size()) {
    fail(0, "conservation", std::to_string(result.records.size()) + " records for " +
                                std::to_string(workload.size()) + " requests");
  }
  std::set<long> seen;
  for (const auto& r : result.records) {
    if (!seen.insert(r.id).second) fail(r.arrival, "conservation", "duplicate record " + std::to_string(r.id));
    if (r.queuing_delay + r.exec_time != r.ttft) {
      fail(r.arrival, "ttft_split", "request " + std::to_string(r.id));
    }
    const auto [met_ttft, met_tpot] = score_request(r, r.slo);
    if (met_ttft != r.met_ttft || met_tpot != r.met_tpot) {
      fail(r.arrival, "scoring", "request " + std::to_string(r.id));
    }
  }
  for (const auto& q : result.requests) {
    if (q.state != RequestState::kDone || q.tokens_emitted != q.spec.output_tokens) {
      fail(q.life.arrival, "conservation", "request " + std::to_string(q.spec.id) + " unfinished");
    }
    if (!q.life.monotone()) {
      fail(q.life.arrival, "lifecycle", "request " + std::to_string(q.spec.id) + " out of order");
    }
  }
  report.events = static_cast<long>(result.records.size());
  return report;
}

}  // namespace powersim

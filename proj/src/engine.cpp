// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "powersim/engine.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <queue>
#include <set>

#include "powersim/errors.hpp"
#include "powersim/json_keys.hpp"

namespace powersim {

std::string to_string(SimMode mode) {
  return mode == SimMode::kDisaggregated ? "disaggregated" : "coalesced";
}

SimMode sim_mode_from_string(const std::string& name) {
  if (name == "disaggregated") return SimMode::kDisaggregated;
  if (name == "coalesced") return SimMode::kCoalesced;
  throw ConfigError("sim.mode: unknown mode '" + name + "'");
}

SimConfig SimConfig::disaggregated(int prefill_gpus, int prefill_cap, int decode_gpus,
                                   int decode_cap, int node_budget) {
  SimConfig c;
  c.gpu_count = prefill_gpus + decode_gpus;
  c.node_power_budget = node_budget;
  c.mode = SimMode::kDisaggregated;
  c.initial_roles.assign(static_cast<std::size_t>(prefill_gpus), Role::kPrefill);
  c.initial_roles.insert(c.initial_roles.end(), static_cast<std::size_t>(decode_gpus), Role::kDecode);
  c.initial_caps.assign(static_cast<std::size_t>(prefill_gpus), prefill_cap);
  c.initial_caps.insert(c.initial_caps.end(), static_cast<std::size_t>(decode_gpus), decode_cap);
  return c;
}

SimConfig SimConfig::coalesced(int gpus, int cap, int node_budget) {
  SimConfig c;
  c.gpu_count = gpus;
  c.node_power_budget = node_budget;
  c.mode = SimMode::kCoalesced;
  c.initial_roles.assign(static_cast<std::size_t>(gpus), Role::kPrefill);
  c.initial_caps.assign(static_cast<std::size_t>(gpus), cap);
  return c;
}

void SimConfig::validate(const PerfModel& model) const {
  if (gpu_count < 1) throw ConfigError("sim.gpu_count must be >= 1");
  if (static_cast<int>(initial_roles.size()) != gpu_count) {
    throw ConfigError("sim.initial_roles must list one role per GPU");
  }
  if (static_cast<int>(initial_caps.size()) != gpu_count) {
    throw ConfigError("sim.initial_caps must list one cap per GPU");
  }
  long total = 0;
  for (int cap : initial_caps) {
    if (cap < model.min_power() || cap > model.max_power()) {
      throw ConfigError("sim.initial_caps: " + std::to_string(cap) + " W outside [" +
                        std::to_string(model.min_power()) + ", " +
                        std::to_string(model.max_power()) + "]");
    }
    total += cap;
  }
  if (total > node_power_budget) {
    throw ConfigError("sim: sum of initial caps (" + std::to_string(total) +
                      " W) exceeds node_power_budget (" + std::to_string(node_power_budget) +
                      " W)");
  }
  if (mode == SimMode::kDisaggregated) {
    const auto prefill = std::count(initial_roles.begin(), initial_roles.end(), Role::kPrefill);
    if (prefill < 1 || prefill > gpu_count - 1) {
      throw ConfigError("sim: disaggregated mode needs at least one prefill and one decode GPU");
    }
  }
  if (max_prefill_batch < 1) throw ConfigError("sim.max_prefill_batch must be >= 1");
  if (max_decode_batch < 1) throw ConfigError("sim.max_decode_batch must be >= 1");
  if (prefill_token_budget < 1) throw ConfigError("sim.prefill_token_budget must be >= 1");
  if (chunk_size < 1) throw ConfigError("sim.chunk_size must be >= 1");
  if (transfer_buffer_capacity < 1) throw ConfigError("sim.transfer_buffer_capacity must be >= 1");
  if (settle_latency_s < 0.0) throw ConfigError("sim.settle_latency_s must be >= 0");
  if (reassign_latency_s < 2.0 || reassign_latency_s > 5.0) {
    throw ConfigError("sim.reassign_latency_s must lie in [2, 5]");
  }
  if (!(sample_period_s > 0.0)) throw ConfigError("sim.sample_period_s must be > 0");
}

nlohmann::json sim_config_to_json(const SimConfig& c) {
  auto roles = nlohmann::json::array();
  for (auto r : c.initial_roles) roles.push_back(to_string(r));
  auto slo = nlohmann::json::array();
  for (const auto& [start, target] : c.slo.steps()) {
    slo.push_back({{"start_s", start}, {"ttft_s", target.ttft_s}, {"tpot_s", target.tpot_s}});
  }
  return {
      {"gpu_count", c.gpu_count},
      {"node_power_budget", c.node_power_budget},
      {"mode", to_string(c.mode)},
      {"initial_roles", roles},
      {"initial_caps", c.initial_caps},
      {"max_prefill_batch", c.max_prefill_batch},
      {"max_decode_batch", c.max_decode_batch},
      {"prefill_token_budget", c.prefill_token_budget},
      {"chunk_size", c.chunk_size},
      {"transfer_buffer_capacity", c.transfer_buffer_capacity},
      {"settle_latency_s", c.settle_latency_s},
      {"reassign_latency_s", c.reassign_latency_s},
      {"sample_period_s", c.sample_period_s},
      {"slo", slo},
  };
}

SimConfig sim_config_from_json(const nlohmann::json& doc, SimConfig c) {
  require_known_keys(doc, {"gpu_count", "node_power_budget", "mode", "initial_roles", "initial_caps",
                          "max_prefill_batch", "max_decode_batch", "prefill_token_budget",
                          "chunk_size", "transfer_buffer_capacity", "settle_latency_s",
                          "reassign_latency_s", "sample_period_s", "slo"},
                     "sim");
  try {
    c.gpu_count = doc.value("gpu_count", c.gpu_count);
    c.node_power_budget = doc.value("node_power_budget", c.node_power_budget);
    if (doc.contains("mode")) c.mode = sim_mode_from_string(doc.at("mode").get<std::string>());
    if (doc.contains("initial_roles")) {
      c.initial_roles.clear();
      for (const auto& r : doc.at("initial_roles")) {
        const auto name = r.get<std::string>();
        if (name == "prefill") c.initial_roles.push_back(Role::kPrefill);
        else if (name == "decode") c.initial_roles.push_back(Role::kDecode);
        else throw ConfigError("sim.initial_roles: unknown role '" + name + "'");
      }
    }
    if (doc.contains("initial_caps")) c.initial_caps = doc.at("initial_caps").get<std::vector<int>>();
    c.max_prefill_batch = doc.value("max_prefill_batch", c.max_prefill_batch);
    c.max_decode_batch = doc.value("max_decode_batch", c.max_decode_batch);
    c.prefill_token_budget = doc.value("prefill_token_budget", c.prefill_token_budget);
    c.chunk_size = doc.value("chunk_size", c.chunk_size);
    c.transfer_buffer_capacity = doc.value("transfer_buffer_capacity", c.transfer_buffer_capacity);
    c.settle_latency_s = doc.value("settle_latency_s", c.settle_latency_s);
    c.reassign_latency_s = doc.value("reassign_latency_s", c.reassign_latency_s);
    c.sample_period_s = doc.value("sample_period_s", c.sample_period_s);
    if (doc.contains("slo")) {
      const auto& s = doc.at("slo");
      if (s.is_object()) {
        c.slo = SloSchedule(SloTarget{s.value("ttft_s", 1.0), s.value("tpot_s", 0.040)});
      } else {
        std::vector<std::pair<double, SloTarget>> steps;
        for (const auto& e : s) {
          steps.emplace_back(e.value("start_s", 0.0),
                             SloTarget{e.value("ttft_s", 1.0), e.value("tpot_s", 0.040)});
        }
        c.slo = SloSchedule(std::move(steps));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sim: ") + e.what());
  }
  return c;
}

void write_trace_jsonl(std::ostream& out, const EventTrace& trace) {
  for (const auto& e : trace) {
    out << "{\"t_us\":" << e.t << ",\"kind\":" << nlohmann::json(e.kind).dump();
    if (e.data.is_object() && !e.data.empty()) {
      const std::string body = e.data.dump();
      out << ',' << std::string_view(body).substr(1);
    } else {
      out << '}';
    }
    out << '\n';
  }
}

EventTrace read_trace_jsonl(std::istream& in) {
  EventTrace trace;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json obj;
    TraceEvent ev;
    try {
      obj = nlohmann::json::parse(line);
      ev.t = obj.at("t_us").get<Micros>();
      ev.kind = obj.at("kind").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("trace line " + std::to_string(line_no) + ": " + e.what());
    }
    obj.erase("t_us");
    obj.erase("kind");
    ev.data = std::move(obj);
    trace.push_back(std::move(ev));
  }
  return trace;
}

void write_timeseries_csv(std::ostream& out, std::span<const TimeSeriesRow> rows) {
  out << "t_s,gpu,role,cap_w,queue_len,active_batch,rate_prefill,rate_decode\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", to_seconds(r.t));
    out << buf << ',' << r.gpu << ',' << r.role << ',' << r.cap_w << ',' << r.queue_len << ','
        << r.active_batch << ',';
    std::snprintf(buf, sizeof buf, "%.6g,%.6g", r.rate_prefill, r.rate_decode);
    out << buf << '\n';
  }
}

int route_request(std::span<const GpuWorker> workers) {
  auto load = [](const GpuWorker& w) { return w.queued_tokens + w.running_tokens; };
  int best = -1;
  for (const auto& w : workers) {
    if (w.role != Role::kPrefill || w.draining) continue;
    if (best < 0 || load(w) < load(workers[static_cast<std::size_t>(best)])) {
      best = w.id;
    }
  }
  return best;
}

std::size_t form_prefill_batch(std::span<const long> queued_input_tokens, int max_batch,
                               long token_budget) {
  std::size_t count = 0;
  long tokens = 0;
  for (long t : queued_input_tokens) {
    if (static_cast<int>(count) >= max_batch) break;
    if (count > 0 && tokens + t > token_budget) break;
    tokens += t;
    ++count;
  }
  return count;
}

std::optional<Micros> apply_cap_command(GpuWorker& worker, int new_cap, Micros now, Micros settle,
                                        int min_power, int max_power) {
  if (new_cap < min_power || new_cap > max_power) {
    throw RangeError("cap command " + std::to_string(new_cap) + " W outside [" +
                     std::to_string(min_power) + ", " + std::to_string(max_power) + "]");
  }
  if (new_cap == worker.commanded_cap) return std::nullopt;
  worker.commanded_cap = new_cap;
  if (new_cap < worker.effective_cap) {
    worker.cap_settle_deadline = now + settle;
    return worker.cap_settle_deadline;
  }
  worker.effective_cap = new_cap;
  worker.cap_settle_deadline.reset();
  return std::nullopt;
}

namespace {

// Simultaneous events are ordered by kind priority, then worker, then request.
enum class EventType : int {
  kCapSettle = 0,
  kRoleFlip = 1,
  kBatchEnd = 2,
  kTransferEnd = 3,
  kArrival = 4,
  kControllerTick = 5,
  kSample = 6,
};

enum class BatchKind { kPrefill, kDecodeStep, kCoalescedStep };

struct Event {
  Micros t = 0;
  EventType type = EventType::kArrival;
  int worker = -1;
  long request = -1;
  std::uint64_t seq = 0;
  BatchKind batch = BatchKind::kPrefill;
  int cap = 0;
  long move = -1;

  auto key() const { return std::tuple(t, static_cast<int>(type), worker, request, seq); }
  bool operator>(const Event& o) const { return key() > o.key(); }
};

// Raises waiting on donor settles from one controller move.
struct PendingRaise {
  long move = 0;
  std::set<int> waiting_on;
  std::vector<CapChange> raises;
  bool distribute = false;
  int uniform_cap = 0;
};

class Simulation {
 public:
  Simulation(const SimConfig& cfg, const PerfModel& model, std::span<const RequestSpec> workload,
             ControlPolicy& controller)
      : cfg_(cfg), model_(model), controller_(controller) {
    cfg_.validate(model_);
    if (cfg_.mode == SimMode::kCoalesced && controller_.policy() != Policy::kStatic) {
      throw ConfigError("coalesced mode supports only the static policy");
    }
    for (std::size_t i = 0; i < workload.size(); ++i) {
      const auto& spec = workload[i];
      if (spec.id != static_cast<long>(i)) throw ConfigError("workload ids must be dense from 0");
      if (i > 0 && spec.arrival_time < workload[i - 1].arrival_time) {
        throw ConfigError("workload must be sorted by arrival_time");
      }
      if (spec.arrival_time < 0.0 || spec.input_tokens < 1 || spec.output_tokens < 1) {
        throw ConfigError("workload request " + std::to_string(spec.id) + " is malformed");
      }
      Request r;
      r.spec = spec;
      r.life.arrival = to_micros(spec.arrival_time);
      requests_.push_back(r);
    }
    for (int i = 0; i < cfg_.gpu_count; ++i) {
      GpuWorker w;
      w.id = i;
      w.role = cfg_.initial_roles[static_cast<std::size_t>(i)];
      w.effective_cap = w.commanded_cap = cfg_.initial_caps[static_cast<std::size_t>(i)];
      workers_.push_back(std::move(w));
    }
    buffer_.capacity = cfg_.transfer_buffer_capacity;
    settle_ = to_micros(cfg_.settle_latency_s);
    reassign_ = to_micros(cfg_.reassign_latency_s);
    tick_ = std::max<Micros>(1, to_micros(controller_.tick_period_s()));
    sample_ = std::max<Micros>(1, to_micros(cfg_.sample_period_s));
    window_ = to_micros(5.0);
  }

  SimResult run() {
    emit_init();
    for (const auto& r : requests_) {
      push({.t = r.life.arrival, .type = EventType::kArrival, .request = r.spec.id});
    }
    push({.t = 0, .type = EventType::kSample});
    if (!requests_.empty()) push({.t = 0, .type = EventType::kControllerTick});

    while (!events_.empty()) {
      const Event ev = events_.top();
      events_.pop();
      now_ = ev.t;
      dispatch(ev);
    }
    return finish();
  }

 private:
  // ---- event plumbing -------------------------------------------------------

  void push(Event ev) {
    ev.seq = seq_++;
    events_.push(ev);
  }

  void trace(std::string kind, nlohmann::json data) {
    result_.trace.push_back({now_, std::move(kind), std::move(data)});
  }

  void dispatch(const Event& ev) {
    switch (ev.type) {
      case EventType::kCapSettle: on_cap_settle(ev); break;
      case EventType::kRoleFlip: on_role_flip(ev.worker); break;
      case EventType::kBatchEnd:
        if (ev.batch == BatchKind::kPrefill) on_prefill_end(ev.worker);
        else if (ev.batch == BatchKind::kDecodeStep) on_decode_step_end(ev.worker);
        else on_coalesced_step_end(ev.worker);
        break;
      case EventType::kTransferEnd: on_transfer_end(ev.request); break;
      case EventType::kArrival: on_arrival(ev.request); break;
      case EventType::kControllerTick: on_tick(); break;
      case EventType::kSample: on_sample(); break;
    }
  }

  GpuWorker& worker(int id) { return workers_[static_cast<std::size_t>(id)]; }
  Request& req(long id) { return requests_[static_cast<std::size_t>(id)]; }
  bool coalesced() const { return cfg_.mode == SimMode::kCoalesced; }
  bool all_done() const { return done_ == static_cast<long>(requests_.size()); }

  long total_effective_power() const {
    long total = 0;
    for (const auto& w : workers_) total += w.effective_cap;
    return total;
  }

  void record_power() {
    const long total = total_effective_power();
    if (!result_.power.empty() && result_.power.back().t == now_) {
      result_.power.back().total_watts = total;
    } else if (result_.power.empty() || result_.power.back().total_watts != total) {
      result_.power.push_back({now_, total});
    }
  }

  void emit_init() {
    auto roles = nlohmann::json::array();
    auto caps = nlohmann::json::array();
    for (const auto& w : workers_) {
      roles.push_back(coalesced() ? "coalesced" : to_string(w.role));
      caps.push_back(w.effective_cap);
    }
    nlohmann::json data = {
        {"gpu_count", cfg_.gpu_count},
        {"node_power_budget", cfg_.node_power_budget},
        {"mode", to_string(cfg_.mode)},
        {"policy", to_string(controller_.policy())},
        {"roles", roles},
        {"caps", caps},
        {"min_power", model_.min_power()},
        {"max_power", model_.max_power()},
        {"settle_us", settle_},
        {"buffer_capacity", cfg_.transfer_buffer_capacity},
        {"requests", requests_.size()},
    };
    if (const auto* c = dynamic_cast<const Controller*>(&controller_)) {
      data["cooldown_us"] = to_micros(c->config().cooldown_s);
      data["min_p"] = c->config().min_p;
      data["max_p"] = c->config().max_p;
      data["decode_dynamic_ceiling"] = c->config().decode_dynamic_ceiling;
      window_ = to_micros(c->config().metric_window_s);
    }
    trace("init", std::move(data));
    record_power();
  }

  // ---- arrivals and prefill -------------------------------------------------

  int route() const {
    if (!coalesced()) return route_request(workers_);
    int best = 0;
    for (const auto& w : workers_) {
      if (w.queued_tokens < workers_[static_cast<std::size_t>(best)].queued_tokens) best = w.id;
    }
    return best;
  }

  void enqueue(long id, int target) {
    auto& r = req(id);
    auto& w = worker(target);
    r.prefill_worker = target;
    r.state = RequestState::kQueuedPrefill;
    w.prefill_queue.push_back(id);
    w.queued_tokens += r.spec.input_tokens;
  }

  void on_arrival(long id) {
    arrivals_.push_back(now_);
    const int target = route();
    enqueue(id, target);
    const auto& r = req(id);
    trace("arrival", {{"request", id},
                      {"worker", target},
                      {"input_tokens", r.spec.input_tokens},
                      {"output_tokens", r.spec.output_tokens}});
    if (coalesced()) try_coalesced_step(target);
    else try_start_prefill(target);
  }

  void try_start_prefill(int id) {
    auto& w = worker(id);
    if (w.role != Role::kPrefill || w.busy || w.draining || w.prefill_queue.empty()) return;
    if (w.unslotted > buffer_.capacity) return;  // backpressure stall

    std::vector<long> tokens;
    tokens.reserve(w.prefill_queue.size());
    for (long rid : w.prefill_queue) {
      tokens.push_back(req(rid).spec.input_tokens);
      if (static_cast<int>(tokens.size()) >= cfg_.max_prefill_batch) break;
    }
    const std::size_t n = form_prefill_batch(tokens, cfg_.max_prefill_batch, cfg_.prefill_token_budget);
    long total = 0;
    auto ids = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
      const long rid = w.prefill_queue.front();
      w.prefill_queue.pop_front();
      auto& r = req(rid);
      r.state = RequestState::kPrefilling;
      r.life.prefill_start = now_;
      total += r.spec.input_tokens;
      w.queued_tokens -= r.spec.input_tokens;
      w.running_tokens += r.spec.input_tokens;
      w.running_batch.push_back(rid);
      ids.push_back(rid);
    }
    const Micros dur = std::max<Micros>(
        1, to_micros(model_.prefill_latency(total, static_cast<int>(n), w.effective_cap)));
    w.busy = true;
    w.busy_until = now_ + dur;
    push({.t = w.busy_until, .type = EventType::kBatchEnd, .worker = id, .batch = BatchKind::kPrefill});
    trace("prefill_start", {{"worker", id}, {"requests", ids}, {"tokens", total},
                            {"cap", w.effective_cap}, {"dur_us", dur}});
  }

  void on_prefill_end(int id) {
    auto& w = worker(id);
    auto ids = nlohmann::json::array();
    for (long rid : w.running_batch) {
      auto& r = req(rid);
      r.life.prefill_end = now_;
      r.tokens_emitted = 1;
      r.state = RequestState::kAwaitingTransfer;
      w.running_tokens -= r.spec.input_tokens;
      ttft_samples_.push_back({now_, to_seconds(now_ - r.life.arrival)});
      pending_transfers_.push_back(rid);
      ++w.unslotted;
      ids.push_back(rid);
    }
    w.running_batch.clear();
    w.busy = false;
    trace("prefill_end", {{"worker", id}, {"requests", ids}});
    try_start_transfers();
    try_start_prefill(id);
    check_drain(id);
  }

  // ---- KV transfer ----------------------------------------------------------

  int pick_decode_worker(bool needs_slot) const {
    int best = -1;
    for (const auto& w : workers_) {
      if (w.role != Role::kDecode || w.draining) continue;
      if (needs_slot && w.decode_load() >= cfg_.max_decode_batch) continue;
      if (best < 0 || w.decode_load() < workers_[static_cast<std::size_t>(best)].decode_load()) {
        best = w.id;
      }
    }
    return best;
  }

  void try_start_transfers() {
    while (!pending_transfers_.empty() && !buffer_.full()) {
      const long rid = pending_transfers_.front();
      auto& r = req(rid);
      const bool joins = r.spec.output_tokens > 1;
      const int dst = pick_decode_worker(joins);
      if (dst < 0) break;
      pending_transfers_.pop_front();
      r.state = RequestState::kInTransfer;
      r.life.transfer_start = now_;
      r.decode_worker = dst;
      buffer_.occupied.emplace_back(rid, now_);
      result_.max_buffer_occupancy =
          std::max<long>(result_.max_buffer_occupancy, static_cast<long>(buffer_.occupied.size()));
      if (joins) ++worker(dst).inbound_transfers;
      auto& src = worker(r.prefill_worker);
      --src.unslotted;
      ++src.sourced_transfers;
      const Micros dur = std::max<Micros>(1, to_micros(model_.kv_transfer_latency(r.spec.input_tokens)));
      push({.t = now_ + dur, .type = EventType::kTransferEnd, .worker = dst, .request = rid});
      trace("transfer_start", {{"request", rid}, {"src", r.prefill_worker}, {"dst", dst},
                               {"dur_us", dur}, {"slots", buffer_.occupied.size()}});
      try_start_prefill(r.prefill_worker);
    }
  }

  void on_transfer_end(long rid) {
    auto& r = req(rid);
    auto it = std::find_if(buffer_.occupied.begin(), buffer_.occupied.end(),
                           [rid](const auto& s) { return s.first == rid; });
    buffer_.occupied.erase(it);
    r.life.transfer_end = now_;
    r.life.decode_join = now_;
    auto& src = worker(r.prefill_worker);
    --src.sourced_transfers;
    trace("transfer_end", {{"request", rid}, {"dst", r.decode_worker}});
    if (r.spec.output_tokens == 1) {
      complete(rid);
    } else {
      auto& dst = worker(r.decode_worker);
      --dst.inbound_transfers;
      dst.joining.push_back(rid);
      r.state = RequestState::kDecoding;
      if (!dst.busy) start_decode_step(dst.id);
    }
    try_start_transfers();
    check_drain(src.id);
  }

  // ---- decode ---------------------------------------------------------------

  void complete(long rid) {
    auto& r = req(rid);
    r.life.completion = now_;
    r.state = RequestState::kDone;
    ++done_;
    completions_.push_back(now_);
    const double tpot = r.spec.output_tokens > 1
                            ? to_seconds(now_ - r.life.prefill_end) /
                                  static_cast<double>(r.spec.output_tokens - 1)
                            : 0.0;
    tpot_samples_.push_back({now_, tpot});
    trace("complete", {{"request", rid}});
  }

  void start_decode_step(int id) {
    auto& w = worker(id);
    for (long rid : w.joining) w.active_decode_batch.push_back(rid);
    w.joining.clear();
    if (w.active_decode_batch.empty()) {
      w.busy = false;
      return;
    }
    const int n = static_cast<int>(w.active_decode_batch.size());
    const Micros dur = std::max<Micros>(1, to_micros(model_.decode_step_latency(n, w.effective_cap)));
    w.busy = true;
    w.busy_until = now_ + dur;
    push({.t = w.busy_until, .type = EventType::kBatchEnd, .worker = id,
          .batch = BatchKind::kDecodeStep});
    trace("decode_step", {{"worker", id}, {"batch", n}, {"cap", w.effective_cap}, {"dur_us", dur}});
  }

  void on_decode_step_end(int id) {
    auto& w = worker(id);
    std::vector<long> still;
    bool freed = false;
    for (long rid : w.active_decode_batch) {
      auto& r = req(rid);
      if (++r.tokens_emitted >= r.spec.output_tokens) {
        complete(rid);
        freed = true;
      } else {
        still.push_back(rid);
      }
    }
    w.active_decode_batch = std::move(still);
    start_decode_step(id);
    if (freed) try_start_transfers();
    check_drain(id);
  }

  // ---- coalesced mode -------------------------------------------------------

  void try_coalesced_step(int id) {
    auto& w = worker(id);
    if (w.busy) return;
    const int n = static_cast<int>(w.active_decode_batch.size());
    long chunk = 0;
    if (!w.prefill_queue.empty() && (w.chunk_progress > 0 || n + 1 <= cfg_.max_decode_batch)) {
      auto& head = req(w.prefill_queue.front());
      chunk = std::min(cfg_.chunk_size, head.spec.input_tokens - w.chunk_progress);
      if (w.chunk_progress == 0) {
        head.state = RequestState::kPrefilling;
        head.life.prefill_start = now_;
      }
    }
    if (chunk == 0 && n == 0) return;
    double seconds = 0.0;
    if (chunk > 0) seconds += model_.prefill_latency(chunk, 1, w.effective_cap);
    if (n > 0) seconds += model_.decode_step_latency(n, w.effective_cap);
    const Micros dur = std::max<Micros>(1, to_micros(seconds));
    w.step_chunk = chunk;
    w.busy = true;
    w.busy_until = now_ + dur;
    push({.t = w.busy_until, .type = EventType::kBatchEnd, .worker = id,
          .batch = BatchKind::kCoalescedStep});
    trace("coalesced_step", {{"worker", id}, {"chunk", chunk}, {"batch", n}, {"dur_us", dur}});
  }

  void on_coalesced_step_end(int id) {
    auto& w = worker(id);
    std::vector<long> still;
    for (long rid : w.active_decode_batch) {
      auto& r = req(rid);
      if (++r.tokens_emitted >= r.spec.output_tokens) complete(rid);
      else still.push_back(rid);
    }
    w.active_decode_batch = std::move(still);
    if (w.step_chunk > 0) {
      const long rid = w.prefill_queue.front();
      auto& r = req(rid);
      w.chunk_progress += w.step_chunk;
      if (w.chunk_progress >= r.spec.input_tokens) {
        w.prefill_queue.pop_front();
        w.chunk_progress = 0;
        w.queued_tokens -= r.spec.input_tokens;
        r.life.prefill_end = r.life.transfer_start = r.life.transfer_end = r.life.decode_join = now_;
        r.tokens_emitted = 1;
        r.decode_worker = id;
        ttft_samples_.push_back({now_, to_seconds(now_ - r.life.arrival)});
        if (r.spec.output_tokens == 1) {
          complete(rid);
        } else {
          r.state = RequestState::kDecoding;
          w.active_decode_batch.push_back(rid);
        }
      }
    }
    w.step_chunk = 0;
    w.busy = false;
    try_coalesced_step(id);
  }

  // ---- power ----------------------------------------------------------------

  void command_cap(int id, int cap, long move) {
    auto& w = worker(id);
    const int from = w.commanded_cap;
    const auto deadline =
        apply_cap_command(w, cap, now_, settle_, model_.min_power(), model_.max_power());
    if (from == cap) return;
    trace("cap_command", {{"worker", id}, {"from", from}, {"to", cap}, {"move", move}});
    if (deadline) {
      push({.t = *deadline, .type = EventType::kCapSettle, .worker = id, .cap = cap, .move = move});
    } else {
      trace("cap_effective", {{"worker", id}, {"cap", w.effective_cap}, {"move", move}});
      record_power();
    }
  }

  void on_cap_settle(const Event& ev) {
    auto& w = worker(ev.worker);
    // A later command on the same worker supersedes this settle.
    if (w.cap_settle_deadline == ev.t && w.commanded_cap == ev.cap) {
      w.effective_cap = ev.cap;
      w.cap_settle_deadline.reset();
      trace("cap_effective", {{"worker", ev.worker}, {"cap", ev.cap}, {"move", ev.move}});
      record_power();
    }
    if (w.cap_settle_deadline) return;
    for (auto it = pending_raises_.begin(); it != pending_raises_.end();) {
      it->waiting_on.erase(ev.worker);
      if (it->waiting_on.empty()) {
        PendingRaise done = std::move(*it);
        it = pending_raises_.erase(it);
        apply_raises(done);
      } else {
        ++it;
      }
    }
  }

  void apply_raises(const PendingRaise& p) {
    for (const auto& c : p.raises) command_cap(c.worker, c.new_cap, p.move);
    if (p.distribute) trace("distribute_uniform_done", {{"move", p.move}, {"cap", p.uniform_cap}});
  }

  void schedule_move(long move, const std::vector<CapChange>& lowers,
                     const std::vector<CapChange>& raises, bool distribute, int uniform) {
    PendingRaise pending{move, {}, raises, distribute, uniform};
    for (const auto& c : lowers) command_cap(c.worker, c.new_cap, move);
    // Raises wait for every decrease still settling, including earlier ones.
    for (const auto& w : workers_) {
      if (w.cap_settle_deadline) pending.waiting_on.insert(w.id);
    }
    if (pending.waiting_on.empty()) apply_raises(pending);
    else pending_raises_.push_back(std::move(pending));
  }

  void distribute_uniform(long move, int cap) {
    trace("distribute_uniform", {{"move", move}, {"cap", cap}});
    std::vector<CapChange> lowers, raises;
    for (const auto& w : workers_) {
      if (w.commanded_cap > cap) lowers.push_back({w.id, cap});
      else if (w.commanded_cap < cap) raises.push_back({w.id, cap});
    }
    schedule_move(move, lowers, raises, true, cap);
  }

  // ---- role changes ---------------------------------------------------------

  bool reassign_role(int id, Role to) {
    auto& w = worker(id);
    if (w.role == to || w.draining) return false;
    long same_role = 0;
    for (const auto& o : workers_) same_role += (o.role == w.role && !o.draining) ? 1 : 0;
    if (same_role < 2) return false;

    w.draining = true;
    w.pending_role = to;
    trace("drain_start", {{"worker", id}, {"from", to_string(w.role)}, {"to", to_string(to)}});
    if (w.role == Role::kPrefill) {
      std::deque<long> queued;
      queued.swap(w.prefill_queue);
      for (long rid : queued) {
        w.queued_tokens -= req(rid).spec.input_tokens;
        const int target = route_request(workers_);
        enqueue(rid, target);
        trace("reroute", {{"request", rid}, {"from", id}, {"to", target}});
        try_start_prefill(target);
      }
    }
    check_drain(id);
    return true;
  }

  void check_drain(int id) {
    auto& w = worker(id);
    if (!w.draining || w.flip_scheduled) return;
    const bool empty =
        w.role == Role::kPrefill
            ? (!w.busy && w.prefill_queue.empty())
            : (!w.busy && w.active_decode_batch.empty() && w.joining.empty() &&
               w.inbound_transfers == 0);
    if (!empty) return;
    w.flip_scheduled = true;
    trace("drain_complete", {{"worker", id}});
    push({.t = now_ + reassign_, .type = EventType::kRoleFlip, .worker = id});
  }

  void on_role_flip(int id) {
    auto& w = worker(id);
    w.role = *w.pending_role;
    w.pending_role.reset();
    w.draining = false;
    w.flip_scheduled = false;
    trace("role_flip", {{"worker", id}, {"role", to_string(w.role)}});
    if (w.role == Role::kDecode) try_start_transfers();
    else try_start_prefill(id);
  }

  // ---- controller and sampling ----------------------------------------------

  double rate(const std::vector<Micros>& stamps) const {
    const auto first = std::lower_bound(stamps.begin(), stamps.end(), now_ - window_);
    const auto n = std::distance(first, stamps.end());
    return static_cast<double>(n) / to_seconds(window_);
  }

  void on_tick() {
    ControlSnapshot snap;
    snap.node_budget = cfg_.node_power_budget;
    snap.slo = cfg_.slo.at(to_seconds(now_));
    snap.ttft_samples = ttft_samples_;
    snap.tpot_samples = tpot_samples_;
    snap.rate_prefill = rate(arrivals_);
    snap.rate_decode = rate(completions_);
    snap.settles_pending = !pending_raises_.empty();
    for (const auto& w : workers_) {
      snap.settles_pending = snap.settles_pending || w.cap_settle_deadline.has_value();
      snap.role_change_pending = snap.role_change_pending || w.draining;
      snap.workers.push_back({w.id, w.role, w.commanded_cap, w.draining,
                              static_cast<long>(w.prefill_queue.size()), w.queued_tokens,
                              static_cast<int>(w.active_decode_batch.size())});
    }

    const Action action = controller_.tick(snap, now_);
    execute(action);

    if (!all_done()) push({.t = now_ + tick_, .type = EventType::kControllerTick});
  }

  void execute(const Action& action) {
    if (action.kind == ActionKind::kNone) {
      if (action.saturated) {
        trace("saturated", {{"direction", to_string(action.direction)},
                            {"policy", to_string(controller_.policy())}});
      }
      return;
    }
    const long move = next_move_++;
    if (action.power) {
      const auto& p = *action.power;
      auto donors = nlohmann::json::array();
      auto recipients = nlohmann::json::array();
      for (const auto& c : p.donors) donors.push_back({c.worker, c.new_cap});
      for (const auto& c : p.recipients) recipients.push_back({c.worker, c.new_cap});
      trace("move_power", {{"move", move},
                           {"direction", to_string(action.direction)},
                           {"freed_w", p.freed_watts},
                           {"donors", donors},
                           {"recipients", recipients},
                           {"superseded", action.gpu.has_value()}});
      // A GPU move in the same tick replaces the recipients' raise with the
      // uniform redistribution below; donors are still lowered first.
      schedule_move(move, p.donors, action.gpu ? std::vector<CapChange>{} : p.recipients, false, 0);
    }
    if (!action.gpu) return;
    trace("move_gpu", {{"move", move},
                       {"direction", to_string(action.direction)},
                       {"worker", action.gpu->worker},
                       {"limits_reached", action.limits_reached}});
    if (!reassign_role(action.gpu->worker, recipient_role(action.direction))) {
      trace("move_rejected", {{"move", move}, {"worker", action.gpu->worker}});
      return;
    }
    distribute_uniform(move, action.gpu->uniform_cap);
  }

  void on_sample() {
    const double rp = rate(arrivals_);
    const double rd = rate(completions_);
    for (const auto& w : workers_) {
      TimeSeriesRow row;
      row.t = now_;
      row.gpu = w.id;
      row.role = coalesced() ? "coalesced" : to_string(w.role);
      if (w.draining) row.role += "-draining";
      row.cap_w = w.effective_cap;
      if (coalesced() || w.role == Role::kPrefill) {
        row.queue_len = static_cast<long>(w.prefill_queue.size());
        row.active_batch = static_cast<long>(
            coalesced() ? w.active_decode_batch.size() : w.running_batch.size());
      } else {
        row.queue_len = static_cast<long>(w.joining.size()) + w.inbound_transfers;
        row.active_batch = static_cast<long>(w.active_decode_batch.size());
      }
      row.rate_prefill = rp;
      row.rate_decode = rd;
      result_.timeseries.push_back(row);
    }
    if (!all_done()) push({.t = now_ + sample_, .type = EventType::kSample});
  }

  SimResult finish() {
    result_.end_time = now_;
    for (const auto& r : requests_) {
      if (r.state != RequestState::kDone) {
        throw std::logic_error("request " + std::to_string(r.spec.id) + " did not complete");
      }
      result_.records.push_back(make_record(r.spec, r.life, cfg_.slo.at(r.spec.arrival_time)));
    }
    result_.requests = std::move(requests_);
    return std::move(result_);
  }

  SimConfig cfg_;
  const PerfModel& model_;
  ControlPolicy& controller_;

  std::vector<Request> requests_;
  std::vector<GpuWorker> workers_;
  TransferBuffer buffer_;
  std::deque<long> pending_transfers_;
  std::vector<PendingRaise> pending_raises_;
  std::vector<TimedSample> ttft_samples_;
  std::vector<TimedSample> tpot_samples_;
  std::vector<Micros> arrivals_;
  std::vector<Micros> completions_;

  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::uint64_t seq_ = 0;
  long next_move_ = 0;
  long done_ = 0;
  Micros now_ = 0;
  Micros settle_ = 0;
  Micros reassign_ = 0;
  Micros tick_ = 1;
  Micros sample_ = 1;
  Micros window_ = 1;
  SimResult result_;
};

}  // namespace

SimResult run_simulation(const SimConfig& config, const PerfModel& model,
                         std::span<const RequestSpec> workload, ControlPolicy& controller) {
  return Simulation(config, model, workload, controller).run();
}

}  // namespace powersim

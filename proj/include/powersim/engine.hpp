// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "powersim/controller.hpp"
#include "powersim/metrics.hpp"
#include "powersim/perf_model.hpp"
#include "powersim/workload.hpp"

namespace powersim {

enum class SimMode { kDisaggregated, kCoalesced };

std::string to_string(SimMode mode);
SimMode sim_mode_from_string(const std::string& name);

struct SimConfig {
  int gpu_count = 8;
  int node_power_budget = 4800;
  SimMode mode = SimMode::kDisaggregated;
  std::vector<Role> initial_roles;  // one per GPU
  std::vector<int> initial_caps;    // W, one per GPU
  int max_prefill_batch = 1;
  int max_decode_batch = 64;
  long prefill_token_budget = 16384;
  long chunk_size = 512;              // coalesced mode only
  int transfer_buffer_capacity = 32;
  double settle_latency_s = 0.3;      // cap decrease -> effective
  double reassign_latency_s = 3.0;    // drained -> role flipped
  double sample_period_s = 1.0;
  SloSchedule slo{SloTarget{1.0, 0.040}};

  static SimConfig disaggregated(int prefill_gpus, int prefill_cap, int decode_gpus, int decode_cap,
                                 int node_budget);
  static SimConfig coalesced(int gpus, int cap, int node_budget);

  // Throws ConfigError naming the violated constraint.
  void validate(const PerfModel& model) const;
};

nlohmann::json sim_config_to_json(const SimConfig& c);
SimConfig sim_config_from_json(const nlohmann::json& doc, SimConfig base = {});

enum class RequestState { kQueuedPrefill, kPrefilling, kAwaitingTransfer, kInTransfer, kDecoding, kDone };

struct Request {
  RequestSpec spec;
  RequestState state = RequestState::kQueuedPrefill;
  Lifecycle life;
  long tokens_emitted = 0;  // the prefill produces token 1
  int prefill_worker = -1;
  int decode_worker = -1;
};

struct GpuWorker {
  int id = 0;
  Role role = Role::kPrefill;
  int effective_cap = 600;
  int commanded_cap = 600;
  std::optional<Micros> cap_settle_deadline;
  std::deque<long> prefill_queue;
  std::vector<long> active_decode_batch;
  bool draining = false;
  Micros busy_until = 0;

  long queued_tokens = 0;   // input tokens waiting in prefill_queue
  long running_tokens = 0;  // input tokens in the running prefill batch
  std::vector<long> running_batch;
  bool busy = false;
  std::optional<Role> pending_role;
  bool flip_scheduled = false;
  int unslotted = 0;            // prefill done, waiting for a transfer slot
  int sourced_transfers = 0;    // in flight from this worker
  int inbound_transfers = 0;    // in flight to this worker
  std::vector<long> joining;    // joins the decode batch at the next step boundary
  long chunk_progress = 0;      // coalesced: tokens of the queue head already prefilled
  long step_chunk = 0;

  int decode_load() const {
    return static_cast<int>(active_decode_batch.size() + joining.size()) + inbound_transfers;
  }
};

struct TransferBuffer {
  int capacity = 32;
  std::vector<std::pair<long, Micros>> occupied;  // (request id, transfer start)

  bool full() const { return static_cast<int>(occupied.size()) >= capacity; }
};

struct TraceEvent {
  Micros t = 0;
  std::string kind;
  nlohmann::json data;
};

using EventTrace = std::vector<TraceEvent>;

// One JSON object per line: {"t_us":..,"kind":..,<data fields>}.
void write_trace_jsonl(std::ostream& out, const EventTrace& trace);
EventTrace read_trace_jsonl(std::istream& in);

struct TimeSeriesRow {
  Micros t = 0;
  int gpu = 0;
  std::string role;
  int cap_w = 0;
  long queue_len = 0;
  long active_batch = 0;
  double rate_prefill = 0.0;
  double rate_decode = 0.0;
};

void write_timeseries_csv(std::ostream& out, std::span<const TimeSeriesRow> rows);

struct SimResult {
  std::vector<Request> requests;
  std::vector<RequestRecord> records;
  std::vector<TimeSeriesRow> timeseries;
  std::vector<PowerSample> power;
  EventTrace trace;
  Micros end_time = 0;
  long max_buffer_occupancy = 0;
};

// Non-draining prefill worker with the fewest outstanding input tokens (queued
// plus running); ties go to the lowest id. Returns -1 when no worker qualifies.
int route_request(std::span<const GpuWorker> workers);

// Number of queue-head requests forming the next batch: FIFO, at most
// `max_batch`, total input tokens within `token_budget` (a lone oversize head
// still forms a batch of one).
std::size_t form_prefill_batch(std::span<const long> queued_input_tokens, int max_batch,
                               long token_budget);

// Commands a new cap. Increases apply at `now`; decreases become effective at
// now + settle. Returns the settle deadline, if any. Throws RangeError outside
// [min_power, max_power].
std::optional<Micros> apply_cap_command(GpuWorker& worker, int new_cap, Micros now, Micros settle,
                                        int min_power, int max_power);

// Runs the workload to completion. `workload` must be sorted by arrival with
// ids 0..n-1. Deterministic for identical inputs.
SimResult run_simulation(const SimConfig& config, const PerfModel& model,
                         std::span<const RequestSpec> workload, ControlPolicy& controller);

}  // namespace powersim

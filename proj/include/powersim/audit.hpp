// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "powersim/engine.hpp"

namespace powersim {

struct AuditViolation {
  Micros t = 0;
  std::string rule;
  std::string detail;
};

struct AuditReport {
  std::vector<AuditViolation> violations;
  long events = 0;
  long actions = 0;   // controller moves seen
  long gpu_moves = 0;

  bool ok() const { return violations.empty(); }
  long count(const std::string& rule) const;
};

// Replays a trace from its "init" event and checks, after every event:
//   budget          sum of charged caps <= node budget (old cap while settling)
//   cooldown        successive moves more than the cooldown apart
//   gpu_limits      every GPU move follows an exhausted power axis
//   uniform_caps    caps equal clamp(budget / N) once a redistribution lands
//   role_bounds     each role keeps between 1 and N-1 GPUs
//   policy_mask     no role changes under dyn-power, no cap changes under static,
//                   no power moves under dyn-gpu
//   raise_order     raises of a move only after its decreases took effect
//   pool_uniform    equal commanded caps within a role between moves
//   buffer          transfer slots within capacity
//   time_order      event times non-decreasing
// Controller rules are skipped when the trace carries no controller settings.
AuditReport audit_trace(const EventTrace& trace);

// Conservation and per-record consistency: one record per request, monotone
// lifecycles, ttft = queuing + exec, met flags matching the SLO.
AuditReport audit_records(const SimResult& result, std::span<const RequestSpec> workload);

}  // namespace powersim

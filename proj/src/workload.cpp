// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "powersim/workload.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "powersim/errors.hpp"
#include "powersim/json_keys.hpp"
#include "powersim/rng.hpp"

namespace powersim {

SloSchedule::SloSchedule(std::vector<std::pair<double, SloTarget>> steps) : steps_(std::move(steps)) {
  if (steps_.empty()) throw ConfigError("SLO schedule must have at least one entry");
  std::stable_sort(steps_.begin(), steps_.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
}

SloTarget SloSchedule::at(double t) const {
  SloTarget current = steps_.front().second;
  for (const auto& [start, slo] : steps_) {
    if (start <= t) current = slo;
    else break;
  }
  return current;
}

SloSchedule SloSchedule::scaled(double factor) const {
  auto steps = steps_;
  for (auto& [start, slo] : steps) slo = slo.scaled(factor);
  return SloSchedule(std::move(steps));
}

std::string to_string(WorkloadMode mode) {
  switch (mode) {
    case WorkloadMode::kPoissonTrace: return "poisson-trace";
    case WorkloadMode::kTwoPhaseSynthetic: return "two-phase-synthetic";
    case WorkloadMode::kFileTrace: return "file-trace";
  }
  return "?";
}

WorkloadMode workload_mode_from_string(const std::string& name) {
  if (name == "poisson-trace") return WorkloadMode::kPoissonTrace;
  if (name == "two-phase-synthetic") return WorkloadMode::kTwoPhaseSynthetic;
  if (name == "file-trace") return WorkloadMode::kFileTrace;
  throw ConfigError("workload.mode: unknown mode '" + name + "'");
}

std::vector<SyntheticPhase> WorkloadSpec::default_two_phase() {
  return {
      SyntheticPhase{1000, 8192, 128, SloTarget{1.0, 0.040}},
      SyntheticPhase{1000, 500, 500, SloTarget{1.0, 0.020}},
  };
}

void WorkloadSpec::validate() const {
  if (!(qps_per_gpu > 0.0)) throw ConfigError("workload.qps_per_gpu must be > 0");
  if (gpu_count < 1) throw ConfigError("workload.gpu_count must be >= 1");
  if (max_input_tokens < 1) throw ConfigError("workload.max_input_tokens must be >= 1");
  switch (mode) {
    case WorkloadMode::kPoissonTrace:
      if (num_requests < 0) throw ConfigError("workload.num_requests must be >= 0");
      if (lengths.input_min < 1 || lengths.output_min < 1 ||
          lengths.input_max < lengths.input_min || lengths.output_max < lengths.output_min) {
        throw ConfigError("workload.lengths: invalid token ranges");
      }
      break;
    case WorkloadMode::kTwoPhaseSynthetic:
      if (phases.empty()) throw ConfigError("workload.phases must not be empty");
      for (const auto& phase : phases) {
        if (phase.count < 1) throw ConfigError("workload.phases: count must be >= 1");
        if (phase.input_tokens < 1 || phase.output_tokens < 1) {
          throw ConfigError("workload.phases: token counts must be >= 1");
        }
      }
      break;
    case WorkloadMode::kFileTrace:
      if (trace_path.empty()) throw ConfigError("workload.trace_path required for file-trace");
      break;
  }
}

std::vector<RequestSpec> gen_poisson_arrivals(const WorkloadSpec& spec,
                                              const std::vector<std::pair<long, long>>& lengths) {
  if (lengths.empty()) throw DomainError("gen_poisson_arrivals: empty lengths list");
  const double rate = spec.aggregate_rate();
  if (!(rate > 0.0)) throw DomainError("gen_poisson_arrivals: aggregate rate must be > 0");
  RandomStream gaps(spec.seed, RandomStream::kArrivalStream);
  std::vector<RequestSpec> out;
  out.reserve(lengths.size());
  double t = 0.0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    t += gaps.exponential(rate);
    out.push_back({static_cast<long>(i), t, lengths[i].first, lengths[i].second});
  }
  return out;
}

std::vector<std::pair<long, long>> sample_lengths(const LengthDistribution& dist, long count,
                                                  std::uint64_t seed) {
  std::vector<std::pair<long, long>> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0L)));
  if (dist.kind == LengthDistribution::Kind::kFixed) {
    out.assign(static_cast<std::size_t>(std::max(count, 0L)), {dist.input_min, dist.output_min});
    return out;
  }
  RandomStream draws(seed, RandomStream::kLengthStream);
  for (long i = 0; i < count; ++i) {
    const long in = draws.uniform_int(dist.input_min, dist.input_max);
    const long outp = draws.uniform_int(dist.output_min, dist.output_max);
    out.emplace_back(in, outp);
  }
  return out;
}

Workload gen_two_phase_synthetic(const WorkloadSpec& spec) {
  std::vector<std::pair<long, long>> lengths;
  std::vector<std::size_t> phase_first;
  for (const auto& phase : spec.phases) {
    phase_first.push_back(lengths.size());
    lengths.insert(lengths.end(), static_cast<std::size_t>(phase.count),
                   {phase.input_tokens, phase.output_tokens});
  }
  Workload w;
  w.requests = gen_poisson_arrivals(spec, lengths);

  std::vector<std::pair<double, SloTarget>> steps;
  for (std::size_t p = 0; p < spec.phases.size(); ++p) {
    if (!spec.phases[p].slo) continue;
    const double start = p == 0 ? 0.0 : w.requests[phase_first[p]].arrival_time;
    steps.emplace_back(start, *spec.phases[p].slo);
  }
  if (!steps.empty()) {
    if (steps.front().first > 0.0) steps.insert(steps.begin(), {0.0, SloTarget{}});
    w.slo_schedule = SloSchedule(std::move(steps));
  }
  return w;
}

namespace {

struct TraceRow {
  long input = 0;
  long output = 0;
  std::optional<double> arrival;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

long parse_count(const std::string& cell, const std::string& where) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(cell, &used);
  } catch (const std::exception&) {
    throw ValidationError(where + ": expected an integer, got '" + cell + "'");
  }
  if (used != cell.size()) throw ValidationError(where + ": expected an integer, got '" + cell + "'");
  return v;
}

double parse_time(const std::string& cell, const std::string& where) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    throw ValidationError(where + ": expected a number, got '" + cell + "'");
  }
  if (used != cell.size()) throw ValidationError(where + ": expected a number, got '" + cell + "'");
  return v;
}

}  // namespace

std::vector<RequestSpec> parse_trace(std::istream& in, bool jsonl, const WorkloadSpec& spec,
                                     const std::string& source) {
  std::vector<TraceRow> rows;
  std::vector<long> row_lines;
  std::string line;
  long line_no = 0;
  int col_in = 0, col_out = 1, col_arrival = -1;
  bool header_seen = false;

  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(line_no);
    TraceRow row;
    if (jsonl) {
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(text);
        row.input = rec.at("input_tokens").get<long>();
        row.output = rec.at("output_tokens").get<long>();
        if (rec.contains("arrival_time")) row.arrival = rec.at("arrival_time").get<double>();
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(where + ": " + e.what());
      }
    } else {
      auto cells = split_csv(text);
      if (!header_seen && !cells.empty() && !cells[0].empty() &&
          !(std::isdigit(static_cast<unsigned char>(cells[0][0])) || cells[0][0] == '-')) {
        header_seen = true;
        col_in = col_out = col_arrival = -1;
        for (std::size_t i = 0; i < cells.size(); ++i) {
          if (cells[i] == "input_tokens") col_in = static_cast<int>(i);
          else if (cells[i] == "output_tokens") col_out = static_cast<int>(i);
          else if (cells[i] == "arrival_time") col_arrival = static_cast<int>(i);
          else throw ValidationError(where + ": unknown column '" + cells[i] + "'");
        }
        if (col_in < 0 || col_out < 0) {
          throw ValidationError(where + ": header needs input_tokens and output_tokens");
        }
        continue;
      }
      if (!header_seen) {
        header_seen = true;
        col_arrival = cells.size() == 3 ? 2 : -1;
      }
      const std::size_t expected = col_arrival >= 0 ? 3 : 2;
      if (cells.size() != expected) {
        throw ValidationError(where + ": expected " + std::to_string(expected) + " fields, got " +
                              std::to_string(cells.size()));
      }
      row.input = parse_count(cells[col_in], where);
      row.output = parse_count(cells[col_out], where);
      if (col_arrival >= 0) row.arrival = parse_time(cells[col_arrival], where);
    }
    if (row.input < 1 || row.output < 1) {
      throw ValidationError(where + ": token counts must be >= 1");
    }
    if (row.arrival && *row.arrival < 0.0) {
      throw ValidationError(where + ": arrival_time must be >= 0");
    }
    if (!rows.empty() && rows.front().arrival.has_value() != row.arrival.has_value()) {
      throw ValidationError(where + ": arrival_time must be given for all rows or none");
    }
    if (!rows.empty() && row.arrival && *row.arrival < *rows.back().arrival) {
      throw ValidationError(where + ": arrival_time must be non-decreasing");
    }
    row.input = std::min(row.input, spec.max_input_tokens);
    rows.push_back(row);
    row_lines.push_back(line_no);
  }

  if (rows.empty()) return {};
  if (!rows.front().arrival) {
    std::vector<std::pair<long, long>> lengths;
    lengths.reserve(rows.size());
    for (const auto& r : rows) lengths.emplace_back(r.input, r.output);
    return gen_poisson_arrivals(spec, lengths);
  }
  std::vector<RequestSpec> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.push_back({static_cast<long>(i), *rows[i].arrival, rows[i].input, rows[i].output});
  }
  return out;
}

std::vector<RequestSpec> load_trace(const std::filesystem::path& path, const WorkloadSpec& spec) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open trace file " + path.string());
  const bool jsonl = path.extension() == ".jsonl" || path.extension() == ".ndjson";
  return parse_trace(in, jsonl, spec, path.string());
}

void write_trace_csv(std::ostream& out, const std::vector<RequestSpec>& requests) {
  out << "input_tokens,output_tokens,arrival_time\n";
  char buf[64];
  for (const auto& r : requests) {
    std::snprintf(buf, sizeof buf, "%.6f", r.arrival_time);
    out << r.input_tokens << ',' << r.output_tokens << ',' << buf << '\n';
  }
}

Workload build_workload(const WorkloadSpec& spec) {
  spec.validate();
  switch (spec.mode) {
    case WorkloadMode::kPoissonTrace: {
      Workload w;
      if (spec.num_requests > 0) {
        w.requests = gen_poisson_arrivals(spec, sample_lengths(spec.lengths, spec.num_requests, spec.seed));
      }
      return w;
    }
    case WorkloadMode::kTwoPhaseSynthetic:
      return gen_two_phase_synthetic(spec);
    case WorkloadMode::kFileTrace:
      return Workload{load_trace(spec.trace_path, spec), std::nullopt};
  }
  return {};
}

nlohmann::json workload_spec_to_json(const WorkloadSpec& spec) {
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& p : spec.phases) {
    nlohmann::json j = {{"count", p.count}, {"input_tokens", p.input_tokens},
                        {"output_tokens", p.output_tokens}};
    if (p.slo) j["slo"] = {{"ttft_s", p.slo->ttft_s}, {"tpot_s", p.slo->tpot_s}};
    phases.push_back(j);
  }
  return {
      {"mode", to_string(spec.mode)},
      {"qps_per_gpu", spec.qps_per_gpu},
      {"gpu_count", spec.gpu_count},
      {"seed", spec.seed},
      {"num_requests", spec.num_requests},
      {"lengths",
       {{"kind", spec.lengths.kind == LengthDistribution::Kind::kUniform ? "uniform" : "fixed"},
        {"input_min", spec.lengths.input_min},
        {"input_max", spec.lengths.input_max},
        {"output_min", spec.lengths.output_min},
        {"output_max", spec.lengths.output_max}}},
      {"phases", phases},
      {"trace_path", spec.trace_path},
      {"max_input_tokens", spec.max_input_tokens},
  };
}

WorkloadSpec workload_spec_from_json(const nlohmann::json& doc, WorkloadSpec spec) {
  require_known_keys(doc, {"mode", "qps_per_gpu", "gpu_count", "seed", "num_requests", "trace_path",
                          "max_input_tokens", "lengths", "phases"},
                     "workload");
  try {
    if (doc.contains("mode")) spec.mode = workload_mode_from_string(doc.at("mode").get<std::string>());
    spec.qps_per_gpu = doc.value("qps_per_gpu", spec.qps_per_gpu);
    spec.gpu_count = doc.value("gpu_count", spec.gpu_count);
    spec.seed = doc.value("seed", spec.seed);
    spec.num_requests = doc.value("num_requests", spec.num_requests);
    spec.trace_path = doc.value("trace_path", spec.trace_path);
    spec.max_input_tokens = doc.value("max_input_tokens", spec.max_input_tokens);
    if (doc.contains("lengths")) {
      const auto& l = doc.at("lengths");
      auto& d = spec.lengths;
      const std::string kind = l.value("kind", std::string("uniform"));
      if (kind == "uniform") d.kind = LengthDistribution::Kind::kUniform;
      else if (kind == "fixed") d.kind = LengthDistribution::Kind::kFixed;
      else throw ConfigError("workload.lengths.kind: unknown '" + kind + "'");
      d.input_min = l.value("input_min", d.input_min);
      d.input_max = l.value("input_max", d.input_max);
      d.output_min = l.value("output_min", d.output_min);
      d.output_max = l.value("output_max", d.output_max);
      if (d.kind == LengthDistribution::Kind::kFixed) {
        d.input_min = l.value("input_tokens", d.input_min);
        d.output_min = l.value("output_tokens", d.output_min);
        d.input_max = d.input_min;
        d.output_max = d.output_min;
      }
    }
    if (doc.contains("phases")) {
      spec.phases.clear();
      for (const auto& p : doc.at("phases")) {
        SyntheticPhase phase;
        phase.count = p.value("count", phase.count);
        phase.input_tokens = p.value("input_tokens", phase.input_tokens);
        phase.output_tokens = p.value("output_tokens", phase.output_tokens);
        phase.slo.reset();
        if (p.contains("slo")) {
          phase.slo = SloTarget{p.at("slo").value("ttft_s", 1.0), p.at("slo").value("tpot_s", 0.040)};
        }
        spec.phases.push_back(phase);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("workload: ") + e.what());
  }
  return spec;
}

}  // namespace powersim

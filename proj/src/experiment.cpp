// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "powersim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>
#include <tuple>

#include "powersim/errors.hpp"
#include "powersim/json_keys.hpp"

namespace powersim {

void ExperimentConfig::validate() const {
  PerfModel model(calibration_path.empty() ? CalibrationFile{} : load_calibration(calibration_path));
  sim.validate(model);
  workload.validate();
  controller.validate();
  if (sim.mode == SimMode::kCoalesced && controller.policy != Policy::kStatic) {
    throw ConfigError("controller.policy: coalesced mode supports only 'static'");
  }
  if (controller.min_p < model.min_power() || controller.max_p > model.max_power()) {
    throw ConfigError("controller.min_p/max_p must lie within the calibration power range");
  }
  for (double q : qps_list) {
    if (!(q > 0.0)) throw ConfigError("sweep.qps entries must be > 0");
  }
  if (slo_scales.empty()) throw ConfigError("sweep.slo_scale must not be empty");
  for (double s : slo_scales) {
    if (!(s > 0.0)) throw ConfigError("sweep.slo_scale entries must be > 0");
  }
  if (repeats < 1) throw ConfigError("sweep.repeats must be >= 1");
}

nlohmann::json experiment_to_json(const ExperimentConfig& c) {
  return {
      {"name", c.name},
      {"sim", sim_config_to_json(c.sim)},
      {"workload", workload_spec_to_json(c.workload)},
      {"controller", controller_config_to_json(c.controller)},
      {"calibration", c.calibration_path},
      {"sweep", {{"qps", c.qps_list}, {"slo_scale", c.slo_scales}, {"repeats", c.repeats}}},
  };
}

ExperimentConfig experiment_from_json(const nlohmann::json& doc, ExperimentConfig c) {
  if (!doc.is_object()) throw ConfigError("experiment config must be a JSON object");
  require_known_keys(doc, {"preset", "name", "sim", "workload", "controller", "calibration", "sweep", "run"},
                     "experiment config");
  try {
    if (doc.contains("preset")) c = preset(doc.at("preset").get<std::string>());
    c.name = doc.value("name", c.name);
    if (doc.contains("sim")) c.sim = sim_config_from_json(doc.at("sim"), c.sim);
    if (doc.contains("workload")) c.workload = workload_spec_from_json(doc.at("workload"), c.workload);
    if (doc.contains("controller")) {
      c.controller = controller_config_from_json(doc.at("controller"), c.controller);
    }
    c.calibration_path = doc.value("calibration", c.calibration_path);
    if (doc.contains("sweep")) {
      const auto& s = doc.at("sweep");
      if (s.contains("qps")) c.qps_list = s.at("qps").get<std::vector<double>>();
      if (s.contains("slo_scale")) c.slo_scales = s.at("slo_scale").get<std::vector<double>>();
      c.repeats = s.value("repeats", c.repeats);
    }
    // Echo of a single run: pin its SLO scale.
    if (doc.contains("run")) c.slo_scales = {doc.at("run").value("slo_scale", 1.0)};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  c.workload.gpu_count = c.sim.gpu_count;
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_from_json(doc);
}

namespace {

struct PresetDef {
  const char* name;
  SimConfig (*sim)();
  Policy policy;
};

const PresetDef kPresets[] = {
    {"coalesced-750", [] { return SimConfig::coalesced(8, 750, 6000); }, Policy::kStatic},
    {"4P4D-750", [] { return SimConfig::disaggregated(4, 750, 4, 750, 6000); }, Policy::kStatic},
    {"4P4D-600", [] { return SimConfig::disaggregated(4, 600, 4, 600, 4800); }, Policy::kStatic},
    {"5P3D-600", [] { return SimConfig::disaggregated(5, 600, 3, 600, 4800); }, Policy::kStatic},
    {"4P750-4D450", [] { return SimConfig::disaggregated(4, 750, 4, 450, 4800); }, Policy::kStatic},
    {"4P675-4D525", [] { return SimConfig::disaggregated(4, 675, 4, 525, 4800); }, Policy::kStatic},
    {"dynpower", [] { return SimConfig::disaggregated(4, 600, 4, 600, 4800); }, Policy::kDynPower},
    {"dyngpu", [] { return SimConfig::disaggregated(4, 600, 4, 600, 4800); }, Policy::kDynGpu},
    {"dynboth", [] { return SimConfig::disaggregated(4, 600, 4, 600, 4800); }, Policy::kDynBoth},
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

PerfModel model_for(const ExperimentConfig& c) {
  return PerfModel(c.calibration_path.empty() ? CalibrationFile{} : load_calibration(c.calibration_path));
}

template <typename Write>
std::string render(Write&& write) {
  std::ostringstream out;
  write(out);
  return out.str();
}

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : kPresets) names.emplace_back(p.name);
  return names;
}

ExperimentConfig preset(const std::string& name) {
  for (const auto& p : kPresets) {
    if (name != p.name) continue;
    ExperimentConfig c;
    c.name = p.name;
    c.sim = p.sim();
    c.controller.policy = p.policy;
    c.workload.qps_per_gpu = 1.5;
    c.workload.gpu_count = c.sim.gpu_count;
    return c;
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

RunOutput run_once(const ExperimentConfig& config, double qps_per_gpu, double slo_scale,
                   std::uint64_t seed) {
  RunOutput run;
  run.config = config;
  run.config.workload.qps_per_gpu = qps_per_gpu;
  run.config.workload.seed = seed;
  run.config.workload.gpu_count = config.sim.gpu_count;
  run.slo_scale = slo_scale;
  run.config.validate();

  Workload workload = build_workload(run.config.workload);
  SimConfig sim = run.config.sim;
  sim.slo = (workload.slo_schedule ? *workload.slo_schedule : sim.slo).scaled(slo_scale);
  run.requests = std::move(workload.requests);

  const PerfModel model = model_for(run.config);
  Controller controller(run.config.controller);
  run.sim = run_simulation(sim, model, run.requests, controller);
  run.summary = summarize(run.sim.records, run.sim.power);
  return run;
}

RunOutput run_once(const ExperimentConfig& config) {
  return run_once(config, config.workload.qps_per_gpu, 1.0, config.workload.seed);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

nlohmann::json run_echo(const RunOutput& run) {
  auto echo = experiment_to_json(run.config);
  echo["run"] = {{"qps_per_gpu", run.config.workload.qps_per_gpu},
                 {"seed", run.config.workload.seed},
                 {"slo_scale", run.slo_scale}};
  return echo;
}

}  // namespace

void write_run_artifacts(const std::filesystem::path& dir, const RunOutput& run) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "config.json", run_echo(run).dump(2) + "\n");
  write_file_atomic(dir / "requests.csv",
                    render([&](std::ostream& o) { write_records_csv(o, run.sim.records); }));
  write_file_atomic(dir / "summary.json", summary_to_json(run.summary).dump(2) + "\n");
  write_file_atomic(dir / "timeseries.csv",
                    render([&](std::ostream& o) { write_timeseries_csv(o, run.sim.timeseries); }));
  write_file_atomic(dir / "events.jsonl",
                    render([&](std::ostream& o) { write_trace_jsonl(o, run.sim.trace); }));
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(workers, count); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

SweepResult run_sweep(const ExperimentConfig& config, const std::filesystem::path& out,
                      int parallel) {
  config.validate();
  const std::vector<double> qps =
      config.qps_list.empty() ? std::vector<double>{config.workload.qps_per_gpu} : config.qps_list;

  SweepResult result;
  for (double q : qps) {
    for (double s : config.slo_scales) {
      for (int r = 0; r < config.repeats; ++r) {
        result.runs.push_back({q, s, r, config.workload.seed + static_cast<std::uint64_t>(r), {}});
      }
    }
  }

  parallel_for(result.runs.size(), parallel, [&](std::size_t i) {
    auto& point = result.runs[i];
    RunOutput run = run_once(config, point.qps_per_gpu, point.slo_scale, point.seed);
    point.summary = run.summary;
    if (!out.empty()) {
      const auto dir = out / "points" /
                       ("qps" + fmt("%g", point.qps_per_gpu) + "_slo" + fmt("%g", point.slo_scale) +
                        "_r" + std::to_string(point.repeat));
      std::filesystem::create_directories(dir);
      write_file_atomic(dir / "config.json", run_echo(run).dump(2) + "\n");
      write_file_atomic(dir / "summary.json", summary_to_json(run.summary).dump(2) + "\n");
      write_file_atomic(dir / "requests.csv",
                        render([&](std::ostream& o) { write_records_csv(o, run.sim.records); }));
    }
  });

  std::vector<CurvePoint> points;
  for (std::size_t i = 0; i < result.runs.size(); i += static_cast<std::size_t>(config.repeats)) {
    std::vector<double> att, good, qpw;
    for (int r = 0; r < config.repeats; ++r) {
      const auto& s = result.runs[i + static_cast<std::size_t>(r)].summary;
      att.push_back(s.attainment);
      good.push_back(s.goodput);
      qpw.push_back(s.qps_per_watt);
    }
    CurvePoint p;
    p.qps_per_gpu = result.runs[i].qps_per_gpu;
    p.slo_scale = result.runs[i].slo_scale;
    p.attainment = mean_of(att);
    p.attainment_min = *std::min_element(att.begin(), att.end());
    p.attainment_max = *std::max_element(att.begin(), att.end());
    p.goodput = mean_of(good);
    p.qps_per_watt = mean_of(qpw);
    points.push_back(p);
  }
  result.curve = attainment_curve(std::move(points));

  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_file_atomic(out / "config.json", experiment_to_json(config).dump(2) + "\n");
    write_file_atomic(out / "attainment_curve.csv",
                      render([&](std::ostream& o) { write_curve_csv(o, result.curve); }));
    const SloTarget base = config.sim.slo.at(0.0);
    write_file_atomic(out / "slo_scaling.csv", render([&](std::ostream& o) {
                        o << "slo_scale,ttft_slo_s,tpot_slo_s,qps_per_gpu,attainment\n";
                        auto rows = result.curve;
                        std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
                          return std::tie(a.qps_per_gpu, a.slo_scale) <
                                 std::tie(b.qps_per_gpu, b.slo_scale);
                        });
                        for (const auto& p : rows) {
                          const auto t = base.scaled(p.slo_scale);
                          o << fmt("%g", p.slo_scale) << ',' << fmt("%g", t.ttft_s) << ','
                            << fmt("%g", t.tpot_s) << ',' << fmt("%g", p.qps_per_gpu) << ','
                            << fmt("%.6f", p.attainment) << '\n';
                        }
                      }));
    write_file_atomic(out / "runs.csv", render([&](std::ostream& o) {
                        o << "qps_per_gpu,slo_scale,repeat,seed,attainment,goodput,qps_per_watt\n";
                        for (const auto& r : result.runs) {
                          o << fmt("%g", r.qps_per_gpu) << ',' << fmt("%g", r.slo_scale) << ','
                            << r.repeat << ',' << r.seed << ',' << fmt("%.6f", r.summary.attainment)
                            << ',' << fmt("%.6f", r.summary.goodput) << ','
                            << fmt("%.8f", r.summary.qps_per_watt) << '\n';
                        }
                      }));
  }
  return result;
}

CompareResult run_compare(const std::vector<ExperimentConfig>& configs,
                          const std::filesystem::path& out, int parallel) {
  if (configs.empty()) throw ConfigError("compare needs at least one configuration");
  const auto reference = workload_spec_to_json(configs.front().workload);
  for (const auto& c : configs) {
    if (workload_spec_to_json(c.workload) != reference) {
      throw ValidationError("compare: '" + c.name + "' uses a different workload than '" +
                            configs.front().name + "'");
    }
  }

  CompareResult result;
  result.rows.resize(configs.size());
  parallel_for(configs.size(), parallel, [&](std::size_t i) {
    RunOutput run = run_once(configs[i]);
    result.rows[i] = {configs[i].name, run.summary};
    if (!out.empty()) write_run_artifacts(out / configs[i].name, run);
  });

  auto best = [&](const char* metric, auto value, bool higher) {
    const CompareRow* pick = nullptr;
    for (const auto& r : result.rows) {
      if (pick == nullptr || (higher ? value(r) > value(*pick) : value(r) < value(*pick))) pick = &r;
    }
    result.winners[metric] = pick->name;
  };
  best("attainment", [](const CompareRow& r) { return r.summary.attainment; }, true);
  best("goodput", [](const CompareRow& r) { return r.summary.goodput; }, true);
  best("qps_per_watt", [](const CompareRow& r) { return r.summary.qps_per_watt; }, true);
  best("ttft_p90", [](const CompareRow& r) { return r.summary.ttft_p90; }, false);
  best("tpot_p90", [](const CompareRow& r) { return r.summary.tpot_p90; }, false);

  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_file_atomic(out / "compare.csv", render([&](std::ostream& o) { write_compare_table(o, result); }));
    nlohmann::json doc = {{"rows", nlohmann::json::array()}, {"winners", result.winners}};
    for (const auto& r : result.rows) {
      doc["rows"].push_back({{"name", r.name}, {"summary", summary_to_json(r.summary)}});
    }
    write_file_atomic(out / "compare.json", doc.dump(2) + "\n");
  }
  return result;
}

void write_compare_table(std::ostream& out, const CompareResult& result) {
  out << "config,attainment,goodput,qps_per_watt,node_qps_per_watt,ttft_p90,tpot_p90,avg_gpu_power\n";
  for (const auto& r : result.rows) {
    const auto& s = r.summary;
    out << r.name << ',' << fmt("%.6f", s.attainment) << ',' << fmt("%.6f", s.goodput) << ','
        << fmt("%.8f", s.qps_per_watt) << ',' << fmt("%.8f", s.node_qps_per_watt) << ','
        << fmt("%.6f", s.ttft_p90) << ',' << fmt("%.6f", s.tpot_p90) << ','
        << fmt("%.1f", s.avg_provisioned_gpu_power) << '\n';
  }
  for (const auto& [metric, name] : result.winners) out << "# best " << metric << ": " << name << '\n';
}

}  // namespace powersim

// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "powersim/perf_model.hpp"

#include <fstream>
#include <sstream>

#include "powersim/errors.hpp"
#include "powersim/json_keys.hpp"

namespace powersim {

std::string to_string(Phase phase) {
  return phase == Phase::kPrefill ? "prefill" : "decode";
}

void PowerCurve::validate(const std::string& field, int min_power, int max_power) const {
  if (anchors.empty()) {
    throw ValidationError(field + ": at least one anchor is required");
  }
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const auto& [watts, speedup] = anchors[i];
    if (watts < min_power || watts > max_power) {
      throw ValidationError(field + "[" + std::to_string(i) + "]: power " + std::to_string(watts) +
                            " W outside [" + std::to_string(min_power) + ", " +
                            std::to_string(max_power) + "]");
    }
    if (!(speedup > 0.0)) {
      throw ValidationError(field + "[" + std::to_string(i) + "]: speedup must be positive");
    }
    if (i > 0) {
      if (watts <= anchors[i - 1].first) {
        throw ValidationError(field + ": anchor powers must be strictly increasing (index " +
                              std::to_string(i) + ")");
      }
      if (speedup < anchors[i - 1].second) {
        throw ValidationError(field + ": speedup must be non-decreasing in power (index " +
                              std::to_string(i) + ")");
      }
    }
  }
  if (anchors.front().second != 1.0) {
    throw ValidationError(field + ": speedup at the lowest anchor must be 1.0");
  }
}

double PowerCurve::at(int watts) const {
  if (watts <= anchors.front().first) return anchors.front().second;
  for (std::size_t i = 1; i < anchors.size(); ++i) {
    const auto [w1, s1] = anchors[i];
    if (watts <= w1) {
      const auto [w0, s0] = anchors[i - 1];
      if (watts == w1) return s1;
      return s0 + (s1 - s0) * static_cast<double>(watts - w0) / static_cast<double>(w1 - w0);
    }
  }
  return anchors.back().second;
}

void LatencyModelParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw ValidationError(std::string("latency_params.") + name + " must be > 0");
  };
  positive(prefill_base_rate, "prefill_base_rate");
  positive(prefill_batch_efficiency, "prefill_batch_efficiency");
  positive(decode_step_fixed, "decode_step_fixed");
  positive(decode_step_per_seq, "decode_step_per_seq");
  positive(kv_bytes_per_token, "kv_bytes_per_token");
  positive(fabric_bandwidth, "fabric_bandwidth");
  positive(transfer_fixed_overhead, "transfer_fixed_overhead");
}

void CalibrationFile::validate() const {
  if (min_power >= max_power) {
    throw ValidationError("min_power must be < max_power");
  }
  prefill.validate("prefill_anchors", min_power, max_power);
  decode.validate("decode_anchors", min_power, max_power);
  latency.validate();
}

namespace {

PowerCurve curve_from_json(const nlohmann::json& arr, const std::string& field) {
  if (!arr.is_array()) throw ValidationError(field + ": expected an array of [watts, speedup]");
  PowerCurve curve;
  for (const auto& pair : arr) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() ||
        !pair[1].is_number()) {
      throw ValidationError(field + ": each anchor must be [int watts, number speedup]");
    }
    curve.anchors.emplace_back(pair[0].get<int>(), pair[1].get<double>());
  }
  return curve;
}

nlohmann::json curve_to_json(const PowerCurve& curve) {
  auto arr = nlohmann::json::array();
  for (const auto& [w, s] : curve.anchors) arr.push_back({w, s});
  return arr;
}

}  // namespace

CalibrationFile calibration_from_json(const nlohmann::json& doc) {
  CalibrationFile cal;
  if (doc.is_null()) return cal;
  if (!doc.is_object()) throw ValidationError("calibration: expected a JSON object");
  require_known_keys(doc, {"min_power", "max_power", "prefill_anchors", "decode_anchors", "latency_params"},
                     "calibration");
  try {
    if (doc.contains("min_power")) cal.min_power = doc.at("min_power").get<int>();
    if (doc.contains("max_power")) cal.max_power = doc.at("max_power").get<int>();
    if (doc.contains("prefill_anchors")) {
      cal.prefill = curve_from_json(doc.at("prefill_anchors"), "prefill_anchors");
    }
    if (doc.contains("decode_anchors")) {
      cal.decode = curve_from_json(doc.at("decode_anchors"), "decode_anchors");
    }
    if (doc.contains("latency_params")) {
      const auto& lp = doc.at("latency_params");
      require_known_keys(lp, {"prefill_base_rate", "prefill_batch_efficiency", "decode_step_fixed",
                              "decode_step_per_seq", "kv_bytes_per_token", "fabric_bandwidth",
                              "transfer_fixed_overhead"},
                         "calibration.latency_params");
      auto& p = cal.latency;
      p.prefill_base_rate = lp.value("prefill_base_rate", p.prefill_base_rate);
      p.prefill_batch_efficiency = lp.value("prefill_batch_efficiency", p.prefill_batch_efficiency);
      p.decode_step_fixed = lp.value("decode_step_fixed", p.decode_step_fixed);
      p.decode_step_per_seq = lp.value("decode_step_per_seq", p.decode_step_per_seq);
      p.kv_bytes_per_token = lp.value("kv_bytes_per_token", p.kv_bytes_per_token);
      p.fabric_bandwidth = lp.value("fabric_bandwidth", p.fabric_bandwidth);
      p.transfer_fixed_overhead = lp.value("transfer_fixed_overhead", p.transfer_fixed_overhead);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("calibration: ") + e.what());
  }
  cal.validate();
  return cal;
}

nlohmann::json calibration_to_json(const CalibrationFile& cal) {
  const auto& p = cal.latency;
  return {
      {"min_power", cal.min_power},
      {"max_power", cal.max_power},
      {"prefill_anchors", curve_to_json(cal.prefill)},
      {"decode_anchors", curve_to_json(cal.decode)},
      {"latency_params",
       {{"prefill_base_rate", p.prefill_base_rate},
        {"prefill_batch_efficiency", p.prefill_batch_efficiency},
        {"decode_step_fixed", p.decode_step_fixed},
        {"decode_step_per_seq", p.decode_step_per_seq},
        {"kv_bytes_per_token", p.kv_bytes_per_token},
        {"fabric_bandwidth", p.fabric_bandwidth},
        {"transfer_fixed_overhead", p.transfer_fixed_overhead}}},
  };
}

CalibrationFile load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open calibration file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return CalibrationFile{};
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return calibration_from_json(doc);
}

PerfModel::PerfModel(CalibrationFile cal) : cal_(std::move(cal)) { cal_.validate(); }

void PerfModel::check_power(int watts) const {
  if (watts < cal_.min_power || watts > cal_.max_power) {
    throw RangeError("power cap " + std::to_string(watts) + " W outside [" +
                     std::to_string(cal_.min_power) + ", " + std::to_string(cal_.max_power) + "]");
  }
}

double PerfModel::speedup(Phase phase, int watts) const {
  check_power(watts);
  return phase == Phase::kPrefill ? cal_.prefill.at(watts) : cal_.decode.at(watts);
}

double PerfModel::prefill_latency(long total_tokens, int batch_size, int watts) const {
  if (total_tokens < 1) throw DomainError("prefill_latency: token count must be >= 1");
  if (batch_size < 1) throw DomainError("prefill_latency: batch size must be >= 1");
  const auto& p = cal_.latency;
  const double batch_eff = 1.0 + p.prefill_batch_efficiency * (batch_size - 1);
  return static_cast<double>(total_tokens) / (p.prefill_base_rate * batch_eff) /
         speedup(Phase::kPrefill, watts);
}

double PerfModel::decode_step_latency(int active_sequences, int watts) const {
  if (active_sequences < 1) throw DomainError("decode_step_latency: empty batch");
  const auto& p = cal_.latency;
  return (p.decode_step_fixed + p.decode_step_per_seq * active_sequences) /
         speedup(Phase::kDecode, watts);
}

double PerfModel::kv_transfer_latency(long input_tokens) const {
  if (input_tokens < 1) throw DomainError("kv_transfer_latency: token count must be >= 1");
  const auto& p = cal_.latency;
  return p.transfer_fixed_overhead +
         static_cast<double>(input_tokens) * p.kv_bytes_per_token / p.fabric_bandwidth;
}

}  // namespace powersim

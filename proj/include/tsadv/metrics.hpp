#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsadv/error.hpp"

namespace tsadv {

/// Attack success rate: successes over total attempts.
inline double asr(long n_success, long n_fail) {
  if (n_success < 0 || n_fail < 0) throw ConfigError("asr: negative counts");
  long total = n_success + n_fail;
  if (total < 1) throw ConfigError("asr: zero total attempts");
  return static_cast<double>(n_success) / static_cast<double>(total);
}

/// Count of coordinates with |delta_i| strictly below epsilon.
inline int close_to_zero_count(std::span<const double> delta, double epsilon = 1e-6) {
  if (!(epsilon > 0)) throw ConfigError("close_to_zero_count: epsilon must be > 0");
  int n = 0;
  for (double v : delta)
    if (std::fabs(v) < epsilon) ++n;
  return n;
}

/// What aggregation needs from one attacked sample.
struct OutcomeSummary {
  bool success = false;
  double l2_distance = 0.0;
  double close_to_zero = 0.0;
};

enum class DistanceFilter { kSuccess, kFailure, kAll };

/// Mean L2 distance over the filtered subset; absent when the subset is
/// empty (never 0 or NaN).
inline std::optional<double> mean_distance(const std::vector<OutcomeSummary>& outcomes,
                                           DistanceFilter filter) {
  if (outcomes.empty()) throw ConfigError("mean_distance: empty outcome list");
  double acc = 0.0;
  long n = 0;
  for (const auto& o : outcomes) {
    if (filter == DistanceFilter::kSuccess && !o.success) continue;
    if (filter == DistanceFilter::kFailure && o.success) continue;
    acc += o.l2_distance;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

/// One report row per (model, attack, regularizer) cell. close_to_zero
/// is the mean per-sample count.
struct MetricsRow {
  double asr = 0.0;
  std::optional<double> mean_success_distance;
  std::optional<double> mean_failure_distance;
  double overall_mean_distance = 0.0;
  double duration_seconds = 0.0;
  double close_to_zero = 0.0;
  long n_success = 0;
  long n_fail = 0;
};

inline MetricsRow aggregate(const std::vector<OutcomeSummary>& outcomes,
                            double duration_seconds) {
  if (outcomes.empty()) throw ConfigError("aggregate: empty outcome list");
  MetricsRow row;
  double ctz = 0.0;
  for (const auto& o : outcomes) {
    (o.success ? row.n_success : row.n_fail) += 1;
    ctz += o.close_to_zero;
  }
  row.asr = asr(row.n_success, row.n_fail);
  row.mean_success_distance = mean_distance(outcomes, DistanceFilter::kSuccess);
  row.mean_failure_distance = mean_distance(outcomes, DistanceFilter::kFailure);
  row.overall_mean_distance = *mean_distance(outcomes, DistanceFilter::kAll);
  row.close_to_zero = ctz / static_cast<double>(outcomes.size());
  row.duration_seconds = duration_seconds;
  return row;
}

struct ReportRow {
  std::string model;
  std::string attack;
  std::string regularizer;
  MetricsRow metrics;
};

inline constexpr const char* kReportCsvHeader =
    "model,attack,regularizer,asr,mean_success_distance,mean_failure_distance,"
    "overall_mean_distance,duration_s,close_to_zero,n_success,n_fail";

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();  // empty cell when absent
}

}  // namespace detail

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = kReportCsvHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += r.model + ',' + r.attack + ',' + r.regularizer + ',';
    out += detail::fmt_double(r.metrics.asr) + ',';
    out += detail::fmt_opt(r.metrics.mean_success_distance) + ',';
    out += detail::fmt_opt(r.metrics.mean_failure_distance) + ',';
    out += detail::fmt_double(r.metrics.overall_mean_distance) + ',';
    out += detail::fmt_double(r.metrics.duration_seconds) + ',';
    out += detail::fmt_double(r.metrics.close_to_zero) + ',';
    out += std::to_string(r.metrics.n_success) + ',';
    out += std::to_string(r.metrics.n_fail) + '\n';
  }
  return out;
}

inline nlohmann::json report_json(const std::vector<ReportRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["model"] = r.model;
    j["attack"] = r.attack;
    j["regularizer"] = r.regularizer;
    j["asr"] = r.metrics.asr;
    if (r.metrics.mean_success_distance)
      j["mean_success_distance"] = *r.metrics.mean_success_distance;
    else
      j["mean_success_distance"] = nullptr;
    if (r.metrics.mean_failure_distance)
      j["mean_failure_distance"] = *r.metrics.mean_failure_distance;
    else
      j["mean_failure_distance"] = nullptr;
    j["overall_mean_distance"] = r.metrics.overall_mean_distance;
    j["duration_s"] = r.metrics.duration_seconds;
    j["close_to_zero"] = r.metrics.close_to_zero;
    j["n_success"] = r.metrics.n_success;
    j["n_fail"] = r.metrics.n_fail;
    arr.push_back(std::move(j));
  }
  return arr;
}

/// Plot-ready pivot: metric -> cell key -> value.
inline nlohmann::json comparison_json(const std::vector<ReportRow>& rows) {
  nlohmann::json out;
  auto key = [](const ReportRow& r) { return r.attack + "|" + r.regularizer; };
  for (const auto& r : rows) {
    std::string k = key(r);
    out["asr"][k] = r.metrics.asr;
    out["mean_success_distance"][k] =
        r.metrics.mean_success_distance
            ? nlohmann::json(*r.metrics.mean_success_distance)
            : nlohmann::json(nullptr);
    out["mean_failure_distance"][k] =
        r.metrics.mean_failure_distance
            ? nlohmann::json(*r.metrics.mean_failure_distance)
            : nlohmann::json(nullptr);
    out["overall_mean_distance"][k] = r.metrics.overall_mean_distance;
    out["close_to_zero"][k] = r.metrics.close_to_zero;
    out["duration_s"][k] = r.metrics.duration_seconds;
  }
  return out;
}

}  // namespace tsadv

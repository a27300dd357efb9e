#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sipldl/errors.hpp"
#include "sipldl/harness.hpp"

namespace sipldl {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation (n - 1); 0 for a single value
  std::size_t count = 0;
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd r;
  r.count = xs.size();
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

/// Percent with two decimals, e.g. 0.932, 0.0066 -> "93.20±0.66".
inline std::string format_percent(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", 100.0 * m.mean, 100.0 * m.std);
  return buf;
}

/// Quotes a CSV field when it contains a delimiter, quote or line break.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

struct VariantSummary {
  std::string variant;
  std::vector<std::uint64_t> seeds;
  MeanStd accuracy;
  MeanStd macro_f1;
  std::vector<MeanStd> per_class_f1;
};

/// Groups finished runs by variant (sorted by name) and aggregates their
/// final metrics over seeds.
inline std::vector<VariantSummary> summarize_runs(const std::vector<RunRecord>& runs) {
  std::map<std::string, std::vector<const RunRecord*>> groups;
  for (const auto& r : runs) {
    require(r.final_metrics.has_value(), ErrorKind::Schema,
            "run " + r.variant + " seed " + std::to_string(r.seed) + " has no final metrics");
    groups[r.variant].push_back(&r);
  }
  std::vector<VariantSummary> out;
  for (const auto& [variant, group] : groups) {
    VariantSummary s;
    s.variant = variant;
    const std::size_t classes = group.front()->final_metrics->per_class_f1.size();
    std::vector<double> acc, mf1;
    std::vector<std::vector<double>> f1(classes);
    for (const RunRecord* r : group) {
      const auto& m = *r->final_metrics;
      require(m.per_class_f1.size() == classes, ErrorKind::Schema,
              "variant " + variant + " mixes runs with different class counts");
      s.seeds.push_back(r->seed);
      acc.push_back(m.accuracy);
      mf1.push_back(m.macro_f1);
      for (std::size_t c = 0; c < classes; ++c) f1[c].push_back(m.per_class_f1[c]);
    }
    s.accuracy = mean_std(acc);
    s.macro_f1 = mean_std(mf1);
    for (const auto& v : f1) s.per_class_f1.push_back(mean_std(v));
    out.push_back(std::move(s));
  }
  return out;
}

/// One row per variant: runs, accuracy, macro-F1, then per-class F1.
inline std::string report_csv(const std::vector<VariantSummary>& rows) {
  std::size_t classes = 0;
  for (const auto& r : rows) classes = std::max(classes, r.per_class_f1.size());
  std::string out = "variant,runs,accuracy,macro_f1";
  for (std::size_t c = 0; c < classes; ++c) out += ",f1_class_" + std::to_string(c);
  out += "\r\n";
  for (const auto& r : rows) {
    out += csv_field(r.variant) + "," + std::to_string(r.seeds.size()) + "," + format_percent(r.accuracy) + "," +
           format_percent(r.macro_f1);
    for (std::size_t c = 0; c < classes; ++c) out += "," + (c < r.per_class_f1.size() ? format_percent(r.per_class_f1[c]) : "");
    out += "\r\n";
  }
  return out;
}

}  // namespace sipldl

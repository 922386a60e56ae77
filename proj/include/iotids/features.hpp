#pragma once

// Correlation pruning, standardization and prompt-facing value formatting.
//
// Standard deviations are population (divide by n) everywhere, so Pearson
// coefficients and standardized vectors use the same moments.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/common.hpp"
#include "iotids/flow_ingest.hpp"
#include "iotids/schema.hpp"

namespace iotids {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
};

// Column-wise Pearson matrix over the given feature rows.
inline Matrix pearson_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 2) throw DataError("pearson_matrix needs at least 2 records");
  const std::size_t d = rows.front().size();
  const double n = static_cast<double>(rows.size());
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw DataError("pearson_matrix: ragged feature rows");
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  }
  for (auto& m : mean) m /= n;

  Matrix cov(d, d);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = r[i] - mean[i];
      for (std::size_t j = i; j < d; ++j) cov(i, j) += ci * (r[j] - mean[j]);
    }

  bool any_variance = false;
  for (std::size_t i = 0; i < d; ++i) {
    const bool constant = std::all_of(rows.begin(), rows.end(), [&](const auto& r) { return r[i] == rows[0][i]; });
    if (constant) cov(i, i) = 0.0;
    any_variance |= cov(i, i) > 0.0;
  }
  if (!any_variance) throw DataError("pearson_matrix: every feature is constant");

  Matrix corr(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    corr(i, i) = 1.0;
    for (std::size_t j = i + 1; j < d; ++j) {
      double r = 0.0;
      if (cov(i, i) > 0.0 && cov(j, j) > 0.0) {
        r = cov(i, j) / std::sqrt(cov(i, i) * cov(j, j));
        r = std::clamp(r, -1.0, 1.0);
      }
      corr(i, j) = r;
      corr(j, i) = r;
    }
  }
  return corr;
}

inline Matrix pearson_matrix(const std::vector<FlowRecord>& records) {
  std::vector<std::vector<double>> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(r.features);
  return pearson_matrix(rows);
}

// Greedy scan in schema order: a kept feature drops every later kept feature
// whose |r| exceeds the threshold. Returns kept names in schema order.
inline std::vector<std::string> prune_correlated(const Matrix& corr, const std::vector<std::string>& names,
                                                 double threshold = 0.98) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("prune threshold must lie in (0,1]");
  if (corr.rows != corr.cols || corr.rows != names.size())
    throw ConfigError("prune_correlated: matrix shape does not match feature names");
  const std::size_t d = names.size();
  std::vector<bool> kept(d, true);
  for (std::size_t i = 0; i < d; ++i) {
    if (!kept[i]) continue;
    for (std::size_t j = i + 1; j < d; ++j)
      if (kept[j] && std::abs(corr(i, j)) > threshold) kept[j] = false;
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < d; ++i)
    if (kept[i]) out.push_back(names[i]);
  return out;
}

struct StandardizerStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population

  std::size_t dim() const { return mean.size(); }

  std::string id() const {
    nlohmann::json j{{"mean", mean}, {"std", stddev}};
    return content_id(j.dump());
  }
};

inline StandardizerStats fit_standardizer(const std::vector<std::vector<double>>& train) {
  if (train.empty()) throw DataError("fit_standardizer: empty training set");
  const std::size_t d = train.front().size();
  const double n = static_cast<double>(train.size());
  StandardizerStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (const auto& r : train) {
    if (r.size() != d) throw DataError("fit_standardizer: ragged feature rows");
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  }
  for (auto& m : s.mean) m /= n;
  for (const auto& r : train)
    for (std::size_t j = 0; j < d; ++j) s.stddev[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
  for (std::size_t j = 0; j < d; ++j) {
    // Exactly constant columns get std 0 even when the mean carries rounding error.
    const bool constant = std::all_of(train.begin(), train.end(), [&](const auto& r) { return r[j] == train[0][j]; });
    s.stddev[j] = constant ? 0.0 : std::sqrt(s.stddev[j] / n);
  }
  return s;
}

inline std::vector<double> apply_standardizer(const StandardizerStats& stats, std::span<const double> x) {
  if (x.size() != stats.dim())
    throw DataError("apply_standardizer: vector has " + std::to_string(x.size()) + " values, stats have " +
                    std::to_string(stats.dim()));
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    out[j] = stats.stddev[j] > 0.0 ? (x[j] - stats.mean[j]) / stats.stddev[j] : 0.0;
  return out;
}

// Selected-feature projections of records, ready for fitting or prediction.
inline std::vector<std::vector<double>> project_all(const std::vector<FlowRecord>& records,
                                                    const FeatureSchema& schema) {
  std::vector<std::vector<double>> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(schema.project(r.features));
  return out;
}

inline std::vector<std::vector<double>> standardize_all(const std::vector<std::vector<double>>& rows,
                                                        const StandardizerStats& stats) {
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(apply_standardizer(stats, r));
  return out;
}

// Six decimals (ties to even on the exact binary value), trailing zeros
// trimmed down to one fractional digit: 20 -> "20.0", 0.1234567 -> "0.123457".
inline std::string format_value(double x) {
  if (!std::isfinite(x)) throw DataError("format_value: non-finite input");
  std::string buf(400, '\0');
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x, std::chars_format::fixed, 6);
  if (ec != std::errc()) throw DataError("format_value: value too large to format");
  buf.resize(static_cast<std::size_t>(ptr - buf.data()));
  while (buf.back() == '0' && buf[buf.size() - 2] != '.') buf.pop_back();
  if (buf == "-0.0") buf = "0.0";
  return buf;
}

inline void to_json(nlohmann::json& j, const StandardizerStats& s) {
  j = nlohmann::json{{"id", s.id()}, {"mean", s.mean}, {"std", s.stddev}};
}

inline void from_json(const nlohmann::json& j, StandardizerStats& s) {
  j.at("mean").get_to(s.mean);
  j.at("std").get_to(s.stddev);
  if (s.mean.size() != s.stddev.size()) throw DataError("standardizer stats: mean/std length mismatch");
}

// Versioned sidecar shared by baseline training and knowledge-base building.
struct FeatureSidecar {
  static constexpr int kVersion = 1;
  FeatureSchema schema;
  StandardizerStats baseline;  // fit on the train split
  StandardizerStats kb;        // fit on the knowledge-base split

  nlohmann::json to_json() const {
    return {{"format", "iotids.features"}, {"version", kVersion}, {"schema", schema},
            {"stats", {{"baseline", baseline}, {"kb", kb}}}};
  }

  static FeatureSidecar from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "iotids.features") throw DataError("not a feature sidecar");
    if (j.value("version", 0) != kVersion) throw DataError("unsupported feature sidecar version");
    FeatureSidecar s;
    j.at("schema").get_to(s.schema);
    j.at("stats").at("baseline").get_to(s.baseline);
    j.at("stats").at("kb").get_to(s.kb);
    return s;
  }
};

}  // namespace iotids

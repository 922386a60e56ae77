#pragma once

// Multi-class classification metrics and report serialization.
//
// Conventions:
//  - zero denominators give 0 for precision, recall and F1;
//  - "unmatched" predictions (and any prediction outside the class list) are
//    false negatives for their gold class, never TP/FP for any class, and are
//    kept out of the confusion matrix in a per-gold-class sidecar count;
//  - CSV columns are class,precision,recall,f1,support; values have 6 decimals.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/common.hpp"

namespace iotids {

struct ClassMetrics {
  std::string cls;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct AverageMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ClassificationReport {
  static constexpr int kSchemaVersion = 1;

  std::vector<std::string> classes;
  std::vector<ClassMetrics> per_class;
  AverageMetrics macro_avg;
  AverageMetrics weighted_avg;
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
  std::vector<std::size_t> unmatched;                // per gold class
  std::size_t total = 0;
  double runtime_seconds = 0.0;

  std::size_t unmatched_total() const {
    std::size_t s = 0;
    for (auto u : unmatched) s += u;
    return s;
  }

  // Structural consistency; emitters refuse reports that fail it.
  void validate() const {
    const auto k = classes.size();
    if (k == 0) throw DataError("report has no classes");
    if (per_class.size() != k) throw DataError("report covers " + std::to_string(per_class.size()) + " of " +
                                               std::to_string(k) + " classes");
    if (confusion.size() != k || unmatched.size() != k) throw DataError("report confusion matrix shape mismatch");
    std::size_t sum = 0, trace = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (per_class[i].cls != classes[i]) throw DataError("report class order mismatch at " + classes[i]);
      if (confusion[i].size() != k) throw DataError("report confusion matrix shape mismatch");
      std::size_t row = unmatched[i];
      for (auto c : confusion[i]) row += c;
      if (row != per_class[i].support) throw DataError("report support mismatch for " + classes[i]);
      sum += row;
      trace += confusion[i][i];
    }
    if (sum != total) throw DataError("report total does not match supports");
    if (total == 0) throw DataError("report is empty");
    if (std::abs(accuracy - static_cast<double>(trace) / static_cast<double>(total)) > 1e-12)
      throw DataError("report accuracy does not match the confusion matrix");
  }
};

namespace detail {
inline double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
inline double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }
}  // namespace detail

inline ClassificationReport classification_report(const std::vector<std::string>& preds,
                                                  const std::vector<std::string>& golds,
                                                  std::vector<std::string> classes) {
  if (preds.size() != golds.size())
    throw DataError("classification_report: " + std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(golds.size()) + " gold labels");
  if (golds.empty()) throw DataError("classification_report: no items");
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index.emplace(classes[i], i);

  const std::size_t k = classes.size();
  ClassificationReport rep;
  rep.classes = classes;
  rep.confusion.assign(k, std::vector<std::size_t>(k, 0));
  rep.unmatched.assign(k, 0);
  rep.total = golds.size();
  for (std::size_t i = 0; i < golds.size(); ++i) {
    auto g = index.find(golds[i]);
    if (g == index.end()) throw DataError("classification_report: unknown gold label '" + golds[i] + "'");
    auto p = index.find(preds[i]);
    if (p == index.end())
      ++rep.unmatched[g->second];
    else
      ++rep.confusion[g->second][p->second];
  }

  std::size_t trace = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = rep.confusion[c][c], col = 0, row = rep.unmatched[c];
    for (std::size_t o = 0; o < k; ++o) {
      col += rep.confusion[o][c];
      row += rep.confusion[c][o];
    }
    trace += tp;
    ClassMetrics m;
    m.cls = classes[c];
    m.support = row;
    m.precision = detail::ratio(static_cast<double>(tp), static_cast<double>(col));
    m.recall = detail::ratio(static_cast<double>(tp), static_cast<double>(row));
    m.f1 = detail::harmonic(m.precision, m.recall);
    rep.per_class.push_back(m);
  }
  const double n = static_cast<double>(rep.total);
  for (const auto& m : rep.per_class) {
    rep.macro_avg.precision += m.precision;
    rep.macro_avg.recall += m.recall;
    rep.macro_avg.f1 += m.f1;
    const double w = static_cast<double>(m.support);
    rep.weighted_avg.precision += w * m.precision;
    rep.weighted_avg.recall += w * m.recall;
    rep.weighted_avg.f1 += w * m.f1;
  }
  rep.macro_avg.precision /= static_cast<double>(k);
  rep.macro_avg.recall /= static_cast<double>(k);
  rep.macro_avg.f1 /= static_cast<double>(k);
  rep.weighted_avg.precision /= n;
  rep.weighted_avg.recall /= n;
  rep.weighted_avg.f1 /= n;
  rep.accuracy = static_cast<double>(trace) / n;
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization

enum class ReportFormat { json, csv, markdown, plotdata };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  if (s == "plotdata") return ReportFormat::plotdata;
  throw ConfigError("unknown report format '" + std::string(s) + "'");
}

namespace detail {
inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}
}  // namespace detail

inline nlohmann::json report_to_json(const ClassificationReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : r.per_class)
    per.push_back({{"class", m.cls}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                   {"support", m.support}});
  auto avg = [](const AverageMetrics& a) {
    return nlohmann::json{{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}};
  };
  return {{"format", "iotids.report"},
          {"schema_version", ClassificationReport::kSchemaVersion},
          {"classes", r.classes},
          {"per_class", per},
          {"macro_avg", avg(r.macro_avg)},
          {"weighted_avg", avg(r.weighted_avg)},
          {"accuracy", r.accuracy},
          {"confusion", r.confusion},
          {"unmatched", r.unmatched},
          {"total", r.total},
          {"runtime_seconds", r.runtime_seconds}};
}

inline ClassificationReport report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "iotids.report" || j.value("schema_version", 0) != ClassificationReport::kSchemaVersion)
    throw DataError("not a version-1 report");
  ClassificationReport r;
  j.at("classes").get_to(r.classes);
  for (const auto& m : j.at("per_class"))
    r.per_class.push_back({m.at("class").get<std::string>(), m.at("precision").get<double>(),
                           m.at("recall").get<double>(), m.at("f1").get<double>(), m.at("support").get<std::size_t>()});
  auto avg = [](const nlohmann::json& a) {
    return AverageMetrics{a.at("precision").get<double>(), a.at("recall").get<double>(), a.at("f1").get<double>()};
  };
  r.macro_avg = avg(j.at("macro_avg"));
  r.weighted_avg = avg(j.at("weighted_avg"));
  j.at("accuracy").get_to(r.accuracy);
  j.at("confusion").get_to(r.confusion);
  j.at("unmatched").get_to(r.unmatched);
  j.at("total").get_to(r.total);
  j.at("runtime_seconds").get_to(r.runtime_seconds);
  r.validate();
  return r;
}

inline std::string render_report(const ClassificationReport& r, ReportFormat fmt) {
  r.validate();
  std::ostringstream out;
  switch (fmt) {
    case ReportFormat::json:
      out << report_to_json(r).dump(2) << '\n';
      break;
    case ReportFormat::csv: {
      auto f6 = [](double v) { return detail::fixed(v, 6); };
      out << "class,precision,recall,f1,support\n";
      for (const auto& m : r.per_class)
        out << m.cls << ',' << f6(m.precision) << ',' << f6(m.recall) << ',' << f6(m.f1) << ',' << m.support << '\n';
      out << "macro avg," << f6(r.macro_avg.precision) << ',' << f6(r.macro_avg.recall) << ','
          << f6(r.macro_avg.f1) << ',' << r.total << '\n';
      out << "weighted avg," << f6(r.weighted_avg.precision) << ',' << f6(r.weighted_avg.recall) << ','
          << f6(r.weighted_avg.f1) << ',' << r.total << '\n';
      out << "accuracy,,," << f6(r.accuracy) << ',' << r.total << '\n';
      break;
    }
    case ReportFormat::markdown: {
      auto f = [](double v) { return detail::fixed(v, 4); };
      out << "| Class | Precision | Recall | F1 | Support |\n";
      out << "|---|---:|---:|---:|---:|\n";
      for (const auto& m : r.per_class)
        out << "| " << m.cls << " | " << f(m.precision) << " | " << f(m.recall) << " | " << f(m.f1) << " | "
            << m.support << " |\n";
      out << "| **Macro Avg** | " << f(r.macro_avg.precision) << " | " << f(r.macro_avg.recall) << " | "
          << f(r.macro_avg.f1) << " | " << r.total << " |\n";
      out << "| **Weighted Avg** | " << f(r.weighted_avg.precision) << " | " << f(r.weighted_avg.recall) << " | "
          << f(r.weighted_avg.f1) << " | " << r.total << " |\n";
      out << "| **Accuracy** | | | " << f(r.accuracy) << " | " << r.total << " |\n";
      if (r.unmatched_total()) out << "\nUnmatched predictions: " << r.unmatched_total() << "\n";
      break;
    }
    case ReportFormat::plotdata:
      out << "class,metric,value\n";
      for (const auto& m : r.per_class) {
        out << m.cls << ",precision," << detail::fixed(m.precision, 6) << '\n';
        out << m.cls << ",recall," << detail::fixed(m.recall, 6) << '\n';
        out << m.cls << ",f1," << detail::fixed(m.f1, 6) << '\n';
      }
      break;
  }
  return out.str();
}

inline void emit_report(const ClassificationReport& r, ReportFormat fmt, const std::string& path) {
  const auto text = render_report(r, fmt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write report to " + path);
  out << text;
  if (!out) throw DataError("failed writing report to " + path);
}

// Parsed form of the CSV variant.
struct ReportCsv {
  std::vector<ClassMetrics> per_class;
  AverageMetrics macro_avg;
  AverageMetrics weighted_avg;
  double accuracy = 0.0;
  std::size_t total = 0;
};

inline ReportCsv parse_report_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "class,precision,recall,f1,support") throw DataError("report csv: bad header");
  ReportCsv out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw DataError("report csv: bad row '" + line + "'");
    auto num = [](const std::string& s) { return s.empty() ? 0.0 : std::stod(s); };
    if (cells[0] == "accuracy") {
      out.accuracy = num(cells[3]);
      out.total = std::stoul(cells[4]);
    } else if (cells[0] == "macro avg") {
      out.macro_avg = {num(cells[1]), num(cells[2]), num(cells[3])};
    } else if (cells[0] == "weighted avg") {
      out.weighted_avg = {num(cells[1]), num(cells[2]), num(cells[3])};
    } else {
      out.per_class.push_back({cells[0], num(cells[1]), num(cells[2]), num(cells[3]), std::stoul(cells[4])});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Wall-clock timing

struct RuntimeRecord {
  std::string label;
  double seconds = 0.0;
};

// Writes elapsed seconds into `sink` when it goes out of scope.
class ScopedTimer {
 public:
  explicit ScopedTimer(double& sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;
  ~ScopedTimer() { sink_ = elapsed(); }
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  double& sink_;
  std::chrono::steady_clock::time_point start_;
};

template <typename Fn>
RuntimeRecord time_block(std::string label, Fn&& fn) {
  RuntimeRecord rec{std::move(label), 0.0};
  {
    ScopedTimer t(rec.seconds);
    std::forward<Fn>(fn)();
  }
  return rec;
}

}  // namespace iotids

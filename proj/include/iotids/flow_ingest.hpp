#pragma once

// Flow CSV ingestion, label standardization and seeded class-balanced splits.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/common.hpp"
#include "iotids/labels.hpp"
#include "iotids/schema.hpp"

namespace iotids {

// Dataset rows carry no native ids; (file, data-row index) is the identity.
struct RecordId {
  std::string source;
  std::size_t row = 0;

  auto operator<=>(const RecordId&) const = default;
  std::string str() const { return source + ":" + std::to_string(row); }
};

struct FlowRecord {
  RecordId id;
  std::vector<double> features;  // ingest-schema order
  std::string label;             // canonical
  bool known_label = true;

  bool operator==(const FlowRecord&) const = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

// Splits one CSV line. Double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.emplace_back(trim(field));
  return out;
}

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Shortest representation that parses back to the same double.
inline std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::size_t find_column(const std::vector<std::string>& header, std::string_view name) {
  for (auto alias : column_aliases(name)) {
    auto it = std::find(header.begin(), header.end(), alias);
    if (it != header.end()) return static_cast<std::size_t>(it - header.begin());
  }
  return header.size();
}

}  // namespace detail

// Header columns of a CSV stream (consumes the first line).
inline std::vector<std::string> read_csv_header(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    if (!detail::trim(line).empty()) return detail::split_csv_line(line);
  }
  throw DataError("empty file");
}

inline std::vector<FlowRecord> parse_flow_csv(std::istream& in, const FeatureSchema& schema, const std::string& source,
                                              const LabelMap& labels = LabelMap::cic_iot_2023()) {
  const auto header = read_csv_header(in);
  std::vector<std::size_t> columns;
  for (const auto& name : schema.names) {
    auto col = detail::find_column(header, name);
    if (col == header.size()) throw DataError(source + ": missing required column '" + name + "'");
    columns.push_back(col);
  }
  const auto label_col = detail::find_column(header, "Label");
  if (label_col == header.size()) throw DataError(source + ": missing required column 'Label'");

  std::vector<FlowRecord> records;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError(source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    FlowRecord rec;
    rec.id = {source, row};
    rec.features.reserve(columns.size());
    for (std::size_t f = 0; f < columns.size(); ++f) {
      double v = 0.0;
      if (!detail::parse_double(cells[columns[f]], v))
        throw DataError(source + ": row " + std::to_string(row) + ": non-numeric feature '" + schema.names[f] +
                        "' = '" + cells[columns[f]] + "'");
      if (!std::isfinite(v))
        throw DataError(source + ": row " + std::to_string(row) + ": non-finite feature '" + schema.names[f] + "'");
      rec.features.push_back(v);
    }
    rec.label = labels.standardize(cells[label_col]);
    rec.known_label = labels.is_known(rec.label);
    records.push_back(std::move(rec));
    ++row;
  }
  return records;
}

// Writes records in schema column order; values round-trip exactly.
inline void write_flow_csv(std::ostream& out, const std::vector<FlowRecord>& records, const FeatureSchema& schema) {
  for (std::size_t i = 0; i < schema.names.size(); ++i) out << detail::csv_escape(schema.names[i]) << ',';
  out << "Label\n";
  for (const auto& r : records) {
    for (double v : r.features) out << detail::shortest(v) << ',';
    out << detail::csv_escape(r.label) << '\n';
  }
}

struct SplitSpec {
  std::size_t per_class_dev = 500;
  double dev_train_fraction = 0.80;
  std::size_t per_class_test = 100;
  std::size_t rag_per_class = 1000;
  double rag_kb_fraction = 0.70;
  std::uint64_t seed = 42;

  std::size_t train_count() const { return static_cast<std::size_t>(std::llround(per_class_dev * dev_train_fraction)); }
  std::size_t kb_count() const { return static_cast<std::size_t>(std::llround(rag_per_class * rag_kb_fraction)); }

  void validate() const {
    if (!(dev_train_fraction > 0.0 && dev_train_fraction < 1.0))
      throw ConfigError("split.dev_train_fraction must lie in (0,1)");
    if (!(rag_kb_fraction > 0.0 && rag_kb_fraction < 1.0)) throw ConfigError("split.rag_kb_fraction must lie in (0,1)");
    if (per_class_dev == 0) throw ConfigError("split.per_class_dev must be positive");
    if (per_class_test == 0) throw ConfigError("split.per_class_test must be positive");
    if (rag_per_class == 0) throw ConfigError("split.rag_per_class must be positive");
  }
};

inline void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = nlohmann::json{{"per_class_dev", s.per_class_dev},   {"dev_train_fraction", s.dev_train_fraction},
                     {"per_class_test", s.per_class_test}, {"rag_per_class", s.rag_per_class},
                     {"rag_kb_fraction", s.rag_kb_fraction}, {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SplitSpec& s) {
  s = SplitSpec{};
  if (j.contains("per_class_dev")) j.at("per_class_dev").get_to(s.per_class_dev);
  if (j.contains("dev_train_fraction")) j.at("dev_train_fraction").get_to(s.dev_train_fraction);
  if (j.contains("per_class_test")) j.at("per_class_test").get_to(s.per_class_test);
  if (j.contains("rag_per_class")) j.at("rag_per_class").get_to(s.rag_per_class);
  if (j.contains("rag_kb_fraction")) j.at("rag_kb_fraction").get_to(s.rag_kb_fraction);
  if (j.contains("seed")) j.at("seed").get_to(s.seed);
}

struct SplitSet {
  std::vector<FlowRecord> train, val, test;  // seen classes
  std::vector<FlowRecord> rag_kb, rag_test;  // unseen classes

  static constexpr std::array<std::string_view, 5> kNames{"train", "val", "test", "rag_kb", "rag_test"};

  const std::vector<FlowRecord>& get(std::string_view name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    if (name == "rag_kb") return rag_kb;
    if (name == "rag_test") return rag_test;
    throw std::invalid_argument("unknown split: " + std::string(name));
  }
  std::vector<FlowRecord>& get(std::string_view name) {
    return const_cast<std::vector<FlowRecord>&>(std::as_const(*this).get(name));
  }
};

// Unbiased draw in [0, bound) by rejection.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    std::uint64_t r = rng();
    if (r >= threshold) return r % bound;
  }
}

inline std::uint64_t class_seed(std::uint64_t seed, std::string_view label) { return seed ^ fnv1a64(label); }

// Fisher-Yates, high index to low.
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

// Classes absent from `records` are skipped; classes present with too few rows are an error.
inline SplitSet make_splits(const std::vector<FlowRecord>& records, const SplitSpec& spec,
                            const LabelMap& labels = LabelMap::cic_iot_2023()) {
  spec.validate();
  std::map<std::string, std::vector<const FlowRecord*>> by_class;
  for (const auto& r : records)
    if (r.known_label) by_class[r.label].push_back(&r);

  SplitSet out;
  for (auto& [label, members] : by_class) {
    std::sort(members.begin(), members.end(), [](const FlowRecord* a, const FlowRecord* b) { return a->id < b->id; });
    const bool seen = labels.is_seen(label);
    const std::size_t needed = seen ? spec.per_class_dev + spec.per_class_test : spec.rag_per_class;
    if (members.size() < needed)
      throw DataError("insufficient records for class '" + label + "': have " + std::to_string(members.size()) +
                      ", need " + std::to_string(needed));
    seeded_shuffle(members, class_seed(spec.seed, label));
    auto take = [&](std::vector<FlowRecord>& dst, std::size_t from, std::size_t to) {
      for (std::size_t i = from; i < to; ++i) dst.push_back(*members[i]);
    };
    if (seen) {
      const auto n_train = spec.train_count();
      take(out.train, 0, n_train);
      take(out.val, n_train, spec.per_class_dev);
      take(out.test, spec.per_class_dev, spec.per_class_dev + spec.per_class_test);
    } else {
      const auto n_kb = spec.kb_count();
      take(out.rag_kb, 0, n_kb);
      take(out.rag_test, n_kb, spec.rag_per_class);
    }
  }
  return out;
}

inline std::map<std::string, std::size_t> class_counts(const std::vector<FlowRecord>& records) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records) ++counts[r.label];
  return counts;
}

// Replayable manifest: per-split (file, row, label) identities plus the seed and spec.
inline nlohmann::json split_manifest(const SplitSet& splits, const SplitSpec& spec) {
  nlohmann::json j;
  j["format"] = "iotids.splits";
  j["version"] = 1;
  j["seed"] = spec.seed;
  j["spec"] = spec;
  for (auto name : SplitSet::kNames) {
    const auto key = std::string(name);
    auto& rows = j["splits"][key];
    rows = nlohmann::json::array();
    for (const auto& r : splits.get(name))
      rows.push_back({{"file", r.id.source}, {"row", r.id.row}, {"label", r.label}});
    j["counts"][key] = class_counts(splits.get(name));
  }
  return j;
}

// Rebuilds a SplitSet from a manifest and the parsed records it refers to.
inline SplitSet resolve_manifest(const nlohmann::json& manifest, const std::vector<FlowRecord>& records) {
  std::map<RecordId, const FlowRecord*> index;
  for (const auto& r : records) index.emplace(r.id, &r);
  SplitSet out;
  for (auto name : SplitSet::kNames) {
    for (const auto& row : manifest.at("splits").at(std::string(name))) {
      RecordId id{row.at("file").get<std::string>(), row.at("row").get<std::size_t>()};
      auto it = index.find(id);
      if (it == index.end()) throw DataError("split manifest refers to missing record " + id.str());
      out.get(name).push_back(*it->second);
    }
  }
  return out;
}

}  // namespace iotids

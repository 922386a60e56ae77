#pragma once

#include <algorithm>
#include <cstddef>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/common.hpp"

namespace iotids {

struct FeatureSchema {
  std::vector<std::string> names;          // raw CSV column names, ingest order
  std::vector<std::string> display_names;  // prompt-facing names
  std::vector<bool> selected;

  std::size_t size() const { return names.size(); }

  std::size_t selected_count() const {
    return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true));
  }

  std::vector<std::size_t> selected_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < selected.size(); ++i)
      if (selected[i]) out.push_back(i);
    return out;
  }

  std::vector<std::string> selected_names() const {
    std::vector<std::string> out;
    for (auto i : selected_indices()) out.push_back(names[i]);
    return out;
  }

  // Selected values in schema order.
  std::vector<double> project(std::span<const double> features) const {
    if (features.size() != names.size())
      throw DataError("feature vector has " + std::to_string(features.size()) + " values, schema has " +
                      std::to_string(names.size()));
    std::vector<double> out;
    out.reserve(names.size());
    for (std::size_t i = 0; i < names.size(); ++i)
      if (selected[i]) out.push_back(features[i]);
    return out;
  }

  void validate() const {
    if (names.size() != display_names.size() || names.size() != selected.size())
      throw ConfigError("feature schema: names, display_names and selected differ in length");
    if (std::set<std::string>(names.begin(), names.end()).size() != names.size())
      throw ConfigError("feature schema: duplicate feature name");
    if (std::set<std::string>(display_names.begin(), display_names.end()).size() != display_names.size())
      throw ConfigError("feature schema: duplicate display name");
  }

  // The 23 features retained after correlation pruning of the 44 CICIoT2023 columns.
  static FeatureSchema canonical() {
    static const std::pair<const char*, const char*> table[] = {
        {"Header_Length", "Header Length"},
        {"Protocol Type", "Protocol Type"},
        {"Time_To_Live", "IP Time to Live"},
        {"psh_flag_number", "PSH Flag Number"},
        {"ack_flag_number", "ACK Flag Number"},
        {"ack_count", "Acknowledged Packets"},
        {"syn_count", "Packets with SYN Flag"},
        {"fin_count", "Packets with FIN Flag"},
        {"rst_count", "Packets with RST Flag"},
        {"HTTP", "HTTP"},
        {"HTTPS", "HTTPS"},
        {"DNS", "DNS"},
        {"TCP", "TCP"},
        {"UDP", "UDP"},
        {"ICMP", "ICMP"},
        {"Tot sum", "Total Packet Length"},
        {"Min", "Min Packet Size"},
        {"Max", "Max Packet Size"},
        {"AVG", "Average Packet Size"},
        {"Std", "Packet Size Std Dev"},
        {"IAT", "Time Between Packets"},
        {"Number", "Total Packets"},
        {"Rate", "Flow Packet Transmission Rate"},
    };
    FeatureSchema s;
    for (const auto& [raw, display] : table) {
      s.names.emplace_back(raw);
      s.display_names.emplace_back(display);
      s.selected.push_back(true);
    }
    return s;
  }

  // Schema over arbitrary raw columns; canonical display names where known,
  // otherwise underscores become spaces.
  static FeatureSchema from_columns(const std::vector<std::string>& columns) {
    const auto canon = canonical();
    FeatureSchema s;
    for (const auto& c : columns) {
      s.names.push_back(c);
      auto it = std::find(canon.names.begin(), canon.names.end(), c);
      if (it != canon.names.end()) {
        s.display_names.push_back(canon.display_names[static_cast<std::size_t>(it - canon.names.begin())]);
      } else {
        std::string d = c;
        std::replace(d.begin(), d.end(), '_', ' ');
        s.display_names.push_back(d);
      }
      s.selected.push_back(true);
    }
    s.validate();
    return s;
  }
};

// Alternate header spellings seen in CICIoT2023 releases.
inline std::vector<std::string_view> column_aliases(std::string_view name) {
  if (name == "Time_To_Live") return {"Time_To_Live", "Duration"};
  if (name == "Label") return {"Label", "label"};
  return {name};
}

inline void to_json(nlohmann::json& j, const FeatureSchema& s) {
  j = nlohmann::json{{"names", s.names}, {"display_names", s.display_names}, {"selected", s.selected}};
}

inline void from_json(const nlohmann::json& j, FeatureSchema& s) {
  j.at("names").get_to(s.names);
  j.at("display_names").get_to(s.display_names);
  j.at("selected").get_to(s.selected);
  s.validate();
}

}  // namespace iotids

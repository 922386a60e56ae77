#pragma once

// Synthetic flow data shared by the unit suites and the acceptance runner.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/flow_ingest.hpp"
#include "iotids/schema.hpp"

namespace fixtures {

struct ClassSpec {
  std::string raw_label;  // as written in the CSV
  std::size_t rows;
};

// Gaussian clusters around a random per-class center in [0, 100]^d.
inline std::string cluster_csv(const std::vector<ClassSpec>& classes, double sigma, std::uint64_t seed) {
  const auto schema = iotids::FeatureSchema::canonical();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> center(0.0, 100.0);
  std::normal_distribution<double> noise(0.0, sigma);
  std::ostringstream out;
  for (const auto& n : schema.names) out << iotids::detail::csv_escape(n) << ",";
  out << "Label\n";
  for (const auto& c : classes) {
    std::vector<double> mu(schema.size());
    for (auto& m : mu) m = center(rng);
    for (std::size_t r = 0; r < c.rows; ++r) {
      for (std::size_t f = 0; f < schema.size(); ++f) out << iotids::detail::shortest(mu[f] + noise(rng)) << ",";
      out << c.raw_label << "\n";
    }
  }
  return out.str();
}

// Three seen and three unseen classes, well separated.
inline std::vector<ClassSpec> six_class_fixture(std::size_t seen_rows, std::size_t unseen_rows) {
  return {{"BenignTraffic", seen_rows},        {"DDoS-UDP_Flood", seen_rows},  {"MITM-ArpSpoofing", seen_rows},
          {"Recon-PingSweep", unseen_rows},    {"SqlInjection", unseen_rows},  {"DDoS-SlowLoris", unseen_rows}};
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("iotids_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small-protocol pipeline config over `csv` writing into `out`.
inline nlohmann::json small_config(const std::string& csv, const std::string& out) {
  return {{"dataset", {csv}},
          {"output_dir", out},
          {"seed", 7},
          {"split",
           {{"per_class_dev", 20}, {"dev_train_fraction", 0.8}, {"per_class_test", 5},
            {"rag_per_class", 30}, {"rag_kb_fraction", 0.7}}},
          {"model", {{"mock", "first-exemplar"}}},
          {"baselines", {{"lr", {{"epochs", 50}}}, {"rf", {{"n_trees", 5}}}}},
          {"record_timings", false}};
}

}  // namespace fixtures

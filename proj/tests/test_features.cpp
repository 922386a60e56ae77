#include <cmath>
#include <cstdio>
#include <random>

#include <gtest/gtest.h>

#include "iotids/features.hpp"

using namespace iotids;

namespace {

std::vector<std::vector<double>> columns_to_rows(const std::vector<std::vector<double>>& cols) {
  std::vector<std::vector<double>> rows(cols.front().size(), std::vector<double>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < cols[j].size(); ++i) rows[i][j] = cols[j][i];
  return rows;
}

std::vector<double> centered_unit(std::vector<double> v) {
  double m = 0;
  for (double x : v) m += x;
  m /= double(v.size());
  double ss = 0;
  for (auto& x : v) {
    x -= m;
    ss += x * x;
  }
  for (auto& x : v) x /= std::sqrt(ss);
  return v;
}

// Column with sample correlation exactly r against `base` (centered unit vectors).
std::vector<double> partner(const std::vector<double>& base, double r, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  std::vector<double> z(base.size());
  for (auto& x : z) x = n(rng);
  z = centered_unit(z);
  double proj = 0;
  for (std::size_t i = 0; i < z.size(); ++i) proj += z[i] * base[i];
  for (std::size_t i = 0; i < z.size(); ++i) z[i] -= proj * base[i];
  z = centered_unit(z);
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = r * base[i] + std::sqrt(1 - r * r) * z[i];
  return out;
}

std::vector<double> gaussian(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return centered_unit(v);
}

}  // namespace

TEST(Pearson, SelfAndAntiCorrelation) {
  const auto m = pearson_matrix(columns_to_rows({{1, 2, 3, 5}, {-1, -2, -3, -5}}));
  EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
  EXPECT_NEAR(m(0, 1), -1.0, 1e-15);
}

TEST(Pearson, MatchesTextbookFormula) {
  const std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 9};
  // cov / (sx * sy) with population moments.
  const double mx = 2.5, my = 5.25;
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double oracle = (sxy / 4) / (std::sqrt(sxx / 4) * std::sqrt(syy / 4));
  const auto m = pearson_matrix(columns_to_rows({x, y}));
  EXPECT_NEAR(m(0, 1), oracle, 1e-12);
  EXPECT_NEAR(m(1, 0), oracle, 1e-12);
}

TEST(Pearson, ConstantFeatureConvention) {
  const auto m = pearson_matrix(columns_to_rows({{0.1, 0.1, 0.1}, {1, 2, 4}}));
  EXPECT_EQ(m(0, 0), 1.0);
  EXPECT_EQ(m(0, 1), 0.0);
  EXPECT_EQ(m(1, 0), 0.0);
}

TEST(Pearson, Errors) {
  EXPECT_THROW(pearson_matrix(std::vector<std::vector<double>>{{1, 2}}), DataError);
  EXPECT_THROW(pearson_matrix(columns_to_rows({{1, 1}, {2, 2}})), DataError);
}

TEST(Pearson, BoundedAndSymmetricOnRandomData) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::vector<double>> rows(50, std::vector<double>(8));
    for (auto& r : rows)
      for (auto& v : r) v = u(rng);
    for (auto& r : rows) r[7] = 3 * r[0] + 1;
    const auto m = pearson_matrix(rows);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_LE(std::abs(m(i, j)), 1.0);
        EXPECT_NEAR(m(i, j), m(j, i), 1e-12);
      }
  }
}

TEST(Prune, DuplicateColumnDropsLater) {
  std::mt19937_64 rng(1);
  std::vector<std::vector<double>> cols;
  for (int i = 0; i < 6; ++i) cols.push_back(gaussian(100, rng));
  cols[5] = cols[0];
  const std::vector<std::string> names{"A", "c1", "c2", "c3", "c4", "B"};
  const auto kept = prune_correlated(pearson_matrix(columns_to_rows(cols)), names);
  EXPECT_EQ(kept, (std::vector<std::string>{"A", "c1", "c2", "c3", "c4"}));
}

TEST(Prune, PlantedPairsExhaustiveCheck) {
  std::mt19937_64 rng(2);
  const auto f0 = gaussian(500, rng);
  const auto f1 = gaussian(500, rng);
  const auto f2 = gaussian(500, rng);
  const auto f3 = partner(f0, 0.99, rng);
  const auto f4 = partner(f1, 0.95, rng);
  const std::vector<std::string> names{"f0", "f1", "f2", "f3", "f4"};
  const auto corr = pearson_matrix(columns_to_rows({f0, f1, f2, f3, f4}));
  ASSERT_NEAR(corr(0, 3), 0.99, 1e-9);
  ASSERT_NEAR(corr(1, 4), 0.95, 1e-9);

  const auto kept = prune_correlated(corr, names, 0.98);
  EXPECT_EQ(kept, (std::vector<std::string>{"f0", "f1", "f2", "f4"}));
  for (std::size_t a = 0; a < kept.size(); ++a)
    for (std::size_t b = a + 1; b < kept.size(); ++b) {
      const auto i = std::find(names.begin(), names.end(), kept[a]) - names.begin();
      const auto j = std::find(names.begin(), names.end(), kept[b]) - names.begin();
      EXPECT_LE(std::abs(corr(i, j)), 0.98);
    }
}

TEST(Prune, VacuousThresholdAndValidation) {
  std::mt19937_64 rng(3);
  std::vector<std::vector<double>> cols;
  for (int i = 0; i < 4; ++i) cols.push_back(gaussian(60, rng));
  const std::vector<std::string> names{"a", "b", "c", "d"};
  const auto corr = pearson_matrix(columns_to_rows(cols));
  EXPECT_EQ(prune_correlated(corr, names, 1.0), names);
  EXPECT_THROW(prune_correlated(corr, names, 0.0), ConfigError);
  EXPECT_THROW(prune_correlated(corr, names, 1.5), ConfigError);
}

TEST(Prune, Idempotent) {
  std::mt19937_64 rng(4);
  std::vector<std::vector<double>> cols{gaussian(200, rng), gaussian(200, rng)};
  cols.push_back(partner(cols[0], 0.995, rng));
  cols.push_back(partner(cols[1], -0.99, rng));
  cols.push_back(gaussian(200, rng));
  const std::vector<std::string> names{"a", "b", "c", "d", "e"};
  const auto kept = prune_correlated(pearson_matrix(columns_to_rows(cols)), names);
  EXPECT_EQ(kept, (std::vector<std::string>{"a", "b", "e"}));
  std::vector<std::vector<double>> sub;
  for (const auto& k : kept) sub.push_back(cols[std::find(names.begin(), names.end(), k) - names.begin()]);
  EXPECT_EQ(prune_correlated(pearson_matrix(columns_to_rows(sub)), kept), kept);
}

TEST(Standardizer, FormulaOracle) {
  const auto stats = fit_standardizer({{1}, {2}, {3}});
  const double sigma = std::sqrt(((1 - 2.0) * (1 - 2.0) + 0 + (3 - 2.0) * (3 - 2.0)) / 3);
  EXPECT_DOUBLE_EQ(stats.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(stats.stddev[0], sigma);
  EXPECT_EQ(format_value(apply_standardizer(stats, std::vector<double>{1})[0]), "-1.224745");
  EXPECT_EQ(format_value(apply_standardizer(stats, std::vector<double>{2})[0]), "0.0");
  EXPECT_EQ(format_value(apply_standardizer(stats, std::vector<double>{3})[0]), "1.224745");
}

TEST(Standardizer, ConstantColumnMapsToZero) {
  const auto stats = fit_standardizer({{5, 0.1}, {5, 0.1}, {5, 0.1}});
  EXPECT_EQ(stats.stddev, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(apply_standardizer(stats, std::vector<double>{5, 0.1}), (std::vector<double>{0.0, 0.0}));
}

TEST(Standardizer, TrainingSetMomentsAndErrors) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-50, 5000);
  std::vector<std::vector<double>> rows(300, std::vector<double>(6));
  for (auto& r : rows)
    for (auto& v : r) v = u(rng);
  for (auto& r : rows) r[5] = 7.0;
  const auto stats = fit_standardizer(rows);
  const auto z = standardize_all(rows, stats);
  for (std::size_t j = 0; j < 6; ++j) {
    double m = 0, s = 0;
    for (const auto& r : z) m += r[j];
    m /= double(z.size());
    for (const auto& r : z) s += (r[j] - m) * (r[j] - m);
    s = std::sqrt(s / double(z.size()));
    EXPECT_LT(std::abs(m), 1e-9);
    if (j < 5) {
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
  EXPECT_THROW(apply_standardizer(stats, std::vector<double>{1, 2}), DataError);
  EXPECT_THROW(fit_standardizer({}), DataError);
}

TEST(FormatValue, Examples) {
  EXPECT_EQ(format_value(20.0), "20.0");
  EXPECT_EQ(format_value(41913.7), "41913.7");
  EXPECT_EQ(format_value(0.1234567), "0.123457");
  EXPECT_EQ(format_value(64.0), "64.0");
  EXPECT_EQ(format_value(1.0), "1.0");
  EXPECT_EQ(format_value(0.0), "0.0");
  EXPECT_EQ(format_value(-0.0000001), "0.0");
  EXPECT_EQ(format_value(-2.5), "-2.5");
  EXPECT_EQ(format_value(1e20), "100000000000000000000.0");
  // Exact binary ties round to even.
  EXPECT_EQ(format_value(0.0078125), "0.007812");
  EXPECT_EQ(format_value(0.0234375), "0.023438");
  EXPECT_THROW(format_value(std::nan("")), DataError);
  EXPECT_THROW(format_value(INFINITY), DataError);
}

TEST(FormatValue, ParseBackEqualsSixDecimalRounding) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  std::uniform_int_distribution<int> e(-8, 6);
  for (int i = 0; i < 20000; ++i) {
    const double x = u(rng) * std::pow(10.0, e(rng) - 6);
    char oracle[512];
    std::snprintf(oracle, sizeof oracle, "%.6f", x);
    const auto s = format_value(x);
    EXPECT_EQ(std::strtod(s.c_str(), nullptr), std::strtod(oracle, nullptr)) << x;
    EXPECT_NE(s.find('.'), std::string::npos);
    EXPECT_LE(s.size() - s.find('.') - 1, 6u);
  }
}

TEST(Sidecar, JsonRoundTrip) {
  FeatureSidecar s;
  s.schema = FeatureSchema::canonical();
  s.schema.selected[3] = false;
  s.baseline = fit_standardizer({{1, 2}, {3, 5}});
  s.kb = fit_standardizer({{0, 1}, {1, 1}});
  const auto back = FeatureSidecar::from_json(nlohmann::json::parse(s.to_json().dump()));
  EXPECT_EQ(back.schema.selected, s.schema.selected);
  EXPECT_EQ(back.baseline.mean, s.baseline.mean);
  EXPECT_EQ(back.kb.stddev, s.kb.stddev);
  EXPECT_EQ(back.kb.id(), s.kb.id());
}

TEST(Schema, CanonicalShape) {
  const auto s = FeatureSchema::canonical();
  EXPECT_EQ(s.size(), 23u);
  EXPECT_EQ(s.selected_count(), 23u);
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.display_names[0], "Header Length");
  EXPECT_EQ(s.display_names[8], "Packets with RST Flag");
  EXPECT_EQ(s.display_names[20], "Time Between Packets");
  EXPECT_EQ(s.display_names[22], "Flow Packet Transmission Rate");
  FeatureSchema dup = s;
  dup.display_names[1] = dup.display_names[0];
  EXPECT_THROW(dup.validate(), ConfigError);
}

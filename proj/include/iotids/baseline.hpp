#pragma once

// Classical baselines on standardized vectors: multinomial logistic
// regression (full-batch gradient descent) and a Gini random forest.
// Class indices follow alphabetical label order, so "first maximum" in any
// argmax is the alphabetical tie-break.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/common.hpp"
#include "iotids/features.hpp"
#include "iotids/flow_ingest.hpp"

namespace iotids {

namespace detail {

inline std::vector<std::string> sorted_classes(const std::vector<std::string>& y) {
  std::vector<std::string> c(y);
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

inline std::vector<std::size_t> encode(const std::vector<std::string>& y, const std::vector<std::string>& classes) {
  std::vector<std::size_t> out;
  out.reserve(y.size());
  for (const auto& l : y)
    out.push_back(static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), l) - classes.begin()));
  return out;
}

template <typename Range>
std::size_t argmax(const Range& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

inline void check_training_input(const std::vector<std::vector<double>>& X, const std::vector<std::string>& y) {
  if (X.empty() || X.size() != y.size())
    throw DataError("training input: need |X| = |y| > 0 (got " + std::to_string(X.size()) + " and " +
                    std::to_string(y.size()) + ")");
  const auto d = X.front().size();
  for (const auto& r : X)
    if (r.size() != d) throw DataError("training input: ragged feature rows");
  if (sorted_classes(y).size() < 2) throw DataError("training input: need at least 2 classes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Logistic regression

struct LogRegHyper {
  double lr = 0.1;
  std::size_t epochs = 300;
  double l2 = 1e-4;
};

struct LogRegModel {
  std::vector<std::string> classes;
  Matrix weights;  // classes x features
  std::vector<double> bias;
  LogRegHyper hyper;

  std::size_t dim() const { return weights.cols; }

  std::vector<double> predict_proba(std::span<const double> x) const {
    if (x.size() != dim()) throw DataError("logreg: input has wrong dimension");
    std::vector<double> z(classes.size());
    for (std::size_t c = 0; c < classes.size(); ++c) {
      double s = bias[c];
      for (std::size_t j = 0; j < x.size(); ++j) s += weights(c, j) * x[j];
      z[c] = s;
    }
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (auto& v : z) total += (v = std::exp(v - zmax));
    for (auto& v : z) v /= total;
    return z;
  }
};

struct LogRegGradient {
  Matrix weights;
  std::vector<double> bias;
};

// Mean softmax cross-entropy plus (l2/2)*||W||^2. Bias is not penalized.
inline double logreg_loss(const LogRegModel& m, const std::vector<std::vector<double>>& X,
                          const std::vector<std::size_t>& y) {
  double loss = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) loss -= std::log(m.predict_proba(X[i])[y[i]]);
  loss /= static_cast<double>(X.size());
  double sq = 0.0;
  for (double w : m.weights.data) sq += w * w;
  return loss + 0.5 * m.hyper.l2 * sq;
}

inline LogRegGradient logreg_gradient(const LogRegModel& m, const std::vector<std::vector<double>>& X,
                                      const std::vector<std::size_t>& y) {
  const std::size_t k = m.classes.size();
  const std::size_t d = m.dim();
  LogRegGradient g{Matrix(k, d), std::vector<double>(k, 0.0)};
  for (std::size_t i = 0; i < X.size(); ++i) {
    auto p = m.predict_proba(X[i]);
    p[y[i]] -= 1.0;
    for (std::size_t c = 0; c < k; ++c) {
      g.bias[c] += p[c];
      for (std::size_t j = 0; j < d; ++j) g.weights(c, j) += p[c] * X[i][j];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(X.size());
  for (std::size_t c = 0; c < k; ++c) {
    g.bias[c] *= inv_n;
    for (std::size_t j = 0; j < d; ++j) g.weights(c, j) = g.weights(c, j) * inv_n + m.hyper.l2 * m.weights(c, j);
  }
  return g;
}

// Zero-initialized; `loss_trace`, when given, receives the loss before each epoch and after the last.
inline LogRegModel train_logreg(const std::vector<std::vector<double>>& X, const std::vector<std::string>& y,
                                const LogRegHyper& hyper = {}, std::vector<double>* loss_trace = nullptr) {
  detail::check_training_input(X, y);
  if (!(hyper.lr > 0.0) || hyper.l2 < 0.0) throw ConfigError("logreg: lr must be > 0 and l2 >= 0");
  LogRegModel m;
  m.classes = detail::sorted_classes(y);
  m.weights = Matrix(m.classes.size(), X.front().size());
  m.bias.assign(m.classes.size(), 0.0);
  m.hyper = hyper;
  const auto yi = detail::encode(y, m.classes);
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    if (loss_trace) loss_trace->push_back(logreg_loss(m, X, yi));
    const auto g = logreg_gradient(m, X, yi);
    for (std::size_t i = 0; i < m.weights.data.size(); ++i) m.weights.data[i] -= hyper.lr * g.weights.data[i];
    for (std::size_t c = 0; c < m.bias.size(); ++c) m.bias[c] -= hyper.lr * g.bias[c];
  }
  if (loss_trace) loss_trace->push_back(logreg_loss(m, X, yi));
  return m;
}

inline std::string predict_logreg(const LogRegModel& m, std::span<const double> x) {
  return m.classes[detail::argmax(m.predict_proba(x))];
}

// ---------------------------------------------------------------------------
// Random forest

struct ForestHyper {
  std::size_t n_trees = 100;
  std::optional<std::size_t> max_depth;  // unlimited when empty
  std::size_t features_per_split = 0;    // 0 = ceil(sqrt(d))
  bool bootstrap = true;
  std::size_t min_samples_split = 2;
  std::uint64_t seed = 42;
  unsigned threads = 1;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  std::vector<double> counts;  // leaves only: per-class sample counts

  bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const TreeNode& leaf_for(std::span<const double> x) const {
    const TreeNode* n = &nodes.front();
    while (!n->is_leaf()) n = &nodes[static_cast<std::size_t>(x[static_cast<std::size_t>(n->feature)] <= n->threshold ? n->left : n->right)];
    return *n;
  }

  std::size_t predict_index(std::span<const double> x) const { return detail::argmax(leaf_for(x).counts); }
};

struct ForestModel {
  std::vector<std::string> classes;
  std::vector<DecisionTree> trees;
  ForestHyper hyper;
  std::size_t dim = 0;
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<double>>& X, const std::vector<std::size_t>& y, std::size_t n_classes,
              const ForestHyper& hyper, std::size_t features_per_split, std::mt19937_64& rng)
      : X_(X), y_(y), k_(n_classes), hyper_(hyper), mtry_(features_per_split), rng_(rng) {
    features_.resize(X.front().size());
    std::iota(features_.begin(), features_.end(), std::size_t{0});
  }

  DecisionTree build(std::vector<std::size_t> samples) {
    DecisionTree tree;
    tree.nodes.emplace_back();
    grow(tree, 0, samples, 0);
    return tree;
  }

 private:
  struct Split {
    std::size_t feature = 0;
    double threshold = 0.0;
    double score = std::numeric_limits<double>::infinity();  // weighted child impurity * n
  };

  std::vector<double> count(const std::vector<std::size_t>& samples) const {
    std::vector<double> c(k_, 0.0);
    for (auto i : samples) c[y_[i]] += 1.0;
    return c;
  }

  static double impurity_times_n(const std::vector<double>& counts, double n) {
    if (n == 0.0) return 0.0;
    double sq = 0.0;
    for (double c : counts) sq += c * c;
    return n - sq / n;
  }

  std::optional<Split> best_split(const std::vector<std::size_t>& samples) {
    // Partial Fisher-Yates picks the candidate features for this node.
    for (std::size_t i = 0; i < mtry_; ++i) {
      const auto j = i + static_cast<std::size_t>(uniform_index(rng_, features_.size() - i));
      std::swap(features_[i], features_[j]);
    }
    std::vector<std::size_t> candidates(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(mtry_));
    std::sort(candidates.begin(), candidates.end());

    std::optional<Split> best;
    std::vector<std::size_t> order(samples);
    const auto total = count(samples);
    const double n = static_cast<double>(samples.size());
    for (auto f : candidates) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return X_[a][f] < X_[b][f]; });
      std::vector<double> left(k_, 0.0);
      std::vector<double> right(total);
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        left[y_[order[i]]] += 1.0;
        right[y_[order[i]]] -= 1.0;
        const double lo = X_[order[i]][f];
        const double hi = X_[order[i + 1]][f];
        if (!(lo < hi)) continue;
        const double nl = static_cast<double>(i + 1);
        const double score = impurity_times_n(left, nl) + impurity_times_n(right, n - nl);
        if (!best || score < best->score) {
          double t = lo + (hi - lo) / 2.0;
          if (!(t < hi)) t = lo;
          best = Split{f, t, score};
        }
      }
    }
    return best;
  }

  void grow(DecisionTree& tree, std::size_t node, const std::vector<std::size_t>& samples, std::size_t depth) {
    auto counts = count(samples);
    const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0.0; }) <= 1;
    const bool depth_done = hyper_.max_depth && depth >= *hyper_.max_depth;
    std::optional<Split> split;
    if (!pure && !depth_done && samples.size() >= hyper_.min_samples_split) split = best_split(samples);
    if (!split) {
      tree.nodes[node].counts = std::move(counts);
      return;
    }
    std::vector<std::size_t> left, right;
    for (auto i : samples) (X_[i][split->feature] <= split->threshold ? left : right).push_back(i);
    const auto l = tree.nodes.size();
    tree.nodes.emplace_back();
    const auto r = tree.nodes.size();
    tree.nodes.emplace_back();
    tree.nodes[node].feature = static_cast<int>(split->feature);
    tree.nodes[node].threshold = split->threshold;
    tree.nodes[node].left = static_cast<int>(l);
    tree.nodes[node].right = static_cast<int>(r);
    grow(tree, l, left, depth + 1);
    grow(tree, r, right, depth + 1);
  }

  const std::vector<std::vector<double>>& X_;
  const std::vector<std::size_t>& y_;
  std::size_t k_;
  const ForestHyper& hyper_;
  std::size_t mtry_;
  std::mt19937_64& rng_;
  std::vector<std::size_t> features_;
};

inline std::uint64_t tree_seed(std::uint64_t seed, std::size_t tree) {
  return seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(tree) + 1));
}

}  // namespace detail

inline ForestModel train_forest(const std::vector<std::vector<double>>& X, const std::vector<std::string>& y,
                                const ForestHyper& hyper = {}) {
  detail::check_training_input(X, y);
  if (hyper.max_depth && *hyper.max_depth < 1) throw ConfigError("forest: max_depth must be >= 1");
  if (hyper.n_trees < 1) throw ConfigError("forest: n_trees must be >= 1");
  ForestModel m;
  m.classes = detail::sorted_classes(y);
  m.hyper = hyper;
  m.dim = X.front().size();
  std::size_t mtry = hyper.features_per_split;
  if (mtry == 0) mtry = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(m.dim))));
  mtry = std::min(mtry, m.dim);
  const auto yi = detail::encode(y, m.classes);

  m.trees.resize(hyper.n_trees);
  auto build_one = [&](std::size_t t) {
    std::mt19937_64 rng(detail::tree_seed(hyper.seed, t));
    std::vector<std::size_t> samples(X.size());
    if (hyper.bootstrap) {
      for (auto& s : samples) s = static_cast<std::size_t>(uniform_index(rng, X.size()));
    } else {
      std::iota(samples.begin(), samples.end(), std::size_t{0});
    }
    detail::TreeBuilder builder(X, yi, m.classes.size(), hyper, mtry, rng);
    m.trees[t] = builder.build(std::move(samples));
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(hyper.threads, static_cast<unsigned>(hyper.n_trees)));
  if (workers == 1) {
    for (std::size_t t = 0; t < hyper.n_trees; ++t) build_one(t);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < hyper.n_trees; t += workers) build_one(t);
      });
    for (auto& th : pool) th.join();
  }
  return m;
}

// Majority vote over per-tree argmax; ties go to the alphabetically first class.
inline std::string predict_forest(const ForestModel& m, std::span<const double> x) {
  if (x.size() != m.dim) throw DataError("forest: input has wrong dimension");
  std::vector<std::size_t> votes(m.classes.size(), 0);
  for (const auto& t : m.trees) ++votes[t.predict_index(x)];
  return m.classes[detail::argmax(votes)];
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_model_json(const LogRegModel& m) {
  nlohmann::json w = nlohmann::json::array();
  for (std::size_t c = 0; c < m.weights.rows; ++c) {
    auto r = m.weights.row(c);
    w.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"format", "iotids.logreg"},
          {"version", 1},
          {"classes", m.classes},
          {"weights", w},
          {"bias", m.bias},
          {"hyper", {{"lr", m.hyper.lr}, {"epochs", m.hyper.epochs}, {"l2", m.hyper.l2}}}};
}

inline LogRegModel logreg_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "iotids.logreg" || j.value("version", 0) != 1)
    throw DataError("not a version-1 logistic regression model");
  LogRegModel m;
  j.at("classes").get_to(m.classes);
  j.at("bias").get_to(m.bias);
  const auto& w = j.at("weights");
  const std::size_t d = w.empty() ? 0 : w.at(0).size();
  m.weights = Matrix(w.size(), d);
  for (std::size_t c = 0; c < w.size(); ++c) {
    auto row = w.at(c).get<std::vector<double>>();
    if (row.size() != d) throw DataError("logreg model: ragged weights");
    std::copy(row.begin(), row.end(), m.weights.row(c).begin());
  }
  if (m.bias.size() != m.classes.size() || m.weights.rows != m.classes.size())
    throw DataError("logreg model: shape mismatch");
  const auto& h = j.at("hyper");
  m.hyper = {h.at("lr").get<double>(), h.at("epochs").get<std::size_t>(), h.at("l2").get<double>()};
  return m;
}

inline nlohmann::json to_model_json(const ForestModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      if (n.is_leaf())
        nodes.push_back({{"counts", n.counts}});
      else
        nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
    }
    trees.push_back(std::move(nodes));
  }
  nlohmann::json hyper{{"n_trees", m.hyper.n_trees},
                       {"features_per_split", m.hyper.features_per_split},
                       {"bootstrap", m.hyper.bootstrap},
                       {"min_samples_split", m.hyper.min_samples_split},
                       {"seed", m.hyper.seed}};
  hyper["max_depth"] = m.hyper.max_depth ? nlohmann::json(*m.hyper.max_depth) : nlohmann::json(nullptr);
  return {{"format", "iotids.forest"}, {"version", 1}, {"classes", m.classes},
          {"dim", m.dim},              {"hyper", hyper}, {"trees", trees}};
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "iotids.forest" || j.value("version", 0) != 1)
    throw DataError("not a version-1 random forest model");
  ForestModel m;
  j.at("classes").get_to(m.classes);
  j.at("dim").get_to(m.dim);
  const auto& h = j.at("hyper");
  h.at("n_trees").get_to(m.hyper.n_trees);
  h.at("features_per_split").get_to(m.hyper.features_per_split);
  h.at("bootstrap").get_to(m.hyper.bootstrap);
  h.at("min_samples_split").get_to(m.hyper.min_samples_split);
  h.at("seed").get_to(m.hyper.seed);
  if (!h.at("max_depth").is_null()) m.hyper.max_depth = h.at("max_depth").get<std::size_t>();
  for (const auto& jt : j.at("trees")) {
    DecisionTree t;
    for (const auto& jn : jt) {
      TreeNode n;
      if (jn.contains("counts")) {
        jn.at("counts").get_to(n.counts);
        if (n.counts.size() != m.classes.size()) throw DataError("forest model: leaf class count mismatch");
      } else {
        n.feature = jn.at("feature").get<int>();
        n.threshold = jn.at("threshold").get<double>();
        n.left = jn.at("left").get<int>();
        n.right = jn.at("right").get<int>();
      }
      t.nodes.push_back(std::move(n));
    }
    const auto n_nodes = static_cast<int>(t.nodes.size());
    for (const auto& n : t.nodes)
      if (!n.is_leaf() && (n.left <= 0 || n.right <= 0 || n.left >= n_nodes || n.right >= n_nodes ||
                           static_cast<std::size_t>(n.feature) >= m.dim))
        throw DataError("forest model: malformed node");
    if (t.nodes.empty()) throw DataError("forest model: empty tree");
    m.trees.push_back(std::move(t));
  }
  return m;
}

}  // namespace iotids

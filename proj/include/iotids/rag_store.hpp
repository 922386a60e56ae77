#pragma once

// Exact cosine retrieval over an immutable knowledge base of embedded flows.
//
// The embedding defaults to the identity on standardized feature vectors;
// any other std::function can be plugged in at build time. Alongside each
// embedding the knowledge base keeps the raw selected feature values, which
// are what retrieved exemplars show in prompts.
//
// Binary layout (all integers and floats little-endian):
//
//   char[8]   magic "IOTIDSKB"
//   u32       version (1)
//   u64       n, u64 dim
//   f64[n*dim]          embeddings, row-major
//   n x (u32 len, u8[len])  labels, UTF-8
//   u32 len, u8[len]    stats_id
//   u64       raw_dim
//   f64[n*raw_dim]      raw feature values, row-major

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/common.hpp"
#include "iotids/features.hpp"

namespace iotids {

using Embedder = std::function<std::vector<double>(std::span<const double>)>;

inline Embedder identity_embedder() {
  return [](std::span<const double> x) { return std::vector<double>(x.begin(), x.end()); };
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace detail {
inline double cosine_from_norms(double ab, double na, double nb) {
  if (na == 0.0 || nb == 0.0) return 0.0;
  return ab / (na * nb);
}
}  // namespace detail

// a.b / (|a||b|); 0 when either vector is all zeros.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DataError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  return detail::cosine_from_norms(dot(a, b), l2_norm(a), l2_norm(b));
}

struct RetrievalHit {
  std::size_t index = 0;
  double similarity = 0.0;
  std::string label;

  bool operator==(const RetrievalHit&) const = default;
};

// Similarity descending, then index ascending.
inline bool hit_before(double sa, std::size_t ia, double sb, std::size_t ib) {
  return sa > sb || (sa == sb && ia < ib);
}

class KnowledgeBase {
 public:
  static constexpr std::uint32_t kVersion = 1;

  KnowledgeBase() = default;

  // `embedded` rows are the retrieval vectors, `raw` rows the prompt-facing values.
  KnowledgeBase(Matrix embedded, Matrix raw, std::vector<std::string> labels, std::string stats_id)
      : vectors_(std::move(embedded)), raw_(std::move(raw)), labels_(std::move(labels)), stats_id_(std::move(stats_id)) {
    if (labels_.size() != vectors_.rows || raw_.rows != vectors_.rows)
      throw DataError("knowledge base: vectors, raw rows and labels differ in count");
    norms_.resize(vectors_.rows);
    for (std::size_t i = 0; i < vectors_.rows; ++i) norms_[i] = l2_norm(vectors_.row(i));
  }

  // Standardize raw selected-feature rows with `stats`, then embed.
  static KnowledgeBase build(const std::vector<std::vector<double>>& raw_rows, std::vector<std::string> labels,
                             const StandardizerStats& stats, const Embedder& embed = identity_embedder()) {
    if (raw_rows.empty()) throw DataError("knowledge base: no records");
    const std::size_t raw_dim = raw_rows.front().size();
    Matrix raw(raw_rows.size(), raw_dim);
    Matrix emb;
    for (std::size_t i = 0; i < raw_rows.size(); ++i) {
      if (raw_rows[i].size() != raw_dim) throw DataError("knowledge base: ragged rows");
      std::copy(raw_rows[i].begin(), raw_rows[i].end(), raw.row(i).begin());
      auto e = embed(apply_standardizer(stats, raw_rows[i]));
      if (i == 0) emb = Matrix(raw_rows.size(), e.size());
      if (e.size() != emb.cols) throw DataError("knowledge base: embedder returned inconsistent dimensions");
      std::copy(e.begin(), e.end(), emb.row(i).begin());
    }
    return KnowledgeBase(std::move(emb), std::move(raw), std::move(labels), stats.id());
  }

  std::size_t size() const { return vectors_.rows; }
  std::size_t dim() const { return vectors_.cols; }
  std::size_t raw_dim() const { return raw_.cols; }
  const std::string& label(std::size_t i) const { return labels_[i]; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::span<const double> vector(std::size_t i) const { return vectors_.row(i); }
  std::span<const double> raw(std::size_t i) const { return raw_.row(i); }
  double norm(std::size_t i) const { return norms_[i]; }
  const std::string& stats_id() const { return stats_id_; }

  // Exact top-k by linear scan and partial selection.
  std::vector<RetrievalHit> retrieve(std::span<const double> query, std::size_t k = 20) const {
    if (size() == 0) throw DataError("retrieve: empty knowledge base");
    if (k < 1) throw std::invalid_argument("retrieve: k must be >= 1");
    if (query.size() != dim())
      throw DataError("retrieve: query has " + std::to_string(query.size()) + " dims, knowledge base has " +
                      std::to_string(dim()));
    const double qn = l2_norm(query);
    std::vector<double> sims(size());
    for (std::size_t i = 0; i < size(); ++i) sims[i] = detail::cosine_from_norms(dot(query, vector(i)), qn, norms_[i]);
    std::vector<std::size_t> order(size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t take = std::min(k, size());
    auto cmp = [&](std::size_t a, std::size_t b) { return hit_before(sims[a], a, sims[b], b); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), cmp);
    std::vector<RetrievalHit> hits;
    hits.reserve(take);
    for (std::size_t r = 0; r < take; ++r) hits.push_back({order[r], sims[order[r]], labels_[order[r]]});
    return hits;
  }

  void save(std::ostream& out) const {
    out.write("IOTIDSKB", 8);
    put_u32(out, kVersion);
    put_u64(out, size());
    put_u64(out, dim());
    for (double v : vectors_.data) put_f64(out, v);
    for (const auto& l : labels_) put_str(out, l);
    put_str(out, stats_id_);
    put_u64(out, raw_dim());
    for (double v : raw_.data) put_f64(out, v);
    if (!out) throw DataError("knowledge base: write failed");
  }

  static KnowledgeBase load(std::istream& in) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "IOTIDSKB", 8) != 0) throw DataError("knowledge base: bad magic");
    if (get_u32(in) != kVersion) throw DataError("knowledge base: unsupported version");
    const auto n = get_u64(in);
    const auto d = get_u64(in);
    if (n > (1ULL << 32) || d > (1ULL << 16)) throw DataError("knowledge base: implausible shape");
    Matrix vecs(n, d);
    for (auto& v : vecs.data) v = get_f64(in);
    std::vector<std::string> labels(n);
    for (auto& l : labels) l = get_str(in);
    auto stats_id = get_str(in);
    const auto rd = get_u64(in);
    if (rd > (1ULL << 16)) throw DataError("knowledge base: implausible shape");
    Matrix raw(n, rd);
    for (auto& v : raw.data) v = get_f64(in);
    return KnowledgeBase(std::move(vecs), std::move(raw), std::move(labels), std::move(stats_id));
  }

  std::string to_bytes() const {
    std::ostringstream out(std::ios::binary);
    save(out);
    return out.str();
  }

  // Inspection twin of the binary file.
  nlohmann::json manifest() const {
    std::map<std::string, std::size_t> counts;
    for (const auto& l : labels_) ++counts[l];
    return {{"format", "iotids.kb"}, {"version", kVersion},          {"n", size()},
            {"dim", dim()},          {"raw_dim", raw_dim()},         {"stats_id", stats_id_},
            {"label_counts", counts}, {"checksum", content_id(to_bytes())}};
  }

 private:
  static void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  static void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
  static void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
  static void put_str(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DataError("knowledge base: truncated file");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  static std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw DataError("knowledge base: truncated file");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  static double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }
  static std::string get_str(std::istream& in) {
    const auto len = get_u32(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw DataError("knowledge base: truncated file");
    return s;
  }

  Matrix vectors_;
  Matrix raw_;
  std::vector<std::string> labels_;
  std::vector<double> norms_;
  std::string stats_id_;
};

inline std::vector<RetrievalHit> retrieve(const KnowledgeBase& kb, std::span<const double> query, std::size_t k = 20) {
  return kb.retrieve(query, k);
}

inline std::vector<RetrievalHit> select_exemplars(const std::vector<RetrievalHit>& hits, std::size_t m = 3) {
  if (m > hits.size())
    throw std::invalid_argument("select_exemplars: asked for " + std::to_string(m) + " of " +
                                std::to_string(hits.size()) + " hits");
  return {hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(m)};
}

struct RecallCount {
  std::size_t hits = 0;
  std::size_t total = 0;
  double recall() const { return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0; }
};

struct RecallReport {
  std::map<std::string, RecallCount> per_class;
  RecallCount overall;

  nlohmann::json to_json() const {
    nlohmann::json j{{"format", "iotids.top3_recall"}, {"version", 1}};
    for (const auto& [c, r] : per_class)
      j["per_class"][c] = {{"hits", r.hits}, {"total", r.total}, {"recall", r.recall()},
                           {"display", std::to_string(r.hits) + "/" + std::to_string(r.total)}};
    j["overall"] = {{"hits", overall.hits}, {"total", overall.total}, {"recall", overall.recall()}};
    return j;
  }
};

struct LabeledVector {
  std::vector<double> vector;
  std::string label;
};

// A query is recalled when any of the first `m` of its top-`k` hits carries its label.
inline RecallReport top3_recall(const KnowledgeBase& kb, const std::vector<LabeledVector>& test, std::size_t k = 20,
                                std::size_t m = 3) {
  if (test.empty()) throw DataError("top3_recall: empty test set");
  RecallReport rep;
  for (const auto& q : test) {
    const auto top = select_exemplars(kb.retrieve(q.vector, k), std::min(m, std::min(k, kb.size())));
    const bool hit = std::any_of(top.begin(), top.end(), [&](const RetrievalHit& h) { return h.label == q.label; });
    auto& c = rep.per_class[q.label];
    ++c.total;
    ++rep.overall.total;
    if (hit) {
      ++c.hits;
      ++rep.overall.hits;
    }
  }
  return rep;
}

}  // namespace iotids

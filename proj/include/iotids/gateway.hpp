#pragma once

// Completion-endpoint client, deterministic mock model, and the direct and
// retrieval-augmented classification loops.
//
// Wire protocol (HTTP POST, JSON body, UTF-8):
//
//   request:  {"model": str, "prompt": str, "max_tokens": int,
//              "temperature": float, "stop": [str, ...]}
//   headers:  X-Request-Id: <id>; Authorization: Bearer <token> (optional)
//   response: 200 with {"text": str}
//
// Connection failures, timeouts, 429 and 5xx are retried with exponential
// backoff; other statuses and malformed bodies fail immediately.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "iotids/common.hpp"
#include "iotids/features.hpp"
#include "iotids/prompt.hpp"
#include "iotids/rag_store.hpp"
#include "iotids/tokenizer.hpp"

namespace iotids {

inline constexpr std::string_view kAuthTokenEnv = "IOTIDS_API_TOKEN";

struct EndpointConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8080/v1/complete
  std::string model_id;
  double timeout_seconds = 30.0;
  std::size_t max_concurrent = 4;
  std::size_t retries = 3;
  double backoff_initial_ms = 200.0;
  std::optional<std::string> auth_token;

  void validate() const {
    if (base_url.empty()) throw ConfigError("endpoint.base_url is required");
    if (!(timeout_seconds > 0.0)) throw ConfigError("endpoint.timeout_seconds must be > 0");
    if (max_concurrent < 1) throw ConfigError("endpoint.max_concurrent must be >= 1");
    if (backoff_initial_ms < 0.0) throw ConfigError("endpoint.backoff_initial_ms must be >= 0");
  }
};

class EndpointError : public Error {
 public:
  enum class Kind { timeout, connection, http_status, malformed_response, retry_exhausted };

  EndpointError(Kind kind, std::string request_id, const std::string& detail, int status = 0)
      : Error(ErrorKind::endpoint, std::string(kind_name(kind)) + " [request " + request_id + "]: " + detail),
        kind_(kind),
        request_id_(std::move(request_id)),
        status_(status) {}

  Kind endpoint_kind() const noexcept { return kind_; }
  const std::string& request_id() const noexcept { return request_id_; }
  int status() const noexcept { return status_; }

  static constexpr std::string_view kind_name(Kind k) {
    switch (k) {
      case Kind::timeout: return "timeout";
      case Kind::connection: return "connection";
      case Kind::http_status: return "http_status";
      case Kind::malformed_response: return "malformed_response";
      case Kind::retry_exhausted: return "retry_exhausted";
    }
    return "unknown";
  }

 private:
  Kind kind_;
  std::string request_id_;
  int status_;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  // Continuation of `prompt`. Must be safe to call concurrently.
  virtual std::string complete(const PromptText& prompt, const GenSettings& gen,
                               const std::string& request_id) const = 0;
  // True when output and timing carry no run-to-run variation worth recording.
  virtual bool deterministic() const { return false; }
};

inline std::string complete(const CompletionBackend& backend, const PromptText& prompt, const GenSettings& gen,
                            const std::string& request_id) {
  gen.validate();
  return backend.complete(prompt, gen, request_id);
}

// ---------------------------------------------------------------------------
// HTTP backend

inline nlohmann::json completion_request_json(const std::string& model, const PromptText& prompt,
                                              const GenSettings& gen) {
  return {{"model", model},
          {"prompt", prompt.text},
          {"max_tokens", gen.max_new_tokens},
          {"temperature", gen.temperature},
          {"stop", gen.stop_sequences}};
}

class HttpBackend final : public CompletionBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit HttpBackend(EndpointConfig cfg, Sleeper sleeper = {}) : cfg_(std::move(cfg)), sleep_(std::move(sleeper)) {
    cfg_.validate();
    auto scheme_end = cfg_.base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint.base_url must start with http://");
    if (cfg_.base_url.compare(0, scheme_end, "http") != 0)
      throw ConfigError("endpoint.base_url: only http:// endpoints are supported");
    auto path_start = cfg_.base_url.find('/', scheme_end + 3);
    origin_ = cfg_.base_url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : cfg_.base_url.substr(path_start);
    if (!cfg_.auth_token)
      if (const char* env = std::getenv(std::string(kAuthTokenEnv).c_str())) cfg_.auth_token = env;
    if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }

  std::string complete(const PromptText& prompt, const GenSettings& gen,
                       const std::string& request_id) const override {
    const auto body = completion_request_json(cfg_.model_id, prompt, gen).dump();
    std::optional<EndpointError> last;
    for (std::size_t attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0) {
        const double ms = cfg_.backoff_initial_ms * static_cast<double>(1ULL << std::min<std::size_t>(attempt - 1, 20));
        sleep_(std::chrono::milliseconds(static_cast<long long>(ms)));
      }
      try {
        return attempt_once(body, request_id);
      } catch (const EndpointError& e) {
        const auto k = e.endpoint_kind();
        const bool transient = k == EndpointError::Kind::timeout || k == EndpointError::Kind::connection ||
                               (k == EndpointError::Kind::http_status && (e.status() == 429 || e.status() >= 500));
        if (!transient) throw;
        last = e;
      }
    }
    if (cfg_.retries == 0) throw *last;
    throw EndpointError(EndpointError::Kind::retry_exhausted, request_id,
                        std::to_string(cfg_.retries + 1) + " attempts failed; last: " + last->what(), last->status());
  }

  const EndpointConfig& config() const { return cfg_; }

 private:
  std::string attempt_once(const std::string& body, const std::string& request_id) const {
    httplib::Client client(origin_);
    const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers{{"X-Request-Id", request_id}};
    if (cfg_.auth_token) headers.emplace("Authorization", "Bearer " + *cfg_.auth_token);
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      const auto err = res.error();
      const auto kind = (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
                            ? EndpointError::Kind::timeout
                            : EndpointError::Kind::connection;
      throw EndpointError(kind, request_id, httplib::to_string(err));
    }
    if (res->status < 200 || res->status >= 300)
      throw EndpointError(EndpointError::Kind::http_status, request_id, "HTTP " + std::to_string(res->status),
                          res->status);
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string())
      throw EndpointError(EndpointError::Kind::malformed_response, request_id, "expected {\"text\": string}");
    return j["text"].get<std::string>();
  }

  EndpointConfig cfg_;
  Sleeper sleep_;
  std::string origin_;
  std::string path_;
};

// ---------------------------------------------------------------------------
// Mock model

class MockModel final : public CompletionBackend {
 public:
  enum class Mode { first_exemplar, majority_exemplar, fixed_label };

  explicit MockModel(Mode mode, std::string fixed = {}) : mode_(mode), fixed_(std::move(fixed)) {
    if (mode_ == Mode::fixed_label && fixed_.empty()) throw ConfigError("mock fixed-label mode needs a label");
  }

  // "first-exemplar", "majority-exemplar" or "fixed-label:<label>".
  static MockModel parse(std::string_view spec) {
    if (spec == "first-exemplar") return MockModel(Mode::first_exemplar);
    if (spec == "majority-exemplar") return MockModel(Mode::majority_exemplar);
    constexpr std::string_view fixed = "fixed-label:";
    if (spec.substr(0, fixed.size()) == fixed) return MockModel(Mode::fixed_label, std::string(spec.substr(fixed.size())));
    throw ConfigError("unknown mock mode '" + std::string(spec) +
                      "' (expected first-exemplar, majority-exemplar or fixed-label:<label>)");
  }

  std::string complete(const PromptText& prompt, const GenSettings&, const std::string&) const override {
    if (mode_ == Mode::fixed_label) return " " + fixed_;
    const auto answers = exemplar_answers(prompt.text);
    if (answers.empty()) return "";
    if (mode_ == Mode::first_exemplar) return " " + answers.front();
    std::string best;
    std::size_t best_count = 0;
    for (const auto& a : answers) {
      const auto c = static_cast<std::size_t>(std::count(answers.begin(), answers.end(), a));
      if (c > best_count) {
        best = a;
        best_count = c;
      }
    }
    return " " + best;
  }

  bool deterministic() const override { return true; }

  // Labels of in-context examples: every "Answer: <label>" line except the terminal marker.
  static std::vector<std::string> exemplar_answers(std::string_view text) {
    std::vector<std::string> out;
    const auto last = text.rfind(kAnswerMarker);
    std::size_t pos = 0;
    while ((pos = text.find(kAnswerMarker, pos)) != std::string_view::npos && pos < last) {
      if (pos == 0 || text[pos - 1] == '\n') {
        auto start = pos + kAnswerMarker.size();
        auto end = text.find('\n', start);
        auto label = detail::trim(text.substr(start, end == std::string_view::npos ? end : end - start));
        if (!label.empty()) out.emplace_back(label);
      }
      pos += kAnswerMarker.size();
    }
    return out;
  }

 private:
  Mode mode_;
  std::string fixed_;
};

// ---------------------------------------------------------------------------
// Classification loops

struct Prediction {
  std::string record_id;
  std::string gold;
  std::string predicted;
  std::optional<double> similarity_top1;
  std::vector<std::string> exemplar_labels;
  double latency_ms = 0.0;
  std::string reason = "ok";  // ok | unmatched | endpoint_<kind> | budget_exceeded | data_error
};

struct RagContext {
  const KnowledgeBase& kb;
  const StandardizerStats& kb_stats;
  const FeatureSchema& schema;
  const TokenizerAdapter& tokenizer;
  Embedder embed = identity_embedder();
  std::size_t k = 20;
  std::size_t m = 3;
  std::size_t budget = kRagBudget;
};

struct RagOutcome {
  std::string predicted;
  std::vector<RetrievalHit> exemplars;
  PromptText prompt;
  std::string generated;
};

// standardize -> embed -> retrieve(k) -> first m -> prompt -> complete -> extract.
inline RagOutcome classify_rag_detailed(std::span<const double> raw_values, const RagContext& ctx,
                                        const CompletionBackend& backend, const GenSettings& gen,
                                        const std::string& request_id) {
  if (raw_values.size() != ctx.kb.raw_dim()) throw DataError("classify_rag: record does not match knowledge base");
  const auto query = ctx.embed(apply_standardizer(ctx.kb_stats, raw_values));
  const auto hits = ctx.kb.retrieve(query, ctx.k);
  RagOutcome out;
  out.exemplars = select_exemplars(hits, std::min(ctx.m, hits.size()));
  std::vector<Exemplar> ex;
  for (const auto& h : out.exemplars) {
    auto r = ctx.kb.raw(h.index);
    ex.push_back({std::vector<double>(r.begin(), r.end()), h.label});
  }
  out.prompt = render_rag_prompt(raw_values, ex, ctx.schema, ctx.tokenizer, ctx.budget);
  out.generated = complete(backend, out.prompt, gen, request_id);
  out.exemplars.resize(out.prompt.exemplars_used);
  const auto candidates = exemplar_classes(std::span<const Exemplar>(ex).first(out.prompt.exemplars_used));
  out.predicted = extract_answer(out.prompt.text + out.generated, candidates);
  return out;
}

inline std::string classify_rag(const FlowRecord& record, const RagContext& ctx, const CompletionBackend& backend,
                                const GenSettings& gen = {}) {
  return classify_rag_detailed(ctx.schema.project(record.features), ctx, backend, gen, record.id.str()).predicted;
}

inline std::string classify_direct(const FlowRecord& record, const FeatureSchema& schema,
                                   const std::vector<std::string>& class_list, const CompletionBackend& backend,
                                   const TokenizerAdapter& tok, const GenSettings& gen = {},
                                   std::size_t budget = kTrainingBudget) {
  const auto prompt = render_training_prompt(record, schema, class_list, std::nullopt, tok, budget);
  const auto generated = complete(backend, prompt, gen, record.id.str());
  return extract_answer(prompt.text + generated, class_list);
}

// Runs `one(i)` for i in [0, n) on up to `max_concurrent` threads; failures
// become reason codes. Results keep input order.
inline std::vector<Prediction> classify_batch(std::size_t n, std::size_t max_concurrent,
                                              const std::function<Prediction(std::size_t)>& one,
                                              const std::function<Prediction(std::size_t)>& on_error_base) {
  std::vector<Prediction> out(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        out[i] = one(i);
      } catch (const EndpointError& e) {
        out[i] = on_error_base(i);
        out[i].predicted = std::string(kUnmatched);
        out[i].reason = "endpoint_" + std::string(EndpointError::kind_name(e.endpoint_kind()));
      } catch (const BudgetError&) {
        out[i] = on_error_base(i);
        out[i].predicted = std::string(kUnmatched);
        out[i].reason = "budget_exceeded";
      }
    }
  };
  const auto threads = std::max<std::size_t>(1, std::min(max_concurrent, n));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

inline std::string prediction_jsonl_line(const Prediction& p, const std::string& config_hash) {
  nlohmann::ordered_json j;
  j["record_id"] = p.record_id;
  j["gold"] = p.gold;
  j["predicted"] = p.predicted;
  j["similarity_top1"] = p.similarity_top1 ? nlohmann::ordered_json(*p.similarity_top1) : nlohmann::ordered_json(nullptr);
  j["exemplar_labels"] = p.exemplar_labels;
  j["latency_ms"] = p.latency_ms;
  j["reason"] = p.reason;
  j["config_hash"] = config_hash;
  return j.dump();
}

inline Prediction prediction_from_json(const nlohmann::json& j) {
  Prediction p;
  j.at("record_id").get_to(p.record_id);
  j.at("gold").get_to(p.gold);
  j.at("predicted").get_to(p.predicted);
  if (!j.at("similarity_top1").is_null()) p.similarity_top1 = j.at("similarity_top1").get<double>();
  j.at("exemplar_labels").get_to(p.exemplar_labels);
  j.at("latency_ms").get_to(p.latency_ms);
  j.at("reason").get_to(p.reason);
  return p;
}

}  // namespace iotids

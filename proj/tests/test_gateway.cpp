#include <atomic>
#include <cstdlib>
#include <mutex>
#include <random>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "iotids/gateway.hpp"
#include "iotids/report.hpp"

using namespace iotids;

namespace {

// Scripted local server; `handler` receives the 0-based request number.
class FakeServer {
 public:
  using Handler = std::function<void(int, const httplib::Request&, httplib::Response&)>;

  explicit FakeServer(Handler h) : handler_(std::move(h)) {
    server_.Post("/v1/complete", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = count_.fetch_add(1);
      {
        std::lock_guard<std::mutex> lock(mu_);
        bodies_.push_back(req.body);
        request_ids_.push_back(req.get_header_value("X-Request-Id"));
        auth_.push_back(req.get_header_value("Authorization"));
      }
      handler_(n, req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/complete"; }
  int requests() const { return count_.load(); }
  std::vector<std::string> bodies() const {
    std::lock_guard<std::mutex> lock(mu_);
    return bodies_;
  }
  std::vector<std::string> request_ids() const {
    std::lock_guard<std::mutex> lock(mu_);
    return request_ids_;
  }
  std::vector<std::string> auth() const {
    std::lock_guard<std::mutex> lock(mu_);
    return auth_;
  }

 private:
  httplib::Server server_;
  Handler handler_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> count_{0};
  mutable std::mutex mu_;
  std::vector<std::string> bodies_, request_ids_, auth_;
};

void reply_text(httplib::Response& res, const std::string& text) {
  res.set_content(nlohmann::json{{"text", text}}.dump(), "application/json");
}

EndpointConfig config_for(const FakeServer& s) {
  EndpointConfig c;
  c.base_url = s.url();
  c.model_id = "tiny";
  c.timeout_seconds = 5;
  c.retries = 3;
  return c;
}

PromptText prompt(const std::string& text) { return {text, 0, text.rfind("Answer:"), 0}; }

struct RecordingSleeper {
  std::shared_ptr<std::vector<long long>> delays = std::make_shared<std::vector<long long>>();
  HttpBackend::Sleeper fn() {
    auto d = delays;
    return [d](std::chrono::milliseconds ms) { d->push_back(ms.count()); };
  }
};

EndpointError::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const EndpointError& e) {
    return e.endpoint_kind();
  }
  ADD_FAILURE() << "no EndpointError";
  return EndpointError::Kind::connection;
}

std::vector<double> values(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  std::vector<double> v(23);
  for (auto& x : v) x = n(rng);
  return v;
}

}  // namespace

TEST(Http, TwoTransientFailuresThenSuccess) {
  FakeServer s([](int n, const httplib::Request&, httplib::Response& res) {
    if (n < 2) {
      res.status = 503;
      return;
    }
    reply_text(res, " benign");
  });
  RecordingSleeper sleeper;
  HttpBackend backend(config_for(s), sleeper.fn());
  EXPECT_EQ(backend.complete(prompt("x Answer:"), GenSettings{}, "req-1"), " benign");
  EXPECT_EQ(s.requests(), 3);
  EXPECT_EQ(*sleeper.delays, (std::vector<long long>{200, 400}));
  for (const auto& id : s.request_ids()) EXPECT_EQ(id, "req-1");
}

TEST(Http, RequestBodyFollowsWireProtocol) {
  FakeServer s([](int, const httplib::Request&, httplib::Response& res) { reply_text(res, ""); });
  auto cfg = config_for(s);
  cfg.auth_token = "secret";
  HttpBackend backend(cfg);
  GenSettings g;
  g.stop_sequences = {"\n"};
  EXPECT_EQ(backend.complete(prompt("Task\nAnswer:"), g, "r7"), "");
  const auto body = nlohmann::json::parse(s.bodies().at(0));
  EXPECT_EQ(body, (nlohmann::json{{"model", "tiny"}, {"prompt", "Task\nAnswer:"}, {"max_tokens", 6},
                                  {"temperature", 0.0}, {"stop", {"\n"}}}));
  EXPECT_EQ(s.auth().at(0), "Bearer secret");
  // Empty generation scores as unmatched downstream.
  EXPECT_EQ(extract_answer("Task\nAnswer:" + std::string(""), {"benign"}), "unmatched");
}

TEST(Http, AuthTokenFromEnvironment) {
  FakeServer s([](int, const httplib::Request&, httplib::Response& res) { reply_text(res, "ok"); });
  ::setenv("IOTIDS_API_TOKEN", "from-env", 1);
  HttpBackend backend(config_for(s));
  ::unsetenv("IOTIDS_API_TOKEN");
  backend.complete(prompt("Answer:"), GenSettings{}, "r");
  EXPECT_EQ(s.auth().at(0), "Bearer from-env");
}

TEST(Http, ClientErrorsAndMalformedBodiesAreNotRetried) {
  FakeServer bad_status([](int, const httplib::Request&, httplib::Response& res) { res.status = 400; });
  HttpBackend a(config_for(bad_status), [](auto) {});
  EXPECT_EQ(kind_of([&] { a.complete(prompt("Answer:"), {}, "r"); }), EndpointError::Kind::http_status);
  EXPECT_EQ(bad_status.requests(), 1);

  FakeServer malformed([](int, const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"txt\": 1}", "application/json");
  });
  HttpBackend b(config_for(malformed), [](auto) {});
  EXPECT_EQ(kind_of([&] { b.complete(prompt("Answer:"), {}, "r"); }), EndpointError::Kind::malformed_response);
  EXPECT_EQ(malformed.requests(), 1);
}

TEST(Http, RetryExhaustionCarriesRequestId) {
  FakeServer s([](int, const httplib::Request&, httplib::Response& res) { res.status = 502; });
  auto cfg = config_for(s);
  cfg.retries = 2;
  HttpBackend backend(cfg, [](auto) {});
  try {
    backend.complete(prompt("Answer:"), {}, "flow.csv:12");
    FAIL();
  } catch (const EndpointError& e) {
    EXPECT_EQ(e.endpoint_kind(), EndpointError::Kind::retry_exhausted);
    EXPECT_EQ(e.request_id(), "flow.csv:12");
    EXPECT_EQ(e.status(), 502);
    EXPECT_EQ(e.exit_code(), 4);
    EXPECT_NE(std::string(e.what()).find("flow.csv:12"), std::string::npos);
  }
  EXPECT_EQ(s.requests(), 3);
}

TEST(Http, TimeoutAndConnectionFailures) {
  FakeServer slow([](int, const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(800));
    reply_text(res, "late");
  });
  auto cfg = config_for(slow);
  cfg.timeout_seconds = 0.2;
  cfg.retries = 0;
  HttpBackend a(cfg);
  EXPECT_EQ(kind_of([&] { a.complete(prompt("Answer:"), {}, "r"); }), EndpointError::Kind::timeout);

  // A port that was bound and closed again has no listener.
  int port = 0;
  {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    port = ntohs(addr.sin_port);
    ::close(fd);
  }
  EndpointConfig closed;
  closed.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/complete";
  closed.retries = 0;
  closed.timeout_seconds = 1;
  HttpBackend b(closed);
  EXPECT_EQ(kind_of([&] { b.complete(prompt("Answer:"), {}, "r"); }), EndpointError::Kind::connection);
}

TEST(Http, ConfigValidation) {
  EndpointConfig c;
  EXPECT_THROW(HttpBackend{c}, ConfigError);
  c.base_url = "https://example.invalid/x";
  EXPECT_THROW(HttpBackend{c}, ConfigError);
  c.base_url = "http://127.0.0.1:1/x";
  c.max_concurrent = 0;
  EXPECT_THROW(HttpBackend{c}, ConfigError);
  c.max_concurrent = 1;
  c.timeout_seconds = 0;
  EXPECT_THROW(HttpBackend{c}, ConfigError);
}

TEST(Batch, InFlightNeverExceedsMaxConcurrent) {
  std::atomic<int> in_flight{0}, peak{0};
  FakeServer s([&](int, const httplib::Request&, httplib::Response& res) {
    const int now = ++in_flight;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(15));
    --in_flight;
    reply_text(res, " benign");
  });
  auto cfg = config_for(s);
  cfg.max_concurrent = 3;
  HttpBackend backend(cfg);
  const auto preds = classify_batch(
      30, cfg.max_concurrent,
      [&](std::size_t i) {
        Prediction p;
        p.record_id = std::to_string(i);
        p.predicted = extract_answer(backend.complete(prompt("Answer:"), {}, p.record_id), {"benign"});
        return p;
      },
      [](std::size_t i) {
        Prediction p;
        p.record_id = std::to_string(i);
        return p;
      });
  EXPECT_LE(peak.load(), 3);
  EXPECT_GE(peak.load(), 2);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    EXPECT_EQ(preds[i].record_id, std::to_string(i));
    EXPECT_EQ(preds[i].predicted, "benign");
  }
}

TEST(Batch, FailuresBecomeReasonCodes) {
  const auto preds = classify_batch(
      4, 2,
      [](std::size_t i) -> Prediction {
        if (i == 1) throw EndpointError(EndpointError::Kind::timeout, "1", "slow");
        if (i == 2) throw BudgetError("too long");
        Prediction p;
        p.record_id = std::to_string(i);
        p.predicted = "benign";
        return p;
      },
      [](std::size_t i) {
        Prediction p;
        p.record_id = std::to_string(i);
        p.gold = "benign";
        return p;
      });
  EXPECT_EQ(preds[0].reason, "ok");
  EXPECT_EQ(preds[1].reason, "endpoint_timeout");
  EXPECT_EQ(preds[1].predicted, "unmatched");
  EXPECT_EQ(preds[1].gold, "benign");
  EXPECT_EQ(preds[2].reason, "budget_exceeded");
  EXPECT_EQ(preds[3].record_id, "3");
}

TEST(Mock, FirstExemplarOnRetrievalPrompt) {
  std::mt19937_64 rng(1);
  const auto schema = FeatureSchema::canonical();
  const std::vector<Exemplar> ex{{values(rng), "recon ping sweep"},
                                 {values(rng), "sql injection"},
                                 {values(rng), "recon ping sweep"}};
  PunctuationTokenizer tok;
  const auto p = render_rag_prompt(values(rng), ex, schema, tok);
  const auto mock = MockModel::parse("first-exemplar");
  const auto out = complete(mock, p, {}, "r");
  EXPECT_EQ(out, " recon ping sweep");
  EXPECT_EQ(extract_answer(p.text + out, exemplar_classes(ex)), "recon ping sweep");
  EXPECT_EQ(mock.complete(p, {}, "r"), out);

  const std::vector<Exemplar> ex2{{values(rng), "sql injection"},
                                  {values(rng), "backdoor malware"},
                                  {values(rng), "backdoor malware"}};
  const auto p2 = render_rag_prompt(values(rng), ex2, schema, tok);
  EXPECT_EQ(MockModel::parse("majority-exemplar").complete(p2, {}, "r"), " backdoor malware");
  EXPECT_EQ(MockModel::parse("fixed-label:benign").complete(p2, {}, "r"), " benign");
}

TEST(Mock, ParseErrors) {
  EXPECT_THROW(MockModel::parse("oracle"), ConfigError);
  EXPECT_THROW(MockModel::parse("fixed-label:"), ConfigError);
  EXPECT_TRUE(MockModel::parse("first-exemplar").deterministic());
}

class RagLoop : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1000);
    const std::vector<std::string> names{"recon ping sweep", "sql injection", "uploading attack", "backdoor malware"};
    for (int i = 0; i < 200; ++i) {
      std::vector<double> v(23);
      for (auto& x : v) x = u(rng);
      raw.push_back(v);
      labels.push_back(names[i % 4]);
    }
    stats = fit_standardizer(raw);
    kb = KnowledgeBase::build(raw, labels, stats);
  }

  std::vector<std::vector<double>> raw;
  std::vector<std::string> labels;
  StandardizerStats stats;
  KnowledgeBase kb;
  FeatureSchema schema = FeatureSchema::canonical();
  PunctuationTokenizer tok;
};

TEST_F(RagLoop, FirstExemplarMockPredictsTopHitLabel) {
  RagContext ctx{kb, stats, schema, tok};
  const auto mock = MockModel::parse("first-exemplar");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1000);
  for (int q = 0; q < 100; ++q) {
    std::vector<double> v(23);
    for (auto& x : v) x = u(rng);
    const auto out = classify_rag_detailed(v, ctx, mock, {}, "q");
    const auto top = kb.retrieve(apply_standardizer(stats, v), 20);
    EXPECT_EQ(out.predicted, top[0].label);
    ASSERT_EQ(out.exemplars.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(out.exemplars[i], top[i]);
    EXPECT_LE(out.prompt.token_count, kRagBudget);
    // Candidates come only from retrieved exemplars.
    const auto line_start = out.prompt.text.find("Possible Classes: [");
    const auto line = out.prompt.text.substr(line_start, out.prompt.text.find('\n', line_start) - line_start);
    for (const auto& l : labels)
      if (line.find(l) != std::string::npos) {
        EXPECT_TRUE(std::any_of(top.begin(), top.begin() + 3, [&](const auto& h) { return h.label == l; }));
      }
  }
}

TEST_F(RagLoop, QueryEqualToKbRowGetsItsLabel) {
  RagContext ctx{kb, stats, schema, tok};
  const auto mock = MockModel::parse("first-exemplar");
  for (std::size_t i : {0u, 17u, 199u}) {
    FlowRecord r{{"kb", i}, raw[i], labels[i], true};
    EXPECT_EQ(classify_rag(r, ctx, mock), labels[i]);
  }
}

TEST_F(RagLoop, DirectClassification) {
  std::mt19937_64 rng(4);
  const std::vector<std::string> classes{"benign", "ddos udp flood", "mitm arp spoofing"};
  const auto fixed = MockModel::parse("fixed-label:benign");

  // Echoes the gold label of the record named in the request id.
  struct Echo : CompletionBackend {
    std::map<std::string, std::string> gold;
    std::string complete(const PromptText&, const GenSettings&, const std::string& id) const override {
      return " " + gold.at(id) + "\n";
    }
  } echo;

  std::vector<std::string> preds, golds;
  for (std::size_t i = 0; i < 30; ++i) {
    FlowRecord r{{"t", i}, values(rng), classes[i % 3], true};
    EXPECT_EQ(classify_direct(r, schema, classes, fixed, tok), "benign");
    echo.gold[r.id.str()] = r.label;
    preds.push_back(classify_direct(r, schema, classes, echo, tok));
    golds.push_back(r.label);
  }
  EXPECT_EQ(classification_report(preds, golds, classes).accuracy, 1.0);
}

TEST(PredictionFile, JsonlRoundTrip) {
  Prediction p;
  p.record_id = "a.csv:3";
  p.gold = "sql injection";
  p.predicted = "unmatched";
  p.similarity_top1 = 0.875;
  p.exemplar_labels = {"sql injection", "backdoor malware"};
  p.latency_ms = 12.5;
  p.reason = "unmatched";
  const auto line = prediction_jsonl_line(p, "abc");
  EXPECT_EQ(line.substr(0, 24), "{\"record_id\":\"a.csv:3\",\"");
  const auto back = prediction_from_json(nlohmann::json::parse(line));
  EXPECT_EQ(back.record_id, p.record_id);
  EXPECT_EQ(back.similarity_top1, p.similarity_top1);
  EXPECT_EQ(back.exemplar_labels, p.exemplar_labels);
  EXPECT_EQ(back.reason, "unmatched");
  p.similarity_top1.reset();
  EXPECT_FALSE(prediction_from_json(nlohmann::json::parse(prediction_jsonl_line(p, "abc"))).similarity_top1);
}

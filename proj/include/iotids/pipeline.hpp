#pragma once

// Batch pipeline behind the CLI. Every subcommand reads its upstream
// artifacts from the output directory, writes its own, and records content
// ids in run_manifest.json.
//
// Output layout:
//   splits.json                      prepare
//   features.json                    features
//   prompts/{train,val,test}.jsonl   export-prompts (+ prompts/class_lists.json)
//   models/{lr,rf}.json              train-baseline
//   predictions/<name>.jsonl         predict-baseline (lr, rf), classify (direct, rag)
//   predictions/<name>.meta.json
//   kb/kb.bin, kb/kb.manifest.json   build-kb
//   retrieval_audit.json             retrieve-audit
//   reports/<name>.{json,csv,md,plot.csv}  evaluate
//   run_manifest.json

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/baseline.hpp"
#include "iotids/common.hpp"
#include "iotids/features.hpp"
#include "iotids/flow_ingest.hpp"
#include "iotids/gateway.hpp"
#include "iotids/labels.hpp"
#include "iotids/prompt.hpp"
#include "iotids/rag_store.hpp"
#include "iotids/report.hpp"
#include "iotids/schema.hpp"
#include "iotids/tokenizer.hpp"

namespace iotids {

namespace fs = std::filesystem;

class MissingArtifactError : public DataError {
 public:
  MissingArtifactError(const std::string& artifact, const std::string& producer)
      : DataError("missing artifact '" + artifact + "'; run the `" + producer + "` subcommand first") {}
};

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  enum class SchemaMode { canonical, auto_prune };

  std::vector<std::string> dataset;  // CSV paths, as written in the config
  fs::path base_dir = ".";           // relative dataset paths resolve against this
  fs::path output_dir = "out";
  std::uint64_t seed = 42;
  SplitSpec split;
  SchemaMode schema_mode = SchemaMode::canonical;
  double prune_threshold = 0.98;
  std::string tokenizer = "whitespace-punct";
  std::size_t training_budget = kTrainingBudget;
  std::size_t rag_budget = kRagBudget;
  std::optional<EndpointConfig> endpoint;
  std::optional<std::string> mock;
  GenSettings gen;
  std::size_t k = 20;
  std::size_t m = 3;
  LogRegHyper lr;
  ForestHyper rf;
  bool record_timings = true;

  static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base_dir = ".") {
    PipelineConfig c;
    c.base_dir = base_dir;
    auto field = [&](const char* name, auto&& fn) {
      try {
        fn();
      } catch (const Error&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config field '") + name + "': " + e.what());
      }
    };
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known{"dataset", "output_dir", "seed",      "split",      "schema",
                                             "tokenizer", "budgets",  "model",     "generation", "retrieval",
                                             "baselines", "record_timings"};
    for (const auto& [key, _] : j.items())
      if (!known.count(key)) throw ConfigError("config field '" + key + "': unknown field");

    field("dataset", [&] { j.at("dataset").get_to(c.dataset); });
    field("output_dir", [&] { if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>(); });
    field("seed", [&] { if (j.contains("seed")) j.at("seed").get_to(c.seed); });
    field("split", [&] { if (j.contains("split")) j.at("split").get_to(c.split); });
    c.split.seed = c.seed;
    field("schema", [&] {
      if (!j.contains("schema")) return;
      const auto& s = j.at("schema");
      const auto mode = s.value("mode", std::string("canonical"));
      if (mode == "canonical")
        c.schema_mode = SchemaMode::canonical;
      else if (mode == "auto-prune")
        c.schema_mode = SchemaMode::auto_prune;
      else
        throw ConfigError("config field 'schema.mode': expected canonical or auto-prune");
      c.prune_threshold = s.value("threshold", 0.98);
    });
    field("tokenizer", [&] { if (j.contains("tokenizer")) j.at("tokenizer").get_to(c.tokenizer); });
    field("budgets", [&] {
      if (!j.contains("budgets")) return;
      c.training_budget = j.at("budgets").value("training", c.training_budget);
      c.rag_budget = j.at("budgets").value("rag", c.rag_budget);
    });
    field("model", [&] {
      if (!j.contains("model")) return;
      const auto& mdl = j.at("model");
      if (mdl.contains("mock")) c.mock = mdl.at("mock").get<std::string>();
      if (mdl.contains("endpoint")) {
        const auto& e = mdl.at("endpoint");
        EndpointConfig ec;
        e.at("base_url").get_to(ec.base_url);
        ec.model_id = e.value("model_id", std::string());
        ec.timeout_seconds = e.value("timeout_seconds", ec.timeout_seconds);
        ec.max_concurrent = e.value("max_concurrent", ec.max_concurrent);
        ec.retries = e.value("retries", ec.retries);
        ec.backoff_initial_ms = e.value("backoff_initial_ms", ec.backoff_initial_ms);
        c.endpoint = ec;
      }
    });
    field("generation", [&] { if (j.contains("generation")) j.at("generation").get_to(c.gen); });
    field("retrieval", [&] {
      if (!j.contains("retrieval")) return;
      c.k = j.at("retrieval").value("k", c.k);
      c.m = j.at("retrieval").value("m", c.m);
    });
    field("baselines", [&] {
      if (!j.contains("baselines")) return;
      const auto& b = j.at("baselines");
      if (b.contains("lr")) {
        const auto& l = b.at("lr");
        c.lr.lr = l.value("lr", c.lr.lr);
        c.lr.epochs = l.value("epochs", c.lr.epochs);
        c.lr.l2 = l.value("l2", c.lr.l2);
      }
      if (b.contains("rf")) {
        const auto& r = b.at("rf");
        c.rf.n_trees = r.value("n_trees", c.rf.n_trees);
        if (r.contains("max_depth") && !r.at("max_depth").is_null()) c.rf.max_depth = r.at("max_depth").get<std::size_t>();
        c.rf.features_per_split = r.value("features_per_split", c.rf.features_per_split);
        c.rf.bootstrap = r.value("bootstrap", c.rf.bootstrap);
        c.rf.min_samples_split = r.value("min_samples_split", c.rf.min_samples_split);
        c.rf.threads = r.value("threads", c.rf.threads);
      }
    });
    c.rf.seed = c.seed;
    field("record_timings", [&] { if (j.contains("record_timings")) j.at("record_timings").get_to(c.record_timings); });
    return c;
  }

  static PipelineConfig load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
    return from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
  }

  void validate() const {
    if (dataset.empty()) throw ConfigError("config field 'dataset': at least one CSV path is required");
    split.validate();
    if (!(prune_threshold > 0.0 && prune_threshold <= 1.0))
      throw ConfigError("config field 'schema.threshold': must lie in (0,1]");
    if (tokenizer != "whitespace-punct") throw ConfigError("config field 'tokenizer': unknown adapter '" + tokenizer + "'");
    if (training_budget == 0 || rag_budget == 0) throw ConfigError("config field 'budgets': budgets must be positive");
    if (mock.has_value() == endpoint.has_value())
      throw ConfigError("config field 'model': configure exactly one of 'mock' or 'endpoint'");
    if (mock) MockModel::parse(*mock);
    if (endpoint) endpoint->validate();
    gen.validate();
    if (k < 1) throw ConfigError("config field 'retrieval.k': must be >= 1");
    if (m < 1 || m > 3 || m > k) throw ConfigError("config field 'retrieval.m': must lie in [1, min(3, k)]");
    if (rf.max_depth && *rf.max_depth < 1) throw ConfigError("config field 'baselines.rf.max_depth': must be >= 1");
  }

  void check_paths() const {
    for (const auto& d : dataset)
      if (!fs::exists(resolve(d))) throw ConfigError("config field 'dataset': file not found: " + d);
  }

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  // Effective configuration; output_dir is excluded so runs into different
  // directories share a hash.
  nlohmann::json effective_json() const {
    nlohmann::json j;
    j["dataset"] = dataset;
    j["seed"] = seed;
    j["split"] = split;
    j["schema"] = {{"mode", schema_mode == SchemaMode::canonical ? "canonical" : "auto-prune"},
                   {"threshold", prune_threshold}};
    j["tokenizer"] = tokenizer;
    j["budgets"] = {{"training", training_budget}, {"rag", rag_budget}};
    if (mock) j["model"] = {{"mock", *mock}};
    if (endpoint)
      j["model"] = {{"endpoint",
                     {{"base_url", endpoint->base_url},
                      {"model_id", endpoint->model_id},
                      {"timeout_seconds", endpoint->timeout_seconds},
                      {"max_concurrent", endpoint->max_concurrent},
                      {"retries", endpoint->retries},
                      {"backoff_initial_ms", endpoint->backoff_initial_ms}}}};
    j["generation"] = gen;
    j["retrieval"] = {{"k", k}, {"m", m}};
    j["baselines"]["lr"] = {{"lr", lr.lr}, {"epochs", lr.epochs}, {"l2", lr.l2}};
    j["baselines"]["rf"] = {{"n_trees", rf.n_trees},
                            {"max_depth", rf.max_depth ? nlohmann::json(*rf.max_depth) : nlohmann::json(nullptr)},
                            {"features_per_split", rf.features_per_split},
                            {"bootstrap", rf.bootstrap},
                            {"min_samples_split", rf.min_samples_split}};
    j["record_timings"] = record_timings;
    return j;
  }

  std::string hash() const { return content_id(effective_json().dump()); }
};

// ---------------------------------------------------------------------------
// Pipeline

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    hash_ = cfg_.hash();
  }

  const PipelineConfig& config() const { return cfg_; }
  const std::string& config_hash() const { return hash_; }

  static const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"prepare",        "features",  "export-prompts", "train-baseline",
                                                "predict-baseline", "build-kb", "retrieve-audit", "classify",
                                                "evaluate",       "all"};
    return names;
  }

  // prepare: parse the dataset and write the split manifest.
  void prepare() {
    cfg_.check_paths();
    const auto records = load_records(ingest_schema());
    const auto splits = make_splits(records, cfg_.split);
    auto j = split_manifest(splits, cfg_.split);
    std::size_t unknown = 0;
    for (const auto& r : records) unknown += r.known_label ? 0 : 1;
    j["unknown_label_rows"] = unknown;
    j["config_hash"] = hash_;
    write_json("splits.json", j);
    finish_stage("prepare", {"splits.json"});
  }

  // features: select the schema and fit the standardizers.
  void features() {
    const auto splits = load_splits();
    auto schema = ingest_schema();
    if (cfg_.schema_mode == PipelineConfig::SchemaMode::auto_prune) {
      if (splits.train.size() < 2) throw DataError("auto-prune needs at least 2 training records");
      const auto kept = prune_correlated(pearson_matrix(splits.train), schema.names, cfg_.prune_threshold);
      const std::set<std::string> keep(kept.begin(), kept.end());
      for (std::size_t i = 0; i < schema.size(); ++i) schema.selected[i] = keep.count(schema.names[i]) != 0;
    }
    FeatureSidecar side;
    side.schema = schema;
    if (!splits.train.empty()) side.baseline = fit_standardizer(project_all(splits.train, schema));
    if (!splits.rag_kb.empty()) side.kb = fit_standardizer(project_all(splits.rag_kb, schema));
    auto j = side.to_json();
    j["config_hash"] = hash_;
    write_json("features.json", j);
    finish_stage("features", {"features.json"});
  }

  // export-prompts: supervised prompts for the fine-tuning harness.
  void export_prompts() {
    const auto splits = load_splits();
    const auto side = load_features();
    const auto classes = seen_classes(splits);
    const auto id = class_list_id(classes);
    PunctuationTokenizer tok;
    std::vector<std::string> written;
    for (std::string_view split : {"train", "val", "test"}) {
      std::string body;
      for (const auto& r : splits.get(split)) {
        const auto p = render_training_prompt(r, side.schema, classes, r.label, tok, cfg_.training_budget);
        nlohmann::ordered_json line{{"prompt", p.text},
                                    {"label", r.label},
                                    {"split", split},
                                    {"class_list_id", id},
                                    {"record_id", r.id.str()},
                                    {"config_hash", hash_}};
        body += line.dump() + "\n";
      }
      const auto rel = "prompts/" + std::string(split) + ".jsonl";
      write_text(rel, body);
      written.push_back(rel);
    }
    write_json("prompts/class_lists.json", {{"config_hash", hash_}, {"class_lists", {{id, classes}}}});
    written.push_back("prompts/class_lists.json");
    finish_stage("export-prompts", written);
  }

  // train-baseline: model in {lr, rf, all}.
  void train_baseline(const std::string& model) {
    const auto splits = load_splits();
    const auto side = load_features();
    const auto X = standardize_all(project_all(splits.train, side.schema), side.baseline);
    std::vector<std::string> y;
    for (const auto& r : splits.train) y.push_back(r.label);
    std::vector<std::string> written;
    for (const auto& name : baseline_names(model)) {
      nlohmann::json j = name == "lr" ? to_model_json(train_logreg(X, y, cfg_.lr)) : to_model_json(train_forest(X, y, cfg_.rf));
      j["config_hash"] = hash_;
      write_json("models/" + name + ".json", j);
      written.push_back("models/" + name + ".json");
    }
    finish_stage("train-baseline", written);
  }

  // predict-baseline: test-split predictions from saved baseline models.
  void predict_baseline(const std::string& model) {
    const auto splits = load_splits();
    const auto side = load_features();
    const auto X = standardize_all(project_all(splits.test, side.schema), side.baseline);
    std::vector<std::string> written;
    for (const auto& name : baseline_names(model)) {
      const auto rel = "models/" + name + ".json";
      const auto j = read_json(rel, "train-baseline");
      std::vector<std::string> preds(X.size());
      std::vector<std::string> classes;
      RuntimeRecord rt;
      if (name == "lr") {
        const auto m = logreg_from_json(j);
        classes = m.classes;
        rt = time_block("lr", [&] { for (std::size_t i = 0; i < X.size(); ++i) preds[i] = predict_logreg(m, X[i]); });
      } else {
        const auto m = forest_from_json(j);
        classes = m.classes;
        rt = time_block("rf", [&] { for (std::size_t i = 0; i < X.size(); ++i) preds[i] = predict_forest(m, X[i]); });
      }
      std::vector<Prediction> out(X.size());
      for (std::size_t i = 0; i < X.size(); ++i) {
        out[i].record_id = splits.test[i].id.str();
        out[i].gold = splits.test[i].label;
        out[i].predicted = preds[i];
      }
      write_predictions(name, out, classes, "baseline", cfg_.record_timings ? rt.seconds : 0.0);
      written.push_back("predictions/" + name + ".jsonl");
      written.push_back("predictions/" + name + ".meta.json");
    }
    finish_stage("predict-baseline", written);
  }

  // build-kb: knowledge base over the unseen-class partition.
  void build_kb() {
    const auto splits = load_splits();
    const auto side = load_features();
    if (splits.rag_kb.empty()) throw DataError("build-kb: the split has no unseen-class records");
    std::vector<std::string> labels;
    for (const auto& r : splits.rag_kb) labels.push_back(r.label);
    const auto kb = KnowledgeBase::build(project_all(splits.rag_kb, side.schema), labels, side.kb);
    write_text("kb/kb.bin", kb.to_bytes());
    auto man = kb.manifest();
    man["embedding"] = "identity(standardized selected features)";
    man["config_hash"] = hash_;
    write_json("kb/kb.manifest.json", man);
    finish_stage("build-kb", {"kb/kb.bin", "kb/kb.manifest.json"});
  }

  // retrieve-audit: Top-3 recall of the knowledge base on the unseen test split.
  void retrieve_audit() {
    const auto splits = load_splits();
    const auto side = load_features();
    const auto kb = load_kb();
    std::vector<LabeledVector> test;
    for (const auto& r : splits.rag_test)
      test.push_back({apply_standardizer(side.kb, side.schema.project(r.features)), r.label});
    auto j = top3_recall(kb, test, cfg_.k, cfg_.m).to_json();
    j["k"] = cfg_.k;
    j["m"] = cfg_.m;
    j["config_hash"] = hash_;
    write_json("retrieval_audit.json", j);
    finish_stage("retrieve-audit", {"retrieval_audit.json"});
  }

  // classify: mode in {direct, rag}.
  void classify(const std::string& mode) {
    if (mode != "direct" && mode != "rag") throw ConfigError("classify --mode must be direct or rag");
    const auto splits = load_splits();
    const auto side = load_features();
    const auto backend = make_backend();
    const bool timed = cfg_.record_timings && !backend->deterministic();
    const std::size_t conc = cfg_.endpoint ? cfg_.endpoint->max_concurrent : 1;
    PunctuationTokenizer tok;
    std::vector<Prediction> preds;
    std::vector<std::string> classes;
    double batch_seconds = 0.0;

    if (mode == "direct") {
      const auto& test = splits.test;
      classes = seen_classes(splits);
      auto base = [&](std::size_t i) {
        Prediction p;
        p.record_id = test[i].id.str();
        p.gold = test[i].label;
        return p;
      };
      ScopedTimer t(batch_seconds);
      preds = classify_batch(test.size(), conc, [&](std::size_t i) {
        auto p = base(i);
        double ms = 0.0;
        {
          ScopedTimer ti(ms);
          p.predicted = classify_direct(test[i], side.schema, classes, *backend, tok, cfg_.gen, cfg_.training_budget);
        }
        p.latency_ms = timed ? ms * 1e3 : 0.0;
        if (p.predicted == kUnmatched) p.reason = "unmatched";
        return p;
      }, base);
    } else {
      const auto kb = load_kb();
      const auto& test = splits.rag_test;
      std::set<std::string> present;
      for (const auto& r : test) present.insert(r.label);
      classes.assign(present.begin(), present.end());
      RagContext ctx{kb, side.kb, side.schema, tok, identity_embedder(), cfg_.k, cfg_.m, cfg_.rag_budget};
      auto base = [&](std::size_t i) {
        Prediction p;
        p.record_id = test[i].id.str();
        p.gold = test[i].label;
        return p;
      };
      ScopedTimer t(batch_seconds);
      preds = classify_batch(test.size(), conc, [&](std::size_t i) {
        auto p = base(i);
        double ms = 0.0;
        RagOutcome out;
        {
          ScopedTimer ti(ms);
          out = classify_rag_detailed(side.schema.project(test[i].features), ctx, *backend, cfg_.gen, p.record_id);
        }
        p.predicted = out.predicted;
        if (!out.exemplars.empty()) p.similarity_top1 = out.exemplars.front().similarity;
        for (const auto& h : out.exemplars) p.exemplar_labels.push_back(h.label);
        p.latency_ms = timed ? ms * 1e3 : 0.0;
        if (p.predicted == kUnmatched) p.reason = "unmatched";
        return p;
      }, base);
    }
    write_predictions(mode, preds, classes, backend->deterministic() ? "mock" : "endpoint", timed ? batch_seconds : 0.0);
    finish_stage("classify", {"predictions/" + mode + ".jsonl", "predictions/" + mode + ".meta.json"});

    // The batch always completes; failed records still fail the subcommand.
    std::size_t endpoint_failures = 0, budget_failures = 0;
    for (const auto& p : preds) {
      endpoint_failures += p.reason.starts_with("endpoint_") ? 1 : 0;
      budget_failures += p.reason == "budget_exceeded" ? 1 : 0;
    }
    const auto where = " of " + std::to_string(preds.size()) + " records; see predictions/" + mode + ".jsonl";
    if (endpoint_failures)
      throw Error(ErrorKind::endpoint, "classify: endpoint failed for " + std::to_string(endpoint_failures) + where);
    if (budget_failures)
      throw BudgetError("classify: prompt over budget for " + std::to_string(budget_failures) + where);
  }

  // evaluate: one report per prediction file; names empty = every file present.
  void evaluate(std::vector<std::string> names = {}) {
    if (names.empty()) {
      const auto dir = cfg_.output_dir / "predictions";
      if (fs::exists(dir))
        for (const auto& e : fs::directory_iterator(dir)) {
          const auto fname = e.path().filename().string();
          if (fname.size() > 10 && fname.ends_with(".meta.json")) names.push_back(fname.substr(0, fname.size() - 10));
        }
      std::sort(names.begin(), names.end());
      if (names.empty()) throw MissingArtifactError("predictions/*.jsonl", "classify");
    }
    struct Loaded {
      std::string name;
      std::vector<Prediction> preds;
      nlohmann::json meta;
    };
    std::vector<Loaded> inputs;
    std::set<std::string> hashes;
    for (const auto& name : names) {
      Loaded l{name, {}, read_json("predictions/" + name + ".meta.json", producer_of(name))};
      hashes.insert(l.meta.at("config_hash").get<std::string>());
      std::istringstream lines(read_text("predictions/" + name + ".jsonl", producer_of(name)));
      for (std::string line; std::getline(lines, line);) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        hashes.insert(j.at("config_hash").get<std::string>());
        l.preds.push_back(prediction_from_json(j));
      }
      inputs.push_back(std::move(l));
    }
    if (hashes.size() > 1) {
      std::string list;
      for (const auto& h : hashes) list += " " + h;
      throw DataError("evaluate: inputs come from different configurations (hashes:" + list + ")");
    }
    std::vector<std::string> written;
    for (const auto& in : inputs) {
      std::vector<std::string> p, g;
      for (const auto& x : in.preds) {
        p.push_back(x.predicted);
        g.push_back(x.gold);
      }
      auto rep = classification_report(p, g, in.meta.at("classes").get<std::vector<std::string>>());
      rep.runtime_seconds = in.meta.at("runtime_seconds").get<double>();
      auto j = report_to_json(rep);
      j["name"] = in.name;
      j["config_hash"] = *hashes.begin();
      const auto base = "reports/" + in.name;
      write_json(base + ".json", j);
      write_text(base + ".csv", render_report(rep, ReportFormat::csv));
      write_text(base + ".md", render_report(rep, ReportFormat::markdown));
      write_text(base + ".plot.csv", render_report(rep, ReportFormat::plotdata));
      for (const auto* ext : {".json", ".csv", ".md", ".plot.csv"}) written.push_back(base + ext);
    }
    finish_stage("evaluate", written);
  }

  void all() {
    prepare();
    features();
    export_prompts();
    train_baseline("all");
    predict_baseline("all");
    build_kb();
    retrieve_audit();
    classify("direct");
    classify("rag");
    evaluate();
  }

  // ---- shared loading, exposed for tests and the acceptance runner ----

  FeatureSchema ingest_schema() const {
    if (cfg_.schema_mode == PipelineConfig::SchemaMode::canonical) return FeatureSchema::canonical();
    std::ifstream in(cfg_.resolve(cfg_.dataset.front()));
    if (!in) throw DataError("cannot open " + cfg_.dataset.front());
    auto header = read_csv_header(in);
    header.erase(std::remove_if(header.begin(), header.end(),
                                [](const std::string& c) { return c == "Label" || c == "label"; }),
                 header.end());
    return FeatureSchema::from_columns(header);
  }

  std::vector<FlowRecord> load_records(const FeatureSchema& schema) const {
    std::vector<FlowRecord> all;
    for (const auto& d : cfg_.dataset) {
      std::ifstream in(cfg_.resolve(d), std::ios::binary);
      if (!in) throw DataError("cannot open dataset file " + d);
      auto recs = parse_flow_csv(in, schema, d);
      all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
    }
    return all;
  }

  SplitSet load_splits() const {
    const auto manifest = read_json("splits.json", "prepare");
    return resolve_manifest(manifest, load_records(ingest_schema()));
  }

  FeatureSidecar load_features() const { return FeatureSidecar::from_json(read_json("features.json", "features")); }

  KnowledgeBase load_kb() const {
    const auto path = cfg_.output_dir / "kb/kb.bin";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("kb/kb.bin", "build-kb");
    return KnowledgeBase::load(in);
  }

  std::unique_ptr<CompletionBackend> make_backend() const {
    if (cfg_.mock) return std::make_unique<MockModel>(MockModel::parse(*cfg_.mock));
    return std::make_unique<HttpBackend>(*cfg_.endpoint);
  }

 private:
  static std::vector<std::string> baseline_names(const std::string& model) {
    if (model == "lr" || model == "rf") return {model};
    if (model == "all") return {"lr", "rf"};
    throw ConfigError("--model must be lr, rf or all");
  }

  static std::string producer_of(const std::string& prediction_name) {
    return prediction_name == "lr" || prediction_name == "rf" ? "predict-baseline" : "classify";
  }

  static std::vector<std::string> seen_classes(const SplitSet& splits) {
    std::set<std::string> s;
    for (const auto& r : splits.train) s.insert(r.label);
    if (s.empty()) throw DataError("the split has no seen-class training records");
    return {s.begin(), s.end()};
  }

  void write_predictions(const std::string& name, const std::vector<Prediction>& preds,
                         const std::vector<std::string>& classes, const std::string& source, double runtime) {
    std::string body;
    for (const auto& p : preds) body += prediction_jsonl_line(p, hash_) + "\n";
    write_text("predictions/" + name + ".jsonl", body);
    nlohmann::json meta{{"format", "iotids.predictions"},
                        {"version", 1},
                        {"name", name},
                        {"source", source},
                        {"classes", classes},
                        {"count", preds.size()},
                        {"runtime_seconds", runtime},
                        {"config_hash", hash_}};
    write_json("predictions/" + name + ".meta.json", meta);
  }

  std::string read_text(const std::string& rel, const std::string& producer) const {
    std::ifstream in(cfg_.output_dir / rel, std::ios::binary);
    if (!in) throw MissingArtifactError(rel, producer);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  nlohmann::json read_json(const std::string& rel, const std::string& producer) const {
    auto j = nlohmann::json::parse(read_text(rel, producer), nullptr, false);
    if (j.is_discarded()) throw DataError("artifact " + rel + " is not valid JSON");
    return j;
  }

  void write_text(const std::string& rel, const std::string& text) {
    const auto path = cfg_.output_dir / rel;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("failed writing " + path.string());
  }

  void write_json(const std::string& rel, const nlohmann::json& j) { write_text(rel, j.dump(2) + "\n"); }

  void finish_stage(const std::string& stage, const std::vector<std::string>& artifacts) {
    nlohmann::json man;
    const auto path = cfg_.output_dir / "run_manifest.json";
    if (std::ifstream in(path); in) {
      auto old = nlohmann::json::parse(in, nullptr, false);
      if (!old.is_discarded() && old.value("config_hash", "") == hash_) man = old;
    }
    man["format"] = "iotids.run";
    man["config_hash"] = hash_;
    man["seed"] = cfg_.seed;
    man["version"] = std::string(kVersion);
    man["config"] = cfg_.effective_json();
    for (const auto& a : artifacts) man["artifacts"][a] = content_id(read_text(a, stage));
    // Union with earlier runs of the same stage (e.g. classify direct, then rag).
    std::set<std::string> produced(artifacts.begin(), artifacts.end());
    if (man.contains("stages") && man["stages"].contains(stage))
      for (const auto& a : man["stages"][stage]) produced.insert(a.get<std::string>());
    man["stages"][stage] = produced;
    write_json("run_manifest.json", man);
  }

  PipelineConfig cfg_;
  std::string hash_;
};

}  // namespace iotids

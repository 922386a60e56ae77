// iotids: batch pipeline for flow-record intrusion detection.
//
//   iotids --config run.json prepare
//   iotids --config run.json all --mock first-exemplar
//
// Exit codes: 0 ok, 2 config, 3 data / missing artifact, 4 endpoint, 5 budget.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "iotids/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mock;
  std::string model = "all";
  std::string mode = "rag";
  std::vector<std::string> predictions;
};

iotids::PipelineConfig resolve_config(const Options& o) {
  auto cfg = iotids::PipelineConfig::load(o.config);
  if (o.out) cfg.output_dir = *o.out;
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.split.seed = *o.seed;
    cfg.rf.seed = *o.seed;
  }
  if (o.mock) {
    cfg.mock = *o.mock;
    cfg.endpoint.reset();
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-record intrusion detection pipeline"};
  app.set_version_flag("--version", std::string(iotids::kVersion));
  app.fallthrough();
  app.require_subcommand(1);

  Options o;
  app.add_option("-c,--config", o.config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("-o,--out", o.out, "Override output_dir");
  app.add_option("--seed", o.seed, "Override the global seed");
  app.add_option("--mock", o.mock, "Use the mock model: first-exemplar | majority-exemplar | fixed-label:<label>");

  app.add_subcommand("prepare", "Parse the dataset and write the split manifest");
  app.add_subcommand("features", "Select features and fit standardizers");
  app.add_subcommand("export-prompts", "Write supervised prompt JSONL files");
  auto* train = app.add_subcommand("train-baseline", "Train baseline classifiers");
  train->add_option("--model", o.model, "lr | rf | all")->check(CLI::IsMember({"lr", "rf", "all"}));
  auto* predict = app.add_subcommand("predict-baseline", "Predict the test split with trained baselines");
  predict->add_option("--model", o.model, "lr | rf | all")->check(CLI::IsMember({"lr", "rf", "all"}));
  app.add_subcommand("build-kb", "Build the retrieval knowledge base");
  app.add_subcommand("retrieve-audit", "Measure Top-3 retrieval recall");
  auto* classify = app.add_subcommand("classify", "Classify with the language model");
  classify->add_option("--mode", o.mode, "direct | rag")->check(CLI::IsMember({"direct", "rag"}));
  auto* evaluate = app.add_subcommand("evaluate", "Write classification reports");
  evaluate->add_option("--predictions", o.predictions, "Prediction set names (default: all present)");
  app.add_subcommand("all", "Run every stage in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    iotids::Pipeline p(resolve_config(o));
    const auto name = app.get_subcommands().front()->get_name();
    if (name == "prepare") p.prepare();
    else if (name == "features") p.features();
    else if (name == "export-prompts") p.export_prompts();
    else if (name == "train-baseline") p.train_baseline(o.model);
    else if (name == "predict-baseline") p.predict_baseline(o.model);
    else if (name == "build-kb") p.build_kb();
    else if (name == "retrieve-audit") p.retrieve_audit();
    else if (name == "classify") p.classify(o.mode);
    else if (name == "evaluate") p.evaluate(o.predictions);
    else if (name == "all") p.all();
    std::cerr << name << ": ok (config " << p.config_hash() << ")\n";
    return 0;
  } catch (const iotids::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

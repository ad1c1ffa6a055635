#pragma once

#include <optional>

#include "json.hpp"
#include "textrec/analysis.hpp"
#include "textrec/trainer.hpp"

namespace textrec {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | files
  SyntheticSpec synthetic;
  std::string items_path;   // files source
  std::string events_path;  // files source
  MixStrategy mix_strategy = MixStrategy::user_mixed;
  std::string single_domain;               // required for the single_domain strategy
  std::vector<std::string> domains;        // optional hard filter on the corpus
  std::vector<std::string> train_domains;  // optional restriction of the split
  int core_k = 5;
  int min_seq_len = 3;
  int max_items = 10;
  int max_title_tokens = 40;
  std::uint64_t vocab_min_freq = 1;
};

struct ModelSection {
  std::string kind = "text";  // text | id
  EncoderConfig encoder;      // vocab_size is always derived, never configured
  ItemTextVariant item_variant = ItemTextVariant::plain;
  UserTextVariant user_variant = UserTextVariant::plain;
  std::optional<LoRAConfig> lora;
  std::string init_checkpoint;  // start from these weights instead of fresh init
};

struct AnalysisSection {
  BucketSpec buckets;
  int top_k = 10;
};

struct RunSection {
  std::string output_dir = "runs/run";
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // recipe sweeps; defaults to {seed}
};

struct ExperimentConfig {
  DataConfig data;
  ModelSection model;
  TrainConfig train;
  EvalConfig eval;
  AnalysisSection analysis;
  RunSection run;
};

// Strict schema: unknown sections or keys anywhere raise ConfigError. Absent
// keys take the defaults above.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc);

// Full resolved document; parse(render(c)) == c.
nlohmann::json experiment_config_json(const ExperimentConfig& config);

// Dotted-path assignment, e.g. "train.learning_rate=0.001". Values parse as
// JSON when possible and fall back to strings.
void apply_config_override(nlohmann::json& doc, const std::string& assignment);

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides);

// In-memory products of data preparation.
struct PreparedData {
  Corpus dataset;  // post domain-filter and core-filter
  DatasetSplit split;
  Tokenizer vocab;
  nlohmann::json stats;
};

PreparedData prepare_data(const ExperimentConfig& config);

// Count-weighted combination of reports from the same protocol.
MetricReport merge_reports(const std::vector<MetricReport>& parts);

// Commands write under run.output_dir and snapshot the resolved config.
void cmd_prepare(const ExperimentConfig& config);
void cmd_train(const ExperimentConfig& config);

struct EvaluateOptions {
  std::string checkpoint;  // default: <output_dir>/checkpoint/best
  std::string split = "test";
  bool partitions = false;
  std::vector<std::string> zero_shot_domains;
  std::vector<int> cutoffs;  // override of eval.cutoffs
};

void cmd_evaluate(const ExperimentConfig& config, const EvaluateOptions& options);

struct AnalyzeOptions {
  std::string checkpoint;  // default: <output_dir>/checkpoint/best
  std::string baseline;    // optional second checkpoint for improvement tables
};

void cmd_analyze(const ExperimentConfig& config, const AnalyzeOptions& options);

// Named multi-run studies; each writes cells under
// <output_dir>/recipes/<name>/ plus <name>.csv and <name>.json tables.
void cmd_recipe(const ExperimentConfig& config, const std::string& name);

}  // namespace textrec

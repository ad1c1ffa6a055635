// Command-line front end: prepare / train / evaluate / analyze / recipe.
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "textrec/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides,
                  "config override, section.key=value (repeatable; value parsed as JSON, "
                  "falling back to a plain string)");
}

textrec::ExperimentConfig load(const CommonArgs& args) {
  return textrec::load_experiment_config(args.config_path, args.overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"text-based sequential recommender workbench"};
  app.require_subcommand(1);

  CommonArgs prepare_args;
  auto* prepare = app.add_subcommand("prepare", "build the dataset, split, and vocabulary");
  add_common(prepare, prepare_args);

  CommonArgs train_args;
  auto* train = app.add_subcommand("train", "train a model on prepared data");
  add_common(train, train_args);

  CommonArgs eval_args;
  textrec::EvaluateOptions eval_options;
  auto* evaluate = app.add_subcommand("evaluate", "rank held-out targets and report metrics");
  add_common(evaluate, eval_args);
  evaluate->add_option("--checkpoint", eval_options.checkpoint,
                       "model directory (default: <output_dir>/checkpoint/best)");
  evaluate->add_option("--split", eval_options.split, "test or valid")
      ->check(CLI::IsMember({"test", "valid"}));
  evaluate->add_flag("--partitions", eval_options.partitions,
                     "break results down by history/target domain overlap");
  evaluate->add_option("--zero-shot", eval_options.zero_shot_domains,
                       "evaluate on these domains as unseen transfer targets");
  evaluate->add_option("--cutoffs", eval_options.cutoffs, "ranking cutoffs override");

  CommonArgs analyze_args;
  textrec::AnalyzeOptions analyze_options;
  auto* analyze = app.add_subcommand("analyze", "popularity buckets, exposure, embeddings");
  add_common(analyze, analyze_args);
  analyze->add_option("--checkpoint", analyze_options.checkpoint,
                      "model directory (default: <output_dir>/checkpoint/best)");
  analyze->add_option("--baseline", analyze_options.baseline,
                      "second model directory for a relative-improvement table");

  CommonArgs recipe_args;
  std::string recipe_name;
  auto* recipe = app.add_subcommand("recipe", "run a named multi-model study");
  add_common(recipe, recipe_args);
  recipe->add_option("name", recipe_name, "mix_strategy_study | partition_study | "
                                          "coldstart_study | peft_study | ablation_study")
      ->required();

  try {
    app.parse(argc, argv);
    if (prepare->parsed()) {
      textrec::cmd_prepare(load(prepare_args));
    } else if (train->parsed()) {
      textrec::cmd_train(load(train_args));
    } else if (evaluate->parsed()) {
      textrec::cmd_evaluate(load(eval_args), eval_options);
    } else if (analyze->parsed()) {
      textrec::cmd_analyze(load(analyze_args), analyze_options);
    } else if (recipe->parsed()) {
      textrec::cmd_recipe(load(recipe_args), recipe_name);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const textrec::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return textrec::kExitConfigError;
  } catch (const textrec::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return textrec::kExitDataError;
  } catch (const textrec::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return textrec::kExitNumericError;
  }
  return textrec::kExitOk;
}

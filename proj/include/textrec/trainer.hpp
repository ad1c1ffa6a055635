#pragma once

#include <map>
#include <unordered_map>
#include <unordered_set>

#include "textrec/evaluator.hpp"
#include "textrec/model.hpp"
#include "textrec/pipeline.hpp"

namespace textrec {

struct TrainConfig {
  double learning_rate = 3e-4;
  int batch_size = 32;
  int num_negatives = 10;
  int eval_every_steps = 3000;
  int patience_rounds = 10;
  std::int64_t max_steps = 0;  // 0: run until patience stops
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  LossReduction reduction = LossReduction::mean;
  std::uint64_t seed = 0;
  bool exclude_user_positives = true;  // beyond the target itself
  int eval_cutoff = 10;
  int eval_num_negatives = 1000;
  std::uint64_t eval_seed = 0;

  void validate() const;
};

// Uniform without-replacement draws from the target's domain, never returning
// the target and (optionally) none of the user's known training positives.
class NegativeSampler {
 public:
  NegativeSampler(const Corpus& corpus, std::span<const SplitInstance> train,
                  bool exclude_user_positives = true);

  // Throws DataError naming the domain when fewer than `count` items are eligible.
  std::vector<ItemIndex> sample(const std::string& user_id, ItemIndex target, int count,
                                Rng& rng) const;

  const std::vector<ItemIndex>& domain_pool(DomainIndex d) const { return pools_.at(d); }

 private:
  const Corpus* corpus_;
  std::vector<std::vector<ItemIndex>> pools_;  // catalog items grouped by domain
  std::unordered_map<std::string, std::unordered_set<ItemIndex>> user_positives_;
  bool exclude_user_positives_;
};

// Bias-corrected Adam moments, keyed by tensor name so state survives
// checkpoint round trips and model reconstruction.
struct AdamState {
  std::map<std::string, Mat> m;
  std::map<std::string, Mat> v;
  std::int64_t step = 0;  // updates applied so far
};

// One update of the trainable parameters from their accumulated gradients.
void adam_step(const std::vector<Tensor*>& params, AdamState& state, const TrainConfig& config);

// Zero grads, backprop one batch, apply an Adam update. Returns the batch loss.
double train_step(RankingModel& model, std::span<const TrainExample> batch, AdamState& state,
                  const TrainConfig& config, Rng* dropout_rng);

struct TrainLogEntry {
  std::int64_t step = 0;
  double train_loss = 0.0;    // mean over steps since the previous evaluation
  double valid_metric = 0.0;  // Recall@eval_cutoff on the validation split
};

struct TrainResult {
  std::int64_t steps = 0;
  double best_metric = 0.0;
  std::int64_t best_step = 0;
  bool stopped_by_patience = false;
  std::vector<TrainLogEntry> log;  // full history, including pre-resume entries
};

// Shuffled mini-batch loop with periodic validation, strict-improvement early
// stopping, and a final validation at termination. Writes into checkpoint_dir:
//   model/   latest weights          best/    best-validation weights
//   adam/    optimizer moments       trainer.json, rng.txt, log.jsonl
// If trainer.json already exists the run resumes from it; with a fixed seed
// the continued trajectory is bit-identical to an uninterrupted run.
TrainResult fit(RankingModel& model, const DatasetSplit& split, const Corpus& corpus,
                const TrainConfig& config, const std::string& checkpoint_dir);

}  // namespace textrec

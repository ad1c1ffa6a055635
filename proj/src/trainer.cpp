#include "textrec/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace textrec {

void TrainConfig::validate() const {
  if (!std::isfinite(learning_rate) || learning_rate < 0.0)
    throw ConfigError("learning_rate must be finite and >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (num_negatives < 1) throw ConfigError("num_negatives must be >= 1");
  if (eval_every_steps < 1) throw ConfigError("eval_every_steps must be >= 1");
  if (patience_rounds < 1) throw ConfigError("patience_rounds must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must be in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
  if (eval_cutoff < 1) throw ConfigError("eval_cutoff must be >= 1");
  if (eval_num_negatives < 1) throw ConfigError("eval_num_negatives must be >= 1");
}

NegativeSampler::NegativeSampler(const Corpus& corpus, std::span<const SplitInstance> train,
                                 bool exclude_user_positives)
    : corpus_(&corpus), exclude_user_positives_(exclude_user_positives) {
  pools_.resize(corpus.num_domains());
  for (DomainIndex d = 0; d < static_cast<DomainIndex>(corpus.num_domains()); ++d)
    pools_[d] = corpus.domain_items(d);
  if (exclude_user_positives_) {
    for (const SplitInstance& inst : train) {
      auto& known = user_positives_[inst.user_id];
      known.insert(inst.target);
      known.insert(inst.history.begin(), inst.history.end());
    }
  }
}

std::vector<ItemIndex> NegativeSampler::sample(const std::string& user_id, ItemIndex target,
                                               int count, Rng& rng) const {
  if (count < 1) throw ConfigError("negative sample count must be >= 1");
  if (target < 0 || target >= static_cast<ItemIndex>(corpus_->num_items()))
    throw DataError("negative sampling target index out of range");
  DomainIndex d = corpus_->item_domain[target];
  const std::unordered_set<ItemIndex>* known = nullptr;
  if (exclude_user_positives_) {
    auto it = user_positives_.find(user_id);
    if (it != user_positives_.end()) known = &it->second;
  }
  std::vector<ItemIndex> allowed;
  allowed.reserve(pools_[d].size());
  for (ItemIndex item : pools_[d]) {
    if (item == target) continue;
    if (known != nullptr && known->count(item) > 0) continue;
    allowed.push_back(item);
  }
  if (allowed.size() < static_cast<std::size_t>(count))
    throw DataError("negative pool too small in domain '" + corpus_->domains[d] + "': need " +
                    std::to_string(count) + ", have " + std::to_string(allowed.size()));
  for (int i = 0; i < count; ++i) {
    std::size_t j = i + uniform_below(rng, allowed.size() - i);
    std::swap(allowed[i], allowed[j]);
  }
  allowed.resize(count);
  return allowed;
}

void adam_step(const std::vector<Tensor*>& params, AdamState& state, const TrainConfig& config) {
  state.step += 1;
  double correction1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.step));
  double correction2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.step));
  for (Tensor* t : params) {
    Mat& m = state.m.try_emplace(t->name, Mat::Zero(t->value.rows(), t->value.cols())).first->second;
    Mat& v = state.v.try_emplace(t->name, Mat::Zero(t->value.rows(), t->value.cols())).first->second;
    if (m.rows() != t->value.rows() || m.cols() != t->value.cols())
      throw DataError("optimizer state shape mismatch for '" + t->name + "'");
    m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * t->grad;
    v = config.adam_beta2 * v.array() + (1.0 - config.adam_beta2) * t->grad.array().square();
    t->value.array() -= config.learning_rate * (m.array() / correction1) /
                        ((v.array() / correction2).sqrt() + config.adam_epsilon);
  }
}

double train_step(RankingModel& model, std::span<const TrainExample> batch, AdamState& state,
                  const TrainConfig& config, Rng* dropout_rng) {
  model.zero_grads();
  double loss = model.train_batch(batch, config.reduction, dropout_rng);
  if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
  std::vector<Tensor*> trainable = model.trainable_parameters();
  adam_step(trainable, state, config);
  return loss;
}

namespace {

constexpr std::uint64_t kTrainStreamTag = 0x747261696e726e67ull;
constexpr std::uint64_t kEpochOrderTag = 0x65706f6368736866ull;

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix64(mix64(seed, kEpochOrderTag), static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = uniform_below(rng, i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

json config_echo(const TrainConfig& c) {
  return json{{"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_epsilon", c.adam_epsilon},
              {"batch_size", c.batch_size},
              {"eval_cutoff", c.eval_cutoff},
              {"eval_num_negatives", c.eval_num_negatives},
              {"eval_seed", c.eval_seed},
              {"exclude_user_positives", c.exclude_user_positives},
              {"learning_rate", c.learning_rate},
              {"num_negatives", c.num_negatives},
              {"reduction", to_string(c.reduction)},
              {"seed", c.seed}};
}

struct LoopState {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::size_t cursor = 0;
  double best_metric = -1.0;
  std::int64_t best_step = -1;
  int rounds_since_improvement = 0;
  double loss_accum = 0.0;
  std::int64_t steps_since_eval = 0;
};

void save_trainer_state(const fs::path& dir, const LoopState& s, const AdamState& adam,
                        const Rng& train_rng, const TrainConfig& config) {
  json state{{"adam_steps", adam.step},
             {"best_metric", s.best_metric},
             {"best_step", s.best_step},
             {"config", config_echo(config)},
             {"cursor", s.cursor},
             {"epoch", s.epoch},
             {"loss_accum", s.loss_accum},
             {"rounds_since_improvement", s.rounds_since_improvement},
             {"step", s.step},
             {"steps_since_eval", s.steps_since_eval}};
  std::ofstream out(dir / "trainer.json");
  out << state.dump(2) << "\n";
  if (!out) throw DataError("cannot write trainer state in " + dir.string());

  fs::create_directories(dir / "adam");
  for (const auto& [name, m] : adam.m) write_tensor_blob((dir / "adam" / (name + ".m.bin")).string(), m);
  for (const auto& [name, v] : adam.v) write_tensor_blob((dir / "adam" / (name + ".v.bin")).string(), v);

  std::ostringstream rng_text;
  rng_text << train_rng;
  std::ofstream rng_out(dir / "rng.txt");
  rng_out << rng_text.str() << "\n";
  if (!rng_out) throw DataError("cannot write rng state in " + dir.string());
}

void load_trainer_state(const fs::path& dir, RankingModel& model, LoopState& s, AdamState& adam,
                        Rng& train_rng, const TrainConfig& config, std::vector<TrainLogEntry>& log) {
  std::ifstream in(dir / "trainer.json");
  if (!in) throw DataError("cannot read trainer state in " + dir.string());
  json state = json::parse(in);

  json echo = config_echo(config);
  if (state.at("config") != echo)
    throw ConfigError("resume config differs from the checkpointed run in " + dir.string());

  s.step = state.at("step").get<std::int64_t>();
  s.epoch = state.at("epoch").get<std::int64_t>();
  s.cursor = state.at("cursor").get<std::size_t>();
  s.best_metric = state.at("best_metric").get<double>();
  s.best_step = state.at("best_step").get<std::int64_t>();
  s.rounds_since_improvement = state.at("rounds_since_improvement").get<int>();
  s.loss_accum = state.at("loss_accum").get<double>();
  s.steps_since_eval = state.at("steps_since_eval").get<std::int64_t>();
  adam.step = state.at("adam_steps").get<std::int64_t>();

  for (Tensor* t : model.parameters()) {
    fs::path blob = dir / "model" / "tensors" / (t->name + ".bin");
    if (!fs::exists(blob)) throw DataError("checkpoint is missing tensor '" + t->name + "'");
    Mat value = read_tensor_blob(blob.string());
    if (value.rows() != t->value.rows() || value.cols() != t->value.cols())
      throw DataError("checkpoint shape mismatch for '" + t->name + "'");
    t->value = value;
    t->grad.setZero();
  }
  for (Tensor* t : model.trainable_parameters()) {
    fs::path m_blob = dir / "adam" / (t->name + ".m.bin");
    fs::path v_blob = dir / "adam" / (t->name + ".v.bin");
    if (fs::exists(m_blob)) adam.m[t->name] = read_tensor_blob(m_blob.string());
    if (fs::exists(v_blob)) adam.v[t->name] = read_tensor_blob(v_blob.string());
  }

  std::ifstream rng_in(dir / "rng.txt");
  if (!rng_in) throw DataError("checkpoint is missing rng state in " + dir.string());
  rng_in >> train_rng;
  if (rng_in.fail()) throw DataError("unreadable rng state in " + dir.string());

  std::ifstream log_in(dir / "log.jsonl");
  std::string line;
  while (std::getline(log_in, line)) {
    if (line.empty()) continue;
    json row = json::parse(line);
    log.push_back(TrainLogEntry{row.at("step").get<std::int64_t>(),
                                row.at("train_loss").get<double>(),
                                row.at("valid_recall").get<double>()});
  }
}

}  // namespace

TrainResult fit(RankingModel& model, const DatasetSplit& split, const Corpus& corpus,
                const TrainConfig& config, const std::string& checkpoint_dir) {
  config.validate();
  if (split.train.empty()) throw DataError("training split is empty");
  if (split.valid.empty()) throw DataError("validation split is empty");
  fs::path dir(checkpoint_dir);
  fs::create_directories(dir);

  NegativeSampler sampler(corpus, split.train, config.exclude_user_positives);
  AdamState adam;
  Rng train_rng(mix64(config.seed, kTrainStreamTag));
  LoopState s;
  TrainResult result;

  bool resumed = fs::exists(dir / "trainer.json");
  if (resumed) {
    load_trainer_state(dir, model, s, adam, train_rng, config, result.log);
  } else {
    std::ofstream truncate(dir / "log.jsonl");  // reused directory: start a fresh log
  }

  EvalConfig eval_config;
  eval_config.cutoffs = {config.eval_cutoff};
  eval_config.num_negatives = config.eval_num_negatives;
  eval_config.seed = config.eval_seed;

  auto run_eval = [&]() {
    MetricReport report = evaluate(model, split.valid, corpus, eval_config);
    double metric = report.aggregate.recall.at(config.eval_cutoff);
    TrainLogEntry entry{s.step, s.steps_since_eval > 0 ? s.loss_accum / s.steps_since_eval : 0.0,
                        metric};
    result.log.push_back(entry);
    {
      std::ofstream log_out(dir / "log.jsonl", std::ios::app);
      log_out << json{{"step", entry.step},
                      {"train_loss", entry.train_loss},
                      {"valid_recall", entry.valid_metric}}
                     .dump()
              << "\n";
      if (!log_out) throw DataError("cannot append training log in " + checkpoint_dir);
    }
    if (metric > s.best_metric) {
      s.best_metric = metric;
      s.best_step = s.step;
      s.rounds_since_improvement = 0;
      model.save((dir / "best").string());
    } else {
      s.rounds_since_improvement += 1;
    }
    s.loss_accum = 0.0;
    s.steps_since_eval = 0;
    model.save((dir / "model").string());
    save_trainer_state(dir, s, adam, train_rng, config);
  };

  std::vector<std::size_t> order = epoch_order(split.train.size(), config.seed, s.epoch);
  while (true) {
    if (s.rounds_since_improvement >= config.patience_rounds) break;
    if (config.max_steps > 0 && s.step >= config.max_steps) break;

    if (s.cursor >= order.size()) {
      s.epoch += 1;
      s.cursor = 0;
      order = epoch_order(split.train.size(), config.seed, s.epoch);
    }
    std::size_t end = std::min(s.cursor + static_cast<std::size_t>(config.batch_size), order.size());
    std::vector<TrainExample> batch;
    batch.reserve(end - s.cursor);
    for (std::size_t i = s.cursor; i < end; ++i) {
      const SplitInstance& inst = split.train[order[i]];
      TrainExample ex;
      ex.history = inst.history;
      ex.positive = inst.target;
      ex.negatives = sampler.sample(inst.user_id, inst.target, config.num_negatives, train_rng);
      batch.push_back(std::move(ex));
    }
    s.cursor = end;

    double loss = train_step(model, batch, adam, config, &train_rng);
    s.loss_accum += loss;
    s.steps_since_eval += 1;
    s.step += 1;

    if (s.step % config.eval_every_steps == 0) run_eval();
  }

  // Final validation so short or max_steps-bounded runs still report and
  // checkpoint their last state.
  if (s.steps_since_eval > 0) run_eval();

  result.steps = s.step;
  result.best_metric = s.best_metric;
  result.best_step = s.best_step;
  result.stopped_by_patience = s.rounds_since_improvement >= config.patience_rounds;
  return result;
}

}  // namespace textrec

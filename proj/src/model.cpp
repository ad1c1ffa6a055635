#include "textrec/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nlohmann/json.hpp"
#include "textrec/pipeline.hpp"

namespace textrec {

namespace fs = std::filesystem;
using nlohmann::json;

LossReduction parse_loss_reduction(const std::string& name) {
  if (name == "mean") return LossReduction::mean;
  if (name == "sum") return LossReduction::sum;
  throw ConfigError("unknown loss reduction: " + name);
}

std::string to_string(LossReduction r) { return r == LossReduction::mean ? "mean" : "sum"; }

std::vector<Tensor*> RankingModel::trainable_parameters() {
  std::vector<Tensor*> out;
  for (Tensor* t : parameters())
    if (t->trainable) out.push_back(t);
  return out;
}

double sampled_softmax_loss(const std::vector<double>& logits, std::vector<double>* d_logits) {
  if (logits.empty()) throw DataError("sampled_softmax_loss: no logits");
  double max_logit = logits[0];
  for (double v : logits) max_logit = std::max(max_logit, v);
  if (!std::isfinite(max_logit)) throw NumericError("non-finite logit in sampled cross-entropy");
  double denom = 0.0;
  for (double v : logits) denom += std::exp(v - max_logit);
  double lse = max_logit + std::log(denom);
  if (d_logits != nullptr) {
    d_logits->resize(logits.size());
    for (std::size_t c = 0; c < logits.size(); ++c)
      (*d_logits)[c] = std::exp(logits[c] - lse) - (c == 0 ? 1.0 : 0.0);
  }
  return lse - logits[0];
}

TextModel::TextModel(EncoderWeights weights, Tokenizer tokenizer, const Corpus& corpus,
                     TextModelConfig config)
    : weights_(std::move(weights)), tokenizer_(std::move(tokenizer)), config_(config) {
  if (weights_.config.vocab_size != tokenizer_.vocab_size())
    throw ConfigError("encoder vocab_size " + std::to_string(weights_.config.vocab_size) +
                      " does not match tokenizer vocabulary " + std::to_string(tokenizer_.vocab_size()));
  if (config_.max_items < 1) throw ConfigError("max_items must be >= 1");
  if (config_.max_title_tokens < 1) throw ConfigError("max_title_tokens must be >= 1");

  item_tokens_.reserve(corpus.items.size());
  item_inputs_.reserve(corpus.items.size());
  for (const ItemRecord& item : corpus.items) {
    std::vector<int> tokens =
        tokenize_item(item, tokenizer_, config_.max_title_tokens, config_.item_variant);
    for (int id : tokens) {
      ++title_tokens_total_;
      if (id == Tokenizer::kUnk) ++title_tokens_unk_;
    }
    item_inputs_.push_back(build_item_input(tokens, weights_.config.direction));
    item_tokens_.push_back(std::move(tokens));
  }
}

TokenizedInput TextModel::user_input(std::span<const ItemIndex> history) const {
  std::span<const ItemIndex> recent = truncate_history(history, config_.max_items);
  std::vector<std::vector<int>> parts;
  parts.reserve(recent.size());
  for (ItemIndex item : recent) {
    if (item < 0 || item >= static_cast<ItemIndex>(item_tokens_.size()))
      throw DataError("history item index " + std::to_string(item) + " outside catalog");
    parts.push_back(item_tokens_[item]);
  }
  return build_user_input(parts, weights_.config.direction, config_.user_variant, tokenizer_,
                          weights_.config.max_positions);
}

const TokenizedInput& TextModel::item_input(ItemIndex item) const {
  if (item < 0 || item >= static_cast<ItemIndex>(item_inputs_.size()))
    throw DataError("item index " + std::to_string(item) + " outside catalog");
  return item_inputs_[item];
}

Vec TextModel::user_representation(std::span<const ItemIndex> history) {
  TokenizedInput input = user_input(history);
  Mat states = encode(input, weights_);
  return pool(states, input);
}

Vec TextModel::item_representation(ItemIndex item) {
  const TokenizedInput& input = item_input(item);
  Mat states = encode(input, weights_);
  return pool(states, input);
}

double TextModel::train_batch(std::span<const TrainExample> batch, LossReduction reduction,
                              Rng* dropout_rng) {
  if (batch.empty()) throw DataError("empty training batch");
  DropoutContext dropout{dropout_rng, weights_.config.dropout_rate};
  const double scale = reduction == LossReduction::mean ? 1.0 / static_cast<double>(batch.size()) : 1.0;

  double total = 0.0;
  for (const TrainExample& ex : batch) {
    if (ex.negatives.empty()) throw DataError("training example without negatives");
    TokenizedInput uin = user_input(ex.history);
    ForwardTrace utrace;
    Mat ustates = encode(uin, weights_, &utrace, dropout);
    Vec hu = pool(ustates, uin);

    std::vector<ItemIndex> candidates;
    candidates.reserve(1 + ex.negatives.size());
    candidates.push_back(ex.positive);
    candidates.insert(candidates.end(), ex.negatives.begin(), ex.negatives.end());

    std::vector<ForwardTrace> traces(candidates.size());
    std::vector<Vec> hv(candidates.size());
    std::vector<double> logits(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const TokenizedInput& cin = item_input(candidates[c]);
      Mat cstates = encode(cin, weights_, &traces[c], dropout);
      hv[c] = pool(cstates, cin);
      logits[c] = hu.dot(hv[c]);
    }

    std::vector<double> d_logits;
    total += sampled_softmax_loss(logits, &d_logits);

    Vec dhu = Vec::Zero(hu.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      dhu += (d_logits[c] * scale) * hv[c];
      pooled_backward(item_input(candidates[c]), weights_, traces[c], (d_logits[c] * scale) * hu);
    }
    pooled_backward(uin, weights_, utrace, dhu);
  }
  return reduction == LossReduction::mean ? total / static_cast<double>(batch.size()) : total;
}

void TextModel::save(const std::string& dir) const {
  fs::create_directories(dir);
  save_encoder_checkpoint(dir, weights_);
  tokenizer_.save((fs::path(dir) / "vocab.tsv").string());
  json meta{{"type", "text"},
            {"max_items", config_.max_items},
            {"max_title_tokens", config_.max_title_tokens},
            {"item_variant", to_string(config_.item_variant)},
            {"user_variant", to_string(config_.user_variant)}};
  std::ofstream out(fs::path(dir) / "model.json");
  out << meta.dump(2) << "\n";
  if (!out) throw DataError("cannot write model metadata in " + dir);
}

std::map<std::string, double> TextModel::diagnostics() const {
  double frac = title_tokens_total_ > 0
                    ? static_cast<double>(title_tokens_unk_) / static_cast<double>(title_tokens_total_)
                    : 0.0;
  return {{"unknown_title_token_fraction", frac}};
}

IdModel::IdModel(EncoderConfig base_config, const Corpus& corpus, std::vector<ItemIndex> known_items,
                 IdModelConfig config)
    : config_(config) {
  if (config_.max_items < 1) throw ConfigError("max_items must be >= 1");
  index_token_.assign(corpus.items.size(), -1);
  index_item_id_.reserve(corpus.items.size());
  for (const ItemRecord& item : corpus.items) index_item_id_.push_back(item.item_id);

  token_item_ids_.reserve(known_items.size());
  for (ItemIndex item : known_items) {
    if (item < 0 || item >= static_cast<ItemIndex>(corpus.items.size()))
      throw DataError("id vocabulary references item index outside catalog");
    const std::string& id = corpus.items[item].item_id;
    int token = Tokenizer::kNumSpecials + static_cast<int>(token_item_ids_.size());
    if (!item_id_token_.emplace(id, token).second)
      throw DataError("duplicate item in id vocabulary: " + id);
    token_item_ids_.push_back(id);
    index_token_[item] = token;
  }

  base_config.vocab_size = Tokenizer::kNumSpecials + static_cast<int>(token_item_ids_.size());
  base_config.direction = Direction::AR;
  weights_ = EncoderWeights::init(base_config);
}

int IdModel::token_of(ItemIndex item) const {
  if (item < 0 || item >= static_cast<ItemIndex>(index_token_.size())) return -1;
  return index_token_[item];
}

TokenizedInput IdModel::history_input(std::span<const ItemIndex> history) {
  std::span<const ItemIndex> recent = truncate_history(history, config_.max_items);
  TokenizedInput input;
  input.direction = Direction::AR;
  for (ItemIndex item : recent) {
    int token = token_of(item);
    if (token < 0) {
      token = Tokenizer::kUnk;
      ++unseen_history_items_;
    }
    input.ids.push_back(token);
    input.mask.push_back(1);
    int pos = static_cast<int>(input.ids.size());
    input.item_boundaries.emplace_back(pos - 1, pos);
  }
  if (input.ids.empty()) {  // cold user: a single unknown-context token
    input.ids.push_back(Tokenizer::kUnk);
    input.mask.push_back(1);
  }
  return input;
}

Vec IdModel::user_representation(std::span<const ItemIndex> history) {
  TokenizedInput input = history_input(history);
  Mat states = encode(input, weights_);
  return pool(states, input, /*require_special_token=*/false);
}

Vec IdModel::item_representation(ItemIndex item) {
  int token = token_of(item);
  if (token >= 0) return weights_.word_embedding.value.row(token).transpose();

  ++unseen_item_requests_;
  std::string id = item >= 0 && item < static_cast<ItemIndex>(index_item_id_.size())
                       ? index_item_id_[item]
                       : std::to_string(item);
  Rng rng(mix64(0x69645f756e736e00ull, fnv1a(id)));
  Vec v(weights_.config.model_dim);
  for (int i = 0; i < v.size(); ++i) {
    double z;
    do {
      z = standard_normal(rng);
    } while (std::abs(z) > 2.0);
    v(i) = 0.02 * z;
  }
  return v;
}

double IdModel::train_batch(std::span<const TrainExample> batch, LossReduction reduction,
                            Rng* dropout_rng) {
  if (batch.empty()) throw DataError("empty training batch");
  DropoutContext dropout{dropout_rng, weights_.config.dropout_rate};
  const double scale = reduction == LossReduction::mean ? 1.0 / static_cast<double>(batch.size()) : 1.0;
  Mat& emb = weights_.word_embedding.value;

  double total = 0.0;
  for (const TrainExample& ex : batch) {
    if (ex.negatives.empty()) throw DataError("training example without negatives");
    TokenizedInput input = history_input(ex.history);
    ForwardTrace trace;
    Mat states = encode(input, weights_, &trace, dropout);
    Vec hu = states.row(input.last_index()).transpose();

    std::vector<int> tokens;
    tokens.reserve(1 + ex.negatives.size());
    tokens.push_back(token_of(ex.positive));
    for (ItemIndex item : ex.negatives) tokens.push_back(token_of(item));
    for (int t : tokens)
      if (t < 0) throw DataError("training candidate outside id vocabulary");

    std::vector<double> logits(tokens.size());
    for (std::size_t c = 0; c < tokens.size(); ++c) logits[c] = emb.row(tokens[c]).dot(hu);

    std::vector<double> d_logits;
    total += sampled_softmax_loss(logits, &d_logits);

    Vec dhu = Vec::Zero(hu.size());
    for (std::size_t c = 0; c < tokens.size(); ++c) {
      dhu += (d_logits[c] * scale) * emb.row(tokens[c]).transpose();
      if (weights_.word_embedding.trainable)
        weights_.word_embedding.grad.row(tokens[c]) += (d_logits[c] * scale) * hu.transpose();
    }
    pooled_backward(input, weights_, trace, dhu);
  }
  return reduction == LossReduction::mean ? total / static_cast<double>(batch.size()) : total;
}

void IdModel::save(const std::string& dir) const {
  fs::create_directories(dir);
  save_encoder_checkpoint(dir, weights_);
  std::ofstream items(fs::path(dir) / "items.tsv");
  for (std::size_t i = 0; i < token_item_ids_.size(); ++i)
    items << token_item_ids_[i] << "\t" << (Tokenizer::kNumSpecials + i) << "\n";
  if (!items) throw DataError("cannot write id vocabulary in " + dir);
  json meta{{"type", "id"}, {"max_items", config_.max_items}};
  std::ofstream out(fs::path(dir) / "model.json");
  out << meta.dump(2) << "\n";
  if (!out) throw DataError("cannot write model metadata in " + dir);
}

std::map<std::string, double> IdModel::diagnostics() const {
  return {{"unseen_item_requests", static_cast<double>(unseen_item_requests_)},
          {"unseen_history_items", static_cast<double>(unseen_history_items_)}};
}

std::unique_ptr<RankingModel> load_model(const std::string& dir, const Corpus& corpus) {
  std::ifstream meta_in(fs::path(dir) / "model.json");
  if (!meta_in) throw DataError("missing model.json in " + dir);
  json meta = json::parse(meta_in);
  const std::string type = meta.at("type").get<std::string>();

  if (type == "text") {
    TextModelConfig cfg;
    cfg.max_items = meta.at("max_items").get<int>();
    cfg.max_title_tokens = meta.at("max_title_tokens").get<int>();
    cfg.item_variant = parse_item_text_variant(meta.at("item_variant").get<std::string>());
    cfg.user_variant = parse_user_text_variant(meta.at("user_variant").get<std::string>());
    Tokenizer tokenizer = Tokenizer::load((fs::path(dir) / "vocab.tsv").string());
    EncoderWeights weights = load_encoder_checkpoint(dir);
    return std::make_unique<TextModel>(std::move(weights), std::move(tokenizer), corpus, cfg);
  }
  if (type == "id") {
    IdModelConfig cfg;
    cfg.max_items = meta.at("max_items").get<int>();
    EncoderWeights weights = load_encoder_checkpoint(dir);
    std::ifstream items_in(fs::path(dir) / "items.tsv");
    if (!items_in) throw DataError("missing items.tsv in " + dir);
    std::vector<ItemIndex> known;
    std::string line;
    while (std::getline(items_in, line)) {
      if (line.empty()) continue;
      std::size_t tab = line.find('\t');
      std::string id = tab == std::string::npos ? line : line.substr(0, tab);
      ItemIndex idx = corpus.find_item(id);
      if (idx < 0)
        throw DataError("id-model item '" + id + "' missing from the current catalog");
      known.push_back(idx);
    }
    EncoderConfig base = weights.config;
    auto model = std::make_unique<IdModel>(base, corpus, std::move(known), cfg);
    // Replace the freshly initialized tensors with the stored ones.
    auto stored = weights.tensors();
    auto live = model->encoder().tensors();
    if (stored.size() != live.size()) throw DataError("id checkpoint tensor list mismatch in " + dir);
    for (std::size_t i = 0; i < live.size(); ++i) {
      if (live[i]->value.rows() != stored[i]->value.rows() ||
          live[i]->value.cols() != stored[i]->value.cols())
        throw DataError("id checkpoint shape mismatch for " + live[i]->name);
      live[i]->value = stored[i]->value;
    }
    return model;
  }
  throw DataError("unknown model type '" + type + "' in " + dir);
}

}  // namespace textrec

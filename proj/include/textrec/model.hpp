#pragma once

#include <map>
#include <memory>
#include <unordered_map>

#include "textrec/encoder.hpp"

namespace textrec {

enum class LossReduction { mean, sum };

LossReduction parse_loss_reduction(const std::string& name);
std::string to_string(LossReduction r);

// Relevance of an item for a user: inner product of the tower outputs.
inline double score(const Vec& user, const Vec& item) { return user.dot(item); }

// Softmax cross-entropy over one positive (slot 0) and sampled negatives,
// stabilized by max subtraction. Optionally returns d(loss)/d(logit).
double sampled_softmax_loss(const std::vector<double>& logits, std::vector<double>* d_logits = nullptr);

struct TrainExample {
  std::vector<ItemIndex> history;  // oldest -> newest, untruncated
  ItemIndex positive = -1;
  std::vector<ItemIndex> negatives;
};

// Two-tower sequential ranker: a user representation built from interaction
// history and per-item representations, scored by inner product and trained
// with sampled softmax cross-entropy.
class RankingModel {
 public:
  virtual ~RankingModel() = default;

  virtual Vec user_representation(std::span<const ItemIndex> history) = 0;
  virtual Vec item_representation(ItemIndex item) = 0;

  // Accumulates gradients over the batch; pass a dropout rng only when
  // training. Returns the reduced loss.
  virtual double train_batch(std::span<const TrainExample> batch, LossReduction reduction,
                             Rng* dropout_rng) = 0;

  virtual std::vector<Tensor*> parameters() = 0;
  std::vector<Tensor*> trainable_parameters();
  virtual void zero_grads() = 0;
  virtual std::int64_t parameter_count(bool trainable_only) const = 0;

  virtual int representation_dim() const = 0;
  virtual std::string kind() const = 0;
  virtual void save(const std::string& dir) const = 0;

  // Counters/ratios surfaced in evaluation reports (unknown tokens, unseen items).
  virtual std::map<std::string, double> diagnostics() const = 0;
};

struct TextModelConfig {
  int max_items = 10;
  int max_title_tokens = 40;
  ItemTextVariant item_variant = ItemTextVariant::plain;
  UserTextVariant user_variant = UserTextVariant::plain;
};

// Items and users are encoded from their text by one shared encoder.
class TextModel : public RankingModel {
 public:
  TextModel(EncoderWeights weights, Tokenizer tokenizer, const Corpus& corpus,
            TextModelConfig config);

  Vec user_representation(std::span<const ItemIndex> history) override;
  Vec item_representation(ItemIndex item) override;
  double train_batch(std::span<const TrainExample> batch, LossReduction reduction,
                     Rng* dropout_rng) override;
  std::vector<Tensor*> parameters() override { return weights_.tensors(); }
  void zero_grads() override { weights_.zero_grads(); }
  std::int64_t parameter_count(bool trainable_only) const override {
    return weights_.count_parameters(trainable_only);
  }
  int representation_dim() const override { return weights_.config.model_dim; }
  std::string kind() const override { return "text"; }
  void save(const std::string& dir) const override;
  std::map<std::string, double> diagnostics() const override;

  EncoderWeights& encoder() { return weights_; }
  const EncoderWeights& encoder() const { return weights_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  const TextModelConfig& config() const { return config_; }
  TokenizedInput user_input(std::span<const ItemIndex> history) const;
  const TokenizedInput& item_input(ItemIndex item) const;

 private:
  EncoderWeights weights_;
  Tokenizer tokenizer_;
  TextModelConfig config_;
  std::vector<std::vector<int>> item_tokens_;    // per catalog item, variant applied
  std::vector<TokenizedInput> item_inputs_;      // ready-to-encode, direction applied
  std::int64_t title_tokens_total_ = 0;
  std::int64_t title_tokens_unk_ = 0;
};

struct IdModelConfig {
  int max_items = 10;
};

// Sequential baseline over item identities: the catalog is the vocabulary,
// user state comes from the causal encoder over id tokens, and scoring ties
// the output to the input id embedding.
class IdModel : public RankingModel {
 public:
  // `known_items` fixes the id vocabulary (training-time catalog). Items
  // outside it fall back to [UNK] in histories and to a deterministic random
  // vector as candidates; both are counted in diagnostics.
  IdModel(EncoderConfig base_config, const Corpus& corpus, std::vector<ItemIndex> known_items,
          IdModelConfig config);

  Vec user_representation(std::span<const ItemIndex> history) override;
  Vec item_representation(ItemIndex item) override;
  double train_batch(std::span<const TrainExample> batch, LossReduction reduction,
                     Rng* dropout_rng) override;
  std::vector<Tensor*> parameters() override { return weights_.tensors(); }
  void zero_grads() override { weights_.zero_grads(); }
  std::int64_t parameter_count(bool trainable_only) const override {
    return weights_.count_parameters(trainable_only);
  }
  int representation_dim() const override { return weights_.config.model_dim; }
  std::string kind() const override { return "id"; }
  void save(const std::string& dir) const override;
  std::map<std::string, double> diagnostics() const override;

  EncoderWeights& encoder() { return weights_; }
  int token_of(ItemIndex item) const;  // -1 when outside the id vocabulary
  std::int64_t unseen_item_requests() const { return unseen_item_requests_; }

 private:
  TokenizedInput history_input(std::span<const ItemIndex> history);

  EncoderWeights weights_;
  IdModelConfig config_;
  std::vector<std::string> token_item_ids_;  // row (token - specials) -> item_id
  std::unordered_map<std::string, int> item_id_token_;
  std::vector<int> index_token_;  // ItemIndex -> token, -1 if unknown
  std::vector<std::string> index_item_id_;
  std::int64_t unseen_item_requests_ = 0;
  std::int64_t unseen_history_items_ = 0;
};

// Reads model.json in `dir` and restores the matching model type. The corpus
// supplies item text / identity for the current catalog.
std::unique_ptr<RankingModel> load_model(const std::string& dir, const Corpus& corpus);

}  // namespace textrec

#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "textrec/textualize.hpp"

namespace textrec {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct EncoderConfig {
  int num_layers = 2;
  int model_dim = 64;
  int num_heads = 2;
  int ffn_dim = 128;
  int max_positions = 512;
  int vocab_size = 0;
  Direction direction = Direction::NAR;
  double dropout_rate = 0.1;
  double ln_epsilon = 1e-5;
  std::uint64_t seed = 0;

  int head_dim() const { return model_dim / num_heads; }
  void validate() const;
};

// A named parameter matrix with its gradient accumulator.
struct Tensor {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  Tensor() = default;
  Tensor(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
  void zero_grad() { grad.setZero(); }
  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
};

enum class LoraTarget { wq, wk, wv, wo };

LoraTarget parse_lora_target(const std::string& name);
std::string to_string(LoraTarget t);

struct LoRAConfig {
  int rank = 0;
  double alpha = 1.0;
  std::vector<LoraTarget> targets = {LoraTarget::wq, LoraTarget::wv};

  double scaling() const { return alpha / rank; }
};

struct LoraPair {
  Tensor a;  // [d x R]
  Tensor b;  // [R x d], zero at init so the adapted forward equals the base
};

struct LayerWeights {
  Tensor wq, wk, wv, wo;         // [d x d], applied as row-vector right products
  Tensor ln1_scale, ln1_offset;  // [1 x d]
  Tensor w0;                     // [d x ffn]
  Tensor w1;                     // [ffn x d]
  Tensor ln2_scale, ln2_offset;

  std::map<LoraTarget, LoraPair> adapters;

  Tensor& base(LoraTarget t);
  const Tensor& base(LoraTarget t) const;
};

struct EncoderWeights {
  EncoderConfig config;
  Tensor word_embedding;      // [vocab x d]
  Tensor position_embedding;  // [max_positions x d]
  std::vector<LayerWeights> layers;
  std::optional<LoRAConfig> lora;

  // Truncated normal (std 0.02) matrices, unit layer-norm scales, zero offsets.
  static EncoderWeights init(const EncoderConfig& config);

  // Adds zero-initialized rank-R adapters on the configured targets and
  // freezes every base tensor; only adapters remain trainable.
  void apply_lora(const LoRAConfig& lora_config);

  // W + (alpha/R) * A * B when the target carries an adapter, W otherwise.
  Mat effective(int layer, LoraTarget t) const;

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<Tensor*> trainable_tensors();
  std::int64_t count_parameters(bool trainable_only = false) const;
  void zero_grads();
};

struct LayerTrace {
  Mat x_in, q, k, v;
  std::vector<Mat> attn;  // per-head [T x T]
  Mat head_concat;
  Mat drop_attn, drop_ffn;  // inverted-dropout masks; empty when inactive
  Mat ln1_norm, ln2_norm;   // normalized activations
  Vec ln1_inv_std, ln2_inv_std;
  Mat s_mid;                // block state after the first layer norm
  Mat ffn_pre, ffn_hidden;
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
};

// Supplies dropout randomness during training; default (no rng) disables it.
struct DropoutContext {
  Rng* rng = nullptr;
  double rate = 0.0;
  bool active() const { return rng != nullptr && rate > 0.0; }
};

// F0[i] = E[token_i] + P[i].
Mat embed(const TokenizedInput& input, const EncoderWeights& weights);

// One post-norm block: multi-head masked self-attention, residual + layer
// norm, ReLU feed-forward, residual + layer norm.
Mat attention_block(const Mat& x, const LayerWeights& layer, const EncoderConfig& config,
                    std::span<const std::uint8_t> key_mask, bool causal);

// embed -> num_layers blocks. Causality and pooling follow input.direction.
Mat encode(const TokenizedInput& input, const EncoderWeights& weights, ForwardTrace* trace = nullptr,
           const DropoutContext& dropout = {});

// NAR: hidden state of [CLS] (row 0); AR: hidden state at the last real token.
Vec pool(const Mat& states, const TokenizedInput& input, bool require_special_token = true);

// Accumulates parameter gradients for d(anything)/d(states); returns nothing,
// gradients land in the weights' grad buffers.
void encode_backward(const TokenizedInput& input, EncoderWeights& weights, const ForwardTrace& trace,
                     const Mat& d_states);

// Scatter a pooled-vector gradient to its source row, then encode_backward.
void pooled_backward(const TokenizedInput& input, EncoderWeights& weights, const ForwardTrace& trace,
                     const Vec& d_pooled);

// Checkpoint directory: config.json + one raw float64 blob per named tensor.
void save_encoder_checkpoint(const std::string& dir, const EncoderWeights& weights);
EncoderWeights load_encoder_checkpoint(const std::string& dir);

// Tensor blob IO shared with the optimizer state.
void write_tensor_blob(const std::string& path, const Mat& m);
Mat read_tensor_blob(const std::string& path);

}  // namespace textrec

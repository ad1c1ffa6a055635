#include "textrec/encoder.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "nlohmann/json.hpp"

namespace textrec {

namespace fs = std::filesystem;
using nlohmann::json;

void EncoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (model_dim < 1) throw ConfigError("model_dim must be >= 1");
  if (num_heads < 1) throw ConfigError("num_heads must be >= 1");
  if (model_dim % num_heads != 0)
    throw ConfigError("model_dim " + std::to_string(model_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  if (ffn_dim < 1) throw ConfigError("ffn_dim must be >= 1");
  if (max_positions < 2) throw ConfigError("max_positions must be >= 2");
  if (vocab_size < Tokenizer::kNumSpecials) throw ConfigError("vocab_size too small");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout_rate must be in [0, 1)");
  if (ln_epsilon <= 0.0) throw ConfigError("ln_epsilon must be > 0");
}

LoraTarget parse_lora_target(const std::string& name) {
  if (name == "wq") return LoraTarget::wq;
  if (name == "wk") return LoraTarget::wk;
  if (name == "wv") return LoraTarget::wv;
  if (name == "wo") return LoraTarget::wo;
  throw ConfigError("unknown adapter target '" + name + "' (expected wq|wk|wv|wo)");
}

std::string to_string(LoraTarget t) {
  switch (t) {
    case LoraTarget::wq: return "wq";
    case LoraTarget::wk: return "wk";
    case LoraTarget::wv: return "wv";
    case LoraTarget::wo: return "wo";
  }
  return "?";
}

Tensor& LayerWeights::base(LoraTarget t) {
  switch (t) {
    case LoraTarget::wq: return wq;
    case LoraTarget::wk: return wk;
    case LoraTarget::wv: return wv;
    case LoraTarget::wo: return wo;
  }
  return wq;
}

const Tensor& LayerWeights::base(LoraTarget t) const {
  return const_cast<LayerWeights*>(this)->base(t);
}

namespace {

// Normal(0, std), resampled until within two standard deviations.
void fill_trunc_normal(Mat& m, double std_dev, Rng& rng) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      double z;
      do {
        z = standard_normal(rng);
      } while (std::abs(z) > 2.0);
      m(r, c) = z * std_dev;
    }
  }
}

std::string layer_prefix(int l) { return "layer" + std::to_string(l) + "."; }

}  // namespace

EncoderWeights EncoderWeights::init(const EncoderConfig& config) {
  config.validate();
  EncoderWeights w;
  w.config = config;
  Rng rng(mix64(config.seed, 0x656e636f64657200ull));
  const int d = config.model_dim;

  w.word_embedding = Tensor("word_embedding", config.vocab_size, d);
  fill_trunc_normal(w.word_embedding.value, 0.02, rng);
  w.position_embedding = Tensor("position_embedding", config.max_positions, d);
  fill_trunc_normal(w.position_embedding.value, 0.02, rng);

  w.layers.resize(config.num_layers);
  for (int l = 0; l < config.num_layers; ++l) {
    LayerWeights& lw = w.layers[l];
    const std::string p = layer_prefix(l);
    auto mat = [&](const char* name, int rows, int cols) {
      Tensor t(p + name, rows, cols);
      fill_trunc_normal(t.value, 0.02, rng);
      return t;
    };
    lw.wq = mat("wq", d, d);
    lw.wk = mat("wk", d, d);
    lw.wv = mat("wv", d, d);
    lw.wo = mat("wo", d, d);
    lw.ln1_scale = Tensor(p + "ln1_scale", 1, d);
    lw.ln1_scale.value.setOnes();
    lw.ln1_offset = Tensor(p + "ln1_offset", 1, d);
    lw.w0 = mat("w0", d, config.ffn_dim);
    lw.w1 = mat("w1", config.ffn_dim, d);
    lw.ln2_scale = Tensor(p + "ln2_scale", 1, d);
    lw.ln2_scale.value.setOnes();
    lw.ln2_offset = Tensor(p + "ln2_offset", 1, d);
  }
  return w;
}

void EncoderWeights::apply_lora(const LoRAConfig& lora_config) {
  if (lora_config.rank < 1) throw ConfigError("adapter rank must be >= 1");
  if (lora_config.targets.empty()) throw ConfigError("adapter target list is empty");
  if (lora) throw ConfigError("adapters already applied");
  lora = lora_config;

  Rng rng(mix64(config.seed, 0x6c6f726100000000ull));
  for (Tensor* t : tensors()) t->trainable = false;
  for (int l = 0; l < config.num_layers; ++l) {
    for (LoraTarget target : lora_config.targets) {
      const Tensor& w = layers[l].base(target);
      LoraPair pair;
      const std::string stem = layer_prefix(l) + to_string(target);
      pair.a = Tensor(stem + ".lora_a", w.value.rows(), lora_config.rank);
      fill_trunc_normal(pair.a.value, 0.02, rng);
      pair.b = Tensor(stem + ".lora_b", lora_config.rank, w.value.cols());
      layers[l].adapters[target] = std::move(pair);
    }
  }
}

Mat EncoderWeights::effective(int layer, LoraTarget t) const {
  const LayerWeights& lw = layers[layer];
  auto it = lw.adapters.find(t);
  if (it == lw.adapters.end()) return lw.base(t).value;
  return lw.base(t).value + lora->scaling() * (it->second.a.value * it->second.b.value);
}

std::vector<Tensor*> EncoderWeights::tensors() {
  std::vector<Tensor*> out;
  out.push_back(&word_embedding);
  out.push_back(&position_embedding);
  for (LayerWeights& lw : layers) {
    for (Tensor* t : {&lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.ln1_scale, &lw.ln1_offset, &lw.w0, &lw.w1,
                      &lw.ln2_scale, &lw.ln2_offset})
      out.push_back(t);
    for (auto& [target, pair] : lw.adapters) {
      out.push_back(&pair.a);
      out.push_back(&pair.b);
    }
  }
  return out;
}

std::vector<const Tensor*> EncoderWeights::tensors() const {
  auto mut = const_cast<EncoderWeights*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<Tensor*> EncoderWeights::trainable_tensors() {
  std::vector<Tensor*> out;
  for (Tensor* t : tensors())
    if (t->trainable) out.push_back(t);
  return out;
}

std::int64_t EncoderWeights::count_parameters(bool trainable_only) const {
  std::int64_t n = 0;
  for (const Tensor* t : tensors())
    if (!trainable_only || t->trainable) n += t->size();
  return n;
}

void EncoderWeights::zero_grads() {
  for (Tensor* t : tensors()) t->zero_grad();
}

Mat embed(const TokenizedInput& input, const EncoderWeights& weights) {
  const int n = input.length();
  const int d = weights.config.model_dim;
  if (n > weights.config.max_positions)
    throw DataError("sequence length " + std::to_string(n) + " exceeds max_positions " +
                    std::to_string(weights.config.max_positions));
  Mat f0(n, d);
  for (int i = 0; i < n; ++i) {
    int id = input.ids[i];
    if (id < 0 || id >= weights.config.vocab_size)
      throw DataError("token id " + std::to_string(id) + " out of vocabulary range");
    f0.row(i) = weights.word_embedding.value.row(id) + weights.position_embedding.value.row(i);
  }
  return f0;
}

namespace {

struct LnResult {
  Mat out;
  Mat norm;     // (x - mean) / std, before scale/offset
  Vec inv_std;  // per row
};

LnResult layer_norm(const Mat& x, const Tensor& scale, const Tensor& offset, double eps) {
  LnResult r;
  r.out.resize(x.rows(), x.cols());
  r.norm.resize(x.rows(), x.cols());
  r.inv_std.resize(x.rows());
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mean = x.row(i).mean();
    double var = (x.row(i).array() - mean).square().sum() * inv_d;
    double inv_std = 1.0 / std::sqrt(var + eps);
    r.inv_std(i) = inv_std;
    r.norm.row(i) = ((x.row(i).array() - mean) * inv_std).matrix();
    r.out.row(i) =
        r.norm.row(i).cwiseProduct(scale.value.row(0)) + offset.value.row(0);
  }
  return r;
}

// dL/dx for y = norm(x) * scale + offset, accumulating into scale/offset grads.
Mat layer_norm_backward(const Mat& dy, const Mat& norm, const Vec& inv_std, Tensor& scale,
                        Tensor& offset) {
  Mat dx(dy.rows(), dy.cols());
  const double inv_d = 1.0 / static_cast<double>(dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    Eigen::RowVectorXd g = dy.row(i).cwiseProduct(scale.value.row(0));
    double m1 = g.mean();
    double m2 = g.cwiseProduct(norm.row(i)).sum() * inv_d;
    dx.row(i) = ((g.array() - m1 - norm.row(i).array() * m2) * inv_std(i)).matrix();
    scale.grad.row(0) += dy.row(i).cwiseProduct(norm.row(i));
    offset.grad.row(0) += dy.row(i);
  }
  return dx;
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, const DropoutContext& ctx) {
  Mat mask(rows, cols);
  const double keep = 1.0 - ctx.rate;
  const double scale = 1.0 / keep;
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      mask(r, c) = uniform_real(*ctx.rng) < keep ? scale : 0.0;
  return mask;
}

// Scaled dot-product attention with key-padding and optional causal masking,
// post-norm residual wiring, ReLU feed-forward. Fills `trace` when given.
Mat block_forward(const Mat& x, const EncoderWeights& weights, int layer_index,
                  std::span<const std::uint8_t> key_mask, bool causal, LayerTrace* trace,
                  const DropoutContext& dropout) {
  const EncoderConfig& cfg = weights.config;
  const LayerWeights& lw = weights.layers[layer_index];
  const int n = static_cast<int>(x.rows());
  const int d = cfg.model_dim;
  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat q = x * weights.effective(layer_index, LoraTarget::wq);
  Mat k = x * weights.effective(layer_index, LoraTarget::wk);
  Mat v = x * weights.effective(layer_index, LoraTarget::wv);

  Mat heads(n, d);
  std::vector<Mat> attn(cfg.num_heads);
  for (int h = 0; h < cfg.num_heads; ++h) {
    auto qh = q.middleCols(h * dh, dh);
    auto kh = k.middleCols(h * dh, dh);
    Mat scores = qh * kh.transpose() * inv_sqrt_dh;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        bool allowed = (j < static_cast<int>(key_mask.size()) ? key_mask[j] != 0 : true);
        if (causal && j > i) allowed = false;
        if (!allowed) scores(i, j) = -std::numeric_limits<double>::infinity();
      }
    }
    Mat& a = attn[h];
    a.resize(n, n);
    for (int i = 0; i < n; ++i) {
      double row_max = scores.row(i).maxCoeff();
      if (row_max == -std::numeric_limits<double>::infinity()) {
        a.row(i).setZero();  // every key masked out
        continue;
      }
      if (!std::isfinite(row_max))
        throw NumericError("non-finite attention score in encoder layer " + std::to_string(layer_index));
      Eigen::RowVectorXd e = (scores.row(i).array() - row_max).exp().matrix();
      a.row(i) = e / e.sum();
    }
    heads.middleCols(h * dh, dh) = a * v.middleCols(h * dh, dh);
  }

  Mat attn_out = heads * weights.effective(layer_index, LoraTarget::wo);
  Mat drop_attn, drop_ffn;
  if (dropout.active()) {
    drop_attn = dropout_mask(n, d, dropout);
    attn_out = attn_out.cwiseProduct(drop_attn);
  }
  LnResult ln1 = layer_norm(x + attn_out, lw.ln1_scale, lw.ln1_offset, cfg.ln_epsilon);

  Mat ffn_pre = ln1.out * lw.w0.value;
  Mat ffn_hidden = ffn_pre.cwiseMax(0.0);
  Mat ffn_out = ffn_hidden * lw.w1.value;
  if (dropout.active()) {
    drop_ffn = dropout_mask(n, d, dropout);
    ffn_out = ffn_out.cwiseProduct(drop_ffn);
  }
  LnResult ln2 = layer_norm(ln1.out + ffn_out, lw.ln2_scale, lw.ln2_offset, cfg.ln_epsilon);

  if (!ln2.out.allFinite())
    throw NumericError("non-finite activation in encoder layer " + std::to_string(layer_index));

  if (trace != nullptr) {
    trace->x_in = x;
    trace->q = std::move(q);
    trace->k = std::move(k);
    trace->v = std::move(v);
    trace->attn = std::move(attn);
    trace->head_concat = std::move(heads);
    trace->drop_attn = std::move(drop_attn);
    trace->drop_ffn = std::move(drop_ffn);
    trace->ln1_norm = std::move(ln1.norm);
    trace->ln1_inv_std = std::move(ln1.inv_std);
    trace->s_mid = std::move(ln1.out);
    trace->ffn_pre = std::move(ffn_pre);
    trace->ffn_hidden = std::move(ffn_hidden);
    trace->ln2_norm = std::move(ln2.norm);
    trace->ln2_inv_std = std::move(ln2.inv_std);
  }
  return std::move(ln2.out);
}

}  // namespace

Mat attention_block(const Mat& x, const LayerWeights& layer, const EncoderConfig& config,
                    std::span<const std::uint8_t> key_mask, bool causal) {
  EncoderWeights scratch;
  scratch.config = config;
  scratch.layers.push_back(layer);
  scratch.layers[0].adapters.clear();  // adapter-aware paths go through encode()
  return block_forward(x, scratch, 0, key_mask, causal, nullptr, {});
}

Mat encode(const TokenizedInput& input, const EncoderWeights& weights, ForwardTrace* trace,
           const DropoutContext& dropout) {
  const bool causal = input.direction == Direction::AR;
  Mat states = embed(input, weights);
  if (trace != nullptr) trace->layers.assign(weights.config.num_layers, {});
  for (int l = 0; l < weights.config.num_layers; ++l) {
    LayerTrace* lt = trace != nullptr ? &trace->layers[l] : nullptr;
    states = block_forward(states, weights, l, input.mask, causal, lt, dropout);
  }
  return states;
}

Vec pool(const Mat& states, const TokenizedInput& input, bool require_special_token) {
  if (input.direction == Direction::NAR) {
    if (require_special_token && (input.ids.empty() || input.ids[0] != Tokenizer::kCls))
      throw DataError("bidirectional pooling expects [CLS] at position 0");
    return states.row(0);
  }
  int last = input.last_index();
  if (require_special_token && input.ids[last] != Tokenizer::kEos)
    throw DataError("causal pooling expects </s> at the last real position");
  return states.row(last);
}

namespace {

// Maps d(effective W) onto base and adapter gradients.
void accumulate_projection_grad(EncoderWeights& weights, int layer_index, LoraTarget target,
                                const Mat& d_eff) {
  LayerWeights& lw = weights.layers[layer_index];
  auto it = lw.adapters.find(target);
  if (it == lw.adapters.end()) {
    Tensor& w = lw.base(target);
    if (w.trainable) w.grad += d_eff;
    return;
  }
  const double s = weights.lora->scaling();
  LoraPair& pair = it->second;
  pair.a.grad += s * (d_eff * pair.b.value.transpose());
  pair.b.grad += s * (pair.a.value.transpose() * d_eff);
  Tensor& w = lw.base(target);
  if (w.trainable) w.grad += d_eff;
}

Mat block_backward(EncoderWeights& weights, int layer_index, const LayerTrace& t, const Mat& dy) {
  const EncoderConfig& cfg = weights.config;
  LayerWeights& lw = weights.layers[layer_index];
  const int n = static_cast<int>(dy.rows());
  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat d_res2 = layer_norm_backward(dy, t.ln2_norm, t.ln2_inv_std, lw.ln2_scale, lw.ln2_offset);
  Mat d_ffn_out = d_res2;
  if (t.drop_ffn.size() > 0) d_ffn_out = d_ffn_out.cwiseProduct(t.drop_ffn);
  if (lw.w1.trainable) lw.w1.grad += t.ffn_hidden.transpose() * d_ffn_out;
  Mat d_hidden = d_ffn_out * lw.w1.value.transpose();
  Mat d_pre = ((t.ffn_pre.array() > 0.0).cast<double>() * d_hidden.array()).matrix();
  if (lw.w0.trainable) lw.w0.grad += t.s_mid.transpose() * d_pre;
  Mat d_s = d_res2 + d_pre * lw.w0.value.transpose();

  Mat d_res1 = layer_norm_backward(d_s, t.ln1_norm, t.ln1_inv_std, lw.ln1_scale, lw.ln1_offset);
  Mat d_attn_out = d_res1;
  if (t.drop_attn.size() > 0) d_attn_out = d_attn_out.cwiseProduct(t.drop_attn);

  Mat wo_eff = weights.effective(layer_index, LoraTarget::wo);
  accumulate_projection_grad(weights, layer_index, LoraTarget::wo,
                             t.head_concat.transpose() * d_attn_out);
  Mat d_heads = d_attn_out * wo_eff.transpose();

  Mat dq(n, cfg.model_dim), dk(n, cfg.model_dim), dv(n, cfg.model_dim);
  for (int h = 0; h < cfg.num_heads; ++h) {
    const Mat& a = t.attn[h];
    auto vh = t.v.middleCols(h * dh, dh);
    auto dh_out = d_heads.middleCols(h * dh, dh);
    Mat da = dh_out * vh.transpose();
    dv.middleCols(h * dh, dh) = a.transpose() * dh_out;
    // softmax backward row-wise; masked entries have a == 0 and stay zero.
    Mat ds(n, n);
    for (int i = 0; i < n; ++i) {
      double dot = da.row(i).cwiseProduct(a.row(i)).sum();
      ds.row(i) = a.row(i).cwiseProduct((da.row(i).array() - dot).matrix());
    }
    ds *= inv_sqrt_dh;
    dq.middleCols(h * dh, dh) = ds * t.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * t.q.middleCols(h * dh, dh);
  }

  Mat wq_eff = weights.effective(layer_index, LoraTarget::wq);
  Mat wk_eff = weights.effective(layer_index, LoraTarget::wk);
  Mat wv_eff = weights.effective(layer_index, LoraTarget::wv);
  accumulate_projection_grad(weights, layer_index, LoraTarget::wq, t.x_in.transpose() * dq);
  accumulate_projection_grad(weights, layer_index, LoraTarget::wk, t.x_in.transpose() * dk);
  accumulate_projection_grad(weights, layer_index, LoraTarget::wv, t.x_in.transpose() * dv);

  Mat dx = d_res1;
  dx += dq * wq_eff.transpose();
  dx += dk * wk_eff.transpose();
  dx += dv * wv_eff.transpose();
  return dx;
}

}  // namespace

void encode_backward(const TokenizedInput& input, EncoderWeights& weights, const ForwardTrace& trace,
                     const Mat& d_states) {
  if (static_cast<int>(trace.layers.size()) != weights.config.num_layers)
    throw NumericError("forward trace does not match encoder depth");
  Mat dy = d_states;
  for (int l = weights.config.num_layers - 1; l >= 0; --l)
    dy = block_backward(weights, l, trace.layers[l], dy);
  // dy is now the embedding gradient.
  const int n = input.length();
  for (int i = 0; i < n; ++i) {
    if (weights.word_embedding.trainable) weights.word_embedding.grad.row(input.ids[i]) += dy.row(i);
    if (weights.position_embedding.trainable) weights.position_embedding.grad.row(i) += dy.row(i);
  }
}

void pooled_backward(const TokenizedInput& input, EncoderWeights& weights, const ForwardTrace& trace,
                     const Vec& d_pooled) {
  int row = input.direction == Direction::NAR ? 0 : input.last_index();
  Mat d_states = Mat::Zero(input.length(), weights.config.model_dim);
  d_states.row(row) = d_pooled;
  encode_backward(input, weights, trace, d_states);
}

void write_tensor_blob(const std::string& path, const Mat& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write tensor file: " + path);
  std::int64_t dims[2] = {m.rows(), m.cols()};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!out) throw DataError("short write on tensor file: " + path);
}

Mat read_tensor_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read tensor file: " + path);
  std::int64_t dims[2];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || dims[0] < 0 || dims[1] < 0) throw DataError("corrupt tensor header: " + path);
  Mat m(dims[0], dims[1]);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) throw DataError("truncated tensor file: " + path);
  return m;
}

namespace {

json config_to_json(const EncoderConfig& c) {
  return json{{"num_layers", c.num_layers},
              {"model_dim", c.model_dim},
              {"num_heads", c.num_heads},
              {"ffn_dim", c.ffn_dim},
              {"max_positions", c.max_positions},
              {"vocab_size", c.vocab_size},
              {"direction", to_string(c.direction)},
              {"dropout_rate", c.dropout_rate},
              {"ln_epsilon", c.ln_epsilon},
              {"seed", c.seed}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.direction = parse_direction(j.at("direction").get<std::string>());
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.ln_epsilon = j.at("ln_epsilon").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_encoder_checkpoint(const std::string& dir, const EncoderWeights& weights) {
  fs::create_directories(fs::path(dir) / "tensors");
  json meta;
  meta["encoder"] = config_to_json(weights.config);
  if (weights.lora) {
    json targets = json::array();
    for (LoraTarget t : weights.lora->targets) targets.push_back(to_string(t));
    meta["lora"] = {{"rank", weights.lora->rank}, {"alpha", weights.lora->alpha}, {"targets", targets}};
  }
  json names = json::array();
  for (const Tensor* t : weights.tensors()) names.push_back(t->name);
  meta["tensors"] = names;
  std::ofstream out(fs::path(dir) / "encoder.json");
  out << meta.dump(2) << "\n";
  if (!out) throw DataError("cannot write checkpoint metadata in " + dir);
  for (const Tensor* t : weights.tensors())
    write_tensor_blob((fs::path(dir) / "tensors" / (t->name + ".bin")).string(), t->value);
}

EncoderWeights load_encoder_checkpoint(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "encoder.json");
  if (!in) throw DataError("missing checkpoint metadata in " + dir);
  json meta = json::parse(in);
  EncoderWeights w = EncoderWeights::init(config_from_json(meta.at("encoder")));
  if (meta.contains("lora")) {
    LoRAConfig lc;
    lc.rank = meta["lora"].at("rank").get<int>();
    lc.alpha = meta["lora"].at("alpha").get<double>();
    lc.targets.clear();
    for (const auto& t : meta["lora"].at("targets")) lc.targets.push_back(parse_lora_target(t));
    w.apply_lora(lc);
  }
  for (Tensor* t : w.tensors()) {
    Mat stored = read_tensor_blob((fs::path(dir) / "tensors" / (t->name + ".bin")).string());
    if (stored.rows() != t->value.rows() || stored.cols() != t->value.cols())
      throw DataError("tensor shape mismatch for " + t->name + " in " + dir);
    t->value = std::move(stored);
  }
  return w;
}

}  // namespace textrec

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "textrec/trainer.hpp"

using namespace textrec;
namespace fs = std::filesystem;

namespace {

Corpus toy_corpus(int num_items) {
  std::vector<ItemRecord> items;
  for (int i = 0; i < num_items; ++i)
    items.push_back({"i" + std::to_string(i), "dA", "word" + std::to_string(i)});
  auto result = assemble_corpus(items, {});
  REQUIRE(result.event_errors.empty());
  return result.corpus;
}

SyntheticSpec train_spec() {
  SyntheticSpec spec;
  spec.num_domains = 2;
  spec.num_topics = 3;
  spec.vocab_per_topic = 6;
  spec.noise_vocab_per_domain = 8;
  spec.num_users = 30;
  spec.items_per_domain = 40;
  spec.min_interactions_per_user = 8;
  spec.max_interactions_per_user = 12;
  spec.seed = 404;
  return spec;
}

struct Fixture {
  Corpus corpus;
  DatasetSplit split;
};

Fixture make_fixture() {
  Fixture f;
  f.corpus = generate_synthetic_corpus(train_spec());
  f.corpus = five_core_filter(f.corpus, 3);
  auto sequences = build_sequences(f.corpus, MixStrategy::user_mixed, kNoDomain, 3);
  f.split = leave_one_out_split(sequences, f.corpus);
  REQUIRE(!f.split.train.empty());
  REQUIRE(!f.split.valid.empty());
  return f;
}

std::unique_ptr<TextModel> make_model(const Corpus& corpus, double dropout = 0.1) {
  Tokenizer tok = build_vocab(corpus);
  EncoderConfig c;
  c.num_layers = 1;
  c.model_dim = 8;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.max_positions = 64;
  c.vocab_size = tok.vocab_size();
  c.direction = Direction::NAR;
  c.dropout_rate = dropout;
  c.seed = 5;
  TextModelConfig mc;
  mc.max_items = 6;
  return std::make_unique<TextModel>(EncoderWeights::init(c), std::move(tok), corpus, mc);
}

TrainConfig quick_config() {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.batch_size = 8;
  c.num_negatives = 3;
  c.eval_every_steps = 2;
  c.patience_rounds = 10;
  c.max_steps = 4;
  c.seed = 17;
  c.eval_cutoff = 10;
  c.eval_num_negatives = 20;
  c.eval_seed = 99;
  return c;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void require_same_tree_bytes(const fs::path& a, const fs::path& b, const std::string& sub) {
  std::set<std::string> names_a, names_b;
  for (const auto& e : fs::directory_iterator(a / sub)) names_a.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b / sub)) names_b.insert(e.path().filename().string());
  REQUIRE(names_a == names_b);
  for (const auto& name : names_a) {
    INFO(sub << "/" << name);
    CHECK(read_bytes(a / sub / name) == read_bytes(b / sub / name));
  }
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  TrainConfig bad = c;
  bad.learning_rate = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.num_negatives = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.eval_every_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.patience_rounds = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.adam_beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.adam_epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("negative sampler forced draws, exclusions, and pool errors") {
  Corpus corpus = toy_corpus(4);  // i0..i3 in domain dA
  SplitInstance inst;
  inst.user_id = "u1";
  inst.target = 1;
  inst.history = {2};
  std::vector<SplitInstance> train = {inst};
  Rng rng(3);

  NegativeSampler plain(corpus, train, false);
  auto forced = plain.sample("u9", 0, 3, rng);
  std::set<ItemIndex> forced_set(forced.begin(), forced.end());
  CHECK(forced_set == std::set<ItemIndex>{1, 2, 3});
  CHECK_THROWS_WITH_AS(plain.sample("u9", 0, 4, rng), doctest::Contains("domain 'dA'"), DataError);

  NegativeSampler excluding(corpus, train, true);
  // u1 knows {1, 2}; sampling around target 0 leaves only item 3.
  for (int trial = 0; trial < 8; ++trial) {
    auto got = excluding.sample("u1", 0, 1, rng);
    CHECK(got == std::vector<ItemIndex>{3});
  }
  CHECK_THROWS_AS(excluding.sample("u1", 0, 2, rng), DataError);
  // Other users are unaffected by u1's history.
  auto other = excluding.sample("u9", 0, 3, rng);
  CHECK(std::set<ItemIndex>(other.begin(), other.end()) == std::set<ItemIndex>{1, 2, 3});
}

TEST_CASE("negative sampler draws eligible in-domain items deterministically") {
  Fixture f = make_fixture();
  NegativeSampler sampler(f.corpus, f.split.train, true);

  std::unordered_map<std::string, std::set<ItemIndex>> known;
  for (const auto& inst : f.split.train) {
    known[inst.user_id].insert(inst.target);
    known[inst.user_id].insert(inst.history.begin(), inst.history.end());
  }

  Rng rng(11);
  for (std::size_t i = 0; i < std::min<std::size_t>(f.split.train.size(), 60); ++i) {
    const auto& inst = f.split.train[i];
    auto negs = sampler.sample(inst.user_id, inst.target, 5, rng);
    REQUIRE(negs.size() == 5);
    std::set<ItemIndex> distinct(negs.begin(), negs.end());
    CHECK(distinct.size() == 5);
    for (ItemIndex n : negs) {
      CHECK(f.corpus.item_domain[n] == f.corpus.item_domain[inst.target]);
      CHECK(n != inst.target);
      CHECK(known[inst.user_id].count(n) == 0);
    }
  }

  Rng a(42), b(42);
  auto first = sampler.sample(f.split.train[0].user_id, f.split.train[0].target, 7, a);
  auto second = sampler.sample(f.split.train[0].user_id, f.split.train[0].target, 7, b);
  CHECK(first == second);
}

TEST_CASE("sampled softmax loss values, shift invariance, gradient sum") {
  std::vector<double> d;
  CHECK(sampled_softmax_loss({0.0, 0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(sampled_softmax_loss({1.5, 1.5, 1.5, 1.5, 1.5}) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(sampled_softmax_loss({20.0, 0.0, 0.0}) < 1e-8);

  std::vector<double> logits = {0.3, -1.2, 2.4, 0.0, -0.7};
  std::vector<double> shifted = logits;
  for (double& x : shifted) x += 7.3;
  CHECK(sampled_softmax_loss(logits) ==
        doctest::Approx(sampled_softmax_loss(shifted)).epsilon(1e-9));

  sampled_softmax_loss(logits, &d);
  REQUIRE(d.size() == logits.size());
  double sum = 0.0;
  for (double g : d) sum += g;
  CHECK(sum == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d[0] < 0.0);  // positive slot pushes its logit up
}

TEST_CASE("adam matches a hand-computed trajectory") {
  Tensor t;
  t.name = "w";
  t.value = Mat::Zero(2, 1);
  t.value(0, 0) = 0.5;
  t.value(1, 0) = -0.25;
  t.grad = Mat::Zero(2, 1);
  t.trainable = true;

  TrainConfig c;
  c.learning_rate = 0.01;
  AdamState state;

  t.grad(0, 0) = 1.0;
  t.grad(1, 0) = -2.0;
  adam_step({&t}, state, c);
  CHECK(t.value(0, 0) == doctest::Approx(0.4900000001).epsilon(1e-12));
  CHECK(t.value(1, 0) == doctest::Approx(-0.24000000005).epsilon(1e-12));

  t.grad(0, 0) = 0.5;
  t.grad(1, 0) = 0.5;
  adam_step({&t}, state, c);
  CHECK(t.value(0, 0) == doctest::Approx(0.48067820382981613).epsilon(1e-12));
  CHECK(t.value(1, 0) == doctest::Approx(-0.23530531837013346).epsilon(1e-12));
  CHECK(state.step == 2);
  CHECK(state.m.count("w") == 1);
  CHECK(state.v.count("w") == 1);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Fixture f = make_fixture();
  auto model = make_model(f.corpus, 0.0);
  std::vector<Mat> before;
  for (Tensor* t : model->parameters()) before.push_back(t->value);

  TrainConfig c = quick_config();
  c.learning_rate = 0.0;
  AdamState state;
  std::vector<TrainExample> batch = {
      {f.split.train[0].history, f.split.train[0].target, {1, 2, 3}}};
  double loss = train_step(*model, batch, state, c, nullptr);
  CHECK(std::isfinite(loss));
  CHECK(loss > 0.0);

  auto params = model->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    INFO(params[i]->name);
    CHECK((params[i]->value.array() == before[i].array()).all());
  }
}

TEST_CASE("one step reduces the loss on a fixed batch") {
  Fixture f = make_fixture();
  auto model = make_model(f.corpus, 0.0);
  std::vector<TrainExample> batch = {
      {f.split.train[0].history, f.split.train[0].target, {1, 2, 3}}};

  TrainConfig c = quick_config();
  c.learning_rate = 1e-3;
  AdamState state;
  double before = train_step(*model, batch, state, c, nullptr);
  model->zero_grads();
  double after = model->train_batch(batch, LossReduction::mean, nullptr);
  CHECK(after < before);
}

TEST_CASE("adapter training leaves base weights frozen") {
  Fixture f = make_fixture();
  auto model = make_model(f.corpus, 0.0);
  LoRAConfig lora;
  lora.rank = 2;
  model->encoder().apply_lora(lora);

  std::vector<Mat> before;
  std::vector<std::string> names;
  for (Tensor* t : model->parameters())
    if (!t->trainable) {
      before.push_back(t->value);
      names.push_back(t->name);
    }
  REQUIRE(!before.empty());

  TrainConfig c = quick_config();
  c.learning_rate = 1e-2;
  AdamState state;
  std::vector<TrainExample> batch = {
      {f.split.train[0].history, f.split.train[0].target, {1, 2, 3}},
      {f.split.train[1].history, f.split.train[1].target, {0, 2, 3}}};
  for (int step = 0; step < 3; ++step) train_step(*model, batch, state, c, nullptr);

  std::size_t idx = 0;
  for (Tensor* t : model->parameters()) {
    if (t->trainable) continue;
    INFO(names[idx]);
    CHECK(std::memcmp(t->value.data(), before[idx].data(),
                      sizeof(double) * t->value.size()) == 0);
    ++idx;
  }
  bool adapter_moved = false;
  for (Tensor* t : model->trainable_parameters())
    if (t->value.cwiseAbs().maxCoeff() > 0.0 && t->name.find("lora_b") != std::string::npos)
      adapter_moved = true;
  CHECK(adapter_moved);
}

TEST_CASE("fit stops after patience rounds without improvement") {
  Fixture f = make_fixture();
  auto model = make_model(f.corpus, 0.0);
  TrainConfig c = quick_config();
  c.learning_rate = 0.0;  // frozen weights => frozen validation metric
  c.patience_rounds = 1;
  c.max_steps = 0;
  fs::path dir = fs::temp_directory_path() / "textrec_fit_patience";
  fs::remove_all(dir);

  TrainResult result = fit(*model, f.split, f.corpus, c, dir.string());
  CHECK(result.stopped_by_patience);
  CHECK(result.steps == 4);  // two evaluation rounds at eval_every_steps == 2
  REQUIRE(result.log.size() == 2);
  CHECK(result.log[0].valid_metric == result.log[1].valid_metric);
  CHECK(result.best_step == 2);
  CHECK(result.best_metric == result.log[0].valid_metric);
}

TEST_CASE("short run still gets a final validation") {
  Fixture f = make_fixture();
  auto model = make_model(f.corpus, 0.0);
  TrainConfig c = quick_config();
  c.max_steps = 3;
  c.eval_every_steps = 1000;
  fs::path dir = fs::temp_directory_path() / "textrec_fit_short";
  fs::remove_all(dir);

  TrainResult result = fit(*model, f.split, f.corpus, c, dir.string());
  CHECK(result.steps == 3);
  REQUIRE(result.log.size() == 1);
  CHECK(result.log[0].step == 3);
  CHECK(!result.stopped_by_patience);
  CHECK(fs::exists(dir / "best" / "model.json"));
  CHECK(fs::exists(dir / "model" / "model.json"));
  CHECK(fs::exists(dir / "trainer.json"));
}

TEST_CASE("identical configuration reproduces the run") {
  Fixture f = make_fixture();
  fs::path dir_a = fs::temp_directory_path() / "textrec_fit_rep_a";
  fs::path dir_b = fs::temp_directory_path() / "textrec_fit_rep_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  TrainConfig c = quick_config();

  auto model_a = make_model(f.corpus);
  TrainResult ra = fit(*model_a, f.split, f.corpus, c, dir_a.string());
  auto model_b = make_model(f.corpus);
  TrainResult rb = fit(*model_b, f.split, f.corpus, c, dir_b.string());

  REQUIRE(ra.log.size() == rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(ra.log[i].step == rb.log[i].step);
    CHECK(ra.log[i].train_loss == rb.log[i].train_loss);
    CHECK(ra.log[i].valid_metric == rb.log[i].valid_metric);
  }
  CHECK(read_bytes(dir_a / "log.jsonl") == read_bytes(dir_b / "log.jsonl"));
  require_same_tree_bytes(dir_a, dir_b, "model/tensors");
}

TEST_CASE("best checkpoint reproduces its logged metric") {
  Fixture f = make_fixture();
  auto model = make_model(f.corpus, 0.0);
  TrainConfig c = quick_config();
  c.max_steps = 6;
  fs::path dir = fs::temp_directory_path() / "textrec_fit_best";
  fs::remove_all(dir);

  TrainResult result = fit(*model, f.split, f.corpus, c, dir.string());
  double top = -1.0;
  for (const auto& entry : result.log) top = std::max(top, entry.valid_metric);
  CHECK(result.best_metric == top);

  auto restored = load_model((dir / "best").string(), f.corpus);
  EvalConfig ec;
  ec.cutoffs = {c.eval_cutoff};
  ec.num_negatives = c.eval_num_negatives;
  ec.seed = c.eval_seed;
  MetricReport report = evaluate(*restored, f.split.valid, f.corpus, ec);
  CHECK(report.aggregate.recall.at(c.eval_cutoff) == result.best_metric);
}

TEST_CASE("resume reproduces the uninterrupted trajectory") {
  Fixture f = make_fixture();
  fs::path dir_full = fs::temp_directory_path() / "textrec_fit_full";
  fs::path dir_resumed = fs::temp_directory_path() / "textrec_fit_resumed";
  fs::remove_all(dir_full);
  fs::remove_all(dir_resumed);

  TrainConfig c = quick_config();  // dropout active: exercises the rng stream
  c.max_steps = 8;
  auto straight = make_model(f.corpus);
  TrainResult full = fit(*straight, f.split, f.corpus, c, dir_full.string());
  CHECK(full.steps == 8);

  TrainConfig half = c;
  half.max_steps = 4;
  auto first_leg = make_model(f.corpus);
  TrainResult r1 = fit(*first_leg, f.split, f.corpus, half, dir_resumed.string());
  CHECK(r1.steps == 4);

  // Fresh model object, as a new process would have; fit restores the weights.
  auto second_leg = make_model(f.corpus);
  TrainResult r2 = fit(*second_leg, f.split, f.corpus, c, dir_resumed.string());
  CHECK(r2.steps == 8);
  REQUIRE(r2.log.size() == full.log.size());

  CHECK(read_bytes(dir_full / "log.jsonl") == read_bytes(dir_resumed / "log.jsonl"));
  CHECK(read_bytes(dir_full / "rng.txt") == read_bytes(dir_resumed / "rng.txt"));
  require_same_tree_bytes(dir_full, dir_resumed, "model/tensors");
  require_same_tree_bytes(dir_full, dir_resumed, "adam");
}

TEST_CASE("resume with a different configuration is rejected") {
  Fixture f = make_fixture();
  fs::path dir = fs::temp_directory_path() / "textrec_fit_mismatch";
  fs::remove_all(dir);
  TrainConfig c = quick_config();
  auto model = make_model(f.corpus);
  fit(*model, f.split, f.corpus, c, dir.string());

  TrainConfig changed = c;
  changed.learning_rate = 1e-4;
  changed.max_steps = 8;
  auto again = make_model(f.corpus);
  CHECK_THROWS_AS(fit(*again, f.split, f.corpus, changed, dir.string()), ConfigError);
}

TEST_CASE("fit requires data") {
  Fixture f = make_fixture();
  auto model = make_model(f.corpus);
  DatasetSplit empty;
  fs::path dir = fs::temp_directory_path() / "textrec_fit_empty";
  fs::remove_all(dir);
  CHECK_THROWS_AS(fit(*model, empty, f.corpus, quick_config(), dir.string()), DataError);
}

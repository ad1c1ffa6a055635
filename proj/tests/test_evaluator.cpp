#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "json.hpp"
#include "textrec/evaluator.hpp"

using namespace textrec;

namespace {

struct StubModel : RankingModel {
  int dim = 4;

  double train_batch(std::span<const TrainExample>, LossReduction, Rng*) override { return 0.0; }
  std::vector<Tensor*> parameters() override { return {}; }
  void zero_grads() override {}
  std::int64_t parameter_count(bool) const override { return 0; }
  int representation_dim() const override { return dim; }
  std::string kind() const override { return "stub"; }
  void save(const std::string&) const override {}
  std::map<std::string, double> diagnostics() const override { return {}; }
};

// Deterministic pseudo-random representations keyed by history / item hash.
struct HashModel : StubModel {
  Vec user_representation(std::span<const ItemIndex> history) override {
    std::uint64_t h = 0x9e3779b97f4a7c15ull;
    for (ItemIndex i : history) h = mix64(h, static_cast<std::uint64_t>(i) + 1);
    Vec v(dim);
    for (int k = 0; k < dim; ++k)
      v[k] = static_cast<double>(mix64(h, static_cast<std::uint64_t>(k)) >> 11) * 0x1.0p-53;
    return v;
  }
  Vec item_representation(ItemIndex item) override {
    Vec v(dim);
    for (int k = 0; k < dim; ++k)
      v[k] = static_cast<double>(
                 mix64(static_cast<std::uint64_t>(item) + 7, static_cast<std::uint64_t>(k)) >> 11) *
             0x1.0p-53;
    return v;
  }
};

// Knows every instance's answer: scores the true target highest.
struct OracleModel : StubModel {
  std::map<std::vector<ItemIndex>, ItemIndex> answers;
  int num_items = 0;

  Vec user_representation(std::span<const ItemIndex> history) override {
    std::vector<ItemIndex> key(history.begin(), history.end());
    Vec v = Vec::Zero(num_items);
    v[answers.at(key)] = 1.0;
    return v;
  }
  Vec item_representation(ItemIndex item) override {
    Vec v = Vec::Zero(num_items);
    v[item] = 1.0;
    return v;
  }
};

Corpus two_domain_corpus() {
  std::vector<ItemRecord> items;
  for (int i = 0; i < 8; ++i)
    items.push_back({"a" + std::to_string(i), "dA", "alpha word" + std::to_string(i)});
  for (int i = 0; i < 5; ++i)
    items.push_back({"b" + std::to_string(i), "dB", "beta word" + std::to_string(i)});
  auto r = assemble_corpus(items, {});
  REQUIRE(r.event_errors.empty());
  return r.corpus;
}

struct Fixture {
  Corpus corpus;
  DatasetSplit split;
};

Fixture synthetic_fixture() {
  SyntheticSpec spec;
  spec.num_domains = 3;
  spec.num_topics = 3;
  spec.vocab_per_topic = 6;
  spec.noise_vocab_per_domain = 8;
  spec.num_users = 40;
  spec.items_per_domain = 30;
  spec.min_interactions_per_user = 8;
  spec.max_interactions_per_user = 12;
  spec.seed = 2024;
  Fixture f;
  f.corpus = generate_synthetic_corpus(spec);
  f.corpus = five_core_filter(f.corpus, 3);
  auto seqs = build_sequences(f.corpus, MixStrategy::user_mixed, kNoDomain, 3);
  f.split = leave_one_out_split(seqs, f.corpus);
  REQUIRE(!f.split.test.empty());
  return f;
}

// Independent reference: full sort with the target losing every tie.
MetricReport brute_force(RankingModel& model, std::span<const SplitInstance> instances,
                         const Corpus& corpus, const EvalConfig& config) {
  struct Sums {
    std::size_t count = 0;
    std::map<int, double> recall, ndcg;
  };
  auto add = [&](Sums& s, int rank) {
    ++s.count;
    for (int n : config.cutoffs) {
      s.recall[n] += rank <= n ? 1.0 : 0.0;
      s.ndcg[n] += rank <= n ? 1.0 / std::log2(rank + 1.0) : 0.0;
    }
  };
  auto finish = [&](const Sums& s) {
    MetricBlock b;
    b.count = s.count;
    for (int n : config.cutoffs) {
      b.recall[n] = s.recall.at(n) / static_cast<double>(s.count);
      b.ndcg[n] = s.ndcg.at(n) / static_cast<double>(s.count);
    }
    return b;
  };

  Sums aggregate;
  std::map<std::string, Sums> domains, partitions;
  for (const SplitInstance& inst : instances) {
    auto candidates = build_candidates(inst, corpus, config);
    Vec hu = model.user_representation(inst.history);
    std::vector<std::pair<double, int>> order;  // (score, target-loses-ties marker)
    for (std::size_t c = 0; c < candidates.size(); ++c)
      order.push_back({hu.dot(model.item_representation(candidates[c])), c == 0 ? 1 : 0});
    std::sort(order.begin(), order.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    int rank = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos)
      if (order[pos].second == 1) rank = static_cast<int>(pos) + 1;
    REQUIRE(rank >= 1);
    add(aggregate, rank);
    add(domains[corpus.domains[corpus.item_domain[inst.target]]], rank);
    if (inst.partition != Partition::unlabeled) add(partitions[to_string(inst.partition)], rank);
  }

  MetricReport report;
  report.aggregate = finish(aggregate);
  for (const auto& [k, v] : domains) report.domains[k] = finish(v);
  for (const auto& [k, v] : partitions) report.partitions[k] = finish(v);
  return report;
}

void require_blocks_equal(const MetricBlock& a, const MetricBlock& b) {
  CHECK(a.count == b.count);
  REQUIRE(a.recall.size() == b.recall.size());
  for (const auto& [n, v] : a.recall) CHECK(v == b.recall.at(n));
  for (const auto& [n, v] : a.ndcg) CHECK(v == b.ndcg.at(n));
}

}  // namespace

TEST_CASE("eval config validation") {
  EvalConfig c;
  CHECK_NOTHROW(c.validate());
  c.cutoffs = {};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.cutoffs = {0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.cutoffs = {1, 10};
  c.num_negatives = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("rank, recall, and ndcg hand values") {
  CHECK(rank_target({3.0, 1.0, 2.0}) == 1);
  CHECK(rank_target({0.5, 0.9, 0.1}) == 2);
  std::vector<double> equal(1001, 0.25);
  CHECK(rank_target(equal) == 1001);
  CHECK_THROWS_AS(rank_target({}), DataError);

  CHECK(recall_at_n(1, 10) == 1.0);
  CHECK(ndcg_at_n(1, 10) == 1.0);
  CHECK(ndcg_at_n(3, 10) == doctest::Approx(0.5).epsilon(1e-15));  // 1/log2(4)
  CHECK(recall_at_n(11, 10) == 0.0);
  CHECK(ndcg_at_n(11, 10) == 0.0);
  for (int rank = 1; rank <= 5; ++rank) CHECK(recall_at_n(rank, 1) == ndcg_at_n(rank, 1));
}

TEST_CASE("candidate lists: composition, determinism, fallback") {
  Corpus corpus = two_domain_corpus();
  EvalConfig config;
  config.num_negatives = 4;
  config.seed = 31;

  SplitInstance inst;
  inst.user_id = "u1";
  inst.target = corpus.find_item("a2");
  inst.history = {corpus.find_item("a0")};

  bool fallback = true;
  auto candidates = build_candidates(inst, corpus, config, &fallback);
  CHECK(!fallback);
  REQUIRE(candidates.size() == 5);
  CHECK(candidates[0] == inst.target);
  std::set<ItemIndex> distinct(candidates.begin(), candidates.end());
  CHECK(distinct.size() == candidates.size());
  for (ItemIndex c : candidates) CHECK(corpus.item_domain[c] == corpus.item_domain[inst.target]);

  // same (user, target) => same draw; history is irrelevant
  SplitInstance other = inst;
  other.history = {corpus.find_item("a5"), corpus.find_item("a1")};
  CHECK(build_candidates(other, corpus, config) == candidates);

  SplitInstance other_user = inst;
  other_user.user_id = "u2";
  CHECK(build_candidates(other_user, corpus, config) != candidates);

  // domain dB holds 5 items: a 1000-negative request falls back to the full pool
  SplitInstance small;
  small.user_id = "u1";
  small.target = corpus.find_item("b3");
  EvalConfig wide = config;
  wide.num_negatives = 1000;
  fallback = false;
  auto all = build_candidates(small, corpus, wide, &fallback);
  CHECK(fallback);
  REQUIRE(all.size() == 5);
  CHECK(all[0] == small.target);
  std::set<ItemIndex> pool(all.begin(), all.end());
  CHECK(pool.size() == 5);

  SplitInstance bad;
  bad.user_id = "u1";
  bad.target = 999;
  CHECK_THROWS_AS(build_candidates(bad, corpus, config), DataError);
}

TEST_CASE("evaluate matches a brute-force reference exactly") {
  Fixture f = synthetic_fixture();
  EvalConfig config;
  config.cutoffs = {1, 10};
  config.num_negatives = 20;
  config.seed = 7;

  HashModel model;
  MetricReport fast = evaluate(model, f.split.test, f.corpus, config);
  MetricReport slow = brute_force(model, f.split.test, f.corpus, config);

  require_blocks_equal(fast.aggregate, slow.aggregate);
  REQUIRE(fast.domains.size() == slow.domains.size());
  for (const auto& [k, v] : fast.domains) require_blocks_equal(v, slow.domains.at(k));
  REQUIRE(fast.partitions.size() == slow.partitions.size());
  for (const auto& [k, v] : fast.partitions) require_blocks_equal(v, slow.partitions.at(k));
}

TEST_CASE("perfect model scores all ones; aggregate is the count-weighted mean") {
  Fixture f = synthetic_fixture();
  OracleModel model;
  model.num_items = static_cast<int>(f.corpus.num_items());
  for (const auto& inst : f.split.test) model.answers[inst.history] = inst.target;

  EvalConfig config;
  config.num_negatives = 20;
  config.seed = 3;
  MetricReport report = evaluate(model, f.split.test, f.corpus, config);
  CHECK(report.aggregate.count == f.split.test.size());
  for (int n : config.cutoffs) {
    CHECK(report.aggregate.recall.at(n) == 1.0);
    CHECK(report.aggregate.ndcg.at(n) == 1.0);
  }

  // weighted-mean identity across domains, checked on a model with spread
  HashModel hash;
  MetricReport mixed = evaluate(hash, f.split.test, f.corpus, config);
  std::size_t total = 0;
  for (const auto& [k, v] : mixed.domains) total += v.count;
  CHECK(total == mixed.aggregate.count);
  for (int n : config.cutoffs) {
    double weighted_recall = 0.0, weighted_ndcg = 0.0;
    for (const auto& [k, v] : mixed.domains) {
      weighted_recall += static_cast<double>(v.count) * v.recall.at(n);
      weighted_ndcg += static_cast<double>(v.count) * v.ndcg.at(n);
    }
    CHECK(mixed.aggregate.recall.at(n) ==
          doctest::Approx(weighted_recall / static_cast<double>(total)).epsilon(1e-12));
    CHECK(mixed.aggregate.ndcg.at(n) ==
          doctest::Approx(weighted_ndcg / static_cast<double>(total)).epsilon(1e-12));
  }

  // every labeled test instance lands in exactly one partition block
  std::size_t labeled = 0;
  for (const auto& [k, v] : mixed.partitions) labeled += v.count;
  std::size_t expected = 0;
  for (const auto& inst : f.split.test)
    if (inst.partition != Partition::unlabeled) ++expected;
  CHECK(labeled == expected);

  CHECK(mixed.flags.count("candidate_fallback_instances") == 1);
  for (const auto& [k, v] : mixed.domains) CHECK(v.recall.at(1) == v.ndcg.at(1));
}

TEST_CASE("zero-shot evaluation rejects overlap and reports vocabulary coverage") {
  Fixture f = synthetic_fixture();
  const std::string transfer = f.corpus.domains[2];
  std::vector<std::string> train_domains = {f.corpus.domains[0], f.corpus.domains[1]};

  Corpus train_corpus = filter_domains(f.corpus, train_domains);
  Tokenizer tok = build_vocab(train_corpus);
  EncoderConfig ec;
  ec.num_layers = 1;
  ec.model_dim = 8;
  ec.num_heads = 2;
  ec.ffn_dim = 16;
  ec.max_positions = 64;
  ec.vocab_size = tok.vocab_size();
  ec.seed = 9;
  TextModel model(EncoderWeights::init(ec), std::move(tok), f.corpus, TextModelConfig{});

  auto transfer_seqs =
      build_sequences(f.corpus, MixStrategy::single_domain, f.corpus.find_domain(transfer), 3);
  DatasetSplit transfer_split = leave_one_out_split(transfer_seqs, f.corpus);
  REQUIRE(!transfer_split.test.empty());

  EvalConfig config;
  config.num_negatives = 20;
  config.seed = 11;
  MetricReport report =
      zero_shot_evaluate(model, transfer_split.test, f.corpus, train_domains, config);
  CHECK(report.flags.at("zero_shot") == 1.0);
  CHECK(report.flags.at("transfer_title_tokens") > 0.0);
  double unk = report.flags.at("transfer_unknown_token_fraction");
  CHECK(unk > 0.0);  // domain-local noise words are out of vocabulary
  CHECK(unk < 1.0);  // shared topic words are covered

  CHECK_THROWS_WITH_AS(
      zero_shot_evaluate(model, f.split.test, f.corpus, train_domains, config),
      doctest::Contains("overlaps the training domains"), DataError);
}

TEST_CASE("reports serialize deterministically") {
  Fixture f = synthetic_fixture();
  HashModel model;
  EvalConfig config;
  config.num_negatives = 20;
  config.seed = 5;

  MetricReport a = evaluate(model, f.split.test, f.corpus, config);
  MetricReport b = evaluate(model, f.split.test, f.corpus, config);
  CHECK(metric_report_json(a) == metric_report_json(b));
  CHECK(metric_report_csv(a) == metric_report_csv(b));

  std::string csv = metric_report_csv(a);
  CHECK(csv.rfind("scope,count,recall@1,recall@10,ndcg@1,ndcg@10\n", 0) == 0);
  CHECK(csv.find("aggregate,") != std::string::npos);
  CHECK(csv.find("domain:") != std::string::npos);

  auto parsed = nlohmann::json::parse(metric_report_json(a));
  CHECK(parsed.at("config").at("num_negatives").get<int>() == 20);
  CHECK(parsed.at("aggregate").at("count").get<std::size_t>() == f.split.test.size());
  CHECK(parsed.contains("domains"));
  CHECK(parsed.contains("partitions"));
  CHECK(parsed.contains("flags"));
}

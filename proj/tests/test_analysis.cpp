#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "textrec/analysis.hpp"

using namespace textrec;

namespace {

struct StubModel : RankingModel {
  int dim = 1;

  double train_batch(std::span<const TrainExample>, LossReduction, Rng*) override { return 0.0; }
  std::vector<Tensor*> parameters() override { return {}; }
  void zero_grads() override {}
  std::int64_t parameter_count(bool) const override { return 0; }
  int representation_dim() const override { return dim; }
  std::string kind() const override { return "stub"; }
  void save(const std::string&) const override {}
  std::map<std::string, double> diagnostics() const override { return {}; }
};

// Scores every item by its planted frequency, independent of the user.
struct FrequencyModel : StubModel {
  const std::vector<std::int64_t>* frequency;

  Vec user_representation(std::span<const ItemIndex>) override { return Vec::Ones(1); }
  Vec item_representation(ItemIndex item) override {
    Vec v(1);
    v[0] = static_cast<double>((*frequency)[item]);
    return v;
  }
};

// Fresh uniform score per (history, item): one-hot item vectors against a
// user vector of per-item hashes.
struct RandomScoreModel : StubModel {
  int num_items = 0;

  Vec user_representation(std::span<const ItemIndex> history) override {
    std::uint64_t h = 0x12345ull;
    for (ItemIndex i : history) h = mix64(h, static_cast<std::uint64_t>(i) + 1);
    Vec v(num_items);
    for (int j = 0; j < num_items; ++j)
      v[j] = static_cast<double>(mix64(h, static_cast<std::uint64_t>(j)) >> 11) * 0x1.0p-53;
    return v;
  }
  Vec item_representation(ItemIndex item) override {
    Vec v = Vec::Zero(num_items);
    v[item] = 1.0;
    return v;
  }
};

struct OracleModel : StubModel {
  std::map<std::vector<ItemIndex>, ItemIndex> answers;
  int num_items = 0;

  Vec user_representation(std::span<const ItemIndex> history) override {
    Vec v = Vec::Zero(num_items);
    v[answers.at(std::vector<ItemIndex>(history.begin(), history.end()))] = 1.0;
    return v;
  }
  Vec item_representation(ItemIndex item) override {
    Vec v = Vec::Zero(num_items);
    v[item] = 1.0;
    return v;
  }
};

Corpus ten_item_corpus() {
  std::vector<ItemRecord> items;
  for (int i = 0; i < 10; ++i)
    items.push_back({"i" + std::to_string(i), "dA", "title " + std::to_string(i)});
  auto r = assemble_corpus(items, {});
  REQUIRE(r.event_errors.empty());
  return r.corpus;
}

PopularityIndex planted_index(const Corpus& corpus, std::vector<std::int64_t> freq) {
  PopularityIndex index;
  index.frequency = std::move(freq);
  for (auto f : index.frequency) index.total += f;
  index.ascending.resize(corpus.num_items());
  for (std::size_t i = 0; i < corpus.num_items(); ++i)
    index.ascending[i] = static_cast<ItemIndex>(i);
  std::sort(index.ascending.begin(), index.ascending.end(), [&](ItemIndex a, ItemIndex b) {
    if (index.frequency[a] != index.frequency[b]) return index.frequency[a] < index.frequency[b];
    return corpus.items[a].item_id < corpus.items[b].item_id;
  });
  return index;
}

struct Fixture {
  Corpus corpus;
  DatasetSplit split;
};

Fixture synthetic_fixture() {
  SyntheticSpec spec;
  spec.num_domains = 2;
  spec.num_topics = 3;
  spec.vocab_per_topic = 6;
  spec.noise_vocab_per_domain = 8;
  spec.num_users = 60;
  spec.items_per_domain = 40;
  spec.min_interactions_per_user = 8;
  spec.max_interactions_per_user = 14;
  spec.item_popularity_exponent = 1.2;
  spec.seed = 909;
  Fixture f;
  f.corpus = generate_synthetic_corpus(spec);
  f.corpus = five_core_filter(f.corpus, 3);
  auto seqs = build_sequences(f.corpus, MixStrategy::user_mixed, kNoDomain, 3);
  f.split = leave_one_out_split(seqs, f.corpus);
  REQUIRE(!f.split.train.empty());
  REQUIRE(!f.split.test.empty());
  return f;
}

}  // namespace

TEST_CASE("popularity index counts training chains once") {
  std::vector<ItemRecord> items;
  for (char c : {'a', 'b', 'c', 'x', 'y'})
    items.push_back({std::string(1, c), "dA", std::string("t ") + c});
  items.push_back({"p", "dB", "t p"});
  items.push_back({"q", "dB", "t q"});
  Corpus corpus = assemble_corpus(items, {}).corpus;
  auto idx = [&](const std::string& id) { return corpus.find_item(id); };

  std::vector<SplitInstance> train;
  // one chain for u1 (nested prefixes), two chains for u2 (distinct first events)
  train.push_back({"u1", idx("b"), {idx("a")}, Partition::unlabeled});
  train.push_back({"u1", idx("c"), {idx("a"), idx("b")}, Partition::unlabeled});
  train.push_back({"u2", idx("y"), {idx("x")}, Partition::unlabeled});
  train.push_back({"u2", idx("q"), {idx("p")}, Partition::unlabeled});

  PopularityIndex index = build_popularity_index(train, corpus);
  CHECK(index.total == 7);  // a b c + x y + p q
  CHECK(index.frequency[idx("a")] == 1);
  CHECK(index.frequency[idx("b")] == 1);
  CHECK(index.frequency[idx("c")] == 1);
  CHECK(index.frequency[idx("x")] == 1);
  CHECK(index.frequency[idx("q")] == 1);
  std::int64_t sum = 0;
  for (auto f : index.frequency) sum += f;
  CHECK(sum == index.total);

  // ascending order respects (frequency, item_id)
  for (std::size_t i = 1; i < index.ascending.size(); ++i) {
    auto fa = index.frequency[index.ascending[i - 1]];
    auto fb = index.frequency[index.ascending[i]];
    CHECK(fa <= fb);
    if (fa == fb)
      CHECK(corpus.items[index.ascending[i - 1]].item_id <
            corpus.items[index.ascending[i]].item_id);
  }
}

TEST_CASE("bucketing splits ten items 5/3/2 with named ranges") {
  Corpus corpus = ten_item_corpus();
  PopularityIndex index =
      planted_index(corpus, {3, 1, 4, 1, 5, 9, 2, 6, 8, 7});  // distinct ranks via id ties
  ItemBuckets buckets = bucket_items(index, corpus);

  CHECK(buckets.members.at("Tail").size() == 5);
  CHECK(buckets.members.at("Medium").size() == 3);
  CHECK(buckets.members.at("Head").size() == 2);
  CHECK(buckets.members.at("tail_20%").size() == 2);
  CHECK(buckets.members.at("tail_50%").size() == 5);
  CHECK(buckets.members.at("tail_80%").size() == 8);
  CHECK(buckets.members.at("head_1%").size() == 0);
  CHECK(buckets.members.at("head_10%").size() == 1);
  CHECK(buckets.members.at("head_20%").size() == 2);

  // the two least frequent: i1 and i3 (both freq 1; id order)
  std::set<ItemIndex> tail20(buckets.members.at("tail_20%").begin(),
                             buckets.members.at("tail_20%").end());
  CHECK(tail20 == std::set<ItemIndex>{corpus.find_item("i1"), corpus.find_item("i3")});
  // the most frequent: i5 (freq 9)
  CHECK(buckets.members.at("head_10%") == std::vector<ItemIndex>{corpus.find_item("i5")});

  // coarse labels partition the catalog
  std::map<std::string, int> seen;
  for (const auto& label : buckets.coarse) {
    CHECK(!label.empty());
    seen[label] += 1;
  }
  CHECK(seen["Tail"] == 5);
  CHECK(seen["Medium"] == 3);
  CHECK(seen["Head"] == 2);
}

TEST_CASE("equal frequencies fall back to item id order") {
  Corpus corpus = ten_item_corpus();
  PopularityIndex index = planted_index(corpus, std::vector<std::int64_t>(10, 4));
  ItemBuckets buckets = bucket_items(index, corpus);
  CHECK(buckets.members.at("Tail").size() == 5);
  CHECK(buckets.members.at("Head").size() == 2);
  // ids sort lexicographically: i0, i1, ... i9
  CHECK(buckets.coarse[corpus.find_item("i0")] == "Tail");
  CHECK(buckets.coarse[corpus.find_item("i8")] == "Head");
  CHECK(buckets.coarse[corpus.find_item("i9")] == "Head");
}

TEST_CASE("bucket spec validation") {
  Corpus corpus = ten_item_corpus();
  PopularityIndex index = planted_index(corpus, {3, 1, 4, 1, 5, 9, 2, 6, 8, 7});
  BucketSpec bad;
  bad.coarse_bounds = {0.8, 0.5};
  CHECK_THROWS_AS(bucket_items(index, corpus, bad), ConfigError);
  bad.coarse_bounds = {0.5, 1.0};
  CHECK_THROWS_AS(bucket_items(index, corpus, bad), ConfigError);
  bad = BucketSpec{};
  bad.tail_fractions = {0.0};
  CHECK_THROWS_AS(bucket_items(index, corpus, bad), ConfigError);
}

TEST_CASE("per-bucket performance: oracle, frequency ordering, recombination") {
  Fixture f = synthetic_fixture();
  PopularityIndex index = build_popularity_index(f.split.train, f.corpus);
  ItemBuckets buckets = bucket_items(index, f.corpus);
  EvalConfig config;
  config.num_negatives = 20;
  config.seed = 13;

  OracleModel oracle;
  oracle.num_items = static_cast<int>(f.corpus.num_items());
  for (const auto& inst : f.split.test) oracle.answers[inst.history] = inst.target;
  auto perfect = per_bucket_performance(oracle, f.split.test, f.corpus, buckets, config);
  for (const auto& [name, row] : perfect)
    if (row.count > 0)
      for (int n : config.cutoffs) CHECK(row.recall.at(n) == 1.0);

  FrequencyModel freq;
  freq.frequency = &index.frequency;
  auto rows = per_bucket_performance(freq, f.split.test, f.corpus, buckets, config);

  // coarse rows cover every test instance exactly once
  std::size_t covered = rows.at("Tail").count + rows.at("Medium").count + rows.at("Head").count;
  CHECK(covered == f.split.test.size());

  // a frequency scorer cannot rank tail targets above head targets
  if (rows.at("Head").count > 0 && rows.at("Tail").count > 0)
    CHECK(rows.at("Head").recall.at(10) >= rows.at("Tail").recall.at(10));

  // recombining coarse rows reproduces the aggregate metric
  MetricReport overall = evaluate(freq, f.split.test, f.corpus, config);
  for (int n : config.cutoffs) {
    double combined = 0.0;
    for (const char* name : {"Tail", "Medium", "Head"}) {
      const auto& row = rows.at(name);
      if (row.count > 0) combined += static_cast<double>(row.count) * row.recall.at(n);
    }
    combined /= static_cast<double>(f.split.test.size());
    CHECK(combined == doctest::Approx(overall.aggregate.recall.at(n)).epsilon(1e-12));
  }

  // empty buckets report count 0 and no metrics
  BucketPerformance empty_row = rows.at("head_1%");
  if (buckets.members.at("head_1%").empty()) {
    CHECK(empty_row.count == 0);
    CHECK(empty_row.recall.empty());
  }
}

TEST_CASE("exposure: random scores match item shares, frequency scores saturate the head") {
  // dA carries the ranked catalog; dB items only serve as distinct histories.
  std::vector<ItemRecord> items;
  for (int i = 0; i < 60; ++i) {
    std::ostringstream id;
    id << "a" << (i < 10 ? "0" : "") << i;
    items.push_back({id.str(), "dA", "left " + std::to_string(i)});
  }
  const int num_histories = 400;
  for (int i = 0; i < num_histories; ++i)
    items.push_back({"b" + std::to_string(1000 + i), "dB", "right " + std::to_string(i)});
  Corpus corpus = assemble_corpus(items, {}).corpus;
  const int total_items = 60 + num_histories;

  // planted frequencies: a bijection spreading dA across all coarse buckets
  std::vector<std::int64_t> freq(total_items);
  for (int i = 0; i < total_items; ++i) freq[i] = (7 * i) % total_items;
  PopularityIndex index = planted_index(corpus, freq);
  ItemBuckets buckets = bucket_items(index, corpus);

  std::vector<SplitInstance> instances;
  for (int i = 0; i < num_histories; ++i) {
    SplitInstance inst;
    inst.user_id = "u" + std::to_string(i);
    inst.target = corpus.find_item("a00");
    inst.history = {corpus.find_item("b" + std::to_string(1000 + i))};
    instances.push_back(inst);
  }

  RandomScoreModel random_model;
  random_model.num_items = total_items;
  const int k = 10;
  ExposureReport report = exposure_rates(random_model, instances, corpus, buckets, k);
  CHECK(!report.k_clipped);
  CHECK(report.instances == instances.size());
  CHECK(report.total_slots == static_cast<std::int64_t>(instances.size()) * k);

  double share_sum = 0.0;
  for (const char* name : {"Tail", "Medium", "Head"}) share_sum += report.slot_share.at(name);
  CHECK(share_sum == doctest::Approx(1.0).epsilon(1e-9));

  // binomial 3-sigma envelope around each bucket's share of the dA pool
  auto domain = corpus.find_domain("dA");
  auto pool = corpus.domain_items(domain);
  for (const char* name : {"Tail", "Medium", "Head"}) {
    const auto& members = buckets.members.at(name);
    std::set<ItemIndex> member_set(members.begin(), members.end());
    int in_pool = 0;
    for (ItemIndex i : pool) in_pool += member_set.count(i) > 0 ? 1 : 0;
    double p = static_cast<double>(in_pool) / static_cast<double>(pool.size());
    double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(report.total_slots));
    INFO(name);
    CHECK(std::abs(report.slot_share.at(name) - p) <= 3.0 * sigma);
  }

  // mean item exposure times bucket size recombines to the coarse slot total
  double recombined = 0.0;
  for (const char* name : {"Tail", "Medium", "Head"})
    recombined += report.mean_item_exposure.at(name) *
                  static_cast<double>(buckets.members.at(name).size());
  CHECK(recombined == doctest::Approx(static_cast<double>(report.total_slots)).epsilon(1e-9));

  // a frequency scorer fills every slot from the global head
  FrequencyModel freq_model;
  freq_model.frequency = &index.frequency;
  ExposureReport greedy = exposure_rates(freq_model, instances, corpus, buckets, 5);
  CHECK(greedy.slot_share.at("Head") == 1.0);
  CHECK(greedy.slot_share.at("Tail") == 0.0);

  std::string csv = exposure_report_csv(greedy);
  CHECK(csv.rfind("bucket,slot_count,slot_share,mean_item_exposure\n", 0) == 0);
  CHECK(csv.find("Head,") != std::string::npos);
}

TEST_CASE("exposure clips k on small catalogs") {
  Corpus corpus = ten_item_corpus();
  PopularityIndex index = planted_index(corpus, {3, 1, 4, 1, 5, 9, 2, 6, 8, 7});
  ItemBuckets buckets = bucket_items(index, corpus);
  RandomScoreModel model;
  model.num_items = 10;
  SplitInstance inst;
  inst.user_id = "u";
  inst.target = 0;
  inst.history = {1, 2};
  ExposureReport report = exposure_rates(model, std::vector<SplitInstance>{inst}, corpus, buckets, 50);
  CHECK(report.k_clipped);
  CHECK(report.total_slots == 8);  // 10 items minus 2 history entries
}

TEST_CASE("relative improvement arithmetic and guards") {
  MetricReport a, b;
  a.cutoffs = b.cutoffs = {10};
  a.num_negatives = b.num_negatives = 100;
  a.aggregate.count = b.aggregate.count = 50;
  a.aggregate.recall[10] = 0.20;
  a.aggregate.ndcg[10] = 0.10;
  b.aggregate.recall[10] = 0.25;
  b.aggregate.ndcg[10] = 0.10;
  a.partitions["Same"].recall[10] = 0.0;
  a.partitions["Same"].ndcg[10] = 0.0;
  b.partitions["Same"].recall[10] = 0.5;
  b.partitions["Same"].ndcg[10] = 0.3;

  ImprovementTable table = relative_improvement(a, b);
  CHECK(table.at("aggregate").at("recall@10").defined);
  CHECK(table.at("aggregate").at("recall@10").value == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(table.at("aggregate").at("ndcg@10").value == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(!table.at("partition:Same").at("recall@10").defined);

  ImprovementTable self = relative_improvement(a, a);
  for (const auto& [scope, metrics] : self)
    for (const auto& [metric, cell] : metrics)
      if (cell.defined) CHECK(cell.value == 0.0);

  MetricReport mismatch = b;
  mismatch.cutoffs = {1, 10};
  CHECK_THROWS_AS(relative_improvement(a, mismatch), ConfigError);
  MetricReport missing = b;
  missing.partitions.clear();
  CHECK_THROWS_AS(relative_improvement(a, missing), ConfigError);

  std::string csv = improvement_table_csv(table);
  CHECK(csv.rfind("scope,metric,relative_improvement\n", 0) == 0);
  CHECK(csv.find("partition:Same,recall@10,undefined") != std::string::npos);
}

TEST_CASE("embedding export matches direct representations") {
  Fixture f = synthetic_fixture();
  PopularityIndex index = build_popularity_index(f.split.train, f.corpus);
  ItemBuckets buckets = bucket_items(index, f.corpus);
  FrequencyModel model;
  model.frequency = &index.frequency;

  std::string path =
      (std::filesystem::temp_directory_path() / "textrec_embeddings.tsv").string();
  export_embeddings(model, f.corpus, buckets, path);

  std::ifstream in(path);
  REQUIRE(in.good());
  int dim = 0;
  std::size_t count = 0;
  in >> dim >> count;
  CHECK(dim == 1);
  CHECK(count == f.corpus.num_items());
  std::string rest;
  std::getline(in, rest);

  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string item_id, domain, bucket, values;
    std::getline(fields, item_id, '\t');
    std::getline(fields, domain, '\t');
    std::getline(fields, bucket, '\t');
    std::getline(fields, values);
    ItemIndex idx = f.corpus.find_item(item_id);
    REQUIRE(idx >= 0);
    CHECK(domain == f.corpus.items[idx].domain_id);
    CHECK(bucket == buckets.coarse[idx]);
    double v = std::stod(values);
    CHECK(v == doctest::Approx(model.item_representation(idx)[0]).epsilon(1e-6));
    ++rows;
  }
  CHECK(rows == f.corpus.num_items());
}

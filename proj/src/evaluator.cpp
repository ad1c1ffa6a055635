#include "textrec/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "textrec/textualize.hpp"

namespace textrec {

using nlohmann::json;

void EvalConfig::validate() const {
  if (cutoffs.empty()) throw ConfigError("evaluation needs at least one cutoff");
  for (int n : cutoffs)
    if (n < 1) throw ConfigError("cutoffs must be >= 1");
  for (std::size_t i = 1; i < cutoffs.size(); ++i)
    if (cutoffs[i] <= cutoffs[i - 1]) throw ConfigError("cutoffs must be strictly ascending");
  if (num_negatives < 1) throw ConfigError("num_negatives must be >= 1");
}

std::vector<ItemIndex> build_candidates(const SplitInstance& instance, const Corpus& corpus,
                                        const EvalConfig& config, bool* fallback) {
  if (instance.target < 0 || instance.target >= static_cast<ItemIndex>(corpus.items.size()))
    throw DataError("evaluation target outside catalog");
  DomainIndex domain = corpus.item_domain[instance.target];
  std::vector<ItemIndex> pool;
  for (ItemIndex i : corpus.domain_items(domain))
    if (i != instance.target) pool.push_back(i);

  std::vector<ItemIndex> candidates;
  candidates.push_back(instance.target);
  if (static_cast<int>(pool.size()) <= config.num_negatives) {
    if (fallback != nullptr) *fallback = true;
    candidates.insert(candidates.end(), pool.begin(), pool.end());
    return candidates;
  }
  if (fallback != nullptr) *fallback = false;

  const std::string& target_id = corpus.items[instance.target].item_id;
  Rng rng(mix64(mix64(config.seed, fnv1a(instance.user_id)), fnv1a(target_id)));
  for (int k = 0; k < config.num_negatives; ++k) {
    std::size_t j = k + uniform_below(rng, pool.size() - k);
    std::swap(pool[k], pool[j]);
    candidates.push_back(pool[k]);
  }
  return candidates;
}

int rank_target(const std::vector<double>& scores) {
  if (scores.empty()) throw DataError("rank_target: empty score list");
  int rank = 1;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] >= scores[0]) ++rank;
  return rank;
}

double recall_at_n(int rank, int n) { return rank <= n ? 1.0 : 0.0; }

double ndcg_at_n(int rank, int n) {
  return rank <= n ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

namespace {

struct Accumulator {
  std::size_t count = 0;
  std::map<int, double> recall_sum;
  std::map<int, double> ndcg_sum;

  void add(int rank, const std::vector<int>& cutoffs) {
    ++count;
    for (int n : cutoffs) {
      recall_sum[n] += recall_at_n(rank, n);
      ndcg_sum[n] += ndcg_at_n(rank, n);
    }
  }

  MetricBlock finish(const std::vector<int>& cutoffs) const {
    MetricBlock out;
    out.count = count;
    if (count == 0) return out;
    for (int n : cutoffs) {
      out.recall[n] = recall_sum.at(n) / static_cast<double>(count);
      out.ndcg[n] = ndcg_sum.at(n) / static_cast<double>(count);
    }
    return out;
  }
};

MetricReport run_protocol(RankingModel& model, std::span<const SplitInstance> instances,
                          const Corpus& corpus, const EvalConfig& config) {
  config.validate();
  MetricReport report;
  report.cutoffs = config.cutoffs;
  report.num_negatives = config.num_negatives;

  std::unordered_map<ItemIndex, Vec> item_cache;
  auto item_rep = [&](ItemIndex i) -> const Vec& {
    auto it = item_cache.find(i);
    if (it == item_cache.end()) it = item_cache.emplace(i, model.item_representation(i)).first;
    return it->second;
  };

  Accumulator aggregate;
  std::map<std::string, Accumulator> by_domain;
  std::map<std::string, Accumulator> by_partition;
  std::size_t fallback_count = 0;

  for (const SplitInstance& inst : instances) {
    bool fallback = false;
    std::vector<ItemIndex> candidates = build_candidates(inst, corpus, config, &fallback);
    if (fallback) ++fallback_count;

    Vec hu = model.user_representation(inst.history);
    std::vector<double> scores(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) scores[c] = score(hu, item_rep(candidates[c]));

    int rank = rank_target(scores);
    aggregate.add(rank, config.cutoffs);
    by_domain[corpus.domains[corpus.item_domain[inst.target]]].add(rank, config.cutoffs);
    if (inst.partition != Partition::unlabeled)
      by_partition[to_string(inst.partition)].add(rank, config.cutoffs);
  }

  report.aggregate = aggregate.finish(config.cutoffs);
  for (const auto& [domain, acc] : by_domain) report.domains[domain] = acc.finish(config.cutoffs);
  for (const auto& [part, acc] : by_partition) report.partitions[part] = acc.finish(config.cutoffs);
  report.flags["candidate_fallback_instances"] = static_cast<double>(fallback_count);
  for (const auto& [key, value] : model.diagnostics()) report.flags[key] = value;
  return report;
}

}  // namespace

MetricReport evaluate(RankingModel& model, std::span<const SplitInstance> instances,
                      const Corpus& corpus, const EvalConfig& config) {
  return run_protocol(model, instances, corpus, config);
}

MetricReport zero_shot_evaluate(RankingModel& model, std::span<const SplitInstance> instances,
                                const Corpus& corpus, const std::vector<std::string>& train_domains,
                                const EvalConfig& config) {
  std::set<std::string> trained(train_domains.begin(), train_domains.end());
  std::set<DomainIndex> eval_domains;
  for (const SplitInstance& inst : instances) {
    if (inst.target < 0 || inst.target >= static_cast<ItemIndex>(corpus.items.size()))
      throw DataError("evaluation target outside catalog");
    DomainIndex d = corpus.item_domain[inst.target];
    if (trained.count(corpus.domains[d]) > 0)
      throw DataError("zero-shot evaluation target domain '" + corpus.domains[d] +
                      "' overlaps the training domains");
    eval_domains.insert(d);
  }

  MetricReport report = run_protocol(model, instances, corpus, config);
  report.flags["zero_shot"] = 1.0;

  // vocabulary coverage of the transfer catalog, for text models
  if (auto* text = dynamic_cast<TextModel*>(&model)) {
    std::int64_t total = 0, unk = 0;
    for (DomainIndex d : eval_domains) {
      for (ItemIndex i : corpus.domain_items(d)) {
        for (int id : text->tokenizer().encode_text(corpus.items[i].title)) {
          ++total;
          if (id == Tokenizer::kUnk) ++unk;
        }
      }
    }
    report.flags["transfer_title_tokens"] = static_cast<double>(total);
    report.flags["transfer_unknown_token_fraction"] =
        total > 0 ? static_cast<double>(unk) / static_cast<double>(total) : 0.0;
  }
  return report;
}

namespace {

json block_to_json(const MetricBlock& b) {
  json j;
  j["count"] = b.count;
  json recall = json::object(), ndcg = json::object();
  for (const auto& [n, v] : b.recall) recall[std::to_string(n)] = v;
  for (const auto& [n, v] : b.ndcg) ndcg[std::to_string(n)] = v;
  j["recall"] = recall;
  j["ndcg"] = ndcg;
  return j;
}

void block_to_csv(std::ostringstream& out, const std::string& scope, const MetricBlock& b,
                  const std::vector<int>& cutoffs) {
  out << scope << "," << b.count;
  for (int n : cutoffs) {
    out << ",";
    if (b.recall.count(n)) out << b.recall.at(n);
  }
  for (int n : cutoffs) {
    out << ",";
    if (b.ndcg.count(n)) out << b.ndcg.at(n);
  }
  out << "\n";
}

}  // namespace

std::string metric_report_json(const MetricReport& report) {
  json j;
  j["config"] = {{"cutoffs", report.cutoffs}, {"num_negatives", report.num_negatives}};
  j["aggregate"] = block_to_json(report.aggregate);
  json domains = json::object(), partitions = json::object(), flags = json::object();
  for (const auto& [k, v] : report.domains) domains[k] = block_to_json(v);
  for (const auto& [k, v] : report.partitions) partitions[k] = block_to_json(v);
  for (const auto& [k, v] : report.flags) flags[k] = v;
  j["domains"] = domains;
  j["partitions"] = partitions;
  j["flags"] = flags;
  return j.dump(2) + "\n";
}

void write_metric_report_json(const MetricReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << metric_report_json(report);
}

std::string metric_report_csv(const MetricReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "scope,count";
  for (int n : report.cutoffs) out << ",recall@" << n;
  for (int n : report.cutoffs) out << ",ndcg@" << n;
  out << "\n";
  block_to_csv(out, "aggregate", report.aggregate, report.cutoffs);
  for (const auto& [k, v] : report.domains) block_to_csv(out, "domain:" + k, v, report.cutoffs);
  for (const auto& [k, v] : report.partitions) block_to_csv(out, "partition:" + k, v, report.cutoffs);
  return out.str();
}

void write_metric_report_csv(const MetricReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << metric_report_csv(report);
}

}  // namespace textrec

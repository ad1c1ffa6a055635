#include "textrec/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace textrec {

PopularityIndex build_popularity_index(std::span<const SplitInstance> train, const Corpus& corpus) {
  PopularityIndex index;
  index.frequency.assign(corpus.num_items(), 0);

  // Training instances are prefix-nested per chain; the longest one plus its
  // target reproduces the chain's events exactly once. Chains are keyed by
  // their first event, which also separates per-domain chains of one user.
  std::unordered_map<std::string, const SplitInstance*> longest;
  for (const SplitInstance& inst : train) {
    if (inst.history.empty()) throw DataError("training instance with empty history");
    std::string key = inst.user_id + "\x1f" + std::to_string(inst.history.front());
    auto [it, inserted] = longest.try_emplace(key, &inst);
    if (!inserted && inst.history.size() > it->second->history.size()) it->second = &inst;
  }
  for (const auto& [key, inst] : longest) {
    for (ItemIndex i : inst->history) {
      if (i < 0 || i >= static_cast<ItemIndex>(corpus.num_items()))
        throw DataError("training history item outside catalog");
      index.frequency[i] += 1;
      index.total += 1;
    }
    if (inst->target < 0 || inst->target >= static_cast<ItemIndex>(corpus.num_items()))
      throw DataError("training target outside catalog");
    index.frequency[inst->target] += 1;
    index.total += 1;
  }

  index.ascending.resize(corpus.num_items());
  for (std::size_t i = 0; i < corpus.num_items(); ++i)
    index.ascending[i] = static_cast<ItemIndex>(i);
  std::sort(index.ascending.begin(), index.ascending.end(), [&](ItemIndex a, ItemIndex b) {
    if (index.frequency[a] != index.frequency[b]) return index.frequency[a] < index.frequency[b];
    return corpus.items[a].item_id < corpus.items[b].item_id;
  });
  return index;
}

void BucketSpec::validate() const {
  if (coarse_bounds.empty()) throw ConfigError("coarse bucket bounds must be non-empty");
  double prev = 0.0;
  for (double b : coarse_bounds) {
    if (!(b > prev && b < 1.0))
      throw ConfigError("coarse bucket bounds must be ascending within (0, 1)");
    prev = b;
  }
  for (double f : tail_fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("tail fractions must lie in (0, 1]");
  for (double f : head_fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("head fractions must lie in (0, 1]");
}

namespace {

std::string percent_name(double fraction) {
  std::ostringstream out;
  out << fraction * 100.0 << "%";
  return out.str();
}

std::size_t cut_position(double fraction, std::size_t n) {
  auto pos = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::min(pos, n);
}

}  // namespace

ItemBuckets bucket_items(const PopularityIndex& index, const Corpus& corpus,
                         const BucketSpec& spec) {
  spec.validate();
  if (index.ascending.empty()) throw DataError("popularity index is empty");
  if (index.ascending.size() != corpus.num_items())
    throw DataError("popularity index does not match the catalog");
  std::size_t n = index.ascending.size();

  ItemBuckets buckets;
  if (spec.coarse_bounds.size() == 2) {
    buckets.coarse_names = {"Tail", "Medium", "Head"};
  } else {
    for (std::size_t i = 0; i <= spec.coarse_bounds.size(); ++i)
      buckets.coarse_names.push_back("bucket" + std::to_string(i));
  }

  buckets.coarse.assign(n, "");
  std::vector<std::size_t> cuts;
  for (double b : spec.coarse_bounds) cuts.push_back(cut_position(b, n));
  cuts.push_back(n);
  std::size_t begin = 0;
  for (std::size_t level = 0; level < cuts.size(); ++level) {
    const std::string& name = buckets.coarse_names[level];
    auto& members = buckets.members[name];  // present even when the range is empty
    for (std::size_t p = begin; p < cuts[level]; ++p) {
      buckets.coarse[index.ascending[p]] = name;
      members.push_back(index.ascending[p]);
    }
    begin = cuts[level];
  }

  for (double f : spec.tail_fractions) {
    auto& members = buckets.members["tail_" + percent_name(f)];
    for (std::size_t p = 0; p < cut_position(f, n); ++p) members.push_back(index.ascending[p]);
  }
  for (double f : spec.head_fractions) {
    auto& members = buckets.members["head_" + percent_name(f)];
    for (std::size_t p = n - cut_position(f, n); p < n; ++p) members.push_back(index.ascending[p]);
  }
  return buckets;
}

std::map<std::string, BucketPerformance> per_bucket_performance(
    RankingModel& model, std::span<const SplitInstance> instances, const Corpus& corpus,
    const ItemBuckets& buckets, const EvalConfig& config) {
  config.validate();
  std::unordered_map<ItemIndex, std::vector<const std::string*>> memberships;
  for (const auto& [name, items] : buckets.members)
    for (ItemIndex i : items) memberships[i].push_back(&name);

  struct Sums {
    std::size_t count = 0;
    std::map<int, double> recall, ndcg;
  };
  std::map<std::string, Sums> sums;
  for (const auto& [name, items] : buckets.members) sums[name];  // count-0 rows for all buckets

  std::unordered_map<ItemIndex, Vec> item_cache;
  auto item_rep = [&](ItemIndex i) -> const Vec& {
    auto it = item_cache.find(i);
    if (it == item_cache.end()) it = item_cache.emplace(i, model.item_representation(i)).first;
    return it->second;
  };

  for (const SplitInstance& inst : instances) {
    auto candidates = build_candidates(inst, corpus, config);
    Vec hu = model.user_representation(inst.history);
    std::vector<double> scores(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) scores[c] = score(hu, item_rep(candidates[c]));
    int rank = rank_target(scores);

    auto it = memberships.find(inst.target);
    if (it == memberships.end()) continue;
    for (const std::string* name : it->second) {
      Sums& s = sums[*name];
      s.count += 1;
      for (int n : config.cutoffs) {
        s.recall[n] += recall_at_n(rank, n);
        s.ndcg[n] += ndcg_at_n(rank, n);
      }
    }
  }

  std::map<std::string, BucketPerformance> out;
  for (const auto& [name, s] : sums) {
    BucketPerformance row;
    row.count = s.count;
    if (s.count > 0) {
      for (int n : config.cutoffs) {
        row.recall[n] = s.recall.at(n) / static_cast<double>(s.count);
        row.ndcg[n] = s.ndcg.at(n) / static_cast<double>(s.count);
      }
    }
    out[name] = row;
  }
  return out;
}

ExposureReport exposure_rates(RankingModel& model, std::span<const SplitInstance> instances,
                              const Corpus& corpus, const ItemBuckets& buckets, int k) {
  if (k < 1) throw ConfigError("exposure k must be >= 1");
  ExposureReport report;
  report.k = k;
  for (const auto& [name, items] : buckets.members) report.slot_counts[name] = 0;

  std::unordered_map<ItemIndex, Vec> item_cache;
  auto item_rep = [&](ItemIndex i) -> const Vec& {
    auto it = item_cache.find(i);
    if (it == item_cache.end()) it = item_cache.emplace(i, model.item_representation(i)).first;
    return it->second;
  };
  std::unordered_map<ItemIndex, std::vector<const std::string*>> memberships;
  for (const auto& [name, items] : buckets.members)
    for (ItemIndex i : items) memberships[i].push_back(&name);

  for (const SplitInstance& inst : instances) {
    if (inst.target < 0 || inst.target >= static_cast<ItemIndex>(corpus.num_items()))
      throw DataError("exposure target outside catalog");
    std::unordered_set<ItemIndex> seen(inst.history.begin(), inst.history.end());
    DomainIndex domain = corpus.item_domain[inst.target];
    Vec hu = model.user_representation(inst.history);

    std::vector<std::pair<double, ItemIndex>> ranked;
    for (ItemIndex i : corpus.domain_items(domain)) {
      if (seen.count(i) > 0) continue;
      ranked.push_back({score(hu, item_rep(i)), i});
    }
    if (ranked.empty()) throw DataError("no rankable items for an exposure instance");
    std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), ranked.size());
    if (take < static_cast<std::size_t>(k)) report.k_clipped = true;
    std::partial_sort(ranked.begin(), ranked.begin() + take, ranked.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });

    report.instances += 1;
    report.total_slots += static_cast<std::int64_t>(take);
    for (std::size_t slot = 0; slot < take; ++slot) {
      auto it = memberships.find(ranked[slot].second);
      if (it == memberships.end()) continue;
      for (const std::string* name : it->second) report.slot_counts[*name] += 1;
    }
  }

  for (const auto& [name, count] : report.slot_counts) {
    report.slot_share[name] =
        report.total_slots > 0 ? static_cast<double>(count) / static_cast<double>(report.total_slots)
                               : 0.0;
    std::size_t size = buckets.members.at(name).size();
    report.mean_item_exposure[name] =
        size > 0 ? static_cast<double>(count) / static_cast<double>(size) : 0.0;
  }
  return report;
}

std::string exposure_report_csv(const ExposureReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "bucket,slot_count,slot_share,mean_item_exposure\n";
  for (const auto& [name, count] : report.slot_counts)
    out << name << "," << count << "," << report.slot_share.at(name) << ","
        << report.mean_item_exposure.at(name) << "\n";
  return out.str();
}

namespace {

void improvement_scope(ImprovementTable& table, const std::string& scope, const MetricBlock& a,
                       const MetricBlock& b, const std::vector<int>& cutoffs) {
  auto& row = table[scope];
  for (int n : cutoffs) {
    for (const char* metric : {"recall", "ndcg"}) {
      const auto& ma = metric == std::string("recall") ? a.recall : a.ndcg;
      const auto& mb = metric == std::string("recall") ? b.recall : b.ndcg;
      std::string key = std::string(metric) + "@" + std::to_string(n);
      RelCell cell;
      auto ia = ma.find(n);
      auto ib = mb.find(n);
      if (ia != ma.end() && ib != mb.end() && ia->second != 0.0) {
        cell.defined = true;
        cell.value = (ib->second - ia->second) / ia->second;
      }
      row[key] = cell;
    }
  }
}

}  // namespace

ImprovementTable relative_improvement(const MetricReport& base, const MetricReport& other) {
  if (base.cutoffs != other.cutoffs || base.num_negatives != other.num_negatives)
    throw ConfigError("relative improvement requires reports from the same protocol");
  auto keys = [](const auto& m) {
    std::vector<std::string> out;
    for (const auto& [k, v] : m) out.push_back(k);
    return out;
  };
  if (keys(base.domains) != keys(other.domains) || keys(base.partitions) != keys(other.partitions))
    throw ConfigError("relative improvement requires reports over the same scopes");

  ImprovementTable table;
  improvement_scope(table, "aggregate", base.aggregate, other.aggregate, base.cutoffs);
  for (const auto& [name, block] : base.domains)
    improvement_scope(table, "domain:" + name, block, other.domains.at(name), base.cutoffs);
  for (const auto& [name, block] : base.partitions)
    improvement_scope(table, "partition:" + name, block, other.partitions.at(name), base.cutoffs);
  return table;
}

std::string improvement_table_csv(const ImprovementTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "scope,metric,relative_improvement\n";
  for (const auto& [scope, metrics] : table)
    for (const auto& [metric, cell] : metrics) {
      out << scope << "," << metric << ",";
      if (cell.defined)
        out << cell.value;
      else
        out << "undefined";
      out << "\n";
    }
  return out.str();
}

void export_embeddings(RankingModel& model, const Corpus& corpus, const ItemBuckets& buckets,
                       const std::string& path) {
  if (buckets.coarse.size() != corpus.num_items())
    throw DataError("bucket labels do not match the catalog");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write embedding dump: " + path);
  out.precision(17);
  out << model.representation_dim() << " " << corpus.num_items() << "\n";
  for (std::size_t i = 0; i < corpus.num_items(); ++i) {
    Vec v = model.item_representation(static_cast<ItemIndex>(i));
    out << corpus.items[i].item_id << "\t" << corpus.items[i].domain_id << "\t"
        << buckets.coarse[i] << "\t";
    for (int d = 0; d < v.size(); ++d) {
      if (d > 0) out << " ";
      out << v[d];
    }
    out << "\n";
  }
  if (!out) throw DataError("cannot write embedding dump: " + path);
}

}  // namespace textrec

#pragma once

#include <map>

#include "textrec/evaluator.hpp"

namespace textrec {

// Item frequencies over the training chains, with the catalog ordered
// ascending by (frequency, item_id). Items never trained on count 0.
struct PopularityIndex {
  std::vector<std::int64_t> frequency;  // aligned with the catalog
  std::vector<ItemIndex> ascending;
  std::int64_t total = 0;  // training interactions counted
};

PopularityIndex build_popularity_index(std::span<const SplitInstance> train, const Corpus& corpus);

// Quantile ranges over the ascending popularity ordering. Coarse bounds split
// the ordering into Tail / Medium / Head; tail fractions name the least
// frequent share of the list, head fractions the most frequent share.
struct BucketSpec {
  std::vector<double> coarse_bounds = {0.5, 0.8};
  std::vector<double> tail_fractions = {0.2, 0.5, 0.8};
  std::vector<double> head_fractions = {0.01, 0.1, 0.2};

  void validate() const;
};

struct ItemBuckets {
  std::vector<std::string> coarse;                        // per item: Tail / Medium / Head
  std::map<std::string, std::vector<ItemIndex>> members;  // coarse buckets + named ranges
  std::vector<std::string> coarse_names;                  // ascending-popularity order
};

ItemBuckets bucket_items(const PopularityIndex& index, const Corpus& corpus,
                         const BucketSpec& spec = {});

struct BucketPerformance {
  std::size_t count = 0;
  std::map<int, double> recall;  // empty when the bucket holds no test targets
  std::map<int, double> ndcg;
};

// Standard ranking protocol, grouped by the target item's buckets. Every
// bucket gets a row; empty ones carry count 0 and no metrics.
std::map<std::string, BucketPerformance> per_bucket_performance(
    RankingModel& model, std::span<const SplitInstance> instances, const Corpus& corpus,
    const ItemBuckets& buckets, const EvalConfig& config);

// How often each bucket's items appear in top-k recommendations when ranking
// the full in-domain catalog (minus the user's history) per test instance.
struct ExposureReport {
  int k = 10;
  bool k_clipped = false;  // some instance had fewer than k candidates
  std::size_t instances = 0;
  std::int64_t total_slots = 0;
  std::map<std::string, std::int64_t> slot_counts;
  std::map<std::string, double> slot_share;          // count / total_slots
  std::map<std::string, double> mean_item_exposure;  // count / bucket size
};

ExposureReport exposure_rates(RankingModel& model, std::span<const SplitInstance> instances,
                              const Corpus& corpus, const ItemBuckets& buckets, int k = 10);

std::string exposure_report_csv(const ExposureReport& report);

// (other - base) / base per scope and metric; cells with a zero baseline are
// marked undefined instead of dividing.
struct RelCell {
  double value = 0.0;
  bool defined = false;
};

// scope ("aggregate", "domain:X", "partition:Same") -> metric ("recall@10") -> cell
using ImprovementTable = std::map<std::string, std::map<std::string, RelCell>>;

ImprovementTable relative_improvement(const MetricReport& base, const MetricReport& other);

std::string improvement_table_csv(const ImprovementTable& table);

// Line-oriented dump: "dim count" header, then one row per catalog item with
// its id, domain, coarse bucket, and representation values.
void export_embeddings(RankingModel& model, const Corpus& corpus, const ItemBuckets& buckets,
                       const std::string& path);

}  // namespace textrec

#pragma once

#include <map>

#include "textrec/model.hpp"
#include "textrec/pipeline.hpp"

namespace textrec {

struct EvalConfig {
  std::vector<int> cutoffs = {1, 10};
  int num_negatives = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct MetricBlock {
  std::size_t count = 0;
  std::map<int, double> recall;  // cutoff -> mean over instances
  std::map<int, double> ndcg;
};

struct MetricReport {
  MetricBlock aggregate;                           // all instances pooled
  std::map<std::string, MetricBlock> domains;      // keyed by target domain
  std::map<std::string, MetricBlock> partitions;   // Same / Mix / Diff
  std::map<std::string, double> flags;             // counters and diagnostics
  std::vector<int> cutoffs;
  int num_negatives = 0;
};

// Candidate list for one instance: the target first, then up to num_negatives
// distinct same-domain items drawn without replacement. The draw depends only
// on (seed, user_id, target item_id), never on instance order. When the domain
// pool is smaller than requested, the whole pool is used and *fallback is set.
std::vector<ItemIndex> build_candidates(const SplitInstance& instance, const Corpus& corpus,
                                        const EvalConfig& config, bool* fallback = nullptr);

// 1-based rank of scores[0] with pessimistic tie handling: equal scores on
// other candidates push the target down.
int rank_target(const std::vector<double>& scores);

double recall_at_n(int rank, int n);
double ndcg_at_n(int rank, int n);

MetricReport evaluate(RankingModel& model, std::span<const SplitInstance> instances,
                      const Corpus& corpus, const EvalConfig& config);

// Evaluation on domains the model never trained on. Verifies that no test
// target lies in a training domain, then runs the standard protocol and
// reports vocabulary coverage of the transfer domains.
MetricReport zero_shot_evaluate(RankingModel& model, std::span<const SplitInstance> instances,
                                const Corpus& corpus, const std::vector<std::string>& train_domains,
                                const EvalConfig& config);

// Timestamp-free serializations; identical inputs produce identical bytes.
std::string metric_report_json(const MetricReport& report);
void write_metric_report_json(const MetricReport& report, const std::string& path);
std::string metric_report_csv(const MetricReport& report);
void write_metric_report_csv(const MetricReport& report, const std::string& path);

}  // namespace textrec

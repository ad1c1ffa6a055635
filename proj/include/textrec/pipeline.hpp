#pragma once

#include <span>
#include <string>
#include <vector>

#include "textrec/corpus.hpp"

namespace textrec {

enum class MixStrategy { user_mixed, domain_split, single_domain };

MixStrategy parse_mix_strategy(const std::string& name);
std::string to_string(MixStrategy s);

struct SeqEvent {
  ItemIndex item;
  std::int64_t timestamp;
};

// One chronological history. Under user_mixed, one per user over all domains;
// under domain_split / single_domain, one per (user, domain).
struct UserSequence {
  std::string user_id;
  DomainIndex domain = kNoDomain;  // kNoDomain for user_mixed
  std::vector<SeqEvent> events;    // ascending (timestamp, ingest order)
};

enum class Role { train, valid, test };
enum class Partition { same, mix, diff, unlabeled };

std::string to_string(Role r);
std::string to_string(Partition p);

struct SplitInstance {
  std::string user_id;
  ItemIndex target = -1;
  std::vector<ItemIndex> history;  // strict chronological prefix, untruncated
  Partition partition = Partition::unlabeled;  // test instances only
};

struct SplitProvenance {
  MixStrategy strategy = MixStrategy::user_mixed;
  int core_k = 5;
  int min_seq_len = 3;
  std::vector<std::string> domains;
  std::size_t dropped_short_sequences = 0;
};

struct DatasetSplit {
  std::vector<SplitInstance> train;
  std::vector<SplitInstance> valid;
  std::vector<SplitInstance> test;
  SplitProvenance provenance;
};

// Iteratively removes users with < k interactions (counted across domains) and
// items occurring < k times until both bounds hold. May return an empty corpus.
Corpus five_core_filter(const Corpus& corpus, int k = 5);

// Per-user chronological sequences. Ties in timestamp keep ingest order.
// Sequences shorter than min_len are dropped and counted.
std::vector<UserSequence> build_sequences(const Corpus& corpus, MixStrategy strategy,
                                          DomainIndex single_domain = kNoDomain, int min_len = 3,
                                          std::size_t* dropped = nullptr);

// Last event -> test, penultimate -> valid, earlier events -> train targets,
// each with its strict prefix as history. Test partitions are labeled here.
DatasetSplit leave_one_out_split(const std::vector<UserSequence>& sequences, const Corpus& corpus);

Partition label_test_partition(std::span<const ItemIndex> history, ItemIndex target, const Corpus& corpus);

// Most recent max_items events; applied at encoding time, not at split time.
std::span<const ItemIndex> truncate_history(std::span<const ItemIndex> history, int max_items = 10);

// Split manifest (JSON-lines): user_id, role, target item_id, history item_id
// list, partition label for test rows.
void write_manifest(const DatasetSplit& split, const Corpus& corpus, const std::string& path);
DatasetSplit read_manifest(const std::string& path, const Corpus& corpus);

}  // namespace textrec

#include "textrec/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace textrec {

using nlohmann::json;

MixStrategy parse_mix_strategy(const std::string& name) {
  if (name == "user_mixed") return MixStrategy::user_mixed;
  if (name == "domain_split") return MixStrategy::domain_split;
  if (name == "single_domain") return MixStrategy::single_domain;
  throw ConfigError("unknown mix strategy: " + name);
}

std::string to_string(MixStrategy s) {
  switch (s) {
    case MixStrategy::user_mixed: return "user_mixed";
    case MixStrategy::domain_split: return "domain_split";
    case MixStrategy::single_domain: return "single_domain";
  }
  return "?";
}

std::string to_string(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::valid: return "valid";
    case Role::test: return "test";
  }
  return "?";
}

std::string to_string(Partition p) {
  switch (p) {
    case Partition::same: return "Same";
    case Partition::mix: return "Mix";
    case Partition::diff: return "Diff";
    case Partition::unlabeled: return "Unlabeled";
  }
  return "?";
}

Corpus five_core_filter(const Corpus& corpus, int k) {
  if (k < 1) throw ConfigError("five_core_filter: k must be >= 1");

  std::unordered_set<std::string> live_users;
  std::unordered_set<ItemIndex> live_items;
  for (const auto& ev : corpus.events) live_users.insert(ev.user_id);
  for (ItemIndex i = 0; i < static_cast<ItemIndex>(corpus.items.size()); ++i) live_items.insert(i);

  // Users first, then items, repeated to fixpoint.
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, int> user_count;
    for (const auto& ev : corpus.events) {
      ItemIndex idx = corpus.find_item(ev.item_id);
      if (live_users.count(ev.user_id) && live_items.count(idx)) ++user_count[ev.user_id];
    }
    for (auto it = live_users.begin(); it != live_users.end();) {
      auto c = user_count.find(*it);
      if (c == user_count.end() || c->second < k) {
        it = live_users.erase(it);
        changed = true;
      } else {
        ++it;
      }
    }
    std::unordered_map<ItemIndex, int> item_count;
    for (const auto& ev : corpus.events) {
      ItemIndex idx = corpus.find_item(ev.item_id);
      if (live_users.count(ev.user_id) && live_items.count(idx)) ++item_count[idx];
    }
    for (auto it = live_items.begin(); it != live_items.end();) {
      auto c = item_count.find(*it);
      if (c == item_count.end() || c->second < k) {
        it = live_items.erase(it);
        changed = true;
      } else {
        ++it;
      }
    }
  }

  std::vector<ItemRecord> items;
  for (ItemIndex i = 0; i < static_cast<ItemIndex>(corpus.items.size()); ++i) {
    if (live_items.count(i)) items.push_back(corpus.items[i]);
  }
  std::vector<InteractionEvent> events;
  for (const auto& ev : corpus.events) {
    if (live_users.count(ev.user_id) && live_items.count(corpus.find_item(ev.item_id))) {
      events.push_back(ev);
    }
  }
  auto assembled = assemble_corpus(std::move(items), std::move(events));
  return std::move(assembled.corpus);
}

std::vector<UserSequence> build_sequences(const Corpus& corpus, MixStrategy strategy,
                                          DomainIndex single_domain, int min_len,
                                          std::size_t* dropped) {
  if (strategy == MixStrategy::single_domain && single_domain == kNoDomain) {
    throw ConfigError("build_sequences: single_domain strategy requires a domain");
  }

  struct Key {
    std::string user;
    DomainIndex domain;
    bool operator<(const Key& o) const {
      return user != o.user ? user < o.user : domain < o.domain;
    }
  };

  // std::map keeps emission order canonical (user, then domain).
  std::map<Key, std::vector<const InteractionEvent*>> grouped;
  for (const auto& ev : corpus.events) {
    DomainIndex d = corpus.find_domain(ev.domain_id);
    if (strategy == MixStrategy::single_domain && d != single_domain) continue;
    DomainIndex key_domain = strategy == MixStrategy::user_mixed ? kNoDomain : d;
    grouped[{ev.user_id, key_domain}].push_back(&ev);
  }

  std::vector<UserSequence> out;
  std::size_t drop_count = 0;
  for (auto& [key, evs] : grouped) {
    std::stable_sort(evs.begin(), evs.end(), [](const InteractionEvent* a, const InteractionEvent* b) {
      if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
      return a->ingest_order < b->ingest_order;
    });
    if (static_cast<int>(evs.size()) < min_len) {
      ++drop_count;
      continue;
    }
    UserSequence seq;
    seq.user_id = key.user;
    seq.domain = key.domain;
    seq.events.reserve(evs.size());
    for (const auto* ev : evs) {
      seq.events.push_back({corpus.find_item(ev->item_id), ev->timestamp});
    }
    out.push_back(std::move(seq));
  }
  if (dropped) *dropped = drop_count;
  return out;
}

Partition label_test_partition(std::span<const ItemIndex> history, ItemIndex target, const Corpus& corpus) {
  if (history.empty()) return Partition::unlabeled;
  DomainIndex target_domain = corpus.item_domain[target];
  bool any_same = false, any_diff = false;
  for (ItemIndex item : history) {
    (corpus.item_domain[item] == target_domain ? any_same : any_diff) = true;
  }
  if (any_same && !any_diff) return Partition::same;
  if (!any_same && any_diff) return Partition::diff;
  return Partition::mix;
}

DatasetSplit leave_one_out_split(const std::vector<UserSequence>& sequences, const Corpus& corpus) {
  DatasetSplit split;
  for (const auto& seq : sequences) {
    const std::size_t n = seq.events.size();
    if (n < 3) {
      ++split.provenance.dropped_short_sequences;
      continue;
    }
    std::vector<ItemIndex> items(n);
    for (std::size_t i = 0; i < n; ++i) items[i] = seq.events[i].item;

    auto prefix = [&](std::size_t end) {
      return std::vector<ItemIndex>(items.begin(), items.begin() + end);
    };

    SplitInstance test{seq.user_id, items[n - 1], prefix(n - 1)};
    test.partition = label_test_partition(test.history, test.target, corpus);
    split.test.push_back(std::move(test));

    split.valid.push_back({seq.user_id, items[n - 2], prefix(n - 2)});

    for (std::size_t t = 1; t + 2 < n; ++t) {
      split.train.push_back({seq.user_id, items[t], prefix(t)});
    }
  }
  return split;
}

std::span<const ItemIndex> truncate_history(std::span<const ItemIndex> history, int max_items) {
  if (max_items < 1) throw ConfigError("truncate_history: max_items must be >= 1");
  if (static_cast<int>(history.size()) <= max_items) return history;
  return history.subspan(history.size() - max_items);
}

void write_manifest(const DatasetSplit& split, const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  auto emit = [&](const SplitInstance& inst, Role role) {
    json hist = json::array();
    for (ItemIndex i : inst.history) hist.push_back(corpus.items[i].item_id);
    json j{{"user_id", inst.user_id},
           {"role", to_string(role)},
           {"target", corpus.items[inst.target].item_id},
           {"history", std::move(hist)}};
    if (role == Role::test) j["partition"] = to_string(inst.partition);
    out << j.dump() << "\n";
  };
  for (const auto& inst : split.train) emit(inst, Role::train);
  for (const auto& inst : split.valid) emit(inst, Role::valid);
  for (const auto& inst : split.test) emit(inst, Role::test);
}

DatasetSplit read_manifest(const std::string& path, const Corpus& corpus) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  DatasetSplit split;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError("manifest line " + std::to_string(lineno) + ": invalid JSON");
    SplitInstance inst;
    inst.user_id = j.at("user_id").get<std::string>();
    inst.target = corpus.find_item(j.at("target").get<std::string>());
    if (inst.target < 0) throw DataError("manifest line " + std::to_string(lineno) + ": unknown target item");
    for (const auto& id : j.at("history")) {
      ItemIndex idx = corpus.find_item(id.get<std::string>());
      if (idx < 0) throw DataError("manifest line " + std::to_string(lineno) + ": unknown history item");
      inst.history.push_back(idx);
    }
    std::string role = j.at("role").get<std::string>();
    if (role == "train") {
      split.train.push_back(std::move(inst));
    } else if (role == "valid") {
      split.valid.push_back(std::move(inst));
    } else if (role == "test") {
      std::string p = j.value("partition", "Unlabeled");
      inst.partition = p == "Same"   ? Partition::same
                       : p == "Mix"  ? Partition::mix
                       : p == "Diff" ? Partition::diff
                                     : Partition::unlabeled;
      split.test.push_back(std::move(inst));
    } else {
      throw DataError("manifest line " + std::to_string(lineno) + ": unknown role '" + role + "'");
    }
  }
  return split;
}

}  // namespace textrec

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "textrec/common.hpp"

namespace textrec {

struct ItemRecord {
  std::string item_id;
  std::string domain_id;
  std::string title;  // raw text, never empty once ingested
};

struct InteractionEvent {
  std::string user_id;
  std::string item_id;
  std::string domain_id;
  std::int64_t timestamp = 0;
  // Position in the source file / generation order; breaks timestamp ties.
  std::size_t ingest_order = 0;
};

// A validated catalog + event multiset. Every event's item resolves in the
// catalog and carries the item's domain.
struct Corpus {
  std::vector<ItemRecord> items;
  std::vector<InteractionEvent> events;
  std::vector<std::string> domains;  // ordered set of domain ids

  std::unordered_map<std::string, ItemIndex> item_index;
  std::unordered_map<std::string, DomainIndex> domain_index;
  std::vector<DomainIndex> item_domain;  // aligned with items

  ItemIndex find_item(const std::string& item_id) const {
    auto it = item_index.find(item_id);
    return it == item_index.end() ? ItemIndex{-1} : it->second;
  }
  DomainIndex find_domain(const std::string& domain_id) const {
    auto it = domain_index.find(domain_id);
    return it == domain_index.end() ? kNoDomain : it->second;
  }
  std::size_t num_items() const { return items.size(); }
  std::size_t num_domains() const { return domains.size(); }

  // Items of one domain, ascending item index.
  std::vector<ItemIndex> domain_items(DomainIndex d) const;

  void rebuild_indexes();
};

struct LineIssue {
  std::size_t line;  // 1-based
  std::string message;
};

struct InteractionLoadResult {
  std::vector<InteractionEvent> events;
  std::vector<LineIssue> errors;
};

struct ItemMetaLoadResult {
  std::vector<ItemRecord> items;
  std::size_t dropped_empty_title = 0;
  std::vector<LineIssue> errors;
};

enum class IngestFormat { json_lines };

// JSON-lines, one object per line: {user_id, item_id, domain, timestamp}.
// Malformed lines are reported with their line number; valid lines still load.
InteractionLoadResult load_interactions(const std::string& path, IngestFormat format);

// JSON-lines, one object per line: {item_id, domain, title}. Records with an
// empty or missing title are dropped and counted; duplicate item_ids are
// errors naming both line numbers.
ItemMetaLoadResult load_item_meta(const std::string& path, IngestFormat format);

struct AssembleResult {
  Corpus corpus;
  std::vector<std::string> event_errors;  // unknown item / domain mismatch
};

// Joins item records and events into a validated corpus. Events whose item is
// missing from the catalog or whose domain disagrees with the catalog are
// rejected and reported.
AssembleResult assemble_corpus(std::vector<ItemRecord> items, std::vector<InteractionEvent> events);

// Restrict a corpus to a subset of domains (events and items).
Corpus filter_domains(const Corpus& corpus, const std::vector<std::string>& keep);

struct SyntheticSpec {
  int num_domains = 3;
  int num_topics = 6;
  int vocab_per_topic = 24;        // size of the shared pool and of each per-domain pool
  int noise_vocab_per_domain = 40;
  int num_users = 2000;
  int items_per_domain = 300;
  int min_interactions_per_user = 8;
  int max_interactions_per_user = 16;
  double topic_preference_concentration = 3.0;  // larger = sharper user preference
  double item_popularity_exponent = 0.9;        // Zipf exponent; 0 = uniform items
  std::uint64_t seed = 7;
};

// Deterministic generator with planted cross-domain structure: each topic owns
// a token pool shared across domains plus a per-domain pool, item titles mix
// topic tokens with domain-local noise, and users interact across domains
// according to a latent topic preference. Identical spec => byte-identical
// corpus.
Corpus generate_synthetic_corpus(const SyntheticSpec& spec);

// Serialization used by tests and by `prepare` artifacts.
void write_items_jsonl(const Corpus& corpus, const std::string& path);
void write_events_jsonl(const Corpus& corpus, const std::string& path);

}  // namespace textrec

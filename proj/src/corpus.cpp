#include "textrec/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace textrec {

using nlohmann::json;

std::vector<ItemIndex> Corpus::domain_items(DomainIndex d) const {
  std::vector<ItemIndex> out;
  for (ItemIndex i = 0; i < static_cast<ItemIndex>(items.size()); ++i) {
    if (item_domain[i] == d) out.push_back(i);
  }
  return out;
}

void Corpus::rebuild_indexes() {
  item_index.clear();
  domain_index.clear();
  item_domain.clear();
  for (DomainIndex d = 0; d < static_cast<DomainIndex>(domains.size()); ++d) {
    domain_index.emplace(domains[d], d);
  }
  item_domain.reserve(items.size());
  for (ItemIndex i = 0; i < static_cast<ItemIndex>(items.size()); ++i) {
    item_index.emplace(items[i].item_id, i);
    auto it = domain_index.find(items[i].domain_id);
    if (it == domain_index.end()) {
      domains.push_back(items[i].domain_id);
      it = domain_index.emplace(items[i].domain_id, static_cast<DomainIndex>(domains.size() - 1)).first;
    }
    item_domain.push_back(it->second);
  }
}

namespace {

std::optional<json> parse_line(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

}  // namespace

InteractionLoadResult load_interactions(const std::string& path, IngestFormat format) {
  if (format != IngestFormat::json_lines) {
    throw DataError("load_interactions: unknown format");
  }
  std::ifstream in(path);
  if (!in) throw DataError("load_interactions: cannot open " + path);

  InteractionLoadResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = parse_line(line);
    if (!j) {
      result.errors.push_back({lineno, "not a JSON object"});
      continue;
    }
    InteractionEvent ev;
    ev.ingest_order = result.events.size();
    bool ok = true;
    for (const char* field : {"user_id", "item_id", "domain"}) {
      if (!j->contains(field) || !(*j)[field].is_string()) {
        result.errors.push_back({lineno, std::string("missing or non-string field '") + field + "'"});
        ok = false;
      }
    }
    if (!j->contains("timestamp")) {
      result.errors.push_back({lineno, "missing field 'timestamp'"});
      ok = false;
    } else if (!(*j)["timestamp"].is_number_integer()) {
      result.errors.push_back({lineno, "unparseable timestamp"});
      ok = false;
    }
    if (!ok) continue;
    ev.user_id = (*j)["user_id"].get<std::string>();
    ev.item_id = (*j)["item_id"].get<std::string>();
    ev.domain_id = (*j)["domain"].get<std::string>();
    ev.timestamp = (*j)["timestamp"].get<std::int64_t>();
    result.events.push_back(std::move(ev));
  }
  return result;
}

ItemMetaLoadResult load_item_meta(const std::string& path, IngestFormat format) {
  if (format != IngestFormat::json_lines) {
    throw DataError("load_item_meta: unknown format");
  }
  std::ifstream in(path);
  if (!in) throw DataError("load_item_meta: cannot open " + path);

  ItemMetaLoadResult result;
  std::unordered_map<std::string, std::size_t> first_line;  // item_id -> line
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = parse_line(line);
    if (!j) {
      result.errors.push_back({lineno, "not a JSON object"});
      continue;
    }
    bool ok = true;
    for (const char* field : {"item_id", "domain"}) {
      if (!j->contains(field) || !(*j)[field].is_string()) {
        result.errors.push_back({lineno, std::string("missing or non-string field '") + field + "'"});
        ok = false;
      }
    }
    if (!ok) continue;
    std::string item_id = (*j)["item_id"].get<std::string>();
    std::string title = j->contains("title") && (*j)["title"].is_string() ? (*j)["title"].get<std::string>() : "";
    if (title.empty()) {
      ++result.dropped_empty_title;
      continue;
    }
    auto [it, inserted] = first_line.emplace(item_id, lineno);
    if (!inserted) {
      std::ostringstream msg;
      msg << "duplicate item_id '" << item_id << "' (first seen at line " << it->second << ")";
      result.errors.push_back({lineno, msg.str()});
      continue;
    }
    result.items.push_back({std::move(item_id), (*j)["domain"].get<std::string>(), std::move(title)});
  }
  return result;
}

AssembleResult assemble_corpus(std::vector<ItemRecord> items, std::vector<InteractionEvent> events) {
  AssembleResult out;
  out.corpus.items = std::move(items);
  out.corpus.rebuild_indexes();
  out.corpus.events.reserve(events.size());
  for (auto& ev : events) {
    ItemIndex idx = out.corpus.find_item(ev.item_id);
    if (idx < 0) {
      out.event_errors.push_back("event for user '" + ev.user_id + "': unknown item '" + ev.item_id + "'");
      continue;
    }
    if (out.corpus.items[idx].domain_id != ev.domain_id) {
      out.event_errors.push_back("event for item '" + ev.item_id + "': domain '" + ev.domain_id +
                                 "' does not match catalog domain '" + out.corpus.items[idx].domain_id + "'");
      continue;
    }
    out.corpus.events.push_back(std::move(ev));
  }
  for (std::size_t i = 0; i < out.corpus.events.size(); ++i) {
    out.corpus.events[i].ingest_order = i;
  }
  return out;
}

Corpus filter_domains(const Corpus& corpus, const std::vector<std::string>& keep) {
  std::vector<ItemRecord> items;
  std::vector<InteractionEvent> events;
  auto keeps = [&](const std::string& d) {
    return std::find(keep.begin(), keep.end(), d) != keep.end();
  };
  for (const auto& item : corpus.items) {
    if (keeps(item.domain_id)) items.push_back(item);
  }
  for (const auto& ev : corpus.events) {
    if (keeps(ev.domain_id)) events.push_back(ev);
  }
  auto assembled = assemble_corpus(std::move(items), std::move(events));
  if (!assembled.event_errors.empty()) {
    throw DataError("filter_domains: inconsistent corpus: " + assembled.event_errors.front());
  }
  return std::move(assembled.corpus);
}

namespace {

void validate_spec(const SyntheticSpec& s) {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string("synthetic spec: ") + name + " must be >= 1");
  };
  positive(s.num_domains, "num_domains");
  positive(s.num_users, "num_users");
  positive(s.items_per_domain, "items_per_domain");
  positive(s.min_interactions_per_user, "min_interactions_per_user");
  if (s.num_topics < 2) throw ConfigError("synthetic spec: num_topics must be >= 2");
  if (s.vocab_per_topic < 2) throw ConfigError("synthetic spec: vocab_per_topic must be >= 2");
  if (s.noise_vocab_per_domain < 2) throw ConfigError("synthetic spec: noise_vocab_per_domain must be >= 2");
  if (s.max_interactions_per_user < s.min_interactions_per_user) {
    throw ConfigError("synthetic spec: max_interactions_per_user < min_interactions_per_user");
  }
  if (s.items_per_domain < s.num_topics) {
    throw ConfigError("synthetic spec: items_per_domain must be >= num_topics");
  }
  if (!(s.topic_preference_concentration > 0.0)) {
    throw ConfigError("synthetic spec: topic_preference_concentration must be > 0");
  }
  if (s.item_popularity_exponent < 0.0) {
    throw ConfigError("synthetic spec: item_popularity_exponent must be >= 0");
  }
}

// Sample k distinct indexes from [0, n); order of draws preserved.
std::vector<int> sample_distinct(Rng& rng, int n, int k) {
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  std::vector<int> out;
  out.reserve(k);
  for (int i = 0; i < k && i < n; ++i) {
    std::size_t j = i + uniform_below(rng, n - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

int sample_weighted(Rng& rng, const std::vector<double>& weights, double total) {
  double r = uniform_real(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (r < acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace

Corpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  validate_spec(spec);
  Rng rng(mix64(spec.seed, 0x636f727075730000ull));

  const int D = spec.num_domains;
  const int T = spec.num_topics;
  const int V = spec.vocab_per_topic;

  // Token pools. Shared topic tokens appear in every domain; per-(topic,domain)
  // tokens and noise tokens are domain-local. This plants a cross-domain signal
  // (shared tokens) alongside structure only visible in mixed sequences.
  auto shared_token = [&](int topic, int k) {
    return "top" + std::to_string(topic) + "w" + std::to_string(k);
  };
  auto local_token = [&](int domain, int topic, int k) {
    return "d" + std::to_string(domain) + "top" + std::to_string(topic) + "w" + std::to_string(k);
  };
  auto noise_token = [&](int domain, int k) {
    return "d" + std::to_string(domain) + "noise" + std::to_string(k);
  };

  Corpus corpus;
  for (int d = 0; d < D; ++d) {
    corpus.domains.push_back("domain" + std::to_string(d));
  }

  // Items. Topic assignment is balanced within each domain; titles take two
  // shared topic tokens, two domain-local topic tokens and two noise tokens.
  std::vector<int> item_topic;
  char idbuf[32];
  for (int d = 0; d < D; ++d) {
    for (int i = 0; i < spec.items_per_domain; ++i) {
      int topic = i % T;
      std::snprintf(idbuf, sizeof(idbuf), "d%d_i%04d", d, i);
      std::string title;
      for (int k : sample_distinct(rng, V, 2)) title += shared_token(topic, k) + " ";
      for (int k : sample_distinct(rng, V, 2)) title += local_token(d, topic, k) + " ";
      for (int k : sample_distinct(rng, spec.noise_vocab_per_domain, 2)) title += noise_token(d, k) + " ";
      title.pop_back();
      corpus.items.push_back({idbuf, corpus.domains[d], std::move(title)});
      item_topic.push_back(topic);
    }
  }
  corpus.rebuild_indexes();

  // Per (domain, topic) item groups with Zipf popularity weights, so the
  // training set has genuine head and tail items.
  std::vector<std::vector<ItemIndex>> group(D * T);
  for (ItemIndex i = 0; i < static_cast<ItemIndex>(corpus.items.size()); ++i) {
    group[corpus.item_domain[i] * T + item_topic[i]].push_back(i);
  }
  std::vector<std::vector<double>> group_weights(group.size());
  std::vector<double> group_total(group.size(), 0.0);
  for (std::size_t g = 0; g < group.size(); ++g) {
    for (std::size_t r = 0; r < group[g].size(); ++r) {
      double w = std::pow(static_cast<double>(r + 1), -spec.item_popularity_exponent);
      group_weights[g].push_back(w);
      group_total[g] += w;
    }
  }

  // Users: latent topic preference p ~ softmax(concentration * uniform) and a
  // mildly skewed domain preference; interactions draw (domain, topic, item)
  // independently per step, so most users span several domains.
  const int span = spec.max_interactions_per_user - spec.min_interactions_per_user + 1;
  for (int u = 0; u < spec.num_users; ++u) {
    std::snprintf(idbuf, sizeof(idbuf), "u%05d", u);
    std::string user_id = idbuf;

    std::vector<double> tpref(T);
    double tmax = -1.0;
    for (int t = 0; t < T; ++t) {
      tpref[t] = uniform_real(rng);
      tmax = std::max(tmax, tpref[t]);
    }
    double tsum = 0.0;
    for (int t = 0; t < T; ++t) {
      tpref[t] = std::exp(spec.topic_preference_concentration * (tpref[t] - tmax));
      tsum += tpref[t];
    }

    std::vector<double> dpref(D);
    double dsum = 0.0;
    for (int d = 0; d < D; ++d) {
      dpref[d] = 0.25 + uniform_real(rng);
      dsum += dpref[d];
    }

    int n = spec.min_interactions_per_user + static_cast<int>(uniform_below(rng, span));
    for (int i = 0; i < n; ++i) {
      int d = sample_weighted(rng, dpref, dsum);
      int t = sample_weighted(rng, tpref, tsum);
      const auto& g = group[d * T + t];
      ItemIndex item = g[sample_weighted(rng, group_weights[d * T + t], group_total[d * T + t])];
      InteractionEvent ev;
      ev.user_id = user_id;
      ev.item_id = corpus.items[item].item_id;
      ev.domain_id = corpus.items[item].domain_id;
      ev.timestamp = i + 1;
      ev.ingest_order = corpus.events.size();
      corpus.events.push_back(std::move(ev));
    }
  }
  return corpus;
}

void write_items_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& item : corpus.items) {
    json j{{"item_id", item.item_id}, {"domain", item.domain_id}, {"title", item.title}};
    out << j.dump() << "\n";
  }
}

void write_events_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& ev : corpus.events) {
    json j{{"user_id", ev.user_id}, {"item_id", ev.item_id}, {"domain", ev.domain_id}, {"timestamp", ev.timestamp}};
    out << j.dump() << "\n";
  }
}

}  // namespace textrec

#include "textrec/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace textrec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- config I/O

void check_keys(const json& node, const std::string& section,
                std::initializer_list<const char*> allowed) {
  if (!node.is_object())
    throw ConfigError("config: '" + section + "' must be an object");
  for (const auto& entry : node.items()) {
    bool known = std::any_of(allowed.begin(), allowed.end(),
                             [&](const char* k) { return entry.key() == k; });
    if (!known) throw ConfigError("config: unknown key '" + section + "." + entry.key() + "'");
  }
}

template <typename T>
void read_field(const json& node, const char* key, T& out) {
  if (auto it = node.find(key); it != node.end()) out = it->get<T>();
}

SyntheticSpec parse_synthetic(const json& node) {
  SyntheticSpec s;
  check_keys(node, "data.synthetic",
             {"num_domains", "num_topics", "vocab_per_topic", "noise_vocab_per_domain",
              "num_users", "items_per_domain", "min_interactions_per_user",
              "max_interactions_per_user", "topic_preference_concentration",
              "item_popularity_exponent", "seed"});
  read_field(node, "num_domains", s.num_domains);
  read_field(node, "num_topics", s.num_topics);
  read_field(node, "vocab_per_topic", s.vocab_per_topic);
  read_field(node, "noise_vocab_per_domain", s.noise_vocab_per_domain);
  read_field(node, "num_users", s.num_users);
  read_field(node, "items_per_domain", s.items_per_domain);
  read_field(node, "min_interactions_per_user", s.min_interactions_per_user);
  read_field(node, "max_interactions_per_user", s.max_interactions_per_user);
  read_field(node, "topic_preference_concentration", s.topic_preference_concentration);
  read_field(node, "item_popularity_exponent", s.item_popularity_exponent);
  read_field(node, "seed", s.seed);
  return s;
}

DataConfig parse_data(const json& node) {
  DataConfig d;
  check_keys(node, "data",
             {"source", "synthetic", "items_path", "events_path", "mix_strategy",
              "single_domain", "domains", "train_domains", "core_k", "min_seq_len",
              "max_items", "max_title_tokens", "vocab_min_freq"});
  read_field(node, "source", d.source);
  if (node.contains("synthetic")) d.synthetic = parse_synthetic(node.at("synthetic"));
  read_field(node, "items_path", d.items_path);
  read_field(node, "events_path", d.events_path);
  if (auto it = node.find("mix_strategy"); it != node.end())
    d.mix_strategy = parse_mix_strategy(it->get<std::string>());
  read_field(node, "single_domain", d.single_domain);
  read_field(node, "domains", d.domains);
  read_field(node, "train_domains", d.train_domains);
  read_field(node, "core_k", d.core_k);
  read_field(node, "min_seq_len", d.min_seq_len);
  read_field(node, "max_items", d.max_items);
  read_field(node, "max_title_tokens", d.max_title_tokens);
  read_field(node, "vocab_min_freq", d.vocab_min_freq);
  return d;
}

EncoderConfig parse_encoder(const json& node) {
  EncoderConfig e;
  check_keys(node, "model.encoder",
             {"num_layers", "model_dim", "num_heads", "ffn_dim", "max_positions",
              "direction", "dropout_rate", "ln_epsilon", "seed"});
  read_field(node, "num_layers", e.num_layers);
  read_field(node, "model_dim", e.model_dim);
  read_field(node, "num_heads", e.num_heads);
  read_field(node, "ffn_dim", e.ffn_dim);
  read_field(node, "max_positions", e.max_positions);
  if (auto it = node.find("direction"); it != node.end())
    e.direction = parse_direction(it->get<std::string>());
  read_field(node, "dropout_rate", e.dropout_rate);
  read_field(node, "ln_epsilon", e.ln_epsilon);
  read_field(node, "seed", e.seed);
  return e;
}

LoRAConfig parse_lora(const json& node) {
  LoRAConfig l;
  check_keys(node, "model.lora", {"rank", "alpha", "targets"});
  read_field(node, "rank", l.rank);
  read_field(node, "alpha", l.alpha);
  if (auto it = node.find("targets"); it != node.end()) {
    l.targets.clear();
    for (const auto& t : *it) l.targets.push_back(parse_lora_target(t.get<std::string>()));
  }
  return l;
}

ModelSection parse_model(const json& node) {
  ModelSection m;
  check_keys(node, "model",
             {"kind", "encoder", "item_variant", "user_variant", "lora", "init_checkpoint"});
  read_field(node, "kind", m.kind);
  if (node.contains("encoder")) m.encoder = parse_encoder(node.at("encoder"));
  if (auto it = node.find("item_variant"); it != node.end())
    m.item_variant = parse_item_text_variant(it->get<std::string>());
  if (auto it = node.find("user_variant"); it != node.end())
    m.user_variant = parse_user_text_variant(it->get<std::string>());
  if (auto it = node.find("lora"); it != node.end() && !it->is_null()) m.lora = parse_lora(*it);
  read_field(node, "init_checkpoint", m.init_checkpoint);
  return m;
}

TrainConfig parse_train(const json& node) {
  TrainConfig t;
  check_keys(node, "train",
             {"learning_rate", "batch_size", "num_negatives", "eval_every_steps",
              "patience_rounds", "max_steps", "adam_beta1", "adam_beta2", "adam_epsilon",
              "reduction", "seed", "exclude_user_positives", "eval_cutoff",
              "eval_num_negatives", "eval_seed"});
  read_field(node, "learning_rate", t.learning_rate);
  read_field(node, "batch_size", t.batch_size);
  read_field(node, "num_negatives", t.num_negatives);
  read_field(node, "eval_every_steps", t.eval_every_steps);
  read_field(node, "patience_rounds", t.patience_rounds);
  read_field(node, "max_steps", t.max_steps);
  read_field(node, "adam_beta1", t.adam_beta1);
  read_field(node, "adam_beta2", t.adam_beta2);
  read_field(node, "adam_epsilon", t.adam_epsilon);
  if (auto it = node.find("reduction"); it != node.end())
    t.reduction = parse_loss_reduction(it->get<std::string>());
  read_field(node, "seed", t.seed);
  read_field(node, "exclude_user_positives", t.exclude_user_positives);
  read_field(node, "eval_cutoff", t.eval_cutoff);
  read_field(node, "eval_num_negatives", t.eval_num_negatives);
  read_field(node, "eval_seed", t.eval_seed);
  return t;
}

EvalConfig parse_eval(const json& node) {
  EvalConfig e;
  check_keys(node, "eval", {"cutoffs", "num_negatives", "seed"});
  read_field(node, "cutoffs", e.cutoffs);
  read_field(node, "num_negatives", e.num_negatives);
  read_field(node, "seed", e.seed);
  return e;
}

AnalysisSection parse_analysis(const json& node) {
  AnalysisSection a;
  check_keys(node, "analysis", {"buckets", "top_k"});
  if (auto it = node.find("buckets"); it != node.end()) {
    check_keys(*it, "analysis.buckets", {"coarse_bounds", "tail_fractions", "head_fractions"});
    read_field(*it, "coarse_bounds", a.buckets.coarse_bounds);
    read_field(*it, "tail_fractions", a.buckets.tail_fractions);
    read_field(*it, "head_fractions", a.buckets.head_fractions);
  }
  read_field(node, "top_k", a.top_k);
  return a;
}

RunSection parse_run(const json& node) {
  RunSection r;
  check_keys(node, "run", {"output_dir", "seed", "seeds"});
  read_field(node, "output_dir", r.output_dir);
  read_field(node, "seed", r.seed);
  read_field(node, "seeds", r.seeds);
  return r;
}

void validate_config(const ExperimentConfig& c) {
  if (c.data.source != "synthetic" && c.data.source != "files")
    throw ConfigError("data.source must be 'synthetic' or 'files'");
  if (c.data.source == "files" && (c.data.items_path.empty() || c.data.events_path.empty()))
    throw ConfigError("data.source 'files' needs data.items_path and data.events_path");
  if (c.data.core_k < 1) throw ConfigError("data.core_k must be >= 1");
  if (c.data.min_seq_len < 3) throw ConfigError("data.min_seq_len must be >= 3");
  if (c.data.max_items < 1) throw ConfigError("data.max_items must be >= 1");
  if (c.data.max_title_tokens < 1) throw ConfigError("data.max_title_tokens must be >= 1");
  if (c.data.vocab_min_freq < 1) throw ConfigError("data.vocab_min_freq must be >= 1");
  if (c.model.kind != "text" && c.model.kind != "id")
    throw ConfigError("model.kind must be 'text' or 'id'");
  if (c.model.lora && c.model.lora->rank < 1) throw ConfigError("model.lora.rank must be >= 1");
  c.train.validate();
  c.eval.validate();
  c.analysis.buckets.validate();
  if (c.analysis.top_k < 1) throw ConfigError("analysis.top_k must be >= 1");
  if (c.run.output_dir.empty()) throw ConfigError("run.output_dir must not be empty");
}

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& doc) {
  try {
    check_keys(doc, "(top level)", {"data", "model", "train", "eval", "analysis", "run"});
    ExperimentConfig c;
    if (doc.contains("data")) c.data = parse_data(doc.at("data"));
    if (doc.contains("model")) c.model = parse_model(doc.at("model"));
    if (doc.contains("train")) c.train = parse_train(doc.at("train"));
    if (doc.contains("eval")) c.eval = parse_eval(doc.at("eval"));
    if (doc.contains("analysis")) c.analysis = parse_analysis(doc.at("analysis"));
    if (doc.contains("run")) c.run = parse_run(doc.at("run"));
    validate_config(c);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

json experiment_config_json(const ExperimentConfig& c) {
  json doc;
  doc["data"] = {
      {"source", c.data.source},
      {"synthetic",
       {{"num_domains", c.data.synthetic.num_domains},
        {"num_topics", c.data.synthetic.num_topics},
        {"vocab_per_topic", c.data.synthetic.vocab_per_topic},
        {"noise_vocab_per_domain", c.data.synthetic.noise_vocab_per_domain},
        {"num_users", c.data.synthetic.num_users},
        {"items_per_domain", c.data.synthetic.items_per_domain},
        {"min_interactions_per_user", c.data.synthetic.min_interactions_per_user},
        {"max_interactions_per_user", c.data.synthetic.max_interactions_per_user},
        {"topic_preference_concentration", c.data.synthetic.topic_preference_concentration},
        {"item_popularity_exponent", c.data.synthetic.item_popularity_exponent},
        {"seed", c.data.synthetic.seed}}},
      {"items_path", c.data.items_path},
      {"events_path", c.data.events_path},
      {"mix_strategy", to_string(c.data.mix_strategy)},
      {"single_domain", c.data.single_domain},
      {"domains", c.data.domains},
      {"train_domains", c.data.train_domains},
      {"core_k", c.data.core_k},
      {"min_seq_len", c.data.min_seq_len},
      {"max_items", c.data.max_items},
      {"max_title_tokens", c.data.max_title_tokens},
      {"vocab_min_freq", c.data.vocab_min_freq},
  };
  json lora(nullptr);
  if (c.model.lora) {
    std::vector<std::string> targets;
    for (auto t : c.model.lora->targets) targets.push_back(to_string(t));
    lora = {{"rank", c.model.lora->rank}, {"alpha", c.model.lora->alpha}, {"targets", targets}};
  }
  doc["model"] = {
      {"kind", c.model.kind},
      {"encoder",
       {{"num_layers", c.model.encoder.num_layers},
        {"model_dim", c.model.encoder.model_dim},
        {"num_heads", c.model.encoder.num_heads},
        {"ffn_dim", c.model.encoder.ffn_dim},
        {"max_positions", c.model.encoder.max_positions},
        {"direction", to_string(c.model.encoder.direction)},
        {"dropout_rate", c.model.encoder.dropout_rate},
        {"ln_epsilon", c.model.encoder.ln_epsilon},
        {"seed", c.model.encoder.seed}}},
      {"item_variant", to_string(c.model.item_variant)},
      {"user_variant", to_string(c.model.user_variant)},
      {"lora", lora},
      {"init_checkpoint", c.model.init_checkpoint},
  };
  doc["train"] = {
      {"learning_rate", c.train.learning_rate},
      {"batch_size", c.train.batch_size},
      {"num_negatives", c.train.num_negatives},
      {"eval_every_steps", c.train.eval_every_steps},
      {"patience_rounds", c.train.patience_rounds},
      {"max_steps", c.train.max_steps},
      {"adam_beta1", c.train.adam_beta1},
      {"adam_beta2", c.train.adam_beta2},
      {"adam_epsilon", c.train.adam_epsilon},
      {"reduction", to_string(c.train.reduction)},
      {"seed", c.train.seed},
      {"exclude_user_positives", c.train.exclude_user_positives},
      {"eval_cutoff", c.train.eval_cutoff},
      {"eval_num_negatives", c.train.eval_num_negatives},
      {"eval_seed", c.train.eval_seed},
  };
  doc["eval"] = {
      {"cutoffs", c.eval.cutoffs},
      {"num_negatives", c.eval.num_negatives},
      {"seed", c.eval.seed},
  };
  doc["analysis"] = {
      {"buckets",
       {{"coarse_bounds", c.analysis.buckets.coarse_bounds},
        {"tail_fractions", c.analysis.buckets.tail_fractions},
        {"head_fractions", c.analysis.buckets.head_fractions}}},
      {"top_k", c.analysis.top_k},
  };
  doc["run"] = {
      {"output_dir", c.run.output_dir},
      {"seed", c.run.seed},
      {"seeds", c.run.seeds},
  };
  return doc;
}

void apply_config_override(json& doc, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value, got: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  std::string pointer = "/";
  for (char ch : path) pointer += (ch == '.') ? '/' : ch;
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // bare strings stay strings
  }
  try {
    doc[json::json_pointer(pointer)] = parsed;
  } catch (const json::exception& e) {
    throw ConfigError("bad override path '" + path + "': " + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  for (const auto& o : overrides) apply_config_override(doc, o);
  ExperimentConfig config = parse_experiment_config(doc);
  if (const char* root = std::getenv("TEXTREC_OUTPUT_ROOT"); root && *root) {
    fs::path out = config.run.output_dir;
    if (out.is_relative()) config.run.output_dir = (fs::path(root) / out).string();
  }
  return config;
}

// ------------------------------------------------------------------ preparing

namespace {

std::vector<SplitInstance> remap_instances(std::vector<SplitInstance> instances,
                                           const Corpus& from, const Corpus& to) {
  auto convert = [&](ItemIndex i) {
    ItemIndex j = to.find_item(from.items[i].item_id);
    if (j < 0) throw DataError("item lost while remapping split: " + from.items[i].item_id);
    return j;
  };
  for (auto& inst : instances) {
    inst.target = convert(inst.target);
    for (auto& h : inst.history) h = convert(h);
  }
  return instances;
}

json split_stats(const Corpus& dataset, const DatasetSplit& split, const Tokenizer& vocab,
                 std::size_t dropped) {
  std::set<std::string> users;
  std::map<std::string, std::set<DomainIndex>> domains_of_user;
  std::map<std::string, std::int64_t> events_by_domain;
  std::map<std::string, std::int64_t> items_by_domain;
  std::map<std::string, std::set<std::string>> users_by_domain;
  for (const auto& item : dataset.items) items_by_domain[item.domain_id]++;
  for (const auto& ev : dataset.events) {
    users.insert(ev.user_id);
    domains_of_user[ev.user_id].insert(dataset.find_domain(ev.domain_id));
    events_by_domain[ev.domain_id]++;
    users_by_domain[ev.domain_id].insert(ev.user_id);
  }
  std::size_t multi = 0;
  for (const auto& [user, doms] : domains_of_user)
    if (doms.size() >= 2) ++multi;

  json domains = json::object();
  for (const auto& name : dataset.domains) {
    domains[name] = {{"items", items_by_domain[name]},
                     {"events", events_by_domain[name]},
                     {"users", users_by_domain[name].size()}};
  }
  std::map<std::string, std::size_t> partitions;
  for (const auto& inst : split.test) partitions[to_string(inst.partition)]++;

  json j;
  j["items"] = dataset.items.size();
  j["events"] = dataset.events.size();
  j["users"] = users.size();
  j["multi_domain_user_fraction"] =
      users.empty() ? 0.0 : static_cast<double>(multi) / static_cast<double>(users.size());
  j["domains"] = domains;
  j["vocab_size"] = vocab.vocab_size();
  j["mix_strategy"] = to_string(split.provenance.strategy);
  j["core_k"] = split.provenance.core_k;
  j["min_seq_len"] = split.provenance.min_seq_len;
  j["split"] = {{"train", split.train.size()},
                {"valid", split.valid.size()},
                {"test", split.test.size()},
                {"dropped_short_sequences", dropped}};
  j["test_partitions"] = partitions;
  return j;
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config) {
  Corpus raw;
  if (config.data.source == "synthetic") {
    raw = generate_synthetic_corpus(config.data.synthetic);
  } else {
    auto items = load_item_meta(config.data.items_path, IngestFormat::json_lines);
    if (!items.errors.empty())
      throw DataError("item file " + config.data.items_path + " line " +
                      std::to_string(items.errors.front().line) + ": " +
                      items.errors.front().message);
    auto events = load_interactions(config.data.events_path, IngestFormat::json_lines);
    if (!events.errors.empty())
      throw DataError("event file " + config.data.events_path + " line " +
                      std::to_string(events.errors.front().line) + ": " +
                      events.errors.front().message);
    auto assembled = assemble_corpus(std::move(items.items), std::move(events.events));
    if (!assembled.event_errors.empty())
      throw DataError("corpus: " + assembled.event_errors.front());
    raw = std::move(assembled.corpus);
  }

  if (!config.data.domains.empty()) {
    for (const auto& d : config.data.domains)
      if (raw.find_domain(d) == kNoDomain) throw DataError("unknown domain in data.domains: " + d);
    raw = filter_domains(raw, config.data.domains);
  }
  Corpus dataset = five_core_filter(raw, config.data.core_k);
  if (dataset.events.empty())
    throw DataError("core filter removed every interaction; relax data.core_k");

  Corpus train_corpus = dataset;
  bool restricted = !config.data.train_domains.empty();
  if (restricted) {
    for (const auto& d : config.data.train_domains)
      if (dataset.find_domain(d) == kNoDomain)
        throw DataError("unknown domain in data.train_domains: " + d);
    train_corpus = filter_domains(dataset, config.data.train_domains);
  }

  DomainIndex single = kNoDomain;
  if (config.data.mix_strategy == MixStrategy::single_domain) {
    if (config.data.single_domain.empty())
      throw ConfigError("the single_domain strategy needs data.single_domain");
    single = train_corpus.find_domain(config.data.single_domain);
    if (single == kNoDomain)
      throw DataError("unknown domain in data.single_domain: " + config.data.single_domain);
  }

  std::size_t dropped = 0;
  auto sequences = build_sequences(train_corpus, config.data.mix_strategy, single,
                                   config.data.min_seq_len, &dropped);
  DatasetSplit split = leave_one_out_split(sequences, train_corpus);
  if (split.train.empty())
    throw DataError("no training instances left; relax data.core_k or data.min_seq_len");
  if (restricted) {
    split.train = remap_instances(std::move(split.train), train_corpus, dataset);
    split.valid = remap_instances(std::move(split.valid), train_corpus, dataset);
    split.test = remap_instances(std::move(split.test), train_corpus, dataset);
  }
  split.provenance.strategy = config.data.mix_strategy;
  split.provenance.core_k = config.data.core_k;
  split.provenance.min_seq_len = config.data.min_seq_len;
  split.provenance.domains = train_corpus.domains;
  split.provenance.dropped_short_sequences = dropped;

  std::vector<std::string> extra_texts;
  if (config.model.kind == "text" && config.model.item_variant == ItemTextVariant::with_id) {
    std::string ids = "ID:";
    for (const auto& item : dataset.items) ids += " " + item.item_id;
    extra_texts.push_back(ids);
  }
  if (config.model.kind == "text" && config.model.user_variant == UserTextVariant::with_prompt)
    extra_texts.push_back(kUserPrompt);
  Tokenizer vocab = build_vocab(train_corpus, config.data.vocab_min_freq, extra_texts);

  PreparedData out{std::move(dataset), std::move(split), std::move(vocab), {}};
  out.stats = split_stats(out.dataset, out.split, out.vocab, dropped);
  return out;
}

MetricReport merge_reports(const std::vector<MetricReport>& parts) {
  if (parts.empty()) throw ConfigError("merge_reports: nothing to merge");
  MetricReport out;
  out.cutoffs = parts.front().cutoffs;
  out.num_negatives = parts.front().num_negatives;
  for (const auto& p : parts)
    if (p.cutoffs != out.cutoffs || p.num_negatives != out.num_negatives)
      throw ConfigError("merge_reports: reports come from different protocols");

  struct Acc {
    std::size_t count = 0;
    std::map<int, double> recall, ndcg;
  };
  auto fold = [](Acc& acc, const MetricBlock& block) {
    if (block.count == 0) return;
    acc.count += block.count;
    for (const auto& [n, v] : block.recall) acc.recall[n] += v * static_cast<double>(block.count);
    for (const auto& [n, v] : block.ndcg) acc.ndcg[n] += v * static_cast<double>(block.count);
  };
  auto finish = [](const Acc& acc) {
    MetricBlock block;
    block.count = acc.count;
    if (acc.count) {
      for (const auto& [n, v] : acc.recall) block.recall[n] = v / static_cast<double>(acc.count);
      for (const auto& [n, v] : acc.ndcg) block.ndcg[n] = v / static_cast<double>(acc.count);
    }
    return block;
  };

  Acc aggregate;
  std::map<std::string, Acc> domains, partitions;
  for (const auto& p : parts) {
    fold(aggregate, p.aggregate);
    for (const auto& [k, v] : p.domains) fold(domains[k], v);
    for (const auto& [k, v] : p.partitions) fold(partitions[k], v);
    for (const auto& [k, v] : p.flags) out.flags[k] += v;
  }
  out.aggregate = finish(aggregate);
  for (const auto& [k, v] : domains) out.domains[k] = finish(v);
  for (const auto& [k, v] : partitions) out.partitions[k] = finish(v);
  return out;
}

// ------------------------------------------------------------------- commands

namespace {

fs::path run_dir(const ExperimentConfig& c) { return fs::path(c.run.output_dir); }

void write_config_snapshot(const ExperimentConfig& c) {
  fs::create_directories(run_dir(c));
  write_text_file(run_dir(c) / "config.json", experiment_config_json(c).dump(2) + "\n");
}

Corpus load_prepared_corpus(const fs::path& data_dir) {
  fs::path items_path = data_dir / "items.jsonl";
  if (!fs::exists(items_path))
    throw DataError("prepared data not found: " + items_path.string() +
                    " (run the prepare command first)");
  auto items = load_item_meta(items_path.string(), IngestFormat::json_lines);
  if (!items.errors.empty())
    throw DataError("corrupt " + items_path.string() + ": " + items.errors.front().message);
  auto events = load_interactions((data_dir / "events.jsonl").string(), IngestFormat::json_lines);
  if (!events.errors.empty())
    throw DataError("corrupt " + (data_dir / "events.jsonl").string() + ": " +
                    events.errors.front().message);
  auto assembled = assemble_corpus(std::move(items.items), std::move(events.events));
  if (!assembled.event_errors.empty())
    throw DataError("corrupt prepared corpus: " + assembled.event_errors.front());
  return std::move(assembled.corpus);
}

struct LoadedData {
  Corpus dataset;
  DatasetSplit split;
};

LoadedData load_prepared(const ExperimentConfig& c) {
  fs::path data_dir = run_dir(c) / "data";
  LoadedData out;
  out.dataset = load_prepared_corpus(data_dir);
  out.split = read_manifest((data_dir / "manifest.jsonl").string(), out.dataset);
  return out;
}

EncoderWeights& model_encoder(RankingModel& model) {
  if (auto* text = dynamic_cast<TextModel*>(&model)) return text->encoder();
  if (auto* id = dynamic_cast<IdModel*>(&model)) return id->encoder();
  throw ConfigError("model kind without an encoder");
}

std::vector<ItemIndex> train_catalog(std::span<const SplitInstance> train) {
  std::set<ItemIndex> seen;
  for (const auto& inst : train) {
    seen.insert(inst.target);
    seen.insert(inst.history.begin(), inst.history.end());
  }
  return {seen.begin(), seen.end()};
}

std::unique_ptr<RankingModel> build_model(const ExperimentConfig& config, const Corpus& dataset,
                                          const Tokenizer& vocab,
                                          std::span<const SplitInstance> train) {
  if (!config.model.init_checkpoint.empty()) {
    auto model = load_model(config.model.init_checkpoint, dataset);
    if (model->kind() != config.model.kind)
      throw ConfigError("model.init_checkpoint holds a '" + model->kind() +
                        "' model but model.kind is '" + config.model.kind + "'");
    if (config.model.lora) model_encoder(*model).apply_lora(*config.model.lora);
    return model;
  }
  EncoderConfig enc = config.model.encoder;
  if (config.model.kind == "text") {
    enc.vocab_size = static_cast<int>(vocab.vocab_size());
    EncoderWeights weights = EncoderWeights::init(enc);
    if (config.model.lora) weights.apply_lora(*config.model.lora);
    TextModelConfig mc{config.data.max_items, config.data.max_title_tokens,
                       config.model.item_variant, config.model.user_variant};
    return std::make_unique<TextModel>(std::move(weights), vocab, dataset, mc);
  }
  auto model = std::make_unique<IdModel>(enc, dataset, train_catalog(train),
                                         IdModelConfig{config.data.max_items});
  if (config.model.lora) model->encoder().apply_lora(*config.model.lora);
  return model;
}

void check_rank_metric_consistency(const MetricReport& report) {
  auto check = [](const std::string& scope, const MetricBlock& block) {
    auto r = block.recall.find(1);
    auto n = block.ndcg.find(1);
    if (r != block.recall.end() && n != block.ndcg.end() && r->second != n->second)
      throw NumericError("metric inconsistency in scope '" + scope + "': ndcg@1 != recall@1");
  };
  check("aggregate", report.aggregate);
  for (const auto& [k, v] : report.domains) check("domain:" + k, v);
  for (const auto& [k, v] : report.partitions) check("partition:" + k, v);
}

std::string metric_suffix_header(const std::vector<int>& cutoffs) {
  std::ostringstream out;
  for (int n : cutoffs) out << ",recall@" << n;
  for (int n : cutoffs) out << ",ndcg@" << n;
  return out.str();
}

void append_metric_cells(std::ostringstream& out, const std::vector<int>& cutoffs,
                         const std::map<int, double>& recall, const std::map<int, double>& ndcg) {
  auto cell = [&](const std::map<int, double>& m, int n) {
    out << ',';
    if (auto it = m.find(n); it != m.end()) out << format_double(it->second);
  };
  for (int n : cutoffs) cell(recall, n);
  for (int n : cutoffs) cell(ndcg, n);
}

json metrics_json(const std::vector<int>& cutoffs, const std::map<int, double>& recall,
                  const std::map<int, double>& ndcg) {
  json r = json::object(), n = json::object();
  for (int c : cutoffs) {
    if (auto it = recall.find(c); it != recall.end()) r[std::to_string(c)] = it->second;
    if (auto it = ndcg.find(c); it != ndcg.end()) n[std::to_string(c)] = it->second;
  }
  return json{{"recall", r}, {"ndcg", n}};
}

std::vector<std::pair<std::string, const MetricBlock*>> scope_rows(const MetricReport& report) {
  std::vector<std::pair<std::string, const MetricBlock*>> rows{{"aggregate", &report.aggregate}};
  for (const auto& [k, v] : report.partitions) rows.emplace_back("partition:" + k, &v);
  return rows;
}

std::string bucket_performance_csv(const std::map<std::string, BucketPerformance>& rows,
                                   const std::vector<int>& cutoffs) {
  std::ostringstream out;
  out << "bucket,count" << metric_suffix_header(cutoffs) << "\n";
  for (const auto& [bucket, perf] : rows) {
    out << bucket << ',' << perf.count;
    append_metric_cells(out, cutoffs, perf.recall, perf.ndcg);
    out << "\n";
  }
  return out.str();
}

}  // namespace

void cmd_prepare(const ExperimentConfig& config) {
  PreparedData prepared = prepare_data(config);
  fs::path out = run_dir(config);
  fs::create_directories(out / "data");
  write_config_snapshot(config);
  write_items_jsonl(prepared.dataset, (out / "data" / "items.jsonl").string());
  write_events_jsonl(prepared.dataset, (out / "data" / "events.jsonl").string());
  write_manifest(prepared.split, prepared.dataset, (out / "data" / "manifest.jsonl").string());
  prepared.vocab.save((out / "data" / "vocab.tsv").string());
  write_text_file(out / "data" / "stats.json", prepared.stats.dump(2) + "\n");
}

void cmd_train(const ExperimentConfig& config) {
  fs::path out = run_dir(config);
  write_config_snapshot(config);
  LoadedData data = load_prepared(config);
  Tokenizer vocab = Tokenizer::load((out / "data" / "vocab.tsv").string());
  auto model = build_model(config, data.dataset, vocab, data.split.train);
  TrainResult result = fit(*model, data.split, data.dataset, config.train,
                           (out / "checkpoint").string());

  std::set<std::string> train_domains;
  for (const auto& inst : data.split.train)
    train_domains.insert(data.dataset.domains[data.dataset.item_domain[inst.target]]);
  json meta{
      {"kind", model->kind()},
      {"total_params", model->parameter_count(false)},
      {"trainable_params", model->parameter_count(true)},
      {"train_domains", std::vector<std::string>(train_domains.begin(), train_domains.end())},
      {"steps", result.steps},
      {"best_metric", result.best_metric},
      {"best_step", result.best_step},
      {"stopped_by_patience", result.stopped_by_patience},
  };
  write_text_file(out / "train_meta.json", meta.dump(2) + "\n");
}

void cmd_evaluate(const ExperimentConfig& config, const EvaluateOptions& options) {
  fs::path out = run_dir(config);
  write_config_snapshot(config);
  LoadedData data = load_prepared(config);
  std::string checkpoint =
      options.checkpoint.empty() ? (out / "checkpoint" / "best").string() : options.checkpoint;
  auto model = load_model(checkpoint, data.dataset);

  EvalConfig eval_config = config.eval;
  if (!options.cutoffs.empty()) {
    eval_config.cutoffs = options.cutoffs;
    eval_config.validate();
  }
  if (options.split != "test" && options.split != "valid")
    throw ConfigError("evaluate split must be 'test' or 'valid'");

  MetricReport report;
  std::string name;
  if (!options.zero_shot_domains.empty()) {
    json meta = read_json_file(out / "train_meta.json");
    auto train_domains = meta.at("train_domains").get<std::vector<std::string>>();
    std::vector<SplitInstance> transfer;
    for (const auto& domain : options.zero_shot_domains) {
      DomainIndex idx = data.dataset.find_domain(domain);
      if (idx == kNoDomain) throw DataError("unknown zero-shot domain: " + domain);
      auto sequences = build_sequences(data.dataset, MixStrategy::single_domain, idx,
                                       config.data.min_seq_len);
      DatasetSplit split = leave_one_out_split(sequences, data.dataset);
      const auto& source = options.split == "valid" ? split.valid : split.test;
      transfer.insert(transfer.end(), source.begin(), source.end());
    }
    report = zero_shot_evaluate(*model, transfer, data.dataset, train_domains, eval_config);
    name = "zero_shot_" + options.split;
  } else {
    std::span<const SplitInstance> instances =
        options.split == "valid" ? std::span<const SplitInstance>(data.split.valid)
                                 : std::span<const SplitInstance>(data.split.test);
    report = evaluate(*model, instances, data.dataset, eval_config);
    name = "eval_" + options.split;
  }
  if (!options.partitions) report.partitions.clear();
  check_rank_metric_consistency(report);

  fs::create_directories(out / "reports");
  write_metric_report_json(report, (out / "reports" / (name + ".json")).string());
  write_metric_report_csv(report, (out / "reports" / (name + ".csv")).string());
}

void cmd_analyze(const ExperimentConfig& config, const AnalyzeOptions& options) {
  fs::path out = run_dir(config);
  write_config_snapshot(config);
  LoadedData data = load_prepared(config);
  std::string checkpoint =
      options.checkpoint.empty() ? (out / "checkpoint" / "best").string() : options.checkpoint;
  auto model = load_model(checkpoint, data.dataset);

  PopularityIndex popularity = build_popularity_index(data.split.train, data.dataset);
  ItemBuckets buckets = bucket_items(popularity, data.dataset, config.analysis.buckets);

  fs::path dir = out / "analysis";
  fs::create_directories(dir);
  auto rows = per_bucket_performance(*model, data.split.test, data.dataset, buckets, config.eval);
  write_text_file(dir / "bucket_performance.csv",
                  bucket_performance_csv(rows, config.eval.cutoffs));
  ExposureReport exposure =
      exposure_rates(*model, data.split.test, data.dataset, buckets, config.analysis.top_k);
  write_text_file(dir / "exposure.csv", exposure_report_csv(exposure));
  export_embeddings(*model, data.dataset, buckets, (dir / "embeddings.tsv").string());

  if (!options.baseline.empty()) {
    auto baseline = load_model(options.baseline, data.dataset);
    MetricReport base_report = evaluate(*baseline, data.split.test, data.dataset, config.eval);
    MetricReport main_report = evaluate(*model, data.split.test, data.dataset, config.eval);
    write_text_file(dir / "improvement.csv",
                    improvement_table_csv(relative_improvement(base_report, main_report)));
  }
}

// -------------------------------------------------------------------- recipes

namespace {

std::vector<std::uint64_t> study_seeds(const ExperimentConfig& c) {
  return c.run.seeds.empty() ? std::vector<std::uint64_t>{c.run.seed} : c.run.seeds;
}

TrainResult run_cell(const ExperimentConfig& config, RankingModel& model,
                     const DatasetSplit& split, const Corpus& dataset, std::uint64_t seed,
                     const fs::path& cell_dir) {
  TrainConfig tc = config.train;
  tc.seed = seed;
  fs::create_directories(cell_dir);
  return fit(model, split, dataset, tc, cell_dir.string());
}

MetricReport evaluate_best(const fs::path& cell_dir, const Corpus& dataset,
                           std::span<const SplitInstance> instances, const EvalConfig& config) {
  auto model = load_model((cell_dir / "best").string(), dataset);
  return evaluate(*model, instances, dataset, config);
}

std::vector<SplitInstance> instances_in_domain(std::span<const SplitInstance> instances,
                                               const Corpus& corpus, DomainIndex domain) {
  std::vector<SplitInstance> out;
  for (const auto& inst : instances)
    if (corpus.item_domain[inst.target] == domain) out.push_back(inst);
  return out;
}

struct StudyTable {
  std::ostringstream csv;
  json rows = json::array();
};

void write_study_table(const fs::path& dir, const std::string& name, StudyTable& table) {
  write_text_file(dir / (name + ".csv"), table.csv.str());
  write_text_file(dir / (name + ".json"), json{{"rows", table.rows}}.dump(2) + "\n");
}

// Per seed: one model per strategy (three per-domain models for
// single_domain), all scored on the shared user_mixed test instances.
void recipe_mix_strategy(const ExperimentConfig& config) {
  fs::path dir = run_dir(config) / "recipes" / "mix_strategy_study";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_config_snapshot(config);

  ExperimentConfig base_config = config;
  base_config.data.mix_strategy = MixStrategy::user_mixed;
  base_config.data.single_domain.clear();
  base_config.data.train_domains.clear();
  PreparedData base = prepare_data(base_config);
  const Corpus& dataset = base.dataset;

  StudyTable table;
  table.csv << "strategy,seed,scope,count" << metric_suffix_header(config.eval.cutoffs) << "\n";

  for (std::uint64_t seed : study_seeds(config)) {
    fs::path seed_dir = dir / ("seed" + std::to_string(seed));
    for (MixStrategy strategy : {MixStrategy::single_domain, MixStrategy::domain_split,
                                 MixStrategy::user_mixed}) {
      ExperimentConfig cell_config = base_config;
      cell_config.model.encoder.seed = seed;
      MetricReport report;
      if (strategy == MixStrategy::single_domain) {
        std::vector<MetricReport> parts;
        for (DomainIndex d = 0; d < static_cast<DomainIndex>(dataset.num_domains()); ++d) {
          auto sequences = build_sequences(dataset, MixStrategy::single_domain, d,
                                           config.data.min_seq_len);
          DatasetSplit split = leave_one_out_split(sequences, dataset);
          if (split.train.empty()) continue;
          auto model = build_model(cell_config, dataset, base.vocab, split.train);
          fs::path cell = seed_dir / "single_domain" / dataset.domains[d];
          run_cell(cell_config, *model, split, dataset, seed, cell);
          auto subset = instances_in_domain(base.split.test, dataset, d);
          parts.push_back(evaluate_best(cell, dataset, subset, config.eval));
        }
        report = merge_reports(parts);
      } else {
        DatasetSplit split;
        if (strategy == MixStrategy::user_mixed) {
          split = base.split;
        } else {
          auto sequences = build_sequences(dataset, MixStrategy::domain_split, kNoDomain,
                                           config.data.min_seq_len);
          split = leave_one_out_split(sequences, dataset);
        }
        auto model = build_model(cell_config, dataset, base.vocab, split.train);
        fs::path cell = seed_dir / to_string(strategy);
        run_cell(cell_config, *model, split, dataset, seed, cell);
        report = evaluate_best(cell, dataset, base.split.test, config.eval);
      }
      for (const auto& [scope, block] : scope_rows(report)) {
        table.csv << to_string(strategy) << ',' << seed << ',' << scope << ',' << block->count;
        append_metric_cells(table.csv, config.eval.cutoffs, block->recall, block->ndcg);
        table.csv << "\n";
        table.rows.push_back({{"strategy", to_string(strategy)},
                              {"seed", seed},
                              {"scope", scope},
                              {"count", block->count},
                              {"metrics",
                               metrics_json(config.eval.cutoffs, block->recall, block->ndcg)}});
      }
    }
  }
  write_study_table(dir, "mix_strategy_study", table);
}

// Text model vs. id baseline on the same split, with the relative gap.
void recipe_partition(const ExperimentConfig& config) {
  fs::path dir = run_dir(config) / "recipes" / "partition_study";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_config_snapshot(config);

  ExperimentConfig base_config = config;
  base_config.data.mix_strategy = MixStrategy::user_mixed;
  base_config.data.single_domain.clear();
  base_config.data.train_domains.clear();
  base_config.model.kind = "text";  // vocabulary follows the text variants
  PreparedData base = prepare_data(base_config);
  const Corpus& dataset = base.dataset;

  StudyTable table;
  table.csv << "model,seed,scope,count" << metric_suffix_header(config.eval.cutoffs) << "\n";
  std::ostringstream imp_csv;
  imp_csv << "seed,scope,metric,relative_improvement\n";
  json improvements = json::array();

  for (std::uint64_t seed : study_seeds(config)) {
    fs::path seed_dir = dir / ("seed" + std::to_string(seed));
    std::map<std::string, MetricReport> reports;
    for (const std::string& kind : {std::string("text"), std::string("id")}) {
      ExperimentConfig cell_config = base_config;
      cell_config.model.kind = kind;
      cell_config.model.encoder.seed = seed;
      auto model = build_model(cell_config, dataset, base.vocab, base.split.train);
      fs::path cell = seed_dir / kind;
      run_cell(cell_config, *model, base.split, dataset, seed, cell);
      reports[kind] = evaluate_best(cell, dataset, base.split.test, config.eval);
      for (const auto& [scope, block] : scope_rows(reports[kind])) {
        table.csv << kind << ',' << seed << ',' << scope << ',' << block->count;
        append_metric_cells(table.csv, config.eval.cutoffs, block->recall, block->ndcg);
        table.csv << "\n";
        table.rows.push_back({{"model", kind},
                              {"seed", seed},
                              {"scope", scope},
                              {"count", block->count},
                              {"metrics",
                               metrics_json(config.eval.cutoffs, block->recall, block->ndcg)}});
      }
    }
    ImprovementTable improvement = relative_improvement(reports["id"], reports["text"]);
    for (const auto& [scope, metrics] : improvement) {
      for (const auto& [metric, cell] : metrics) {
        imp_csv << seed << ',' << scope << ',' << metric << ',';
        if (cell.defined) imp_csv << format_double(cell.value);
        imp_csv << "\n";
        json row{{"seed", seed}, {"scope", scope}, {"metric", metric}};
        if (cell.defined) row["value"] = cell.value;
        improvements.push_back(row);
      }
    }
  }
  write_study_table(dir, "partition_study", table);
  write_text_file(dir / "partition_study_improvement.csv", imp_csv.str());
  write_text_file(dir / "partition_study_improvement.json",
                  json{{"rows", improvements}}.dump(2) + "\n");
}

// Ranking quality per popularity bucket, text vs. id.
void recipe_coldstart(const ExperimentConfig& config) {
  fs::path dir = run_dir(config) / "recipes" / "coldstart_study";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_config_snapshot(config);

  ExperimentConfig base_config = config;
  base_config.data.mix_strategy = MixStrategy::user_mixed;
  base_config.data.single_domain.clear();
  base_config.data.train_domains.clear();
  base_config.model.kind = "text";
  PreparedData base = prepare_data(base_config);
  const Corpus& dataset = base.dataset;

  PopularityIndex popularity = build_popularity_index(base.split.train, dataset);
  ItemBuckets buckets = bucket_items(popularity, dataset, config.analysis.buckets);

  StudyTable table;
  table.csv << "model,seed,bucket,count" << metric_suffix_header(config.eval.cutoffs) << "\n";

  for (std::uint64_t seed : study_seeds(config)) {
    fs::path seed_dir = dir / ("seed" + std::to_string(seed));
    for (const std::string& kind : {std::string("text"), std::string("id")}) {
      ExperimentConfig cell_config = base_config;
      cell_config.model.kind = kind;
      cell_config.model.encoder.seed = seed;
      auto model = build_model(cell_config, dataset, base.vocab, base.split.train);
      fs::path cell = seed_dir / kind;
      run_cell(cell_config, *model, base.split, dataset, seed, cell);
      auto best = load_model((cell / "best").string(), dataset);
      auto rows = per_bucket_performance(*best, base.split.test, dataset, buckets, config.eval);
      for (const auto& [bucket, perf] : rows) {
        table.csv << kind << ',' << seed << ',' << bucket << ',' << perf.count;
        append_metric_cells(table.csv, config.eval.cutoffs, perf.recall, perf.ndcg);
        table.csv << "\n";
        table.rows.push_back({{"model", kind},
                              {"seed", seed},
                              {"bucket", bucket},
                              {"count", perf.count},
                              {"metrics",
                               metrics_json(config.eval.cutoffs, perf.recall, perf.ndcg)}});
      }
    }
  }
  write_study_table(dir, "coldstart_study", table);
}

// Pretrain on all domains but one, then adapt to the held-out domain: full
// fine-tuning vs. low-rank adapters at several ranks.
void recipe_peft(const ExperimentConfig& config) {
  fs::path dir = run_dir(config) / "recipes" / "peft_study";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_config_snapshot(config);

  ExperimentConfig full_config = config;
  full_config.data.mix_strategy = MixStrategy::user_mixed;
  full_config.data.single_domain.clear();
  full_config.data.train_domains.clear();
  full_config.model.lora.reset();
  full_config.model.init_checkpoint.clear();
  PreparedData probe = prepare_data(full_config);
  if (probe.dataset.num_domains() < 2)
    throw ConfigError("peft_study needs at least two domains");
  std::string transfer = config.data.single_domain.empty() ? probe.dataset.domains.back()
                                                           : config.data.single_domain;
  if (probe.dataset.find_domain(transfer) == kNoDomain)
    throw DataError("unknown transfer domain: " + transfer);

  ExperimentConfig source_config = full_config;
  for (const auto& d : probe.dataset.domains)
    if (d != transfer) source_config.data.train_domains.push_back(d);
  source_config.model.encoder.seed = config.run.seed;
  PreparedData source = prepare_data(source_config);
  const Corpus& dataset = source.dataset;

  DomainIndex transfer_idx = dataset.find_domain(transfer);
  auto sequences = build_sequences(dataset, MixStrategy::single_domain, transfer_idx,
                                   config.data.min_seq_len);
  DatasetSplit transfer_split = leave_one_out_split(sequences, dataset);
  if (transfer_split.train.empty())
    throw DataError("transfer domain '" + transfer + "' has no training instances");

  std::uint64_t seed = config.run.seed;
  fs::path base_cell = dir / "cells" / "base";
  auto base_model = build_model(source_config, dataset, source.vocab, source.split.train);
  std::int64_t base_total = base_model->parameter_count(false);
  run_cell(source_config, *base_model, source.split, dataset, seed, base_cell);

  StudyTable table;
  table.csv << "regime,trainable_params,total_params,count"
            << metric_suffix_header(config.eval.cutoffs) << "\n";
  auto add_row = [&](const std::string& regime, std::int64_t trainable, std::int64_t total,
                     const MetricReport& report) {
    const MetricBlock& block = report.aggregate;
    table.csv << regime << ',' << trainable << ',' << total << ',' << block.count;
    append_metric_cells(table.csv, config.eval.cutoffs, block.recall, block.ndcg);
    table.csv << "\n";
    table.rows.push_back({{"regime", regime},
                          {"trainable_params", trainable},
                          {"total_params", total},
                          {"count", block.count},
                          {"metrics",
                           metrics_json(config.eval.cutoffs, block.recall, block.ndcg)}});
  };

  add_row("base", base_total, base_total,
          evaluate_best(base_cell, dataset, transfer_split.test, config.eval));

  {
    auto model = load_model((base_cell / "best").string(), dataset);
    fs::path cell = dir / "cells" / "fpft";
    run_cell(config, *model, transfer_split, dataset, seed, cell);
    add_row("fpft", model->parameter_count(true), model->parameter_count(false),
            evaluate_best(cell, dataset, transfer_split.test, config.eval));
  }

  for (int rank : {4, 16, 32, 64}) {
    auto model = load_model((base_cell / "best").string(), dataset);
    LoRAConfig lora = config.model.lora.value_or(LoRAConfig{});
    lora.rank = rank;
    if (lora.alpha <= 0) lora.alpha = 1.0;
    model_encoder(*model).apply_lora(lora);
    fs::path cell = dir / "cells" / ("lora_r" + std::to_string(rank));
    run_cell(config, *model, transfer_split, dataset, seed, cell);
    add_row("lora_r" + std::to_string(rank), model->parameter_count(true),
            model->parameter_count(false),
            evaluate_best(cell, dataset, transfer_split.test, config.eval));
  }
  write_study_table(dir, "peft_study", table);
}

// Text-variant ablation on one shared vocabulary (ids and the user prompt are
// always present in it, so the encoder shape is constant across variants).
void recipe_ablation(const ExperimentConfig& config) {
  fs::path dir = run_dir(config) / "recipes" / "ablation_study";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_config_snapshot(config);

  ExperimentConfig base_config = config;
  base_config.data.mix_strategy = MixStrategy::user_mixed;
  base_config.data.single_domain.clear();
  base_config.data.train_domains.clear();
  base_config.model.kind = "text";
  base_config.model.item_variant = ItemTextVariant::with_id;
  base_config.model.user_variant = UserTextVariant::with_prompt;
  PreparedData base = prepare_data(base_config);
  const Corpus& dataset = base.dataset;

  struct Variant {
    const char* name;
    ItemTextVariant item;
    UserTextVariant user;
  };
  const Variant variants[] = {
      {"plain", ItemTextVariant::plain, UserTextVariant::plain},
      {"with_id", ItemTextVariant::with_id, UserTextVariant::plain},
      {"with_prompt", ItemTextVariant::plain, UserTextVariant::with_prompt},
  };

  StudyTable table;
  table.csv << "variant,seed,scope,count" << metric_suffix_header(config.eval.cutoffs) << "\n";

  for (std::uint64_t seed : study_seeds(config)) {
    fs::path seed_dir = dir / ("seed" + std::to_string(seed));
    for (const Variant& variant : variants) {
      ExperimentConfig cell_config = base_config;
      cell_config.model.item_variant = variant.item;
      cell_config.model.user_variant = variant.user;
      cell_config.model.encoder.seed = seed;
      auto model = build_model(cell_config, dataset, base.vocab, base.split.train);
      fs::path cell = seed_dir / variant.name;
      run_cell(cell_config, *model, base.split, dataset, seed, cell);
      MetricReport report = evaluate_best(cell, dataset, base.split.test, config.eval);
      for (const auto& [scope, block] : scope_rows(report)) {
        table.csv << variant.name << ',' << seed << ',' << scope << ',' << block->count;
        append_metric_cells(table.csv, config.eval.cutoffs, block->recall, block->ndcg);
        table.csv << "\n";
        table.rows.push_back({{"variant", variant.name},
                              {"seed", seed},
                              {"scope", scope},
                              {"count", block->count},
                              {"metrics",
                               metrics_json(config.eval.cutoffs, block->recall, block->ndcg)}});
      }
    }
  }
  write_study_table(dir, "ablation_study", table);
}

}  // namespace

void cmd_recipe(const ExperimentConfig& config, const std::string& name) {
  if (name == "mix_strategy_study") return recipe_mix_strategy(config);
  if (name == "partition_study") return recipe_partition(config);
  if (name == "coldstart_study") return recipe_coldstart(config);
  if (name == "peft_study") return recipe_peft(config);
  if (name == "ablation_study") return recipe_ablation(config);
  throw ConfigError("unknown recipe '" + name +
                    "'; expected one of mix_strategy_study, partition_study, coldstart_study, "
                    "peft_study, ablation_study");
}

}  // namespace textrec

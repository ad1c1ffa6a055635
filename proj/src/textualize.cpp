#include "textrec/textualize.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace textrec {

const char* const kUserPrompt =
    "The user has purchased the following products in chronological order. "
    "Please select the next product they may interact with from the candidate products: ";

Direction parse_direction(const std::string& name) {
  if (name == "nar" || name == "NAR") return Direction::NAR;
  if (name == "ar" || name == "AR") return Direction::AR;
  throw ConfigError("unknown direction: " + name);
}

std::string to_string(Direction d) {
  return d == Direction::NAR ? "nar" : "ar";
}

ItemTextVariant parse_item_text_variant(const std::string& name) {
  if (name == "plain") return ItemTextVariant::plain;
  if (name == "with_id") return ItemTextVariant::with_id;
  throw ConfigError("unknown item text variant: " + name);
}

UserTextVariant parse_user_text_variant(const std::string& name) {
  if (name == "plain") return UserTextVariant::plain;
  if (name == "with_prompt") return UserTextVariant::with_prompt;
  throw ConfigError("unknown user text variant: " + name);
}

std::string to_string(ItemTextVariant v) {
  return v == ItemTextVariant::plain ? "plain" : "with_id";
}

std::string to_string(UserTextVariant v) {
  return v == UserTextVariant::plain ? "plain" : "with_prompt";
}

Tokenizer::Tokenizer() {
  add_token("[PAD]", 0);
  add_token("[CLS]", 0);
  add_token("</s>", 0);
  add_token("[UNK]", 0);
}

int Tokenizer::id_of(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

std::vector<std::string> Tokenizer::split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::vector<int> Tokenizer::encode_text(std::string_view text) const {
  std::vector<int> out;
  for (const auto& w : split_words(text)) out.push_back(id_of(w));
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

void Tokenizer::add_token(std::string token, std::uint64_t frequency) {
  int id = static_cast<int>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(std::move(token));
  frequency_.push_back(frequency);
}

void Tokenizer::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (int id = 0; id < vocab_size(); ++id) {
    out << id_to_token_[id] << "\t" << id << "\t" << frequency_[id] << "\n";
  }
}

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path);
  Tokenizer tok;
  std::string line;
  int expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    int id;
    std::uint64_t freq;
    if (!std::getline(ss, word, '\t') || !(ss >> id >> freq)) {
      throw DataError("malformed vocabulary line: " + line);
    }
    if (id != expected) throw DataError("vocabulary ids must be dense and sorted");
    if (id >= kNumSpecials) tok.add_token(word, freq);
    ++expected;
  }
  return tok;
}

Tokenizer build_vocab(const Corpus& corpus, std::uint64_t min_freq,
                      const std::vector<std::string>& extra_texts) {
  if (corpus.items.empty()) throw DataError("build_vocab: empty corpus");
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& item : corpus.items) {
    for (auto& w : Tokenizer::split_words(item.title)) ++counts[w];
  }
  for (const auto& text : extra_texts) {
    for (auto& w : Tokenizer::split_words(text)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (auto& [w, c] : counts) {
    if (c >= min_freq) kept.emplace_back(w, c);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Tokenizer tok;
  for (auto& [w, c] : kept) tok.add_token(std::move(w), c);
  return tok;
}

int TokenizedInput::last_index() const {
  for (int i = length() - 1; i >= 0; --i) {
    if (mask[i]) return i;
  }
  throw DataError("TokenizedInput: no real tokens");
}

std::vector<int> tokenize_item(const ItemRecord& item, const Tokenizer& tokenizer,
                               int max_title_tokens, ItemTextVariant variant) {
  if (item.title.empty()) throw DataError("tokenize_item: empty title for " + item.item_id);
  std::vector<int> tokens;
  if (variant == ItemTextVariant::with_id) {
    tokens = tokenizer.encode_text("ID: " + item.item_id);
  }
  for (int id : tokenizer.encode_text(item.title)) tokens.push_back(id);
  if (static_cast<int>(tokens.size()) > max_title_tokens) tokens.resize(max_title_tokens);
  return tokens;
}

namespace {

TokenizedInput finalize_input(std::vector<int> body, std::vector<std::pair<int, int>> boundaries,
                              Direction direction) {
  TokenizedInput input;
  input.direction = direction;
  if (direction == Direction::NAR) {
    input.ids.push_back(Tokenizer::kCls);
    for (auto& [s, e] : boundaries) {
      ++s;
      ++e;
    }
  }
  input.ids.insert(input.ids.end(), body.begin(), body.end());
  if (direction == Direction::AR) input.ids.push_back(Tokenizer::kEos);
  input.mask.assign(input.ids.size(), 1);
  input.item_boundaries = std::move(boundaries);
  return input;
}

}  // namespace

TokenizedInput build_item_input(const std::vector<int>& item_tokens, Direction direction) {
  if (item_tokens.empty()) throw DataError("build_item_input: empty token list");
  return finalize_input(item_tokens, {{0, static_cast<int>(item_tokens.size())}}, direction);
}

TokenizedInput build_user_input(const std::vector<std::vector<int>>& history_item_tokens,
                                Direction direction, UserTextVariant variant, const Tokenizer& tokenizer,
                                int max_positions) {
  if (history_item_tokens.empty()) throw DataError("build_user_input: empty history");

  std::vector<int> prompt;
  if (variant == UserTextVariant::with_prompt) prompt = tokenizer.encode_text(kUserPrompt);

  // One position goes to [CLS] or </s>; the prompt, when present, is a fixed
  // prefix that is never dropped.
  const int budget = max_positions - 1 - static_cast<int>(prompt.size());
  if (budget < 1) throw DataError("build_user_input: max_positions too small for any item");

  std::size_t first = 0;
  long total = 0;
  for (const auto& t : history_item_tokens) total += static_cast<long>(t.size());
  while (first + 1 < history_item_tokens.size() &&
         total > budget) {
    total -= static_cast<long>(history_item_tokens[first].size());
    ++first;
  }

  std::vector<int> body = prompt;
  std::vector<std::pair<int, int>> boundaries;
  for (std::size_t i = first; i < history_item_tokens.size(); ++i) {
    const auto& tokens = history_item_tokens[i];
    std::size_t skip = 0;
    if (i == first && total > budget) {
      // Single remaining over-long item: keep the tail of its tokens.
      skip = static_cast<std::size_t>(total - budget);
      if (skip >= tokens.size()) throw DataError("build_user_input: max_positions too small for any item");
    }
    int start = static_cast<int>(body.size());
    body.insert(body.end(), tokens.begin() + skip, tokens.end());
    boundaries.emplace_back(start, static_cast<int>(body.size()));
  }
  return finalize_input(std::move(body), std::move(boundaries), direction);
}

PaddedBatch pad_batch(std::span<const TokenizedInput> inputs) {
  if (inputs.empty()) throw DataError("pad_batch: empty batch");
  PaddedBatch batch;
  batch.direction = inputs.front().direction;
  for (const auto& in : inputs) {
    if (in.direction != batch.direction) throw DataError("pad_batch: mixed directions");
    batch.width = std::max(batch.width, in.length());
  }
  for (const auto& in : inputs) {
    batch.last_index.push_back(in.last_index());
    TokenizedInput row = in;
    row.ids.resize(batch.width, Tokenizer::kPad);
    row.mask.resize(batch.width, 0);
    batch.rows.push_back(std::move(row));
  }
  return batch;
}

}  // namespace textrec

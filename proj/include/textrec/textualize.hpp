#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "textrec/corpus.hpp"

namespace textrec {

enum class Direction { NAR, AR };

Direction parse_direction(const std::string& name);
std::string to_string(Direction d);

enum class ItemTextVariant { plain, with_id };
enum class UserTextVariant { plain, with_prompt };

ItemTextVariant parse_item_text_variant(const std::string& name);
UserTextVariant parse_user_text_variant(const std::string& name);
std::string to_string(ItemTextVariant v);
std::string to_string(UserTextVariant v);

// Fixed sentence prepended to the user sequence under the with_prompt variant.
extern const char* const kUserPrompt;

// Word-level tokenizer: lowercase, split on any non-alphanumeric character.
// Ids 0..3 are reserved specials.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kEos = 2;  // </s>
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;

  Tokenizer();

  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
  const std::string& token(int id) const { return id_to_token_.at(id); }
  std::uint64_t frequency(int id) const { return frequency_.at(id); }

  int id_of(std::string_view token) const;  // kUnk if absent

  // Lowercase + split; every word mapped to its id (or kUnk).
  std::vector<int> encode_text(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  // Splitting rule shared with vocabulary construction.
  static std::vector<std::string> split_words(std::string_view text);

  void add_token(std::string token, std::uint64_t frequency);

  void save(const std::string& path) const;  // token \t id \t frequency, sorted by id
  static Tokenizer load(const std::string& path);

 private:
  std::vector<std::string> id_to_token_;
  std::vector<std::uint64_t> frequency_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Frequency-then-lexicographic vocabulary over corpus titles; words below
// min_freq map to kUnk. extra_texts lets callers make item ids or a prompt
// sentence encodable (each extra text counts its words once).
Tokenizer build_vocab(const Corpus& corpus, std::uint64_t min_freq = 1,
                      const std::vector<std::string>& extra_texts = {});

struct TokenizedInput {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;                    // 1 on real tokens, 0 on padding
  std::vector<std::pair<int, int>> item_boundaries;  // [start, end) spans of title tokens
  Direction direction = Direction::NAR;

  int length() const { return static_cast<int>(ids.size()); }
  // Index of the last real (unpadded) token.
  int last_index() const;
};

// Title tokens, truncated to max_title_tokens. with_id prepends the tokens of
// "ID: <item_id>", which count toward the budget.
std::vector<int> tokenize_item(const ItemRecord& item, const Tokenizer& tokenizer,
                               int max_title_tokens = 40, ItemTextVariant variant = ItemTextVariant::plain);

// NAR: [CLS] + tokens; AR: tokens + </s>.
TokenizedInput build_item_input(const std::vector<int>& item_tokens, Direction direction);

// Concatenates per-item token lists oldest -> newest with one [CLS] (NAR) or
// one </s> (AR). When the result exceeds max_positions, whole oldest items are
// dropped first, then the oldest surviving item is truncated from the front.
TokenizedInput build_user_input(const std::vector<std::vector<int>>& history_item_tokens,
                                Direction direction, UserTextVariant variant, const Tokenizer& tokenizer,
                                int max_positions);

struct PaddedBatch {
  std::vector<TokenizedInput> rows;  // right-padded with kPad to a common length
  std::vector<int> last_index;       // per row, position of last real token
  int width = 0;
  Direction direction = Direction::NAR;
};

PaddedBatch pad_batch(std::span<const TokenizedInput> inputs);

}  // namespace textrec

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capgen {

using TokenId = std::int32_t;
using Tokens = std::vector<std::string>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kStartId = 1;
inline constexpr TokenId kEndId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr std::size_t kNumSpecials = 4;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kStartToken = "<start>";
inline constexpr std::string_view kEndToken = "<end>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// Lowercases, maps every character outside [a-z0-9 ] to a space, collapses whitespace runs
/// and strips the ends. Bytes of multi-byte UTF-8 sequences are non-letters and vanish.
std::string normalize(std::string_view raw);

Tokens tokenize(std::string_view clean);

/// Wraps tokens in <start> ... <end>. Throws SpecialTokenCollision if a reserved literal is present.
Tokens add_boundaries(const Tokens& tokens);

/// normalize -> tokenize -> add_boundaries.
Tokens preprocess_caption(std::string_view raw);

/// Word/id mapping. Ids 0..3 are the specials; corpus words follow in
/// (frequency desc, word asc) order.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary build(std::span<const Tokens> corpus, std::size_t min_freq = 1);
  static Vocabulary from_json(std::string_view json);
  std::string to_json() const;

  std::size_t size() const noexcept { return id_to_word_.size(); }
  TokenId id(std::string_view word) const;
  const std::string& word(TokenId id) const;
  bool contains(std::string_view word) const;
  std::span<const std::string> words() const noexcept { return id_to_word_; }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  void insert(std::string word);

  std::map<std::string, TokenId, std::less<>> word_to_id_;
  std::vector<std::string> id_to_word_;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  std::size_t length = 0;  // non-pad count
};

/// Maps tokens to ids, truncating to max_len (the end token survives truncation) and padding.
TokenSequence encode(const Tokens& tokens, const Vocabulary& vocab, std::size_t max_len);

/// Joins the words of `ids` up to the first end id, dropping special tokens.
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab);

/// One line of a Flickr8k-style token file: `<image_id>#<index>\t<caption>`.
struct CaptionRecord {
  std::string image_id;
  int index = 0;
  std::string text;
  std::size_t line = 0;
};

/// Parses a captions file. Throws Error(kInvalidArgument) naming the line for malformed or
/// duplicate `image#index` entries. Blank lines are skipped.
std::vector<CaptionRecord> parse_captions(std::string_view content);

/// image_id -> raw captions in file order.
std::map<std::string, std::vector<std::string>> group_captions(std::span<const CaptionRecord> records);

}  // namespace capgen

#include "capgen/textpipe.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>
#include <utility>

#include <nlohmann/json.hpp>

#include "capgen/error.hpp"

namespace capgen {

namespace {

bool is_special_literal(std::string_view w) {
  return w == kPadToken || w == kStartToken || w == kEndToken || w == kUnkToken;
}

}  // namespace

std::string normalize(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char ch : raw) {
    auto c = static_cast<unsigned char>(ch);
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    const bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
    if (!keep) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

Tokens tokenize(std::string_view clean) {
  Tokens out;
  std::size_t pos = 0;
  while (pos < clean.size()) {
    const std::size_t next = clean.find(' ', pos);
    const std::size_t end = next == std::string_view::npos ? clean.size() : next;
    if (end > pos) out.emplace_back(clean.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

Tokens add_boundaries(const Tokens& tokens) {
  Tokens out;
  out.reserve(tokens.size() + 2);
  out.emplace_back(kStartToken);
  for (const auto& t : tokens) {
    if (is_special_literal(t)) throw Error(ErrorCode::kSpecialTokenCollision, "token '" + t + "' is reserved");
    out.push_back(t);
  }
  out.emplace_back(kEndToken);
  return out;
}

Tokens preprocess_caption(std::string_view raw) { return add_boundaries(tokenize(normalize(raw))); }

Vocabulary::Vocabulary() {
  insert(std::string(kPadToken));
  insert(std::string(kStartToken));
  insert(std::string(kEndToken));
  insert(std::string(kUnkToken));
}

void Vocabulary::insert(std::string word) {
  const auto id = static_cast<TokenId>(id_to_word_.size());
  word_to_id_.emplace(word, id);
  id_to_word_.push_back(std::move(word));
}

Vocabulary Vocabulary::build(std::span<const Tokens> corpus, std::size_t min_freq) {
  if (min_freq < 1) throw Error(ErrorCode::kInvalidArgument, "min_freq must be >= 1");
  std::unordered_map<std::string, std::size_t> freq;
  std::size_t total = 0;
  for (const auto& sentence : corpus) {
    for (const auto& w : sentence) {
      ++total;
      if (is_special_literal(w)) continue;
      ++freq[w];
    }
  }
  if (total == 0) throw Error(ErrorCode::kEmptyCorpus, "no tokens in corpus");
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, n] : freq) {
    if (n >= min_freq) kept.emplace_back(w, n);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  for (auto& [w, n] : kept) v.insert(std::move(w));
  return v;
}

Vocabulary Vocabulary::from_json(std::string_view json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("vocabulary JSON: ") + e.what());
  }
  if (!j.contains("specials") || !j.contains("words") || !j["words"].is_array()) {
    throw Error(ErrorCode::kInvalidArgument, "vocabulary JSON needs 'specials' and 'words'");
  }
  const auto& sp = j["specials"];
  const std::pair<std::string_view, TokenId> expected[] = {
      {kPadToken, kPadId}, {kStartToken, kStartId}, {kEndToken, kEndId}, {kUnkToken, kUnkId}};
  if (sp.size() != kNumSpecials) throw Error(ErrorCode::kInvalidArgument, "vocabulary must declare 4 specials");
  for (const auto& [name, id] : expected) {
    const std::string key(name);
    if (!sp.contains(key) || sp[key].get<TokenId>() != id) {
      throw Error(ErrorCode::kInvalidArgument, "special " + key + " must map to id " + std::to_string(id));
    }
  }
  Vocabulary v;
  for (const auto& w : j["words"]) {
    auto word = w.get<std::string>();
    if (word.empty() || is_special_literal(word) || v.contains(word)) {
      throw Error(ErrorCode::kInvalidArgument, "invalid or duplicate vocabulary word '" + word + "'");
    }
    v.insert(std::move(word));
  }
  return v;
}

std::string Vocabulary::to_json() const {
  nlohmann::ordered_json j;
  j["specials"] = {{std::string(kPadToken), kPadId},
                   {std::string(kStartToken), kStartId},
                   {std::string(kEndToken), kEndId},
                   {std::string(kUnkToken), kUnkId}};
  j["words"] = std::vector<std::string>(id_to_word_.begin() + kNumSpecials, id_to_word_.end());
  return j.dump(2) + "\n";
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = word_to_id_.find(word);
  return it == word_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_word_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(id) + " out of range");
  }
  return id_to_word_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view word) const { return word_to_id_.find(word) != word_to_id_.end(); }

TokenSequence encode(const Tokens& tokens, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw Error(ErrorCode::kInvalidArgument, "max_len must be >= 2");
  TokenSequence seq;
  seq.ids.reserve(max_len);
  for (std::size_t i = 0; i < tokens.size() && i < max_len; ++i) seq.ids.push_back(vocab.id(tokens[i]));
  if (tokens.size() > max_len && tokens.back() == kEndToken) seq.ids.back() = kEndId;
  seq.length = seq.ids.size();
  seq.ids.resize(max_len, kPadId);
  return seq;
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == kEndId) break;
    if (id >= 0 && static_cast<std::size_t>(id) < kNumSpecials) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.word(id);
  }
  return out;
}

std::vector<CaptionRecord> parse_captions(std::string_view content) {
  std::vector<CaptionRecord> out;
  std::set<std::pair<std::string, int>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (nl == content.size()) break;
      continue;
    }
    const auto where = "line " + std::to_string(line_no);
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) throw Error(ErrorCode::kInvalidArgument, where + ": missing TAB");
    const std::string_view key = line.substr(0, tab);
    const std::size_t hash = key.rfind('#');
    if (hash == std::string_view::npos || hash == 0 || hash + 1 == key.size()) {
      throw Error(ErrorCode::kInvalidArgument, where + ": expected <image_id>#<index>");
    }
    CaptionRecord rec;
    rec.image_id = std::string(key.substr(0, hash));
    const std::string_view idx = key.substr(hash + 1);
    if (idx.find_first_not_of("0123456789") != std::string_view::npos || idx.size() > 6) {
      throw Error(ErrorCode::kInvalidArgument, where + ": caption index '" + std::string(idx) + "' is not a number");
    }
    rec.index = std::stoi(std::string(idx));
    rec.text = std::string(line.substr(tab + 1));
    rec.line = line_no;
    if (!seen.emplace(rec.image_id, rec.index).second) {
      throw Error(ErrorCode::kInvalidArgument, where + ": duplicate entry " + std::string(key));
    }
    out.push_back(std::move(rec));
    if (nl == content.size()) break;
  }
  return out;
}

std::map<std::string, std::vector<std::string>> group_captions(std::span<const CaptionRecord> records) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& r : records) out[r.image_id].push_back(r.text);
  return out;
}

}  // namespace capgen

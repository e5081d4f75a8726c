#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "alft/error.hpp"

namespace alft {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kClsId = 2;
inline constexpr std::size_t kSepId = 3;
inline constexpr std::size_t kMaskId = 4;
inline constexpr std::size_t kNumReserved = 5;

/// A word of input text with its position in code points.
struct Piece {
  std::string text;
  std::size_t char_begin = 0;
  std::size_t char_end = 0;
};

/// Lowercases ASCII, splits on whitespace and emits every ASCII punctuation
/// character as its own piece. Offsets count UTF-8 code points.
inline std::vector<Piece> split_words(std::string_view text) {
  std::vector<Piece> out;
  Piece cur;
  bool open = false;
  std::size_t cp = 0;
  auto flush = [&] {
    if (open) {
      cur.char_end = cp;
      out.push_back(std::move(cur));
      cur = Piece{};
      open = false;
    }
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, text.size() - i);

    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.push_back(Piece{std::string(1, static_cast<char>(c)), cp, cp + 1});
    } else {
      if (!open) {
        cur.char_begin = cp;
        open = true;
      }
      if (c < 0x80) cur.text.push_back(static_cast<char>(std::tolower(c)));
      else cur.text.append(text.substr(i, len));
    }
    i += len;
    ++cp;
  }
  flush();
  return out;
}

class Vocab {
 public:
  Vocab() : tokens_{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"} {
    for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], i);
  }

  /// Appends a learned token; returns its id. Existing tokens keep theirs.
  std::size_t add(const std::string& token) {
    auto [it, inserted] = ids_.emplace(token, tokens_.size());
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  std::size_t id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

/// Ids are assigned after the reserved block by descending frequency; ties
/// keep first-appearance order.
inline Vocab build_vocab(const std::vector<std::string>& corpus) {
  if (corpus.empty()) throw InputError("build_vocab: empty corpus");
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::pair<std::string, std::size_t>> counts;
  for (const auto& text : corpus) {
    for (auto& piece : split_words(text)) {
      auto [it, inserted] = index.emplace(piece.text, counts.size());
      if (inserted) counts.emplace_back(piece.text, 0);
      ++counts[it->second].second;
    }
  }
  std::stable_sort(counts.begin(), counts.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  for (const auto& [tok, n] : counts) vocab.add(tok);
  return vocab;
}

struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

/// [CLS] question [SEP] paragraph [SEP], with segment 0 covering the question
/// part (including [CLS] and the first [SEP]) and segment 1 the rest.
struct TokenizedExample {
  std::string id;
  std::string question;
  std::vector<std::size_t> ids;
  std::vector<std::string> tokens;
  std::vector<std::size_t> segments;
  /// Code-point offsets into the paragraph; {0,0} outside the paragraph.
  std::vector<std::pair<std::size_t, std::size_t>> offsets;
  std::size_t question_sep = 0;
  std::optional<TokenSpan> gold;
  bool answerable = true;

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t final_sep() const noexcept { return ids.size() - 1; }
  std::size_t paragraph_begin() const noexcept { return question_sep + 1; }
  /// One past the last paragraph token.
  std::size_t paragraph_end() const noexcept { return final_sep(); }
  bool in_paragraph(std::size_t t) const noexcept { return t >= paragraph_begin() && t < paragraph_end(); }
  /// Positions of [CLS] and the two [SEP]s.
  bool is_structural(std::size_t t) const noexcept {
    return t == 0 || t == question_sep || t == final_sep();
  }
  std::vector<std::size_t> special_positions() const { return {0, question_sep, final_sep()}; }
};

/// Assembles an example from already-mapped question and paragraph pieces.
inline TokenizedExample assemble_example(const std::vector<std::size_t>& question_ids,
                                         const std::vector<std::string>& question_tokens,
                                         const std::vector<std::size_t>& paragraph_ids,
                                         const std::vector<std::string>& paragraph_tokens) {
  TokenizedExample ex;
  auto push = [&](std::size_t id, const std::string& tok, std::size_t seg) {
    ex.ids.push_back(id);
    ex.tokens.push_back(tok);
    ex.segments.push_back(seg);
    ex.offsets.emplace_back(0, 0);
  };
  push(kClsId, "[CLS]", 0);
  for (std::size_t i = 0; i < question_ids.size(); ++i) push(question_ids[i], question_tokens[i], 0);
  ex.question_sep = ex.ids.size();
  push(kSepId, "[SEP]", 0);
  for (std::size_t i = 0; i < paragraph_ids.size(); ++i) push(paragraph_ids[i], paragraph_tokens[i], 1);
  push(kSepId, "[SEP]", 1);
  return ex;
}

/// Builds the framed sequence. The paragraph is cut from the right when the
/// whole would exceed max_seq_len.
inline TokenizedExample tokenize(std::string_view question, std::string_view paragraph, const Vocab& vocab,
                                 std::size_t max_seq_len) {
  const auto q = split_words(question);
  if (q.empty()) throw InputError("tokenize: question is empty");
  if (max_seq_len < 3 || q.size() > max_seq_len - 3) {
    throw InputError("tokenize: question has " + std::to_string(q.size()) + " tokens, limit is " +
                     std::to_string(max_seq_len < 3 ? 0 : max_seq_len - 3));
  }
  auto p = split_words(paragraph);
  const auto room = max_seq_len - 3 - q.size();
  if (p.size() > room) p.resize(room);

  std::vector<std::size_t> qi, pi;
  std::vector<std::string> qt, pt;
  for (const auto& w : q) {
    qi.push_back(vocab.id(w.text));
    qt.push_back(w.text);
  }
  for (const auto& w : p) {
    pi.push_back(vocab.id(w.text));
    pt.push_back(w.text);
  }
  auto ex = assemble_example(qi, qt, pi, pt);
  ex.question = std::string(question);
  for (std::size_t i = 0; i < p.size(); ++i) {
    ex.offsets[ex.paragraph_begin() + i] = {p[i].char_begin, p[i].char_end};
  }
  return ex;
}

/// Maps a character range of the paragraph onto the covering token span.
/// Returns nothing when the range does not overlap any kept token.
inline std::optional<TokenSpan> map_char_span(const TokenizedExample& ex, std::size_t char_begin,
                                              std::size_t char_end) {
  std::optional<std::size_t> first, last;
  for (std::size_t t = ex.paragraph_begin(); t < ex.paragraph_end(); ++t) {
    const auto [b, e] = ex.offsets[t];
    if (e > char_begin && b < char_end) {
      if (!first) first = t;
      last = t;
    }
  }
  if (!first) return std::nullopt;
  // The answer must end inside the kept paragraph, otherwise it was truncated.
  const auto kept_end = ex.paragraph_end() > ex.paragraph_begin() ? ex.offsets[ex.paragraph_end() - 1].second : 0;
  if (char_end > kept_end) return std::nullopt;
  return TokenSpan{*first, *last};
}

}  // namespace alft

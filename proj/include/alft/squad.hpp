#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "alft/error.hpp"
#include "alft/serialize.hpp"
#include "alft/tokenizer.hpp"

namespace alft {

struct SquadAnswer {
  std::string text;
  std::size_t answer_start = 0;  // code points into the context
};

struct SquadQuestion {
  std::string id;
  std::string question;
  std::string context;
  bool is_impossible = false;
  std::vector<SquadAnswer> answers;
};

/// Flattens data -> paragraphs -> qas. An empty or absent "data" array
/// yields no questions.
inline std::vector<SquadQuestion> parse_squad(const nlohmann::json& doc) {
  std::vector<SquadQuestion> out;
  try {
    if (!doc.is_object() || !doc.contains("data")) return out;
    for (const auto& article : doc.at("data")) {
      for (const auto& para : article.value("paragraphs", nlohmann::json::array())) {
        const auto context = para.at("context").get<std::string>();
        for (const auto& qa : para.value("qas", nlohmann::json::array())) {
          SquadQuestion q;
          q.id = qa.value("id", std::to_string(out.size()));
          q.question = qa.at("question").get<std::string>();
          q.context = context;
          q.is_impossible = qa.value("is_impossible", false);
          for (const auto& a : qa.value("answers", nlohmann::json::array())) {
            q.answers.push_back({a.at("text").get<std::string>(), a.at("answer_start").get<std::size_t>()});
          }
          out.push_back(std::move(q));
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("SQuAD input: ") + e.what());
  }
  return out;
}

/// Reads a SQuAD-style file. A zero-byte file is treated as holding no
/// questions.
inline std::vector<SquadQuestion> read_squad(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("data file not found: " + path.string());
  if (std::filesystem::file_size(path) == 0) return {};
  return parse_squad(read_json_file(path));
}

namespace detail {

inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

// Substring by code-point range; nullopt when out of range.
inline std::optional<std::string> utf8_substr(std::string_view s, std::size_t cp_begin, std::size_t cp_len) {
  std::size_t cp = 0, b = std::string_view::npos, e = std::string_view::npos;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    const bool boundary = i == s.size() || (static_cast<unsigned char>(s[i]) & 0xC0) != 0x80;
    if (!boundary) continue;
    if (cp == cp_begin) b = i;
    if (cp == cp_begin + cp_len) {
      e = i;
      break;
    }
    ++cp;
  }
  if (b == std::string_view::npos || e == std::string_view::npos) return std::nullopt;
  return std::string(s.substr(b, e - b));
}

}  // namespace detail

/// Tokenizes each question and maps its first usable answer onto a token
/// span. Answers whose text does not sit at answer_start, or which fall in
/// the truncated tail, are dropped and reported in `warnings`.
inline std::vector<TokenizedExample> ingest_squad(const std::vector<SquadQuestion>& questions, const Vocab& vocab,
                                                  std::size_t max_seq_len, std::vector<std::string>* warnings = nullptr) {
  std::vector<TokenizedExample> out;
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };
  for (const auto& q : questions) {
    auto ex = tokenize(q.question, q.context, vocab, max_seq_len);
    ex.id = q.id;
    ex.answerable = !q.is_impossible;
    if (ex.answerable) {
      for (const auto& a : q.answers) {
        const auto len = detail::utf8_length(a.text);
        const auto at = detail::utf8_substr(q.context, a.answer_start, len);
        std::optional<TokenSpan> span;
        if (at && *at == a.text) span = map_char_span(ex, a.answer_start, a.answer_start + len);
        if (span) {
          ex.gold = span;
          break;
        }
        warn("question '" + q.id + "': dropping unmappable answer '" + a.text + "' at " +
             std::to_string(a.answer_start));
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

/// Corpus for build_vocab: every question and context.
inline std::vector<std::string> squad_corpus(const std::vector<SquadQuestion>& questions) {
  std::vector<std::string> corpus;
  for (const auto& q : questions) {
    corpus.push_back(q.question);
    corpus.push_back(q.context);
  }
  return corpus;
}

}  // namespace alft

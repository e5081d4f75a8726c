#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "alft/attribution.hpp"
#include "alft/error.hpp"
#include "alft/tokenizer.hpp"

namespace alft {

struct Rgb {
  int r = 255, g = 255, b = 255;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Blue (-1) -> white (0) -> red (+1), linear in RGB, channels rounded half
/// away from zero.
inline Rgb color_map(double s) {
  s = std::clamp(s, -1.0, 1.0);
  if (s >= 0.0) {
    const int fade = static_cast<int>(std::round(255.0 * (1.0 - s)));
    return {255, fade, fade};
  }
  const int fade = static_cast<int>(std::round(255.0 * (1.0 + s)));
  return {fade, fade, 255};
}

struct HeatToken {
  std::string text;
  double score = 0.0;
  double normalized = 0.0;
  Rgb color;
  bool in_prediction = false;
};

struct HeatSection {
  std::string title;
  double max_abs = 0.0;
  std::vector<HeatToken> tokens;
};

struct HeatmapDoc {
  std::string title;
  std::string question;
  std::string prediction;
  std::string target;
  std::vector<HeatSection> sections;
  std::vector<std::pair<double, Rgb>> scale;

  std::string html() const;
};

inline constexpr double kScaleSamples[] = {-1.0, -0.5, 0.0, 0.5, 1.0};

namespace detail {

inline std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string css_rgb(const Rgb& c) {
  return "rgb(" + std::to_string(c.r) + "," + std::to_string(c.g) + "," + std::to_string(c.b) + ")";
}

inline HeatSection make_section(std::string title, const std::vector<std::string>& tokens,
                                const std::vector<double>& scores, std::size_t span_start, std::size_t span_end,
                                bool has_span) {
  HeatSection s;
  s.title = std::move(title);
  for (double v : scores) s.max_abs = std::max(s.max_abs, std::abs(v));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    HeatToken h;
    h.text = tokens[t];
    h.score = scores[t];
    h.normalized = s.max_abs > 0.0 ? std::clamp(scores[t] / s.max_abs, -1.0, 1.0) : 0.0;
    h.color = color_map(h.normalized);
    h.in_prediction = has_span && t >= span_start && t <= span_end;
    s.tokens.push_back(std::move(h));
  }
  return s;
}

}  // namespace detail

/// One section per layer cut, each normalized by its own max |score|, then
/// an "Output" section colored by the input-embedding scores with the
/// predicted span outlined.
inline HeatmapDoc render_heatmap(const AttributionResult& r, const TokenizedExample& ex) {
  if (r.tokens.size() != ex.size()) {
    throw InputError("render_heatmap: " + std::to_string(r.tokens.size()) + " scored tokens for an example of " +
                     std::to_string(ex.size()));
  }
  for (const auto& l : r.layers) {
    if (l.scores.size() != ex.size()) throw InputError("render_heatmap: layer score length mismatch");
  }
  HeatmapDoc doc;
  doc.title = ex.id.empty() ? "Attribution heatmap" : "Attribution heatmap: " + ex.id;
  doc.question = ex.question;
  doc.target = std::string(target_name(r.target.kind)) + " (start " + std::to_string(r.target.start_pos) + ", end " +
               std::to_string(r.target.end_pos) + "), logit " + detail::fmt_g(r.logit) + ", reference " +
               detail::fmt_g(r.ref_logit);
  const bool has_span = !(r.target.start_pos == 0 && r.target.end_pos == 0);
  if (has_span) {
    for (std::size_t t = r.target.start_pos; t <= r.target.end_pos && t < ex.size(); ++t) {
      doc.prediction += (doc.prediction.empty() ? "" : " ") + ex.tokens[t];
    }
  } else {
    doc.prediction = "(no answer)";
  }
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    const auto title = l == 0 ? std::string("Layer 0 (embeddings)") : "Layer " + std::to_string(l);
    doc.sections.push_back(detail::make_section(title, r.tokens, r.layers[l].scores, 0, 0, false));
  }
  doc.sections.push_back(detail::make_section("Output", r.tokens, r.input_scores(), r.target.start_pos,
                                              r.target.end_pos, has_span));
  for (double v : kScaleSamples) doc.scale.emplace_back(v, color_map(v));
  return doc;
}

inline std::string HeatmapDoc::html() const {
  using detail::html_escape;
  std::string h;
  h += "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>" + html_escape(title) +
       "</title>\n</head>\n<body style=\"font-family:sans-serif;margin:1.5em\">\n";
  h += "<h1 style=\"font-size:1.3em\">" + html_escape(title) + "</h1>\n";
  h += "<p><b>Question:</b> " + html_escape(question) + "<br>\n<b>Prediction:</b> " + html_escape(prediction) +
       "<br>\n<b>Target:</b> " + html_escape(target) + "</p>\n";
  h += "<div class=\"scale\" style=\"display:flex;gap:0;margin-bottom:1em\">\n";
  for (const auto& [v, c] : scale) {
    h += "<div style=\"background:" + detail::css_rgb(c) +
         ";width:4em;text-align:center;border:1px solid #999\">" + detail::fmt_g(v) + "</div>\n";
  }
  h += "</div>\n";
  for (const auto& s : sections) {
    h += "<section>\n<h2 style=\"font-size:1.05em\">" + html_escape(s.title) + " <small>(max |s| = " +
         detail::fmt_g(s.max_abs) + ")</small></h2>\n<p style=\"line-height:2\">\n";
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      const auto& tok = s.tokens[t];
      h += "<span data-t=\"" + std::to_string(t) + "\" title=\"" + detail::fmt_g(tok.score) +
           "\" style=\"background:" + detail::css_rgb(tok.color) + ";padding:2px 3px" +
           (tok.in_prediction ? ";outline:2px solid #000" : "") + "\">" + html_escape(tok.text) + "</span>\n";
    }
    h += "</p>\n</section>\n";
  }
  h += "</body>\n</html>\n";
  return h;
}

// ---- JSON ------------------------------------------------------------------------

inline nlohmann::json to_json(const AttributionResult& r, const TokenizedExample* ex = nullptr) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    layers.push_back(
        {{"index", l}, {"scores", r.layers[l].scores}, {"pos", r.layers[l].pos}, {"neg", r.layers[l].neg}});
  }
  nlohmann::json j = {{"target", std::string(target_name(r.target.kind))},
                      {"target_start", r.target.start_pos},
                      {"target_end", r.target.end_pos},
                      {"logit", r.logit},
                      {"ref_logit", r.ref_logit},
                      {"tokens", r.tokens},
                      {"layers", layers}};
  if (ex) {
    j["id"] = ex->id;
    j["question"] = ex->question;
  }
  return j;
}

inline AttributionResult attribution_from_json(const nlohmann::json& j) {
  AttributionResult r;
  try {
    const auto kind = j.at("target").get<std::string>();
    if (kind == "start") r.target.kind = TargetKind::Start;
    else if (kind == "end") r.target.kind = TargetKind::End;
    else if (kind == "combined") r.target.kind = TargetKind::Combined;
    else throw InputError("unknown target '" + kind + "'");
    r.target.start_pos = j.value("target_start", std::size_t{0});
    r.target.end_pos = j.value("target_end", std::size_t{0});
    r.logit = j.at("logit").get<double>();
    r.ref_logit = j.at("ref_logit").get<double>();
    r.tokens = j.at("tokens").get<std::vector<std::string>>();
    for (const auto& l : j.at("layers")) {
      r.layers.push_back({l.at("scores").get<std::vector<double>>(), l.at("pos").get<std::vector<double>>(),
                          l.at("neg").get<std::vector<double>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("attribution JSON: ") + e.what());
  }
  return r;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

/// Writes the result as JSON. Doubles are printed in shortest round-trip
/// form, so a re-import is bitwise equal.
inline void export_json(const AttributionResult& r, const TokenizedExample& ex, const std::filesystem::path& path) {
  detail::write_text(path, to_json(r, &ex).dump(2) + "\n");
}

inline AttributionResult import_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return attribution_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline void write_html(const HeatmapDoc& doc, const std::filesystem::path& path) { detail::write_text(path, doc.html()); }

}  // namespace alft

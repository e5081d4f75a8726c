#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "alft/attribution.hpp"
#include "alft/error.hpp"
#include "alft/model.hpp"
#include "alft/tokenizer.hpp"

namespace alft {

enum class TokenCategory : std::size_t {
  QuestionKeyword = 0,
  Special = 1,
  Punctuation = 2,
  AnswerSpan = 3,
  OtherParagraph = 4,
};

inline constexpr std::size_t kNumCategories = 5;

inline std::string_view category_name(TokenCategory c) {
  static constexpr std::array<std::string_view, kNumCategories> names{
      "question-keyword", "special", "punctuation", "answer-span", "other-paragraph"};
  return names[static_cast<std::size_t>(c)];
}

inline constexpr std::string_view kDefaultPunctuation = ".,;:!?'\"()-";

/// Precedence: special, punctuation, question keyword (segment 0), answer
/// span, other paragraph.
inline std::vector<TokenCategory> categorize_tokens(const TokenizedExample& ex, const SpanPrediction& span,
                                                    std::string_view punctuation = kDefaultPunctuation) {
  std::vector<TokenCategory> out(ex.size());
  for (std::size_t t = 0; t < ex.size(); ++t) {
    const auto id = ex.ids[t];
    const auto& tok = ex.tokens[t];
    if (id == kPadId || id == kClsId || id == kSepId || id == kMaskId) {
      out[t] = TokenCategory::Special;
    } else if (tok.size() == 1 && punctuation.find(tok[0]) != std::string_view::npos) {
      out[t] = TokenCategory::Punctuation;
    } else if (ex.segments[t] == 0) {
      out[t] = TokenCategory::QuestionKeyword;
    } else if (!span.is_null && t >= span.start && t <= span.end) {
      out[t] = TokenCategory::AnswerSpan;
    } else {
      out[t] = TokenCategory::OtherParagraph;
    }
  }
  return out;
}

struct TrajectoryFeatures {
  std::string example_id;
  /// 5 positive-mass fractions per layer cut, cut-major.
  std::vector<double> values;
};

inline TrajectoryFeatures trajectory_features(const AttributionResult& r, const std::vector<TokenCategory>& categories,
                                              std::string example_id = {}) {
  if (categories.size() != r.tokens.size()) {
    throw InputError("trajectory_features: " + std::to_string(categories.size()) + " categories for " +
                     std::to_string(r.tokens.size()) + " tokens");
  }
  TrajectoryFeatures f;
  f.example_id = std::move(example_id);
  for (const auto& layer : r.layers) {
    std::array<double, kNumCategories> mass{};
    double total = 0.0;
    for (std::size_t t = 0; t < layer.pos.size(); ++t) {
      mass[static_cast<std::size_t>(categories[t])] += layer.pos[t];
      total += layer.pos[t];
    }
    for (double m : mass) f.values.push_back(total > 0.0 ? m / total : 1.0 / kNumCategories);
  }
  return f;
}

struct ClusterModel {
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> assignments;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  /// Inertia after every assignment step, first entry from the seeding.
  std::vector<double> inertia_history;
};

namespace detail {

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline double unit_uniform(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

// Nearest centroid, ties to the lowest index.
inline std::pair<std::size_t, double> nearest(const std::vector<double>& p,
                                              const std::vector<std::vector<double>>& centroids) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return {best, best_d};
}

}  // namespace detail

inline constexpr double kKmeansRelTol = 1e-6;

/// k-means++ seeding followed by Lloyd iterations. Stops when the relative
/// inertia decrease drops below 1e-6 or after max_iter updates.
inline ClusterModel kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter = 100) {
  if (k < 1 || k > points.size()) {
    throw InputError("kmeans: k=" + std::to_string(k) + " outside [1, " + std::to_string(points.size()) + "]");
  }
  const auto dim = points.front().size();
  for (const auto& p : points)
    if (p.size() != dim) throw DimensionError("kmeans: points differ in dimension");

  std::mt19937_64 gen(seed);
  ClusterModel m;
  m.seed = seed;
  std::vector<bool> chosen(points.size(), false);
  auto pick = [&](std::size_t i) {
    chosen[i] = true;
    m.centroids.push_back(points[i]);
  };
  pick(static_cast<std::size_t>(gen() % points.size()));
  std::vector<double> d2(points.size());
  while (m.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = chosen[i] ? 0.0 : detail::nearest(points[i], m.centroids).second;
      total += d2[i];
    }
    std::size_t next = points.size();
    if (total > 0.0) {
      const double target = detail::unit_uniform(gen) * total;
      double run = 0.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (d2[i] <= 0.0) continue;
        run += d2[i];
        next = i;
        if (run > target) break;
      }
    } else {
      // All remaining points coincide with a centroid.
      for (std::size_t i = 0; i < points.size() && next == points.size(); ++i)
        if (!chosen[i]) next = i;
    }
    pick(next);
  }

  m.assignments.assign(points.size(), 0);
  auto assign = [&] {
    double inertia = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto [c, d] = detail::nearest(points[i], m.centroids);
      m.assignments[i] = c;
      inertia += d;
    }
    return inertia;
  };

  m.inertia = assign();
  m.inertia_history.push_back(m.inertia);
  while (m.iterations < max_iter) {
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      ++counts[m.assignments[i]];
      for (std::size_t j = 0; j < dim; ++j) sums[m.assignments[i]][j] += points[i][j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t j = 0; j < dim; ++j) m.centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
    }
    const double prev = m.inertia;
    m.inertia = assign();
    m.inertia_history.push_back(m.inertia);
    ++m.iterations;
    if (prev <= 0.0 || (prev - m.inertia) < kKmeansRelTol * prev) break;
  }
  return m;
}

inline ClusterModel kmeans(const std::vector<TrajectoryFeatures>& features, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter = 100) {
  std::vector<std::vector<double>> pts;
  pts.reserve(features.size());
  for (const auto& f : features) pts.push_back(f.values);
  return kmeans(pts, k, seed, max_iter);
}

struct ClusterSummary {
  std::size_t size = 0;
  std::vector<std::string> dominant_sequence;
  std::vector<std::string> representatives;
  std::vector<std::size_t> members;
};

struct ClusterReport {
  std::size_t k = 0;
  std::vector<ClusterSummary> clusters;
  double inertia = 0.0;
  std::size_t iterations = 0;
};

/// Argmax category of each 5-wide block of a feature vector (ties to the
/// lowest category index).
inline std::vector<std::string> dominant_sequence(const std::vector<double>& centroid) {
  std::vector<std::string> seq;
  for (std::size_t b = 0; b + kNumCategories <= centroid.size(); b += kNumCategories) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumCategories; ++c)
      if (centroid[b + c] > centroid[b + best]) best = c;
    seq.emplace_back(category_name(static_cast<TokenCategory>(best)));
  }
  return seq;
}

inline constexpr std::size_t kMaxRepresentatives = 5;

/// `questions[i]` is the question text of the example behind features[i].
inline ClusterReport summarize_clusters(const ClusterModel& model, const std::vector<TrajectoryFeatures>& features,
                                        const std::vector<std::string>& questions) {
  if (features.size() != model.assignments.size() || questions.size() != features.size()) {
    throw InputError("summarize_clusters: inconsistent inputs");
  }
  ClusterReport rep;
  rep.k = model.centroids.size();
  rep.inertia = model.inertia;
  rep.iterations = model.iterations;
  for (std::size_t c = 0; c < rep.k; ++c) {
    ClusterSummary s;
    for (std::size_t i = 0; i < features.size(); ++i)
      if (model.assignments[i] == c) s.members.push_back(i);
    s.size = s.members.size();
    s.dominant_sequence = dominant_sequence(model.centroids[c]);
    auto ranked = s.members;
    std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
      return detail::squared_distance(features[a].values, model.centroids[c]) <
             detail::squared_distance(features[b].values, model.centroids[c]);
    });
    for (std::size_t i = 0; i < ranked.size() && i < kMaxRepresentatives; ++i)
      s.representatives.push_back(questions[ranked[i]]);
    rep.clusters.push_back(std::move(s));
  }
  return rep;
}

inline nlohmann::json to_json(const ClusterReport& r) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : r.clusters) {
    clusters.push_back({{"size", c.size},
                        {"dominant_sequence", c.dominant_sequence},
                        {"representatives", c.representatives}});
  }
  return {{"k", r.k}, {"clusters", clusters}, {"inertia", r.inertia}, {"iterations", r.iterations}};
}

// ---- rank statistics ------------------------------------------------------------

/// Ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman correlation (Pearson on average ranks). Zero when either input
/// is constant.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("spearman: length mismatch");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double num = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return num / std::sqrt(va * vb);
}

}  // namespace alft

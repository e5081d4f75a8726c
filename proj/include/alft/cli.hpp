#pragma once

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "alft/analysis.hpp"
#include "alft/attribution.hpp"
#include "alft/error.hpp"
#include "alft/model.hpp"
#include "alft/report.hpp"
#include "alft/serialize.hpp"
#include "alft/squad.hpp"
#include "alft/train.hpp"

namespace alft::cli {

/// Everything a command reads. Identical RunConfigs produce byte-identical
/// outputs; nothing time-dependent is written.
struct RunConfig {
  std::optional<std::filesystem::path> config_path;
  std::filesystem::path weights_path;
  std::optional<std::filesystem::path> data_path;
  std::optional<std::string> question;
  std::string context;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::size_t k = 2;
  std::size_t epochs = 300;
  double lr = 0.2;
  std::size_t steps = 0;  // integrated-gradients comparison when > 0
};

namespace detail {

inline std::string file_stem_for(const std::string& id, std::set<std::string>& used) {
  std::string s;
  for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  if (s.empty()) s = "example";
  std::string candidate = s;
  for (int n = 1; used.count(candidate); ++n) candidate = s + "_" + std::to_string(n);
  used.insert(candidate);
  return candidate;
}

struct LoadedModel {
  Weights weights;
  Vocab vocab;
};

inline LoadedModel load_model(const RunConfig& run) {
  LoadedModel m{load_weights(run.weights_path), load_vocab(vocab_path_for(run.weights_path))};
  if (m.vocab.size() != m.weights.config.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(m.vocab.size()) + " tokens but weights expect " +
                      std::to_string(m.weights.config.vocab_size));
  }
  if (run.config_path) {
    auto c = load_config(*run.config_path);
    c.vocab_size = m.weights.config.vocab_size;
    if (run.seed) c.seed = *run.seed;
    auto wc = m.weights.config;
    if (run.seed) wc.seed = *run.seed;
    if (!(c == wc)) throw ConfigError("config " + run.config_path->string() + " does not match the weights");
  }
  return m;
}

inline std::vector<TokenizedExample> load_examples(const RunConfig& run, const Vocab& vocab, std::size_t max_seq_len,
                                                   std::ostream& err) {
  if (run.question) {
    auto ex = tokenize(*run.question, run.context, vocab, max_seq_len);
    ex.id = "example";
    return {ex};
  }
  if (!run.data_path) throw InputError("either --data or --question is required");
  std::vector<std::string> warnings;
  auto examples = ingest_squad(read_squad(*run.data_path), vocab, max_seq_len, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  return examples;
}

struct Attributed {
  TokenizedExample example;
  SpanPrediction span;
  AttributionResult result;
};

inline Attributed attribute_one(const Weights& w, const TokenizedExample& ex) {
  const auto trace = forward(w, ex);
  const auto span = predict_span(trace, ex);
  const auto ref = make_reference(ex);
  return {ex, span, deeplift(w, ex, ref, target_from_prediction(span, TargetKind::Combined))};
}

}  // namespace detail

inline int cmd_train(const RunConfig& run, std::ostream& out, std::ostream& err) {
  ModelConfig config = run.config_path ? load_config(*run.config_path) : ModelConfig{};
  if (run.seed) config.seed = *run.seed;
  if (!run.data_path) throw InputError("--data is required");
  const auto questions = read_squad(*run.data_path);
  if (questions.empty()) throw InputError(run.data_path->string() + ": no questions to train on");
  const Vocab vocab = build_vocab(squad_corpus(questions));
  config.vocab_size = vocab.size();
  config.validate();

  std::vector<std::string> warnings;
  auto examples = ingest_squad(questions, vocab, config.max_seq_len, &warnings);
  std::vector<TokenizedExample> usable;
  for (auto& ex : examples) {
    if (ex.answerable && !ex.gold) {
      warnings.push_back("question '" + ex.id + "': no mappable answer, skipped for training");
      continue;
    }
    usable.push_back(std::move(ex));
  }
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  if (usable.empty()) throw InputError("no trainable examples in " + run.data_path->string());

  std::vector<double> losses;
  const Weights weights = train_toy(config, usable, run.epochs, run.lr, &losses);
  if (run.out.has_parent_path()) std::filesystem::create_directories(run.out.parent_path());
  save_weights(run.out, weights);
  save_vocab(vocab_path_for(run.out), vocab);
  out << "trained " << usable.size() << " examples for " << run.epochs << " epochs\n";
  if (!losses.empty()) out << "final loss " << std::setprecision(6) << losses.back() << '\n';
  out << "wrote " << run.out.string() << '\n';
  return 0;
}

inline int cmd_attribute(const RunConfig& run, std::ostream& out, std::ostream& err) {
  const auto model = detail::load_model(run);
  const auto examples = detail::load_examples(run, model.vocab, model.weights.config.max_seq_len, err);
  if (examples.empty()) {
    err << "warning: no examples to attribute\n";
    return 0;
  }
  std::filesystem::create_directories(run.out);
  std::set<std::string> used;
  bool all_complete = true;
  for (const auto& ex : examples) {
    const auto a = detail::attribute_one(model.weights, ex);
    const auto stem = detail::file_stem_for(ex.id, used);
    export_json(a.result, ex, run.out / (stem + ".json"));
    write_html(render_heatmap(a.result, ex), run.out / (stem + ".html"));

    out << ex.id << ": prediction ";
    if (a.span.is_null) out << "(no answer)";
    else out << "[" << a.span.start << ", " << a.span.end << "]";
    out << ", logit delta " << std::setprecision(10) << a.result.delta() << '\n';
    for (std::size_t l = 0; l < a.result.layers.size(); ++l) {
      const double gap = completeness_gap(a.result, l);
      const bool ok = gap <= completeness_tolerance(a.result);
      all_complete = all_complete && ok;
      out << "  completeness cut " << l << ": gap " << std::setprecision(3) << gap << (ok ? " ok" : " FAIL") << '\n';
    }
    if (run.steps > 0) {
      const auto ig = integrated_gradients(model.weights, ex, make_reference(ex), a.result.target, run.steps);
      out << "  spearman(deeplift, integrated gradients @" << run.steps << ") "
          << std::setprecision(4) << spearman(a.result.input_scores(), ig) << '\n';
    }
  }
  out << "wrote " << examples.size() << " attribution(s) to " << run.out.string() << '\n';
  if (!all_complete) {
    err << "error: completeness check failed\n";
    return 1;
  }
  return 0;
}

inline int cmd_cluster(const RunConfig& run, std::ostream& out, std::ostream& err) {
  const auto model = detail::load_model(run);
  const auto examples = detail::load_examples(run, model.vocab, model.weights.config.max_seq_len, err);
  if (run.k < 1 || run.k > examples.size()) {
    throw InputError("--k " + std::to_string(run.k) + " needs at least that many examples, have " +
                     std::to_string(examples.size()));
  }
  std::vector<TrajectoryFeatures> features;
  std::vector<std::string> questions;
  for (const auto& ex : examples) {
    const auto a = detail::attribute_one(model.weights, ex);
    features.push_back(trajectory_features(a.result, categorize_tokens(ex, a.span), ex.id));
    questions.push_back(ex.question);
  }
  const auto seed = run.seed.value_or(model.weights.config.seed);
  const auto clusters = kmeans(features, run.k, seed);
  const auto report = summarize_clusters(clusters, features, questions);
  std::filesystem::create_directories(run.out);
  const auto path = run.out / "clusters.json";
  alft::detail::write_text(path, to_json(report).dump(2) + "\n");
  for (std::size_t c = 0; c < report.clusters.size(); ++c) {
    out << "cluster " << c << ": " << report.clusters[c].size << " example(s)";
    for (const auto& s : report.clusters[c].dominant_sequence) out << ' ' << s;
    out << '\n';
  }
  out << "inertia " << std::setprecision(6) << report.inertia << " after " << report.iterations << " iteration(s)\n";
  out << "wrote " << path.string() << '\n';
  return 0;
}

}  // namespace alft::cli

#pragma once

// Shared test fixtures: seeded random models and examples, the linear
// model, the single-dependency model and the 8-question toy QA set.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "alft/alft.hpp"

namespace alft::testing {

inline std::vector<double> normals(std::size_t n, double std, NormalSampler& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = std * rng.next();
  return v;
}

/// Every tensor (biases and norm parameters included) drawn at random, with
/// matrices at `std`. Much further from linear than init_weights.
inline Weights random_weights(ModelConfig config, std::uint64_t seed, double std = 0.3) {
  config.seed = seed;
  Weights w = init_weights(config);
  NormalSampler rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto names = w.param_names();
  auto ps = w.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto v = normals(ps[i]->size(), ps[i]->rank() == 2 ? std : 0.1, rng);
    if (names[i].find("gamma") != std::string::npos)
      for (double& x : v) x += 1.0;
    *ps[i] = Tensor(ps[i]->shape(), std::move(v));
  }
  return w;
}

inline ModelConfig small_config(std::size_t vocab = 40, std::size_t max_len = 64) {
  ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.hidden_dim = 32;
  c.ffn_dim = 64;
  c.vocab_size = vocab;
  c.max_seq_len = max_len;
  return c;
}

/// [CLS] q.. [SEP] p.. [SEP] of total length `len` with random content ids.
inline TokenizedExample random_example(std::size_t vocab_size, std::size_t len, std::uint64_t seed,
                                       std::size_t question_len = 0) {
  std::mt19937_64 g(seed);
  if (question_len == 0) question_len = std::max<std::size_t>(1, (len - 3) / 3);
  const auto para_len = len - 3 - question_len;
  std::vector<std::size_t> qi, pi;
  std::vector<std::string> qt, pt;
  for (std::size_t i = 0; i < question_len; ++i) {
    qi.push_back(kNumReserved + g() % (vocab_size - kNumReserved));
    qt.push_back("q" + std::to_string(qi.back()));
  }
  for (std::size_t i = 0; i < para_len; ++i) {
    pi.push_back(kNumReserved + g() % (vocab_size - kNumReserved));
    pt.push_back("p" + std::to_string(pi.back()));
  }
  auto ex = assemble_example(qi, qt, pi, pt);
  ex.id = "random-" + std::to_string(seed);
  ex.question = "random question";
  return ex;
}

/// One layer, identity activation, no layer norm and zero query/key
/// projections: the logits are affine in the summed embedding.
inline Weights linear_weights(std::uint64_t seed, std::size_t layers = 1) {
  ModelConfig c = small_config();
  c.num_layers = layers;
  c.activation = Activation::Identity;
  c.layer_norm = false;
  Weights w = random_weights(c, seed, 0.2);
  for (auto& l : w.layers) {
    l.wq = Tensor::zeros(l.wq.shape());
    l.wk = Tensor::zeros(l.wk.shape());
  }
  return w;
}

/// Attention output projections zeroed, so every position's hidden state
/// depends on that position's embedding alone. The logits at position 3 read
/// only token 3.
inline Weights single_dependency_weights(std::uint64_t seed) {
  Weights w = random_weights(small_config(), seed, 0.3);
  for (auto& l : w.layers) {
    l.wo = Tensor::zeros(l.wo.shape());
    l.bo = Tensor::zeros(l.bo.shape());
  }
  return w;
}

struct ToyQuestion {
  const char* question;
  const char* context;
  const char* answer;
};

inline const std::vector<ToyQuestion>& toy_questions() {
  static const std::vector<ToyQuestion> q{
      {"when did beyonce start becoming popular?",
       "beyonce grew up in houston and rose to fame in the late 1990s as lead singer of a girl group.", "late 1990s"},
      {"where did beyonce grow up?",
       "beyonce grew up in houston and rose to fame in the late 1990s as lead singer of a girl group.", "houston"},
      {"what is the capital of france?", "paris is the capital and largest city of france, on the river seine.",
       "paris"},
      {"which river flows through paris?", "paris is the capital and largest city of france, on the river seine.",
       "seine"},
      {"who wrote the origin of species?",
       "the origin of species was written by charles darwin and published in 1859.", "charles darwin"},
      {"when was the origin of species published?",
       "the origin of species was written by charles darwin and published in 1859.", "1859"},
      {"what do bees collect from flowers?",
       "honey bees collect nectar from flowers and turn it into honey inside the hive.", "nectar"},
      {"how many legs does a spider have?", "a spider has eight legs and most species also have eight eyes.",
       "eight legs"},
  };
  return q;
}

inline std::vector<SquadQuestion> toy_squad() {
  std::vector<SquadQuestion> out;
  int i = 0;
  for (const auto& t : toy_questions()) {
    SquadQuestion q;
    q.id = "toy-" + std::to_string(i++);
    q.question = t.question;
    q.context = t.context;
    const std::string ctx = t.context;
    q.answers.push_back({t.answer, ctx.find(t.answer)});
    out.push_back(std::move(q));
  }
  return out;
}

struct ToySet {
  Vocab vocab;
  ModelConfig config;
  std::vector<TokenizedExample> examples;
};

inline ToySet toy_set(std::uint64_t seed = 7) {
  const auto qs = toy_squad();
  ToySet s{build_vocab(squad_corpus(qs)), small_config(), {}};
  s.config.vocab_size = s.vocab.size();
  s.config.max_seq_len = 48;
  s.config.seed = seed;
  s.examples = ingest_squad(qs, s.vocab, s.config.max_seq_len);
  return s;
}

}  // namespace alft::testing

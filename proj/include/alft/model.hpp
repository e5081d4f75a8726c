#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "alft/error.hpp"
#include "alft/instrument.hpp"
#include "alft/tensor.hpp"
#include "alft/tokenizer.hpp"
#include "alft/trace.hpp"

namespace alft {

/// Feed-forward nonlinearity. Identity exists for linear test fixtures.
enum class Activation : std::uint32_t { Gelu = 0, Identity = 1 };

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t hidden_dim = 32;
  std::size_t ffn_dim = 64;
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 64;
  std::uint64_t seed = 0;
  Activation activation = Activation::Gelu;
  /// When false both layer norms of every layer are skipped.
  bool layer_norm = true;

  std::size_t head_dim() const { return hidden_dim / num_heads; }

  void validate() const {
    if (num_layers < 1 || num_heads < 1 || hidden_dim < 1 || ffn_dim < 1 || vocab_size < 1) {
      throw ConfigError("model config: all extents must be >= 1");
    }
    if (hidden_dim % num_heads != 0) {
      throw ConfigError("model config: hidden_dim " + std::to_string(hidden_dim) +
                        " is not divisible by num_heads " + std::to_string(num_heads));
    }
    if (max_seq_len < 8) throw ConfigError("model config: max_seq_len must be >= 8");
    if (vocab_size < kNumReserved) {
      throw ConfigError("model config: vocab_size must cover the reserved tokens");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gamma, ln1_beta;
  Tensor w1, b1, w2, b2;
  Tensor ln2_gamma, ln2_beta;
};

struct Weights {
  ModelConfig config;
  Tensor token_embedding;     // vocab_size x d
  Tensor position_embedding;  // max_seq_len x d
  Tensor segment_embedding;   // 2 x d
  std::vector<LayerWeights> layers;
  Tensor span_w;  // d x 2, column 0 start, column 1 end
  Tensor span_b;  // 2

  /// Every tensor in declaration order; this order is also the file order.
  std::vector<const Tensor*> params() const { return collect<const Tensor*>(*this); }
  std::vector<Tensor*> params() { return collect<Tensor*>(*this); }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names{"token_embedding", "position_embedding", "segment_embedding"};
    static const char* per_layer[] = {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                                      "ln1_gamma", "ln1_beta", "w1", "b1", "w2", "b2",
                                      "ln2_gamma", "ln2_beta"};
    for (std::size_t l = 0; l < layers.size(); ++l)
      for (const char* n : per_layer) names.push_back("layer" + std::to_string(l) + "." + n);
    names.push_back("span_w");
    names.push_back("span_b");
    return names;
  }

  /// Expected shape of every param for a config, in declaration order.
  static std::vector<Shape> param_shapes(const ModelConfig& c) {
    const auto d = c.hidden_dim, f = c.ffn_dim;
    std::vector<Shape> s{{c.vocab_size, d}, {c.max_seq_len, d}, {2, d}};
    for (std::size_t l = 0; l < c.num_layers; ++l) {
      for (int k = 0; k < 4; ++k) {
        s.push_back({d, d});
        s.push_back({d});
      }
      s.push_back({d});
      s.push_back({d});
      s.push_back({d, f});
      s.push_back({f});
      s.push_back({f, d});
      s.push_back({d});
      s.push_back({d});
      s.push_back({d});
    }
    s.push_back({d, 2});
    s.push_back({2});
    return s;
  }

  void validate() const {
    config.validate();
    if (layers.size() != config.num_layers) throw ConfigError("weights: layer count differs from config");
    const auto shapes = param_shapes(config);
    const auto ps = params();
    const auto names = param_names();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ps[i]->shape() != shapes[i]) {
        throw ConfigError("weights: " + names[i] + " has shape " + shape_str(ps[i]->shape()) +
                          ", config expects " + shape_str(shapes[i]));
      }
    }
  }

 private:
  template <class Ptr, class Self>
  static std::vector<Ptr> collect(Self& self) {
    std::vector<Ptr> out{&self.token_embedding, &self.position_embedding, &self.segment_embedding};
    for (auto& l : self.layers) {
      for (auto* t : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gamma, &l.ln1_beta,
                      &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_gamma, &l.ln2_beta}) {
        out.push_back(t);
      }
    }
    out.push_back(&self.span_w);
    out.push_back(&self.span_b);
    return out;
  }
};

/// Standard normals from a 64-bit Mersenne Twister via Box-Muller. Written
/// out so the stream is identical on every standard library.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    // 53 random bits in [0, 1).
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline constexpr double kInitStd = 0.02;

/// Matrices ~ N(0, 0.02^2) from config.seed in declaration order; biases and
/// layer-norm shifts zero, layer-norm gains one.
inline Weights init_weights(const ModelConfig& config) {
  config.validate();
  NormalSampler rng(config.seed);
  Weights w;
  w.config = config;
  w.layers.resize(config.num_layers);
  const auto shapes = Weights::param_shapes(config);
  const auto names = w.param_names();
  auto ps = w.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& shape = shapes[i];
    const auto n = shape_size(shape);
    std::vector<double> v(n, 0.0);
    if (shape.size() == 2) {
      for (double& x : v) x = kInitStd * rng.next();
    } else if (names[i].find("gamma") != std::string::npos) {
      v.assign(n, 1.0);
    }
    *ps[i] = Tensor(shape, std::move(v));
  }
  return w;
}

namespace detail {

inline std::size_t record_encoder(TraceBuilder& b, const Weights& w, std::size_t h0) {
  const auto& c = w.config;
  const auto names = w.param_names();
  // Param indices follow Weights::params(): 3 embedding tables, 16 per layer.
  auto param = [&](const Tensor& t, std::size_t index) { return b.param(t, index, names[index]); };
  auto linear = [&](std::size_t x, std::size_t wi, std::size_t bi, const Tensor& wt, const Tensor& bt,
                    const std::string& label) {
    const auto mm = b.op(OpKind::MatMul, {x, param(wt, wi)}, label + ".matmul");
    return b.op(OpKind::AddBias, {mm, param(bt, bi)}, label + ".bias");
  };

  auto& trace = b.trace();
  trace.layer_cuts.push_back(h0);
  std::size_t h = h0;
  const auto dh = c.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto& lw = w.layers[l];
    const std::size_t base = 3 + 16 * l;
    const std::string p = "layer" + std::to_string(l);
    const auto q = linear(h, base + 0, base + 1, lw.wq, lw.bq, p + ".q");
    const auto k = linear(h, base + 2, base + 3, lw.wk, lw.bk, p + ".k");
    const auto v = linear(h, base + 4, base + 5, lw.wv, lw.bv, p + ".v");
    std::vector<std::size_t> heads;
    for (std::size_t hd = 0; hd < c.num_heads; ++hd) {
      const std::string hp = p + ".head" + std::to_string(hd);
      OpAttrs slice;
      slice.begin = hd * dh;
      slice.width = dh;
      const auto qh = b.op(OpKind::SliceCols, {q}, hp + ".q", slice);
      const auto kh = b.op(OpKind::SliceCols, {k}, hp + ".k", slice);
      const auto vh = b.op(OpKind::SliceCols, {v}, hp + ".v", slice);
      const auto kt = b.op(OpKind::Transpose, {kh}, hp + ".kT");
      const auto raw = b.op(OpKind::MatMul, {qh, kt}, hp + ".scores");
      OpAttrs sc;
      sc.factor = inv_sqrt_dh;
      const auto scaled = b.op(OpKind::Scale, {raw}, hp + ".scaled", sc);
      const auto probs = b.op(OpKind::Softmax, {scaled}, hp + ".probs");
      heads.push_back(b.op(OpKind::MatMul, {probs, vh}, hp + ".context"));
    }
    const auto ctx = b.op(OpKind::ConcatCols, heads, p + ".context");
    const auto attn = linear(ctx, base + 6, base + 7, lw.wo, lw.bo, p + ".attn_out");
    std::size_t h1 = b.op(OpKind::Add, {h, attn}, p + ".residual1");
    if (c.layer_norm) {
      h1 = b.op(OpKind::LayerNorm, {h1, param(lw.ln1_gamma, base + 8), param(lw.ln1_beta, base + 9)},
                p + ".norm1");
    }
    std::size_t f = linear(h1, base + 10, base + 11, lw.w1, lw.b1, p + ".ffn1");
    if (c.activation == Activation::Gelu) f = b.op(OpKind::Gelu, {f}, p + ".gelu");
    const auto f2 = linear(f, base + 12, base + 13, lw.w2, lw.b2, p + ".ffn2");
    std::size_t h2 = b.op(OpKind::Add, {h1, f2}, p + ".residual2");
    if (c.layer_norm) {
      h2 = b.op(OpKind::LayerNorm, {h2, param(lw.ln2_gamma, base + 14), param(lw.ln2_beta, base + 15)},
                p + ".norm2");
    }
    trace.layer_cuts.push_back(h2);
    h = h2;
  }
  const std::size_t span_base = 3 + 16 * c.num_layers;
  trace.logits = linear(h, span_base, span_base + 1, w.span_w, w.span_b, "span");
  const auto& logits = trace.value(trace.logits);
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    trace.start_logits.push_back(logits(t, 0));
    trace.end_logits.push_back(logits(t, 1));
  }
  instrument::counters().forward_passes.fetch_add(1);
  return trace.logits;
}

inline void check_example_fits(const Weights& w, const TokenizedExample& ex) {
  if (ex.size() > w.config.max_seq_len) {
    throw InputError("sequence of " + std::to_string(ex.size()) + " tokens exceeds max_seq_len " +
                     std::to_string(w.config.max_seq_len));
  }
  if (ex.size() < 3 || ex.segments.size() != ex.size()) throw InputError("malformed example");
  for (auto id : ex.ids) {
    if (id >= w.config.vocab_size) {
      throw ConfigError("token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(w.config.vocab_size));
    }
  }
}

}  // namespace detail

/// Runs the encoder and span head, recording every intermediate.
inline ForwardTrace forward(const Weights& w, const TokenizedExample& ex) {
  detail::check_example_fits(w, ex);
  TraceBuilder b;
  std::vector<std::size_t> positions(ex.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  OpAttrs tok, pos, seg;
  tok.ids = ex.ids;
  pos.ids = positions;
  seg.ids = ex.segments;
  const auto te = b.op(OpKind::Gather, {b.param(w.token_embedding, 0, "token_embedding")}, "embed.token", tok);
  const auto pe = b.op(OpKind::Gather, {b.param(w.position_embedding, 1, "position_embedding")}, "embed.position", pos);
  const auto se = b.op(OpKind::Gather, {b.param(w.segment_embedding, 2, "segment_embedding")}, "embed.segment", seg);
  const auto sum1 = b.op(OpKind::Add, {te, pe}, "embed.sum_tp");
  const auto h0 = b.op(OpKind::Add, {sum1, se}, "embed.sum");
  detail::record_encoder(b, w, h0);
  return b.release();
}

/// Runs the encoder from a given summed-embedding matrix (seq_len x d).
inline ForwardTrace forward_embedded(const Weights& w, const Tensor& embedding) {
  if (embedding.rank() != 2 || embedding.cols() != w.config.hidden_dim ||
      embedding.rows() > w.config.max_seq_len) {
    throw DimensionError("forward_embedded: embedding " + shape_str(embedding.shape()) +
                         " does not fit the model");
  }
  TraceBuilder b;
  const auto h0 = b.input(embedding, "embed.sum");
  detail::record_encoder(b, w, h0);
  return b.release();
}

/// Summed token + position + segment embedding of an example.
inline Tensor embed(const Weights& w, const TokenizedExample& ex) {
  detail::check_example_fits(w, ex);
  std::vector<std::size_t> positions(ex.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  return add(add(gather_rows(w.token_embedding, ex.ids), gather_rows(w.position_embedding, positions)),
             gather_rows(w.segment_embedding, ex.segments));
}

inline constexpr std::size_t kMaxAnswerSpan = 30;

struct SpanPrediction {
  std::size_t start = 0;
  std::size_t end = 0;
  bool is_null = true;
  double score = 0.0;       // best span score (start + end logit)
  double null_score = 0.0;  // start_logit[0] + end_logit[0]
};

/// Best paragraph span with start <= end <= start + 30, or the null answer
/// when the [CLS] score beats it.
inline SpanPrediction predict_span(const ForwardTrace& trace, const TokenizedExample& ex) {
  SpanPrediction p;
  p.null_score = trace.start_logits[0] + trace.end_logits[0];
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t s = ex.paragraph_begin(); s < ex.paragraph_end(); ++s) {
    const auto last = std::min(ex.paragraph_end() - 1, s + kMaxAnswerSpan);
    for (std::size_t e = s; e <= last; ++e) {
      const double score = trace.start_logits[s] + trace.end_logits[e];
      if (score > best) {
        best = score;
        p.start = s;
        p.end = e;
      }
    }
  }
  if (best == -std::numeric_limits<double>::infinity() || p.null_score > best) {
    p.start = p.end = 0;
    p.is_null = true;
    p.score = p.null_score;
  } else {
    p.is_null = false;
    p.score = best;
  }
  return p;
}

}  // namespace alft

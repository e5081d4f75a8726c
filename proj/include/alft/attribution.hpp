#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "alft/error.hpp"
#include "alft/instrument.hpp"
#include "alft/model.hpp"
#include "alft/ops.hpp"
#include "alft/tensor.hpp"
#include "alft/trace.hpp"

namespace alft {

// ---------------------------------------------------------------------------
// Multiplier rules. Each rule maps the multiplier of an op's output onto its
// inputs such that sum(m_in * delta_in) == sum(m_out * delta_out), where
// delta = actual - reference. Chaining them keeps completeness at every cut.
// ---------------------------------------------------------------------------
namespace rules {

/// Below this |delta x| the Rescale rule uses f'((x + ref) / 2).
inline constexpr double kRescaleThreshold = 1e-7;

/// Rescale multiplier of one elementwise step y = f(x).
template <class Derivative>
double rescale(double x, double x_ref, double y, double y_ref, Derivative&& fprime) {
  const double dx = x - x_ref;
  if (std::abs(dx) < kRescaleThreshold) return fprime(0.5 * (x + x_ref));
  return (y - y_ref) / dx;
}

/// Elementwise f with stored outputs: m_in = m_out * rescale.
template <class Derivative>
std::vector<double> elementwise(std::span<const double> x, std::span<const double> x_ref,
                                std::span<const double> y, std::span<const double> y_ref,
                                std::span<const double> m_out, Derivative&& fprime) {
  std::vector<double> m(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) m[i] = m_out[i] * rescale(x[i], x_ref[i], y[i], y_ref[i], fprime);
  return m;
}

// Closed-form secants (y - y_ref) / (x - x_ref) of the primitives inside
// softmax and layer norm. They need no small-delta fallback: the division by
// delta is done symbolically, so tiny scales keep full precision.

inline double exp_slope(double x, double x_ref) {
  const double d = x - x_ref;
  if (d == 0.0) return std::exp(x);
  return std::exp(x_ref) * (std::expm1(d) / d);
}

inline double reciprocal_slope(double x, double x_ref) { return -1.0 / (x * x_ref); }

/// For sqrt(v + eps).
inline double sqrt_eps_slope(double v, double v_ref) {
  return 1.0 / (std::sqrt(v + kLayerNormEps) + std::sqrt(v_ref + kLayerNormEps));
}

struct ProductMultipliers {
  std::vector<double> lhs;
  std::vector<double> rhs;
};

/// c = x * y elementwise. The cross term dx*dy is split evenly:
///   C_x = (y_ref + dy/2) dx,  C_y = (x_ref + dx/2) dy.
inline ProductMultipliers product(std::span<const double> x, std::span<const double> x_ref,
                                  std::span<const double> y, std::span<const double> y_ref,
                                  std::span<const double> m_out) {
  ProductMultipliers m{std::vector<double>(x.size()), std::vector<double>(x.size())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    m.lhs[i] = m_out[i] * 0.5 * (y[i] + y_ref[i]);
    m.rhs[i] = m_out[i] * 0.5 * (x[i] + x_ref[i]);
  }
  return m;
}

/// c[i][j] = x[i][j] * r[i] (a per-row scalar broadcast across columns).
/// The broadcast dimension is summed out of r's multiplier.
inline ProductMultipliers row_broadcast_product(std::size_t rows, std::size_t cols, std::span<const double> x,
                                                std::span<const double> x_ref, std::span<const double> r,
                                                std::span<const double> r_ref, std::span<const double> m_out) {
  ProductMultipliers m{std::vector<double>(rows * cols), std::vector<double>(rows, 0.0)};
  for (std::size_t i = 0; i < rows; ++i) {
    const double r_mid = 0.5 * (r[i] + r_ref[i]);
    for (std::size_t j = 0; j < cols; ++j) {
      const auto k = i * cols + j;
      m.lhs[k] = m_out[k] * r_mid;
      m.rhs[i] += m_out[k] * 0.5 * (x[k] + x_ref[k]);
    }
  }
  return m;
}

/// c = a b (both operands may differ from their references). Each scalar
/// product a_ik b_kj takes the product rule, so
///   m_a = m_c (b_ref + db/2)^T,  m_b = (a_ref + da/2)^T m_c.
/// With db == 0 this is the affine rule m_a = m_c b^T.
inline std::pair<Tensor, Tensor> matmul(const Tensor& a, const Tensor& a_ref, const Tensor& b, const Tensor& b_ref,
                                        const Tensor& m_out) {
  const Tensor a_mid = scale(add(a, a_ref), 0.5);
  const Tensor b_mid = scale(add(b, b_ref), 0.5);
  return {alft::matmul(m_out, transpose(b_mid)), alft::matmul(transpose(a_mid), m_out)};
}

/// Row softmax decomposed as exp -> sum -> reciprocal -> product. Both rows
/// are shifted by the same constant (the larger of the two row maxima), which
/// leaves the softmax unchanged and has zero delta.
inline std::vector<double> softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                                        std::span<const double> x_ref, std::span<const double> m_out) {
  std::vector<double> m_x(rows * cols);
  std::vector<double> e(cols), er(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto row = x.subspan(i * cols, cols);
    const auto row_ref = x_ref.subspan(i * cols, cols);
    const double shift = std::max(*std::max_element(row.begin(), row.end()),
                                  *std::max_element(row_ref.begin(), row_ref.end()));
    double s = 0.0, sr = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      e[j] = std::exp(row[j] - shift);
      er[j] = std::exp(row_ref[j] - shift);
      s += e[j];
      sr += er[j];
    }
    const double r = 1.0 / s, rr = 1.0 / sr;
    // p = e * r
    const double r_mid = 0.5 * (r + rr);
    double m_r = 0.0;
    for (std::size_t j = 0; j < cols; ++j) m_r += m_out[i * cols + j] * 0.5 * (e[j] + er[j]);
    // r = 1 / s
    const double m_s = m_r * reciprocal_slope(s, sr);
    for (std::size_t j = 0; j < cols; ++j) {
      // e feeds both the product and the sum.
      const double m_e = m_out[i * cols + j] * r_mid + m_s;
      const double z = row[j] - shift, zr = row_ref[j] - shift;
      m_x[i * cols + j] = m_e * exp_slope(z, zr);
    }
  }
  return m_x;
}

/// Layer norm over rows decomposed as mean -> subtract -> square -> mean ->
/// sqrt(+eps) -> reciprocal -> product -> affine(gamma, beta).
inline std::vector<double> layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                                           std::span<const double> x_ref, std::span<const double> gamma,
                                           std::span<const double> m_out) {
  std::vector<double> m_x(rows * cols);
  std::vector<double> c(cols), cr(cols), m_c(cols);
  const double inv_w = 1.0 / static_cast<double>(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto row = x.subspan(i * cols, cols);
    const auto row_ref = x_ref.subspan(i * cols, cols);
    double mu = 0.0, mur = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      mu += row[j];
      mur += row_ref[j];
    }
    mu *= inv_w;
    mur *= inv_w;
    double v = 0.0, vr = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      c[j] = row[j] - mu;
      cr[j] = row_ref[j] - mur;
      v += c[j] * c[j];
      vr += cr[j] * cr[j];
    }
    v *= inv_w;
    vr *= inv_w;
    const double sd = std::sqrt(v + kLayerNormEps), sdr = std::sqrt(vr + kLayerNormEps);
    const double r = 1.0 / sd, rr = 1.0 / sdr;

    // y = n * gamma + beta; n = c * r
    const double r_mid = 0.5 * (r + rr);
    double m_r = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double m_n = m_out[i * cols + j] * gamma[j];
      m_c[j] = m_n * r_mid;
      m_r += m_n * 0.5 * (c[j] + cr[j]);
    }
    const double m_sd = m_r * reciprocal_slope(sd, sdr);
    const double m_v = m_sd * sqrt_eps_slope(v, vr);
    // v = mean(c * c); the square takes the product rule with itself.
    double m_mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      m_c[j] += m_v * inv_w * (c[j] + cr[j]);
      m_mu -= m_c[j];
    }
    // c = x - mu, mu = mean(x)
    for (std::size_t j = 0; j < cols; ++j) m_x[i * cols + j] = m_c[j] + m_mu * inv_w;
  }
  return m_x;
}

}  // namespace rules

// ---------------------------------------------------------------------------
// Reference construction
// ---------------------------------------------------------------------------

struct ReferenceSpec {
  std::string strategy = "mask-non-special";
  TokenizedExample example;
};

/// Replaces every token except [CLS] and the two [SEP]s by [MASK]; length,
/// positions and segments are kept.
inline ReferenceSpec make_reference(const TokenizedExample& ex) {
  ReferenceSpec ref;
  ref.example = ex;
  for (std::size_t t = 0; t < ex.size(); ++t) {
    if (ex.is_structural(t)) continue;
    ref.example.ids[t] = kMaskId;
    ref.example.tokens[t] = "[MASK]";
  }
  return ref;
}

// ---------------------------------------------------------------------------
// Targets and results
// ---------------------------------------------------------------------------

enum class TargetKind { Start, End, Combined };

inline std::string_view target_name(TargetKind k) {
  switch (k) {
    case TargetKind::Start: return "start";
    case TargetKind::End: return "end";
    case TargetKind::Combined: return "combined";
  }
  return "?";
}

struct Target {
  TargetKind kind = TargetKind::Combined;
  std::size_t start_pos = 0;
  std::size_t end_pos = 0;
};

inline Target target_from_prediction(const SpanPrediction& p, TargetKind kind) { return {kind, p.start, p.end}; }

inline double target_logit(const ForwardTrace& trace, const Target& t) {
  if (t.start_pos >= trace.seq_len() || t.end_pos >= trace.seq_len()) {
    throw InputError("target position outside sequence of " + std::to_string(trace.seq_len()));
  }
  switch (t.kind) {
    case TargetKind::Start: return trace.start_logits[t.start_pos];
    case TargetKind::End: return trace.end_logits[t.end_pos];
    case TargetKind::Combined: return trace.start_logits[t.start_pos] + trace.end_logits[t.end_pos];
  }
  return 0.0;
}

/// d(target)/d(logits): ones at the target cells of the seq_len x 2 logits.
inline Tensor target_seed(std::size_t seq_len, const Target& t) {
  std::vector<double> s(seq_len * 2, 0.0);
  if (t.kind != TargetKind::End) s[t.start_pos * 2] += 1.0;
  if (t.kind != TargetKind::Start) s[t.end_pos * 2 + 1] += 1.0;
  return Tensor({seq_len, 2}, std::move(s));
}

struct LayerScores {
  std::vector<double> scores;  // s = pos + neg per token
  std::vector<double> pos;     // >= 0
  std::vector<double> neg;     // <= 0
};

struct AttributionResult {
  Target target;
  double logit = 0.0;
  double ref_logit = 0.0;
  std::vector<std::string> tokens;
  /// Cut 0 is the summed embedding, cut L the final hidden states.
  std::vector<LayerScores> layers;
  /// Elementwise contributions on the summed embedding (seq_len x d).
  Tensor input_contributions;

  double delta() const { return logit - ref_logit; }
  const std::vector<double>& input_scores() const { return layers.front().scores; }
};

/// |sum_t s[l][t] - (logit - ref_logit)| at one cut.
inline double completeness_gap(const AttributionResult& r, std::size_t cut) {
  double total = 0.0;
  for (double s : r.layers.at(cut).scores) total += s;
  return std::abs(total - r.delta());
}

inline double completeness_tolerance(const AttributionResult& r) { return std::max(1e-8, 1e-5 * std::abs(r.delta())); }

inline bool is_complete(const AttributionResult& r) {
  for (std::size_t l = 0; l < r.layers.size(); ++l)
    if (completeness_gap(r, l) > completeness_tolerance(r)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// DeepLIFT backward walk
// ---------------------------------------------------------------------------

/// What a rule sees for one activation: its value on the input, its value
/// on the reference, and the multiplier flowing into it.
struct MultiplierState {
  const Tensor& activation;
  const Tensor& reference;
  const Tensor& multiplier;
};

namespace detail {

inline void require_same_structure(const ForwardTrace& a, const ForwardTrace& b) {
  if (a.nodes.size() != b.nodes.size() || a.layer_cuts != b.layer_cuts || a.logits != b.logits) {
    throw ConfigError("deeplift: input and reference traces have different structure");
  }
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    if (a.nodes[i].kind != b.nodes[i].kind || a.nodes[i].inputs != b.nodes[i].inputs ||
        !a.nodes[i].value.same_shape(b.nodes[i].value)) {
      throw ConfigError("deeplift: traces diverge at node '" + a.nodes[i].label + "'");
    }
  }
}

inline Tensor checked(const TraceNode& node, Shape shape, std::vector<double> m) {
  for (double v : m) {
    if (!std::isfinite(v)) {
      throw NumericalError("non-finite multiplier at op " + std::string(op_name(node.kind)) + " ('" + node.label +
                           "')");
    }
  }
  return Tensor(std::move(shape), std::move(m));
}

// Input multipliers of one node. Entries for inputs with zero delta by
// construction (parameters) are left empty.
inline std::vector<std::optional<Tensor>> node_multipliers(const ForwardTrace& x, const ForwardTrace& ref,
                                                           std::size_t i, const MultiplierState& out) {
  const auto& n = x.nodes[i];
  const auto& in = n.inputs;
  auto val = [&](std::size_t k) -> const Tensor& { return x.value(in[k]); };
  auto rval = [&](std::size_t k) -> const Tensor& { return ref.value(in[k]); };
  auto varies = [&](std::size_t k) { return x.nodes[in[k]].kind != OpKind::Param; };
  const Tensor& m = out.multiplier;
  std::vector<std::optional<Tensor>> res(in.size());

  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Param:
    case OpKind::Gather:
      // Walk ends at the summed embedding; nothing below it carries a delta.
      return res;

    case OpKind::Add:
      for (std::size_t k = 0; k < 2; ++k)
        if (varies(k)) res[k] = m;
      return res;

    case OpKind::AddBias:
      res[0] = m;
      return res;

    case OpKind::MatMul: {
      auto [ma, mb] = rules::matmul(val(0), rval(0), val(1), rval(1), m);
      if (varies(0)) res[0] = checked(n, ma.shape(), ma.data());
      if (varies(1)) res[1] = checked(n, mb.shape(), mb.data());
      return res;
    }

    case OpKind::Transpose:
      res[0] = transpose(m);
      return res;

    case OpKind::Scale:
      res[0] = scale(m, n.attrs.factor);
      return res;

    case OpKind::SliceCols:
      res[0] = vjp(n.kind, std::vector<const Tensor*>{&val(0)}, m, n.attrs)[0];
      return res;

    case OpKind::ConcatCols: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        res[k] = slice_cols(m, offset, val(k).cols());
        offset += val(k).cols();
      }
      return res;
    }

    case OpKind::Softmax: {
      const auto cols = val(0).shape().back();
      res[0] = checked(n, val(0).shape(),
                       rules::softmax_rows(val(0).size() / cols, cols, val(0).values(), rval(0).values(), m.values()));
      return res;
    }

    case OpKind::Gelu:
      res[0] = checked(n, val(0).shape(),
                       rules::elementwise(val(0).values(), rval(0).values(), out.activation.values(),
                                          out.reference.values(), m.values(),
                                          [](double v) { return gelu_derivative(v); }));
      return res;

    case OpKind::LayerNorm: {
      const auto cols = val(0).shape().back();
      res[0] = checked(n, val(0).shape(),
                       rules::layer_norm_rows(val(0).size() / cols, cols, val(0).values(), rval(0).values(),
                                              val(1).values(), m.values()));
      return res;
    }
  }
  throw InputError("unknown op kind in multiplier walk");
}

}  // namespace detail

/// One backward walk from the logits down to the summed embedding. Returns
/// the multiplier of every node the walk reaches.
inline std::vector<std::optional<Tensor>> multiplier_walk(const ForwardTrace& x, const ForwardTrace& ref,
                                                          const Tensor& seed) {
  detail::require_same_structure(x, ref);
  instrument::counters().multiplier_walks.fetch_add(1);
  std::vector<std::optional<Tensor>> mult(x.nodes.size());
  mult[x.logits] = seed;
  const auto stop = x.embedding_node();
  for (std::size_t i = x.logits + 1; i-- > stop + 1;) {
    if (!mult[i]) continue;
    const auto& node = x.nodes[i];
    if (node.kind == OpKind::Param || node.kind == OpKind::Input) continue;
    const MultiplierState state{x.value(i), ref.value(i), *mult[i]};
    auto ins = detail::node_multipliers(x, ref, i, state);
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (ins[k]) alft::detail::accumulate(mult[node.inputs[k]], std::move(*ins[k]));
    }
  }
  return mult;
}

/// Elementwise m * delta at a node, reduced per row into s / pos / neg.
inline LayerScores cut_scores(const Tensor& m, const Tensor& act, const Tensor& act_ref,
                              std::vector<double>* elementwise = nullptr) {
  const auto rows = act.rows(), cols = act.cols();
  LayerScores s{std::vector<double>(rows, 0.0), std::vector<double>(rows, 0.0), std::vector<double>(rows, 0.0)};
  if (elementwise) elementwise->assign(rows * cols, 0.0);
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t d = 0; d < cols; ++d) {
      const auto k = t * cols + d;
      const double c = m[k] * (act[k] - act_ref[k]);
      if (elementwise) (*elementwise)[k] = c;
      if (c > 0) s.pos[t] += c;
      else s.neg[t] += c;
    }
    s.scores[t] = s.pos[t] + s.neg[t];
  }
  return s;
}

/// DeepLIFT (Rescale + product rules) for one target: two forward passes,
/// one multiplier walk. Per-token scores are reported at every layer cut.
inline AttributionResult deeplift(const Weights& w, const TokenizedExample& ex, const ReferenceSpec& ref,
                                  const Target& target) {
  if (ref.example.size() != ex.size() || ref.example.segments != ex.segments) {
    throw InputError("deeplift: reference does not match the example's geometry");
  }
  const auto trace = forward(w, ex);
  const auto trace_ref = forward(w, ref.example);
  const auto mult = multiplier_walk(trace, trace_ref, target_seed(trace.seq_len(), target));

  AttributionResult r;
  r.target = target;
  r.logit = target_logit(trace, target);
  r.ref_logit = target_logit(trace_ref, target);
  r.tokens = ex.tokens;
  for (std::size_t l = 0; l < trace.num_cuts(); ++l) {
    const auto node = trace.layer_cuts[l];
    const Tensor m = mult[node] ? *mult[node] : Tensor::zeros(trace.value(node).shape());
    std::vector<double> elem;
    r.layers.push_back(cut_scores(m, trace.value(node), trace_ref.value(node), l == 0 ? &elem : nullptr));
    if (l == 0) r.input_contributions = Tensor(trace.value(node).shape(), std::move(elem));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Comparison methods
// ---------------------------------------------------------------------------

/// d(target)/d(summed embedding) at an arbitrary embedding.
inline Tensor embedding_gradient(const Weights& w, const Tensor& embedding, const Target& target) {
  const auto trace = forward_embedded(w, embedding);
  const auto cot = backprop(trace, trace.logits, target_seed(trace.seq_len(), target), trace.embedding_node());
  const auto h0 = trace.embedding_node();
  return cot[h0] ? *cot[h0] : Tensor::zeros(embedding.shape());
}

namespace detail {

inline std::vector<double> row_dot(const Tensor& g, const Tensor& delta) {
  std::vector<double> s(g.rows(), 0.0);
  for (std::size_t t = 0; t < g.rows(); ++t)
    for (std::size_t d = 0; d < g.cols(); ++d) s[t] += g(t, d) * delta(t, d);
  return s;
}

}  // namespace detail

/// Gradient x (embedding - reference embedding), summed per token.
inline std::vector<double> gradient_input(const Weights& w, const TokenizedExample& ex, const ReferenceSpec& ref,
                                          const Target& target) {
  const Tensor h = embed(w, ex);
  const Tensor h_ref = embed(w, ref.example);
  return detail::row_dot(embedding_gradient(w, h, target), subtract(h, h_ref));
}

/// Midpoint Riemann sum of the gradient along the straight path from the
/// reference embedding to the input embedding, times the embedding delta.
inline std::vector<double> integrated_gradients(const Weights& w, const TokenizedExample& ex,
                                                const ReferenceSpec& ref, const Target& target,
                                                std::size_t steps = 512) {
  if (steps < 1) throw InputError("integrated_gradients: steps must be >= 1");
  const Tensor h = embed(w, ex);
  const Tensor h_ref = embed(w, ref.example);
  const Tensor delta = subtract(h, h_ref);
  std::vector<double> acc(h.size(), 0.0);
  for (std::size_t i = 0; i < steps; ++i) {
    const double alpha = (static_cast<double>(i) + 0.5) / static_cast<double>(steps);
    const Tensor point = add(h_ref, scale(delta, alpha));
    const Tensor g = embedding_gradient(w, point, target);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
  }
  for (double& v : acc) v /= static_cast<double>(steps);
  return detail::row_dot(Tensor(h.shape(), std::move(acc)), delta);
}

/// Drop in the target logit when a single token is replaced by [MASK].
/// [CLS] and [SEP] positions are skipped and score 0.
inline std::vector<double> occlusion(const Weights& w, const TokenizedExample& ex, const Target& target) {
  const double base = target_logit(forward(w, ex), target);
  std::vector<double> scores(ex.size(), 0.0);
  for (std::size_t t = 0; t < ex.size(); ++t) {
    if (ex.is_structural(t)) continue;
    TokenizedExample occluded = ex;
    occluded.ids[t] = kMaskId;
    scores[t] = base - target_logit(forward(w, occluded), target);
  }
  return scores;
}

}  // namespace alft

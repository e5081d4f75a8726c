#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "alft/instrument.hpp"
#include "alft/ops.hpp"
#include "alft/tensor.hpp"

namespace alft {

inline constexpr std::size_t kNoParam = static_cast<std::size_t>(-1);

/// One recorded op: its kind, where its inputs came from, and its output.
struct TraceNode {
  OpKind kind = OpKind::Input;
  std::vector<std::size_t> inputs;
  OpAttrs attrs;
  Tensor value;
  std::string label;
  /// Index into Weights::params() for Param nodes.
  std::size_t param = kNoParam;
};

/// Every activation of one forward pass in evaluation order. Nodes only
/// reference earlier nodes, so reverse index order is a valid backward order.
struct ForwardTrace {
  std::vector<TraceNode> nodes;
  /// Node holding the hidden states at cut l: 0 is the summed embedding,
  /// l >= 1 the output of encoder layer l.
  std::vector<std::size_t> layer_cuts;
  std::size_t logits = 0;
  std::vector<double> start_logits;
  std::vector<double> end_logits;

  const Tensor& value(std::size_t node) const { return nodes.at(node).value; }
  const Tensor& hidden(std::size_t cut) const { return value(layer_cuts.at(cut)); }
  std::size_t embedding_node() const { return layer_cuts.front(); }
  std::size_t num_cuts() const { return layer_cuts.size(); }
  std::size_t seq_len() const { return start_logits.size(); }

  std::vector<const Tensor*> input_values(std::size_t node) const {
    std::vector<const Tensor*> out;
    for (auto i : nodes[node].inputs) out.push_back(&nodes[i].value);
    return out;
  }
};

class TraceBuilder {
 public:
  std::size_t input(Tensor value, std::string label) {
    TraceNode n;
    n.kind = OpKind::Input;
    n.value = std::move(value);
    n.label = std::move(label);
    return push(std::move(n));
  }

  std::size_t param(const Tensor& value, std::size_t index, std::string label) {
    TraceNode n;
    n.kind = OpKind::Param;
    n.value = value;
    n.label = std::move(label);
    n.param = index;
    return push(std::move(n));
  }

  std::size_t op(OpKind kind, std::vector<std::size_t> inputs, std::string label, OpAttrs attrs = {}) {
    std::vector<const Tensor*> in;
    for (auto i : inputs) in.push_back(&trace_.nodes.at(i).value);
    TraceNode n;
    n.value = evaluate(kind, in, attrs);
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.attrs = std::move(attrs);
    n.label = std::move(label);
    return push(std::move(n));
  }

  ForwardTrace& trace() noexcept { return trace_; }
  ForwardTrace release() { return std::move(trace_); }

 private:
  std::size_t push(TraceNode n) {
    trace_.nodes.push_back(std::move(n));
    return trace_.nodes.size() - 1;
  }

  ForwardTrace trace_;
};

/// Re-evaluates every non-leaf node from its stored inputs and returns the
/// largest absolute deviation from what was recorded.
inline double replay_max_diff(const ForwardTrace& trace) {
  double worst = 0.0;
  for (std::size_t i = 0; i < trace.nodes.size(); ++i) {
    const auto& n = trace.nodes[i];
    if (n.kind == OpKind::Input || n.kind == OpKind::Param) continue;
    const auto in = trace.input_values(i);
    worst = std::max(worst, max_abs_diff(evaluate(n.kind, in, n.attrs), n.value));
  }
  return worst;
}

namespace detail {

inline void accumulate(std::optional<Tensor>& slot, Tensor contribution) {
  if (slot) slot = add(*slot, contribution);
  else slot = std::move(contribution);
}

}  // namespace detail

/// Reverse-mode sweep from `seed_node` (whose cotangent is `seed`) down to
/// `stop_node`. Returns the accumulated cotangent of every node reached.
inline std::vector<std::optional<Tensor>> backprop(const ForwardTrace& trace, std::size_t seed_node,
                                                   const Tensor& seed, std::size_t stop_node = 0) {
  if (!seed.same_shape(trace.value(seed_node))) {
    throw DimensionError("backprop: seed " + shape_str(seed.shape()) + " does not match node " +
                         shape_str(trace.value(seed_node).shape()));
  }
  instrument::counters().gradient_walks.fetch_add(1);
  std::vector<std::optional<Tensor>> cot(trace.nodes.size());
  cot[seed_node] = seed;
  for (std::size_t i = seed_node + 1; i-- > stop_node;) {
    const auto& n = trace.nodes[i];
    if (!cot[i] || n.kind == OpKind::Input || n.kind == OpKind::Param) continue;
    if (i == stop_node) break;
    const auto in = trace.input_values(i);
    auto grads = vjp(n.kind, in, *cot[i], n.attrs);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      detail::accumulate(cot[n.inputs[k]], std::move(grads[k]));
    }
  }
  return cot;
}

}  // namespace alft

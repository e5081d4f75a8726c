#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "alft/error.hpp"
#include "alft/model.hpp"
#include "alft/trace.hpp"

namespace alft {

/// Position each head is trained towards: the gold span, or [CLS] for
/// unanswerable examples.
inline TokenSpan training_target(const TokenizedExample& ex) {
  if (!ex.answerable) return {0, 0};
  if (!ex.gold) throw InputError("example '" + ex.id + "' is answerable but has no gold span");
  return *ex.gold;
}

namespace detail {

// -log softmax(logits)[target] and its gradient p - onehot.
inline double cross_entropy(const std::vector<double>& logits, std::size_t target, std::vector<double>& grad) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = std::exp(logits[i] - log_z);
  grad[target] -= 1.0;
  return log_z - logits[target];
}

}  // namespace detail

/// Summed start + end cross-entropy of one example.
inline double span_loss(const ForwardTrace& trace, const TokenSpan& target) {
  std::vector<double> g;
  return detail::cross_entropy(trace.start_logits, target.start, g) +
         detail::cross_entropy(trace.end_logits, target.end, g);
}

struct LossGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;  // aligned with Weights::params()
};

inline LossGradient loss_gradient(const Weights& w, const TokenizedExample& ex) {
  const auto target = training_target(ex);
  const auto trace = forward(w, ex);
  std::vector<double> gs, ge;
  LossGradient out;
  out.loss = detail::cross_entropy(trace.start_logits, target.start, gs) +
             detail::cross_entropy(trace.end_logits, target.end, ge);
  std::vector<double> seed(2 * gs.size());
  for (std::size_t t = 0; t < gs.size(); ++t) {
    seed[2 * t] = gs[t];
    seed[2 * t + 1] = ge[t];
  }
  const auto cot = backprop(trace, trace.logits, Tensor({gs.size(), 2}, std::move(seed)));
  const auto params = w.params();
  std::vector<std::optional<Tensor>> acc(params.size());
  for (std::size_t i = 0; i < trace.nodes.size(); ++i) {
    const auto& n = trace.nodes[i];
    if (n.kind == OpKind::Param && cot[i]) detail::accumulate(acc[n.param], *cot[i]);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.grads.push_back(acc[i] ? std::move(*acc[i]) : Tensor::zeros(params[i]->shape()));
  }
  return out;
}

/// Full-batch gradient descent on the mean span loss, starting from
/// init_weights(config). `epoch_losses` receives the mean loss measured at
/// the start of each epoch.
inline Weights train_toy(const ModelConfig& config, const std::vector<TokenizedExample>& dataset,
                         std::size_t epochs, double lr, std::vector<double>* epoch_losses = nullptr) {
  if (dataset.empty()) throw InputError("train_toy: empty dataset");
  for (const auto& ex : dataset) training_target(ex);
  Weights w = init_weights(config);
  const double inv_n = 1.0 / static_cast<double>(dataset.size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    double loss = 0.0;
    std::vector<std::vector<double>> total;
    try {
      for (const auto& ex : dataset) {
        auto lg = loss_gradient(w, ex);
        loss += lg.loss;
        if (total.empty()) {
          for (auto& g : lg.grads) total.push_back(g.data());
        } else {
          for (std::size_t i = 0; i < total.size(); ++i)
            for (std::size_t j = 0; j < total[i].size(); ++j) total[i][j] += lg.grads[i][j];
        }
      }
    } catch (const NumericalError& e) {
      throw TrainingError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }
    loss *= inv_n;
    if (!std::isfinite(loss)) throw TrainingError("non-finite loss in epoch " + std::to_string(epoch));
    if (epoch_losses) epoch_losses->push_back(loss);
    if (lr == 0.0) continue;
    auto ps = w.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      std::vector<double> v = ps[i]->data();
      for (std::size_t j = 0; j < v.size(); ++j) v[j] -= lr * inv_n * total[i][j];
      try {
        *ps[i] = Tensor(ps[i]->shape(), std::move(v));
      } catch (const NumericalError&) {
        throw TrainingError("non-finite weights after epoch " + std::to_string(epoch));
      }
    }
  }
  return w;
}

}  // namespace alft

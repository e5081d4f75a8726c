#pragma once

// Central finite-difference oracle for vector-Jacobian products.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "alft/alft.hpp"

namespace alft::testing {

inline constexpr double kFdStep = 1e-5;
/// Denominator floor for relative error, so entries whose true derivative
/// is ~0 are judged on absolute error 1e-4 * floor.
inline constexpr double kRelFloor = 1e-5;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
}

inline Tensor uniform_tensor(Shape shape, std::mt19937_64& g, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = u(g);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor with_entry(const Tensor& t, std::size_t i, double value) {
  auto v = t.data();
  v[i] = value;
  return Tensor(t.shape(), std::move(v));
}

/// Max relative error between vjp() and central differences of
/// sum(u * op(inputs)) over every entry of every input in `check`.
inline double op_gradcheck(OpKind kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs, std::uint64_t seed,
                           const std::vector<std::size_t>& check) {
  std::mt19937_64 g(seed);
  auto ptrs = [](const std::vector<Tensor>& ts) {
    std::vector<const Tensor*> p;
    for (const auto& t : ts) p.push_back(&t);
    return p;
  };
  const Tensor out = evaluate(kind, ptrs(inputs), attrs);
  const Tensor u = uniform_tensor(out.shape(), g, -1.0, 1.0);
  const auto grads = vjp(kind, ptrs(inputs), u, attrs);
  auto objective = [&](const std::vector<Tensor>& in) {
    const Tensor y = evaluate(kind, ptrs(in), attrs);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += u[i] * y[i];
    return s;
  };
  double worst = 0.0;
  for (auto k : check) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k] = with_entry(inputs[k], i, inputs[k][i] + kFdStep);
      minus[k] = with_entry(inputs[k], i, inputs[k][i] - kFdStep);
      const double fd = (objective(plus) - objective(minus)) / (2.0 * kFdStep);
      worst = std::max(worst, relative_error(grads[k][i], fd));
    }
  }
  return worst;
}

struct OpCase {
  OpKind kind;
  std::vector<Tensor> inputs;
  OpAttrs attrs;
  std::vector<std::size_t> check;
};

/// One randomized case per differentiable op kind, inputs in [-2, 2].
inline std::vector<OpCase> all_op_cases(std::uint64_t seed) {
  std::mt19937_64 g(seed);
  auto U = [&](Shape s) { return uniform_tensor(std::move(s), g); };
  std::vector<OpCase> cases;
  {
    OpAttrs a;
    a.ids = {2, 0, 2, 1};
    cases.push_back({OpKind::Gather, {U({3, 4})}, a, {0}});
  }
  cases.push_back({OpKind::Add, {U({3, 4}), U({3, 4})}, {}, {0, 1}});
  cases.push_back({OpKind::AddBias, {U({3, 4}), U({4})}, {}, {0, 1}});
  cases.push_back({OpKind::MatMul, {U({3, 5}), U({5, 2})}, {}, {0, 1}});
  cases.push_back({OpKind::Transpose, {U({3, 5})}, {}, {0}});
  {
    OpAttrs a;
    a.factor = 0.37;
    cases.push_back({OpKind::Scale, {U({3, 4})}, a, {0}});
  }
  {
    OpAttrs a;
    a.begin = 1;
    a.width = 3;
    cases.push_back({OpKind::SliceCols, {U({3, 6})}, a, {0}});
  }
  cases.push_back({OpKind::ConcatCols, {U({3, 2}), U({3, 3}), U({3, 1})}, {}, {0, 1, 2}});
  cases.push_back({OpKind::Softmax, {U({4, 5})}, {}, {0}});
  cases.push_back({OpKind::Gelu, {U({3, 4})}, {}, {0}});
  cases.push_back({OpKind::LayerNorm, {U({3, 6}), U({6}), U({6})}, {}, {0, 1, 2}});
  return cases;
}

}  // namespace alft::testing

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "alft/error.hpp"
#include "alft/tensor.hpp"

namespace alft {

/// Every primitive the encoder is built from. Input and Param are leaves.
enum class OpKind {
  Input,
  Param,
  Gather,
  Add,
  AddBias,
  MatMul,
  Transpose,
  Scale,
  SliceCols,
  ConcatCols,
  Softmax,
  Gelu,
  LayerNorm,
};

inline constexpr std::size_t kOpKindCount = 13;

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::Gather: return "gather";
    case OpKind::Add: return "add";
    case OpKind::AddBias: return "add_bias";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Scale: return "scale";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::Softmax: return "softmax";
    case OpKind::Gelu: return "gelu";
    case OpKind::LayerNorm: return "layer_norm";
  }
  return "unknown";
}

/// Non-tensor arguments. Only the fields relevant to an op are read:
/// Scale uses `factor`, SliceCols uses `begin`/`width`, Gather uses `ids`.
struct OpAttrs {
  double factor = 1.0;
  std::size_t begin = 0;
  std::size_t width = 0;
  std::vector<std::size_t> ids;
};

namespace detail {

inline void require_arity(OpKind kind, std::span<const Tensor* const> inputs, std::size_t n) {
  if (inputs.size() != n) {
    throw DimensionError(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                         " inputs, got " + std::to_string(inputs.size()));
  }
}

[[noreturn]] inline void unknown_op(OpKind kind) {
  throw InputError("unknown op kind " + std::to_string(static_cast<int>(kind)));
}

}  // namespace detail

inline Tensor evaluate(OpKind kind, std::span<const Tensor* const> in, const OpAttrs& attrs) {
  using detail::require_arity;
  switch (kind) {
    case OpKind::Input:
    case OpKind::Param:
      throw InputError(std::string(op_name(kind)) + " is a leaf and cannot be evaluated");
    case OpKind::Gather:
      require_arity(kind, in, 1);
      return gather_rows(*in[0], attrs.ids);
    case OpKind::Add:
      require_arity(kind, in, 2);
      return add(*in[0], *in[1]);
    case OpKind::AddBias:
      require_arity(kind, in, 2);
      return add_bias(*in[0], *in[1]);
    case OpKind::MatMul:
      require_arity(kind, in, 2);
      return matmul(*in[0], *in[1]);
    case OpKind::Transpose:
      require_arity(kind, in, 1);
      return transpose(*in[0]);
    case OpKind::Scale:
      require_arity(kind, in, 1);
      return scale(*in[0], attrs.factor);
    case OpKind::SliceCols:
      require_arity(kind, in, 1);
      return slice_cols(*in[0], attrs.begin, attrs.width);
    case OpKind::ConcatCols:
      return concat_cols(in);
    case OpKind::Softmax:
      require_arity(kind, in, 1);
      return softmax(*in[0], in[0]->rank() - 1);
    case OpKind::Gelu:
      require_arity(kind, in, 1);
      return gelu(*in[0]);
    case OpKind::LayerNorm:
      require_arity(kind, in, 3);
      return layer_norm(*in[0], *in[1], *in[2]);
  }
  detail::unknown_op(kind);
}

/// Vector-Jacobian product: given the cotangent of the op's output, returns
/// one cotangent per input (same order and shapes as `in`).
inline std::vector<Tensor> vjp(OpKind kind, std::span<const Tensor* const> in, const Tensor& upstream,
                               const OpAttrs& attrs) {
  using detail::require_arity;
  switch (kind) {
    case OpKind::Input:
    case OpKind::Param:
      throw InputError(std::string(op_name(kind)) + " is a leaf and has no vjp");

    case OpKind::Gather: {
      require_arity(kind, in, 1);
      const Tensor& table = *in[0];
      const auto w = table.cols();
      std::vector<double> g(table.size(), 0.0);
      for (std::size_t r = 0; r < attrs.ids.size(); ++r)
        for (std::size_t j = 0; j < w; ++j) g[attrs.ids[r] * w + j] += upstream(r, j);
      return {Tensor(table.shape(), std::move(g))};
    }

    case OpKind::Add:
      require_arity(kind, in, 2);
      return {upstream, upstream};

    case OpKind::AddBias: {
      require_arity(kind, in, 2);
      const auto w = in[1]->size();
      std::vector<double> g(w, 0.0);
      for (std::size_t i = 0; i < upstream.size(); ++i) g[i % w] += upstream[i];
      return {upstream, Tensor(in[1]->shape(), std::move(g))};
    }

    case OpKind::MatMul:
      require_arity(kind, in, 2);
      return {matmul(upstream, transpose(*in[1])), matmul(transpose(*in[0]), upstream)};

    case OpKind::Transpose:
      require_arity(kind, in, 1);
      return {transpose(upstream)};

    case OpKind::Scale:
      require_arity(kind, in, 1);
      return {scale(upstream, attrs.factor)};

    case OpKind::SliceCols: {
      require_arity(kind, in, 1);
      const Tensor& x = *in[0];
      std::vector<double> g(x.size(), 0.0);
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < attrs.width; ++j) g[i * x.cols() + attrs.begin + j] = upstream(i, j);
      return {Tensor(x.shape(), std::move(g))};
    }

    case OpKind::ConcatCols: {
      std::vector<Tensor> out;
      std::size_t offset = 0;
      for (const Tensor* p : in) {
        out.push_back(slice_cols(upstream, offset, p->cols()));
        offset += p->cols();
      }
      return out;
    }

    case OpKind::Softmax: {
      require_arity(kind, in, 1);
      const Tensor p = softmax(*in[0], in[0]->rank() - 1);
      const auto w = p.shape().back();
      std::vector<double> g(p.size());
      for (std::size_t r = 0; r < p.size() / w; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < w; ++j) dot += upstream[r * w + j] * p[r * w + j];
        for (std::size_t j = 0; j < w; ++j) g[r * w + j] = p[r * w + j] * (upstream[r * w + j] - dot);
      }
      return {Tensor(p.shape(), std::move(g))};
    }

    case OpKind::Gelu: {
      require_arity(kind, in, 1);
      std::vector<double> g(upstream.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = upstream[i] * gelu_derivative((*in[0])[i]);
      return {Tensor(in[0]->shape(), std::move(g))};
    }

    case OpKind::LayerNorm: {
      require_arity(kind, in, 3);
      const Tensor& x = *in[0];
      const Tensor& gamma = *in[1];
      const auto w = x.shape().back();
      const auto inv_w = 1.0 / static_cast<double>(w);
      std::vector<double> gx(x.size()), gg(w, 0.0), gb(w, 0.0);
      std::vector<double> n(w), dn(w);
      for (std::size_t r = 0; r < x.size() / w; ++r) {
        auto row = x.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean *= inv_w;
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var *= inv_w;
        const double inv_sd = 1.0 / std::sqrt(var + kLayerNormEps);
        double mean_dn = 0.0, mean_dn_n = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
          const double u = upstream[r * w + j];
          n[j] = (row[j] - mean) * inv_sd;
          dn[j] = u * gamma[j];
          gg[j] += u * n[j];
          gb[j] += u;
          mean_dn += dn[j];
          mean_dn_n += dn[j] * n[j];
        }
        mean_dn *= inv_w;
        mean_dn_n *= inv_w;
        for (std::size_t j = 0; j < w; ++j) gx[r * w + j] = inv_sd * (dn[j] - mean_dn - n[j] * mean_dn_n);
      }
      return {Tensor(x.shape(), std::move(gx)), Tensor(gamma.shape(), std::move(gg)),
              Tensor(in[2]->shape(), std::move(gb))};
    }
  }
  detail::unknown_op(kind);
}

}  // namespace alft

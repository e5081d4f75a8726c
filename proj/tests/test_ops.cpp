#include <gtest/gtest.h>

#include <set>

#include "alft/ops.hpp"
#include "gradcheck.hpp"

using namespace alft;
using namespace alft::testing;

TEST(Vjp, MatmulWithIdentityUpstreamGivesTransposedOperands) {
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::matrix(2, 2, {5, 6, 7, 8});
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor* in[] = {&a, &b};
  const auto g = vjp(OpKind::MatMul, in, eye, {});
  EXPECT_EQ(g[0], transpose(b));
  EXPECT_EQ(g[1], transpose(a));
}

TEST(Vjp, SoftmaxAnnihilatesConstantCotangentAtUniformInput) {
  const Tensor x = Tensor::zeros({2, 4});
  const Tensor* in[] = {&x};
  const auto g = vjp(OpKind::Softmax, in, Tensor::filled({2, 4}, 3.0), {});
  for (double v : g[0].data()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Vjp, EveryOpMatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& c : all_op_cases(seed)) {
      const double err = op_gradcheck(c.kind, c.inputs, c.attrs, seed + 100, c.check);
      EXPECT_LT(err, 1e-4) << op_name(c.kind) << " seed " << seed;
    }
  }
}

TEST(Vjp, CoversEveryNonLeafOpKind) {
  std::set<OpKind> seen;
  for (const auto& c : all_op_cases(0)) seen.insert(c.kind);
  EXPECT_EQ(seen.size(), kOpKindCount - 2);
}

TEST(Vjp, UnknownOpKindThrows) {
  const Tensor x = Tensor::zeros({1, 1});
  const Tensor* in[] = {&x};
  EXPECT_THROW(vjp(static_cast<OpKind>(99), in, x, {}), InputError);
  EXPECT_THROW(evaluate(static_cast<OpKind>(99), in, {}), InputError);
}

TEST(Vjp, LeavesHaveNoVjp) {
  const Tensor x = Tensor::zeros({1, 1});
  const Tensor* in[] = {&x};
  EXPECT_THROW(vjp(OpKind::Param, in, x, {}), InputError);
  EXPECT_THROW(evaluate(OpKind::Input, in, {}), InputError);
}

TEST(Vjp, ArityIsChecked) {
  const Tensor x = Tensor::zeros({2, 2});
  const Tensor* in[] = {&x};
  EXPECT_THROW(evaluate(OpKind::MatMul, in, {}), DimensionError);
}

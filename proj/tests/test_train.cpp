#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace alft;
using namespace alft::testing;

TEST(TrainingTarget, NullExamplesTargetCls) {
  auto ex = random_example(40, 10, 1);
  ex.answerable = false;
  EXPECT_EQ(training_target(ex), (TokenSpan{0, 0}));
  ex.answerable = true;
  EXPECT_THROW(training_target(ex), InputError);
  ex.gold = TokenSpan{5, 6};
  EXPECT_EQ(training_target(ex), (TokenSpan{5, 6}));
}

TEST(TrainToy, ZeroLearningRateLeavesInitUnchanged) {
  const auto set = toy_set();
  const Weights trained = train_toy(set.config, {set.examples[0]}, 3, 0.0);
  const Weights init = init_weights(set.config);
  const auto a = trained.params(), b = init.params();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
}

TEST(TrainToy, OverfitsSingleExample) {
  const auto set = toy_set();
  const auto& ex = set.examples[0];
  const Weights w = train_toy(set.config, {ex}, 200, 0.5);
  const auto p = predict_span(forward(w, ex), ex);
  EXPECT_FALSE(p.is_null);
  EXPECT_EQ(p.start, ex.gold->start);
  EXPECT_EQ(p.end, ex.gold->end);
}

TEST(TrainToy, LossIsNonIncreasingAfterWarmup) {
  const auto set = toy_set();
  std::vector<double> losses;
  train_toy(set.config, set.examples, 80, 1e-3, &losses);
  ASSERT_EQ(losses.size(), 80u);
  for (std::size_t i = 6; i < losses.size(); ++i) EXPECT_LE(losses[i], losses[i - 1]) << "epoch " << i;
  EXPECT_LT(losses.back(), 0.7 * losses.front());
}

TEST(TrainToy, Deterministic) {
  const auto set = toy_set();
  const Weights a = train_toy(set.config, set.examples, 5, 0.5);
  const Weights b = train_toy(set.config, set.examples, 5, 0.5);
  EXPECT_EQ(a.span_w, b.span_w);
  EXPECT_EQ(a.token_embedding, b.token_embedding);
}

TEST(TrainToy, RejectsEmptyAndUnlabelled) {
  const auto set = toy_set();
  EXPECT_THROW(train_toy(set.config, {}, 1, 0.1), InputError);
  auto ex = set.examples[0];
  ex.gold.reset();
  EXPECT_THROW(train_toy(set.config, {ex}, 1, 0.1), InputError);
}

TEST(LossGradient, MatchesCentralDifferencesOnOneLayerModel) {
  ModelConfig c = small_config(20, 16);
  c.num_layers = 1;
  c.hidden_dim = 8;
  c.ffn_dim = 12;
  const Weights w = random_weights(c, 2, 0.3);
  auto ex = random_example(20, 9, 2);
  ex.gold = TokenSpan{5, 6};
  const auto lg = loss_gradient(w, ex);
  auto loss_at = [&](const Weights& v) { return span_loss(forward(v, ex), {5, 6}); };
  double worst = 0.0;
  const auto names = w.param_names();
  for (std::size_t p = 0; p < lg.grads.size(); ++p) {
    for (std::size_t i = 0; i < lg.grads[p].size(); ++i) {
      Weights plus = w, minus = w;
      auto& tp = *plus.params()[p];
      auto& tm = *minus.params()[p];
      tp = with_entry(tp, i, tp[i] + kFdStep);
      tm = with_entry(tm, i, tm[i] - kFdStep);
      const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * kFdStep);
      const double err = relative_error(lg.grads[p][i], fd);
      worst = std::max(worst, err);
      ASSERT_LT(err, 1e-4) << names[p] << "[" << i << "]";
    }
  }
  EXPECT_LT(worst, 1e-4);
}

#include <gtest/gtest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace alft;
using namespace alft::testing;

namespace {

const TargetKind kAllTargets[] = {TargetKind::Start, TargetKind::End, TargetKind::Combined};

// Coefficients of the affine map embedding -> target logit, probed one
// coordinate at a time.
Tensor probe_effective_weights(const Weights& w, std::size_t n, const Target& t) {
  const std::size_t d = w.config.hidden_dim;
  const double base = target_logit(forward_embedded(w, Tensor::zeros({n, d})), t);
  std::vector<double> coef(n * d);
  for (std::size_t k = 0; k < n * d; ++k) {
    auto e = Tensor::zeros({n, d});
    e = with_entry(e, k, 1.0);
    coef[k] = target_logit(forward_embedded(w, e), t) - base;
  }
  return Tensor({n, d}, std::move(coef));
}

}  // namespace

TEST(MakeReference, MasksContentTokensOnly) {
  const auto ex = assemble_example({10}, {"a"}, {11}, {"b"});
  const auto ref = make_reference(ex);
  EXPECT_EQ(ref.strategy, "mask-non-special");
  EXPECT_EQ(ref.example.ids, (std::vector<std::size_t>{kClsId, kMaskId, kSepId, kMaskId, kSepId}));
  EXPECT_EQ(ref.example.segments, ex.segments);
  EXPECT_EQ(ref.example.question_sep, ex.question_sep);
}

TEST(MakeReference, AllSpecialInputIsFixedPoint) {
  const auto ex = assemble_example({}, {}, {}, {});
  EXPECT_EQ(make_reference(ex).example.ids, ex.ids);
}

TEST(MakeReference, Idempotent) {
  const auto ex = random_example(40, 15, 3);
  const auto once = make_reference(ex).example;
  EXPECT_EQ(make_reference(once).example.ids, once.ids);
}

TEST(DeepLift, ZeroDeltaGivesExactZeros) {
  const Weights w = random_weights(small_config(), 1);
  const auto ex = make_reference(random_example(40, 12, 1)).example;
  const auto r = deeplift(w, ex, make_reference(ex), {TargetKind::Combined, 5, 6});
  EXPECT_EQ(r.delta(), 0.0);
  for (const auto& layer : r.layers)
    for (double s : layer.scores) EXPECT_EQ(s, 0.0);
}

TEST(DeepLift, CompletenessAtEveryCutOnRandomTwoLayerModels) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Weights w = random_weights(small_config(), seed);
    const auto ex = random_example(40, 12, seed);
    const auto ref = make_reference(ex);
    for (auto kind : kAllTargets) {
      const auto r = deeplift(w, ex, ref, {kind, 6, 8});
      ASSERT_EQ(r.layers.size(), 3u);
      for (std::size_t l = 0; l < r.layers.size(); ++l) {
        EXPECT_LE(completeness_gap(r, l), completeness_tolerance(r))
            << "seed " << seed << " target " << target_name(kind) << " cut " << l;
      }
      EXPECT_TRUE(is_complete(r));
    }
  }
}

TEST(DeepLift, PositiveAndNegativeMassesSplitScoresExactly) {
  const Weights w = random_weights(small_config(), 2);
  const auto ex = random_example(40, 16, 2);
  const auto r = deeplift(w, ex, make_reference(ex), {TargetKind::Combined, 7, 9});
  for (const auto& layer : r.layers) {
    for (std::size_t t = 0; t < layer.scores.size(); ++t) {
      EXPECT_GE(layer.pos[t], 0.0);
      EXPECT_LE(layer.neg[t], 0.0);
      EXPECT_EQ(layer.scores[t], layer.pos[t] + layer.neg[t]);
    }
  }
}

TEST(DeepLift, CombinedIsSumOfStartAndEnd) {
  const Weights w = random_weights(small_config(), 3);
  const auto ex = random_example(40, 14, 3);
  const auto ref = make_reference(ex);
  const auto s = deeplift(w, ex, ref, {TargetKind::Start, 6, 9});
  const auto e = deeplift(w, ex, ref, {TargetKind::End, 6, 9});
  const auto c = deeplift(w, ex, ref, {TargetKind::Combined, 6, 9});
  for (std::size_t l = 0; l < c.layers.size(); ++l)
    for (std::size_t t = 0; t < ex.size(); ++t)
      EXPECT_NEAR(c.layers[l].scores[t], s.layers[l].scores[t] + e.layers[l].scores[t], 1e-12);
}

TEST(DeepLift, LinearModelMatchesEffectiveWeights) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Weights w = linear_weights(seed);
    const auto ex = random_example(40, 12, seed);
    const auto ref = make_reference(ex);
    const Target t{TargetKind::Combined, 6, 8};
    const Tensor weff = probe_effective_weights(w, ex.size(), t);
    const Tensor delta = subtract(embed(w, ex), embed(w, ref.example));
    const auto r = deeplift(w, ex, ref, t);
    EXPECT_LT(max_abs_diff(r.input_contributions, hadamard(weff, delta)), 1e-10);
  }
}

TEST(DeepLift, LinearModelAgreesWithGradientMethods) {
  const Weights w = linear_weights(4);
  const auto ex = random_example(40, 12, 4);
  const auto ref = make_reference(ex);
  const Target t{TargetKind::Combined, 7, 9};
  const auto dl = deeplift(w, ex, ref, t).input_scores();
  const auto gi = gradient_input(w, ex, ref, t);
  for (std::size_t steps : {1u, 7u, 64u}) {
    const auto ig = integrated_gradients(w, ex, ref, t, steps);
    for (std::size_t k = 0; k < dl.size(); ++k) EXPECT_NEAR(ig[k], dl[k], 1e-10) << "steps " << steps;
  }
  for (std::size_t k = 0; k < dl.size(); ++k) EXPECT_NEAR(gi[k], dl[k], 1e-10);
}

TEST(DeepLift, BiasShiftLeavesContributionsUnchanged) {
  const Weights w = linear_weights(5);
  Weights shifted = w;
  const auto names = shifted.param_names();
  auto ps = shifted.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto dot = names[i].rfind('.');
    const std::string leaf = dot == std::string::npos ? names[i] : names[i].substr(dot + 1);
    const bool bias = leaf == "span_b" || (leaf.size() == 2 && leaf[0] == 'b');
    if (bias) *ps[i] = add(*ps[i], Tensor::filled(ps[i]->shape(), 0.75));
  }
  const auto ex = random_example(40, 12, 5);
  const auto ref = make_reference(ex);
  const Target t{TargetKind::Combined, 6, 8};
  EXPECT_NE(target_logit(forward(w, ex), t), target_logit(forward(shifted, ex), t));
  const auto a = deeplift(w, ex, ref, t), b = deeplift(shifted, ex, ref, t);
  EXPECT_LT(max_abs_diff(a.input_contributions, b.input_contributions), 1e-12);
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    for (std::size_t k = 0; k < ex.size(); ++k) EXPECT_NEAR(a.layers[l].scores[k], b.layers[l].scores[k], 1e-12);
}

TEST(DeepLift, RunsTwoForwardsAndOneWalkAtAnyLength) {
  const Weights w = random_weights(small_config(), 6);
  for (std::size_t len : {8u, 24u, 48u}) {
    const auto ex = random_example(40, len, len);
    const auto ref = make_reference(ex);
    const auto before = instrument::snapshot();
    deeplift(w, ex, ref, {TargetKind::Combined, len / 2, len / 2 + 1});
    const auto after = instrument::snapshot();
    EXPECT_EQ(after.forward_passes - before.forward_passes, 2u);
    EXPECT_EQ(after.multiplier_walks - before.multiplier_walks, 1u);
    EXPECT_EQ(after.gradient_walks - before.gradient_walks, 0u);
  }
}

TEST(DeepLift, RejectsMismatchedInputs) {
  const Weights w = random_weights(small_config(), 7);
  const auto ex = random_example(40, 12, 7);
  const auto other = make_reference(random_example(40, 14, 7));
  EXPECT_THROW(deeplift(w, ex, other, {TargetKind::Start, 5, 5}), InputError);
  EXPECT_THROW(deeplift(w, ex, make_reference(ex), {TargetKind::Start, 12, 12}), InputError);
  const auto a = forward(w, ex), b = forward(w, random_example(40, 14, 7));
  EXPECT_THROW(multiplier_walk(a, b, target_seed(12, {TargetKind::Start, 5, 5})), ConfigError);
}

TEST(DeepLift, TrainedToyModelFocusesOnTheAnswer) {
  const auto set = toy_set();
  const Weights w = train_toy(set.config, set.examples, 300, 0.5);
  const auto& ex = set.examples[0];
  const auto span = predict_span(forward(w, ex), ex);
  ASSERT_FALSE(span.is_null);
  EXPECT_EQ(span.start, ex.gold->start);
  EXPECT_EQ(span.end, ex.gold->end);
  const auto r = deeplift(w, ex, make_reference(ex), target_from_prediction(span, TargetKind::Combined));
  EXPECT_TRUE(is_complete(r));
  const auto& top = r.layers.back().pos;
  const auto best = std::max_element(top.begin(), top.end()) - top.begin();
  EXPECT_GE(static_cast<std::size_t>(best), span.start);
  EXPECT_LE(static_cast<std::size_t>(best), span.end);
}

TEST(GradientInput, ZeroDeltaGivesZero) {
  const Weights w = random_weights(small_config(), 8);
  const auto ex = make_reference(random_example(40, 12, 8)).example;
  for (double s : gradient_input(w, ex, make_reference(ex), {TargetKind::Start, 5, 5})) EXPECT_EQ(s, 0.0);
}

TEST(GradientInput, MatchesDirectionalFiniteDifference) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Weights w = random_weights(small_config(), seed);
    const auto ex = random_example(40, 12, seed);
    const auto ref = make_reference(ex);
    const Target t{TargetKind::Combined, 6, 8};
    const auto gi = gradient_input(w, ex, ref, t);
    const Tensor h = embed(w, ex);
    const Tensor delta = subtract(h, embed(w, ref.example));
    const double eps = 1e-5;
    const double fd = (target_logit(forward_embedded(w, add(h, scale(delta, eps))), t) -
                       target_logit(forward_embedded(w, subtract(h, scale(delta, eps))), t)) /
                      (2.0 * eps);
    double total = 0.0;
    for (double s : gi) total += s;
    EXPECT_LT(relative_error(total, fd), 1e-4) << "seed " << seed;
  }
}

TEST(IntegratedGradients, OneStepIsMidpointGradient) {
  const Weights w = random_weights(small_config(), 9);
  const auto ex = random_example(40, 12, 9);
  const auto ref = make_reference(ex);
  const Target t{TargetKind::End, 6, 7};
  const Tensor h = embed(w, ex), hr = embed(w, ref.example);
  const Tensor delta = subtract(h, hr);
  const Tensor g = embedding_gradient(w, add(hr, scale(delta, 0.5)), t);
  const auto ig = integrated_gradients(w, ex, ref, t, 1);
  for (std::size_t r = 0; r < ex.size(); ++r) {
    double s = 0.0;
    for (std::size_t d = 0; d < h.cols(); ++d) s += g(r, d) * delta(r, d);
    EXPECT_NEAR(ig[r], s, 1e-14);
  }
}

TEST(IntegratedGradients, NearlyCompleteAt512Steps) {
  const Weights w = random_weights(small_config(), 10);
  const auto ex = random_example(40, 12, 10);
  const auto ref = make_reference(ex);
  const Target t{TargetKind::Combined, 6, 8};
  const auto ig = integrated_gradients(w, ex, ref, t, 512);
  double total = 0.0;
  for (double s : ig) total += s;
  const double delta = target_logit(forward(w, ex), t) - target_logit(forward(w, ref.example), t);
  EXPECT_LE(std::abs(total - delta), 1e-3 * std::abs(delta));
}

TEST(IntegratedGradients, RejectsZeroSteps) {
  const Weights w = random_weights(small_config(), 11);
  const auto ex = random_example(40, 12, 11);
  EXPECT_THROW(integrated_gradients(w, ex, make_reference(ex), {TargetKind::Start, 5, 5}, 0), InputError);
}

TEST(Occlusion, MaskTokenInInputScoresZero) {
  const Weights w = random_weights(small_config(), 12);
  auto ex = random_example(40, 12, 12);
  ex.ids[6] = kMaskId;
  const auto s = occlusion(w, ex, {TargetKind::Combined, 7, 8});
  EXPECT_EQ(s[6], 0.0);
  for (auto p : ex.special_positions()) EXPECT_EQ(s[p], 0.0);
}

TEST(Occlusion, SingleDependencyModelReadsOnlyPositionThree) {
  const Weights w = single_dependency_weights(13);
  const auto ex = random_example(40, 12, 13, 4);
  const auto s = occlusion(w, ex, {TargetKind::Start, 3, 3});
  for (std::size_t t = 0; t < ex.size(); ++t) {
    if (t == 3) EXPECT_NE(s[t], 0.0);
    else EXPECT_EQ(s[t], 0.0) << "position " << t;
  }
}

TEST(Occlusion, OnePassPerNonSpecialTokenPlusBaseline) {
  const Weights w = random_weights(small_config(), 14);
  for (std::size_t len : {5u, 12u, 30u}) {
    const auto ex = random_example(40, len, len);
    const auto before = instrument::snapshot().forward_passes;
    occlusion(w, ex, {TargetKind::Start, 3, 3});
    EXPECT_EQ(instrument::snapshot().forward_passes - before, 1 + len - ex.special_positions().size());
  }
}

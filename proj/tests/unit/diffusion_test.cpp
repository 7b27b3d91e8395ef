#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "test_support.hpp"
#include "voxdiff/diffusion.hpp"
#include "voxdiff/error.hpp"
#include "voxdiff/unet.hpp"

using namespace voxdiff;

TEST(Schedule, LinearEndpointsAndProducts) {
  const auto s = make_linear_schedule({});
  ASSERT_EQ(s.T(), 50);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-3);
  EXPECT_NEAR(s.beta(50), 0.2, 1e-15);
  double prod = 1.0;
  for (int t = 1; t <= 50; ++t) {
    prod *= 1.0 - s.beta(t);
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-15);
    EXPECT_DOUBLE_EQ(s.alpha(t), 1.0 - s.beta(t));
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  // Close enough to pure noise at T for the N(0, I) start of the sampler.
  EXPECT_GT(s.alpha_bar(50), 0.0);
  EXPECT_LT(s.alpha_bar(50), 0.01);
  const auto paper = make_linear_schedule(DiffusionConfig::paper_scale());
  EXPECT_EQ(paper.T(), 1000);
  EXPECT_DOUBLE_EQ(paper.beta(1), 1e-4);
  EXPECT_NEAR(paper.beta(1000), 0.02, 1e-15);
  EXPECT_LT(paper.alpha_bar(1000), 1e-4);
}

TEST(Schedule, UnscaledBetasLeaveSignalAtFiftySteps) {
  // Linear 1e-4 .. 0.02 over 50 steps: abar_50 = prod(1 - beta_t), about 0.603.
  const auto s = make_linear_schedule({50, 1e-4, 0.02});
  double prod = 1.0;
  for (int i = 0; i < 50; ++i) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 49.0);
  EXPECT_NEAR(s.alpha_bar(50), prod, 1e-12);
  EXPECT_GT(s.alpha_bar(50), 0.6);
  for (int t = 1; t <= 50; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
}

TEST(Schedule, TwoStepHandValues) {
  // beta = 0.1 twice: abar = 0.9, 0.81; beta_tilde_2 = (1 - 0.9) / (1 - 0.81) * 0.1 = 1/19.
  const auto s = NoiseSchedule::from_betas({0.1, 0.1});
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), 0.81, 1e-15);
  EXPECT_EQ(s.beta_tilde(1), 0.0);
  EXPECT_NEAR(s.beta_tilde(2), 0.0526315789473684, 1e-15);
}

TEST(Schedule, PosteriorVarianceBounds) {
  for (const auto& cfg : {DiffusionConfig::desk_scale(), DiffusionConfig::paper_scale()}) {
    const auto s = make_linear_schedule(cfg);
    EXPECT_EQ(s.beta_tilde(1), 0.0);
    for (int t = 1; t <= s.T(); ++t) {
      EXPECT_LE(s.beta_tilde(t), s.beta(t));
      EXPECT_GE(s.beta_tilde(t), 0.0);
    }
  }
}

TEST(Schedule, SingleStepScheduleIsAllowedDirectly) {
  const auto s = NoiseSchedule::from_betas({0.5});
  EXPECT_EQ(s.T(), 1);
  EXPECT_EQ(s.beta_tilde(1), 0.0);
}

TEST(Schedule, Validation) {
  DiffusionConfig c;
  c.T = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.beta_end = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.beta_start = c.beta_end + 0.01;  // start above end
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(NoiseSchedule::from_betas({}), ConfigError);
  EXPECT_THROW(NoiseSchedule::from_betas({0.1, 1.0}), ConfigError);
  const auto s = make_linear_schedule({});
  EXPECT_THROW(static_cast<void>(s.beta(0)), IndexError);
  EXPECT_THROW(static_cast<void>(s.beta(51)), IndexError);
}

TEST(QSample, ClosedFormAndStepErrors) {
  const auto s = make_linear_schedule({});
  const std::vector<double> x0{0.2, -0.4, 1.0};
  const std::vector<double> eps{1.0, 0.5, -2.0};
  const auto xt = q_sample<double>(x0, 25, eps, s);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(xt[i], std::sqrt(s.alpha_bar(25)) * x0[i] + std::sqrt(1 - s.alpha_bar(25)) * eps[i], 1e-15);
  }
  EXPECT_THROW(q_sample<double>(x0, 0, eps, s), IndexError);
  EXPECT_THROW(q_sample<double>(x0, 51, eps, s), IndexError);
  EXPECT_THROW(q_sample<double>(x0, 1, std::vector<double>{1.0}, s), ShapeError);
}

TEST(Posterior, MeanMatchesTwoCoefficientForm) {
  // mu = c0 * x0_hat + ct * x_t with x0_hat recovered from eps_hat.
  const auto s = make_linear_schedule({});
  SeededRng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int t = static_cast<int>(rng.uniform_int(1, 50));
    const auto xt = vtest::random_values(16, rng, -3, 3);
    const auto eh = vtest::random_values(16, rng, -3, 3);
    const auto mu = posterior_mean<double>(xt, t, eh, s);
    const auto oracle = vtest::two_coefficient_mean(xt, t, eh, s);
    for (std::size_t i = 0; i < 16; ++i) ASSERT_NEAR(mu[i], oracle[i], 1e-10);
  }
}

TEST(Posterior, StepAtOneIgnoresNoise) {
  const auto s = make_linear_schedule({});
  const std::vector<double> xt{0.3, 0.1}, eh{0.2, -0.2}, z{5.0, 5.0};
  EXPECT_EQ(posterior_step<double>(xt, 1, eh, z, s), posterior_mean<double>(xt, 1, eh, s));
  const auto two = posterior_step<double>(xt, 2, eh, z, s);
  const auto mean = posterior_mean<double>(xt, 2, eh, s);
  EXPECT_NEAR(two[0] - mean[0], std::sqrt(s.beta_tilde(2)) * 5.0, 1e-15);
}

TEST(Chain, OracleDenoiserRecoversX0) {
  // With the true noise fed back and z = 0, the T = 5 chain walks back to x0.
  const auto s = make_linear_schedule({5, 1e-4, 0.02});
  SeededRng rng(3);
  const auto x0 = vtest::random_values(64, rng, 0, 1);
  const auto eps = vtest::random_values(64, rng, -2, 2);
  auto x = q_sample<double>(x0, 5, eps, s);
  const std::vector<double> zero(64, 0.0);
  for (int t = 5; t >= 1; --t) {
    std::vector<double> eps_t(64);
    for (std::size_t i = 0; i < 64; ++i) eps_t[i] = (x[i] - std::sqrt(s.alpha_bar(t)) * x0[i]) / std::sqrt(1 - s.alpha_bar(t));
    x = posterior_step<double>(x, t, eps_t, zero, s);
  }
  double err = 0;
  for (std::size_t i = 0; i < 64; ++i) err = std::max(err, std::abs(x[i] - x0[i]));
  EXPECT_LE(err, 1e-3);
}

TEST(Chain, SampleIsClampedAndSeedDeterministic) {
  const auto s = make_linear_schedule({6, 1e-4, 0.02});
  // A denoiser that predicts zero noise leaves the chain near a scaled x_T,
  // well outside [0, 1], which exercises the clamp.
  auto zero_net = [](const ad::Var<double>& x, const ad::Var<double>&, std::span<const int>) {
    return ad::constant<double>(x->shape, 0.0);
  };
  auto y = ad::constant<double>({1, 1, 4, 4, 4}, 0.5);
  SeededRng a(9), b(9);
  const auto xa = sample_chain<double>(zero_net, y, s, a);
  const auto xb = sample_chain<double>(zero_net, y, s, b);
  EXPECT_EQ(xa, xb);
  for (double v : xa) {
    ASSERT_GE(v, kChainClampLo);
    ASSERT_LE(v, kChainClampHi);
  }
}

TEST(TrainingLoss, MatchesHandComputedObjective) {
  const auto s = make_linear_schedule({});
  const ad::Shape shape{2, 1, 2, 1, 1};
  auto x0 = ad::constant<double>(shape, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  auto y = ad::constant<double>(shape, 0.0);
  // Identity "network": predicts eps_hat = x_t.
  auto ident = [](const ad::Var<double>& x, const ad::Var<double>&, std::span<const int>) { return x; };
  const std::vector<int> t{3, 40};
  const std::vector<double> eps{1.0, -1.0, 0.5, 2.0};
  const auto loss = training_loss_at<double>(ident, x0, y, t, eps, s);
  double expect = 0;
  for (int i = 0; i < 4; ++i) {
    const int step = t[static_cast<std::size_t>(i / 2)];
    const double xt = std::sqrt(s.alpha_bar(step)) * x0->value[static_cast<std::size_t>(i)] +
                      std::sqrt(1 - s.alpha_bar(step)) * eps[static_cast<std::size_t>(i)];
    expect += (xt - eps[static_cast<std::size_t>(i)]) * (xt - eps[static_cast<std::size_t>(i)]);
  }
  EXPECT_NEAR(loss->value[0], expect / 4, 1e-14);
  const std::vector<int> bad{0, 1};
  EXPECT_THROW(training_loss_at<double>(ident, x0, y, bad, eps, s), IndexError);
}

TEST(Synthesize, ShapeGateAndDeterminism) {
  SeededRng init(1);
  const auto net = build_unet({}, init);
  const auto s = make_linear_schedule({4, 1e-4, 0.02});
  const Volume3D bad({16, 16, 8}, {}, std::vector<float>(16 * 16 * 8, 0.5f));
  SeededRng r(1);
  EXPECT_THROW(synthesize(net, bad, s, r), ShapeError);
  SeededRng vr(2);
  const auto cond = vtest::random_volume({16, 16, 16}, vr);
  SeededRng a(5), b(5);
  const auto va = synthesize(net, cond, s, a);
  const auto vb = synthesize(net, cond, s, b);
  EXPECT_TRUE(std::ranges::equal(va.data(), vb.data()));
  for (float v : va.data()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

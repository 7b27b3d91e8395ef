#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_support.hpp"
#include "voxdiff/error.hpp"
#include "voxdiff/optimizer.hpp"

using namespace voxdiff;

namespace {

ParameterStore<double> scalar_store(double w) {
  ParameterStore<double> p;
  p.add("w", {1, 1}, {1}, {w});
  return p;
}

}  // namespace

TEST(Adam, FirstStepIsUnitStepTimesLr) {
  auto p = scalar_store(0.0);
  OptimizerState<double> st;
  AdamConfig cfg;
  cfg.lr = 0.1;
  p.get("w")->grad = {1.0};
  adam_step(p, st, cfg);
  EXPECT_NEAR(p.get("w")->value[0], -0.1, 1e-9);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, HandRolledSecondStep) {
  auto p = scalar_store(0.5);
  OptimizerState<double> st;
  AdamConfig cfg;
  cfg.lr = 0.01;
  double m = 0, v = 0, w = 0.5;
  for (int step = 1; step <= 3; ++step) {
    const double g = 0.3 * step - 0.2;
    p.get("w")->grad = {g};
    adam_step(p, st, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.01 * (m / (1 - std::pow(0.9, step))) / (std::sqrt(v / (1 - std::pow(0.999, step))) + 1e-8);
    EXPECT_NEAR(p.get("w")->value[0], w, 1e-14);
  }
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  auto p = scalar_store(1.25);
  OptimizerState<double> st;
  for (int i = 0; i < 10; ++i) {
    p.get("w")->grad = {0.0};
    adam_step(p, st, {});
  }
  EXPECT_EQ(p.get("w")->value[0], 1.25);
  EXPECT_EQ(st.step, 10);
}

TEST(Adam, QuadraticBowlConverges) {
  auto p = scalar_store(1.0);
  OptimizerState<double> st;
  AdamConfig cfg;
  cfg.lr = 0.05;
  for (int i = 0; i < 500; ++i) {
    const double w = p.get("w")->value[0];
    p.get("w")->grad = {2.0 * w};
    adam_step(p, st, cfg);
  }
  EXPECT_LT(std::abs(p.get("w")->value[0]), 1e-3);
}

TEST(Adam, NonFiniteGradientLeavesStateUntouched) {
  auto p = scalar_store(2.0);
  p.add("z", {1, 2}, {2}, {0.0, 0.0});
  OptimizerState<double> st;
  p.get("w")->grad = {1.0};
  p.get("z")->grad = {0.0, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(adam_step(p, st, {}), NonFiniteGradient);
  EXPECT_EQ(p.get("w")->value[0], 2.0);
  EXPECT_EQ(st.step, 0);
  p.get("z")->grad = {std::numeric_limits<double>::infinity(), 0.0};
  try {
    adam_step(p, st, {});
    FAIL();
  } catch (const NonFiniteGradient& e) {
    EXPECT_NE(std::string(e.what()).find("z"), std::string::npos);
  }
}

TEST(Adam, ClippingBoundsGlobalNorm) {
  // Clipping rescales the gradient but the first Adam step is scale-free, so
  // compare moments instead of parameters.
  auto p = scalar_store(0.0);
  p.add("v", {1, 1}, {1}, {0.0});
  OptimizerState<double> st;
  p.get("w")->grad = {30.0};
  p.get("v")->grad = {40.0};
  EXPECT_DOUBLE_EQ(global_grad_norm(p), 50.0);
  adam_step(p, st, {}, 1.0);
  EXPECT_NEAR(st.m["w"][0], 0.1 * 0.6, 1e-15);
  EXPECT_NEAR(st.m["v"][0], 0.1 * 0.8, 1e-15);
}

TEST(Adam, StateRecordsRoundTripBitExact) {
  SeededRng rng(2);
  ParameterStore<float> p;
  p.add("a", {1, 3}, {3}, {0, 0, 0});
  p.add("b", {2, 2}, {2, 2}, {0, 0, 0, 0});
  OptimizerState<float> st;
  for (int i = 0; i < 3; ++i) {
    for (const auto& [n, e] : p.entries()) {
      e.var->grad.assign(e.var->numel(), 0.0f);
      for (auto& g : e.var->grad) g = static_cast<float>(rng.normal());
    }
    adam_step(p, st, {});
  }
  vtest::TempDir tmp("opt");
  write_prm(tmp.path() / "o.prm", st.to_records(p));
  OptimizerState<float> back;
  back.assign_from(read_prm(tmp.path() / "o.prm"), p);
  back.step = st.step;
  EXPECT_EQ(back, st);

  ParameterStore<float> other;
  other.add("a", {1, 4}, {4}, {0, 0, 0, 0});
  other.add("b", {2, 2}, {2, 2}, {0, 0, 0, 0});
  EXPECT_THROW(back.assign_from(st.to_records(p), other), CheckpointMismatch);
}

TEST(AdamConfig, Validation) {
  AdamConfig c;
  c.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.eps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sta/autodiff/ops.hpp"
#include "sta/losses.hpp"
#include "sta/risk_head.hpp"

using namespace sta;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

HazardOutput with(double beta0, double inc) {
  HazardOutput out;
  out.beta0 = beta0;
  double s = beta0;
  for (std::size_t k = 0; k < kHorizons; ++k) {
    out.increments[k] = inc;
    s += inc;
    out.cumulative_risks[k] = sigmoid(s);
  }
  return out;
}

}  // namespace

TEST(Hazard, ZeroRawOutputs) {
  const std::array<double, 6> raw{};
  const auto out = hazard_from_raw(raw);
  EXPECT_EQ(out.beta0, 0.0);
  for (double inc : out.increments) EXPECT_NEAR(inc, std::log(2.0), 1e-15);
  EXPECT_NEAR(cumulative_risk(out, 1), 2.0 / 3.0, 1e-15);
}

TEST(Hazard, ClosedFormCumulativeRisks) {
  EXPECT_DOUBLE_EQ(cumulative_risk(with(0.7, 0.0), 5), sigmoid(0.7));
  EXPECT_DOUBLE_EQ(cumulative_risk(with(0.0, 1.0), 3), sigmoid(3.0));
}

TEST(Hazard, HorizonOutOfRange) {
  const auto out = with(0, 0);
  EXPECT_THROW(cumulative_risk(out, 0), std::out_of_range);
  EXPECT_THROW(cumulative_risk(out, 6), std::out_of_range);
}

TEST(Hazard, VeryNegativeInterceptGivesNegligibleRisk) {
  std::array<double, 6> raw{-30, -5, -5, -5, -5, -5};
  const auto out = hazard_from_raw(raw);
  for (int k = 1; k <= 5; ++k) {
    EXPECT_LT(cumulative_risk(out, k), 1e-12);
    EXPECT_GT(cumulative_risk(out, k), 0.0);
  }
}

TEST(Hazard, MonotoneOverRandomDraws) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int n = 0; n < 10000; ++n) {
    std::array<double, 6> raw;
    for (auto& r : raw) r = g(rng);
    const auto out = hazard_from_raw(raw);
    for (int k = 1; k <= 5; ++k) {
      EXPECT_GT(cumulative_risk(out, k), 0.0);
      EXPECT_LT(cumulative_risk(out, k), 1.0);
      if (k > 1) {
        ASSERT_GE(cumulative_risk(out, k), cumulative_risk(out, k - 1));
      }
    }
  }
}

TEST(Hazard, GraphAgreesWithClosedForm) {
  std::mt19937_64 rng(12);
  const auto params = RiskHeadParams::initialize(8, rng);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> h(3 * 8);
  for (auto& v : h) v = g(rng);
  const ad::Tensor ht({3, 8}, h);
  const auto graph = hazard_forward(params, ht);
  const auto outs = hazard_params(ht, params);
  ASSERT_EQ(outs.size(), 3u);
  for (std::size_t b = 0; b < 3; ++b) {
    std::array<double, 6> raw;
    for (std::size_t j = 0; j < 6; ++j) raw[j] = graph.raw[b * 6 + j];
    const auto ref = hazard_from_raw(raw);
    for (std::size_t k = 0; k < kHorizons; ++k) {
      EXPECT_NEAR(graph.risks[b * 5 + k], ref.cumulative_risks[k], 1e-14);
      EXPECT_NEAR(outs[b].cumulative_risks[k], ref.cumulative_risks[k], 1e-14);
    }
  }
}

TEST(Hazard, InterceptReceivesGradientFromAnyObservedHorizon) {
  std::mt19937_64 rng(13);
  auto params = RiskHeadParams::initialize(4, rng);
  const ad::Tensor h({1, 4}, {0.2, -0.1, 0.4, 0.3});
  // a control followed one year: only horizon 1 enters the loss
  for (const auto label : {OutcomeLabel::normal(1), OutcomeLabel::cancer(5), OutcomeLabel::cancer(1)}) {
    params.linear.bias.zero_grad();
    ad::Tape tape;
    const auto graph = hazard_forward(params, h);
    const OutcomeLabel labels[] = {label};
    reweighted_cross_entropy(graph.logits, labels, ClassWeights{0.5, 0.5}).backward();
    ASSERT_TRUE(params.linear.bias.has_grad());
    EXPECT_NE(params.linear.bias.grad()[0], 0.0);
  }
}

TEST(Hazard, SaturatedLogitsStayInsideTheUnitInterval) {
  const std::array<double, 6> high = {50, 5, 5, 5, 5, 5}, low = {-800, -5, -5, -5, -5, -5};
  const auto h = hazard_from_raw(high), l = hazard_from_raw(low);
  for (int k = 1; k <= 5; ++k) {
    EXPECT_LT(cumulative_risk(h, k), 1.0);
    EXPECT_GT(cumulative_risk(l, k), 0.0);
  }
  EXPECT_EQ(open_unit(0.25), 0.25);
}

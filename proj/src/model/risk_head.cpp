#include "sta/risk_head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "sta/autodiff/ops.hpp"

namespace sta {

using ad::Tensor;

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// [6, 5]: column k sums beta0 and the first k+1 increments.
Tensor cumulative_matrix() {
  std::vector<double> m((kHorizons + 1) * kHorizons, 0.0);
  for (std::size_t k = 0; k < kHorizons; ++k) {
    m[k] = 1.0;
    for (std::size_t j = 1; j <= k + 1; ++j) m[j * kHorizons + k] = 1.0;
  }
  return Tensor({kHorizons + 1, kHorizons}, std::move(m));
}

}  // namespace

double open_unit(double risk) {
  // sigmoid rounds to exactly 1 past a logit of about 37
  return std::clamp(risk, std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
}

RiskHeadParams RiskHeadParams::initialize(std::size_t d_model, std::mt19937_64& rng) {
  return {nn::Linear::initialize(d_model, kHorizons + 1, rng)};
}

void RiskHeadParams::collect(const std::string& prefix, nn::ParamRefs& out) {
  linear.collect(prefix + ".linear", out);
}

HazardGraph hazard_forward(const RiskHeadParams& params, const Tensor& h) {
  static const Tensor M = cumulative_matrix();
  const Tensor raw = nn::apply(params.linear, h);
  const int last = static_cast<int>(raw.dim()) - 1;
  const Tensor beta0 = ad::slice(raw, last, 0, 1);
  const Tensor inc = ad::softplus(ad::slice(raw, last, 1, kHorizons + 1));
  const Tensor logits = ad::matmul(ad::concat({beta0, inc}, last), M);
  return {raw, logits, ad::sigmoid(logits)};
}

HazardOutput hazard_from_raw(std::span<const double, kHorizons + 1> raw) {
  HazardOutput out;
  out.beta0 = raw[0];
  double logit = raw[0];
  for (std::size_t k = 0; k < kHorizons; ++k) {
    out.increments[k] = softplus(raw[k + 1]);
    logit += out.increments[k];
    out.cumulative_risks[k] = open_unit(sigmoid(logit));
  }
  return out;
}

std::vector<HazardOutput> hazard_params(const Tensor& h, const RiskHeadParams& params) {
  ad::NoGradGuard no_grad;
  const Tensor raw = nn::apply(params.linear, h);
  const auto& v = raw.values();
  std::vector<HazardOutput> out;
  for (std::size_t b = 0; b * (kHorizons + 1) < v.size(); ++b)
    out.push_back(hazard_from_raw(std::span<const double, kHorizons + 1>(v.data() + b * (kHorizons + 1),
                                                                          kHorizons + 1)));
  return out;
}

double cumulative_risk(const HazardOutput& out, int k) {
  if (k < 1 || k > static_cast<int>(kHorizons))
    throw std::out_of_range("cumulative_risk: horizon " + std::to_string(k) + " outside 1..5");
  return out.cumulative_risks[static_cast<std::size_t>(k - 1)];
}

}  // namespace sta

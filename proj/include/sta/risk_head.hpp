#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "sta/autodiff/tensor.hpp"
#include "sta/nn.hpp"

namespace sta {

inline constexpr std::size_t kHorizons = 5;

/// Additive hazard: risk(k) = sigmoid(beta0 + increments[0] + ... + increments[k-1]).
struct HazardOutput {
  double beta0 = 0.0;
  std::array<double, kHorizons> increments{};
  std::array<double, kHorizons> cumulative_risks{};
};

struct RiskHeadParams {
  nn::Linear linear;  // [d, 6]

  static RiskHeadParams initialize(std::size_t d_model, std::mt19937_64& rng);
  void collect(const std::string& prefix, nn::ParamRefs& out);
};

struct HazardGraph {
  ad::Tensor raw;     // [B, 6]
  ad::Tensor logits;  // [B, 5], cumulative logits
  ad::Tensor risks;   // [B, 5], raw sigmoid; may round to 0 or 1 at extreme logits
};

/// A saturated sigmoid value moved to the nearest double strictly inside (0, 1).
/// Monotone, and the identity everywhere else.
double open_unit(double risk);

/// Differentiable head over a batch of history embeddings h [B, d].
HazardGraph hazard_forward(const RiskHeadParams& params, const ad::Tensor& h);

/// Closed form from the 6 raw outputs (beta0, then 5 pre-softplus increments).
HazardOutput hazard_from_raw(std::span<const double, kHorizons + 1> raw);

/// Per-patient hazard outputs for h [B, d] or [d].
std::vector<HazardOutput> hazard_params(const ad::Tensor& h, const RiskHeadParams& params);

/// k in 1..5; throws std::out_of_range otherwise.
double cumulative_risk(const HazardOutput& out, int k);

}  // namespace sta

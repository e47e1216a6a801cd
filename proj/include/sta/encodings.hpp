#pragma once

#include <cstddef>
#include <random>
#include <string_view>
#include <vector>

#include "sta/autodiff/tensor.hpp"

namespace sta {

enum class Side { left, right };

std::string_view to_string(Side side);

/// Months between an exam and the reference ("present") exam: 12 * (exam - reference).
/// Non-positive; throws std::invalid_argument when the exam lies after the reference.
double relative_tau(double exam_year, double reference_year);

/// Continuous sinusoidal embedding of a month offset:
///   out[2i]   = sin(tau / 10000^(2i/d))
///   out[2i+1] = cos(tau / 10000^(2i/d))
/// Throws std::invalid_argument for odd or zero d.
std::vector<double> temporal_embedding(double tau_months, std::size_t d);

/// Learnable per-side vectors added to features so attention can tell the breasts apart.
struct SideEmbeddingTable {
  ad::Tensor left;   // [d_model]
  ad::Tensor right;  // [d_model]

  /// Zero-mean Gaussian init with standard deviation 0.02.
  static SideEmbeddingTable initialize(std::size_t d_model, std::mt19937_64& rng);
  /// Both vectors zero (used to switch side information off in tests).
  static SideEmbeddingTable zeros(std::size_t d_model);

  std::size_t dim() const { return left.numel(); }
  /// [2, d_model]: row 0 left, row 1 right. Differentiable w.r.t. both vectors.
  ad::Tensor stacked() const;
};

/// The vector for one side; repeated calls return the same storage.
const ad::Tensor& side_embedding(const SideEmbeddingTable& table, Side side);

}  // namespace sta

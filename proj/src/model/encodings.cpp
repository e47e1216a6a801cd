#include "sta/encodings.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sta/autodiff/ops.hpp"

namespace sta {

std::string_view to_string(Side side) { return side == Side::left ? "left" : "right"; }

double relative_tau(double exam_year, double reference_year) {
  if (exam_year > reference_year) {
    throw std::invalid_argument("relative_tau: exam year " + std::to_string(exam_year) +
                                " lies after reference year " + std::to_string(reference_year));
  }
  return 12.0 * (exam_year - reference_year);
}

std::vector<double> temporal_embedding(double tau_months, std::size_t d) {
  if (d == 0 || d % 2 != 0) {
    throw std::invalid_argument("temporal_embedding: dimension must be even and positive, got " +
                                std::to_string(d));
  }
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
    const double angle = tau_months / freq;
    out[2 * i] = std::sin(angle);
    out[2 * i + 1] = std::cos(angle);
  }
  return out;
}

SideEmbeddingTable SideEmbeddingTable::initialize(std::size_t d_model, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 0.02);
  std::vector<double> l(d_model), r(d_model);
  for (auto& v : l) v = normal(rng);
  for (auto& v : r) v = normal(rng);
  return {ad::Tensor::vector(std::move(l), true), ad::Tensor::vector(std::move(r), true)};
}

SideEmbeddingTable SideEmbeddingTable::zeros(std::size_t d_model) {
  return {ad::Tensor::zeros({d_model}, true), ad::Tensor::zeros({d_model}, true)};
}

ad::Tensor SideEmbeddingTable::stacked() const {
  const std::size_t d = dim();
  return ad::concat({ad::reshape(left, {1, d}), ad::reshape(right, {1, d})}, 0);
}

const ad::Tensor& side_embedding(const SideEmbeddingTable& table, Side side) {
  return side == Side::left ? table.left : table.right;
}

}  // namespace sta

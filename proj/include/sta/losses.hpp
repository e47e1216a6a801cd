#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "sta/autodiff/tensor.hpp"
#include "sta/risk_head.hpp"
#include "sta/temporal_encoder.hpp"

namespace sta {

struct AsymmetryMargins {
  double m1 = 1.0;        // cases: lower bound on mean cross-breast distance
  double m2 = 1.0;        // controls: upper bound on mean cross-breast distance
  double m1_prime = 1.0;  // cases: lower bound on mean exam-to-exam change
  double m2_prime = 1.0;  // controls: upper bound on mean exam-to-exam change
  double lambda = 0.01;

  /// Throws std::invalid_argument on a negative or non-finite field.
  void validate() const;
};

/// y = 1: cancer, diagnosed event_year years after the reference exam (1..5).
/// y = 0: normal, followed for followup_years (>= 1).
struct OutcomeLabel {
  int y = 0;
  int event_year = 0;
  int followup_years = 0;

  static OutcomeLabel cancer(int event_year) { return {1, event_year, 0}; }
  static OutcomeLabel normal(int followup_years) { return {0, 0, followup_years}; }
  /// Throws std::invalid_argument when the fields are inconsistent.
  void validate() const;
};

struct AsymmetryDistances {
  double d_bar = 0.0;      // mean over exams of |z_left - z_right|
  double delta_bar = 0.0;  // mean over sides and consecutive exams of |z(t) - z(t+1)|
  bool has_pairs = false;  // false for single-exam histories
};

AsymmetryDistances asymmetry_distances(std::span<const std::vector<double>> lefts,
                                       std::span<const std::vector<double>> rights);

/// Hinge loss. The two temporal terms are dropped when temporal_terms is false (T = 1).
double asymmetry_loss(double d_bar, double delta_bar, int y, const AsymmetryMargins& margins,
                      bool temporal_terms = true);
double asymmetry_loss(const AsymmetryDistances& d, int y, const AsymmetryMargins& margins);

struct ClassWeights {
  double positive = 1.0;
  double negative = 1.0;

  /// positive = N_neg / N, negative = N_pos / N over patient labels. Throws
  /// std::invalid_argument when either class is missing.
  static ClassWeights from_labels(std::span<const OutcomeLabel> labels);
};

/// 0/1 target per horizon and whether the horizon enters the loss.
struct HorizonTargets {
  std::array<double, kHorizons> target{};
  std::array<bool, kHorizons> observed{};
};
HorizonTargets horizon_targets(const OutcomeLabel& label);

/// Weighted binary cross-entropy averaged over observed horizons. Throws
/// std::domain_error for a risk outside (0, 1).
double reweighted_cross_entropy(std::span<const double, kHorizons> risks, const OutcomeLabel& label,
                                const ClassWeights& weights);

double total_loss(double primary, double asym, double lambda);

// Differentiable batch forms.

/// Batch mean of reweighted_cross_entropy, evaluated from cumulative logits [B, 5] for
/// numerical stability.
ad::Tensor reweighted_cross_entropy(const ad::Tensor& logits, std::span<const OutcomeLabel> labels,
                                    const ClassWeights& weights);

struct AsymmetryGraph {
  ad::Tensor loss;  // scalar, batch mean
  std::vector<AsymmetryDistances> distances;
};

/// Batch mean asymmetry loss over side features stored as rows of `features` [R, d].
AsymmetryGraph asymmetry_loss(const ad::Tensor& features, std::span<const PatientRows> patients,
                              std::span<const OutcomeLabel> labels,
                              const AsymmetryMargins& margins);

}  // namespace sta

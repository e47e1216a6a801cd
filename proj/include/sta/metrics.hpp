#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sta/losses.hpp"
#include "sta/risk_head.hpp"

namespace sta {

/// Mann-Whitney estimate: share of (positive, negative) pairs ranked correctly, ties 0.5.
/// Throws std::invalid_argument naming the missing class when one is absent.
double auc(std::span<const double> scores, std::span<const int> labels);

enum class HorizonLabel { positive, negative, excluded };

/// positive: cancer within k years; negative: normal followed >= k years; else excluded.
HorizonLabel horizon_label(const OutcomeLabel& label, int k);

/// AUC at horizon k over patients whose label is not excluded there.
double horizon_auc(std::span<const double> scores, std::span<const OutcomeLabel> labels, int k);

/// Concordance over comparable pairs (earlier event vs later event, or event vs control
/// followed at least that long). Throws std::invalid_argument without comparable pairs.
double c_index(std::span<const double> scores, std::span<const OutcomeLabel> labels);

struct Fold {
  std::vector<std::size_t> train;  // indices into the patient list
  std::vector<std::size_t> test;
};

/// Seeded, stratified by y: each test fold holds floor or ceil of its share of both classes.
/// Throws std::invalid_argument for k < 2 or k greater than the patient count.
std::vector<Fold> kfold_split(std::span<const OutcomeLabel> labels, std::size_t k,
                              std::uint64_t seed);

struct FoldMetrics {
  double c_index = 0.0;
  std::array<double, kHorizons> auc{};
};

struct MetricsReport {
  std::vector<FoldMetrics> folds;
  FoldMetrics mean;
  FoldMetrics stddev;  // sample standard deviation across folds (0 for one fold)

  static MetricsReport aggregate(std::vector<FoldMetrics> folds);
  std::string to_json() const;
  /// Aligned columns: C-index and the five horizon AUCs as mean +- std.
  std::string to_table(const std::string& title = "") const;
};

/// C-index (5-year risk) and per-horizon AUCs; a horizon lacking one class yields NaN.
FoldMetrics evaluate_risks(std::span<const std::array<double, kHorizons>> risks,
                           std::span<const OutcomeLabel> labels);

}  // namespace sta

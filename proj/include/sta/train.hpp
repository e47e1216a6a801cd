#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sta/cohort.hpp"
#include "sta/metrics.hpp"
#include "sta/model.hpp"

namespace sta {

/// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(nn::ParamRefs params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  /// Applies one update from the accumulated gradients, then clears them.
  void step();
  std::size_t steps() const { return t_; }

 private:
  nn::ParamRefs params_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 5e-5;
  std::uint64_t seed = 1;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double primary = 0.0;   // mean over batches
  double asymmetry = 0.0;
  double d_bar_cases = 0.0, d_bar_controls = 0.0;
  double delta_bar_cases = 0.0, delta_bar_controls = 0.0;
  double validation_auc1 = 0.0;
};

struct TrainResult {
  Model best;                 // parameters at the best validation epoch
  std::size_t best_epoch = 0; // 0 when no epoch finished
  double best_auc1 = -1.0;
  int selection_horizon = 1;  // horizon behind best_auc1, later only when the split lacks 1-year cases
  std::vector<EpochLog> log;
  bool diverged = false;      // a non-finite loss stopped training; best is the last good state
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Copies parameter values (fresh leaves, same names and shapes).
Model clone_model(const Model& model);

/// Minibatch training on `train`; after every epoch the 1-year AUC on `validation` (the earliest
/// scorable horizon if no 1-year case is there) selects the kept checkpoint. Throws
/// std::invalid_argument when `train` or `validation` misses a class.
TrainResult train_model(const ModelConfig& config, std::span<const PatientSeries> train,
                        std::span<const PatientSeries> validation, const TrainOptions& options,
                        const EpochCallback& on_epoch = {});
TrainResult train_model(const ModelConfig& config, std::span<const PatientSeries* const> train,
                        std::span<const PatientSeries* const> validation,
                        const TrainOptions& options, const EpochCallback& on_epoch = {});

}  // namespace sta

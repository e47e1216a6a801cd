#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sta/checkpoint.hpp"
#include "sta/cohort.hpp"
#include "sta/config.hpp"
#include "sta/metrics.hpp"
#include "sta/train.hpp"

namespace sta {

/// One finished epoch of one (config, fold, learning rate) run.
struct ProgressEvent {
  std::size_t config = 0;  // index into the configs passed in
  std::size_t fold = 0;
  double learning_rate = 0.0;
  EpochLog epoch;
};
using ProgressFn = std::function<void(const ProgressEvent&)>;

struct GridRun {
  std::size_t fold = 0;
  double learning_rate = 0.0;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_auc1 = 0.0;
  bool diverged = false;
};

struct CrossValidation {
  RunConfig config;
  std::vector<Fold> folds;
  std::vector<Checkpoint> best;  // per fold: highest validation 1-year AUC over grid and epochs
  std::vector<GridRun> runs;     // fold-major, then learning rate
  MetricsReport report;          // best checkpoints on their fold's test split
  bool diverged = false;
  double seconds = 0.0;
};

/// Patient-wise k-fold training of every config on the same folds (seeded by each config's
/// seed). All (config, fold, learning rate) runs share one worker pool of
/// configs[0].threads threads. Results do not depend on the thread count.
std::vector<CrossValidation> cross_validate(std::span<const RunConfig> configs,
                                            const Dataset& data, const ProgressFn& progress = {});
CrossValidation cross_validate(const RunConfig& config, const Dataset& data,
                               const ProgressFn& progress = {});

/// The six toggle rows, in table order: none, side, asy, side+asy, side+tmp, all.
std::vector<RunConfig> ablation_configs(const RunConfig& base);

/// Six rows of C-index and 1..5-year AUC (mean +- std).
std::string ablation_table(std::span<const CrossValidation> rows);

enum class EvalSplit { test, train };

/// Metrics of a checkpoint on its fold's test split (or its training split), rebuilt from the
/// checkpoint's config and the dataset. Throws DataError when the rebuilt split does not
/// match the checkpoint's training ids, and LeakageError for the training split unless
/// allow_train_eval is set.
FoldMetrics evaluate_checkpoint(const Checkpoint& checkpoint, const Dataset& data,
                                EvalSplit split = EvalSplit::test, bool allow_train_eval = false);

class LeakageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Initialization seed of one grid run.
std::uint64_t run_seed(std::uint64_t seed, std::size_t fold, std::size_t lr_index);

}  // namespace sta

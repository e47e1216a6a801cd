#pragma once

#include <cstddef>
#include <functional>

#include "sta/autodiff/tensor.hpp"

namespace sta::ad {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose one-sided slopes disagree, i.e. a kink lies within eps of the point.
  std::size_t skipped = 0;
};

/// Compares the reverse-mode gradient of a scalar function against central differences.
///
/// The relative error of a coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
/// A coordinate is skipped when its forward and backward one-sided slopes differ by more
/// than `kink_tolerance` (relative), since central differences are invalid across a kink.
/// Throws sta::TapeError when f does not return a single value, and std::invalid_argument
/// when eps is outside (0, 1e-3].
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps = 1e-5, double kink_tolerance = 1e-2);

}  // namespace sta::ad

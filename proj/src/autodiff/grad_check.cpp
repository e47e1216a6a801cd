#include "sta/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sta/error.hpp"

namespace sta::ad {

namespace {

double evaluate(const std::function<Tensor(const Tensor&)>& f, const Shape& shape,
                std::vector<double> values) {
  NoGradGuard no_grad;
  const Tensor out = f(Tensor(shape, std::move(values)));
  if (out.numel() != 1) throw TapeError("grad_check: function must return a single value");
  return out.item();
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps, double kink_tolerance) {
  if (!(eps > 0.0) || eps > 1e-3) throw std::invalid_argument("grad_check: eps must lie in (0, 1e-3]");

  const Shape shape = x.shape();
  const std::vector<double> base(x.values().begin(), x.values().end());

  std::vector<double> analytic;
  {
    Tape tape;
    Tensor leaf(shape, base, true);
    const Tensor out = f(leaf);
    if (out.numel() != 1) throw TapeError("grad_check: function must return a single value");
    out.backward();
    analytic = leaf.has_grad() ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                               : std::vector<double>(base.size(), 0.0);
  }

  GradCheckResult result;
  const double center = evaluate(f, shape, base);
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += eps;
    minus[i] -= eps;
    const double fp = evaluate(f, shape, std::move(plus));
    const double fm = evaluate(f, shape, std::move(minus));
    const double forward_slope = (fp - center) / eps;
    const double backward_slope = (center - fm) / eps;
    const double slope_scale = std::max({1.0, std::abs(forward_slope), std::abs(backward_slope)});
    if (std::abs(forward_slope - backward_slope) > kink_tolerance * slope_scale) {
      ++result.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    double err = std::abs(analytic[i] - numeric) / denom;
    if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
    result.max_relative_error = std::max(result.max_relative_error, err);
    ++result.checked;
  }
  return result;
}

}  // namespace sta::ad

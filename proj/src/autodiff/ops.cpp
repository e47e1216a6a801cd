#include "sta/autodiff/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "kernels.hpp"
#include "sta/error.hpp"

namespace sta::ad {

namespace {

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b,
                              std::string_view detail = {}) {
  std::string msg = std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                    to_string(b);
  if (!detail.empty()) msg += " (" + std::string(detail) + ")";
  throw ShapeError(msg);
}

[[noreturn]] void shape_error(std::string_view op, const Shape& a, std::string_view detail) {
  throw ShapeError(std::string(op) + ": invalid shape " + to_string(a) + " (" +
                   std::string(detail) + ")");
}

std::size_t norm_axis(std::string_view op, const Shape& s, int axis) {
  const int d = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + d : axis;
  if (a < 0 || a >= d) shape_error(op, s, "axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Visits a row-major traversal of `shape` whose axis i advances the source offset by
// stride[i]. body(out_offset, src_offset, run_length, src_step) gets one innermost run.
template <class F>
void strided_walk(const Shape& shape, const std::vector<std::size_t>& stride, F body) {
  const std::size_t d = shape.size();
  const std::size_t inner = shape[d - 1];
  const std::size_t runs = numel(shape) / inner;
  std::vector<std::size_t> idx(d, 0);
  std::size_t src = 0;
  for (std::size_t r = 0; r < runs; ++r) {
    body(r * inner, src, inner, stride[d - 1]);
    for (std::size_t i = d - 1; i-- > 0;) {
      src += stride[i];
      if (++idx[i] < shape[i]) break;
      src -= stride[i] * shape[i];
      idx[i] = 0;
    }
  }
}

// Broadcast layout of a binary op: the output has the larger operand's shape and the
// smaller operand repeats with period `period`.
struct Broadcast {
  Shape out;
  bool a_small = false;  // a is the repeated operand
  bool b_small = false;
  std::size_t period = 0;
};

Broadcast broadcast(std::string_view op, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Broadcast r;
  if (sa == sb) {
    r.out = sa;
    return r;
  }
  const std::size_t na = a.numel(), nb = b.numel();
  if (nb == 1 || (nb <= na && is_suffix(sb, sa))) {
    r.out = sa;
    r.b_small = true;
    r.period = nb;
    return r;
  }
  if (na == 1 || is_suffix(sa, sb)) {
    r.out = sb;
    r.a_small = true;
    r.period = na;
    return r;
  }
  shape_error(op, sa, sb);
}

template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const Broadcast bc = broadcast(op, a, b);
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t n = numel(bc.out);
  std::vector<double> out(n);
  // the small operand repeats with period bc.period; walk it in contiguous chunks
  if (!bc.a_small && !bc.b_small) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else if (bc.b_small) {
    const std::size_t p = bc.period;
    for (std::size_t base = 0; base < n; base += p)
      for (std::size_t j = 0; j < p; ++j) out[base + j] = f(av[base + j], bv[j]);
  } else {
    const std::size_t p = bc.period;
    for (std::size_t base = 0; base < n; base += p)
      for (std::size_t j = 0; j < p; ++j) out[base + j] = f(av[j], bv[base + j]);
  }
  return record(op, bc.out, std::move(out), {a, b}, [bc, da, db](const BackwardContext& ctx) {
    const auto g = ctx.out_grad;
    const auto x = ctx.value(0);
    const auto y = ctx.value(1);
    auto ga = ctx.grad(0);
    auto gb = ctx.grad(1);
    const std::size_t n = g.size();
    const std::size_t p = (bc.a_small || bc.b_small) ? bc.period : n;
    for (std::size_t base = 0; base < n; base += p) {
      const std::size_t oa = bc.a_small ? 0 : base, ob = bc.b_small ? 0 : base;
      const double* gp = g.data() + base;
      const double* xp = x.data() + oa;
      const double* yp = y.data() + ob;
      if (!ga.empty()) {
        double* gap = ga.data() + oa;
        for (std::size_t j = 0; j < p; ++j) gap[j] += gp[j] * da(xp[j], yp[j]);
      }
      if (!gb.empty()) {
        double* gbp = gb.data() + ob;
        for (std::size_t j = 0; j < p; ++j) gbp[j] += gp[j] * db(xp[j], yp[j]);
      }
    }
  });
}

template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D d) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return record(op, x.shape(), std::move(out), {x}, [d](const BackwardContext& ctx) {
    auto gx = ctx.grad(0);
    if (gx.empty()) return;
    const auto g = ctx.out_grad;
    const auto xv = ctx.value(0);
    const auto yv = ctx.out_value;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xv[i], yv[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

constexpr std::array<std::string_view, 28> kPrimitiveNames = {
    "add",     "sub",       "mul",         "scale",        "shift",          "matmul",
    "bmm",     "reshape",   "permute",     "concat",       "slice",          "gather_rows",
    "segment_mean", "sum",  "sum_axis",    "mean",         "mean_axis",      "relu",
    "gelu",    "exp",       "log",         "sqrt",         "sigmoid",        "softplus",
    "softmax", "masked_softmax", "layer_norm", "l2_norm"};

}  // namespace

std::span<const std::string_view> primitive_names() { return kPrimitiveNames; }

// ---------------------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor shift(const Tensor& x, double offset) {
  return unary(
      "shift", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt_2pi](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.values()) {
    if (v < 0 || std::isnan(v)) throw DomainError("sqrt: negative input " + std::to_string(v));
  }
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary("softplus", x, stable_softplus, [](double v, double) { return stable_sigmoid(v); });
}

// ---------------------------------------------------------------------------------------
// Products

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sb.size() != 2 || sa.back() != sb[0]) shape_error("matmul", sa, sb);
  const std::size_t K = sb[0], N = sb[1];
  const std::size_t M = a.numel() / K;
  Shape out_shape = sa;
  out_shape.back() = N;
  std::vector<double> out(M * N);
  kernels::gemm(M, N, K, a.values().data(), b.values().data(), out.data(), false);
  return record("matmul", std::move(out_shape), std::move(out), {a, b},
                [M, N, K](const BackwardContext& ctx) {
                  const double* g = ctx.out_grad.data();
                  auto ga = ctx.grad(0);
                  auto gb = ctx.grad(1);
                  if (!ga.empty()) {
                    std::vector<double> bt(K * N);
                    kernels::transpose(K, N, ctx.value(1).data(), bt.data());
                    kernels::gemm(M, K, N, g, bt.data(), ga.data(), true);
                  }
                  if (!gb.empty()) kernels::gemm_tn(K, N, M, ctx.value(0).data(), g, gb.data(), true);
                });
}

namespace {

// Materialize each group's matrix in the orientation the product needs.
std::vector<double> oriented(std::span<const double> v, std::size_t groups, std::size_t rows,
                             std::size_t cols, bool transpose) {
  if (!transpose) return {v.begin(), v.end()};
  std::vector<double> out(v.size());
  for (std::size_t g = 0; g < groups; ++g)
    kernels::transpose(rows, cols, v.data() + g * rows * cols, out.data() + g * rows * cols);
  return out;
}

}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0]) shape_error("bmm", sa, sb);
  const std::size_t G = sa[0];
  const std::size_t M = transpose_a ? sa[2] : sa[1];
  const std::size_t K = transpose_a ? sa[1] : sa[2];
  const std::size_t Kb = transpose_b ? sb[2] : sb[1];
  const std::size_t N = transpose_b ? sb[1] : sb[2];
  if (K != Kb) shape_error("bmm", sa, sb, "inner extents differ");

  // Plain (non-transposed) operands: A is [G, M, K], B is [G, K, N].
  const auto A = oriented(a.values(), G, sa[1], sa[2], transpose_a);
  const auto B = oriented(b.values(), G, sb[1], sb[2], transpose_b);
  std::vector<double> out(G * M * N);
  for (std::size_t g = 0; g < G; ++g)
    kernels::gemm(M, N, K, A.data() + g * M * K, B.data() + g * K * N, out.data() + g * M * N,
                  false);

  return record(
      "bmm", Shape{G, M, N}, std::move(out), {a, b},
      [G, M, N, K, transpose_a, transpose_b](const BackwardContext& ctx) {
        const double* g = ctx.out_grad.data();
        auto ga = ctx.grad(0);
        auto gb = ctx.grad(1);
        if (!ga.empty()) {
          // dA = dC * B^T, stored back in A's own orientation.
          const auto& sb = ctx.shape(1);
          const auto B = oriented(ctx.value(1), G, sb[1], sb[2], transpose_b);
          std::vector<double> bt(G * K * N);
          for (std::size_t q = 0; q < G; ++q)
            kernels::transpose(K, N, B.data() + q * K * N, bt.data() + q * K * N);
          std::vector<double> da(G * M * K, 0.0);
          for (std::size_t q = 0; q < G; ++q)
            kernels::gemm(M, K, N, g + q * M * N, bt.data() + q * K * N, da.data() + q * M * K,
                          false);
          if (transpose_a) {
            for (std::size_t q = 0; q < G; ++q)
              for (std::size_t i = 0; i < M; ++i)
                for (std::size_t k = 0; k < K; ++k) ga[q * M * K + k * M + i] += da[q * M * K + i * K + k];
          } else {
            for (std::size_t i = 0; i < da.size(); ++i) ga[i] += da[i];
          }
        }
        if (!gb.empty()) {
          // dB = A^T * dC.
          const auto& sa = ctx.shape(0);
          const auto A = oriented(ctx.value(0), G, sa[1], sa[2], transpose_a);
          std::vector<double> at(G * M * K);
          for (std::size_t q = 0; q < G; ++q)
            kernels::transpose(M, K, A.data() + q * M * K, at.data() + q * M * K);
          std::vector<double> db(G * K * N, 0.0);
          for (std::size_t q = 0; q < G; ++q)
            kernels::gemm(K, N, M, at.data() + q * M * K, g + q * M * N, db.data() + q * K * N,
                          false);
          if (transpose_b) {
            for (std::size_t q = 0; q < G; ++q)
              for (std::size_t k = 0; k < K; ++k)
                for (std::size_t j = 0; j < N; ++j) gb[q * K * N + j * K + k] += db[q * K * N + k * N + j];
          } else {
            for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
          }
        }
      });
}

// ---------------------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  return record("reshape", std::move(shape), x.node()->data, std::vector<Tensor>{x},
                [](const BackwardContext& ctx) {
                  auto gx = ctx.grad(0);
                  if (gx.empty()) return;
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.out_grad[i];
                });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& s = x.shape();
  const std::size_t d = s.size();
  std::vector<bool> seen(d, false);
  if (order.size() != d) shape_error("permute", s, "order has wrong length");
  for (auto o : order) {
    if (o >= d || seen[o]) shape_error("permute", s, "order is not a permutation");
    seen[o] = true;
  }
  Shape out_shape(d);
  for (std::size_t i = 0; i < d; ++i) out_shape[i] = s[order[i]];
  std::vector<std::size_t> in_stride(d, 1);
  for (std::size_t i = d; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  // input stride of each output axis
  std::vector<std::size_t> stride(d);
  for (std::size_t i = 0; i < d; ++i) stride[i] = in_stride[order[i]];
  const auto v = x.values();
  std::vector<double> out(x.numel());
  strided_walk(out_shape, stride, [&](std::size_t o, std::size_t in, std::size_t len, std::size_t step) {
    for (std::size_t j = 0; j < len; ++j) out[o + j] = v[in + j * step];
  });
  return record("permute", out_shape, std::move(out), {x},
                [out_shape, stride](const BackwardContext& ctx) {
                  auto gx = ctx.grad(0);
                  if (gx.empty()) return;
                  const auto g = ctx.out_grad;
                  strided_walk(out_shape, stride,
                               [&](std::size_t o, std::size_t in, std::size_t len, std::size_t step) {
                                 for (std::size_t j = 0; j < len; ++j) gx[in + j * step] += g[o + j];
                               });
                });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t ax = norm_axis("concat", first, axis);
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_error("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != ax && s[i] != first[i]) shape_error("concat", first, s);
    out_shape[ax] += s[ax];
  }
  const AxisSplit split = split_at(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> widths;  // contiguous chunk of each part per outer index
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[ax] * split.inner;
    const auto v = p.values();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(v.begin() + o * w, w, out.begin() + o * split.n * split.inner + offset);
    widths.push_back(w);
    offsets.push_back(offset);
    offset += w;
  }
  const std::size_t row = split.n * split.inner;
  const std::size_t outer = split.outer;
  return record("concat", std::move(out_shape), std::move(out), parts,
                [widths, offsets, row, outer](const BackwardContext& ctx) {
                  for (std::size_t p = 0; p < widths.size(); ++p) {
                    auto gp = ctx.grad(p);
                    if (gp.empty()) continue;
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t i = 0; i < widths[p]; ++i)
                        gp[o * widths[p] + i] += ctx.out_grad[o * row + offsets[p] + i];
                  }
                });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  const std::size_t ax = norm_axis("slice", s, axis);
  if (begin >= end || end > s[ax]) {
    shape_error("slice", s,
                "range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                    std::to_string(ax));
  }
  const AxisSplit split = split_at(s, ax);
  Shape out_shape = s;
  out_shape[ax] = end - begin;
  const std::size_t w = (end - begin) * split.inner;
  const std::size_t row = split.n * split.inner;
  const std::size_t off = begin * split.inner;
  const auto v = x.values();
  std::vector<double> out(split.outer * w);
  for (std::size_t o = 0; o < split.outer; ++o)
    std::copy_n(v.begin() + o * row + off, w, out.begin() + o * w);
  const std::size_t outer = split.outer;
  return record("slice", std::move(out_shape), std::move(out), {x},
                [outer, w, row, off](const BackwardContext& ctx) {
                  auto gx = ctx.grad(0);
                  if (gx.empty()) return;
                  for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < w; ++i) gx[o * row + off + i] += ctx.out_grad[o * w + i];
                });
}

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows) {
  const Shape& s = x.shape();
  if (s.empty()) shape_error("gather_rows", s, "needs at least one axis");
  if (rows.empty()) shape_error("gather_rows", s, "no rows requested");
  const std::size_t width = x.numel() / s[0];
  for (auto r : rows) {
    if (r < -1 || r >= static_cast<std::int64_t>(s[0]))
      shape_error("gather_rows", s, "row index " + std::to_string(r) + " out of range");
  }
  Shape out_shape = s;
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * width, 0.0);
  const auto v = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0) continue;
    std::copy_n(v.begin() + static_cast<std::size_t>(rows[i]) * width, width,
                out.begin() + i * width);
  }
  return record("gather_rows", std::move(out_shape), std::move(out), {x},
                [idx = std::vector<std::int64_t>(rows.begin(), rows.end()),
                 width](const BackwardContext& ctx) {
                  auto gx = ctx.grad(0);
                  if (gx.empty()) return;
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    if (idx[i] < 0) continue;
                    double* dst = gx.data() + static_cast<std::size_t>(idx[i]) * width;
                    const double* src = ctx.out_grad.data() + i * width;
                    for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                  }
                });
}

Tensor segment_mean(const Tensor& x, const std::vector<std::vector<std::size_t>>& segments) {
  const Shape& s = x.shape();
  if (s.empty()) shape_error("segment_mean", s, "needs at least one axis");
  if (segments.empty()) shape_error("segment_mean", s, "no segments");
  const std::size_t width = x.numel() / s[0];
  for (const auto& seg : segments) {
    if (seg.empty()) shape_error("segment_mean", s, "empty segment");
    for (auto r : seg)
      if (r >= s[0]) shape_error("segment_mean", s, "row index out of range");
  }
  Shape out_shape = s;
  out_shape[0] = segments.size();
  std::vector<double> out(segments.size() * width, 0.0);
  const auto v = x.values();
  for (std::size_t q = 0; q < segments.size(); ++q) {
    double* dst = out.data() + q * width;
    for (auto r : segments[q]) {
      const double* src = v.data() + r * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
    const double inv = 1.0 / static_cast<double>(segments[q].size());
    for (std::size_t j = 0; j < width; ++j) dst[j] *= inv;
  }
  return record("segment_mean", std::move(out_shape), std::move(out), {x},
                [segments, width](const BackwardContext& ctx) {
                  auto gx = ctx.grad(0);
                  if (gx.empty()) return;
                  for (std::size_t q = 0; q < segments.size(); ++q) {
                    const double inv = 1.0 / static_cast<double>(segments[q].size());
                    const double* src = ctx.out_grad.data() + q * width;
                    for (auto r : segments[q]) {
                      double* dst = gx.data() + r * width;
                      for (std::size_t j = 0; j < width; ++j) dst[j] += src[j] * inv;
                    }
                  }
                });
}

// ---------------------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return record("sum", Shape{}, {total}, {x}, [](const BackwardContext& ctx) {
    auto gx = ctx.grad(0);
    for (auto& g : gx) g += ctx.out_grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double total = 0.0;
  for (double v : x.values()) total += v;
  return record("mean", Shape{}, {total * inv}, {x}, [inv](const BackwardContext& ctx) {
    auto gx = ctx.grad(0);
    for (auto& g : gx) g += ctx.out_grad[0] * inv;
  });
}

namespace {

Tensor reduce_axis(const char* op, const Tensor& x, int axis, bool average) {
  const Shape& s = x.shape();
  const std::size_t ax = norm_axis(op, s, axis);
  const AxisSplit sp = split_at(s, ax);
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != ax) out_shape.push_back(s[i]);
  const double factor = average ? 1.0 / static_cast<double>(sp.n) : 1.0;
  const auto v = x.values();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k) {
      const double* src = v.data() + (o * sp.n + k) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  if (average)
    for (auto& o : out) o *= factor;
  return record(op, std::move(out_shape), std::move(out), {x},
                [sp, factor](const BackwardContext& ctx) {
                  auto gx = ctx.grad(0);
                  if (gx.empty()) return;
                  for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t k = 0; k < sp.n; ++k) {
                      double* dst = gx.data() + (o * sp.n + k) * sp.inner;
                      const double* src = ctx.out_grad.data() + o * sp.inner;
                      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i] * factor;
                    }
                });
}

}  // namespace

Tensor sum(const Tensor& x, int axis) { return reduce_axis("sum_axis", x, axis, false); }
Tensor mean(const Tensor& x, int axis) { return reduce_axis("mean_axis", x, axis, true); }

// ---------------------------------------------------------------------------------------
// Normalizations

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  const std::size_t ax = norm_axis("softmax", s, axis);
  const AxisSplit sp = split_at(s, ax);
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, v[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const double e = std::exp(v[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= z;
    }
  return record("softmax", s, std::move(out), {x}, [sp](const BackwardContext& ctx) {
    auto gx = ctx.grad(0);
    if (gx.empty()) return;
    const auto y = ctx.out_value;
    const auto g = ctx.out_grad;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.n * sp.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.n; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t at = base + k * sp.inner;
          gx[at] += y[at] * (g[at] - dot);
        }
      }
  });
}

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> key_valid) {
  const Shape& s = x.shape();
  if (s.size() != 3) shape_error("masked_softmax", s, "expected [groups, rows, keys]");
  const std::size_t G = s[0], M = s[1], S = s[2];
  if (key_valid.size() != G * S)
    shape_error("masked_softmax", s, Shape{key_valid.size()}, "mask must hold groups*keys flags");
  for (std::size_t g = 0; g < G; ++g) {
    if (std::none_of(key_valid.begin() + g * S, key_valid.begin() + (g + 1) * S,
                     [](std::uint8_t f) { return f != 0; }))
      shape_error("masked_softmax", s, "group " + std::to_string(g) + " has no valid key");
  }
  const auto v = x.values();
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t g = 0; g < G; ++g) {
    const std::uint8_t* valid = key_valid.data() + g * S;
    for (std::size_t m = 0; m < M; ++m) {
      const double* row = v.data() + (g * M + m) * S;
      double* dst = out.data() + (g * M + m) * S;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < S; ++k)
        if (valid[k]) mx = std::max(mx, row[k]);
      double z = 0.0;
      for (std::size_t k = 0; k < S; ++k) {
        if (!valid[k]) continue;
        dst[k] = std::exp(row[k] - mx);
        z += dst[k];
      }
      for (std::size_t k = 0; k < S; ++k) dst[k] /= z;
    }
  }
  return record("masked_softmax", s, std::move(out), {x}, [S](const BackwardContext& ctx) {
    auto gx = ctx.grad(0);
    if (gx.empty()) return;
    const auto y = ctx.out_value;
    const auto g = ctx.out_grad;
    for (std::size_t r = 0; r < y.size() / S; ++r) {
      const std::size_t base = r * S;
      double dot = 0.0;
      for (std::size_t k = 0; k < S; ++k) dot += g[base + k] * y[base + k];
      for (std::size_t k = 0; k < S; ++k) gx[base + k] += y[base + k] * (g[base + k] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, int axis, double eps) {
  const Shape& s = x.shape();
  const std::size_t ax = norm_axis("layer_norm", s, axis);
  const AxisSplit sp = split_at(s, ax);
  const auto v = x.values();
  std::vector<double> out(v.size());
  std::vector<double> inv_std(sp.outer * sp.inner);
  const double inv_n = 1.0 / static_cast<double>(sp.n);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mu = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) mu += v[base + k * sp.inner];
      mu *= inv_n;
      double var = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const double d = v[base + k * sp.inner] - mu;
        var += d * d;
      }
      var *= inv_n;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * sp.inner + i] = is;
      for (std::size_t k = 0; k < sp.n; ++k)
        out[base + k * sp.inner] = (v[base + k * sp.inner] - mu) * is;
    }
  return record("layer_norm", s, std::move(out), {x},
                [sp, inv_std = std::move(inv_std), inv_n](const BackwardContext& ctx) {
                  auto gx = ctx.grad(0);
                  if (gx.empty()) return;
                  const auto y = ctx.out_value;
                  const auto g = ctx.out_grad;
                  for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t i = 0; i < sp.inner; ++i) {
                      const std::size_t base = o * sp.n * sp.inner + i;
                      double gm = 0.0, gy = 0.0;
                      for (std::size_t k = 0; k < sp.n; ++k) {
                        const std::size_t at = base + k * sp.inner;
                        gm += g[at];
                        gy += g[at] * y[at];
                      }
                      gm *= inv_n;
                      gy *= inv_n;
                      const double is = inv_std[o * sp.inner + i];
                      for (std::size_t k = 0; k < sp.n; ++k) {
                        const std::size_t at = base + k * sp.inner;
                        gx[at] += is * (g[at] - gm - y[at] * gy);
                      }
                    }
                });
}

Tensor l2_norm(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty()) shape_error("l2_norm", s, "needs at least one axis");
  const std::size_t n = s.back();
  const std::size_t rows = x.numel() / n;
  Shape out_shape(s.begin(), s.end() - 1);
  const auto v = x.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += v[r * n + k] * v[r * n + k];
    out[r] = std::sqrt(acc);
  }
  return record("l2_norm", std::move(out_shape), std::move(out), {x}, [n](const BackwardContext& ctx) {
    auto gx = ctx.grad(0);
    if (gx.empty()) return;
    const auto xv = ctx.value(0);
    for (std::size_t r = 0; r < ctx.out_value.size(); ++r) {
      const double norm = ctx.out_value[r];
      if (norm == 0.0) continue;
      const double f = ctx.out_grad[r] / norm;
      for (std::size_t k = 0; k < n; ++k) gx[r * n + k] += f * xv[r * n + k];
    }
  });
}

}  // namespace sta::ad

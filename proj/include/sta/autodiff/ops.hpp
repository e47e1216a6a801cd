#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "sta/autodiff/tensor.hpp"

// Differentiable primitives. Every op checks its shapes and throws sta::ShapeError naming
// the op and the offending shapes. Axis arguments accept negative values (counted from
// the back).
namespace sta::ad {

// Elementwise binary ops. The shapes must be equal, or the smaller operand must be a
// single value or have a shape that is a suffix of the larger one (broadcast over the
// leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor shift(const Tensor& x, double offset);

/// [..., K] x [K, N] -> [..., N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product over the leading axis: [G, M, K] x [G, K, N] -> [G, M, N], with
/// optional transposition of either operand's trailing two axes.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);

/// Rows of x along axis 0. An index of -1 yields a zero row.
Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows);
/// Mean of listed rows (axis 0) per segment. Rows are summed in the listed order.
Tensor segment_mean(const Tensor& x, const std::vector<std::vector<std::size_t>>& segments);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
/// Throws sta::DomainError for non-positive entries.
Tensor log(const Tensor& x);
/// Throws sta::DomainError for negative entries. The derivative at 0 is taken as 0.
Tensor sqrt(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);
/// Softmax over the last axis of x = [G, M, S]; key_valid holds G*S flags and masked keys
/// receive exactly zero weight. Every row needs at least one valid key.
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> key_valid);
/// Zero-mean, unit-variance normalization along one axis (no affine part).
Tensor layer_norm(const Tensor& x, int axis, double eps = 1e-5);
/// Euclidean norm over the last axis. The derivative at the origin is taken as 0.
Tensor l2_norm(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// Names of every primitive, as recorded on the tape.
std::span<const std::string_view> primitive_names();

}  // namespace sta::ad

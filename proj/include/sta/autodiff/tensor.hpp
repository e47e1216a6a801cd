#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sta::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

namespace detail {

using Storage = std::shared_ptr<std::vector<double>>;

struct Node {
  Shape shape;
  Storage data;  // may be shared with reshaped views
  const std::vector<double>& value() const { return *data; }
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t tape_serial = 0;
  std::size_t tape_index = 0;
};

}  // namespace detail

/// View of one recorded op during the backward sweep.
struct BackwardContext {
  std::span<const double> out_grad;
  std::span<const double> out_value;
  std::span<detail::Node* const> inputs;

  /// Gradient buffer of input i, or an empty span when that input does not need one.
  std::span<double> grad(std::size_t i) const;
  std::span<const double> value(std::size_t i) const { return inputs[i]->value(); }
  const Shape& shape(std::size_t i) const { return inputs[i]->shape; }
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Dense row-major float64 tensor. Copies share the underlying node; use detach() for a
/// deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Writable storage. Only leaves may be written; recorded results are immutable.
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse sweep from this scalar. Leaf gradients accumulate across calls.
  void backward() const;

  /// Deep copy of the values with no gradient history.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Records ops for one reverse sweep. Constructing a Tape makes it the active tape of the
/// calling thread until it is destroyed; ops executed with no active tape are not recorded.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Drops every recorded op; tensors recorded before the reset become detached.
  void reset();
  std::size_t size() const;
  std::uint64_t serial() const { return serial_; }

  /// Names of recorded ops in recording order.
  std::vector<std::string> op_names() const;

  /// The tape ops currently record into, or nullptr (none active, or a NoGradGuard is alive).
  static Tape* active();

 private:
  friend class Tensor;
  friend Tensor record(const char*, Shape, detail::Storage, const std::vector<Tensor>&,
                       BackwardFn);
  struct Entry;
  void backward_from(const detail::Node& out);

  std::uint64_t serial_;
  Tape* previous_;
  std::vector<Entry> entries_;
};

/// Disables recording on the calling thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool recording();

/// Build a result tensor. When any input requires a gradient and a tape is active, the op is
/// appended to that tape with the given backward rule.
Tensor record(const char* op, Shape shape, std::vector<double> value,
              std::initializer_list<Tensor> inputs, BackwardFn backward);
Tensor record(const char* op, Shape shape, std::vector<double> value,
              const std::vector<Tensor>& inputs, BackwardFn backward);
/// Same, with the result aliasing existing storage (layout-only ops such as reshape).
Tensor record(const char* op, Shape shape, detail::Storage value,
              const std::vector<Tensor>& inputs, BackwardFn backward);

namespace testing {

/// Corrupts the backward rule of the named op (its incoming gradient is scaled by 1.5) on
/// the calling thread while alive. Used as a negative control for gradient checks.
class ScopedBackwardFault {
 public:
  explicit ScopedBackwardFault(std::string op);
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

 private:
  std::string previous_;
};

}  // namespace testing

}  // namespace sta::ad

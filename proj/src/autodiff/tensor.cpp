#include "sta/autodiff/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include "sta/error.hpp"

namespace sta::ad {

namespace {

std::atomic<std::uint64_t> next_serial{1};
thread_local Tape* active_tape = nullptr;
thread_local bool grad_disabled = false;
thread_local std::string faulty_op;

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> BackwardContext::grad(std::size_t i) const {
  detail::Node* n = inputs[i];
  if (!n->requires_grad) return {};
  if (n->grad.empty()) n->grad.assign(n->data->size(), 0.0);
  return n->grad;
}

// ---------------------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + to_string(shape));
  }
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                     std::to_string(ad::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::make_shared<std::vector<double>>(std::move(values));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = ad::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("tensor: ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("tensor: use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size(int axis) const {
  const auto& s = shape();
  const int d = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + d : axis;
  if (a < 0 || a >= d) throw ShapeError("tensor: axis out of range for shape " + to_string(s));
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return node_ ? node_->data->size() : 0; }

std::span<const double> Tensor::values() const {
  shape();
  return *node_->data;
}

std::span<double> Tensor::mutable_values() {
  shape();
  if (!node_->leaf) throw TapeError("tensor: recorded results are read-only");
  // storage shared with a reshaped view is copied first so the view keeps its values
  if (node_->data.use_count() > 1) node_->data = std::make_shared<std::vector<double>>(*node_->data);
  return *node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: expected a single value, shape " + to_string(shape()));
  return (*node_->data)[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  shape();
  if (!node_->leaf) throw TapeError("tensor: requires_grad can only be set on leaves");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return !node_ || node_->leaf; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  shape();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::backward() const {
  shape();
  if (node_->data->size() != 1) {
    throw TapeError("backward: output must be a scalar, got shape " + to_string(node_->shape));
  }
  if (node_->leaf) {
    if (node_->requires_grad) {
      if (node_->grad.empty()) node_->grad.assign(1, 0.0);
      node_->grad[0] += 1.0;
    }
    return;
  }
  for (Tape* t = active_tape; t; t = t->previous_) {
    if (t->serial() == node_->tape_serial) {
      t->backward_from(*node_);
      return;
    }
  }
  throw TapeError("backward: output belongs to a tape that was reset or destroyed");
}

Tensor Tensor::detach() const {
  shape();
  return Tensor(node_->shape, *node_->data, false);
}

// ---------------------------------------------------------------------------------------
// Tape

struct Tape::Entry {
  const char* op;
  std::vector<std::shared_ptr<detail::Node>> inputs;
  std::vector<detail::Node*> raw_inputs;
  std::shared_ptr<detail::Node> output;
  BackwardFn backward;
};

Tape::Tape() : serial_(next_serial.fetch_add(1)), previous_(active_tape) { active_tape = this; }

Tape::~Tape() {
  // Tapes nest strictly; restore whatever was active before this one.
  active_tape = previous_;
}

void Tape::reset() {
  entries_.clear();
  serial_ = next_serial.fetch_add(1);
}

std::size_t Tape::size() const { return entries_.size(); }

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.emplace_back(e.op);
  return names;
}

Tape* Tape::active() { return grad_disabled ? nullptr : active_tape; }

void Tape::backward_from(const detail::Node& out) {
  const std::size_t last = out.tape_index;
  for (std::size_t i = 0; i <= last; ++i) entries_[i].output->grad.clear();
  entries_[last].output->grad.assign(1, 1.0);

  for (std::size_t i = last + 1; i-- > 0;) {
    Entry& e = entries_[i];
    auto& g = e.output->grad;
    if (g.empty()) continue;
    if (!faulty_op.empty() && faulty_op == e.op) {
      for (auto& v : g) v *= 1.5;
    }
    BackwardContext ctx{g, *e.output->data, e.raw_inputs};
    e.backward(ctx);
    // Intermediate gradients are only needed until their producer has run.
    if (i != last) std::vector<double>().swap(g);
  }
}

// ---------------------------------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(grad_disabled) { grad_disabled = true; }
NoGradGuard::~NoGradGuard() { grad_disabled = previous_; }

bool recording() { return Tape::active() != nullptr; }

Tensor record(const char* op, Shape shape, std::vector<double> value,
              std::initializer_list<Tensor> inputs, BackwardFn backward) {
  return record(op, std::move(shape), std::move(value), std::vector<Tensor>(inputs),
                std::move(backward));
}

Tensor record(const char* op, Shape shape, std::vector<double> value,
              const std::vector<Tensor>& inputs, BackwardFn backward) {
  return record(op, std::move(shape), std::make_shared<std::vector<double>>(std::move(value)),
                inputs, std::move(backward));
}

Tensor record(const char* op, Shape shape, detail::Storage value,
              const std::vector<Tensor>& inputs, BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(value);
  node->leaf = true;

  Tape* tape = Tape::active();
  const bool needs = tape && std::any_of(inputs.begin(), inputs.end(),
                                         [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    node->leaf = false;
    node->requires_grad = true;
    node->tape_serial = tape->serial_;
    node->tape_index = tape->entries_.size();
    Tape::Entry e;
    e.op = op;
    e.inputs.reserve(inputs.size());
    e.raw_inputs.reserve(inputs.size());
    for (const auto& t : inputs) {
      e.inputs.push_back(t.node());
      e.raw_inputs.push_back(t.node().get());
    }
    e.output = node;
    e.backward = std::move(backward);
    tape->entries_.push_back(std::move(e));
  }
  return Tensor(std::move(node));
}

namespace testing {

ScopedBackwardFault::ScopedBackwardFault(std::string op) : previous_(faulty_op) {
  faulty_op = std::move(op);
}
ScopedBackwardFault::~ScopedBackwardFault() { faulty_op = previous_; }

}  // namespace testing

}  // namespace sta::ad

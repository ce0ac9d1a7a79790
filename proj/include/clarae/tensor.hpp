#pragma once

// Dense tensors and the reverse-mode tape they are recorded on.
//
// A Tensor is a reference-counted handle: copies share storage, clone() makes
// a deep copy. Every op in ops.hpp takes the Tape it records onto as its first
// argument. An inference tape records nothing, so forward passes through it
// never touch gradient state.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace clarae {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad input data (wrong lengths, degenerate statistics, unparsable files).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or divergence during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : d_(std::make_shared<Storage>()) {
    check_extents(shape);
    d_->values.assign(numel(shape), T{0});
    d_->shape = std::move(shape);
    d_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : d_(std::make_shared<Storage>()) {
    check_extents(shape);
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    d_->shape = std::move(shape);
    d_->values = std::move(values);
    d_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
  std::size_t size() const { return d_->values.size(); }

  std::span<T> values() { return d_->values; }
  std::span<const T> values() const { return d_->values; }
  T* data() { return d_->values.data(); }
  const T* data() const { return d_->values.data(); }

  T item() const {
    if (size() != 1) throw ShapeError("item: tensor " + to_string(shape()) + " is not a scalar");
    return d_->values[0];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool on) { d_->requires_grad = on; }

  // Gradient buffers are autograd bookkeeping on the shared storage, so they
  // stay writable through a const handle; values do not.
  bool has_grad() const { return !d_->grad.empty(); }
  std::span<T> grad() const { return d_->grad; }

  /// Allocates a zeroed gradient buffer on first use.
  std::span<T> ensure_grad() const {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), T{0});
    return d_->grad;
  }

  void zero_grad() const { std::fill(d_->grad.begin(), d_->grad.end(), T{0}); }
  void drop_grad() const {
    d_->grad.clear();
    d_->grad.shrink_to_fit();
  }

  Tensor clone() const { return Tensor(d_->shape, d_->values, d_->requires_grad); }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  static void check_extents(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor: rank must be at least 1");
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor: zero extent in shape " + to_string(shape));
    }
  }

  std::shared_ptr<Storage> d_;
};

/// Ordered record of backward rules. Rules run in reverse insertion order,
/// which is a valid reverse topological order because an op can only consume
/// tensors that already exist.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  static Tape inference() {
    Tape t;
    t.recording_ = false;
    return t;
  }

  bool recording() const { return recording_; }
  std::size_t size() const { return rules_.size(); }

  /// True when an op over these inputs must record a backward rule.
  template <typename... Ts>
  bool wants(const Ts&... inputs) const {
    return recording_ && (inputs.requires_grad() || ...);
  }

  void record(std::function<void()> rule) {
    if (consumed_) throw std::logic_error("tape: cannot record after backward(); call reset()");
    rules_.push_back(std::move(rule));
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule once.
  /// A second call without reset() is an error rather than an accumulation.
  void backward(Tensor<T>& loss) {
    if (consumed_) throw std::logic_error("tape: backward() already ran; call reset() first");
    if (loss.size() != 1) {
      throw ShapeError("backward: loss must be a scalar, got " + to_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
      throw std::logic_error("backward: loss does not depend on any tensor that requires grad");
    }
    loss.ensure_grad()[0] += T{1};
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
    consumed_ = true;
  }

  void reset() {
    rules_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> rules_;
  bool recording_ = true;
  bool consumed_ = false;
};

}  // namespace clarae

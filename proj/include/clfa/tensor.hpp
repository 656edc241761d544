#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace clfa {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Thrown when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an input lies outside an operation's domain (zero norm, empty pool).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Thrown for invalid index arguments (labels, token ids).
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Thrown for invalid hyperparameters (temperature, alpha).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for inconsistent configurations (missing inputs a variant requires).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl;

// Node in the reverse-mode graph. Values are immutable once created; only the
// gradient accumulator (and, for leaves, the optimizer) writes afterwards.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first contribution
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(TensorImpl&)> backward_fn;

  void accumulate(std::size_t i, double g);
  void ensure_grad();
};

/// Shared handle to a graph node. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->data; }
  // Leaves only: used by optimizers and finite-difference probes.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return impl_->parents.empty(); }
  bool has_grad() const { return !impl_->grad.empty(); }
  // Zero-filled view when no gradient has been accumulated.
  std::vector<double> grad() const;
  void zero_grad();

  /// Seeds d(self)/d(self) = 1 and propagates to every reachable node.
  void backward() const;

  /// Same values, cut from the graph.
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Nodes reachable from root in topological order (parents before children).
std::vector<TensorImpl*> topological_order(const Tensor& root);

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace clfa

#pragma once

// Dense row-major float64 tensors with tape-based reverse-mode autodiff.
//
// A Tensor is a cheap shared handle to an immutable node. Operations build
// new nodes that remember their inputs and a backward rule; `backward(loss)`
// records the reachable nodes into a ComputationTape in topological order and
// replays the rules in reverse. Leaf gradients accumulate across backward
// passes until `zero_grad()`.
//
// Every public operation checks its output for NaN/Inf and throws
// DomainError if one appears. Tensors and their tapes are confined to one
// thread; independent graphs may be built concurrently.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nowcast {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::size_t n);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const&;
  /// Copy of the values; a span into a temporary would dangle.
  std::vector<double> values() const&&;
  /// Writable view of a leaf's values (used by optimizers and
  /// finite-difference probes). Throws UsageError on non-leaf tensors.
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool has_grad() const;
  /// Gradient buffer, same shape as the values. Zeros if never populated.
  std::span<const double> grad() const;
  void zero_grad();

  /// Same values, no history, no gradient tracking.
  Tensor detach() const;

  detail::Node* node() const noexcept { return node_.get(); }

 private:
  friend class ComputationTape;
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>, const char*);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the operations reachable from a root tensor,
/// inputs before outputs.
class ComputationTape {
 public:
  static ComputationTape record(const Tensor& root);

  std::size_t size() const noexcept { return order_.size(); }

  /// Seeds d(root)/d(root) = 1 and replays backward rules in reverse order.
  /// Root must be a scalar.
  void backward();

 private:
  std::vector<std::shared_ptr<detail::Node>> order_;
};

void backward(const Tensor& loss);

/// While alive, operations on this thread record no history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise (identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

/// Adds a 1-D bias along `axis`.
Tensor add_bias(const Tensor& a, const Tensor& bias, std::size_t axis);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Shape.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank 2
/// out[..., i, ...] = a[..., perm[i], ...] along `axis`.
Tensor permute_axis(const Tensor& a, const std::vector<std::size_t>& perm, std::size_t axis);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]

/// Contracts `axis` of `a` with the rows of matrix `w`:
///   out[..., j, ...] = sum_i a[..., i, ...] * w[i, j]
/// so the extent of `axis` changes from w.dim(0) to w.dim(1).
Tensor mode_product(const Tensor& a, const Tensor& w, std::size_t axis);

/// Softmax along `axis`, stabilised by max subtraction.
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);

/// Same-length 1-D convolution along the last axis of a [N, C_in, T] tensor
/// with kernel [width, C_in, C_out] (odd width, zero padding):
///   out[n, o, t] = sum_{j, c} kernel[j, c, o] * a[n, c, t + j - width/2]
Tensor conv_time(const Tensor& a, const Tensor& kernel);

/// Max over coordinates of |analytic - central difference| /
/// max(|analytic|, |fd|, 1e-8) for a scalar-valued `f` at `x`.
double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double eps = 1e-5);

/// Same check, but `param` is a leaf captured by `loss` and is perturbed in
/// place; it is restored before returning.
double gradient_check_param(const std::function<Tensor()>& loss, Tensor& param,
                            double eps = 1e-5);

}  // namespace nowcast

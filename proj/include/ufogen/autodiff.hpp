#pragma once

// Minimal define-by-run reverse-mode automatic differentiation over dense
// row-major float64 tensors.
//
// Every op applied to a tensor that requires a gradient records a node with a
// backward closure. `backward(loss)` orders the reachable nodes by creation
// sequence, runs each closure exactly once from the loss towards the leaves
// and then releases the recorded graph.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ufogen/errors.hpp"

namespace ufogen {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  // A 0-rank zero scalar.
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Convenience for 2-D literals in tests: {{1, 2}, {3, 4}}.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct write access, used by optimizers and finite-difference probes.
  // Writing to a tensor that is part of a live graph invalidates that graph.
  std::span<double> mutable_data();

  double item() const;
  double operator()(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Values-only copy that is not connected to any graph.
  Tensor detach() const;
  // Deep copy preserving requires_grad (but not grad or graph).
  Tensor clone() const;

  // True when this tensor was produced by a recorded op.
  bool has_grad_fn() const;

  // Identity of the underlying storage.
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>,
                            std::vector<std::shared_ptr<detail::Node>>,
                            std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Creates an op output. Gradient recording is skipped when no parent needs a
// gradient or a NoGradGuard is active.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<std::shared_ptr<detail::Node>> parents,
                   std::function<void(detail::Node&)> backward_fn);

// RAII scope that disables graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// Binary elementwise ops broadcast over singleton dimensions; the lower-rank
// operand is aligned to the trailing dimensions of the other.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);

// Concatenates 2-D tensors with equal row counts along columns.
Tensor concat_cols(const std::vector<Tensor>& parts);

// Reductions. With an axis the reduced dimension is kept with extent 1.
Tensor sum(const Tensor& x, std::optional<std::size_t> axis = std::nullopt);
Tensor mean(const Tensor& x, std::optional<std::size_t> axis = std::nullopt);
Tensor squared_l2_norm(const Tensor& x,
                       std::optional<std::size_t> axis = std::nullopt);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

// ---- backward -------------------------------------------------------------

// Ordered record of the ops reachable from a loss, newest first.
class Tape {
 public:
  static Tape record(const Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  // Creation sequence numbers in traversal order (strictly decreasing).
  std::vector<std::uint64_t> order() const;

  // Runs every backward closure once, then drops the graph.
  void run(const Tensor& loss);

 private:
  std::vector<std::shared_ptr<detail::Node>> ops_;
};

// Populates .grad of every requires_grad leaf reachable from a scalar loss.
// Throws ContractError when the loss is not a scalar or carries no graph.
void backward(const Tensor& loss);

// ---- verification oracle ----------------------------------------------------

// max_i |analytic_i - central_i| / max(1, |analytic_i|) for a scalar f at x.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double h = 1e-6);

// Same check for a closure over parameters: each parameter is perturbed in
// place and restored. Parameter grads are overwritten.
double finite_difference_check(const std::function<Tensor()>& f,
                               std::span<Tensor> params, double h = 1e-6);

}  // namespace ufogen

#pragma once

// Dense row-major float64 tensors with a reverse-mode differentiation tape.
//
// A Tensor is a cheap handle onto an immutable node. Operations that consume
// at least one tensor with requires_grad() record their inputs and a
// backward closure on the result; grad() walks that record in reverse
// topological order. The tape is owned by the result handles, so dropping the
// loss releases the whole graph. A tape must not be shared across threads.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ncgm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// grad_in[i] is null when parent i does not require a gradient.
using BackwardFn = std::function<void(const Node& self, std::span<const double> grad_out,
                                      std::span<std::vector<double>*> grad_in)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Rows given as nested initializer, mostly for tests.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  /// In-place access for leaves (optimizer updates, finite differences).
  std::span<double> mutable_data();

  double at(std::size_t i) const { return data()[i]; }
  double operator()(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Same values, no history.
  Tensor detach() const;
  /// Deep copy of the values into a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  bool defined() const { return static_cast<bool>(node_); }
  const detail::Node* id() const { return node_.get(); }
  const detail::NodePtr& node() const { return node_; }
  static Tensor from_node(detail::NodePtr node);

 private:
  detail::NodePtr node_;
};

/// Gradients of a scalar with respect to every differentiable node it depends on.
class Gradients {
 public:
  /// Gradient for `t`; all zeros when `t` was not reachable from the loss.
  Tensor of(const Tensor& t) const;
  bool reached(const Tensor& t) const;

 private:
  friend Gradients grad(const Tensor& loss);
  std::unordered_map<const detail::Node*, std::vector<double>> leaf_grads_;
};

/// Reverse-mode pass from a scalar. Throws ContractError for non-scalars.
Gradients grad(const Tensor& loss);

// ---- Linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- Elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// x[m×n] + b[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);

// ---- Row-wise normalisations ------------------------------------------------

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- Reductions -------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// m×n -> m, squared L2 norm of each row.
Tensor row_sq_norm(const Tensor& x);
/// m×n -> 1×n, column-wise maximum (first maximiser receives the gradient).
Tensor max_over_rows(const Tensor& x);
/// m×n, index per row -> m, picks x[r, index[r]].
Tensor pick(const Tensor& x, std::span<const std::size_t> index);

// ---- Structural -------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
/// Output row r is x[index[r]]; a negative index yields a zero row.
Tensor gather_rows(const Tensor& x, std::span<const long> index);

// ---- Image ops --------------------------------------------------------------

/// input [Cin×H×W], weight [Cout×Cin×k×k], bias [Cout] -> [Cout×Ho×Wo].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);

/// Inclusive cell rectangle on a feature map.
struct CellRect {
  std::size_t y0, y1, x0, x1;
};

/// feature [C×H×W] -> [N×C], mean over each rectangle.
Tensor region_avg_pool(const Tensor& feature, std::span<const CellRect> regions);

}  // namespace ncgm

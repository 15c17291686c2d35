#include "ncgm/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ncgm/errors.hpp"

namespace ncgm {

using detail::Node;
using detail::NodePtr;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
  }
}

// Builds a result node; parents are only recorded when some input needs a gradient.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   detail::BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

void accumulate(std::vector<double>* dst, std::span<const double> src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ContractError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  std::vector<double> data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return Tensor({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::from_node(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }
std::size_t Tensor::rows() const { return node_->shape.at(0); }
std::size_t Tensor::cols() const { return rank() >= 2 ? node_->shape[1] : 1; }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::operator()(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_->backward; }

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  return from_node(std::move(node));
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(node_->shape, node_->data, requires_grad);
}

// ---- Gradients --------------------------------------------------------------

Tensor Gradients::of(const Tensor& t) const {
  auto it = leaf_grads_.find(t.id());
  if (it == leaf_grads_.end()) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), it->second);
}

bool Gradients::reached(const Tensor& t) const { return leaf_grads_.count(t.id()) > 0; }

Gradients grad(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  Gradients out;
  if (!loss.requires_grad()) return out;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_map<const Node*, bool> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited[loss.id()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited[p]) {
        visited[p] = true;
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node*, std::vector<double>> grads;
  grads[loss.id()] = std::vector<double>{1.0};
  std::vector<std::vector<double>*> grad_in;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (!node->backward) {
      out.leaf_grads_[node] = std::move(found->second);
      grads.erase(found);
      continue;
    }
    grad_in.assign(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      Node* p = node->parents[i].get();
      if (!p->requires_grad) continue;
      auto& g = grads[p];
      if (g.empty()) g.assign(p->data.size(), 0.0);
      grad_in[i] = &g;
    }
    // Lookup again: inserting parents may have rehashed the map.
    std::vector<double> own = std::move(grads[node]);
    node->backward(*node, own, grad_in);
    grads.erase(node);
  }
  return out;
}

// ---- Linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b},
                     [m, k, n](const Node& self, std::span<const double> g, auto gin) {
                       MapC G(g.data(), m, n);
                       const auto& A = self.parents[0]->data;
                       const auto& B = self.parents[1]->data;
                       if (gin[0]) Map(gin[0]->data(), m, k).noalias() += G * MapC(B.data(), k, n).transpose();
                       if (gin[1]) Map(gin[1]->data(), k, n).noalias() += MapC(A.data(), m, k).transpose() * G;
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const auto m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  Map(out.data(), n, m) = MapC(a.data().data(), m, n).transpose();
  return make_result({n, m}, std::move(out), {a},
                     [m, n](const Node&, std::span<const double> g, auto gin) {
                       if (gin[0]) Map(gin[0]->data(), m, n) += MapC(g.data(), n, m).transpose();
                     });
}

// ---- Elementwise ------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {a, b},
                     [](const Node&, std::span<const double> g, auto gin) {
                       accumulate(gin[0], g);
                       accumulate(gin[1], g);
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result(a.shape(), std::move(out), {a, b},
                     [](const Node&, std::span<const double> g, auto gin) {
                       accumulate(gin[0], g);
                       if (gin[1]) {
                         for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {a, b},
                     [](const Node& self, std::span<const double> g, auto gin) {
                       const auto& A = self.parents[0]->data;
                       const auto& B = self.parents[1]->data;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (gin[0]) (*gin[0])[i] += g[i] * B[i];
                         if (gin[1]) (*gin[1])[i] += g[i] * A[i];
                       }
                     });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * s;
  return make_result(a.shape(), std::move(out), {a},
                     [s](const Node&, std::span<const double> g, auto gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += s * g[i];
                     });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + s;
  return make_result(a.shape(), std::move(out), {a},
                     [](const Node&, std::span<const double> g, auto gin) { accumulate(gin[0], g); });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_bias");
  const auto m = x.rows(), n = x.cols();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bias.at(c);
  return make_result(x.shape(), std::move(out), {x, bias},
                     [m, n](const Node&, std::span<const double> g, auto gin) {
                       accumulate(gin[0], g);
                       if (gin[1]) {
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) (*gin[1])[c] += g[r * n + c];
                       }
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) > 0.0 ? x.at(i) : 0.0;
  return make_result(x.shape(), std::move(out), {x},
                     [](const Node& self, std::span<const double> g, auto gin) {
                       const auto& X = self.parents[0]->data;
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (X[i] > 0.0) (*gin[0])[i] += g[i];
                     });
}

// ---- Row-wise normalisations ------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows");
  const auto m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* in = x.data().data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) total += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < n; ++c) o[c] /= total;
  }
  return make_result(x.shape(), std::move(out), {x},
                     [m, n](const Node& self, std::span<const double> g, auto gin) {
                       const auto& y = self.data;
                       for (std::size_t r = 0; r < m; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
                         for (std::size_t c = 0; c < n; ++c)
                           (*gin[0])[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
                       }
                     });
}

Tensor log_softmax_rows(const Tensor& x) {
  require_rank2(x, "log_softmax_rows");
  const auto m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* in = x.data().data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) total += std::exp(in[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = in[c] - lse;
  }
  return make_result(x.shape(), std::move(out), {x},
                     [m, n](const Node& self, std::span<const double> g, auto gin) {
                       const auto& y = self.data;
                       for (std::size_t r = 0; r < m; ++r) {
                         double gs = 0.0;
                         for (std::size_t c = 0; c < n; ++c) gs += g[r * n + c];
                         for (std::size_t c = 0; c < n; ++c)
                           (*gin[0])[r * n + c] += g[r * n + c] - std::exp(y[r * n + c]) * gs;
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(x, "layer_norm");
  require(eps > 0.0, "layer_norm: eps must be positive");
  const auto m = x.rows(), n = x.cols();
  if (gamma.size() != n || beta.size() != n) {
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(n) + " entries");
  }
  std::vector<double> out(m * n);
  // xhat and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* in = x.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += in[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (in[c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gamma.at(c) + beta.at(c);
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [m, n, xhat, inv_std](const Node& self, std::span<const double> g, auto gin) {
                       const auto& G = self.parents[1]->data;
                       const auto nn = static_cast<double>(n);
                       std::vector<double> gh(n);
                       for (std::size_t r = 0; r < m; ++r) {
                         const double* h = xhat->data() + r * n;
                         const double* gr = g.data() + r * n;
                         if (gin[1])
                           for (std::size_t c = 0; c < n; ++c) (*gin[1])[c] += gr[c] * h[c];
                         if (gin[2])
                           for (std::size_t c = 0; c < n; ++c) (*gin[2])[c] += gr[c];
                         if (!gin[0]) continue;
                         double s1 = 0.0, s2 = 0.0;
                         for (std::size_t c = 0; c < n; ++c) {
                           gh[c] = gr[c] * G[c];
                           s1 += gh[c];
                           s2 += gh[c] * h[c];
                         }
                         const double is = (*inv_std)[r];
                         for (std::size_t c = 0; c < n; ++c)
                           (*gin[0])[r * n + c] += is * (gh[c] - s1 / nn - h[c] * s2 / nn);
                       }
                     });
}

// ---- Reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, [](const Node&, std::span<const double> g, auto gin) {
    for (auto& v : *gin[0]) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor row_sq_norm(const Tensor& x) {
  require_rank2(x, "row_sq_norm");
  const auto m = x.rows(), n = x.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r] += x.at(r * n + c) * x.at(r * n + c);
  return make_result({m}, std::move(out), {x},
                     [m, n](const Node& self, std::span<const double> g, auto gin) {
                       const auto& X = self.parents[0]->data;
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t c = 0; c < n; ++c)
                           (*gin[0])[r * n + c] += 2.0 * X[r * n + c] * g[r];
                     });
}

Tensor max_over_rows(const Tensor& x) {
  require_rank2(x, "max_over_rows");
  const auto m = x.rows(), n = x.cols();
  std::vector<double> out(n);
  auto argmax = std::make_shared<std::vector<std::size_t>>(n, 0);
  for (std::size_t c = 0; c < n; ++c) {
    double best = x.at(c);
    for (std::size_t r = 1; r < m; ++r) {
      if (x.at(r * n + c) > best) {
        best = x.at(r * n + c);
        (*argmax)[c] = r;
      }
    }
    out[c] = best;
  }
  return make_result({1, n}, std::move(out), {x},
                     [n, argmax](const Node&, std::span<const double> g, auto gin) {
                       for (std::size_t c = 0; c < n; ++c) (*gin[0])[(*argmax)[c] * n + c] += g[c];
                     });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
  require_rank2(x, "pick");
  const auto m = x.rows(), n = x.cols();
  if (index.size() != m) throw DimensionError("pick: need one index per row");
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    require(idx[r] < n, "pick: index out of range");
    out[r] = x.at(r * n + idx[r]);
  }
  return make_result({m}, std::move(out), {x},
                     [n, idx = std::move(idx)](const Node&, std::span<const double> g, auto gin) {
                       for (std::size_t r = 0; r < idx.size(); ++r) (*gin[0])[r * n + idx[r]] += g[r];
                     });
}

// ---- Structural -------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x},
                     [](const Node&, std::span<const double> g, auto gin) { accumulate(gin[0], g); });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const auto n = parts[0].cols();
  std::size_t m = 0;
  std::vector<double> out;
  std::vector<Tensor> inputs;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != n) throw DimensionError("concat_rows: column counts differ");
    m += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
    inputs.push_back(p);
  }
  return make_result({m, n}, std::move(out), inputs,
                     [](const Node& self, std::span<const double> g, auto gin) {
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         const auto sz = self.parents[i]->data.size();
                         accumulate(gin[i], g.subspan(off, sz));
                         off += sz;
                       }
                     });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const auto m = parts[0].rows();
  std::size_t n = 0;
  std::vector<Tensor> inputs;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    n += p.cols();
    inputs.push_back(p);
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto w = p.cols();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(p.data().data() + r * w, w, out.data() + r * n + off);
    off += w;
  }
  return make_result({m, n}, std::move(out), inputs,
                     [m, n](const Node& self, std::span<const double> g, auto gin) {
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         const auto w = self.parents[i]->shape[1];
                         if (gin[i]) {
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t c = 0; c < w; ++c)
                               (*gin[i])[r * w + c] += g[r * n + off + c];
                         }
                         off += w;
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  require(begin < end && end <= x.rows(), "slice_rows: bad range");
  const auto n = x.cols();
  std::vector<double> out(x.data().begin() + begin * n, x.data().begin() + end * n);
  return make_result({end - begin, n}, std::move(out), {x},
                     [begin, n](const Node&, std::span<const double> g, auto gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[begin * n + i] += g[i];
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  require(begin < end && end <= x.cols(), "slice_cols: bad range");
  const auto m = x.rows(), n = x.cols(), w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(x.data().data() + r * n + begin, w, out.data() + r * w);
  return make_result({m, w}, std::move(out), {x},
                     [m, n, w, begin](const Node&, std::span<const double> g, auto gin) {
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t c = 0; c < w; ++c) (*gin[0])[r * n + begin + c] += g[r * w + c];
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const long> index) {
  require_rank2(x, "gather_rows");
  require(!index.empty(), "gather_rows: empty index");
  const auto n = x.cols();
  std::vector<long> idx(index.begin(), index.end());
  const auto m = idx.size();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    if (idx[r] < 0) continue;
    require(static_cast<std::size_t>(idx[r]) < x.rows(), "gather_rows: index out of range");
    std::copy_n(x.data().data() + idx[r] * n, n, out.data() + r * n);
  }
  return make_result({m, n}, std::move(out), {x},
                     [n, idx = std::move(idx)](const Node&, std::span<const double> g, auto gin) {
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         if (idx[r] < 0) continue;
                         for (std::size_t c = 0; c < n; ++c) (*gin[0])[idx[r] * n + c] += g[r * n + c];
                       }
                     });
}

// ---- Image ops --------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  if (input.rank() != 3 || weight.rank() != 4) {
    throw DimensionError("conv2d: expected [C,H,W] input and [Co,Ci,k,k] weight, got " +
                         shape_str(input.shape()) + " and " + shape_str(weight.shape()));
  }
  const auto cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const auto cout = weight.shape()[0], k = weight.shape()[2];
  if (weight.shape()[1] != cin || weight.shape()[3] != k || bias.size() != cout) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
  }
  require(stride >= 1 && h + 2 * pad >= k && w + 2 * pad >= k, "conv2d: bad stride/padding");
  const auto ho = (h + 2 * pad - k) / stride + 1;
  const auto wo = (w + 2 * pad - k) / stride + 1;
  // Columns [Ci*k*k x Ho*Wo]: row (ci, ky, kx) holds the input tap of every output position.
  const std::size_t kk = cin * k * k, npos = ho * wo;
  auto cols = std::make_shared<std::vector<double>>(kk * npos, 0.0);
  const double* X = input.data().data();
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = cols->data() + ((ci * k + ky) * k + kx) * npos;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix >= 0 && ix < static_cast<long>(w)) dst[oy * wo + ox] = X[(ci * h + iy) * w + ix];
          }
        }
      }
    }
  }
  std::vector<double> out(cout * npos);
  Map O(out.data(), cout, npos);
  O.noalias() = MapC(weight.data().data(), cout, kk) * MapC(cols->data(), kk, npos);
  for (std::size_t co = 0; co < cout; ++co) O.row(co).array() += bias.at(co);
  return make_result(
      {cout, ho, wo}, std::move(out), {input, weight, bias},
      [=](const Node& self, std::span<const double> g, auto gin) {
        MapC G(g.data(), cout, npos);
        if (gin[2]) {
          for (std::size_t co = 0; co < cout; ++co) (*gin[2])[co] += G.row(co).sum();
        }
        if (gin[1]) Map(gin[1]->data(), cout, kk).noalias() += G * MapC(cols->data(), kk, npos).transpose();
        if (gin[0]) {
          std::vector<double> gcols(kk * npos);
          Map(gcols.data(), kk, npos).noalias() = MapC(self.parents[1]->data.data(), cout, kk).transpose() * G;
          auto& gx = *gin[0];
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const double* src = gcols.data() + ((ci * k + ky) * k + kx) * npos;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                  const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  for (std::size_t ox = 0; ox < wo; ++ox) {
                    const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    if (ix >= 0 && ix < static_cast<long>(w)) gx[(ci * h + iy) * w + ix] += src[oy * wo + ox];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor region_avg_pool(const Tensor& feature, std::span<const CellRect> regions) {
  if (feature.rank() != 3) throw DimensionError("region_avg_pool: expected [C,H,W] feature map");
  require(!regions.empty(), "region_avg_pool: no regions");
  const auto c = feature.shape()[0], h = feature.shape()[1], w = feature.shape()[2];
  std::vector<CellRect> rects(regions.begin(), regions.end());
  for (const auto& r : rects) {
    require(r.y0 <= r.y1 && r.y1 < h && r.x0 <= r.x1 && r.x1 < w, "region_avg_pool: region outside map");
  }
  const auto n = rects.size();
  std::vector<double> out(n * c, 0.0);
  const double* F = feature.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = rects[i];
    const double inv = 1.0 / static_cast<double>((r.y1 - r.y0 + 1) * (r.x1 - r.x0 + 1));
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t y = r.y0; y <= r.y1; ++y)
        for (std::size_t x = r.x0; x <= r.x1; ++x) s += F[(ch * h + y) * w + x];
      out[i * c + ch] = s * inv;
    }
  }
  return make_result({n, c}, std::move(out), {feature},
                     [c, h, w, rects = std::move(rects)](const Node&, std::span<const double> g, auto gin) {
                       for (std::size_t i = 0; i < rects.size(); ++i) {
                         const auto& r = rects[i];
                         const double inv = 1.0 / static_cast<double>((r.y1 - r.y0 + 1) * (r.x1 - r.x0 + 1));
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           const double gv = g[i * c + ch] * inv;
                           for (std::size_t y = r.y0; y <= r.y1; ++y)
                             for (std::size_t x = r.x0; x <= r.x1; ++x) (*gin[0])[(ch * h + y) * w + x] += gv;
                         }
                       }
                     });
}

}  // namespace ncgm

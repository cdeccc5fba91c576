#include "nowcast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "nowcast/error.hpp"

namespace nowcast {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  bool is_leaf() const { return inputs.empty(); }

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw DomainError(std::string("non-finite value produced by ") + op);
    }
  }
}

// View of a shape split around one axis: [outer, extent, inner].
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw UsageError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_defined(const Tensor& a, const char* op) {
  if (!a.defined()) throw UsageError(std::string(op) + ": undefined tensor");
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn, const char* op) {
  check_finite(values, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  bool tracked = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  }
  if (tracked) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() = default;

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw UsageError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw UsageError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  check_finite(values, "Tensor::from");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from({n, n}, std::move(v));
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw UsageError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const& {
  require_defined(*this, "values");
  return node_->values;
}

std::vector<double> Tensor::values() const&& {
  require_defined(*this, "values");
  return node_->values;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "mutable_values");
  if (!node_->is_leaf()) throw UsageError("mutable_values: tensor is not a leaf");
  return node_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw UsageError("at: index rank mismatch");
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto idx : index) {
    if (idx >= s[i]) throw UsageError("at: index out of range");
    flat = flat * s[i] + idx;
    ++i;
  }
  return node_->values[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->values, false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tape

ComputationTape ComputationTape::record(const Tensor& root) {
  require_defined(root, "ComputationTape::record");
  ComputationTape tape;
  if (!root.requires_grad()) return tape;
  // Iterative post-order DFS: a node is emitted after all of its inputs.
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(root.node_, 0);
  visited.insert(root.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void ComputationTape::backward() {
  if (order_.empty()) throw UsageError("backward: root does not require grad");
  auto& root = order_.back();
  if (root->values.size() != 1) throw UsageError("backward: root must be a scalar");
  for (auto& node : order_) {
    if (!node->is_leaf()) node->grad.assign(node->values.size(), 0.0);
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& node = **it;
    if (node.backward_fn) node.backward_fn(node);
  }
}

void backward(const Tensor& loss) { ComputationTape::record(loss).backward(); }

// ---------------------------------------------------------------------------
// Elementwise

namespace {

bool wants_grad(const Node& node, std::size_t input) { return node.inputs[input]->requires_grad; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(n, k)) continue;
      auto& g = n.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    if (wants_grad(n, 0)) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants_grad(n, 1)) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    const auto& x = n.inputs[0]->values;
    const auto& y = n.inputs[1]->values;
    if (wants_grad(n, 0)) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * y[i];
    }
    if (wants_grad(n, 1)) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * x[i];
    }
  }, "mul");
}

Tensor scale(const Tensor& a, double factor) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * factor;
  }, "scale");
}

// d/dx relu(x) is taken as 0 at x == 0.
Tensor relu(const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return make_result(a.shape(), std::move(out), {a}, [](Node& n) {
    const auto& x = n.inputs[0]->values;
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) g[i] += n.grad[i];
    }
  }, "relu");
}

Tensor sigmoid(const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    // Split by sign so exp never overflows.
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  return make_result(a.shape(), std::move(out), {a}, [](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = n.values[i];
      g[i] += n.grad[i] * s * (1.0 - s);
    }
  }, "sigmoid");
}

Tensor add_bias(const Tensor& a, const Tensor& bias, std::size_t axis) {
  if (axis >= a.rank()) throw UsageError("add_bias: axis out of range");
  if (bias.rank() != 1 || bias.dim(0) != a.dim(axis)) {
    throw UsageError("add_bias: bias shape " + shape_str(bias.shape()) + " does not match axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  const AxisSplit s = split_axis(a.shape(), axis);
  auto av = a.values();
  auto bv = bias.values();
  std::vector<double> out(av.begin(), av.end());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[(o * s.extent + e) * s.inner + i] += bv[e];
  return make_result(a.shape(), std::move(out), {a, bias}, [s](Node& n) {
    if (wants_grad(n, 0)) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants_grad(n, 1)) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
          for (std::size_t i = 0; i < s.inner; ++i) g[e] += n.grad[(o * s.extent + e) * s.inner + i];
    }
  }, "add_bias");
}

// ---------------------------------------------------------------------------
// Reductions and shape

Tensor sum(const Tensor& a) {
  auto av = a.values();
  double total = 0.0;
  for (double v : av) total += v;
  return make_result({1}, {total}, {a}, [](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (auto& gi : g) gi += n.grad[0];
  }, "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw UsageError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto av = a.values();
  return make_result(std::move(shape), {av.begin(), av.end()}, {a}, [](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  }, "reshape");
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw UsageError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto av = a.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return make_result({c, r}, std::move(out), {a}, [r, c](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j * r + i];
  }, "transpose");
}

Tensor permute_axis(const Tensor& a, const std::vector<std::size_t>& perm, std::size_t axis) {
  if (axis >= a.rank()) throw UsageError("permute_axis: axis out of range for " + shape_str(a.shape()));
  const AxisSplit s = split_axis(a.shape(), axis);
  if (perm.size() != s.extent) throw UsageError("permute_axis: permutation length does not match the axis");
  std::vector<char> seen(s.extent, 0);
  for (auto p : perm) {
    if (p >= s.extent || seen[p]) throw UsageError("permute_axis: not a permutation");
    seen[p] = 1;
  }
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.extent; ++i)
      std::copy_n(av.data() + (o * s.extent + perm[i]) * s.inner, s.inner, out.data() + (o * s.extent + i) * s.inner);
  return make_result(a.shape(), std::move(out), {a}, [s, perm](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.extent; ++i)
        for (std::size_t k = 0; k < s.inner; ++k)
          g[(o * s.extent + perm[i]) * s.inner + k] += n.grad[(o * s.extent + i) * s.inner + k];
  }, "permute_axis");
}

// ---------------------------------------------------------------------------
// Contractions

namespace {

// out[o, m, i] += sum_a x[o, a, i] * w[a, m]
void contract_forward(const double* x, const double* w, double* out, const AxisSplit& s, std::size_t m_ext) {
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* xo = x + o * s.extent * s.inner;
    double* oo = out + o * m_ext * s.inner;
    if (s.inner == 1) {
      for (std::size_t a = 0; a < s.extent; ++a) {
        const double xv = xo[a];
        if (xv == 0.0) continue;
        const double* wr = w + a * m_ext;
        for (std::size_t m = 0; m < m_ext; ++m) oo[m] += xv * wr[m];
      }
    } else {
      for (std::size_t a = 0; a < s.extent; ++a) {
        const double* xr = xo + a * s.inner;
        for (std::size_t m = 0; m < m_ext; ++m) {
          const double wv = w[a * m_ext + m];
          if (wv == 0.0) continue;
          double* orow = oo + m * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) orow[i] += wv * xr[i];
        }
      }
    }
  }
}

Tensor contract(const Tensor& a, const Tensor& w, std::size_t axis, const char* op) {
  const AxisSplit s = split_axis(a.shape(), axis);
  const std::size_t m_ext = w.dim(1);
  Shape out_shape = a.shape();
  out_shape[axis] = m_ext;
  std::vector<double> out(s.outer * m_ext * s.inner, 0.0);
  contract_forward(a.values().data(), w.values().data(), out.data(), s, m_ext);
  return make_result(std::move(out_shape), std::move(out), {a, w}, [s, m_ext](Node& n) {
    const auto& x = n.inputs[0]->values;
    const auto& wv = n.inputs[1]->values;
    const auto& g = n.grad;
    if (wants_grad(n, 0)) {
      auto& gx = n.inputs[0]->grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* go = g.data() + o * m_ext * s.inner;
        double* gxo = gx.data() + o * s.extent * s.inner;
        for (std::size_t a = 0; a < s.extent; ++a) {
          double* gxr = gxo + a * s.inner;
          const double* wr = wv.data() + a * m_ext;
          if (s.inner == 1) {
            double acc = 0.0;
            for (std::size_t m = 0; m < m_ext; ++m) acc += go[m] * wr[m];
            gxr[0] += acc;
          } else {
            for (std::size_t m = 0; m < m_ext; ++m) {
              const double wm = wr[m];
              const double* grow = go + m * s.inner;
              for (std::size_t i = 0; i < s.inner; ++i) gxr[i] += wm * grow[i];
            }
          }
        }
      }
    }
    if (wants_grad(n, 1)) {
      auto& gw = n.inputs[1]->grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* go = g.data() + o * m_ext * s.inner;
        const double* xo = x.data() + o * s.extent * s.inner;
        for (std::size_t a = 0; a < s.extent; ++a) {
          const double* xr = xo + a * s.inner;
          double* gwr = gw.data() + a * m_ext;
          if (s.inner == 1) {
            const double xv = xr[0];
            for (std::size_t m = 0; m < m_ext; ++m) gwr[m] += xv * go[m];
          } else {
            for (std::size_t m = 0; m < m_ext; ++m) {
              const double* grow = go + m * s.inner;
              double acc = 0.0;
              for (std::size_t i = 0; i < s.inner; ++i) acc += xr[i] * grow[i];
              gwr[m] += acc;
            }
          }
        }
      }
    }
  }, op);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw UsageError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  return contract(a, b, 1, "matmul");
}

Tensor mode_product(const Tensor& a, const Tensor& w, std::size_t axis) {
  if (axis >= a.rank()) throw UsageError("mode_product: axis out of range for " + shape_str(a.shape()));
  if (w.rank() != 2 || w.dim(0) != a.dim(axis)) {
    throw UsageError("mode_product: weight " + shape_str(w.shape()) + " does not contract axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  return contract(a, w, axis, "mode_product");
}

// ---------------------------------------------------------------------------
// Softmax

Tensor softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw UsageError("softmax: axis out of range for " + shape_str(a.shape()));
  auto av = a.values();
  const AxisSplit s = split_axis(a.shape(), axis);
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = av[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, av[base + e * s.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(av[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  return make_result(a.shape(), std::move(out), {a}, [s](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += n.grad[base + e * s.inner] * n.values[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t k = base + e * s.inner;
          g[k] += n.values[k] * (n.grad[k] - dot);
        }
      }
    }
  }, "softmax");
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw UsageError("log_softmax: axis out of range for " + shape_str(a.shape()));
  auto av = a.values();
  const AxisSplit s = split_axis(a.shape(), axis);
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = av[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, av[base + e * s.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) total += std::exp(av[base + e * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] = av[base + e * s.inner] - lse;
    }
  }
  return make_result(a.shape(), std::move(out), {a}, [s](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double gsum = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) gsum += n.grad[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t k = base + e * s.inner;
          g[k] += n.grad[k] - std::exp(n.values[k]) * gsum;
        }
      }
    }
  }, "log_softmax");
}

// ---------------------------------------------------------------------------
// Temporal convolution

Tensor conv_time(const Tensor& a, const Tensor& kernel) {
  if (a.rank() != 3 || kernel.rank() != 3 || kernel.dim(1) != a.dim(1)) {
    throw UsageError("conv_time: incompatible shapes " + shape_str(a.shape()) + " and kernel " +
                     shape_str(kernel.shape()));
  }
  const std::size_t width = kernel.dim(0);
  if (width % 2 == 0) throw UsageError("conv_time: kernel width must be odd, got " + std::to_string(width));
  const std::size_t nodes = a.dim(0), cin = a.dim(1), steps = a.dim(2), cout = kernel.dim(2);
  const auto half = static_cast<std::ptrdiff_t>(width / 2);
  const auto T = static_cast<std::ptrdiff_t>(steps);
  auto x = a.values();
  auto k = kernel.values();
  std::vector<double> out(nodes * cout * steps, 0.0);

  // Valid output range [lo, hi) for tap j, so that t + j - half stays inside.
  auto range = [half, T](std::size_t j) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - half;
    return std::pair<std::ptrdiff_t, std::ptrdiff_t>{std::max<std::ptrdiff_t>(0, -shift),
                                                     std::min<std::ptrdiff_t>(T, T - shift)};
  };

  for (std::size_t n = 0; n < nodes; ++n) {
    for (std::size_t j = 0; j < width; ++j) {
      const auto [lo, hi] = range(j);
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - half;
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xr = x.data() + (n * cin + c) * steps;
        for (std::size_t o = 0; o < cout; ++o) {
          const double kv = k[(j * cin + c) * cout + o];
          if (kv == 0.0) continue;
          double* orow = out.data() + (n * cout + o) * steps;
          for (std::ptrdiff_t t = lo; t < hi; ++t) orow[t] += kv * xr[t + shift];
        }
      }
    }
  }
  return make_result({nodes, cout, steps}, std::move(out), {a, kernel},
                     [=](Node& nd) {
                       const auto& xv = nd.inputs[0]->values;
                       const auto& kv = nd.inputs[1]->values;
                       const bool gx_on = wants_grad(nd, 0);
                       const bool gk_on = wants_grad(nd, 1);
                       std::vector<double>* gx = gx_on ? &nd.inputs[0]->grad_buffer() : nullptr;
                       std::vector<double>* gk = gk_on ? &nd.inputs[1]->grad_buffer() : nullptr;
                       for (std::size_t n = 0; n < nodes; ++n) {
                         for (std::size_t j = 0; j < width; ++j) {
                           const auto [lo, hi] = range(j);
                           const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - half;
                           for (std::size_t c = 0; c < cin; ++c) {
                             const double* xr = xv.data() + (n * cin + c) * steps;
                             for (std::size_t o = 0; o < cout; ++o) {
                               const double* grow = nd.grad.data() + (n * cout + o) * steps;
                               const std::size_t ki = (j * cin + c) * cout + o;
                               if (gx) {
                                 const double w = kv[ki];
                                 double* gxr = gx->data() + (n * cin + c) * steps;
                                 for (std::ptrdiff_t t = lo; t < hi; ++t) gxr[t + shift] += w * grow[t];
                               }
                               if (gk) {
                                 double acc = 0.0;
                                 for (std::ptrdiff_t t = lo; t < hi; ++t) acc += xr[t + shift] * grow[t];
                                 (*gk)[ki] += acc;
                               }
                             }
                           }
                         }
                       }
                     },
                     "conv_time");
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

namespace {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

void check_eps(double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw UsageError("gradient_check: eps must lie in (0, 1e-2]");
}

double scalar_of(const Tensor& t) {
  if (t.numel() != 1) throw UsageError("gradient_check: function must return a scalar, got " + shape_str(t.shape()));
  return t.values()[0];
}

}  // namespace

double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  check_eps(eps);
  Tensor probe = Tensor::from(x.shape(), {x.values().begin(), x.values().end()}, true);
  return gradient_check_param([&] { return f(probe); }, probe, eps);
}

double gradient_check_param(const std::function<Tensor()>& loss, Tensor& param, double eps) {
  check_eps(eps);
  if (!param.requires_grad()) throw UsageError("gradient_check: parameter does not require grad");
  param.zero_grad();
  Tensor y = loss();
  scalar_of(y);
  backward(y);
  std::vector<double> analytic(param.grad().begin(), param.grad().end());

  auto values = param.mutable_values();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    double plus = 0.0, minus = 0.0;
    {
      NoGradGuard guard;
      values[i] = original + eps;
      plus = scalar_of(loss());
      values[i] = original - eps;
      minus = scalar_of(loss());
    }
    values[i] = original;
    worst = std::max(worst, relative_error(analytic[i], (plus - minus) / (2.0 * eps)));
  }
  return worst;
}

}  // namespace nowcast

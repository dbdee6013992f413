#include "sviqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "sviqa/error.hpp"
#include "sviqa/kernels.hpp"

namespace sviqa {

namespace {

thread_local bool t_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::Node>;

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input value");
  }
}

[[noreturn]] void dim_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

std::vector<double>& grad_buffer(detail::Node& n) {
  if (!n.grad) n.grad.emplace(n.data.size(), 0.0);
  return *n.grad;
}

// Builds an op output and, when recording, wires it to its inputs.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> fn) {
  auto out = std::make_shared<detail::Node>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  bool any = false;
  for (const auto& in : inputs) {
    if (in.requires_grad()) {
      if (in.node()->consumed) throw ReplayError("op input belongs to a graph already consumed by backward()");
      any = true;
    }
  }
  if (any && t_grad_enabled) {
    out->requires_grad = true;
    out->is_leaf = false;
    out->parents.reserve(inputs.size());
    for (auto& in : inputs) out->parents.push_back(in.node());
    out->backward_fn = std::move(fn);
  }
  return Tensor(std::move(out));
}

inline bool wants(const NodePtr& p) { return p->requires_grad; }

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  if (s.empty()) return 0;
  return s.size() == 1 ? 1 : s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = node_->shape;
  if (s.empty()) return 0;
  return s.size() == 1 ? s[0] : numel() / s[0];
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

void Tensor::set_requires_grad(bool v) {
  if (!node_->is_leaf) throw Error("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = v;
  if (!v) node_->grad.reset();
}

std::span<const double> Tensor::grad() const {
  if (!node_->grad) return {};
  return *node_->grad;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.node_->shape = node_->shape;
  t.node_->data = node_->data;
  t.node_->requires_grad = node_->requires_grad;
  t.node_->name = node_->name;
  return t;
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

ComputationRecord ComputationRecord::trace(const Tensor& root) {
  ComputationRecord rec;
  if (root.node()->is_leaf) return rec;
  std::unordered_set<const detail::Node*> seen;
  // Iterative post-order DFS: parents are emitted before children.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const NodePtr& p = node->parents[next++];
      if (!p->is_leaf && seen.insert(p.get()).second) stack.emplace_back(p, 0);
    } else {
      rec.ops_.push_back(node);
      stack.pop_back();
    }
  }
  return rec;
}

void backward(const Tensor& loss) {
  if (loss.node()->consumed) throw ReplayError("backward() called twice on the same graph; re-run the forward pass");
  if (loss.numel() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  auto record = ComputationRecord::trace(loss);
  if (record.empty()) throw ReplayError("backward(): empty computation record (loss does not depend on any trainable)");
  loss.node()->grad.emplace(1, 1.0);
  const auto& ops = record.ops();
  for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
    detail::Node& n = **it;
    if (n.grad && n.backward_fn) n.backward_fn(n);
  }
  for (const auto& n : ops) {
    n->grad.reset();
    n->parents.clear();
    n->backward_fn = nullptr;
    n->consumed = true;
  }
}

// ---- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) dim_error("matmul", a.shape(), b.shape());
  check_finite(a, "matmul");
  check_finite(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& g = *self.grad;
    const NodePtr& pa = self.parents[0];
    const NodePtr& pb = self.parents[1];
    if (wants(pa)) kernels::gemm_nt(g.data(), pb->data.data(), grad_buffer(*pa).data(), m, n, k);
    if (wants(pb)) kernels::gemm_tn(pa->data.data(), g.data(), grad_buffer(*pb).data(), m, k, n);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) dim_error("matmul_nt", a.shape(), b.shape());
  check_finite(a, "matmul_nt");
  check_finite(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& g = *self.grad;
    const NodePtr& pa = self.parents[0];
    const NodePtr& pb = self.parents[1];
    // dA = G·B, dB = Gᵀ·A
    if (wants(pa)) kernels::gemm_nn(g.data(), pb->data.data(), grad_buffer(*pa).data(), m, n, k);
    if (wants(pb)) kernels::gemm_tn(g.data(), pa->data.data(), grad_buffer(*pb).data(), m, n, k);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dim_error("add", a.shape(), b.shape());
  check_finite(a, "add");
  check_finite(b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& g = *self.grad;
    for (const auto& p : self.parents) {
      if (!wants(p)) continue;
      auto& gb = grad_buffer(*p);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_row");
  if (bias.numel() != x.cols()) dim_error("add_row", x.shape(), bias.shape());
  check_finite(x, "add_row");
  check_finite(bias, "add_row");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  return make_result(x.shape(), std::move(out), {x, bias}, [m, n](detail::Node& self) {
    const auto& g = *self.grad;
    if (wants(self.parents[0])) {
      auto& gx = grad_buffer(*self.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (wants(self.parents[1])) {
      auto& gb = grad_buffer(*self.parents[1]);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dim_error("mul", a.shape(), b.shape());
  check_finite(a, "mul");
  check_finite(b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& g = *self.grad;
    const NodePtr& pa = self.parents[0];
    const NodePtr& pb = self.parents[1];
    if (wants(pa)) {
      auto& ga = grad_buffer(*pa);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->data[i];
    }
    if (wants(pb)) {
      auto& gb = grad_buffer(*pb);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  check_finite(x, "scale");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * s;
  return make_result(x.shape(), std::move(out), {x}, [s](detail::Node& self) {
    const auto& g = *self.grad;
    auto& gx = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
  });
}

Tensor relu(const Tensor& x) {
  check_finite(x, "relu");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    const auto& g = *self.grad;
    const auto& xin = self.parents[0]->data;
    auto& gx = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xin[i] > 0.0) gx[i] += g[i];
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  check_finite(x, "gelu");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    const auto& g = *self.grad;
    const auto& xin = self.parents[0]->data;
    auto& gx = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xin[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      gx[i] += g[i] * d;
    }
  });
}

namespace {
Tensor softmax_impl(const Tensor& x, bool causal) {
  require_matrix(x, causal ? "causal_softmax_rows" : "softmax_rows");
  check_finite(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  kernels::softmax_rows(x.data().data(), out.data(), m, n, causal);
  return make_result(x.shape(), std::move(out), {x}, [m, n](detail::Node& self) {
    const auto& g = *self.grad;
    const auto& y = self.data;
    auto& gx = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}
}  // namespace

Tensor softmax_rows(const Tensor& x) { return softmax_impl(x, false); }
Tensor causal_softmax_rows(const Tensor& x) { return softmax_impl(x, true); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_matrix(x, "layer_norm");
  if (!(eps > 0.0)) throw ConfigError("layer_norm: epsilon must be > 0");
  if (gain.numel() != x.cols()) dim_error("layer_norm", x.shape(), gain.shape());
  if (bias.numel() != x.cols()) dim_error("layer_norm", x.shape(), bias.shape());
  check_finite(x, "layer_norm");
  check_finite(gain, "layer_norm");
  check_finite(bias, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> xhat(m * n), inv_std(m);
  kernels::normalize_rows(x.data().data(), xhat.data(), inv_std.data(), m, n, eps);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xhat[i * n + j] * gain.data()[j] + bias.data()[j];
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
                       const auto& g = *self.grad;
                       const NodePtr& px = self.parents[0];
                       const NodePtr& pg = self.parents[1];
                       const NodePtr& pb = self.parents[2];
                       if (wants(pg)) {
                         auto& gg = grad_buffer(*pg);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
                       }
                       if (wants(pb)) {
                         auto& gb = grad_buffer(*pb);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                       }
                       if (wants(px)) {
                         auto& gx = grad_buffer(*px);
                         const auto& gain_v = pg->data;
                         const double inv_n = 1.0 / static_cast<double>(n);
                         for (std::size_t i = 0; i < m; ++i) {
                           double s1 = 0.0, s2 = 0.0;
                           for (std::size_t j = 0; j < n; ++j) {
                             const double dxh = g[i * n + j] * gain_v[j];
                             s1 += dxh;
                             s2 += dxh * xhat[i * n + j];
                           }
                           for (std::size_t j = 0; j < n; ++j) {
                             const double dxh = g[i * n + j] * gain_v[j];
                             gx[i * n + j] += inv_std[i] * (dxh - s1 * inv_n - xhat[i * n + j] * s2 * inv_n);
                           }
                         }
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  if (ids.empty()) throw EmptyInputError("embedding: empty id list");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " outside [0, " + std::to_string(v) + ")");
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table}, [d, idv = std::move(idv)](detail::Node& self) {
    const auto& g = *self.grad;
    auto& gt = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(idv[i]) * d + j] += g[i * d + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != n) dim_error("concat_rows", parts[0].shape(), p.shape());
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  return make_result({m, n}, std::move(out), parts, [sizes = std::move(sizes)](detail::Node& self) {
    const auto& g = *self.grad;
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (wants(self.parents[k])) {
        auto& gp = grad_buffer(*self.parents[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += g[off + i];
      }
      off += sizes[k];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != m) dim_error("concat_cols", parts[0].shape(), p.shape());
    widths.push_back(p.cols());
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto w = widths[k];
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(parts[k].data().begin() + static_cast<std::ptrdiff_t>(i * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(i * n + c0));
    c0 += w;
  }
  return make_result({m, n}, std::move(out), parts, [m, n, widths = std::move(widths)](detail::Node& self) {
    const auto& g = *self.grad;
    std::size_t c = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const auto w = widths[k];
      if (wants(self.parents[k])) {
        auto& gp = grad_buffer(*self.parents[k]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + c + j];
      }
      c += w;
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  if (count == 0 || begin + count > x.rows())
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_str(x.shape()));
  const std::size_t n = x.cols();
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return make_result({count, n}, std::move(out), {x}, [begin, n](detail::Node& self) {
    const auto& g = *self.grad;
    auto& gx = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  if (count == 0 || begin + count > x.cols())
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.data()[i * n + begin + j];
  return make_result({m, count}, std::move(out), {x}, [m, n, begin, count](detail::Node& self) {
    const auto& g = *self.grad;
    auto& gx = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += g[i * count + j];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  if (rows.empty()) throw EmptyInputError("gather_rows: no rows requested");
  const std::size_t n = x.cols();
  std::vector<double> out(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), n}, std::move(out), {x}, [n, idx = std::move(idx)](detail::Node& self) {
    const auto& g = *self.grad;
    auto& gx = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gx[idx[i] * n + j] += g[i * n + j];
  });
}

Tensor sum(const Tensor& x) {
  check_finite(x, "sum");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, [](detail::Node& self) {
    const double g = (*self.grad)[0];
    auto& gx = grad_buffer(*self.parents[0]);
    for (auto& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& mask) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n || mask.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(n) + " logit rows but " + std::to_string(targets.size()) +
                         " targets and " + std::to_string(mask.size()) + " mask entries");
  check_finite(logits, "cross_entropy");
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " outside [0, " + std::to_string(v) + ")");
  }
  if (count == 0) throw EmptyLossError("cross_entropy: mask selects no positions");
  const auto& x = logits.data();
  std::vector<double> probs(n * v, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double* row = x.data() + i * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    total += lse - row[targets[i]];
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - lse);
  }
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result({1}, {total * inv}, {logits},
                     [n, v, inv, mask, tg = std::move(tg), probs = std::move(probs)](detail::Node& self) {
                       const double g = (*self.grad)[0] * inv;
                       auto& gx = grad_buffer(*self.parents[0]);
                       for (std::size_t i = 0; i < n; ++i) {
                         if (!mask[i]) continue;
                         for (std::size_t j = 0; j < v; ++j) gx[i * v + j] += g * probs[i * v + j];
                         gx[i * v + static_cast<std::size_t>(tg[i])] -= g;
                       }
                     });
}

}  // namespace sviqa

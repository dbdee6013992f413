#pragma once

// Dense f64 tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Ops whose inputs require
// gradients link their output to the inputs together with a backward rule;
// backward() orders that graph topologically, replays it once, and then
// releases it. Ops on inputs that do not require gradients (or inside a
// NoGradGuard) record nothing.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sviqa {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;
  std::optional<std::vector<double>> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  std::string name;
};
}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double v);
  // 1×n row or n×1 column helpers are spelled out with Shape at call sites.

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // Matrix view: rank-1 tensors are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node_->data; }
  // Write access for leaves (parameter updates, test perturbations).
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v);
  bool is_leaf() const { return node_->is_leaf; }

  bool has_grad() const { return node_->grad.has_value(); }
  std::span<const double> grad() const;
  void clear_grad() { node_->grad.reset(); }

  const std::string& name() const { return node_->name; }
  void set_name(std::string n) { node_->name = std::move(n); }

  // Detached deep copy (fresh storage, no graph, same requires_grad).
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// Ordered list of the ops reachable from a root, inputs before outputs.
class ComputationRecord {
 public:
  static ComputationRecord trace(const Tensor& root);
  std::size_t size() const { return ops_.size(); }
  bool empty() const { return ops_.empty(); }
  const std::vector<std::shared_ptr<detail::Node>>& ops() const { return ops_; }

 private:
  std::vector<std::shared_ptr<detail::Node>> ops_;
};

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// the scalar loss, then releases the graph. A second call on the same loss
// throws ReplayError.
void backward(const Tensor& loss);

// ---- primitive ops -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m×k]·[k×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m×k]·[n×k]ᵀ
Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor add_row(const Tensor& x, const Tensor& bias); // x[m×n] + bias[n] on every row
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise
Tensor scale(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor softmax_rows(const Tensor& x);
// Row i keeps columns 0..i; masked entries are exactly 0.
Tensor causal_softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
// Rows gathered by index (repeats allowed).
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean over masked positions of -log softmax(logits[i])[targets[i]].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& mask);

}  // namespace sviqa

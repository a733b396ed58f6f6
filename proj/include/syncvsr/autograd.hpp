#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Graph records nodes in creation order; backward() walks them in reverse,
// so every op only needs to push gradient into its inputs. Parameter leaves
// point at externally owned values and flush their gradient into a sink.

#include "syncvsr/util.hpp"

#include <functional>
#include <vector>

namespace syncvsr::ag {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, Var self, const Mat& grad)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var constant(Mat value);
  /// Leaf that aliases `value`; gradient is added to `*sink` on backward (sink may be null).
  Var parameter(const Mat& value, Mat* sink);

  const Mat& value(Var v) const;
  double scalar(Var v) const { return value(v)(0, 0); }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var emit(Mat value, std::initializer_list<Var> inputs, Backward backward);
  Var emit(Mat value, const std::vector<Var>& inputs, Backward backward);

  template <class Expr>
  void accumulate(Var v, const Expr& g) {
    auto& node = nodes_[static_cast<std::size_t>(v.id)];
    if (!node.needs_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  /// Seeds d(root)/d(root) = seed and propagates to all reachable leaves.
  void backward(Var root, double seed = 1.0);

 private:
  struct Node {
    Mat owned;
    const Mat* external = nullptr;
    Mat grad;
    Mat* sink = nullptr;
    Backward backward;
    bool needs_grad = false;
  };
  bool grad_enabled_;
  std::vector<Node> nodes_;
};

Var matmul(Graph& g, Var a, Var b);
/// a · bᵀ
Var matmul_nt(Graph& g, Var a, Var b);
Var add(Graph& g, Var a, Var b);
/// Adds a 1×n row to every row of a.
Var add_row(Graph& g, Var a, Var row);
Var scale(Graph& g, Var a, double s);
/// Elementwise product with a constant matrix (dropout masks).
Var mul_const(Graph& g, Var a, const Mat& m);
Var gelu(Graph& g, Var a);
Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps = 1e-5);
/// Row-wise softmax; with `causal`, entries above the diagonal are forced to 0.
Var softmax_rows(Graph& g, Var x, bool causal);
Var slice_cols(Graph& g, Var x, int start, int count);
Var concat_cols(Graph& g, const std::vector<Var>& parts);
/// Mean over rows where mask[t] is set (all rows when mask is empty); 1×n.
Var mean_rows(Graph& g, Var x, const std::vector<bool>& mask);
/// Rows with mask[t] set are replaced by `row` (1×n).
Var replace_rows(Graph& g, Var x, const std::vector<bool>& mask, Var row);
Var gather_rows(Graph& g, Var table, const std::vector<int>& indices);
/// Scalar node whose value and input gradient were computed externally.
Var scalar_loss(Graph& g, Var x, double value, Mat grad_x);
/// Scalar node `value` with d/da = wa, d/db = wb; either input may be invalid.
Var affine_scalars(Graph& g, Var a, double wa, Var b, double wb, double value);

}  // namespace syncvsr::ag

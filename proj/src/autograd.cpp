#include "syncvsr/autograd.hpp"

#include <cmath>
#include <numbers>

namespace syncvsr::ag {

Var Graph::constant(Mat value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Graph::parameter(const Mat& value, Mat* sink) {
  Node n;
  n.external = &value;
  n.sink = sink;
  n.needs_grad = grad_enabled_ && sink != nullptr;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

const Mat& Graph::value(Var v) const {
  const auto& n = nodes_[static_cast<std::size_t>(v.id)];
  return n.external ? *n.external : n.owned;
}

Var Graph::emit(Mat value, std::initializer_list<Var> inputs, Backward backward) {
  return emit(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Graph::emit(Mat value, const std::vector<Var>& inputs, Backward backward) {
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (Var in : inputs) {
      if (in.valid() && needs_grad(in)) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

void Graph::backward(Var root, double seed) {
  require(grad_enabled_, ErrorKind::InvalidArgument, "backward on a graph without gradients");
  require(value(root).size() == 1, ErrorKind::ShapeMismatch, "backward root must be scalar");
  auto& r = nodes_[static_cast<std::size_t>(root.id)];
  if (!r.needs_grad) return;
  r.grad = Mat::Constant(1, 1, seed);
  for (int i = root.id; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.grad.size() == 0) continue;
    if (node.backward) node.backward(*this, Var{i}, node.grad);
    if (node.sink) *node.sink += node.grad;
    node.grad.resize(0, 0);
  }
}

Var matmul(Graph& g, Var a, Var b) {
  const Mat& A = g.value(a);
  const Mat& B = g.value(b);
  require(A.cols() == B.rows(), ErrorKind::ShapeMismatch, "matmul inner dimension");
  return g.emit(A * B, {a, b}, [a, b](Graph& gr, Var, const Mat& G) {
    if (gr.needs_grad(a)) gr.accumulate(a, G * gr.value(b).transpose());
    if (gr.needs_grad(b)) gr.accumulate(b, gr.value(a).transpose() * G);
  });
}

Var matmul_nt(Graph& g, Var a, Var b) {
  const Mat& A = g.value(a);
  const Mat& B = g.value(b);
  require(A.cols() == B.cols(), ErrorKind::ShapeMismatch, "matmul_nt inner dimension");
  return g.emit(A * B.transpose(), {a, b}, [a, b](Graph& gr, Var, const Mat& G) {
    if (gr.needs_grad(a)) gr.accumulate(a, G * gr.value(b));
    if (gr.needs_grad(b)) gr.accumulate(b, G.transpose() * gr.value(a));
  });
}

Var add(Graph& g, Var a, Var b) {
  const Mat& A = g.value(a);
  const Mat& B = g.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(), ErrorKind::ShapeMismatch, "add shapes");
  return g.emit(A + B, {a, b}, [a, b](Graph& gr, Var, const Mat& G) {
    gr.accumulate(a, G);
    gr.accumulate(b, G);
  });
}

Var add_row(Graph& g, Var a, Var row) {
  const Mat& A = g.value(a);
  const Mat& R = g.value(row);
  require(R.rows() == 1 && R.cols() == A.cols(), ErrorKind::ShapeMismatch, "add_row shapes");
  Mat out = A.rowwise() + R.row(0);
  return g.emit(std::move(out), {a, row}, [a, row](Graph& gr, Var, const Mat& G) {
    gr.accumulate(a, G);
    if (gr.needs_grad(row)) gr.accumulate(row, Mat(G.colwise().sum()));
  });
}

Var scale(Graph& g, Var a, double s) {
  return g.emit(g.value(a) * s, {a}, [a, s](Graph& gr, Var, const Mat& G) { gr.accumulate(a, G * s); });
}

Var mul_const(Graph& g, Var a, const Mat& m) {
  Mat out = g.value(a).cwiseProduct(m);
  return g.emit(std::move(out), {a}, [a, m](Graph& gr, Var, const Mat& G) {
    gr.accumulate(a, G.cwiseProduct(m));
  });
}

Var gelu(Graph& g, Var a) {
  const Mat& X = g.value(a);
  Mat out = X.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); });
  return g.emit(std::move(out), {a}, [a](Graph& gr, Var, const Mat& G) {
    const Mat& X = gr.value(a);
    Mat d = X.unaryExpr([](double x) {
      const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    });
    gr.accumulate(a, G.cwiseProduct(d));
  });
}

Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps) {
  const Mat& X = g.value(x);
  const Mat& gm = g.value(gain);
  const Mat& bm = g.value(bias);
  const auto n = X.cols();
  require(gm.cols() == n && bm.cols() == n, ErrorKind::ShapeMismatch, "layer_norm shapes");
  Mat xhat(X.rows(), n);
  Eigen::VectorXd inv_std(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mu) * inv_std(r);
  }
  Mat out = (xhat.array().rowwise() * gm.row(0).array()).rowwise() + bm.row(0).array();
  return g.emit(std::move(out), {x, gain, bias},
                [x, gain, bias, xhat, inv_std](Graph& gr, Var, const Mat& G) {
                  if (gr.needs_grad(gain)) gr.accumulate(gain, Mat(G.cwiseProduct(xhat).colwise().sum()));
                  if (gr.needs_grad(bias)) gr.accumulate(bias, Mat(G.colwise().sum()));
                  if (!gr.needs_grad(x)) return;
                  const Mat& gm = gr.value(gain);
                  Mat dxhat = G.array().rowwise() * gm.row(0).array();
                  Mat dx(G.rows(), G.cols());
                  for (Eigen::Index r = 0; r < G.rows(); ++r) {
                    const double m1 = dxhat.row(r).mean();
                    const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(G.cols());
                    dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                  }
                  gr.accumulate(x, dx);
                });
}

Var softmax_rows(Graph& g, Var x, bool causal) {
  const Mat& X = g.value(x);
  Mat P = Mat::Zero(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const Eigen::Index width = causal ? std::min<Eigen::Index>(r + 1, X.cols()) : X.cols();
    const double mx = X.row(r).head(width).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < width; ++c) {
      P(r, c) = std::exp(X(r, c) - mx);
      sum += P(r, c);
    }
    P.row(r).head(width) /= sum;
  }
  return g.emit(P, {x}, [x](Graph& gr, Var self, const Mat& G) {
    const Mat& P = gr.value(self);
    Eigen::VectorXd dots = G.cwiseProduct(P).rowwise().sum();
    Mat dx = P.cwiseProduct(G.colwise() - dots);
    gr.accumulate(x, dx);
  });
}

Var slice_cols(Graph& g, Var x, int start, int count) {
  const Mat& X = g.value(x);
  require(start >= 0 && start + count <= X.cols(), ErrorKind::ShapeMismatch, "slice_cols range");
  Mat out = X.middleCols(start, count);
  return g.emit(std::move(out), {x}, [x, start, count](Graph& gr, Var, const Mat& G) {
    const Mat& X = gr.value(x);
    Mat dx = Mat::Zero(X.rows(), X.cols());
    dx.middleCols(start, count) = G;
    gr.accumulate(x, dx);
  });
}

Var concat_cols(Graph& g, const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::InvalidArgument, "concat of nothing");
  const auto rows = g.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    require(g.value(p).rows() == rows, ErrorKind::ShapeMismatch, "concat_cols rows");
    cols += g.value(p).cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    const Mat& v = g.value(p);
    out.middleCols(at, v.cols()) = v;
    at += v.cols();
  }
  return g.emit(std::move(out), parts, [parts](Graph& gr, Var, const Mat& G) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      const auto c = gr.value(p).cols();
      if (gr.needs_grad(p)) gr.accumulate(p, Mat(G.middleCols(at, c)));
      at += c;
    }
  });
}

Var mean_rows(Graph& g, Var x, const std::vector<bool>& mask) {
  const Mat& X = g.value(x);
  require(mask.empty() || static_cast<Eigen::Index>(mask.size()) == X.rows(), ErrorKind::ShapeMismatch,
          "mean_rows mask length");
  std::vector<Eigen::Index> rows;
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    if (mask.empty() || mask[static_cast<std::size_t>(r)]) rows.push_back(r);
  }
  require(!rows.empty(), ErrorKind::InvalidArgument, "mean over an empty row set");
  Mat out = Mat::Zero(1, X.cols());
  for (auto r : rows) out += X.row(r);
  const double inv = 1.0 / static_cast<double>(rows.size());
  out *= inv;
  return g.emit(std::move(out), {x}, [x, rows, inv](Graph& gr, Var, const Mat& G) {
    const Mat& X = gr.value(x);
    Mat dx = Mat::Zero(X.rows(), X.cols());
    for (auto r : rows) dx.row(r) = G.row(0) * inv;
    gr.accumulate(x, dx);
  });
}

Var replace_rows(Graph& g, Var x, const std::vector<bool>& mask, Var row) {
  const Mat& X = g.value(x);
  const Mat& R = g.value(row);
  require(static_cast<Eigen::Index>(mask.size()) == X.rows(), ErrorKind::ShapeMismatch, "replace_rows mask");
  require(R.rows() == 1 && R.cols() == X.cols(), ErrorKind::ShapeMismatch, "replace_rows row shape");
  Mat out = X;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask[t]) out.row(static_cast<Eigen::Index>(t)) = R.row(0);
  }
  return g.emit(std::move(out), {x, row}, [x, row, mask](Graph& gr, Var, const Mat& G) {
    Mat dx = G;
    Mat drow = Mat::Zero(1, G.cols());
    for (std::size_t t = 0; t < mask.size(); ++t) {
      if (mask[t]) {
        drow += G.row(static_cast<Eigen::Index>(t));
        dx.row(static_cast<Eigen::Index>(t)).setZero();
      }
    }
    gr.accumulate(x, dx);
    gr.accumulate(row, drow);
  });
}

Var gather_rows(Graph& g, Var table, const std::vector<int>& indices) {
  const Mat& W = g.value(table);
  Mat out(static_cast<Eigen::Index>(indices.size()), W.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < W.rows(), ErrorKind::InvalidArgument, "gather index out of range");
    out.row(static_cast<Eigen::Index>(i)) = W.row(indices[i]);
  }
  return g.emit(std::move(out), {table}, [table, indices](Graph& gr, Var, const Mat& G) {
    const Mat& W = gr.value(table);
    Mat dw = Mat::Zero(W.rows(), W.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) dw.row(indices[i]) += G.row(static_cast<Eigen::Index>(i));
    gr.accumulate(table, dw);
  });
}

Var scalar_loss(Graph& g, Var x, double value, Mat grad_x) {
  require(grad_x.rows() == g.value(x).rows() && grad_x.cols() == g.value(x).cols(), ErrorKind::ShapeMismatch,
          "scalar_loss gradient shape");
  return g.emit(Mat::Constant(1, 1, value), {x}, [x, grad_x = std::move(grad_x)](Graph& gr, Var, const Mat& G) {
    gr.accumulate(x, grad_x * G(0, 0));
  });
}

Var affine_scalars(Graph& g, Var a, double wa, Var b, double wb, double value) {
  std::vector<Var> inputs;
  if (a.valid()) inputs.push_back(a);
  if (b.valid()) inputs.push_back(b);
  return g.emit(Mat::Constant(1, 1, value), inputs, [a, wa, b, wb](Graph& gr, Var, const Mat& G) {
    if (a.valid()) gr.accumulate(a, Mat::Constant(1, 1, wa * G(0, 0)));
    if (b.valid()) gr.accumulate(b, Mat::Constant(1, 1, wb * G(0, 0)));
  });
}

}  // namespace syncvsr::ag

#include "syncvsr/losses.hpp"

#include <cmath>
#include <limits>

namespace syncvsr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

void require_finite(const Mat& logits, const char* what) {
  require(logits.allFinite(), ErrorKind::NonFinite, std::string(what) + ": non-finite logits");
}

// Cross-entropy of one row segment against `target`; adds (softmax − onehot)·weight into grad.
double row_ce(const Eigen::Ref<const RowVec>& logits, int target, Eigen::Ref<RowVec> grad, double weight) {
  const double mx = logits.maxCoeff();
  const RowVec shifted = logits.array() - mx;
  const RowVec e = shifted.array().exp();
  const double sum = e.sum();
  const double lse = std::log(sum);
  grad += (e / sum) * weight;
  grad(target) -= weight;
  return lse - shifted(target);
}

LossResult sync_ce(const Mat& logits, std::span<const std::uint16_t> grid, const std::vector<bool>* mask, int pad_id,
                   int R) {
  require(R >= 1 && logits.cols() % R == 0, ErrorKind::ShapeMismatch, "sync logits width not divisible by R");
  const auto T = logits.rows();
  const int V = static_cast<int>(logits.cols()) / R;
  require(grid.size() == static_cast<std::size_t>(T * R), ErrorKind::ShapeMismatch,
          "token grid has " + std::to_string(grid.size()) + " entries, logits expect " + std::to_string(T * R));
  require_finite(logits, "sync_loss");
  std::size_t count = 0;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (mask && !(*mask)[static_cast<std::size_t>(t)]) continue;
    for (int r = 0; r < R; ++r) {
      const int z = grid[static_cast<std::size_t>(t * R + r)];
      if (z == pad_id) continue;
      require(z >= 0 && z < V, ErrorKind::InvalidArgument, "token " + std::to_string(z) + " outside sync vocabulary");
      ++count;
    }
  }
  require(count > 0, ErrorKind::InvalidArgument, "every supervised token position is padding");
  const double w = 1.0 / static_cast<double>(count);
  LossResult out;
  out.grad = Mat::Zero(T, logits.cols());
  double total = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (mask && !(*mask)[static_cast<std::size_t>(t)]) continue;
    for (int r = 0; r < R; ++r) {
      const int z = grid[static_cast<std::size_t>(t * R + r)];
      if (z == pad_id) continue;
      total += row_ce(logits.row(t).segment(r * V, V), z, out.grad.row(t).segment(r * V, V), w);
    }
  }
  out.value = total * w;
  return out;
}

}  // namespace

Mat log_softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

LossResult word_ce(const Mat& logits, int label) {
  require(logits.rows() == 1, ErrorKind::ShapeMismatch, "word_ce expects a single row of logits");
  require(label >= 0 && label < logits.cols(), ErrorKind::InvalidArgument,
          "label " + std::to_string(label) + " outside " + std::to_string(logits.cols()) + " classes");
  require_finite(logits, "word_ce");
  LossResult out;
  out.grad = Mat::Zero(1, logits.cols());
  out.value = row_ce(logits.row(0), label, out.grad.row(0), 1.0);
  return out;
}

int ctc_min_frames(std::span<const int> target) {
  int n = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++n;
  }
  return n;
}

LossResult ctc_loss(const Mat& logits, std::span<const int> target) {
  const auto T = logits.rows();
  const int blank = static_cast<int>(logits.cols()) - 1;
  require(blank >= 0 && T >= 1, ErrorKind::ShapeMismatch, "ctc_loss needs at least one frame and one column");
  for (int y : target) {
    require(y >= 0 && y < blank, ErrorKind::InvalidArgument, "CTC target symbol " + std::to_string(y) + " out of range");
  }
  const int need = ctc_min_frames(target);
  require(T >= need, ErrorKind::InfeasibleTarget,
          "target needs " + std::to_string(need) + " frames, only " + std::to_string(T) + " available");
  require_finite(logits, "ctc_loss");

  const Mat logp = log_softmax_rows(logits);
  const int S = 2 * static_cast<int>(target.size()) + 1;
  std::vector<int> ext(static_cast<std::size_t>(S), blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  auto skip_ok = [&](int s) { return s >= 2 && ext[static_cast<std::size_t>(s)] != blank && ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s - 2)]; };

  Mat alpha = Mat::Constant(T, S, kNegInf);
  Mat beta = Mat::Constant(T, S, kNegInf);
  alpha(0, 0) = logp(0, blank);
  if (S > 1) alpha(0, 1) = logp(0, ext[1]);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (skip_ok(s)) a = log_add(a, alpha(t - 1, s - 2));
      if (a != kNegInf) alpha(t, s) = a + logp(t, ext[static_cast<std::size_t>(s)]);
    }
  }
  beta(T - 1, S - 1) = logp(T - 1, ext[static_cast<std::size_t>(S - 1)]);
  if (S > 1) beta(T - 1, S - 2) = logp(T - 1, ext[static_cast<std::size_t>(S - 2)]);
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < S && skip_ok(s + 2)) b = log_add(b, beta(t + 1, s + 2));
      if (b != kNegInf) beta(t, s) = b + logp(t, ext[static_cast<std::size_t>(s)]);
    }
  }
  double log_prob = alpha(T - 1, S - 1);
  if (S > 1) log_prob = log_add(log_prob, alpha(T - 1, S - 2));

  LossResult out;
  out.value = -log_prob;
  out.grad = logp.array().exp();
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      const double a = alpha(t, s);
      const double b = beta(t, s);
      if (a == kNegInf || b == kNegInf) continue;
      const int k = ext[static_cast<std::size_t>(s)];
      out.grad(t, k) -= std::exp(a + b - logp(t, k) - log_prob);
    }
  }
  return out;
}

LossResult lm_loss(const Mat& logits, std::span<const int> target) {
  require(logits.rows() == static_cast<Eigen::Index>(target.size()) && !target.empty(), ErrorKind::ShapeMismatch,
          "decoder logits have " + std::to_string(logits.rows()) + " rows for a target of length " +
              std::to_string(target.size()));
  require_finite(logits, "lm_loss");
  const double w = 1.0 / static_cast<double>(target.size());
  LossResult out;
  out.grad = Mat::Zero(logits.rows(), logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    require(target[i] >= 0 && target[i] < logits.cols(), ErrorKind::InvalidArgument, "decoder target out of range");
    total += row_ce(logits.row(r), target[i], out.grad.row(r), w);
  }
  out.value = total * w;
  return out;
}

double task_loss(double l_ctc, double l_lm, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::InvalidArgument, "alpha must lie in [0, 1]");
  return alpha * l_ctc + (1.0 - alpha) * l_lm;
}

double total_loss(double l_task, double l_sync, double lambda) {
  require(lambda >= 0.0, ErrorKind::InvalidArgument, "lambda must be non-negative");
  return l_task + lambda * l_sync;
}

LossResult sync_loss(const Mat& logits, std::span<const std::uint16_t> grid, int pad_id, int tokens_per_frame) {
  return sync_ce(logits, grid, nullptr, pad_id, tokens_per_frame);
}

LossResult masked_sync_loss(const Mat& logits, std::span<const std::uint16_t> grid, const std::vector<bool>& mask,
                            int pad_id, int tokens_per_frame) {
  require(static_cast<Eigen::Index>(mask.size()) == logits.rows(), ErrorKind::ShapeMismatch, "mask length");
  bool any = false;
  for (bool m : mask) any = any || m;
  require(any, ErrorKind::InvalidArgument, "masked_sync_loss needs at least one masked frame");
  return sync_ce(logits, grid, &mask, pad_id, tokens_per_frame);
}

}  // namespace syncvsr

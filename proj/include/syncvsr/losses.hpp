#pragma once

// Task, CTC, decoder and audio-token synchronization losses.
//
// Each loss takes raw logits and returns its value together with the exact
// gradient with respect to those logits, so the model can splice it into a
// graph as a single node.

#include "syncvsr/util.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace syncvsr {

struct LossResult {
  double value = 0.0;
  Mat grad;  // same shape as the logits
};

/// Numerically stable log-softmax of every row.
Mat log_softmax_rows(const Mat& logits);

/// −log softmax(logits)[label] for a 1×n row of logits.
LossResult word_ce(const Mat& logits, int label);

/// Standard CTC: −log Σ over blank-interleaved paths collapsing to `target`.
/// `logits` is T×(G+1) with blank at column G. Throws InfeasibleTarget when T is too short.
LossResult ctc_loss(const Mat& logits, std::span<const int> target);

/// Minimum number of frames CTC needs for `target` (length plus adjacent repeats).
int ctc_min_frames(std::span<const int> target);

/// Mean over positions of −log softmax at the target symbol. Rows of `logits` align with `target`.
LossResult lm_loss(const Mat& logits, std::span<const int> target);

/// α·l_ctc + (1−α)·l_lm, α ∈ [0, 1].
double task_loss(double l_ctc, double l_lm, double alpha);

/// l_task + λ·l_sync, λ ≥ 0.
double total_loss(double l_task, double l_sync, double lambda);

/// Mean cross-entropy over non-pad tokens. `logits` is T×(R·V), block r of row t scores token (t, r);
/// `grid` holds T×R targets row-major.
LossResult sync_loss(const Mat& logits, std::span<const std::uint16_t> grid, int pad_id, int tokens_per_frame = 4);

/// sync_loss restricted to frames with mask[t] set.
LossResult masked_sync_loss(const Mat& logits, std::span<const std::uint16_t> grid, const std::vector<bool>& mask,
                            int pad_id, int tokens_per_frame = 4);

struct LossBundle {
  double l_word = 0.0;
  double l_ctc = 0.0;
  double l_lm = 0.0;
  double l_task = 0.0;
  double l_sync = 0.0;
  double l_total = 0.0;
  double alpha = 0.0;
  double lambda = 0.0;
};

}  // namespace syncvsr

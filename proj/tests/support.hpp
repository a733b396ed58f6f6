#pragma once

// Shared fixtures and reference implementations for the test binaries.

#include "syncvsr/corpus.hpp"
#include "syncvsr/losses.hpp"
#include "syncvsr/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace syncvsr::testing {

inline const nlohmann::json& frozen() {
  static const nlohmann::json j = nlohmann::json::parse(read_file(SYNCVSR_FROZEN_ORACLES));
  return j;
}

inline Mat to_mat(const nlohmann::json& rows) {
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.at(0).size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c].get<double>();
  }
  return m;
}

inline Mat random_mat(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// −log Σ over every length-T path that collapses to `target`, by exhaustive enumeration.
inline double ctc_bruteforce(const Mat& logits, const std::vector<int>& target) {
  const int T = static_cast<int>(logits.rows());
  const int C = static_cast<int>(logits.cols());
  const int blank = C - 1;
  const Mat logp = log_softmax_rows(logits);
  std::vector<int> path(static_cast<std::size_t>(T), 0);
  double total = 0.0;
  while (true) {
    std::vector<int> collapsed;
    int prev = -1;
    for (int s : path) {
      if (s != prev && s != blank) collapsed.push_back(s);
      prev = s;
    }
    if (collapsed == target) {
      double lp = 0.0;
      for (int t = 0; t < T; ++t) lp += logp(t, path[static_cast<std::size_t>(t)]);
      total += std::exp(lp);
    }
    int t = T - 1;
    while (t >= 0 && ++path[static_cast<std::size_t>(t)] == C) path[static_cast<std::size_t>(t--)] = 0;
    if (t < 0) break;
  }
  return -std::log(total);
}

/// Central finite differences of f over every entry of x.
inline Mat numeric_grad(const std::function<double()>& f, Mat& x, double eps) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + eps;
    const double up = f();
    x.data()[i] = keep - eps;
    const double down = f();
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// ‖a − n‖ / max(‖a‖, ‖n‖); both-zero tensors count as exact.
inline double relative_error(const Mat& analytic, const Mat& numeric) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  if (scale < 1e-12) return (analytic - numeric).norm();
  return (analytic - numeric).norm() / scale;
}

/// d_model=8, one encoder layer, tiny heads and vocabularies.
inline EncoderConfig tiny_config() {
  EncoderConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ff_dim = 12;
  c.dropout = 0.0;
  c.max_frames = 16;
  c.visual_dim = 3;
  c.use_word_boundary = true;
  c.sync_vocab = 6;
  c.n_classes = 5;
  c.graphemes = 4;
  c.decoder_layers = 1;
  c.max_word_length = 2;
  return c;
}

/// A hand-built T-frame sample compatible with tiny_config().
inline Sample tiny_sample(int T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Sample s;
  s.num_frames = T;
  s.visual_dim = 3;
  for (int i = 0; i < T * 3; ++i) s.visual_frames.push_back(static_cast<float>(n(rng)));
  for (int t = 0; t < T; ++t) s.word_boundary.push_back(t >= 1 && t <= 2 ? 1 : 0);
  for (int i = 0; i < T * kTokensPerFrame; ++i) s.token_grid.push_back(static_cast<std::uint16_t>(i % 7 == 3 ? 5 : (i * 3) % 5));
  s.label = {2};
  return s;
}

/// Small world that builds quickly in tests.
inline WorldConfig small_world_config() {
  WorldConfig c;
  c.num_phonemes = 10;
  c.num_visemes = 4;
  c.num_words = 12;
  c.homophene_pairs = 3;
  c.max_word_length = 4;
  c.visual_dim = 6;
  c.audio_dim = 5;
  c.audio_vocab = 16;
  return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("syncvsr_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace syncvsr::testing

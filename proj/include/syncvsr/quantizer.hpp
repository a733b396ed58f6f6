#pragma once

// k-means audio tokenizer and the 100Hz → 25fps token alignment.

#include "syncvsr/util.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace syncvsr {

struct Codebook {
  Mat centroids;  // V × d_a
  std::uint64_t seed = 0;
  double fit_distortion = 0.0;
  /// Mean distortion after each assignment step, in iteration order.
  std::vector<double> distortion_history;

  int size() const { return static_cast<int>(centroids.rows()); }
  int dim() const { return static_cast<int>(centroids.cols()); }
};

/// Lloyd's algorithm with k-means++ seeding. Requires features.rows() >= V >= 1.
Codebook fit_codebook(const Mat& features, int V, int iters, std::uint64_t seed);

/// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
std::vector<int> quantize(const Codebook& codebook, const Mat& features);

/// Mean squared distance of each feature to its nearest centroid.
double mean_distortion(const Codebook& codebook, const Mat& features);

struct AlignedTokens {
  int num_frames = 0;
  std::vector<std::uint16_t> grid;  // num_frames × 4
  int padded = 0;
  int truncated = 0;
};

/// Row t takes tokens[4t .. 4t+3]; missing positions get `pad_id`, extras are dropped.
AlignedTokens align_tokens(std::span<const int> tokens, int num_frames, int pad_id);

void save_codebook(const Codebook& codebook, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace syncvsr

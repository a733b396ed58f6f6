#include "syncvsr/quantizer.hpp"

#include <nlohmann/json.hpp>

#include <limits>
#include <random>

namespace syncvsr {

namespace {

struct Assignment {
  std::vector<int> index;
  std::vector<double> dist2;
  double mean = 0.0;
};

Assignment assign(const Mat& centroids, const Mat& features) {
  Assignment a;
  const auto N = features.rows();
  a.index.resize(static_cast<std::size_t>(N));
  a.dist2.resize(static_cast<std::size_t>(N));
  double total = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (features.row(i) - centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    a.index[static_cast<std::size_t>(i)] = arg;
    a.dist2[static_cast<std::size_t>(i)] = best;
    total += best;
  }
  a.mean = N > 0 ? total / static_cast<double>(N) : 0.0;
  return a;
}

}  // namespace

Codebook fit_codebook(const Mat& features, int V, int iters, std::uint64_t seed) {
  require(V >= 1, ErrorKind::InvalidArgument, "codebook size must be >= 1");
  require(iters >= 1, ErrorKind::InvalidArgument, "iters must be >= 1");
  require(features.rows() >= V, ErrorKind::InvalidArgument,
          "need at least V=" + std::to_string(V) + " feature rows, got " + std::to_string(features.rows()));
  const auto N = features.rows();
  std::mt19937_64 rng(mix_seed(seed, 0x6b6d65616e73ULL));

  // k-means++ seeding.
  Mat centroids(V, features.cols());
  centroids.row(0) = features.row(std::uniform_int_distribution<Eigen::Index>(0, N - 1)(rng));
  std::vector<double> d2(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i) d2[static_cast<std::size_t>(i)] = (features.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < V; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      pick = N - 1;
      for (Eigen::Index i = 0; i < N; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (u < acc && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[static_cast<std::size_t>(pick)] == 0.0 && pick > 0) --pick;
    } else {
      pick = std::uniform_int_distribution<Eigen::Index>(0, N - 1)(rng);
    }
    centroids.row(c) = features.row(pick);
    for (Eigen::Index i = 0; i < N; ++i) {
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], (features.row(i) - centroids.row(c)).squaredNorm());
    }
  }

  Codebook cb;
  cb.seed = seed;
  for (int it = 0; it < iters; ++it) {
    const Assignment a = assign(centroids, features);
    cb.distortion_history.push_back(a.mean);
    Mat sums = Mat::Zero(V, features.cols());
    std::vector<int> counts(static_cast<std::size_t>(V), 0);
    for (Eigen::Index i = 0; i < N; ++i) {
      sums.row(a.index[static_cast<std::size_t>(i)]) += features.row(i);
      ++counts[static_cast<std::size_t>(a.index[static_cast<std::size_t>(i)])];
    }
    std::vector<bool> taken(static_cast<std::size_t>(N), false);
    for (int c = 0; c < V; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the point worst served by its current centroid.
      Eigen::Index far = 0;
      double best = -1.0;
      for (Eigen::Index i = 0; i < N; ++i) {
        if (!taken[static_cast<std::size_t>(i)] && a.dist2[static_cast<std::size_t>(i)] > best) {
          best = a.dist2[static_cast<std::size_t>(i)];
          far = i;
        }
      }
      taken[static_cast<std::size_t>(far)] = true;
      centroids.row(c) = features.row(far);
    }
  }
  cb.centroids = std::move(centroids);
  cb.fit_distortion = assign(cb.centroids, features).mean;
  return cb;
}

std::vector<int> quantize(const Codebook& codebook, const Mat& features) {
  require(features.cols() == codebook.dim(), ErrorKind::ShapeMismatch,
          "feature dim " + std::to_string(features.cols()) + " vs codebook dim " + std::to_string(codebook.dim()));
  return assign(codebook.centroids, features).index;
}

double mean_distortion(const Codebook& codebook, const Mat& features) {
  require(features.cols() == codebook.dim(), ErrorKind::ShapeMismatch, "feature dim mismatch");
  return assign(codebook.centroids, features).mean;
}

AlignedTokens align_tokens(std::span<const int> tokens, int num_frames, int pad_id) {
  require(!tokens.empty() && num_frames >= 1, ErrorKind::InvalidArgument, "align_tokens needs L >= 1 and T >= 1");
  require(pad_id >= 0 && pad_id < 65536, ErrorKind::InvalidArgument, "pad id out of range");
  AlignedTokens out;
  out.num_frames = num_frames;
  const std::size_t want = static_cast<std::size_t>(num_frames) * 4;
  out.grid.resize(want, static_cast<std::uint16_t>(pad_id));
  const std::size_t n = std::min(want, tokens.size());
  for (std::size_t i = 0; i < n; ++i) {
    require(tokens[i] >= 0 && tokens[i] < 65536, ErrorKind::InvalidArgument, "token out of range");
    out.grid[i] = static_cast<std::uint16_t>(tokens[i]);
  }
  out.padded = static_cast<int>(want - n);
  out.truncated = static_cast<int>(tokens.size() - n);
  return out;
}

// File layout: "SVCB", u32 header length, JSON header, V×d_a float32 LE centroids.
void save_codebook(const Codebook& codebook, const std::filesystem::path& path) {
  nlohmann::json header = {{"V", codebook.size()},
                           {"d_a", codebook.dim()},
                           {"seed", codebook.seed},
                           {"distortion", codebook.fit_distortion},
                           {"distortion_history", codebook.distortion_history}};
  const std::string h = header.dump();
  ByteWriter w;
  w.bytes("SVCB");
  w.u32(static_cast<std::uint32_t>(h.size()));
  w.bytes(h);
  for (Eigen::Index i = 0; i < codebook.centroids.size(); ++i) w.f32(static_cast<float>(codebook.centroids.data()[i]));
  write_file(path, w.str());
}

Codebook load_codebook(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  ByteReader rd(data);
  require(rd.bytes(4) == "SVCB", ErrorKind::Format, path.string() + " is not a codebook file");
  const auto len = rd.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(rd.bytes(len));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Format, std::string("codebook header: ") + e.what());
  }
  Codebook cb;
  const int V = header.at("V");
  const int d = header.at("d_a");
  cb.seed = header.at("seed");
  cb.fit_distortion = header.at("distortion");
  cb.distortion_history = header.value("distortion_history", std::vector<double>{});
  cb.centroids.resize(V, d);
  for (Eigen::Index i = 0; i < cb.centroids.size(); ++i) cb.centroids.data()[i] = rd.f32();
  require(rd.at_end(), ErrorKind::Format, "trailing bytes in codebook file");
  return cb;
}

}  // namespace syncvsr

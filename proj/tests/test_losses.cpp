#include "support.hpp"

#include <doctest.h>

#include <numeric>

using namespace syncvsr;
using namespace syncvsr::testing;

namespace {

std::vector<std::uint16_t> random_grid(std::mt19937_64& rng, int T, int V, double pad_rate) {
  std::uniform_int_distribution<int> tok(0, V - 1);
  std::bernoulli_distribution pad(pad_rate);
  std::vector<std::uint16_t> g;
  for (int i = 0; i < T * kTokensPerFrame; ++i) g.push_back(static_cast<std::uint16_t>(pad(rng) ? V : tok(rng)));
  g[0] = static_cast<std::uint16_t>(tok(rng));
  return g;
}

}  // namespace

TEST_CASE("word_ce reference values") {
  CHECK(word_ce(Mat::Zero(1, 500), 3).value == doctest::Approx(std::log(500.0)).epsilon(1e-12));
  Mat m = Mat::Zero(1, 10);
  m(0, 4) = 100.0;
  CHECK(word_ce(m, 4).value < 1e-40);
  Mat two(1, 2);
  two << 1.0, 0.0;
  CHECK(word_ce(two, 0).value == doctest::Approx(0.31326168751822286).epsilon(1e-12));
  CHECK_THROWS_AS(word_ce(two, 2), Error);

  for (const auto& c : frozen()["word_ce"]) {
    const auto v = c["logits"].get<std::vector<double>>();
    Mat l(1, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) l(0, static_cast<Eigen::Index>(i)) = v[i];
    CHECK(std::abs(word_ce(l, c["label"]).value - c["loss"].get<double>()) < 1e-12);
  }
}

TEST_CASE("ctc_loss reference values") {
  // T=1, p(a)=0.6: a single path.
  Mat one(1, 3);
  one << std::log(0.6), std::log(0.3), std::log(0.1);
  CHECK(ctc_loss(one, std::vector<int>{0}).value == doctest::Approx(-std::log(0.6)).epsilon(1e-12));
  // Uniform over {a, b, blank}, T=2, y="a": paths aa, a-, -a.
  CHECK(ctc_loss(Mat::Zero(2, 3), std::vector<int>{0}).value == doctest::Approx(-std::log(3.0 / 9.0)).epsilon(1e-12));
  CHECK_THROWS_AS(ctc_loss(Mat::Zero(2, 3), std::vector<int>{0, 0}), Error);
  try {
    ctc_loss(Mat::Zero(2, 3), std::vector<int>{0, 0});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InfeasibleTarget);
  }
  CHECK(ctc_min_frames(std::vector<int>{1, 1, 2, 2, 2}) == 8);
}

TEST_CASE("ctc_loss matches frozen path enumeration") {
  for (const auto& c : frozen()["ctc"]) {
    const Mat logits = to_mat(c["logits"]);
    const auto target = c["target"].get<std::vector<int>>();
    CHECK(std::abs(ctc_loss(logits, target).value - c["loss"].get<double>()) < 1e-9);
  }
}

TEST_CASE("ctc_loss matches brute force on random instances") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> Tdist(1, 6), Cdist(2, 4), Ldist(0, 3);
  int checked = 0;
  while (checked < 200) {
    const int T = Tdist(rng), C = Cdist(rng), L = Ldist(rng);
    std::uniform_int_distribution<int> sym(0, C - 2);
    std::vector<int> y;
    for (int i = 0; i < L; ++i) y.push_back(sym(rng));
    if (ctc_min_frames(y) > T) continue;
    const Mat logits = random_mat(rng, T, C, 1.5);
    CHECK(std::abs(ctc_loss(logits, y).value - ctc_bruteforce(logits, y)) < 1e-9);
    ++checked;
  }
}

TEST_CASE("ctc_loss is covariant under grapheme relabeling") {
  std::mt19937_64 rng(5);
  const Mat logits = random_mat(rng, 6, 4);
  const std::vector<int> y{0, 2, 2};
  // swap symbols 0 and 2 in both the logits and the target
  Mat swapped = logits;
  swapped.col(0) = logits.col(2);
  swapped.col(2) = logits.col(0);
  CHECK(ctc_loss(swapped, std::vector<int>{2, 0, 0}).value == doctest::Approx(ctc_loss(logits, y).value).epsilon(1e-12));
}

TEST_CASE("lm_loss and perplexity link") {
  const std::vector<int> target{1, 3, 11};
  CHECK(lm_loss(Mat::Zero(3, 12), target).value == doctest::Approx(std::log(12.0)).epsilon(1e-12));
  Mat sharp = Mat::Zero(3, 12);
  for (int i = 0; i < 3; ++i) sharp(i, target[static_cast<std::size_t>(i)]) = 60.0;
  CHECK(lm_loss(sharp, target).value < 1e-20);
  CHECK_THROWS_AS(lm_loss(Mat::Zero(2, 12), target), Error);
}

TEST_CASE("task_loss and total_loss arithmetic") {
  CHECK(task_loss(2.0, 1.0, 0.1) == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(task_loss(2.5, 1.5, 1.0) == 2.5);
  CHECK(task_loss(2.5, 1.5, 0.0) == 1.5);
  CHECK_THROWS_AS(task_loss(1.0, 1.0, 1.5), Error);
  CHECK(total_loss(0.7, 3.0, 0.0) == 0.7);
  CHECK(total_loss(0.7, 0.0, 10.0) == 0.7);
  CHECK(total_loss(0.5, 0.25, 10.0) == 3.0);
  CHECK_THROWS_AS(total_loss(1.0, 1.0, -0.1), Error);
  double prev = -1.0;
  for (double lam : {0.0, 0.5, 1.0, 3.0, 10.0}) {
    const double v = total_loss(1.0, 0.3, lam);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("sync_loss examples") {
  const int V = 64;
  std::mt19937_64 rng(3);
  const auto grid = random_grid(rng, 5, V, 0.0);
  CHECK(std::abs(sync_loss(Mat::Zero(5, 4 * V), grid, V).value - std::log(64.0)) < 1e-12);

  std::vector<std::uint16_t> pads(5 * 4, static_cast<std::uint16_t>(V));
  CHECK_THROWS_AS(sync_loss(Mat::Zero(5, 4 * V), pads, V), Error);

  // Half of the positions padded: mean CE over the other half only.
  const Mat logits = random_mat(rng, 4, 4 * 6);
  std::vector<std::uint16_t> half;
  double manual = 0.0;
  int count = 0;
  for (int t = 0; t < 4; ++t) {
    for (int r = 0; r < 4; ++r) {
      const bool keep = (t + r) % 2 == 0;
      const int z = (t * 4 + r) % 6;
      half.push_back(static_cast<std::uint16_t>(keep ? z : 6));
      if (keep) {
        const Mat seg = logits.block(t, r * 6, 1, 6);
        manual += -log_softmax_rows(seg)(0, z);
        ++count;
      }
    }
  }
  CHECK(sync_loss(logits, half, 6).value == doctest::Approx(manual / count).epsilon(1e-12));
}

TEST_CASE("masked_sync_loss examples") {
  std::mt19937_64 rng(9);
  const int T = 6, V = 7;
  const Mat logits = random_mat(rng, T, 4 * V);
  const auto grid = random_grid(rng, T, V, 0.2);

  const std::vector<bool> all(T, true);
  CHECK(masked_sync_loss(logits, grid, all, V).value == sync_loss(logits, grid, V).value);

  std::vector<bool> first(T, false);
  first[0] = true;
  double manual = 0.0;
  int n = 0;
  for (int r = 0; r < 4; ++r) {
    const int z = grid[static_cast<std::size_t>(r)];
    if (z == V) continue;
    manual += -log_softmax_rows(logits.block(0, r * V, 1, V))(0, z);
    ++n;
  }
  CHECK(masked_sync_loss(logits, grid, first, V).value == doctest::Approx(manual / n).epsilon(1e-12));

  // Disjoint masks covering every frame: supervised-count weighted average equals the full loss.
  std::vector<bool> m1(T), m2(T);
  for (int t = 0; t < T; ++t) m1[t] = !(m2[t] = t % 3 == 1);
  auto supervised = [&](const std::vector<bool>& m) {
    int c = 0;
    for (int t = 0; t < T; ++t)
      for (int r = 0; r < 4; ++r) c += m[t] && grid[static_cast<std::size_t>(t * 4 + r)] != V;
    return c;
  };
  const int c1 = supervised(m1), c2 = supervised(m2);
  const double combined =
      (c1 * masked_sync_loss(logits, grid, m1, V).value + c2 * masked_sync_loss(logits, grid, m2, V).value) / (c1 + c2);
  CHECK(combined == doctest::Approx(sync_loss(logits, grid, V).value).epsilon(1e-12));

  CHECK_THROWS_AS(masked_sync_loss(logits, grid, std::vector<bool>(T, false), V), Error);
}

TEST_CASE("loss gradients with respect to logits match finite differences") {
  std::mt19937_64 rng(21);
  const double eps = 1e-5;
  auto check = [&](Mat logits, const std::function<LossResult(const Mat&)>& loss) {
    const Mat analytic = loss(logits).grad;
    const Mat numeric = numeric_grad([&] { return loss(logits).value; }, logits, eps);
    CHECK(relative_error(analytic, numeric) < 1e-6);
  };
  check(random_mat(rng, 1, 7), [](const Mat& l) { return word_ce(l, 4); });
  check(random_mat(rng, 6, 4), [](const Mat& l) { return ctc_loss(l, std::vector<int>{0, 2, 2}); });
  check(random_mat(rng, 5, 3), [](const Mat& l) { return ctc_loss(l, std::vector<int>{}); });
  check(random_mat(rng, 4, 9), [](const Mat& l) { return lm_loss(l, std::vector<int>{1, 8, 0, 3}); });
  const auto grid = random_grid(rng, 3, 5, 0.3);
  check(random_mat(rng, 3, 20), [&](const Mat& l) { return sync_loss(l, grid, 5); });
  const std::vector<bool> mask{true, false, true};
  check(random_mat(rng, 3, 20), [&](const Mat& l) { return masked_sync_loss(l, grid, mask, 5); });
}

TEST_CASE("losses are non-negative and finite on feasible inputs") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const Mat l = random_mat(rng, 5, 4, 4.0);
    const double v = ctc_loss(l, std::vector<int>{1, 0}).value;
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
}

#include "support.hpp"

#include "syncvsr/analysis.hpp"

#include <doctest.h>

using namespace syncvsr;
using namespace syncvsr::testing;

TEST_CASE("levenshtein examples and properties") {
  CHECK(levenshtein("million", "billion") == 1);
  CHECK(levenshtein("kitten", "kitten") == 0);
  CHECK(levenshtein("", "abc") == 3);
  CHECK(levenshtein("kitten", "sitting") == 3);

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> len(0, 7), sym(0, 3);
  auto draw = [&] {
    std::vector<int> v(static_cast<std::size_t>(len(rng)));
    for (auto& x : v) x = sym(rng);
    return v;
  };
  for (int i = 0; i < 500; ++i) {
    const auto a = draw(), b = draw(), c = draw();
    CHECK(levenshtein(a, b) == levenshtein(b, a));
    CHECK(levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c));
    CHECK((levenshtein(a, b) == 0) == (a == b));
  }
}

TEST_CASE("wer matches frozen hand alignments") {
  const auto cases = frozen()["wer"];
  CHECK(cases.size() == 20);
  for (const auto& c : cases) {
    const double got = wer(split_words(c["hyp"].get<std::string>()), split_words(c["ref"].get<std::string>()));
    CHECK(std::abs(got - c["wer"].get<double>()) < 1e-12);
  }
  CHECK(wer(split_words("a b"), split_words("a c b")) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(wer(std::vector<std::string>{}, split_words("x y z")) == 1.0);
  CHECK_THROWS_AS(wer(split_words("a"), std::vector<std::string>{}), Error);
}

TEST_CASE("split_words on grapheme sequences") {
  const auto w = split_words(std::vector<int>{1, 2, 9, 3, 9, 9, 4}, 9);
  CHECK(w == std::vector<std::vector<int>>{{1, 2}, {3}, {4}});
  CHECK(split_words("  a\tb  c ") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("perplexity examples") {
  CHECK(perplexity(0.0) == 1.0);
  CHECK(std::abs(perplexity(std::log(12.0)) - 12.0) < 1e-12);
  CHECK(std::abs(perplexity(std::log(40.7)) - 40.7) < 1e-12);
}

TEST_CASE("mean_attention_distance frozen oracles") {
  for (const auto& c : frozen()["attention"]) {
    CHECK(std::abs(mean_attention_distance(to_mat(c["matrix"])) - c["distance"].get<double>()) < 1e-9);
  }
  CHECK(std::abs(mean_attention_distance(Mat::Constant(3, 3, 1.0 / 3.0)) - 8.0 / 9.0) < 1e-9);
  CHECK(mean_attention_distance(Mat::Identity(5, 5)) == 0.0);
  Mat bad = Mat::Identity(3, 3);
  bad(1, 1) = 0.99;
  CHECK_THROWS_AS(mean_attention_distance(bad), Error);
  bad(1, 1) = 0.99995;
  CHECK_NOTHROW(mean_attention_distance(bad));
  CHECK_THROWS_AS(mean_attention_distance(Mat::Constant(2, 3, 0.5)), Error);
}

TEST_CASE("mean_attention_distance bound and report aggregation") {
  std::mt19937_64 rng(7);
  std::vector<AttentionRecord> recs;
  for (int s = 0; s < 5; ++s) {
    AttentionRecord r;
    r.layers = 2;
    r.heads = 3;
    const int T = 3 + s;
    for (int k = 0; k < 6; ++k) {
      Mat a = random_mat(rng, T, T).array().exp();
      for (int i = 0; i < T; ++i) a.row(i) /= a.row(i).sum();
      double bound = 0.0;
      // each query can reach at most its farthest frame
      for (int i = 0; i < T; ++i) bound += std::max(i, T - 1 - i) / static_cast<double>(T);
      const double d = mean_attention_distance(a);
      CHECK(d >= 0.0);
      CHECK(d <= bound);
      CHECK(d <= T - 1);
      r.maps.push_back(a);
    }
    recs.push_back(r);
  }
  const auto rep = mean_attention_distance(recs);
  CHECK(rep.layers == 2);
  CHECK(rep.heads == 3);
  REQUIRE(rep.distances.size() == 6);
  double total = 0.0;
  for (const auto& h : rep.distances) {
    CHECK(h.size() == 5);
    for (double d : h) total += d;
  }
  CHECK(rep.mean() == doctest::Approx(total / 30.0).epsilon(1e-12));
  CHECK(rep.quantile(1, 2, 0.0) <= rep.quantile(1, 2, 0.5));
  CHECK(rep.quantile(1, 2, 0.5) <= rep.quantile(1, 2, 1.0));

  // Relabeling heads leaves the overall mean unchanged.
  auto shuffled = recs;
  for (auto& r : shuffled) std::reverse(r.maps.begin(), r.maps.end());
  CHECK(mean_attention_distance(shuffled).mean() == doctest::Approx(rep.mean()).epsilon(1e-12));

  const std::string csv = attention_report_csv(rep);
  CHECK(csv.rfind("layer,head,sample,mean_distance\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 31);
}

TEST_CASE("f1_score") {
  const std::vector<int> pred{0, 0, 1, 1, 2}, lab{0, 1, 1, 1, 0};
  CHECK(f1_score(pred, lab, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(f1_score(pred, lab, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(f1_score(pred, lab, 2) == 0.0);
  CHECK(f1_score(pred, lab, 7) == 0.0);
}

TEST_CASE("homophene_f1_gain") {
  std::vector<HomophenePair> pairs{{0, 1, 1, true}, {2, 3, 2, true}, {4, 5, 1, true}};
  const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5};
  const std::vector<int> vanilla{0, 1, 1, 0, 2, 3, 3, 2, 5, 5, 5, 4};
  const std::vector<int> better{0, 0, 1, 1, 2, 2, 3, 2, 4, 5, 5, 4};

  SUBCASE("identical predictions give zero gain") {
    const auto rep = homophene_f1_gain({{"vanilla", vanilla, "s"}, {"same", vanilla, "s"}}, labels, pairs, "vanilla");
    for (const auto& b : rep.buckets) CHECK(b.relative_gain_pct.at("same") == 0.0);
  }
  SUBCASE("buckets, exclusion and gains") {
    const auto rep = homophene_f1_gain({{"vanilla", vanilla, "s"}, {"sync", better, "s"}}, labels, pairs, "vanilla");
    REQUIRE(rep.buckets.size() == 2);
    const auto& b1 = rep.buckets[0];
    CHECK(b1.distance == 1);
    CHECK(b1.pair_count == 2);
    CHECK(b1.words == std::vector<int>{0, 1, 4, 5});
    // word 4 is never predicted by vanilla: excluded.
    CHECK(b1.excluded_words == std::vector<int>{4});
    double expect = 0.0;
    for (int w : {0, 1, 5}) {
      const double v = f1_score(vanilla, labels, w), m = f1_score(better, labels, w);
      expect += (m - v) / v;
    }
    CHECK(b1.relative_gain_pct.at("sync") == doctest::Approx(100.0 * expect / 3.0).epsilon(1e-12));
    CHECK(b1.relative_gain_pct.at("sync") > 0.0);
    CHECK(rep.buckets[1].distance == 2);
    CHECK(homophene_report_csv(rep).rfind(
              "distance,method,pair_count,word_count,excluded_words,mean_f1,vanilla_mean_f1,relative_gain_pct\n", 0) == 0);
    CHECK(homophene_report_json(rep).contains("buckets"));
  }
  SUBCASE("split mismatch") {
    try {
      homophene_f1_gain({{"vanilla", vanilla, "s"}, {"sync", better, "t"}}, labels, pairs, "vanilla");
      FAIL("expected SplitMismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::SplitMismatch);
    }
    std::vector<int> shorter(better.begin(), better.end() - 1);
    CHECK_THROWS_AS(homophene_f1_gain({{"vanilla", vanilla, "s"}, {"sync", shorter, "s"}}, labels, pairs, "vanilla"),
                    Error);
  }
}

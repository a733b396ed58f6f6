#pragma once

// Evaluation metrics and the homophene / attention-distance analyses.

#include "syncvsr/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace syncvsr {

struct HomophenePair;

/// Unit-cost edit distance (insert / delete / substitute).
template <class T>
int levenshtein(std::span<const T> a, std::span<const T> b) {
  std::vector<int> prev(b.size() + 1);
  std::vector<int> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline int levenshtein(std::string_view a, std::string_view b) {
  return levenshtein(std::span<const char>(a.data(), a.size()), std::span<const char>(b.data(), b.size()));
}

inline int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  return levenshtein(std::span<const int>(a), std::span<const int>(b));
}

/// Word-level edit distance over reference length. Throws on an empty reference.
double wer(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference);
double wer(const std::vector<std::vector<int>>& hypothesis, const std::vector<std::vector<int>>& reference);

std::vector<std::string> split_words(std::string_view text);
std::vector<std::vector<int>> split_words(const std::vector<int>& graphemes, int separator);

double perplexity(double mean_nll);

/// One-vs-rest F1 of class `cls`. Zero when the class is neither predicted nor present.
double f1_score(std::span<const int> predictions, std::span<const int> labels, int cls);

struct MethodPredictions {
  std::string name;
  std::vector<int> predictions;
  /// Identifies the evaluated split; all methods must agree.
  std::string split_id;
};

struct HomopheneBucket {
  int distance = 0;
  int pair_count = 0;
  std::vector<int> words;
  /// Words dropped because their vanilla F1 is 0.
  std::vector<int> excluded_words;
  std::map<std::string, double> mean_f1;
  /// Mean over included words of (F1_method − F1_vanilla) / F1_vanilla, in percent.
  std::map<std::string, double> relative_gain_pct;
};

struct HomopheneReport {
  std::string vanilla;
  std::vector<std::string> methods;
  std::vector<HomopheneBucket> buckets;
  std::map<std::string, std::map<int, double>> word_f1;
};

HomopheneReport homophene_f1_gain(const std::vector<MethodPredictions>& methods, std::span<const int> labels,
                                  const std::vector<HomophenePair>& pairs, const std::string& vanilla);

/// Columns: distance,method,pair_count,word_count,excluded_words,mean_f1,vanilla_mean_f1,relative_gain_pct
std::string homophene_report_csv(const HomopheneReport& report);
nlohmann::json homophene_report_json(const HomopheneReport& report);

/// (1/T) Σ_i Σ_j A[i,j]·|i−j| for a row-stochastic T×T matrix; rejects rows off by more than 1e-4.
double mean_attention_distance(const Mat& attention);

struct AttentionRecord;

struct AttentionDistanceReport {
  int layers = 0;
  int heads = 0;
  /// distances[layer * heads + head][sample]
  std::vector<std::vector<double>> distances;

  double mean() const;
  double head_mean(int layer, int head) const;
  /// Linear-interpolated quantile q ∈ [0,1] for one head.
  double quantile(int layer, int head, double q) const;
};

AttentionDistanceReport mean_attention_distance(const std::vector<AttentionRecord>& records);

/// Columns: layer,head,sample,mean_distance
std::string attention_report_csv(const AttentionDistanceReport& report);
nlohmann::json attention_report_json(const AttentionDistanceReport& report);

}  // namespace syncvsr

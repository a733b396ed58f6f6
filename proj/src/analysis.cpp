#include "syncvsr/analysis.hpp"

#include "syncvsr/corpus.hpp"
#include "syncvsr/model.hpp"

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace syncvsr {

using nlohmann::json;

double wer(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference) {
  require(!reference.empty(), ErrorKind::InvalidArgument, "wer needs a non-empty reference");
  const int d = levenshtein(std::span<const std::string>(hypothesis), std::span<const std::string>(reference));
  return static_cast<double>(d) / static_cast<double>(reference.size());
}

double wer(const std::vector<std::vector<int>>& hypothesis, const std::vector<std::vector<int>>& reference) {
  require(!reference.empty(), ErrorKind::InvalidArgument, "wer needs a non-empty reference");
  const int d = levenshtein(std::span<const std::vector<int>>(hypothesis), std::span<const std::vector<int>>(reference));
  return static_cast<double>(d) / static_cast<double>(reference.size());
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::vector<std::vector<int>> split_words(const std::vector<int>& graphemes, int separator) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  for (int g : graphemes) {
    if (g == separator) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(g);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double perplexity(double mean_nll) { return std::exp(mean_nll); }

double f1_score(std::span<const int> predictions, std::span<const int> labels, int cls) {
  require(predictions.size() == labels.size(), ErrorKind::ShapeMismatch, "predictions and labels differ in length");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] == cls;
    const bool l = labels[i] == cls;
    tp += p && l;
    fp += p && !l;
    fn += !p && l;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

// ---------------------------------------------------------------- homophenes

HomopheneReport homophene_f1_gain(const std::vector<MethodPredictions>& methods, std::span<const int> labels,
                                  const std::vector<HomophenePair>& pairs, const std::string& vanilla) {
  require(!methods.empty(), ErrorKind::InvalidArgument, "no methods to compare");
  const MethodPredictions* base = nullptr;
  for (const auto& m : methods) {
    if (m.split_id != methods.front().split_id) {
      fail(ErrorKind::SplitMismatch, "method '" + m.name + "' was evaluated on split " + m.split_id + ", method '" +
                                         methods.front().name + "' on " + methods.front().split_id);
    }
    require(m.predictions.size() == labels.size(), ErrorKind::SplitMismatch,
            "method '" + m.name + "' has " + std::to_string(m.predictions.size()) + " predictions for " +
                std::to_string(labels.size()) + " labels");
    if (m.name == vanilla) base = &m;
  }
  require(base != nullptr, ErrorKind::InvalidArgument, "vanilla method '" + vanilla + "' not among the inputs");

  HomopheneReport report;
  report.vanilla = vanilla;
  std::map<int, std::set<int>> bucket_words;
  std::map<int, int> bucket_pairs;
  for (const auto& p : pairs) {
    require(p.edit_distance >= 0, ErrorKind::InvalidArgument, "negative edit distance");
    bucket_words[p.edit_distance].insert(p.word_a);
    bucket_words[p.edit_distance].insert(p.word_b);
    ++bucket_pairs[p.edit_distance];
  }
  for (const auto& m : methods) {
    report.methods.push_back(m.name);
    auto& f1 = report.word_f1[m.name];
    for (const auto& [d, words] : bucket_words) {
      for (int w : words) f1[w] = f1_score(m.predictions, labels, w);
    }
  }
  const auto& base_f1 = report.word_f1[vanilla];
  for (const auto& [d, words] : bucket_words) {
    HomopheneBucket b;
    b.distance = d;
    b.pair_count = bucket_pairs[d];
    b.words.assign(words.begin(), words.end());
    std::vector<int> kept;
    for (int w : b.words) {
      if (base_f1.at(w) > 0.0) {
        kept.push_back(w);
      } else {
        b.excluded_words.push_back(w);
      }
    }
    for (const auto& m : methods) {
      const auto& f1 = report.word_f1[m.name];
      double sum = 0.0;
      for (int w : b.words) sum += f1.at(w);
      b.mean_f1[m.name] = sum / static_cast<double>(b.words.size());
      if (!kept.empty()) {
        double gain = 0.0;
        for (int w : kept) gain += (f1.at(w) - base_f1.at(w)) / base_f1.at(w);
        b.relative_gain_pct[m.name] = 100.0 * gain / static_cast<double>(kept.size());
      }
    }
    report.buckets.push_back(std::move(b));
  }
  return report;
}

std::string homophene_report_csv(const HomopheneReport& report) {
  std::ostringstream out;
  out.precision(10);
  out << "distance,method,pair_count,word_count,excluded_words,mean_f1,vanilla_mean_f1,relative_gain_pct\n";
  for (const auto& b : report.buckets) {
    for (const auto& m : report.methods) {
      out << b.distance << "," << m << "," << b.pair_count << "," << b.words.size() << ",";
      for (std::size_t i = 0; i < b.excluded_words.size(); ++i) out << (i ? ";" : "") << b.excluded_words[i];
      out << "," << b.mean_f1.at(m) << "," << b.mean_f1.at(report.vanilla) << ",";
      if (auto it = b.relative_gain_pct.find(m); it != b.relative_gain_pct.end()) out << it->second;
      out << "\n";
    }
  }
  return out.str();
}

json homophene_report_json(const HomopheneReport& report) {
  json buckets = json::array();
  for (const auto& b : report.buckets) {
    json gain = json::object();
    for (const auto& [m, g] : b.relative_gain_pct) gain[m] = g;
    buckets.push_back({{"distance", b.distance},
                       {"pair_count", b.pair_count},
                       {"words", b.words},
                       {"excluded_words", b.excluded_words},
                       {"mean_f1", b.mean_f1},
                       {"relative_gain_pct", gain}});
  }
  return {{"vanilla", report.vanilla},
          {"methods", report.methods},
          {"f1", "one-vs-rest per word class"},
          {"aggregation", "unweighted mean over bucket words; gains only where vanilla F1 > 0"},
          {"buckets", buckets}};
}

// ---------------------------------------------------------------- attention distance

double mean_attention_distance(const Mat& a) {
  require(a.rows() == a.cols() && a.rows() > 0, ErrorKind::ShapeMismatch, "attention must be square and non-empty");
  const Eigen::Index T = a.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < T; ++i) {
    double row_sum = 0.0;
    for (Eigen::Index j = 0; j < T; ++j) {
      require(a(i, j) >= -1e-12, ErrorKind::InvalidArgument, "attention has negative weights");
      row_sum += a(i, j);
      total += a(i, j) * static_cast<double>(std::abs(i - j));
    }
    require(std::abs(row_sum - 1.0) <= 1e-4, ErrorKind::InvalidArgument,
            "attention row " + std::to_string(i) + " sums to " + std::to_string(row_sum));
  }
  return total / static_cast<double>(T);
}

AttentionDistanceReport mean_attention_distance(const std::vector<AttentionRecord>& records) {
  AttentionDistanceReport r;
  require(!records.empty(), ErrorKind::InvalidArgument, "no attention records");
  r.layers = records.front().layers;
  r.heads = records.front().heads;
  r.distances.assign(static_cast<std::size_t>(r.layers * r.heads), {});
  for (const auto& rec : records) {
    require(rec.layers == r.layers && rec.heads == r.heads, ErrorKind::ShapeMismatch, "attention records disagree in shape");
    for (std::size_t k = 0; k < rec.maps.size(); ++k) r.distances[k].push_back(mean_attention_distance(rec.maps[k]));
  }
  return r;
}

double AttentionDistanceReport::mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& d : distances) {
    sum = std::accumulate(d.begin(), d.end(), sum);
    n += d.size();
  }
  return n ? sum / static_cast<double>(n) : std::nan("");
}

double AttentionDistanceReport::head_mean(int layer, int head) const {
  const auto& d = distances.at(static_cast<std::size_t>(layer * heads + head));
  return d.empty() ? std::nan("") : std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double AttentionDistanceReport::quantile(int layer, int head, double q) const {
  require(q >= 0.0 && q <= 1.0, ErrorKind::InvalidArgument, "quantile outside [0, 1]");
  auto d = distances.at(static_cast<std::size_t>(layer * heads + head));
  if (d.empty()) return std::nan("");
  std::sort(d.begin(), d.end());
  const double pos = q * static_cast<double>(d.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

std::string attention_report_csv(const AttentionDistanceReport& report) {
  std::ostringstream out;
  out.precision(12);
  out << "layer,head,sample,mean_distance\n";
  for (int l = 0; l < report.layers; ++l) {
    for (int h = 0; h < report.heads; ++h) {
      const auto& d = report.distances[static_cast<std::size_t>(l * report.heads + h)];
      for (std::size_t s = 0; s < d.size(); ++s) out << l << "," << h << "," << s << "," << d[s] << "\n";
    }
  }
  return out.str();
}

json attention_report_json(const AttentionDistanceReport& report) {
  json heads = json::array();
  for (int l = 0; l < report.layers; ++l) {
    for (int h = 0; h < report.heads; ++h) {
      heads.push_back({{"layer", l},
                       {"head", h},
                       {"mean", report.head_mean(l, h)},
                       {"q10", report.quantile(l, h, 0.1)},
                       {"median", report.quantile(l, h, 0.5)},
                       {"q90", report.quantile(l, h, 0.9)}});
    }
  }
  return {{"layers", report.layers}, {"heads", report.heads}, {"mean", report.mean()}, {"per_head", heads}};
}

}  // namespace syncvsr

#include "syncvsr/corpus.hpp"

#include "syncvsr/analysis.hpp"
#include "syncvsr/quantizer.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

namespace syncvsr {

using nlohmann::json;

const char* to_string(TaskMode mode) { return mode == TaskMode::Word ? "word" : "sentence"; }

TaskMode parse_task_mode(const std::string& s) {
  if (s == "word") return TaskMode::Word;
  if (s == "sentence") return TaskMode::Sentence;
  fail(ErrorKind::Config, "unknown mode '" + s + "' (expected word | sentence)");
}

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Mat gaussian(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void validate(const WorldConfig& c) {
  require(c.num_visemes >= 1 && c.num_phonemes >= c.num_visemes, ErrorKind::InfeasibleConfig,
          "need num_phonemes >= num_visemes >= 1");
  require(c.num_words >= 2, ErrorKind::InfeasibleConfig, "need at least 2 words");
  require(c.min_word_length >= 1 && c.max_word_length >= c.min_word_length, ErrorKind::InfeasibleConfig,
          "bad word length range");
  require(c.homophene_pairs >= 0 && 2 * c.homophene_pairs <= c.num_words, ErrorKind::InfeasibleConfig,
          "homophene pairs need two distinct words each");
  require(c.max_pair_substitutions >= 1, ErrorKind::InfeasibleConfig, "max_pair_substitutions must be >= 1");
  require(c.visual_dim >= 1 && c.audio_dim >= 1 && c.frames_per_phoneme >= 1, ErrorKind::InfeasibleConfig,
          "dimensions must be positive");
  require(c.audio_vocab >= 1 && c.audio_vocab < 65535, ErrorKind::InfeasibleConfig, "audio_vocab out of range");
  require(c.num_phonemes + 1 < 65535, ErrorKind::InfeasibleConfig, "too many phonemes for uint16 labels");
  require(c.visual_noise >= 0 && c.audio_noise >= 0 && c.phoneme_cue >= 0, ErrorKind::InfeasibleConfig,
          "noise scales must be non-negative");
  if (c.homophene_pairs > 0) {
    require(c.num_phonemes > c.num_visemes, ErrorKind::InfeasibleConfig,
            "phoneme→viseme map is injective; no homophenes can be built");
  }
}

}  // namespace

std::vector<int> World::graphemes(int word) const { return lexicon.at(static_cast<std::size_t>(word)); }

std::vector<int> World::visemes(int word) const {
  std::vector<int> out;
  for (int p : lexicon.at(static_cast<std::size_t>(word))) out.push_back(phoneme_to_viseme[static_cast<std::size_t>(p)]);
  return out;
}

bool World::is_homophene_word(int word) const {
  return std::any_of(designated_pairs.begin(), designated_pairs.end(),
                     [word](const HomophenePair& p) { return p.word_a == word || p.word_b == word; });
}

std::string World::fingerprint() const {
  ByteWriter w;
  const auto& c = config;
  for (int v : {c.num_phonemes, c.num_visemes, c.num_words, c.homophene_pairs, c.min_word_length,
                c.max_word_length, c.max_pair_substitutions, c.visual_dim, c.audio_dim, c.frames_per_phoneme,
                c.audio_vocab, static_cast<int>(c.token_source)}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.f64(c.visual_noise);
  w.f64(c.phoneme_cue);
  w.f64(c.audio_noise);
  w.u64(seed);
  for (int v : phoneme_to_viseme) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(num_graphemes));
  for (const auto& word : lexicon) {
    w.u32(static_cast<std::uint32_t>(word.size()));
    for (int p : word) w.u32(static_cast<std::uint32_t>(p));
  }
  for (const auto& p : designated_pairs) {
    w.u32(static_cast<std::uint32_t>(p.word_a));
    w.u32(static_cast<std::uint32_t>(p.word_b));
    w.u32(static_cast<std::uint32_t>(p.edit_distance));
  }
  for (const Mat* m : {&viseme_embeddings, &phoneme_cues, &phoneme_audio_embeddings}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) w.f64(m->data()[i]);
  }
  for (const auto& row : phoneme_tokens) {
    for (int t : row) w.u32(static_cast<std::uint32_t>(t));
  }
  return sha1_hex(w.str());
}

World build_world(const WorldConfig& config, std::uint64_t seed) {
  validate(config);
  const int P = config.num_phonemes;
  const int M = config.num_visemes;
  std::mt19937_64 rng(mix_seed(seed, 0x776f726c64ULL));

  World world;
  world.config = config;
  world.seed = seed;
  world.num_graphemes = P + 1;

  // Surjective many-to-one map: the first M phonemes of a random order cover every viseme.
  std::vector<int> order(static_cast<std::size_t>(P));
  for (int i = 0; i < P; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  world.phoneme_to_viseme.assign(static_cast<std::size_t>(P), 0);
  for (int i = 0; i < P; ++i) {
    world.phoneme_to_viseme[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
        i < M ? i : uniform_int(rng, 0, M - 1);
  }
  std::vector<std::vector<int>> siblings(static_cast<std::size_t>(M));
  for (int p = 0; p < P; ++p) siblings[static_cast<std::size_t>(world.phoneme_to_viseme[static_cast<std::size_t>(p)])].push_back(p);
  auto has_sibling = [&](int p) {
    return siblings[static_cast<std::size_t>(world.phoneme_to_viseme[static_cast<std::size_t>(p)])].size() >= 2;
  };

  world.viseme_embeddings = gaussian(rng, M, config.visual_dim);
  world.phoneme_cues = gaussian(rng, P, config.visual_dim);
  world.phoneme_audio_embeddings = gaussian(rng, P, config.audio_dim);

  std::set<std::array<int, kTokensPerFrame>> used_rows;
  for (int p = 0; p < P; ++p) {
    std::array<int, kTokensPerFrame> row{};
    int attempts = 0;
    do {
      for (auto& t : row) t = uniform_int(rng, 0, config.audio_vocab - 1);
    } while (used_rows.count(row) != 0 && ++attempts < 1000);
    used_rows.insert(row);
    world.phoneme_tokens.push_back(row);
  }

  // Base words have pairwise distinct viseme sequences, so the only homophenes are designated ones.
  const int n_pairs = config.homophene_pairs;
  const int n_base = config.num_words - n_pairs;
  std::set<std::vector<int>> viseme_seqs;
  const int max_attempts = 2000 * config.num_words + 1000;
  int attempts = 0;
  while (static_cast<int>(world.lexicon.size()) < n_base) {
    require(++attempts <= max_attempts, ErrorKind::InfeasibleConfig,
            "cannot draw enough words with distinct viseme sequences");
    const int len = uniform_int(rng, config.min_word_length, config.max_word_length);
    std::vector<int> word(static_cast<std::size_t>(len));
    for (auto& p : word) p = uniform_int(rng, 0, P - 1);
    std::vector<int> vis;
    for (int p : word) vis.push_back(world.phoneme_to_viseme[static_cast<std::size_t>(p)]);
    if (!viseme_seqs.insert(vis).second) continue;
    world.lexicon.push_back(std::move(word));
  }

  std::vector<int> anchors(static_cast<std::size_t>(n_base));
  for (int i = 0; i < n_base; ++i) anchors[static_cast<std::size_t>(i)] = i;
  std::shuffle(anchors.begin(), anchors.end(), rng);
  std::vector<bool> used(static_cast<std::size_t>(n_base), false);
  for (int pair = 0; pair < n_pairs; ++pair) {
    const int want = 1 + pair % config.max_pair_substitutions;
    int anchor = -1;
    std::vector<int> eligible;
    for (int cand : anchors) {
      if (used[static_cast<std::size_t>(cand)]) continue;
      std::vector<int> pos;
      const auto& w = world.lexicon[static_cast<std::size_t>(cand)];
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (has_sibling(w[i])) pos.push_back(static_cast<int>(i));
      }
      if (static_cast<int>(pos.size()) >= want) {
        anchor = cand;
        eligible = std::move(pos);
        break;
      }
    }
    if (anchor < 0) {
      // Fall back to fewer substitutions before giving up.
      for (int cand : anchors) {
        if (used[static_cast<std::size_t>(cand)]) continue;
        const auto& w = world.lexicon[static_cast<std::size_t>(cand)];
        std::vector<int> pos;
        for (std::size_t i = 0; i < w.size(); ++i) {
          if (has_sibling(w[i])) pos.push_back(static_cast<int>(i));
        }
        if (!pos.empty()) {
          anchor = cand;
          eligible = std::move(pos);
          break;
        }
      }
    }
    require(anchor >= 0, ErrorKind::InfeasibleConfig, "no word can anchor another homophene pair");
    used[static_cast<std::size_t>(anchor)] = true;
    std::shuffle(eligible.begin(), eligible.end(), rng);
    const int subs = std::min<int>(want, static_cast<int>(eligible.size()));
    std::vector<int> partner = world.lexicon[static_cast<std::size_t>(anchor)];
    for (int k = 0; k < subs; ++k) {
      const int pos = eligible[static_cast<std::size_t>(k)];
      const int cur = partner[static_cast<std::size_t>(pos)];
      const auto& sib = siblings[static_cast<std::size_t>(world.phoneme_to_viseme[static_cast<std::size_t>(cur)])];
      int next = cur;
      while (next == cur) next = sib[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(sib.size()) - 1))];
      partner[static_cast<std::size_t>(pos)] = next;
    }
    world.lexicon.push_back(partner);
    const int b = static_cast<int>(world.lexicon.size()) - 1;
    world.designated_pairs.push_back(
        {anchor, b, levenshtein(world.graphemes(anchor), world.graphemes(b)), true});
  }
  return world;
}

std::vector<HomophenePair> homophene_pairs(const World& world) {
  std::vector<HomophenePair> out = world.designated_pairs;
  std::set<std::pair<int, int>> seen;
  for (const auto& p : out) seen.insert({std::min(p.word_a, p.word_b), std::max(p.word_a, p.word_b)});
  const int W = static_cast<int>(world.lexicon.size());
  for (int a = 0; a < W; ++a) {
    const auto va = world.visemes(a);
    for (int b = a + 1; b < W; ++b) {
      if (seen.count({a, b}) != 0 || world.visemes(b) != va) continue;
      out.push_back({a, b, levenshtein(world.graphemes(a), world.graphemes(b)), true});
    }
  }
  return out;
}

std::string grapheme_string(const World& world, const std::vector<int>& graphemes) {
  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  std::string out;
  for (int g : graphemes) {
    if (g == world.separator()) {
      out.push_back(' ');
    } else if (g >= 0 && static_cast<std::size_t>(g) < kAlphabet.size()) {
      out.push_back(kAlphabet[static_cast<std::size_t>(g)]);
    } else {
      out += "<" + std::to_string(g) + ">";
    }
  }
  return out;
}

// ---------------------------------------------------------------- world json

namespace {

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j, int cols) {
  Mat m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    require(static_cast<int>(j[r].size()) == cols, ErrorKind::Format, "matrix row width");
    for (int c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = j[r][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

json world_to_json(const World& world) {
  const auto& c = world.config;
  json j;
  j["config"] = {{"num_phonemes", c.num_phonemes},
                 {"num_visemes", c.num_visemes},
                 {"num_words", c.num_words},
                 {"homophene_pairs", c.homophene_pairs},
                 {"min_word_length", c.min_word_length},
                 {"max_word_length", c.max_word_length},
                 {"max_pair_substitutions", c.max_pair_substitutions},
                 {"visual_dim", c.visual_dim},
                 {"audio_dim", c.audio_dim},
                 {"frames_per_phoneme", c.frames_per_phoneme},
                 {"visual_noise", c.visual_noise},
                 {"phoneme_cue", c.phoneme_cue},
                 {"audio_noise", c.audio_noise},
                 {"audio_vocab", c.audio_vocab},
                 {"token_source", c.token_source == TokenSource::Table ? "table" : "codebook"}};
  j["seed"] = world.seed;
  j["fingerprint"] = world.fingerprint();
  j["phoneme_to_viseme"] = world.phoneme_to_viseme;
  j["num_graphemes"] = world.num_graphemes;
  j["lexicon"] = world.lexicon;
  json pairs = json::array();
  for (const auto& p : world.designated_pairs) {
    pairs.push_back({{"word_a", p.word_a}, {"word_b", p.word_b}, {"edit_distance", p.edit_distance}});
  }
  j["designated_pairs"] = pairs;
  j["viseme_embeddings"] = mat_to_json(world.viseme_embeddings);
  j["phoneme_cues"] = mat_to_json(world.phoneme_cues);
  j["phoneme_audio_embeddings"] = mat_to_json(world.phoneme_audio_embeddings);
  j["phoneme_tokens"] = world.phoneme_tokens;
  return j;
}

World world_from_json(const json& j) {
  try {
    World w;
    const auto& c = j.at("config");
    auto& wc = w.config;
    wc.num_phonemes = c.at("num_phonemes");
    wc.num_visemes = c.at("num_visemes");
    wc.num_words = c.at("num_words");
    wc.homophene_pairs = c.at("homophene_pairs");
    wc.min_word_length = c.at("min_word_length");
    wc.max_word_length = c.at("max_word_length");
    wc.max_pair_substitutions = c.at("max_pair_substitutions");
    wc.visual_dim = c.at("visual_dim");
    wc.audio_dim = c.at("audio_dim");
    wc.frames_per_phoneme = c.at("frames_per_phoneme");
    wc.visual_noise = c.at("visual_noise");
    wc.phoneme_cue = c.at("phoneme_cue");
    wc.audio_noise = c.at("audio_noise");
    wc.audio_vocab = c.at("audio_vocab");
    wc.token_source = c.at("token_source").get<std::string>() == "table" ? TokenSource::Table : TokenSource::Codebook;
    w.seed = j.at("seed");
    w.phoneme_to_viseme = j.at("phoneme_to_viseme").get<std::vector<int>>();
    w.num_graphemes = j.at("num_graphemes");
    w.lexicon = j.at("lexicon").get<std::vector<std::vector<int>>>();
    for (const auto& p : j.at("designated_pairs")) {
      w.designated_pairs.push_back({p.at("word_a"), p.at("word_b"), p.at("edit_distance"), true});
    }
    w.viseme_embeddings = mat_from_json(j.at("viseme_embeddings"), wc.visual_dim);
    w.phoneme_cues = mat_from_json(j.at("phoneme_cues"), wc.visual_dim);
    w.phoneme_audio_embeddings = mat_from_json(j.at("phoneme_audio_embeddings"), wc.audio_dim);
    w.phoneme_tokens = j.at("phoneme_tokens").get<std::vector<std::array<int, kTokensPerFrame>>>();
    if (j.contains("fingerprint")) {
      require(j.at("fingerprint").get<std::string>() == w.fingerprint(), ErrorKind::FingerprintMismatch,
              "world.json contents do not match its recorded fingerprint");
    }
    return w;
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed world json: ") + e.what());
  }
}

void save_world(const World& world, const std::filesystem::path& path) {
  write_file(path, world_to_json(world).dump(1) + "\n");
}

World load_world(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Format, path.string() + ": " + e.what());
  }
  return world_from_json(j);
}

// ---------------------------------------------------------------- rendering

std::vector<int> utterance_phonemes(const World& world, const std::vector<int>& words) {
  std::vector<int> out;
  for (int w : words) {
    require(w >= 0 && w < static_cast<int>(world.lexicon.size()), ErrorKind::InvalidArgument,
            "word index " + std::to_string(w) + " not in lexicon");
    const auto& ph = world.lexicon[static_cast<std::size_t>(w)];
    out.insert(out.end(), ph.begin(), ph.end());
  }
  return out;
}

Mat clean_visual_frames(const World& world, const std::vector<int>& phonemes) {
  const int k = world.config.frames_per_phoneme;
  Mat out(static_cast<Eigen::Index>(phonemes.size()) * k, world.config.visual_dim);
  for (std::size_t i = 0; i < phonemes.size(); ++i) {
    const int p = phonemes[i];
    RowVec row = world.viseme_embeddings.row(world.phoneme_to_viseme[static_cast<std::size_t>(p)]) +
                 world.config.phoneme_cue * world.phoneme_cues.row(p);
    for (int f = 0; f < k; ++f) out.row(static_cast<Eigen::Index>(i) * k + f) = row;
  }
  return out;
}

Mat coarticulate(const Mat& frames) {
  Mat out(frames.rows(), frames.cols());
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, t - 1);
    const Eigen::Index hi = std::min<Eigen::Index>(frames.rows() - 1, t + 1);
    out.row(t) = frames.middleRows(lo, hi - lo + 1).colwise().mean();
  }
  return out;
}

Mat audio_features(const World& world, const std::vector<int>& phonemes, std::uint64_t seed) {
  const int k = world.config.frames_per_phoneme;
  const int steps_per_phoneme = k * kTokensPerFrame;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Mat out(static_cast<Eigen::Index>(phonemes.size()) * steps_per_phoneme, world.config.audio_dim);
  for (std::size_t i = 0; i < phonemes.size(); ++i) {
    for (int s = 0; s < steps_per_phoneme; ++s) {
      const auto r = static_cast<Eigen::Index>(i) * steps_per_phoneme + s;
      out.row(r) = world.phoneme_audio_embeddings.row(phonemes[i]);
      for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) += world.config.audio_noise * noise(rng);
    }
  }
  return out;
}

Mat Sample::frames() const {
  Mat m(num_frames, visual_dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(visual_frames[static_cast<std::size_t>(i)]);
  return m;
}

Sample render_sample(const World& world, const Utterance& utterance, std::uint64_t seed,
                     const RenderOptions& options) {
  require(!utterance.words.empty(), ErrorKind::InvalidArgument, "empty utterance");
  require(!utterance.target || *utterance.target < utterance.words.size(), ErrorKind::InvalidArgument,
          "target position outside utterance");
  const auto phonemes = utterance_phonemes(world, utterance.words);
  const int k = world.config.frames_per_phoneme;
  const int T = static_cast<int>(phonemes.size()) * k;

  std::mt19937_64 rng(mix_seed(seed, 0x766973ULL));
  std::normal_distribution<double> noise(0.0, world.config.visual_noise > 0 ? world.config.visual_noise : 1.0);
  Mat frames = clean_visual_frames(world, phonemes);
  if (world.config.visual_noise > 0) {
    for (Eigen::Index i = 0; i < frames.size(); ++i) frames.data()[i] += noise(rng);
  }
  frames = coarticulate(frames);

  Sample s;
  s.num_frames = T;
  s.visual_dim = world.config.visual_dim;
  s.visual_frames.resize(static_cast<std::size_t>(frames.size()));
  for (Eigen::Index i = 0; i < frames.size(); ++i) s.visual_frames[static_cast<std::size_t>(i)] = static_cast<float>(frames.data()[i]);

  if (world.config.token_source == TokenSource::Table) {
    s.token_grid.reserve(static_cast<std::size_t>(T) * kTokensPerFrame);
    for (int p : phonemes) {
      for (int f = 0; f < k; ++f) {
        for (int t : world.phoneme_tokens[static_cast<std::size_t>(p)]) s.token_grid.push_back(static_cast<std::uint16_t>(t));
      }
    }
  } else {
    require(options.codebook != nullptr, ErrorKind::InvalidArgument, "codebook token source needs a fitted codebook");
    require(options.codebook->size() == world.config.audio_vocab, ErrorKind::ShapeMismatch,
            "codebook size differs from the world's audio_vocab");
    const Mat feats = audio_features(world, phonemes, mix_seed(seed, 0x617564ULL));
    const auto tokens = quantize(*options.codebook, feats);
    s.token_grid = align_tokens(tokens, T, world.pad_token()).grid;
  }

  s.word_boundary.assign(static_cast<std::size_t>(T), utterance.target ? 0 : 1);
  if (utterance.target) {
    int start = 0;
    for (std::size_t i = 0; i < *utterance.target; ++i) {
      start += static_cast<int>(world.lexicon[static_cast<std::size_t>(utterance.words[i])].size()) * k;
    }
    const int len = static_cast<int>(world.lexicon[static_cast<std::size_t>(utterance.words[*utterance.target])].size()) * k;
    std::fill_n(s.word_boundary.begin() + start, len, 1);
    s.label = {static_cast<std::uint16_t>(utterance.words[*utterance.target])};
  } else {
    for (std::size_t i = 0; i < utterance.words.size(); ++i) {
      if (i > 0) s.label.push_back(static_cast<std::uint16_t>(world.separator()));
      for (int g : world.graphemes(utterance.words[i])) s.label.push_back(static_cast<std::uint16_t>(g));
    }
  }
  return s;
}

// ---------------------------------------------------------------- splits

SplitPlan plan_splits(const World& world, const DatasetConfig& config, std::uint64_t seed) {
  const int W = static_cast<int>(world.lexicon.size());
  std::mt19937_64 rng(mix_seed(seed, 0x73706c6974ULL));
  require(config.train_size > 0, ErrorKind::InfeasibleCoverage, "train split is empty; every word must appear in it");
  require(config.eval_size >= 0, ErrorKind::InvalidArgument, "negative eval size");
  require(config.context_words >= 0, ErrorKind::InvalidArgument, "negative context word count");

  std::vector<int> hom_words;
  for (int w = 0; w < W; ++w) {
    if (world.is_homophene_word(w)) hom_words.push_back(w);
  }
  std::vector<int> eval_needed;
  for (int w : hom_words) eval_needed.insert(eval_needed.end(), static_cast<std::size_t>(config.min_eval_per_homophene), w);

  SplitPlan plan;
  if (config.mode == TaskMode::Word) {
    require(config.train_size >= W, ErrorKind::InfeasibleCoverage,
            "train split of " + std::to_string(config.train_size) + " cannot cover " + std::to_string(W) + " words");
    require(config.eval_size >= static_cast<int>(eval_needed.size()), ErrorKind::InfeasibleCoverage,
            "eval split too small for " + std::to_string(config.min_eval_per_homophene) + " samples per homophene word");
    std::vector<int> train_words;
    for (int w = 0; w < W; ++w) train_words.push_back(w);
    while (static_cast<int>(train_words.size()) < config.train_size) train_words.push_back(uniform_int(rng, 0, W - 1));
    std::shuffle(train_words.begin(), train_words.end(), rng);
    std::vector<int> eval_words = eval_needed;
    while (static_cast<int>(eval_words.size()) < config.eval_size) eval_words.push_back(uniform_int(rng, 0, W - 1));
    std::shuffle(eval_words.begin(), eval_words.end(), rng);
    // Target word in the middle of `context_words` random words on each side.
    auto clip = [&](int w) {
      Utterance u;
      for (int i = 0; i < config.context_words; ++i) u.words.push_back(uniform_int(rng, 0, W - 1));
      u.target = u.words.size();
      u.words.push_back(w);
      for (int i = 0; i < config.context_words; ++i) u.words.push_back(uniform_int(rng, 0, W - 1));
      return u;
    };
    for (int w : train_words) plan.train.push_back(clip(w));
    for (int w : eval_words) plan.eval.push_back(clip(w));
    return plan;
  }

  require(config.min_sentence_words >= 1 && config.max_sentence_words >= config.min_sentence_words,
          ErrorKind::InvalidArgument, "bad sentence length range");
  auto pack = [&](std::vector<int> queue, int size, const char* split) {
    std::shuffle(queue.begin(), queue.end(), rng);
    std::vector<Utterance> out;
    std::size_t at = 0;
    while (at < queue.size()) {
      require(static_cast<int>(out.size()) < size, ErrorKind::InfeasibleCoverage,
              std::string(split) + " split too small to satisfy word coverage");
      const int len = uniform_int(rng, config.min_sentence_words, config.max_sentence_words);
      Utterance u;
      for (int i = 0; i < len; ++i) {
        u.words.push_back(at < queue.size() ? queue[at++] : uniform_int(rng, 0, W - 1));
      }
      std::shuffle(u.words.begin(), u.words.end(), rng);
      out.push_back(std::move(u));
    }
    while (static_cast<int>(out.size()) < size) {
      Utterance u;
      const int len = uniform_int(rng, config.min_sentence_words, config.max_sentence_words);
      for (int i = 0; i < len; ++i) u.words.push_back(uniform_int(rng, 0, W - 1));
      out.push_back(std::move(u));
    }
    return out;
  };
  std::vector<int> all_words;
  for (int w = 0; w < W; ++w) all_words.push_back(w);
  plan.train = pack(all_words, config.train_size, "train");
  plan.eval = pack(eval_needed, config.eval_size, "eval");
  return plan;
}

// ---------------------------------------------------------------- files

std::string encode_samples(const std::vector<Sample>& samples, std::vector<std::uint64_t>* offsets) {
  ByteWriter w;
  for (const auto& s : samples) {
    if (offsets) offsets->push_back(w.size());
    w.u32(static_cast<std::uint32_t>(s.num_frames));
    w.u32(static_cast<std::uint32_t>(s.visual_dim));
    w.u32(kTokensPerFrame);
    for (float v : s.visual_frames) w.f32(v);
    for (auto b : s.word_boundary) w.u8(b);
    for (auto t : s.token_grid) w.u16(t);
    w.u16(static_cast<std::uint16_t>(s.label.size()));
    for (auto l : s.label) w.u16(l);
  }
  return w.take();
}

json manifest_to_json(const Manifest& m) {
  json records = json::array();
  for (const auto& r : m.records) {
    records.push_back({{"id", r.id}, {"offset", r.offset}, {"num_frames", r.num_frames}, {"label", r.label}});
  }
  return {{"format_version", m.version}, {"split", m.split},
          {"mode", to_string(m.mode)},   {"world_fingerprint", m.world_fingerprint},
          {"sample_count", m.records.size()}, {"records", records}};
}

void write_split(const std::filesystem::path& dir, const std::string& split, TaskMode mode, const World& world,
                 const std::vector<Sample>& samples) {
  std::vector<std::uint64_t> offsets;
  const std::string bin = encode_samples(samples, &offsets);
  Manifest m;
  m.split = split;
  m.mode = mode;
  m.world_fingerprint = world.fingerprint();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    m.records.push_back({static_cast<std::uint32_t>(i), offsets[i], static_cast<std::uint32_t>(samples[i].num_frames),
                         samples[i].label});
  }
  write_file(dir / "samples.bin", bin);
  write_file(dir / "manifest.json", manifest_to_json(m).dump(1) + "\n");
}

void generate_dataset(const World& world, const DatasetConfig& config, std::uint64_t seed,
                      const std::filesystem::path& dir, const RenderOptions& options) {
  const auto plan = plan_splits(world, config, seed);
  save_world(world, dir / "world.json");
  auto render_all = [&](const std::vector<Utterance>& utts, std::uint64_t split_tag) {
    std::vector<Sample> out;
    out.reserve(utts.size());
    for (std::size_t i = 0; i < utts.size(); ++i) {
      Utterance u = utts[i];
      if (config.mode == TaskMode::Sentence) u.target.reset();
      out.push_back(render_sample(world, u, mix_seed(seed, split_tag, i), options));
    }
    return out;
  };
  write_split(dir / "train", "train", config.mode, world, render_all(plan.train, 1));
  write_split(dir / "eval", "eval", config.mode, world, render_all(plan.eval, 2));
}

Dataset load_dataset(const std::filesystem::path& split_dir, const std::string* expected_fingerprint) {
  const std::string manifest_text = read_file(split_dir / "manifest.json");
  json j;
  try {
    j = json::parse(manifest_text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::VersionMismatch, "unreadable manifest header in " + split_dir.string() + ": " + e.what());
  }
  Dataset ds;
  ds.manifest_hash = git_blob_hash(manifest_text);
  auto& m = ds.manifest;
  try {
    if (!j.is_object() || !j.contains("format_version") || !j["format_version"].is_number_unsigned() ||
        j["format_version"].get<std::uint32_t>() != kDatasetFormatVersion) {
      fail(ErrorKind::VersionMismatch, "unsupported dataset format version in " + split_dir.string());
    }
    m.version = j["format_version"];
    m.split = j.at("split");
    m.mode = parse_task_mode(j.at("mode"));
    m.world_fingerprint = j.at("world_fingerprint");
    for (const auto& r : j.at("records")) {
      m.records.push_back({r.at("id"), r.at("offset"), r.at("num_frames"), r.at("label").get<std::vector<std::uint16_t>>()});
    }
    require(j.at("sample_count").get<std::size_t>() == m.records.size(), ErrorKind::Format,
            "sample_count disagrees with record count");
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, "malformed manifest: " + std::string(e.what()));
  }
  if (expected_fingerprint && *expected_fingerprint != m.world_fingerprint) {
    fail(ErrorKind::FingerprintMismatch, "dataset was generated from a different world");
  }

  const std::string bin = read_file(split_dir / "samples.bin");
  ByteReader rd(bin);
  for (const auto& rec : m.records) {
    rd.seek(rec.offset);
    Sample s;
    s.num_frames = static_cast<int>(rd.u32());
    s.visual_dim = static_cast<int>(rd.u32());
    const auto R = rd.u32();
    require(R == kTokensPerFrame, ErrorKind::Format, "record has " + std::to_string(R) + " tokens per frame");
    require(s.num_frames >= 1 && static_cast<std::uint32_t>(s.num_frames) == rec.num_frames, ErrorKind::Format,
            "record frame count disagrees with manifest");
    const auto T = static_cast<std::size_t>(s.num_frames);
    s.visual_frames.resize(T * static_cast<std::size_t>(s.visual_dim));
    for (auto& v : s.visual_frames) v = rd.f32();
    s.word_boundary.resize(T);
    for (auto& b : s.word_boundary) b = rd.u8();
    s.token_grid.resize(T * kTokensPerFrame);
    for (auto& t : s.token_grid) t = rd.u16();
    s.label.resize(rd.u16());
    for (auto& l : s.label) l = rd.u16();
    require(s.label == rec.label, ErrorKind::Format, "record label disagrees with manifest");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace syncvsr

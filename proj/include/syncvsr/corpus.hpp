#pragma once

// Synthetic audiovisual corpus: a phoneme universe whose many-to-one
// phoneme→viseme map manufactures homophenes, rendered into visual feature
// frames with four audio tokens per frame.

#include "syncvsr/util.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace syncvsr {

struct Codebook;

inline constexpr int kTokensPerFrame = 4;
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

enum class TaskMode { Word, Sentence };
const char* to_string(TaskMode mode);
TaskMode parse_task_mode(const std::string& s);

enum class TokenSource { Table, Codebook };

struct WorldConfig {
  int num_phonemes = 20;
  int num_visemes = 8;
  int num_words = 60;
  int homophene_pairs = 10;
  int min_word_length = 2;
  int max_word_length = 6;
  /// Pair i substitutes 1 + (i mod max_pair_substitutions) phonemes.
  int max_pair_substitutions = 2;
  int visual_dim = 16;
  int audio_dim = 16;
  int frames_per_phoneme = 3;
  double visual_noise = 0.5;
  /// Scale of a per-phoneme visual offset; 0 makes homophenes exactly identical.
  double phoneme_cue = 0.35;
  double audio_noise = 0.1;
  int audio_vocab = 64;
  TokenSource token_source = TokenSource::Table;
};

struct HomophenePair {
  int word_a = 0;
  int word_b = 0;
  int edit_distance = 0;
  bool viseme_identical = false;
};

struct World {
  WorldConfig config;
  std::uint64_t seed = 0;
  std::vector<int> phoneme_to_viseme;
  /// gra is the identity onto graphemes [0, P); grapheme P is the word separator.
  int num_graphemes = 0;
  std::vector<std::vector<int>> lexicon;
  std::vector<HomophenePair> designated_pairs;
  Mat viseme_embeddings;         // M × d_v
  Mat phoneme_cues;              // P × d_v, unit scale
  Mat phoneme_audio_embeddings;  // P × d_a
  /// Ground-truth token table: 4 audio tokens per phoneme, each in [0, audio_vocab).
  std::vector<std::array<int, kTokensPerFrame>> phoneme_tokens;

  int separator() const { return config.num_phonemes; }
  int pad_token() const { return config.audio_vocab; }
  std::vector<int> graphemes(int word) const;
  std::vector<int> visemes(int word) const;
  /// SHA-1 over a canonical binary encoding of every field.
  std::string fingerprint() const;
  bool is_homophene_word(int word) const;
};

World build_world(const WorldConfig& config, std::uint64_t seed);
nlohmann::json world_to_json(const World& world);
World world_from_json(const nlohmann::json& j);
void save_world(const World& world, const std::filesystem::path& path);
World load_world(const std::filesystem::path& path);

std::string grapheme_string(const World& world, const std::vector<int>& graphemes);

struct Utterance {
  std::vector<int> words;
  /// Index into `words` of the labelled word (word mode); nullopt for sentences.
  std::optional<std::size_t> target;
};

struct Sample {
  int num_frames = 0;
  int visual_dim = 0;
  std::vector<float> visual_frames;  // num_frames × visual_dim, row-major
  std::vector<std::uint8_t> word_boundary;
  std::vector<std::uint16_t> token_grid;  // num_frames × 4
  std::vector<std::uint16_t> label;

  bool operator==(const Sample&) const = default;
  Mat frames() const;
  int token(int t, int r) const { return token_grid[static_cast<std::size_t>(t * kTokensPerFrame + r)]; }
};

struct RenderOptions {
  /// Required when the world draws tokens from a fitted codebook.
  const Codebook* codebook = nullptr;
};

Sample render_sample(const World& world, const Utterance& utterance, std::uint64_t seed,
                     const RenderOptions& options = {});

/// Per-phoneme visual means before noise (viseme embedding plus cue), k frames each.
Mat clean_visual_frames(const World& world, const std::vector<int>& phonemes);
/// Centered width-3 moving average over time; edge rows average the available neighbours.
Mat coarticulate(const Mat& frames);
/// Raw 100Hz audio features of an utterance (4 per video frame).
Mat audio_features(const World& world, const std::vector<int>& phonemes, std::uint64_t seed);
std::vector<int> utterance_phonemes(const World& world, const std::vector<int>& words);

struct DatasetConfig {
  int train_size = 600;
  int eval_size = 400;
  TaskMode mode = TaskMode::Word;
  int min_eval_per_homophene = 20;
  /// Word mode: random words rendered on each side of the target.
  int context_words = 1;
  int min_sentence_words = 2;
  int max_sentence_words = 6;
};

struct ManifestRecord {
  std::uint32_t id = 0;
  std::uint64_t offset = 0;
  std::uint32_t num_frames = 0;
  std::vector<std::uint16_t> label;
};

struct Manifest {
  std::uint32_t version = kDatasetFormatVersion;
  std::string split;
  TaskMode mode = TaskMode::Word;
  std::string world_fingerprint;
  std::vector<ManifestRecord> records;
};

struct Dataset {
  Manifest manifest;
  std::vector<Sample> samples;
  /// Content hash of manifest.json; identifies the split for cross-checkpoint checks.
  std::string manifest_hash;
};

struct SplitPlan {
  std::vector<Utterance> train;
  std::vector<Utterance> eval;
};

/// Chooses utterances for both splits honouring the coverage rules.
SplitPlan plan_splits(const World& world, const DatasetConfig& config, std::uint64_t seed);

/// Writes <dir>/world.json and <dir>/{train,eval}/{manifest.json,samples.bin}.
void generate_dataset(const World& world, const DatasetConfig& config, std::uint64_t seed,
                      const std::filesystem::path& dir, const RenderOptions& options = {});

void write_split(const std::filesystem::path& dir, const std::string& split, TaskMode mode, const World& world,
                 const std::vector<Sample>& samples);
Dataset load_dataset(const std::filesystem::path& split_dir, const std::string* expected_fingerprint = nullptr);

std::string encode_samples(const std::vector<Sample>& samples, std::vector<std::uint64_t>* offsets = nullptr);
nlohmann::json manifest_to_json(const Manifest& manifest);

/// All viseme-identical word pairs (designated pairs first), with grapheme edit distances.
std::vector<HomophenePair> homophene_pairs(const World& world);

}  // namespace syncvsr

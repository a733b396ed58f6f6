#pragma once

// Transformer encoder over visual feature frames with four heads: word
// classifier, CTC head, autoregressive grapheme decoder, and the per-frame
// audio-token projection used for synchronization.

#include "syncvsr/autograd.hpp"
#include "syncvsr/util.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace syncvsr {

struct Sample;

struct EncoderConfig {
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int ff_dim = 256;
  double dropout = 0.1;
  int max_frames = 512;
  int visual_dim = 16;
  bool use_word_boundary = true;
  /// Audio token alphabet including the pad id.
  int sync_vocab = 65;
  int tokens_per_frame = 4;
  int n_classes = 60;
  /// Grapheme count G (word separator included). CTC uses G+1, the decoder G+2.
  int graphemes = 21;
  int decoder_layers = 2;
  int max_word_length = 6;

  int input_dim() const { return visual_dim + (use_word_boundary ? 1 : 0); }
  int blank() const { return graphemes; }
  int bos() const { return graphemes; }
  int eos() const { return graphemes + 1; }
  int decoder_vocab() const { return graphemes + 2; }
  /// Greedy decoding stops after this many symbols.
  int transcript_cap() const { return 2 + 6 * (max_word_length + 1); }
  void validate() const;
};

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

/// Named, ordered tensor collection. Gradient buffers share the same layout.
class Parameters {
 public:
  void add(std::string name, Mat value);
  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Mat& operator[](std::size_t i) const { return tensors_[i]; }
  Mat& operator[](std::size_t i) { return tensors_[i]; }
  std::size_t index(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Mat& at(const std::string& name) const { return tensors_[index(name)]; }
  Mat& at(const std::string& name) { return tensors_[index(name)]; }
  Parameters zeros_like() const;
  void set_zero();
  std::size_t scalar_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AttentionRecord {
  int layers = 0;
  int heads = 0;
  std::vector<Mat> maps;  // index layer * heads + head; rows are queries

  const Mat& at(int layer, int head) const { return maps[static_cast<std::size_t>(layer * heads + head)]; }
};

struct Model {
  EncoderConfig config;
  Parameters params;

  Model() = default;
  Model(const EncoderConfig& config, std::uint64_t seed);
};

/// Parameter names and shapes for a config, in canonical order.
std::vector<std::pair<std::string, std::pair<int, int>>> parameter_layout(const EncoderConfig& c);

enum class RunMode { Eval, Train };

/// Per-sample computation context: one graph, lazily bound parameter leaves,
/// and the dropout RNG for train mode.
class Forward {
 public:
  Forward(const Model& model, Parameters* grads, RunMode mode, std::uint64_t dropout_seed = 0);

  ag::Graph& graph() { return graph_; }
  const EncoderConfig& config() const { return model_.config; }
  ag::Var param(const std::string& name);
  bool training() const { return mode_ == RunMode::Train; }
  ag::Var dropout(ag::Var x);

 private:
  const Model& model_;
  Parameters* grads_;
  RunMode mode_;
  ag::Graph graph_;
  std::mt19937_64 rng_;
  std::unordered_map<std::string, ag::Var> bound_;
};

struct Encoded {
  ag::Var hidden;
  std::optional<AttentionRecord> attention;
};

/// Frames are T × input_dim. `frame_mask` (optional) replaces masked frames by the mask embedding.
Encoded encode(Forward& fw, const Mat& frames, bool record_attention, const std::vector<bool>* frame_mask = nullptr);

/// Masked rows of the projected input become the learned mask embedding.
ag::Var apply_frame_mask(Forward& fw, ag::Var projected, const std::vector<bool>& mask);

/// T × (R·V_sync) logits; block r of row t scores audio token (t, r).
ag::Var project_sync(Forward& fw, ag::Var hidden);
/// Mean-pooled (over word-boundary frames when enabled) class logits, 1 × n_classes.
ag::Var classify(Forward& fw, ag::Var hidden, const std::vector<std::uint8_t>* word_boundary);
/// T × (G+1) logits, blank last.
ag::Var ctc_head(Forward& fw, ag::Var hidden);
/// Teacher-forced decoder logits, one row per prefix position; prefix[0] must be BOS.
ag::Var decode_lm(Forward& fw, ag::Var hidden, const std::vector<int>& prefix);

struct EncodeOutput {
  Mat hidden;
  std::optional<AttentionRecord> attention;
};
EncodeOutput encode(const Model& model, const Mat& frames, bool record_attention);

/// Greedy argmax decoding from BOS until EOS or the length cap.
std::vector<int> greedy_transcribe(const Model& model, const Mat& frames);

/// Visual frames with the word-boundary flag appended when the config uses it.
Mat model_input(const Sample& sample, const EncoderConfig& config);

Mat sinusoidal_positions(int rows, int dim);

}  // namespace syncvsr

#include "syncvsr/config.hpp"

#include <functional>
#include <map>

namespace syncvsr {

using nlohmann::json;

namespace {

// Binds JSON keys of one section to struct fields; anything unbound is an error.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (!root.contains(name_)) return;
    node_ = &root.at(name_);
    require(node_->is_object(), ErrorKind::Config, "config section '" + name_ + "' must be an object");
  }

  template <class T>
  Section& field(const std::string& key, T& out) {
    handlers_[key] = [this, key, &out](const json& v) {
      try {
        out = v.get<T>();
      } catch (const json::exception&) {
        fail(ErrorKind::Config, "config key '" + name_ + "." + key + "' has the wrong type");
      }
    };
    return *this;
  }

  Section& custom(const std::string& key, std::function<void(const std::string&)> parse) {
    handlers_[key] = [this, key, parse](const json& v) {
      require(v.is_string(), ErrorKind::Config, "config key '" + name_ + "." + key + "' must be a string");
      parse(v.get<std::string>());
    };
    return *this;
  }

  void apply() const {
    if (!node_) return;
    for (const auto& [key, value] : node_->items()) {
      auto it = handlers_.find(key);
      require(it != handlers_.end(), ErrorKind::Config, "unknown config key '" + name_ + "." + key + "'");
      it->second(value);
    }
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::map<std::string, std::function<void(const json&)>> handlers_;
};

TokenSource parse_token_source(const std::string& s) {
  if (s == "table") return TokenSource::Table;
  if (s == "codebook") return TokenSource::Codebook;
  fail(ErrorKind::Config, "unknown token_source '" + s + "' (expected table | codebook)");
}

}  // namespace

void RunConfig::override_seed(std::uint64_t seed) {
  world_seed = seed;
  quantizer.seed = seed;
  train.seed = seed;
}

RunConfig parse_run_config(const json& j) {
  require(j.is_object(), ErrorKind::Config, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "world" && key != "quantizer" && key != "model" && key != "train" && key != "analysis") {
      fail(ErrorKind::Config, "unknown config key '" + key + "'");
    }
  }
  RunConfig c;
  auto& w = c.world;
  auto& d = c.dataset;
  Section(j, "world")
      .field("seed", c.world_seed)
      .field("num_phonemes", w.num_phonemes)
      .field("num_visemes", w.num_visemes)
      .field("num_words", w.num_words)
      .field("homophene_pairs", w.homophene_pairs)
      .field("min_word_length", w.min_word_length)
      .field("max_word_length", w.max_word_length)
      .field("max_pair_substitutions", w.max_pair_substitutions)
      .field("visual_dim", w.visual_dim)
      .field("audio_dim", w.audio_dim)
      .field("frames_per_phoneme", w.frames_per_phoneme)
      .field("visual_noise", w.visual_noise)
      .field("phoneme_cue", w.phoneme_cue)
      .field("audio_noise", w.audio_noise)
      .field("audio_vocab", w.audio_vocab)
      .custom("token_source", [&](const std::string& s) { w.token_source = parse_token_source(s); })
      .field("train_size", d.train_size)
      .field("eval_size", d.eval_size)
      .field("min_eval_per_homophene", d.min_eval_per_homophene)
      .field("context_words", d.context_words)
      .field("min_sentence_words", d.min_sentence_words)
      .field("max_sentence_words", d.max_sentence_words)
      .apply();

  auto& q = c.quantizer;
  Section(j, "quantizer")
      .field("iterations", q.iterations)
      .field("seed", q.seed)
      .field("utterances", q.utterances)
      .field("codebook", q.codebook)
      .apply();

  auto& m = c.model;
  Section(j, "model")
      .field("d_model", m.d_model)
      .field("n_layers", m.n_layers)
      .field("n_heads", m.n_heads)
      .field("ff_dim", m.ff_dim)
      .field("dropout", m.dropout)
      .field("max_frames", m.max_frames)
      .field("use_word_boundary", m.use_word_boundary)
      .field("decoder_layers", m.decoder_layers)
      .apply();

  auto& t = c.train;
  Section(j, "train")
      .custom("mode", [&](const std::string& s) {
        try {
          t.mode = parse_task_mode(s);
        } catch (const Error& e) {
          fail(ErrorKind::Config, e.what());
        }
      })
      .field("alpha", t.alpha)
      .field("lambda", t.lambda)
      .custom("sync_variant", [&](const std::string& s) { t.sync_variant = parse_sync_variant(s); })
      .field("mask_ratio", t.mask_ratio)
      .field("epochs", t.epochs)
      .field("batch_size", t.batch_size)
      .field("peak_lr", t.peak_lr)
      .field("warmup_epochs", t.warmup_epochs)
      .field("seed", t.seed)
      .field("beta1", t.beta1)
      .field("beta2", t.beta2)
      .field("adam_eps", t.adam_eps)
      .field("clip_norm", t.clip_norm)
      .field("data_dir", t.data_dir)
      .field("checkpoint_dir", t.checkpoint_dir)
      .field("eval_every", t.eval_every)
      .apply();

  auto& a = c.analysis;
  Section(j, "analysis")
      .field("vanilla", a.vanilla)
      .field("attention_samples", a.attention_samples)
      .field("transcribe", a.transcribe)
      .apply();

  d.mode = t.mode;
  t.validate();
  m.validate();
  require(q.iterations >= 1 && q.utterances >= 1, ErrorKind::Config, "quantizer.iterations and utterances must be >= 1");
  require(a.attention_samples >= 0, ErrorKind::Config, "analysis.attention_samples must be >= 0");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Config, "cannot parse " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::Config, e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  const auto& w = c.world;
  const auto& d = c.dataset;
  const auto& m = c.model;
  json train = to_json(c.train);
  return {{"world",
           {{"seed", c.world_seed},
            {"num_phonemes", w.num_phonemes},
            {"num_visemes", w.num_visemes},
            {"num_words", w.num_words},
            {"homophene_pairs", w.homophene_pairs},
            {"min_word_length", w.min_word_length},
            {"max_word_length", w.max_word_length},
            {"max_pair_substitutions", w.max_pair_substitutions},
            {"visual_dim", w.visual_dim},
            {"audio_dim", w.audio_dim},
            {"frames_per_phoneme", w.frames_per_phoneme},
            {"visual_noise", w.visual_noise},
            {"phoneme_cue", w.phoneme_cue},
            {"audio_noise", w.audio_noise},
            {"audio_vocab", w.audio_vocab},
            {"token_source", w.token_source == TokenSource::Table ? "table" : "codebook"},
            {"train_size", d.train_size},
            {"eval_size", d.eval_size},
            {"min_eval_per_homophene", d.min_eval_per_homophene},
            {"context_words", d.context_words},
            {"min_sentence_words", d.min_sentence_words},
            {"max_sentence_words", d.max_sentence_words}}},
          {"quantizer",
           {{"iterations", c.quantizer.iterations},
            {"seed", c.quantizer.seed},
            {"utterances", c.quantizer.utterances},
            {"codebook", c.quantizer.codebook}}},
          {"model",
           {{"d_model", m.d_model},
            {"n_layers", m.n_layers},
            {"n_heads", m.n_heads},
            {"ff_dim", m.ff_dim},
            {"dropout", m.dropout},
            {"max_frames", m.max_frames},
            {"use_word_boundary", m.use_word_boundary},
            {"decoder_layers", m.decoder_layers}}},
          {"train", train},
          {"analysis",
           {{"vanilla", c.analysis.vanilla},
            {"attention_samples", c.analysis.attention_samples},
            {"transcribe", c.analysis.transcribe}}}};
}

}  // namespace syncvsr

#include "syncvsr/model.hpp"

#include "syncvsr/corpus.hpp"

#include <cmath>

namespace syncvsr {

using nlohmann::json;

void EncoderConfig::validate() const {
  require(d_model >= 1 && n_layers >= 1 && n_heads >= 1 && ff_dim >= 1 && decoder_layers >= 1, ErrorKind::Config,
          "model dimensions must be >= 1");
  require(d_model % n_heads == 0, ErrorKind::Config, "d_model must be divisible by n_heads");
  require(tokens_per_frame == kTokensPerFrame, ErrorKind::Config, "tokens_per_frame must be 4");
  require(dropout >= 0.0 && dropout < 1.0, ErrorKind::Config, "dropout must lie in [0, 1)");
  require(max_frames >= 1 && visual_dim >= 1 && sync_vocab >= 1 && n_classes >= 1 && graphemes >= 1 &&
              max_word_length >= 1,
          ErrorKind::Config, "model sizes must be >= 1");
}

json to_json(const EncoderConfig& c) {
  return {{"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"ff_dim", c.ff_dim},
          {"dropout", c.dropout},
          {"max_frames", c.max_frames},
          {"visual_dim", c.visual_dim},
          {"use_word_boundary", c.use_word_boundary},
          {"sync_vocab", c.sync_vocab},
          {"tokens_per_frame", c.tokens_per_frame},
          {"n_classes", c.n_classes},
          {"graphemes", c.graphemes},
          {"decoder_layers", c.decoder_layers},
          {"max_word_length", c.max_word_length}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.d_model = j.at("d_model");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.ff_dim = j.at("ff_dim");
  c.dropout = j.at("dropout");
  c.max_frames = j.at("max_frames");
  c.visual_dim = j.at("visual_dim");
  c.use_word_boundary = j.at("use_word_boundary");
  c.sync_vocab = j.at("sync_vocab");
  c.tokens_per_frame = j.at("tokens_per_frame");
  c.n_classes = j.at("n_classes");
  c.graphemes = j.at("graphemes");
  c.decoder_layers = j.at("decoder_layers");
  c.max_word_length = j.at("max_word_length");
  c.validate();
  return c;
}

// ---------------------------------------------------------------- parameters

void Parameters::add(std::string name, Mat value) {
  require(index_.count(name) == 0, ErrorKind::InvalidArgument, "duplicate parameter " + name);
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

std::size_t Parameters::index(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::InvalidArgument, "no parameter named " + name);
  return it->second;
}

Parameters Parameters::zeros_like() const {
  Parameters out;
  for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Mat::Zero(tensors_[i].rows(), tensors_[i].cols()));
  return out;
}

void Parameters::set_zero() {
  for (auto& t : tensors_) t.setZero();
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

namespace {

enum class Init { Weight, Zero, One, Embedding };

struct Slot {
  std::string name;
  int rows;
  int cols;
  Init init;
};

void add_norm(std::vector<Slot>& s, const std::string& p, int d) {
  s.push_back({p + ".gain", 1, d, Init::One});
  s.push_back({p + ".bias", 1, d, Init::Zero});
}

void add_attention(std::vector<Slot>& s, const std::string& p, int d) {
  for (const char* w : {"q", "k", "v", "o"}) {
    s.push_back({p + ".w" + w, d, d, Init::Weight});
    s.push_back({p + ".b" + w, 1, d, Init::Zero});
  }
}

void add_ff(std::vector<Slot>& s, const std::string& p, int d, int ff) {
  s.push_back({p + ".w1", d, ff, Init::Weight});
  s.push_back({p + ".b1", 1, ff, Init::Zero});
  s.push_back({p + ".w2", ff, d, Init::Weight});
  s.push_back({p + ".b2", 1, d, Init::Zero});
}

std::vector<Slot> slots(const EncoderConfig& c) {
  const int d = c.d_model;
  std::vector<Slot> s;
  s.push_back({"input.weight", c.input_dim(), d, Init::Weight});
  s.push_back({"input.bias", 1, d, Init::Zero});
  s.push_back({"mask_embedding", 1, d, Init::Embedding});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    add_norm(s, p + ".ln1", d);
    add_attention(s, p + ".attn", d);
    add_norm(s, p + ".ln2", d);
    add_ff(s, p + ".ff", d, c.ff_dim);
  }
  add_norm(s, "encoder.ln_final", d);
  s.push_back({"sync.weight", d, c.tokens_per_frame * c.sync_vocab, Init::Weight});
  s.push_back({"sync.bias", 1, c.tokens_per_frame * c.sync_vocab, Init::Zero});
  s.push_back({"classifier.weight", d, c.n_classes, Init::Weight});
  s.push_back({"classifier.bias", 1, c.n_classes, Init::Zero});
  s.push_back({"ctc.weight", d, c.graphemes + 1, Init::Weight});
  s.push_back({"ctc.bias", 1, c.graphemes + 1, Init::Zero});
  s.push_back({"decoder.embedding", c.decoder_vocab(), d, Init::Embedding});
  for (int l = 0; l < c.decoder_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    add_norm(s, p + ".ln1", d);
    add_attention(s, p + ".self", d);
    add_norm(s, p + ".ln2", d);
    add_attention(s, p + ".cross", d);
    add_norm(s, p + ".ln3", d);
    add_ff(s, p + ".ff", d, c.ff_dim);
  }
  add_norm(s, "decoder.ln_final", d);
  s.push_back({"decoder.out.weight", d, c.decoder_vocab(), Init::Weight});
  s.push_back({"decoder.out.bias", 1, c.decoder_vocab(), Init::Zero});
  return s;
}

}  // namespace

std::vector<std::pair<std::string, std::pair<int, int>>> parameter_layout(const EncoderConfig& c) {
  std::vector<std::pair<std::string, std::pair<int, int>>> out;
  for (const auto& s : slots(c)) out.push_back({s.name, {s.rows, s.cols}});
  return out;
}

Model::Model(const EncoderConfig& cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  std::mt19937_64 rng(mix_seed(seed, 0x696e6974ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& s : slots(config)) {
    Mat m(s.rows, s.cols);
    switch (s.init) {
      case Init::Zero: m.setZero(); break;
      case Init::One: m.setOnes(); break;
      case Init::Weight: {
        const double std = 1.0 / std::sqrt(static_cast<double>(s.rows));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * normal(rng);
        break;
      }
      case Init::Embedding:
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
        break;
    }
    params.add(s.name, std::move(m));
  }
}

// ---------------------------------------------------------------- forward

Forward::Forward(const Model& model, Parameters* grads, RunMode mode, std::uint64_t dropout_seed)
    : model_(model), grads_(grads), mode_(mode), graph_(grads != nullptr), rng_(dropout_seed) {}

ag::Var Forward::param(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const std::size_t i = model_.params.index(name);
  Mat* sink = grads_ ? &(*grads_)[i] : nullptr;
  ag::Var v = graph_.parameter(model_.params[i], sink);
  bound_.emplace(name, v);
  return v;
}

ag::Var Forward::dropout(ag::Var x) {
  const double p = model_.config.dropout;
  if (!training() || p <= 0.0) return x;
  const Mat& X = graph_.value(x);
  std::bernoulli_distribution keep(1.0 - p);
  Mat mask(X.rows(), X.cols());
  const double s = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng_) ? s : 0.0;
  return ag::mul_const(graph_, x, mask);
}

Mat sinusoidal_positions(int rows, int dim) {
  Mat pe(rows, dim);
  for (int t = 0; t < rows; ++t) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(t, i) = (i % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
    }
  }
  return pe;
}

namespace {

ag::Var linear(Forward& fw, ag::Var x, const std::string& w, const std::string& b) {
  auto& g = fw.graph();
  return ag::add_row(g, ag::matmul(g, x, fw.param(w)), fw.param(b));
}

ag::Var norm(Forward& fw, ag::Var x, const std::string& p) {
  return ag::layer_norm(fw.graph(), x, fw.param(p + ".gain"), fw.param(p + ".bias"));
}

ag::Var attention(Forward& fw, const std::string& p, ag::Var q_in, ag::Var kv_in, bool causal,
                  std::vector<Mat>* record) {
  auto& g = fw.graph();
  const int d = fw.config().d_model;
  const int H = fw.config().n_heads;
  const int dh = d / H;
  const ag::Var q = linear(fw, q_in, p + ".wq", p + ".bq");
  const ag::Var k = linear(fw, kv_in, p + ".wk", p + ".bk");
  const ag::Var v = linear(fw, kv_in, p + ".wv", p + ".bv");
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ag::Var> heads;
  for (int h = 0; h < H; ++h) {
    ag::Var qh = H == 1 ? q : ag::slice_cols(g, q, h * dh, dh);
    ag::Var kh = H == 1 ? k : ag::slice_cols(g, k, h * dh, dh);
    ag::Var vh = H == 1 ? v : ag::slice_cols(g, v, h * dh, dh);
    ag::Var probs = ag::softmax_rows(g, ag::scale(g, ag::matmul_nt(g, qh, kh), s), causal);
    if (record) record->push_back(g.value(probs));
    heads.push_back(ag::matmul(g, probs, vh));
  }
  ag::Var cat = H == 1 ? heads[0] : ag::concat_cols(g, heads);
  return linear(fw, cat, p + ".wo", p + ".bo");
}

ag::Var feed_forward(Forward& fw, const std::string& p, ag::Var x) {
  auto& g = fw.graph();
  return linear(fw, ag::gelu(g, linear(fw, x, p + ".w1", p + ".b1")), p + ".w2", p + ".b2");
}

}  // namespace

ag::Var apply_frame_mask(Forward& fw, ag::Var projected, const std::vector<bool>& mask) {
  return ag::replace_rows(fw.graph(), projected, mask, fw.param("mask_embedding"));
}

Encoded encode(Forward& fw, const Mat& frames, bool record_attention, const std::vector<bool>* frame_mask) {
  const auto& c = fw.config();
  auto& g = fw.graph();
  const int T = static_cast<int>(frames.rows());
  require(T >= 1, ErrorKind::InvalidArgument, "encode needs at least one frame");
  require(T <= c.max_frames, ErrorKind::InvalidArgument,
          "sequence of " + std::to_string(T) + " frames exceeds max_frames " + std::to_string(c.max_frames));
  require(frames.cols() == c.input_dim(), ErrorKind::ShapeMismatch,
          "frames have " + std::to_string(frames.cols()) + " features, model expects " + std::to_string(c.input_dim()));

  Encoded out;
  std::vector<Mat> maps;
  ag::Var h = linear(fw, g.constant(frames), "input.weight", "input.bias");
  if (frame_mask) h = apply_frame_mask(fw, h, *frame_mask);
  h = ag::add(g, h, g.constant(sinusoidal_positions(T, c.d_model)));
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    ag::Var n1 = norm(fw, h, p + ".ln1");
    ag::Var a = attention(fw, p + ".attn", n1, n1, false, record_attention ? &maps : nullptr);
    h = ag::add(g, h, fw.dropout(a));
    h = ag::add(g, h, fw.dropout(feed_forward(fw, p + ".ff", norm(fw, h, p + ".ln2"))));
  }
  out.hidden = norm(fw, h, "encoder.ln_final");
  if (record_attention) out.attention = AttentionRecord{c.n_layers, c.n_heads, std::move(maps)};
  return out;
}

ag::Var project_sync(Forward& fw, ag::Var hidden) {
  require(fw.graph().value(hidden).cols() == fw.config().d_model, ErrorKind::ShapeMismatch, "hidden width");
  return linear(fw, hidden, "sync.weight", "sync.bias");
}

ag::Var classify(Forward& fw, ag::Var hidden, const std::vector<std::uint8_t>* word_boundary) {
  auto& g = fw.graph();
  std::vector<bool> mask;
  if (fw.config().use_word_boundary && word_boundary) {
    require(static_cast<Eigen::Index>(word_boundary->size()) == g.value(hidden).rows(), ErrorKind::ShapeMismatch,
            "word boundary length");
    bool any = false;
    for (auto b : *word_boundary) {
      mask.push_back(b != 0);
      any = any || b != 0;
    }
    require(any, ErrorKind::InvalidArgument, "word boundary mask selects no frames");
  }
  return linear(fw, ag::mean_rows(g, hidden, mask), "classifier.weight", "classifier.bias");
}

ag::Var ctc_head(Forward& fw, ag::Var hidden) { return linear(fw, hidden, "ctc.weight", "ctc.bias"); }

ag::Var decode_lm(Forward& fw, ag::Var hidden, const std::vector<int>& prefix) {
  const auto& c = fw.config();
  auto& g = fw.graph();
  require(!prefix.empty() && prefix[0] == c.bos(), ErrorKind::InvalidArgument, "decoder prefix must start with BOS");
  for (int t : prefix) {
    require(t >= 0 && t < c.decoder_vocab(), ErrorKind::InvalidArgument, "decoder token " + std::to_string(t) + " out of range");
  }
  ag::Var y = ag::gather_rows(g, fw.param("decoder.embedding"), prefix);
  y = ag::add(g, y, g.constant(sinusoidal_positions(static_cast<int>(prefix.size()), c.d_model)));
  for (int l = 0; l < c.decoder_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    ag::Var n1 = norm(fw, y, p + ".ln1");
    y = ag::add(g, y, fw.dropout(attention(fw, p + ".self", n1, n1, true, nullptr)));
    y = ag::add(g, y, fw.dropout(attention(fw, p + ".cross", norm(fw, y, p + ".ln2"), hidden, false, nullptr)));
    y = ag::add(g, y, fw.dropout(feed_forward(fw, p + ".ff", norm(fw, y, p + ".ln3"))));
  }
  return linear(fw, norm(fw, y, "decoder.ln_final"), "decoder.out.weight", "decoder.out.bias");
}

EncodeOutput encode(const Model& model, const Mat& frames, bool record_attention) {
  Forward fw(model, nullptr, RunMode::Eval);
  auto enc = encode(fw, frames, record_attention);
  return {fw.graph().value(enc.hidden), std::move(enc.attention)};
}

std::vector<int> greedy_transcribe(const Model& model, const Mat& frames) {
  Forward fw(model, nullptr, RunMode::Eval);
  const auto enc = encode(fw, frames, false);
  const auto& c = model.config;
  std::vector<int> prefix{c.bos()};
  std::vector<int> out;
  while (static_cast<int>(out.size()) < c.transcript_cap()) {
    const Mat& logits = fw.graph().value(decode_lm(fw, enc.hidden, prefix));
    const auto last = logits.row(logits.rows() - 1);
    int best = 0;
    for (int k = 1; k < c.decoder_vocab(); ++k) {
      if (k != c.bos() && last(k) > last(best)) best = k;
    }
    if (best == c.eos()) break;
    out.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

Mat model_input(const Sample& sample, const EncoderConfig& config) {
  require(sample.visual_dim == config.visual_dim, ErrorKind::ShapeMismatch,
          "sample has visual dim " + std::to_string(sample.visual_dim) + ", model expects " + std::to_string(config.visual_dim));
  Mat frames = sample.frames();
  if (!config.use_word_boundary) return frames;
  Mat out(frames.rows(), frames.cols() + 1);
  out.leftCols(frames.cols()) = frames;
  for (Eigen::Index t = 0; t < frames.rows(); ++t) out(t, frames.cols()) = sample.word_boundary[static_cast<std::size_t>(t)] ? 1.0 : 0.0;
  return out;
}

}  // namespace syncvsr

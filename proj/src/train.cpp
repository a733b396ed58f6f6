#include "syncvsr/train.hpp"

#include "syncvsr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace syncvsr {

using nlohmann::json;

const char* to_string(SyncVariant v) {
  switch (v) {
    case SyncVariant::Off: return "off";
    case SyncVariant::Full: return "full";
    case SyncVariant::Masked: return "masked";
  }
  return "off";
}

SyncVariant parse_sync_variant(const std::string& s) {
  if (s == "off") return SyncVariant::Off;
  if (s == "full") return SyncVariant::Full;
  if (s == "masked") return SyncVariant::Masked;
  fail(ErrorKind::Config, "unknown sync_variant '" + s + "' (expected full | masked | off)");
}

void TrainConfig::validate() const {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::Config, "train.alpha must lie in [0, 1]");
  require(lambda >= 0.0, ErrorKind::Config, "train.lambda must be >= 0");
  if (sync_variant == SyncVariant::Masked) {
    require(mask_ratio > 0.0 && mask_ratio < 1.0, ErrorKind::Config, "train.mask_ratio must lie in (0, 1)");
  }
  require(epochs >= 1 && batch_size >= 1, ErrorKind::Config, "train.epochs and train.batch_size must be >= 1");
  require(warmup_epochs >= 0 && warmup_epochs < epochs, ErrorKind::Config, "train.warmup_epochs must be < epochs");
  require(peak_lr > 0.0, ErrorKind::Config, "train.peak_lr must be > 0");
  require(eval_every >= 1, ErrorKind::Config, "train.eval_every must be >= 1");
  require(clip_norm > 0.0, ErrorKind::Config, "train.clip_norm must be > 0");
}

json to_json(const TrainConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"alpha", c.alpha},
          {"lambda", c.lambda},
          {"sync_variant", to_string(c.sync_variant)},
          {"mask_ratio", c.mask_ratio},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"peak_lr", c.peak_lr},
          {"warmup_epochs", c.warmup_epochs},
          {"seed", c.seed},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"clip_norm", c.clip_norm},
          {"data_dir", c.data_dir},
          {"checkpoint_dir", c.checkpoint_dir},
          {"eval_every", c.eval_every}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.mode = parse_task_mode(j.at("mode"));
  c.alpha = j.at("alpha");
  c.lambda = j.at("lambda");
  c.sync_variant = parse_sync_variant(j.at("sync_variant"));
  c.mask_ratio = j.at("mask_ratio");
  c.epochs = j.at("epochs");
  c.batch_size = j.at("batch_size");
  c.peak_lr = j.at("peak_lr");
  c.warmup_epochs = j.at("warmup_epochs");
  c.seed = j.at("seed");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.adam_eps = j.at("adam_eps");
  c.clip_norm = j.at("clip_norm");
  c.data_dir = j.at("data_dir");
  c.checkpoint_dir = j.at("checkpoint_dir");
  c.eval_every = j.at("eval_every");
  return c;
}

double lr_schedule(long step, long warmup_steps, long total_steps, double peak) {
  require(step >= 0 && step <= total_steps, ErrorKind::InvalidArgument, "lr step outside [0, total]");
  require(warmup_steps >= 0 && warmup_steps < total_steps, ErrorKind::InvalidArgument, "warmup must be < total steps");
  if (warmup_steps > 0 && step <= warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
}

std::vector<bool> draw_frame_mask(int num_frames, double ratio, std::uint64_t seed) {
  const int n = std::clamp(static_cast<int>(std::lround(ratio * num_frames)), 1, num_frames);
  std::vector<int> idx(static_cast<std::size_t>(num_frames));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> mask(static_cast<std::size_t>(num_frames), false);
  for (int i = 0; i < n; ++i) mask[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = true;
  return mask;
}

LossGraph build_losses(Forward& fw, const Sample& sample, const LossSettings& s, const std::vector<bool>* frame_mask) {
  auto& g = fw.graph();
  const auto& c = fw.config();
  const bool masked = s.variant == SyncVariant::Masked;
  require(!masked || frame_mask != nullptr, ErrorKind::InvalidArgument, "masked variant needs a frame mask");

  const auto enc = encode(fw, model_input(sample, c), false, masked ? frame_mask : nullptr);
  LossGraph out;
  auto& b = out.bundle;
  b.alpha = s.alpha;
  b.lambda = s.variant == SyncVariant::Off ? 0.0 : s.lambda;

  if (s.mode == TaskMode::Word) {
    ag::Var logits = classify(fw, enc.hidden, &sample.word_boundary);
    auto r = word_ce(g.value(logits), sample.label.at(0));
    out.word = ag::scalar_loss(g, logits, r.value, std::move(r.grad));
    b.l_word = r.value;
    b.l_task = r.value;
    out.task = out.word;
  } else {
    const std::vector<int> target(sample.label.begin(), sample.label.end());
    if (s.alpha > 0.0) {
      ag::Var logits = ctc_head(fw, enc.hidden);
      auto r = ctc_loss(g.value(logits), target);
      out.ctc = ag::scalar_loss(g, logits, r.value, std::move(r.grad));
      b.l_ctc = r.value;
    }
    if (s.alpha < 1.0) {
      std::vector<int> prefix{c.bos()};
      prefix.insert(prefix.end(), target.begin(), target.end());
      std::vector<int> next = target;
      next.push_back(c.eos());
      ag::Var logits = decode_lm(fw, enc.hidden, prefix);
      auto r = lm_loss(g.value(logits), next);
      out.lm = ag::scalar_loss(g, logits, r.value, std::move(r.grad));
      b.l_lm = r.value;
    }
    b.l_task = task_loss(b.l_ctc, b.l_lm, s.alpha);
    out.task = ag::affine_scalars(g, out.ctc, s.alpha, out.lm, 1.0 - s.alpha, b.l_task);
  }

  if (s.variant != SyncVariant::Off) {
    ag::Var logits = project_sync(fw, enc.hidden);
    auto r = masked ? masked_sync_loss(g.value(logits), sample.token_grid, *frame_mask, s.pad_id)
                    : sync_loss(g.value(logits), sample.token_grid, s.pad_id);
    out.sync = ag::scalar_loss(g, logits, r.value, std::move(r.grad));
    b.l_sync = r.value;
  }
  b.l_total = total_loss(b.l_task, b.l_sync, b.lambda);
  out.total = ag::affine_scalars(g, out.task, 1.0, out.sync, b.lambda, b.l_total);
  return out;
}

EncoderConfig model_config_for(const EncoderConfig& tmpl, const World& world, const TrainConfig&) {
  EncoderConfig c = tmpl;
  c.visual_dim = world.config.visual_dim;
  c.sync_vocab = world.config.audio_vocab + 1;
  c.n_classes = static_cast<int>(world.lexicon.size());
  c.graphemes = world.num_graphemes;
  c.max_word_length = world.config.max_word_length;
  c.validate();
  return c;
}

json to_json(const EpochLog& e) {
  json j = {{"epoch", e.epoch}, {"l_task", e.l_task}, {"l_sync", e.l_sync}, {"l_total", e.l_total}, {"lr", e.lr}};
  if (e.eval_metric) {
    j["eval_metric"] = *e.eval_metric;
    j["eval_metric_name"] = e.eval_metric_name;
  } else {
    j["eval_metric"] = nullptr;
  }
  return j;
}

namespace {

struct Adam {
  Parameters m, v;
  long t = 0;
  explicit Adam(const Parameters& p) : m(p.zeros_like()), v(p.zeros_like()) {}

  void step(Parameters& params, const Parameters& grads, double lr, const TrainConfig& c) {
    ++t;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grads[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grads[i].cwiseAbs2();
      params[i].array() -= lr * (m[i].array() / bc1) / ((v[i].array() / bc2).sqrt() + c.adam_eps);
    }
  }
};

double clip_global_norm(Parameters& grads, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) sq += grads[i].squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] *= s;
  }
  return norm;
}

double eval_metric(const Model& model, const Dataset& eval, TaskMode mode, std::string& name) {
  EvalOptions opts;
  opts.transcribe = false;
  const auto r = evaluate(model, eval, nullptr, opts);
  if (mode == TaskMode::Word) {
    name = "top1";
    return r.top1;
  }
  name = "perplexity";
  return r.perplexity;
}

}  // namespace

TrainResult train(const TrainConfig& config, const EncoderConfig& model_template, const World& world,
                  const Dataset& train_set, const Dataset* eval_set, const TrainOutputs* outputs) {
  config.validate();
  require(!train_set.samples.empty(), ErrorKind::InvalidArgument, "training split is empty");
  require(train_set.manifest.mode == config.mode, ErrorKind::Config,
          std::string("train.mode is ") + to_string(config.mode) + " but the dataset is " + to_string(train_set.manifest.mode));
  require(train_set.manifest.world_fingerprint == world.fingerprint(), ErrorKind::FingerprintMismatch,
          "training split was generated from a different world");

  TrainResult result;
  result.model = Model(model_config_for(model_template, world, config), mix_seed(config.seed, 0x6d6f64656cULL));
  Model& model = result.model;
  int max_t = 0;
  for (const auto& s : train_set.samples) max_t = std::max(max_t, s.num_frames);
  require(max_t <= model.config.max_frames, ErrorKind::Config, "training clips exceed model.max_frames");

  result.meta.train_config = to_json(config);
  result.meta.seed = config.seed;
  result.meta.world_fingerprint = world.fingerprint();
  result.meta.eval_split_id = eval_set ? eval_set->manifest_hash : "";

  LossSettings settings;
  settings.mode = config.mode;
  settings.alpha = config.alpha;
  settings.lambda = config.lambda;
  settings.variant = config.sync_variant;
  settings.pad_id = world.pad_token();

  const auto N = train_set.samples.size();
  const auto B = static_cast<std::size_t>(config.batch_size);
  const long steps_per_epoch = static_cast<long>((N + B - 1) / B);
  const long total_steps = steps_per_epoch * config.epochs;
  const long warmup_steps = steps_per_epoch * config.warmup_epochs;

  Parameters grads = model.params.zeros_like();
  Adam adam(model.params);
  std::ofstream log_file;
  if (outputs) {
    std::filesystem::create_directories(outputs->checkpoint_dir);
    if (outputs->log_path.has_parent_path()) std::filesystem::create_directories(outputs->log_path.parent_path());
    log_file.open(outputs->log_path, std::ios::trunc);
    require(static_cast<bool>(log_file), ErrorKind::Io, "cannot open metrics log " + outputs->log_path.string());
  }

  long step = 0;
  std::vector<std::size_t> order(N);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum_task = 0.0;
    double sum_sync = 0.0;
    double last_lr = 0.0;
    for (std::size_t start = 0; start < N; start += B) {
      const std::size_t end = std::min(N, start + B);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      grads.set_zero();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const Sample& sample = train_set.samples[idx];
        const std::uint64_t sample_seed = mix_seed(config.seed, static_cast<std::uint64_t>(epoch), idx);
        Forward fw(model, &grads, RunMode::Train, mix_seed(sample_seed, 1));
        std::vector<bool> mask;
        if (config.sync_variant == SyncVariant::Masked) mask = draw_frame_mask(sample.num_frames, config.mask_ratio, mix_seed(sample_seed, 2));
        const auto losses = build_losses(fw, sample, settings, mask.empty() ? nullptr : &mask);
        if (!std::isfinite(losses.bundle.l_total)) {
          fail(ErrorKind::NonFinite, "non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                                         std::to_string(idx) + " (task " + std::to_string(losses.bundle.l_task) +
                                         ", sync " + std::to_string(losses.bundle.l_sync) + ")");
        }
        fw.graph().backward(losses.total, inv_batch);
        sum_task += losses.bundle.l_task;
        sum_sync += losses.bundle.l_sync;
      }
      clip_global_norm(grads, config.clip_norm);
      ++step;
      last_lr = lr_schedule(step, warmup_steps, total_steps, config.peak_lr);
      adam.step(model.params, grads, last_lr, config);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.l_task = sum_task / static_cast<double>(N);
    entry.l_sync = config.sync_variant == SyncVariant::Off ? 0.0 : sum_sync / static_cast<double>(N);
    entry.l_total = total_loss(entry.l_task, entry.l_sync, config.effective_lambda());
    entry.lr = last_lr;
    const bool checkpoint_epoch = epoch % config.eval_every == 0 || epoch == config.epochs;
    if (checkpoint_epoch && eval_set && !eval_set->samples.empty()) {
      entry.eval_metric = eval_metric(model, *eval_set, config.mode, entry.eval_metric_name);
    }
    if (outputs && checkpoint_epoch) {
      result.meta.epoch = epoch;
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%03d.ckpt", epoch);
      save_checkpoint(model, result.meta, outputs->checkpoint_dir / name);
    }
    if (log_file) {
      log_file << to_json(entry).dump() << "\n";
      log_file.flush();
    }
    result.log.push_back(entry);
  }

  result.meta.epoch = config.epochs;
  if (outputs) {
    result.final_checkpoint = outputs->checkpoint_dir / "final.ckpt";
    save_checkpoint(model, result.meta, result.final_checkpoint);
  }
  result.parameter_hash = parameter_hash(model.params);
  return result;
}

// ---------------------------------------------------------------- evaluation

json to_json(const MetricsReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j = {{"mode", to_string(r.mode)}, {"split", r.split}, {"split_id", r.split_id}, {"num_samples", r.num_samples}};
  if (r.mode == TaskMode::Word) {
    j["top1"] = num(r.top1);
    j["homophene_top1"] = num(r.homophene_top1);
    json f1 = json::object();
    for (const auto& [w, v] : r.per_word_f1) f1[std::to_string(w)] = v;
    j["per_word_f1"] = f1;
  } else {
    j["wer"] = num(r.wer);
    j["perplexity"] = num(r.perplexity);
    j["mean_lm_nll"] = num(r.mean_lm_nll);
  }
  return j;
}

MetricsReport evaluate(const Model& model, const Dataset& split, const World* world, const EvalOptions& options) {
  require(!split.samples.empty(), ErrorKind::InvalidArgument, "cannot evaluate an empty split");
  if (world) {
    require(split.manifest.world_fingerprint == world->fingerprint(), ErrorKind::FingerprintMismatch,
            "evaluation split belongs to a different world");
  }
  const auto& c = model.config;
  MetricsReport r;
  r.mode = split.manifest.mode;
  r.split = split.manifest.split;
  r.split_id = split.manifest_hash;
  r.num_samples = static_cast<int>(split.samples.size());

  if (r.mode == TaskMode::Word) {
    require(c.n_classes > 0, ErrorKind::Config, "model has no classifier");
    int correct = 0;
    int hom_total = 0;
    int hom_correct = 0;
    for (const auto& s : split.samples) {
      Forward fw(model, nullptr, RunMode::Eval);
      const auto enc = encode(fw, model_input(s, c), false);
      const Mat& logits = fw.graph().value(classify(fw, enc.hidden, &s.word_boundary));
      Eigen::Index arg = 0;
      logits.row(0).maxCoeff(&arg);
      const int label = s.label.at(0);
      r.predictions.push_back(static_cast<int>(arg));
      r.labels.push_back(label);
      correct += arg == label ? 1 : 0;
      if (world && world->is_homophene_word(label)) {
        ++hom_total;
        hom_correct += arg == label ? 1 : 0;
      }
    }
    r.top1 = static_cast<double>(correct) / static_cast<double>(r.num_samples);
    if (hom_total > 0) r.homophene_top1 = static_cast<double>(hom_correct) / static_cast<double>(hom_total);
    std::set<int> classes(r.labels.begin(), r.labels.end());
    classes.insert(r.predictions.begin(), r.predictions.end());
    for (int cls : classes) r.per_word_f1[cls] = f1_score(r.predictions, r.labels, cls);
    return r;
  }

  double nll = 0.0;
  long errors = 0;
  long ref_words = 0;
  for (const auto& s : split.samples) {
    const Mat input = model_input(s, c);
    const std::vector<int> target(s.label.begin(), s.label.end());
    {
      Forward fw(model, nullptr, RunMode::Eval);
      const auto enc = encode(fw, input, false);
      std::vector<int> prefix{c.bos()};
      prefix.insert(prefix.end(), target.begin(), target.end());
      std::vector<int> next = target;
      next.push_back(c.eos());
      nll += lm_loss(fw.graph().value(decode_lm(fw, enc.hidden, prefix)), next).value;
    }
    if (options.transcribe) {
      auto hyp = greedy_transcribe(model, input);
      const auto ref_w = split_words(target, c.graphemes - 1);
      const auto hyp_w = split_words(hyp, c.graphemes - 1);
      errors += levenshtein(std::span<const std::vector<int>>(hyp_w), std::span<const std::vector<int>>(ref_w));
      ref_words += static_cast<long>(ref_w.size());
      r.transcripts.push_back(std::move(hyp));
    }
  }
  r.mean_lm_nll = nll / static_cast<double>(r.num_samples);
  r.perplexity = perplexity(r.mean_lm_nll);
  if (options.transcribe && ref_words > 0) r.wer = static_cast<double>(errors) / static_cast<double>(ref_words);
  return r;
}

// ---------------------------------------------------------------- ablation

std::vector<AblationRow> run_ablation_grid(const TrainConfig& base, const EncoderConfig& model_template,
                                           const World& world, const Dataset& train_set, const Dataset& eval_set,
                                           const EvalOptions& options) {
  require(base.mode == TaskMode::Sentence, ErrorKind::Config, "the ablation grid runs in sentence mode");
  const double alpha_on = base.alpha > 0.0 ? base.alpha : 0.1;
  const double lambda_on = base.lambda > 0.0 ? base.lambda : 1.0;
  std::vector<AblationRow> rows;
  for (bool sync : {false, true}) {
    for (bool ctc : {false, true}) {
      TrainConfig cfg = base;
      cfg.sync_variant = sync ? SyncVariant::Full : SyncVariant::Off;
      cfg.lambda = sync ? lambda_on : 0.0;
      cfg.alpha = ctc ? alpha_on : 0.0;
      const auto res = train(cfg, model_template, world, train_set, &eval_set, nullptr);
      const auto metrics = evaluate(res.model, eval_set, &world, options);
      rows.push_back({sync, ctc, cfg.alpha, cfg.lambda, metrics.wer, metrics.perplexity, res.parameter_hash});
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "sync,ctc,alpha,lambda,wer,perplexity\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << (r.sync ? 1 : 0) << "," << (r.ctc ? 1 : 0) << "," << r.alpha << "," << r.lambda << ",";
    if (std::isfinite(r.wer)) out << r.wer;
    out << "," << r.perplexity << "\n";
  }
  return out.str();
}

}  // namespace syncvsr

#include "syncvsr/cli.hpp"

#include "syncvsr/analysis.hpp"
#include "syncvsr/checkpoint.hpp"
#include "syncvsr/config.hpp"
#include "syncvsr/corpus.hpp"
#include "syncvsr/quantizer.hpp"
#include "syncvsr/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>
#include <optional>
#include <random>
#include <set>

namespace syncvsr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> checkpoints;
  std::string data_dir;
  std::string split = "eval";
  bool quiet = false;
};

class Command {
 public:
  Command(std::string name, const Options& opts, std::ostream& log)
      : name_(std::move(name)), opts_(opts), log_(log), out_(opts.out_dir) {
    if (!opts.config_path.empty()) {
      config_ = load_run_config(opts.config_path);
      input("config", opts.config_path);
    }
    if (opts.seed) config_.override_seed(*opts.seed);
    fs::create_directories(out_);
  }

  const RunConfig& config() const { return config_; }
  const fs::path& out() const { return out_; }

  fs::path data_dir() const {
    if (!opts_.data_dir.empty()) return opts_.data_dir;
    if (!config_.train.data_dir.empty()) return config_.train.data_dir;
    return out_ / "data";
  }

  void input(const std::string& label, const fs::path& path) { inputs_[label] = git_blob_hash(read_file(path)); }

  void dataset_inputs(const fs::path& dir, const std::vector<std::string>& splits) {
    input("data/world.json", dir / "world.json");
    for (const auto& s : splits) {
      input("data/" + s + "/manifest.json", dir / s / "manifest.json");
      input("data/" + s + "/samples.bin", dir / s / "samples.bin");
    }
  }

  void write(const std::string& rel, std::string_view bytes) {
    write_file(out_ / rel, bytes);
    outputs_.insert(rel);
  }
  void output(const std::string& rel) { outputs_.insert(rel); }

  void say(const std::string& line) const {
    if (!opts_.quiet) log_ << line << "\n";
  }

  void finish(json extra = json::object()) {
    json run = {{"command", name_},
                {"config", to_json(config_)},
                {"seeds",
                 {{"world", config_.world_seed}, {"quantizer", config_.quantizer.seed}, {"train", config_.train.seed}}},
                {"seed_override", opts_.seed ? json(*opts_.seed) : json(nullptr)},
                {"inputs", inputs_},
                {"outputs", outputs_},
                {"result", std::move(extra)}};
    if (!opts_.checkpoints.empty()) run["checkpoints"] = opts_.checkpoints;
    if (!opts_.data_dir.empty()) run["data"] = opts_.data_dir;
    if (name_ == "evaluate") run["split"] = opts_.split;
    write_file(out_ / "run.json", run.dump(2) + "\n");
  }

 private:
  std::string name_;
  const Options& opts_;
  std::ostream& log_;
  fs::path out_;
  RunConfig config_;
  std::map<std::string, std::string> inputs_;
  std::set<std::string> outputs_;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

const std::string& single_checkpoint(const Options& opts) {
  if (opts.checkpoints.size() != 1) fail(ErrorKind::Config, "exactly one --checkpoint is required");
  return opts.checkpoints.front();
}

Checkpoint load_matching_checkpoint(const fs::path& path, const World& world) {
  auto ck = load_checkpoint(path);
  require(ck.meta.world_fingerprint == world.fingerprint(), ErrorKind::FingerprintMismatch,
          "checkpoint " + path.string() + " was trained on a different world");
  return ck;
}

void cmd_generate_data(Command& cmd) {
  const auto& c = cmd.config();
  const World world = build_world(c.world, c.world_seed);
  std::optional<Codebook> codebook;
  RenderOptions render;
  if (c.world.token_source == TokenSource::Codebook) {
    require(!c.quantizer.codebook.empty(), ErrorKind::Config, "token_source 'codebook' needs quantizer.codebook");
    cmd.input("codebook", c.quantizer.codebook);
    codebook = load_codebook(c.quantizer.codebook);
    render.codebook = &*codebook;
  }
  const fs::path dir = cmd.data_dir();
  generate_dataset(world, c.dataset, c.world_seed, dir, render);
  for (const char* f : {"world.json", "train/manifest.json", "train/samples.bin", "eval/manifest.json", "eval/samples.bin"}) {
    cmd.output((fs::relative(dir, cmd.out()) / f).generic_string());
  }
  cmd.say("wrote dataset to " + dir.string() + " (world " + world.fingerprint().substr(0, 12) + ")");
  cmd.finish({{"world_fingerprint", world.fingerprint()}});
}

void cmd_fit_tokenizer(Command& cmd) {
  const auto& c = cmd.config();
  const World world = build_world(c.world, c.world_seed);
  std::mt19937_64 rng(mix_seed(c.quantizer.seed, 0x746f6bULL));
  std::uniform_int_distribution<int> pick(0, static_cast<int>(world.lexicon.size()) - 1);
  std::vector<Mat> parts;
  Eigen::Index rows = 0;
  for (int i = 0; i < c.quantizer.utterances; ++i) {
    const auto phonemes = utterance_phonemes(world, {pick(rng)});
    parts.push_back(audio_features(world, phonemes, mix_seed(c.quantizer.seed, static_cast<std::uint64_t>(i))));
    rows += parts.back().rows();
  }
  Mat features(rows, world.config.audio_dim);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    features.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  const Codebook cb = fit_codebook(features, world.config.audio_vocab, c.quantizer.iterations, c.quantizer.seed);
  save_codebook(cb, cmd.out() / "codebook.bin");
  cmd.output("codebook.bin");
  cmd.say("codebook V=" + std::to_string(cb.size()) + " distortion " + fmt(cb.fit_distortion));
  cmd.finish({{"distortion", cb.fit_distortion}, {"iterations", cb.distortion_history.size()}});
}

void cmd_train(Command& cmd) {
  const auto& c = cmd.config();
  const fs::path dir = cmd.data_dir();
  cmd.dataset_inputs(dir, {"train", "eval"});
  const World world = load_world(dir / "world.json");
  const std::string fp = world.fingerprint();
  const Dataset train_set = load_dataset(dir / "train", &fp);
  const Dataset eval_set = load_dataset(dir / "eval", &fp);
  TrainOutputs outputs;
  outputs.checkpoint_dir = c.train.checkpoint_dir.empty() ? cmd.out() : fs::path(c.train.checkpoint_dir);
  outputs.log_path = cmd.out() / "metrics.jsonl";
  const auto result = train(c.train, c.model, world, train_set, &eval_set, &outputs);
  for (const auto& e : result.log) {
    std::string line = "epoch " + std::to_string(e.epoch) + " task " + fmt(e.l_task) + " sync " + fmt(e.l_sync) +
                       " total " + fmt(e.l_total);
    if (e.eval_metric) line += " " + e.eval_metric_name + " " + fmt(*e.eval_metric);
    cmd.say(line);
  }
  cmd.output("metrics.jsonl");
  cmd.output((fs::relative(result.final_checkpoint, cmd.out())).generic_string());
  cmd.finish({{"parameter_hash", result.parameter_hash}, {"eval_split_id", result.meta.eval_split_id}});
}

void cmd_evaluate(Command& cmd, const Options& opts) {
  const auto& c = cmd.config();
  const fs::path dir = cmd.data_dir();
  require(opts.split == "train" || opts.split == "eval", ErrorKind::Config, "--split must be train or eval");
  cmd.dataset_inputs(dir, {opts.split});
  const std::string& ck_path = single_checkpoint(opts);
  cmd.input("checkpoint", ck_path);
  const World world = load_world(dir / "world.json");
  const std::string fp = world.fingerprint();
  const Dataset split = load_dataset(dir / opts.split, &fp);
  const auto ck = load_matching_checkpoint(ck_path, world);
  EvalOptions eo;
  eo.transcribe = c.analysis.transcribe;
  const auto report = evaluate(ck.model, split, &world, eo);
  const json j = to_json(report);
  cmd.write("metrics.json", j.dump(2) + "\n");
  if (report.mode == TaskMode::Word) {
    cmd.say("top1 " + fmt(report.top1) + " homophene top1 " + fmt(report.homophene_top1));
  } else {
    cmd.say("wer " + fmt(report.wer) + " perplexity " + fmt(report.perplexity));
  }
  cmd.finish(j);
}

void cmd_ablation(Command& cmd) {
  const auto& c = cmd.config();
  const fs::path dir = cmd.data_dir();
  cmd.dataset_inputs(dir, {"train", "eval"});
  const World world = load_world(dir / "world.json");
  const std::string fp = world.fingerprint();
  const Dataset train_set = load_dataset(dir / "train", &fp);
  const Dataset eval_set = load_dataset(dir / "eval", &fp);
  EvalOptions eo;
  eo.transcribe = c.analysis.transcribe;
  const auto rows = run_ablation_grid(c.train, c.model, world, train_set, eval_set, eo);
  cmd.write("ablation.csv", ablation_csv(rows));
  json j = json::array();
  for (const auto& r : rows) {
    j.push_back({{"sync", r.sync},
                 {"ctc", r.ctc},
                 {"alpha", r.alpha},
                 {"lambda", r.lambda},
                 {"wer", std::isfinite(r.wer) ? json(r.wer) : json(nullptr)},
                 {"perplexity", r.perplexity},
                 {"parameter_hash", r.parameter_hash}});
    cmd.say(std::string("sync ") + (r.sync ? "on " : "off") + " ctc " + (r.ctc ? "on " : "off") + " wer " + fmt(r.wer) +
            " perplexity " + fmt(r.perplexity));
  }
  cmd.finish(j);
}

void cmd_analyze_homophenes(Command& cmd, const Options& opts) {
  const auto& c = cmd.config();
  require(!opts.checkpoints.empty(), ErrorKind::Config, "analyze-homophenes needs --checkpoint name=path");
  const fs::path dir = cmd.data_dir();
  cmd.dataset_inputs(dir, {"eval"});
  const World world = load_world(dir / "world.json");
  const std::string fp = world.fingerprint();
  const Dataset eval_set = load_dataset(dir / "eval", &fp);
  require(eval_set.manifest.mode == TaskMode::Word, ErrorKind::Config, "homophene analysis needs a word-mode dataset");

  std::vector<std::pair<std::string, fs::path>> named;
  std::set<std::string> seen;
  for (const auto& spec : opts.checkpoints) {
    const auto eq = spec.find('=');
    std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
    fs::path path = eq == std::string::npos ? fs::path(spec) : fs::path(spec.substr(eq + 1));
    require(seen.insert(name).second, ErrorKind::Config, "duplicate method name '" + name + "'");
    named.emplace_back(std::move(name), std::move(path));
  }

  std::vector<MethodPredictions> methods;
  std::vector<int> labels;
  for (const auto& [name, path] : named) {
    cmd.input("checkpoint:" + name, path);
    const auto ck = load_matching_checkpoint(path, world);
    // Each method carries the split it was validated on; disagreement is a split mismatch.
    MethodPredictions m;
    m.name = name;
    m.split_id = ck.meta.eval_split_id;
    const auto report = evaluate(ck.model, eval_set, &world, {});
    m.predictions = report.predictions;
    labels = report.labels;
    methods.push_back(std::move(m));
  }
  const std::string vanilla = seen.count(c.analysis.vanilla) ? c.analysis.vanilla : named.front().first;
  const auto report = homophene_f1_gain(methods, labels, homophene_pairs(world), vanilla);
  require(methods.front().split_id == eval_set.manifest_hash, ErrorKind::SplitMismatch,
          "checkpoints were validated on a different eval split than " + (dir / "eval").string());
  cmd.write("homophenes.csv", homophene_report_csv(report));
  const json j = homophene_report_json(report);
  cmd.write("homophenes.json", j.dump(2) + "\n");
  for (const auto& b : report.buckets) {
    std::string line = "distance " + std::to_string(b.distance) + " pairs " + std::to_string(b.pair_count);
    for (const auto& [m, g] : b.relative_gain_pct) line += " " + m + " " + fmt(g) + "%";
    cmd.say(line);
  }
  cmd.finish(j);
}

void cmd_analyze_attention(Command& cmd, const Options& opts) {
  const auto& c = cmd.config();
  const fs::path dir = cmd.data_dir();
  cmd.dataset_inputs(dir, {"eval"});
  const std::string& ck_path = single_checkpoint(opts);
  cmd.input("checkpoint", ck_path);
  const World world = load_world(dir / "world.json");
  const std::string fp = world.fingerprint();
  const Dataset eval_set = load_dataset(dir / "eval", &fp);
  const auto ck = load_matching_checkpoint(ck_path, world);
  std::size_t n = eval_set.samples.size();
  if (c.analysis.attention_samples > 0) n = std::min(n, static_cast<std::size_t>(c.analysis.attention_samples));
  std::vector<AttentionRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    auto enc = encode(ck.model, model_input(eval_set.samples[i], ck.model.config), true);
    records.push_back(std::move(*enc.attention));
  }
  const auto report = mean_attention_distance(records);
  cmd.write("attention.csv", attention_report_csv(report));
  const json j = attention_report_json(report);
  cmd.write("attention.json", j.dump(2) + "\n");
  cmd.say("mean attention distance " + fmt(report.mean()) + " over " + std::to_string(n) + " samples");
  cmd.finish(j);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic visual speech recognition with audio-token synchronization"};
  app.require_subcommand(1);
  Options opts;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub, bool checkpoint) {
    sub->add_option("--config", opts.config_path, "JSON config (sections world, quantizer, model, train, analysis)")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out_dir, "Output directory")->required();
    sub->add_option("--seed", seed, "Override every seed in the config");
    sub->add_option("--data", opts.data_dir, "Dataset directory (default: train.data_dir or <out>/data)");
    sub->add_flag("--quiet", opts.quiet, "Suppress progress output");
    if (checkpoint) sub->add_option("--checkpoint", opts.checkpoints, "Checkpoint file");
  };
  auto* gen = app.add_subcommand("generate-data", "Build the synthetic world and render train/eval splits");
  auto* fit = app.add_subcommand("fit-tokenizer", "Fit the k-means audio codebook");
  auto* trn = app.add_subcommand("train", "Train a model");
  auto* evl = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  auto* abl = app.add_subcommand("ablation", "Sync x CTC ablation grid (sentence mode)");
  auto* hom = app.add_subcommand("analyze-homophenes", "Homophene F1 gain by grapheme edit distance");
  auto* att = app.add_subcommand("analyze-attention", "Mean attention distance per layer and head");
  for (auto* s : {gen, fit, trn, abl}) common(s, false);
  for (auto* s : {evl, hom, att}) common(s, true);
  evl->add_option("--split", opts.split, "Split to evaluate (train | eval)");
  hom->get_option("--checkpoint")->description("Checkpoint as name=path; repeat once per method");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opts.seed = seed;
  const std::string name = sub->get_name();
  try {
    Command cmd(name, opts, err);
    if (name == "generate-data") cmd_generate_data(cmd);
    else if (name == "fit-tokenizer") cmd_fit_tokenizer(cmd);
    else if (name == "train") cmd_train(cmd);
    else if (name == "evaluate") cmd_evaluate(cmd, opts);
    else if (name == "ablation") cmd_ablation(cmd);
    else if (name == "analyze-homophenes") cmd_analyze_homophenes(cmd, opts);
    else cmd_analyze_attention(cmd, opts);
  } catch (const Error& e) {
    err << name << ": " << e.what() << "\n";
    return e.kind() == ErrorKind::Config ? 1 : 2;
  } catch (const std::exception& e) {
    err << name << ": " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace syncvsr

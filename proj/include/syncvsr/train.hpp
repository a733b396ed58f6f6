#pragma once

// Deterministic training loop, evaluation, and the Sync × CTC ablation grid.

#include "syncvsr/checkpoint.hpp"
#include "syncvsr/corpus.hpp"
#include "syncvsr/losses.hpp"
#include "syncvsr/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace syncvsr {

enum class SyncVariant { Off, Full, Masked };
const char* to_string(SyncVariant v);
SyncVariant parse_sync_variant(const std::string& s);

struct TrainConfig {
  TaskMode mode = TaskMode::Word;
  double alpha = 0.1;
  double lambda = 1.0;
  SyncVariant sync_variant = SyncVariant::Full;
  double mask_ratio = 0.3;
  int epochs = 40;
  int batch_size = 32;
  double peak_lr = 1e-3;
  int warmup_epochs = 3;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  /// Dataset root holding world.json and train/ + eval/ splits. Empty means "<out>/data".
  std::string data_dir;
  /// Where checkpoints and the metrics log go. Empty means "<out>".
  std::string checkpoint_dir;
  int eval_every = 5;

  void validate() const;
  /// λ actually applied: 0 when synchronization is off.
  double effective_lambda() const { return sync_variant == SyncVariant::Off ? 0.0 : lambda; }
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Linear warmup 0 → peak over `warmup_steps`, then linear decay to 0 at `total_steps`.
double lr_schedule(long step, long warmup_steps, long total_steps, double peak);

struct LossSettings {
  TaskMode mode = TaskMode::Word;
  double alpha = 0.1;
  double lambda = 1.0;
  SyncVariant variant = SyncVariant::Full;
  int pad_id = 64;
};

/// Graph handles for every loss term of one sample; invalid Vars were not computed.
struct LossGraph {
  ag::Var word, ctc, lm, task, sync, total;
  LossBundle bundle;
};

/// Builds all losses for one sample. `frame_mask` is required for the masked variant.
LossGraph build_losses(Forward& fw, const Sample& sample, const LossSettings& settings,
                       const std::vector<bool>* frame_mask = nullptr);

/// round(ratio·T) frames (at least 1, at most T) chosen uniformly.
std::vector<bool> draw_frame_mask(int num_frames, double ratio, std::uint64_t seed);

/// Model dimensions follow the world; the remaining fields come from `tmpl`.
EncoderConfig model_config_for(const EncoderConfig& tmpl, const World& world, const TrainConfig& train);

struct EpochLog {
  int epoch = 0;
  double l_task = 0.0;
  double l_sync = 0.0;
  double l_total = 0.0;
  double lr = 0.0;
  std::optional<double> eval_metric;
  std::string eval_metric_name;
};

nlohmann::json to_json(const EpochLog& e);

struct TrainOutputs {
  std::filesystem::path checkpoint_dir;
  std::filesystem::path log_path;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  std::filesystem::path final_checkpoint;
  std::string parameter_hash;
  CheckpointMeta meta;
};

TrainResult train(const TrainConfig& config, const EncoderConfig& model_template, const World& world,
                  const Dataset& train_set, const Dataset* eval_set, const TrainOutputs* outputs = nullptr);

struct EvalOptions {
  bool transcribe = true;
};

struct MetricsReport {
  TaskMode mode = TaskMode::Word;
  std::string split;
  std::string split_id;
  int num_samples = 0;
  double top1 = std::numeric_limits<double>::quiet_NaN();
  double homophene_top1 = std::numeric_limits<double>::quiet_NaN();
  std::map<int, double> per_word_f1;
  std::vector<int> predictions;
  std::vector<int> labels;
  double wer = std::numeric_limits<double>::quiet_NaN();
  double perplexity = std::numeric_limits<double>::quiet_NaN();
  double mean_lm_nll = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<int>> transcripts;
};

nlohmann::json to_json(const MetricsReport& r);

MetricsReport evaluate(const Model& model, const Dataset& split, const World* world, const EvalOptions& options = {});

struct AblationRow {
  bool sync = false;
  bool ctc = false;
  double alpha = 0.0;
  double lambda = 0.0;
  double wer = std::numeric_limits<double>::quiet_NaN();
  double perplexity = std::numeric_limits<double>::quiet_NaN();
  std::string parameter_hash;
};

/// Trains {sync off, on} × {CTC off (α=0), on (α=α₀)} from one seed; rows in that order, CTC varying fastest.
std::vector<AblationRow> run_ablation_grid(const TrainConfig& base, const EncoderConfig& model_template,
                                           const World& world, const Dataset& train_set, const Dataset& eval_set,
                                           const EvalOptions& options = {});

/// Columns: sync,ctc,alpha,lambda,wer,perplexity
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace syncvsr

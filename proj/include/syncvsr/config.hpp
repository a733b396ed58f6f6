#pragma once

// Strict JSON run configuration with sections world, quantizer, model, train, analysis.
// Every key is optional; unknown keys are rejected with their dotted path.

#include "syncvsr/corpus.hpp"
#include "syncvsr/model.hpp"
#include "syncvsr/train.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace syncvsr {

struct QuantizerSettings {
  int iterations = 50;
  std::uint64_t seed = 0;
  /// Utterances whose audio features are pooled for fitting.
  int utterances = 300;
  /// Codebook used by generate-data when world.token_source is "codebook".
  std::string codebook;
};

struct AnalysisSettings {
  /// Method name treated as the baseline by analyze-homophenes.
  std::string vanilla = "vanilla";
  /// Eval samples fed to analyze-attention (0 = all).
  int attention_samples = 100;
  /// Greedy transcription during sentence-mode evaluation.
  bool transcribe = true;
};

struct RunConfig {
  WorldConfig world;
  std::uint64_t world_seed = 0;
  DatasetConfig dataset;
  QuantizerSettings quantizer;
  EncoderConfig model;
  TrainConfig train;
  AnalysisSettings analysis;

  /// --seed: replaces the world, quantizer and training seeds.
  void override_seed(std::uint64_t seed);
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully resolved config; parse_run_config(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& c);

}  // namespace syncvsr

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "langcond/data.h"
#include "langcond/evaluation.h"
#include "langcond/model.h"
#include "langcond/training.h"

namespace langcond {

/// One run: data, architecture, optimisation and decoding. `seed` drives model
/// init, training and decoding; the corpus keeps its own seed so several runs
/// can share data.
struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "runs/run";
  CorpusConfig corpus;
  ModelConfig model;
  TrainConfig training;
  DecodeConfig decode;
  /// Decoding used by the dev hook during training.
  DecodeConfig dev_decode{1, 1.0, 64, 1};

  /// Sets every seeded component from `seed`.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

/// `model.preset` names a conditioning preset; an explicit
/// `model.conditioning` overrides it.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Desk-scale defaults with the named preset.
ExperimentConfig desk_experiment(const std::string& preset_name);

/// Copies vocabulary-dependent fields (size, language count, tag ids) from a corpus.
ModelConfig bind_to_vocabulary(ModelConfig model, const Vocabulary& vocab);

}  // namespace langcond

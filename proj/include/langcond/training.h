#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "json.hpp"
#include "langcond/data.h"
#include "langcond/model.h"

namespace langcond {

struct TokenStats {
  std::size_t tokens = 0;   // non-pad targets
  std::size_t correct = 0;  // argmax hits among them
  double accuracy() const { return tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0; }
};

/// Mean over non-pad positions of -sum_v q(v) log p(v), with q = 1 - s on the
/// target and s / (V - 1) on every other entry. Throws on an all-pad batch.
Tensor label_smoothed_ce(const Tensor& logits, const TokenGrid& targets, double smoothing, int pad_id,
                         TokenStats* stats = nullptr);

struct ScheduleConfig {
  std::size_t warmup_steps = 4000;
  double peak_lr = 5e-4;
  void validate() const;
};

/// peak * min(step / warmup, sqrt(warmup / step)).
double lr_at(std::size_t step, const ScheduleConfig& schedule);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

/// Adam with bias correction over a model's parameters.
class Adam {
 public:
  Adam(NamedTensors& params, AdamConfig config = {});

  /// Returns false (and leaves everything untouched) when any gradient is
  /// non-finite.
  bool step(double lr);
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

  /// Moments as "m.<name>" / "v.<name>" tensors plus a step count.
  NamedTensors export_state() const;
  void import_state(const NamedTensors& state, std::size_t steps);

 private:
  NamedTensors* params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// L2 norm over all parameter gradients; scales them down to max_norm if larger.
double clip_grad_norm(NamedTensors& params, double max_norm);

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t eval_interval = 500;
  std::size_t log_interval = 50;
  std::size_t max_tokens = 1024;
  std::size_t max_len = 100;
  double temperature = 5.0;
  double label_smoothing = 0.1;
  ScheduleConfig schedule{1000, 1e-3};
  AdamConfig adam;
  double clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  /// Stop once an evaluation reaches this score; negative disables.
  double stop_score = -1.0;
  /// Also require metrics["token_acc"] to reach this before stopping; negative disables.
  double stop_token_acc = -1.0;
  /// Every batch uses this LAA matrix instead of a random draw.
  std::optional<std::size_t> frozen_laa_id;
  /// best.ckpt and last.ckpt go here when set.
  std::optional<std::filesystem::path> out_dir;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EvalResult {
  double score = 0.0;  // higher is better
  nlohmann::json metrics = nlohmann::json::object();
};

using EvalHook = std::function<EvalResult(const Model&, std::size_t step)>;

struct EvalRecord {
  std::size_t step = 0;
  double score = 0.0;
};

struct TrainResult {
  std::vector<double> losses;  // one per step
  std::vector<EvalRecord> evals;
  std::size_t best_step = 0;
  double best_score = -1.0;
  Checkpoint best;
  std::size_t skipped_steps = 0;
  std::size_t steps_run = 0;
  double last_token_accuracy = 0.0;
};

/// Runs the optimisation loop. Evaluates every eval_interval steps and at the
/// last step; the checkpoint with the highest score is kept (earliest on ties).
/// `log` receives one JSON object per line. `resume` continues a run saved in
/// last.ckpt bit for bit.
TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& config, const EvalHook& eval,
                  std::ostream* log = nullptr, const Checkpoint* resume = nullptr);

}  // namespace langcond

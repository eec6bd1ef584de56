#include "langcond/training.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace langcond {

using nlohmann::json;

Tensor label_smoothed_ce(const Tensor& logits, const TokenGrid& targets, double smoothing, int pad_id,
                         TokenStats* stats) {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw std::invalid_argument("label_smoothed_ce: smoothing must be in [0, 1)");
  if (logits.rank() != 3 || logits.dim(0) != targets.rows || logits.dim(1) != targets.cols) {
    throw std::invalid_argument("label_smoothed_ce: logits " + shape_str(logits.shape()) + " do not match targets [" +
                                std::to_string(targets.rows) + "," + std::to_string(targets.cols) + "]");
  }
  const std::size_t v = logits.dim(2), rows = targets.rows * targets.cols;
  if (v < 2) throw std::invalid_argument("label_smoothed_ce: need at least two classes");
  const double on = 1.0 - smoothing, off = smoothing / static_cast<double>(v - 1);

  std::size_t count = 0;
  for (int t : targets.ids) count += t != pad_id;
  if (count == 0) throw std::invalid_argument("label_smoothed_ce: batch has no non-pad targets");

  const auto x = logits.data();
  // Softmax probabilities are kept for the backward pass.
  std::vector<double> probs(rows * v, 0.0);
  double total = 0.0;
  TokenStats local;
  for (std::size_t r = 0; r < rows; ++r) {
    const int target = targets.ids[r];
    if (target == pad_id) continue;
    if (target < 0 || static_cast<std::size_t>(target) >= v) throw std::out_of_range("label_smoothed_ce: target id out of range");
    const double* row = x.data() + r * v;
    const std::size_t argmax = static_cast<std::size_t>(std::max_element(row, row + v) - row);
    const double mx = row[argmax];
    double z = 0.0;
    for (std::size_t k = 0; k < v; ++k) z += std::exp(row[k] - mx);
    const double log_z = mx + std::log(z);
    double sum_logp = 0.0;
    for (std::size_t k = 0; k < v; ++k) {
      const double logp = row[k] - log_z;
      sum_logp += logp;
      probs[r * v + k] = std::exp(logp);
    }
    const double target_logp = row[target] - log_z;
    total -= on * target_logp + off * (sum_logp - target_logp);
    ++local.tokens;
    local.correct += argmax == static_cast<std::size_t>(target);
  }
  if (stats) {
    stats->tokens += local.tokens;
    stats->correct += local.correct;
  }
  const double inv = 1.0 / static_cast<double>(count);
  auto ids = targets.ids;
  return make_result({}, {total * inv}, {logits},
                     [logits, probs = std::move(probs), ids = std::move(ids), v, on, off, inv, pad_id](const Node& self) {
                       auto g = grad_sink(logits);
                       const double scale = self.grad[0] * inv;
                       for (std::size_t r = 0; r < ids.size(); ++r) {
                         if (ids[r] == pad_id) continue;
                         for (std::size_t k = 0; k < v; ++k) {
                           const double q = static_cast<int>(k) == ids[r] ? on : off;
                           g[r * v + k] += scale * (probs[r * v + k] - q);
                         }
                       }
                     });
}

void ScheduleConfig::validate() const {
  if (warmup_steps < 1) throw std::invalid_argument("schedule: warmup_steps must be >= 1");
  if (!(peak_lr > 0.0)) throw std::invalid_argument("schedule: peak_lr must be positive");
}

double lr_at(std::size_t step, const ScheduleConfig& s) {
  if (step < 1) throw std::invalid_argument("lr_at: step must be >= 1");
  const double st = static_cast<double>(step), w = static_cast<double>(s.warmup_steps);
  return s.peak_lr * std::min(st / w, std::sqrt(w / st));
}

Adam::Adam(NamedTensors& params, AdamConfig config) : params_(&params), config_(config) {
  for (const auto& [_, t] : params) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

bool Adam::step(double lr) {
  for (const auto& [_, t] : *params_) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_)), c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_->size(); ++p) {
    Tensor& t = (*params_)[p].second;
    auto w = t.mutable_data();
    auto& m = m_[p];
    auto& v = v_[p];
    const bool has = t.has_grad();
    const auto g = has ? t.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
  return true;
}

NamedTensors Adam::export_state() const {
  NamedTensors out;
  for (std::size_t p = 0; p < params_->size(); ++p) {
    const auto& [name, t] = (*params_)[p];
    out.emplace_back("m." + name, Tensor::from(t.shape(), m_[p]));
    out.emplace_back("v." + name, Tensor::from(t.shape(), v_[p]));
  }
  return out;
}

void Adam::import_state(const NamedTensors& state, std::size_t steps) {
  for (std::size_t p = 0; p < params_->size(); ++p) {
    const auto& [name, t] = (*params_)[p];
    for (auto [prefix, target] : {std::pair{"m.", &m_[p]}, std::pair{"v.", &v_[p]}}) {
      const auto key = prefix + name;
      const auto it = std::find_if(state.begin(), state.end(), [&](const auto& e) { return e.first == key; });
      if (it == state.end() || it->second.shape() != t.shape()) {
        throw CheckpointError("optimizer state is missing or misshapen for " + key);
      }
      target->assign(it->second.data().begin(), it->second.data().end());
    }
  }
  t_ = steps;
}

double clip_grad_norm(NamedTensors& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [_, t] : params) {
      if (!t.has_grad()) continue;
      for (auto& g : t.mutable_grad()) g *= f;
    }
  }
  return norm;
}

void TrainConfig::validate() const {
  schedule.validate();
  if (steps == 0) throw std::invalid_argument("train: steps must be positive");
  if (eval_interval == 0) throw std::invalid_argument("train: eval_interval must be positive");
  if (max_tokens == 0) throw std::invalid_argument("train: max_tokens must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw std::invalid_argument("train: label_smoothing must be in [0, 1)");
  if (!(temperature > 0.0)) throw std::invalid_argument("train: temperature must be positive");
  if (clip_norm < 0.0) throw std::invalid_argument("train: clip_norm must be >= 0");
  if (stop_token_acc > 1.0) throw std::invalid_argument("train: stop_token_acc must be <= 1");
}

json to_json(const TrainConfig& c) {
  json j{{"steps", c.steps},
         {"eval_interval", c.eval_interval},
         {"log_interval", c.log_interval},
         {"max_tokens", c.max_tokens},
         {"max_len", c.max_len},
         {"temperature", c.temperature},
         {"label_smoothing", c.label_smoothing},
         {"warmup_steps", c.schedule.warmup_steps},
         {"peak_lr", c.schedule.peak_lr},
         {"adam_beta1", c.adam.beta1},
         {"adam_beta2", c.adam.beta2},
         {"adam_eps", c.adam.eps},
         {"clip_norm", c.clip_norm},
         {"seed", c.seed},
         {"stop_score", c.stop_score},
         {"stop_token_acc", c.stop_token_acc}};
  if (c.frozen_laa_id) j["frozen_laa_id"] = *c.frozen_laa_id;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.log_interval = j.value("log_interval", c.log_interval);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.max_len = j.value("max_len", c.max_len);
  c.temperature = j.value("temperature", c.temperature);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.schedule.warmup_steps = j.value("warmup_steps", c.schedule.warmup_steps);
  c.schedule.peak_lr = j.value("peak_lr", c.schedule.peak_lr);
  c.adam.beta1 = j.value("adam_beta1", c.adam.beta1);
  c.adam.beta2 = j.value("adam_beta2", c.adam.beta2);
  c.adam.eps = j.value("adam_eps", c.adam.eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.stop_score = j.value("stop_score", c.stop_score);
  c.stop_token_acc = j.value("stop_token_acc", c.stop_token_acc);
  if (j.contains("frozen_laa_id")) c.frozen_laa_id = j.at("frozen_laa_id").get<std::size_t>();
  return c;
}

namespace {

// Activation buffers are large and short-lived; keep freed pages in the heap
// instead of faulting them back in every step.
void keep_heap_pages() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

void log_line(std::ostream* log, const json& j) {
  if (log) *log << j.dump() << '\n' << std::flush;
}

}  // namespace

TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& config, const EvalHook& eval, std::ostream* log,
                  const Checkpoint* resume) {
  config.validate();
  keep_heap_pages();
  const auto& mc = model.config();
  if (mc.vocab_size != corpus.vocab.size() || mc.num_languages != corpus.vocab.num_languages()) {
    throw std::invalid_argument("train: model vocabulary/languages do not match the corpus");
  }
  if (config.frozen_laa_id && *config.frozen_laa_id >= mc.num_languages) {
    throw std::invalid_argument("train: frozen_laa_id " + std::to_string(*config.frozen_laa_id) + " out of range");
  }
  BatchStream stream(corpus, config.max_tokens, config.max_len, config.temperature, mc.spec.token_mode, config.seed);
  Rng rng(config.seed ^ 0xD1B54A32D192ED03ULL);
  Adam adam(model.parameters(), config.adam);

  TrainResult result;
  std::size_t start = 0;
  if (resume) {
    restore_parameters(model, *resume);
    adam.import_state(resume->optimizer, resume->meta.at("adam_steps").get<std::size_t>());
    rng.set_state(resume->rng_states.at("train"));
    stream.set_state(resume->rng_states.at("stream"));
    start = resume->step;
    result.best_step = resume->meta.value("best_step", std::size_t{0});
    result.best_score = resume->meta.value("best_score", -1.0);
    result.skipped_steps = resume->meta.value("skipped_steps", std::size_t{0});
    if (config.out_dir && std::filesystem::exists(*config.out_dir / "best.ckpt")) {
      result.best = load_checkpoint(*config.out_dir / "best.ckpt");
    }
  }
  log_line(log, {{"event", "start"},
                 {"step", start},
                 {"parameters", model.count_parameters()},
                 {"dropped_samples", stream.dropped()},
                 {"config", to_json(config)}});

  ForwardOptions opts;
  opts.training = true;
  opts.rng = &rng;
  std::vector<std::size_t> frozen_ids;
  TokenStats window;
  double window_loss = 0.0;
  std::size_t window_steps = 0;

  for (std::size_t step = start + 1; step <= config.steps; ++step) {
    const Batch batch = stream.next();
    if (config.frozen_laa_id) {
      frozen_ids.assign(batch.src.rows, *config.frozen_laa_id);
      opts.laa_ids = &frozen_ids;
    }
    model.zero_grad();
    const Tensor logits = model.forward(batch.src, batch.tgt_in, batch.src_langs, batch.tgt_langs, opts);
    TokenStats stats;
    const Tensor loss = label_smoothed_ce(logits, batch.tgt_out, config.label_smoothing, mc.pad_id, &stats);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      log_line(log, {{"event", "diverged"}, {"step", step}, {"loss", std::to_string(value)}});
      throw std::runtime_error("train: loss became non-finite at step " + std::to_string(step) +
                               "; lower peak_lr or enable clip_norm");
    }
    loss.backward();
    const double grad_norm = config.clip_norm > 0.0 ? clip_grad_norm(model.parameters(), config.clip_norm) : 0.0;
    const double lr = lr_at(step, config.schedule);
    if (!adam.step(lr)) {
      ++result.skipped_steps;
      log_line(log, {{"event", "skipped"}, {"step", step}, {"reason", "non-finite gradient"}});
    }
    result.losses.push_back(value);
    result.steps_run = step;
    window.tokens += stats.tokens;
    window.correct += stats.correct;
    window_loss += value;
    ++window_steps;

    if (config.log_interval && step % config.log_interval == 0) {
      json rec{{"step", step}, {"lr", lr}, {"loss", window_loss / static_cast<double>(window_steps)},
               {"token_acc", window.accuracy()}};
      if (config.clip_norm > 0.0) rec["grad_norm"] = grad_norm;
      log_line(log, rec);
      window = {};
      window_loss = 0.0;
      window_steps = 0;
    }
    result.last_token_accuracy = stats.accuracy();

    const bool last = step == config.steps;
    if (step % config.eval_interval == 0 || last) {
      EvalResult er;
      {
        NoGradGuard guard;
        er = eval(model, step);
      }
      result.evals.push_back({step, er.score});
      const bool improved = er.score > result.best_score;
      if (improved) {
        result.best_score = er.score;
        result.best_step = step;
        result.best = snapshot(model);
        result.best.step = step;
        result.best.meta = {{"score", er.score}};
        if (config.out_dir) save_checkpoint(*config.out_dir / "best.ckpt", result.best);
      }
      json rec{{"event", "eval"}, {"step", step}, {"score", er.score}, {"best", improved}, {"metrics", er.metrics}};
      if (window.tokens > 0) rec["train_token_acc"] = window.accuracy();
      log_line(log, rec);
      window = {};
      window_loss = 0.0;
      window_steps = 0;

      const bool use_score = config.stop_score >= 0.0, use_acc = config.stop_token_acc >= 0.0;
      const bool acc_ok = !use_acc || (er.metrics.contains("token_acc") &&
                                       er.metrics["token_acc"].get<double>() >= config.stop_token_acc);
      const bool stop = (use_score || use_acc) && (!use_score || er.score >= config.stop_score) && acc_ok;
      if (config.out_dir) {
        Checkpoint ck = snapshot(model);
        ck.step = step;
        ck.optimizer = adam.export_state();
        ck.rng_states = {{"train", rng.state()}, {"stream", stream.state()}};
        ck.meta = {{"adam_steps", adam.steps()},
                   {"best_step", result.best_step},
                   {"best_score", result.best_score},
                   {"skipped_steps", result.skipped_steps},
                   {"train_config", to_json(config)}};
        save_checkpoint(*config.out_dir / "last.ckpt", ck);
      }
      if (stop) {
        log_line(log, {{"event", "early_stop"}, {"step", step}, {"score", er.score}});
        break;
      }
    }
  }
  log_line(log, {{"event", "done"},
                 {"steps", result.steps_run},
                 {"best_step", result.best_step},
                 {"best_score", result.best_score},
                 {"skipped_steps", result.skipped_steps}});
  return result;
}

}  // namespace langcond

#include <cmath>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "langcond/training.h"
#include "test_util.h"

using namespace langcond;
using namespace langcond::testing;

namespace {

TokenGrid grid(std::size_t rows, std::size_t cols, std::vector<int> ids) { return {rows, cols, std::move(ids)}; }

Corpus small_corpus(std::vector<Direction> pairs = {}, std::size_t per_pair = 60) {
  CorpusConfig c;
  c.num_languages = 4;
  c.symbols = 10;
  c.pairs = std::move(pairs);
  c.sentences_per_pair = per_pair;
  c.dev_sentences = 5;
  c.test_sentences = 5;
  c.min_len = 2;
  c.max_len = 6;
  c.seed = 7;
  return generate_corpus(c);
}

ModelConfig model_for(const Corpus& corpus, const std::string& preset_name, bool desk = false) {
  ModelConfig m;
  if (!desk) {
    m.layers_enc = 1;
    m.layers_dec = 1;
    m.d_model = 16;
    m.heads = 2;
    m.d_ffn = 32;
  }
  m.vocab_size = corpus.vocab.size();
  m.num_languages = corpus.vocab.num_languages();
  m.tag_ids = corpus.vocab.tag_ids();
  m.spec = preset(preset_name);
  return m;
}

TrainConfig quick_config(std::size_t steps) {
  TrainConfig c;
  c.steps = steps;
  c.eval_interval = 10;
  c.log_interval = 5;
  c.max_tokens = 64;
  c.schedule = {20, 1e-3};
  c.seed = 3;
  return c;
}

EvalResult zero_eval(const Model&, std::size_t) { return {}; }

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("langcond_train_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("smoothing 0 equals plain cross-entropy") {
  Rng rng(1);
  const Tensor logits = random_tensor(rng, {2, 3, 5}, false, 3.0);
  const TokenGrid targets = grid(2, 3, {4, 1, 0, 2, 3, 3});  // one pad
  TokenStats stats;
  const double loss = label_smoothed_ce(logits, targets, 0.0, 0, &stats).item();
  double oracle = 0.0;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < 6; ++r) {
    if (targets.ids[r] == 0) continue;
    const double* row = logits.data().data() + r * 5;
    double z = 0.0;
    for (int k = 0; k < 5; ++k) z += std::exp(row[k]);
    oracle += std::log(z) - row[targets.ids[r]];
    correct += std::max_element(row, row + 5) - row == targets.ids[r];
  }
  oracle /= 5.0;
  CHECK(std::abs(loss - oracle) <= 1e-12);
  CHECK(stats.tokens == 5);
  CHECK(stats.correct == correct);
}

TEST_CASE("smoothed loss matches the target distribution formula") {
  Rng rng(2);
  const double s = 0.2;
  const Tensor logits = random_tensor(rng, {1, 4, 6}, false, 2.0);
  const TokenGrid targets = grid(1, 4, {1, 5, 2, 0});
  const double loss = label_smoothed_ce(logits, targets, s, 0).item();
  double oracle = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    const double* row = logits.data().data() + r * 6;
    double z = 0.0;
    for (int k = 0; k < 6; ++k) z += std::exp(row[k]);
    for (int k = 0; k < 6; ++k) {
      const double q = k == targets.ids[r] ? 1.0 - s : s / 5.0;
      oracle -= q * (row[k] - std::log(z));
    }
  }
  CHECK(std::abs(loss - oracle / 3.0) <= 1e-12);
}

TEST_CASE("uniform logits give log V regardless of smoothing") {
  const Tensor logits = Tensor::zeros({1, 2, 3});
  const TokenGrid targets = grid(1, 2, {1, 2});
  CHECK(std::abs(label_smoothed_ce(logits, targets, 0.1, 0).item() - std::log(3.0)) <= 1e-12);
  CHECK(std::abs(label_smoothed_ce(logits, targets, 0.0, 0).item() - std::log(3.0)) <= 1e-12);
}

TEST_CASE("confident correct prediction drives unsmoothed loss to zero") {
  std::vector<double> v(2 * 4, 0.0);
  v[2] = 60.0;
  v[4 + 3] = 60.0;
  const Tensor logits = Tensor::from({1, 2, 4}, v);
  CHECK(label_smoothed_ce(logits, grid(1, 2, {2, 3}), 0.0, 0).item() < 1e-20);
}

TEST_CASE("label-smoothed loss gradient") {
  Rng rng(4);
  Tensor logits = random_tensor(rng, {2, 3, 4}, true, 2.0);
  const TokenGrid targets = grid(2, 3, {1, 3, 0, 2, 0, 1});
  const auto r = gradcheck({logits}, [&] { return label_smoothed_ce(logits, targets, 0.1, 0); });
  INFO("worst " << r.worst);
  CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("loss input validation") {
  const Tensor logits = Tensor::zeros({1, 2, 3});
  CHECK_THROWS_AS(label_smoothed_ce(logits, grid(1, 2, {0, 0}), 0.1, 0), std::invalid_argument);
  CHECK_THROWS_AS(label_smoothed_ce(logits, grid(1, 2, {1, 2}), 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(label_smoothed_ce(logits, grid(1, 2, {1, 2}), -0.1, 0), std::invalid_argument);
  CHECK_THROWS_AS(label_smoothed_ce(logits, grid(2, 1, {1, 2}), 0.1, 0), std::invalid_argument);
  CHECK_THROWS_AS(label_smoothed_ce(logits, grid(1, 2, {1, 7}), 0.1, 0), std::out_of_range);
}

TEST_CASE("inverse square root schedule") {
  const ScheduleConfig s{4000, 5e-4};
  CHECK(lr_at(4000, s) == 5e-4);
  CHECK(std::abs(lr_at(1000, s) - 1.25e-4) <= 1e-18);
  CHECK(std::abs(lr_at(16000, s) - 2.5e-4) <= 1e-18);
  CHECK(lr_at(1, s) == doctest::Approx(5e-4 / 4000));
  CHECK_THROWS_AS(lr_at(0, s), std::invalid_argument);
  CHECK_THROWS_AS((ScheduleConfig{0, 1e-3}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ScheduleConfig{10, 0.0}.validate()), std::invalid_argument);
}

TEST_CASE("two hand-computed Adam steps on a scalar") {
  NamedTensors params{{"w", Tensor::from({1}, {1.0}, true)}};
  Adam adam(params, {0.9, 0.98, 1e-8});
  Tensor& w = params[0].second;

  w.mutable_grad()[0] = 0.5;
  REQUIRE(adam.step(0.1));
  // m = 0.05, v = 0.005, bias-corrected 0.5 and 0.25.
  const double w1 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
  CHECK(std::abs(w.data()[0] - w1) <= 1e-12);

  w.zero_grad();
  w.mutable_grad()[0] = -0.2;
  REQUIRE(adam.step(0.1));
  // m = 0.045 - 0.02 = 0.025, v = 0.0049 + 0.0008 = 0.0057, corrections 0.19 and 0.0396.
  const double w2 = w1 - 0.1 * (0.025 / 0.19) / (std::sqrt(0.0057 / 0.0396) + 1e-8);
  CHECK(std::abs(w.data()[0] - w2) <= 1e-12);
  CHECK(adam.steps() == 2);

  const auto state = adam.export_state();
  CHECK(std::abs(state[0].second.data()[0] - 0.025) <= 1e-15);
  CHECK(std::abs(state[1].second.data()[0] - 0.0057) <= 1e-15);
}

TEST_CASE("zero gradients leave parameters and decay the moments") {
  NamedTensors params{{"w", Tensor::from({2}, {1.0, -2.0}, true)}};
  Adam adam(params);
  Tensor& w = params[0].second;
  w.mutable_grad()[0] = 0.3;
  w.mutable_grad()[1] = -0.1;
  adam.step(0.01);
  const auto before = adam.export_state();

  // Moments alone still move the weights; check the moment arithmetic, then
  // the pure zero-state case.
  w.zero_grad();
  adam.step(0.01);
  const auto after = adam.export_state();
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(after[0].second.data()[i] == doctest::Approx(0.9 * before[0].second.data()[i]).epsilon(1e-14));
    CHECK(after[1].second.data()[i] == doctest::Approx(0.98 * before[1].second.data()[i]).epsilon(1e-14));
  }

  NamedTensors fresh{{"w", Tensor::from({2}, {1.0, -2.0}, true)}};
  Adam idle(fresh);
  fresh[0].second.mutable_grad();
  idle.step(0.5);
  CHECK(fresh[0].second.data()[0] == 1.0);
  CHECK(fresh[0].second.data()[1] == -2.0);
}

TEST_CASE("lr 0 is a no-op and gradient sign flips the update") {
  NamedTensors a{{"w", Tensor::from({3}, {0.5, 0.5, 0.5}, true)}};
  Adam adam_a(a);
  for (int i = 0; i < 3; ++i) a[0].second.mutable_grad()[i] = 0.1 * (i + 1);
  adam_a.step(0.0);
  for (double v : a[0].second.data()) CHECK(v == 0.5);

  NamedTensors pos{{"w", Tensor::from({3}, {0.5, 0.5, 0.5}, true)}};
  NamedTensors neg{{"w", Tensor::from({3}, {0.5, 0.5, 0.5}, true)}};
  Adam ap(pos), an(neg);
  for (int i = 0; i < 3; ++i) {
    pos[0].second.mutable_grad()[i] = 0.1 * (i + 1) - 0.15;
    neg[0].second.mutable_grad()[i] = -(0.1 * (i + 1) - 0.15);
  }
  ap.step(0.01);
  an.step(0.01);
  for (int i = 0; i < 3; ++i) {
    CHECK((pos[0].second.data()[i] - 0.5) == doctest::Approx(-(neg[0].second.data()[i] - 0.5)).epsilon(1e-15));
  }
}

TEST_CASE("non-finite gradient skips the step") {
  NamedTensors params{{"w", Tensor::from({2}, {1.0, 2.0}, true)}};
  Adam adam(params);
  params[0].second.mutable_grad()[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(adam.step(0.1));
  CHECK(adam.steps() == 0);
  CHECK(params[0].second.data()[0] == 1.0);
  CHECK(params[0].second.data()[1] == 2.0);
  CHECK(adam.export_state()[0].second.data()[0] == 0.0);
}

TEST_CASE("optimizer state round trip") {
  NamedTensors params{{"w", Tensor::from({2}, {1.0, 2.0}, true)}};
  Adam adam(params);
  params[0].second.mutable_grad()[0] = 0.4;
  adam.step(0.1);
  NamedTensors copy{{"w", Tensor::from({2}, {1.0, 2.0}, true)}};
  Adam other(copy);
  other.import_state(adam.export_state(), adam.steps());
  CHECK(other.steps() == 1);
  CHECK(max_abs_diff(other.export_state()[0].second, adam.export_state()[0].second) == 0.0);
  NamedTensors bad{{"w", Tensor::from({3}, {1.0, 2.0, 3.0}, true)}};
  Adam wrong(bad);
  CHECK_THROWS_AS(wrong.import_state(adam.export_state(), 1), CheckpointError);
}

TEST_CASE("gradient clipping") {
  NamedTensors params{{"a", Tensor::from({2}, {0, 0}, true)}, {"b", Tensor::from({1}, {0}, true)}};
  params[0].second.mutable_grad()[0] = 3.0;
  params[0].second.mutable_grad()[1] = 0.0;
  params[1].second.mutable_grad()[0] = 4.0;
  CHECK(clip_grad_norm(params, 10.0) == doctest::Approx(5.0));
  CHECK(params[1].second.grad()[0] == 4.0);
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
  CHECK(params[0].second.grad()[0] == doctest::Approx(0.6));
  CHECK(params[1].second.grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("train config validation and JSON") {
  TrainConfig c = quick_config(7);
  c.frozen_laa_id = 2;
  c.stop_token_acc = 0.9;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.frozen_laa_id == std::optional<std::size_t>{2});
  TrainConfig bad = c;
  bad.steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.label_smoothing = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.temperature = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("same seed reproduces the loss curve bit for bit") {
  const Corpus corpus = small_corpus();
  auto run = [&] {
    Model m(model_for(corpus, "laa_r_dec_self_token_tgt"), 5);
    return train(m, corpus, quick_config(25), zero_eval).losses;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == 25);
  CHECK(a == b);
}

TEST_CASE("resuming from last.ckpt continues the run exactly") {
  const Corpus corpus = small_corpus();
  const auto cfg = model_for(corpus, "lee_4_5");
  Model straight(cfg, 5);
  const auto full = train(straight, corpus, quick_config(40), zero_eval).losses;

  const auto dir = fresh_dir("resume");
  TrainConfig first = quick_config(20);
  first.out_dir = dir;
  Model part(cfg, 5);
  train(part, corpus, first, zero_eval);
  const Checkpoint ck = load_checkpoint(dir / "last.ckpt");
  CHECK(ck.step == 20);

  Model resumed(cfg, 99);  // weights come from the checkpoint
  TrainConfig second = quick_config(40);
  second.out_dir = dir;
  std::ostringstream log;
  const auto rest = train(resumed, corpus, second, zero_eval, &log, &ck);
  REQUIRE(rest.losses.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) CHECK(rest.losses[i] == full[20 + i]);
  for (std::size_t i = 0; i < straight.parameters().size(); ++i) {
    CHECK(max_abs_diff(straight.parameters()[i].second, resumed.parameters()[i].second) == 0.0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("best checkpoint is the argmax of the logged scores") {
  const Corpus corpus = small_corpus();
  Model m(model_for(corpus, "token_tgt"), 5);
  const std::vector<double> scores{0.3, 0.9, 0.5, 0.9, 0.1};
  std::vector<Checkpoint> seen;
  auto hook = [&](const Model& model, std::size_t) {
    seen.push_back(snapshot(model));
    return EvalResult{scores[seen.size() - 1], {}};
  };
  const auto dir = fresh_dir("best");
  TrainConfig c = quick_config(50);
  c.out_dir = dir;
  std::ostringstream log;
  const auto r = train(m, corpus, c, hook, &log);
  REQUIRE(r.evals.size() == scores.size());
  std::size_t arg = 0;
  for (std::size_t i = 1; i < r.evals.size(); ++i) {
    if (r.evals[i].score > r.evals[arg].score) arg = i;
  }
  CHECK(arg == 1);
  CHECK(r.best_step == r.evals[arg].step);
  CHECK(r.best_score == 0.9);
  const Checkpoint on_disk = load_checkpoint(dir / "best.ckpt");
  CHECK(on_disk.step == r.best_step);
  REQUIRE(on_disk.parameters.size() == seen[arg].parameters.size());
  for (std::size_t i = 0; i < on_disk.parameters.size(); ++i) {
    CHECK(max_abs_diff(on_disk.parameters[i].second, seen[arg].parameters[i].second) == 0.0);
  }

  // Every log line is a JSON object; evals are flagged.
  std::istringstream lines(log.str());
  std::string line;
  std::size_t evals = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    REQUIRE(j.is_object());
    evals += j.value("event", "") == "eval";
  }
  CHECK(evals == scores.size());
  std::filesystem::remove_all(dir);
}

TEST_CASE("early stop needs every enabled threshold") {
  const Corpus corpus = small_corpus();
  auto hook = [](const Model&, std::size_t step) {
    return EvalResult{static_cast<double>(step), {{"token_acc", step >= 30 ? 0.99 : 0.5}}};
  };
  TrainConfig c = quick_config(100);
  c.stop_score = 15.0;
  Model a(model_for(corpus, "token_tgt"), 5);
  CHECK(train(a, corpus, c, hook).steps_run == 20);
  c.stop_token_acc = 0.95;
  Model b(model_for(corpus, "token_tgt"), 5);
  CHECK(train(b, corpus, c, hook).steps_run == 30);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const Corpus corpus = small_corpus();
  Model m(model_for(corpus, "token_tgt"), 5);
  for (auto& v : m.parameters()[0].second.mutable_data()) v = std::numeric_limits<double>::quiet_NaN();
  std::ostringstream log;
  CHECK_THROWS_AS(train(m, corpus, quick_config(5), zero_eval, &log), std::runtime_error);
  CHECK(log.str().find("diverged") != std::string::npos);
}

TEST_CASE("training rejects mismatched inputs") {
  const Corpus corpus = small_corpus();
  ModelConfig cfg = model_for(corpus, "laa_r_dec_self_token_tgt");
  Model m(cfg, 5);
  TrainConfig c = quick_config(5);
  c.frozen_laa_id = 4;
  CHECK_THROWS_AS(train(m, corpus, c, zero_eval), std::invalid_argument);
  cfg.vocab_size += 1;
  Model other(cfg, 5);
  CHECK_THROWS_AS(train(other, corpus, quick_config(5), zero_eval), std::invalid_argument);
}

TEST_CASE("frozen LAA^R draw equals LAA on a single-target corpus") {
  const Corpus corpus = small_corpus({{1, 0}, {2, 0}, {3, 0}});
  Model random_laa(model_for(corpus, "laa_r_dec_self_token_tgt"), 11);
  Model plain_laa(model_for(corpus, "laa_dec_self_token_tgt"), 11);
  TrainConfig frozen = quick_config(30);
  frozen.frozen_laa_id = 0;
  const auto a = train(random_laa, corpus, frozen, zero_eval).losses;
  const auto b = train(plain_laa, corpus, quick_config(30), zero_eval).losses;
  CHECK(a == b);
}

TEST_CASE("desk model overfits a single batch") {
  const Corpus corpus = small_corpus();
  ModelConfig cfg = model_for(corpus, "token_tgt", true);
  Model m(cfg, 5);
  std::vector<Example> picked;
  for (const auto& [d, ex] : corpus.train) picked.push_back(ex.front());
  const Batch batch = collate(picked, cfg.spec.token_mode, corpus.vocab);
  Adam adam(m.parameters());
  Rng rng(1);
  ForwardOptions opts;
  opts.training = true;
  opts.rng = &rng;
  double loss = 0.0;
  std::size_t step = 0;
  for (step = 1; step <= 500; ++step) {
    m.zero_grad();
    const Tensor l = label_smoothed_ce(m.forward(batch.src, batch.tgt_in, batch.src_langs, batch.tgt_langs, opts),
                                       batch.tgt_out, 0.0, cfg.pad_id);
    loss = l.item();
    if (loss < 0.01) break;
    l.backward();
    adam.step(lr_at(step, {50, 2e-3}));
  }
  INFO("steps " << step << " loss " << loss);
  CHECK(loss < 0.01);
}

TEST_CASE("loss falls over the first 200 steps for every preset") {
  const Corpus corpus = small_corpus({}, 300);
  for (const auto& name : preset_names()) {
    Model m(model_for(corpus, name, true), 5);
    TrainConfig c = quick_config(200);
    c.eval_interval = 1000;
    c.max_tokens = 128;
    c.schedule = {100, 1e-3};
    const auto losses = train(m, corpus, c, zero_eval).losses;
    // Means over windows of 20 steps; each may exceed the previous by 5% at most.
    std::vector<double> windows;
    for (std::size_t w = 0; w < 10; ++w) {
      double s = 0.0;
      for (std::size_t i = 0; i < 20; ++i) s += losses[w * 20 + i];
      windows.push_back(s / 20.0);
    }
    INFO(name);
    for (std::size_t w = 1; w < windows.size(); ++w) {
      INFO("window " << w << ": " << fmt(windows[w]) << " after " << fmt(windows[w - 1]));
      CHECK(windows[w] <= 1.05 * windows[w - 1]);
    }
    CHECK(windows.back() < windows.front());
  }
}

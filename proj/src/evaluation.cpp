#include "langcond/evaluation.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace langcond {

using nlohmann::json;

void DecodeConfig::validate() const {
  if (beam_size == 0) throw std::invalid_argument("decode: beam_size must be >= 1");
  if (max_len == 0) throw std::invalid_argument("decode: max_len must be >= 1");
  if (!(length_penalty >= 0.0) || !std::isfinite(length_penalty)) {
    throw std::invalid_argument("decode: length_penalty must be finite and >= 0");
  }
}

json to_json(const DecodeConfig& c) {
  return {{"beam_size", c.beam_size}, {"length_penalty", c.length_penalty}, {"max_len", c.max_len}, {"seed", c.seed}};
}

DecodeConfig decode_config_from_json(const json& j) {
  DecodeConfig c;
  c.beam_size = j.value("beam_size", c.beam_size);
  c.length_penalty = j.value("length_penalty", c.length_penalty);
  c.max_len = j.value("max_len", c.max_len);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

namespace {

double normalized(double log_prob, std::size_t len, double alpha) {
  return alpha == 0.0 ? log_prob : log_prob / std::pow(static_cast<double>(len), alpha);
}

// Log-softmax of the last position of each row, pad excluded.
std::vector<std::vector<double>> last_log_probs(const Tensor& logits, int pad_id) {
  const std::size_t b = logits.dim(0), t = logits.dim(1), v = logits.dim(2);
  std::vector<std::vector<double>> out(b, std::vector<double>(v));
  const auto x = logits.data();
  for (std::size_t r = 0; r < b; ++r) {
    const double* row = x.data() + (r * t + t - 1) * v;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < v; ++k) {
      if (static_cast<int>(k) != pad_id) mx = std::max(mx, row[k]);
    }
    double z = 0.0;
    for (std::size_t k = 0; k < v; ++k) {
      if (static_cast<int>(k) != pad_id) z += std::exp(row[k] - mx);
    }
    const double log_z = mx + std::log(z);
    for (std::size_t k = 0; k < v; ++k) {
      out[r][k] = static_cast<int>(k) == pad_id ? -std::numeric_limits<double>::infinity() : row[k] - log_z;
    }
  }
  return out;
}

EncoderState encode_examples(const Model& model, std::span<const Example> examples, const Vocabulary& vocab,
                             Rng& rng) {
  const TokenMode mode = model.config().spec.token_mode;
  std::vector<std::vector<int>> rows;
  std::vector<std::size_t> src_langs, tgt_langs;
  for (const auto& e : examples) {
    rows.push_back(model_source(e, mode, vocab));
    src_langs.push_back(e.src_lang);
    tgt_langs.push_back(e.tgt_lang);
  }
  ForwardOptions opts;
  opts.rng = &rng;
  return model.encode(TokenGrid::from_rows(rows, model.config().pad_id), src_langs, tgt_langs, opts);
}

}  // namespace

DecodeResult beam_search(const NextTokenScorer& scorer, int start, int eos, const DecodeConfig& config) {
  config.validate();
  struct Hyp {
    std::vector<int> tokens;  // start token first
    double log_prob = 0.0;
  };
  struct Candidate {
    double log_prob;
    std::size_t parent;
    int token;
  };
  std::vector<Hyp> alive{{{start}, 0.0}};
  std::vector<DecodeResult> finished;

  for (std::size_t step = 1; step <= config.max_len && !alive.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(alive.size());
    for (const auto& h : alive) prefixes.push_back(h.tokens);
    const auto log_probs = scorer(prefixes);
    if (log_probs.size() != alive.size()) throw std::runtime_error("beam_search: scorer returned wrong row count");

    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      for (std::size_t v = 0; v < log_probs[i].size(); ++v) {
        if (std::isfinite(log_probs[i][v])) {
          cands.push_back({alive[i].log_prob + log_probs[i][v], i, static_cast<int>(v)});
        }
      }
    }
    const std::size_t width = config.beam_size - finished.size();
    const std::size_t keep = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });

    std::vector<Hyp> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      Hyp h{alive[cand.parent].tokens, cand.log_prob};
      if (cand.token == eos || step == config.max_len) {
        DecodeResult r;
        r.tokens.assign(h.tokens.begin() + 1, h.tokens.end());
        if (cand.token != eos) r.tokens.push_back(cand.token);
        r.log_prob = cand.log_prob;
        r.score = normalized(cand.log_prob, step, config.length_penalty);
        r.hit_max_len = cand.token != eos;
        finished.push_back(std::move(r));
      } else {
        h.tokens.push_back(cand.token);
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }
  if (finished.empty()) throw std::runtime_error("beam_search: no hypothesis could be expanded");
  return *std::min_element(finished.begin(), finished.end(), [](const DecodeResult& a, const DecodeResult& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  });
}

DecodeResult beam_search(const Model& model, const Example& example, const Vocabulary& vocab,
                         const DecodeConfig& config) {
  NoGradGuard guard;
  Rng rng(config.seed);
  const EncoderState state = encode_examples(model, std::span(&example, 1), vocab, rng);
  const int pad = model.config().pad_id;
  ForwardOptions opts;
  opts.rng = &rng;
  const NextTokenScorer scorer = [&](const std::vector<std::vector<int>>& prefixes) {
    const std::vector<std::size_t> rows(prefixes.size(), 0);
    const Tensor logits = model.decode(state.select(rows), TokenGrid::from_rows(prefixes, pad), opts);
    return last_log_probs(logits, pad);
  };
  const int start = decoder_start(example.tgt_lang, model.config().spec.token_mode, vocab);
  return beam_search(scorer, start, model.config().eos_id, config);
}

std::vector<DecodeResult> greedy_decode(const Model& model, std::span<const Example> examples,
                                        const Vocabulary& vocab, std::size_t max_len, std::uint64_t seed) {
  if (max_len == 0) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  std::vector<DecodeResult> results(examples.size());
  if (examples.empty()) return results;
  NoGradGuard guard;
  Rng rng(seed);
  const EncoderState full = encode_examples(model, examples, vocab, rng);
  const int pad = model.config().pad_id, eos = model.config().eos_id;
  const TokenMode mode = model.config().spec.token_mode;
  ForwardOptions opts;
  opts.rng = &rng;

  std::vector<std::size_t> active(examples.size());
  std::iota(active.begin(), active.end(), 0);
  std::vector<std::vector<int>> prefixes;
  for (const auto& e : examples) prefixes.push_back({decoder_start(e.tgt_lang, mode, vocab)});
  for (std::size_t step = 1; step <= max_len && !active.empty(); ++step) {
    std::vector<std::vector<int>> rows;
    for (auto i : active) rows.push_back(prefixes[i]);
    const Tensor logits = model.decode(full.select(active), TokenGrid::from_rows(rows, pad), opts);
    const auto lp = last_log_probs(logits, pad);
    std::vector<std::size_t> still;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const std::size_t i = active[j];
      const auto best = std::max_element(lp[j].begin(), lp[j].end());
      const int token = static_cast<int>(best - lp[j].begin());
      results[i].log_prob += *best;
      if (token == eos) {
        results[i].score = results[i].log_prob / static_cast<double>(step);
        continue;
      }
      results[i].tokens.push_back(token);
      prefixes[i].push_back(token);
      if (step == max_len) {
        results[i].hit_max_len = true;
        results[i].score = results[i].log_prob / static_cast<double>(step);
      } else {
        still.push_back(i);
      }
    }
    active = std::move(still);
  }
  return results;
}

std::vector<DecodeResult> translate(const Model& model, std::span<const Example> examples, const Vocabulary& vocab,
                                    const DecodeConfig& config, std::size_t batch) {
  config.validate();
  if (batch == 0) throw std::invalid_argument("translate: batch must be >= 1");
  std::vector<DecodeResult> out;
  out.reserve(examples.size());
  if (config.beam_size == 1) {
    for (std::size_t i = 0; i < examples.size(); i += batch) {
      auto part = greedy_decode(model, examples.subspan(i, std::min(batch, examples.size() - i)), vocab,
                                config.max_len, config.seed);
      for (auto& r : part) {
        r.score = normalized(r.log_prob, r.tokens.size() + (r.hit_max_len ? 0 : 1), config.length_penalty);
        out.push_back(std::move(r));
      }
    }
  } else {
    for (const auto& e : examples) out.push_back(beam_search(model, e, vocab, config));
  }
  return out;
}

double corpus_bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs,
                   std::size_t max_n) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("corpus_bleu: hypothesis/reference count mismatch");
  if (hyps.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  if (max_n == 0) throw std::invalid_argument("corpus_bleu: max_n must be >= 1");
  std::vector<std::size_t> matches(max_n, 0), totals(max_n, 0);
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    hyp_len += h.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      if (h.size() < n) continue;
      std::map<std::vector<int>, std::size_t> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[std::vector<int>(r.begin() + i, r.begin() + i + n)];
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[std::vector<int>(h.begin() + i, h.begin() + i + n)];
      totals[n - 1] += h.size() - n + 1;
      for (const auto& [gram, count] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_sum = 0.0;
  double smooth = 1.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (totals[n] == 0) return 0.0;
    double p;
    if (matches[n] == 0) {
      smooth *= 2.0;
      p = 1.0 / (smooth * static_cast<double>(totals[n]));
    } else {
      p = static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
    }
    log_sum += std::log(p);
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)) : 1.0;
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

double lang_acc(const std::vector<std::vector<int>>& hyps, std::size_t tgt_lang, const Vocabulary& vocab) {
  if (hyps.empty()) throw std::invalid_argument("lang_acc: no hypotheses");
  if (tgt_lang >= vocab.num_languages()) throw std::out_of_range("lang_acc: unknown target language");
  std::size_t on = 0;
  for (const auto& h : hyps) {
    std::size_t content = 0, in_target = 0;
    for (int t : h) {
      const auto lang = vocab.language_of(t);
      if (!lang) continue;
      ++content;
      in_target += *lang == tgt_lang;
    }
    on += content > 0 && 2 * in_target > content;
  }
  return static_cast<double>(on) / static_cast<double>(hyps.size());
}

double win_rate(const std::vector<DirectionReport>& candidate, const std::vector<DirectionReport>& reference) {
  std::map<Direction, double> ref;
  for (const auto& r : reference) ref[{r.src_lang, r.tgt_lang}] = r.bleu;
  if (candidate.empty() || ref.size() != candidate.size() || ref.size() != reference.size()) {
    throw std::invalid_argument("win_rate: direction sets differ");
  }
  std::size_t wins = 0;
  for (const auto& c : candidate) {
    const auto it = ref.find({c.src_lang, c.tgt_lang});
    if (it == ref.end()) throw std::invalid_argument("win_rate: direction sets differ");
    wins += c.bleu > it->second;
  }
  return 100.0 * static_cast<double>(wins) / static_cast<double>(candidate.size());
}

namespace {

enum class Block { en_xx, xx_en, all, zero_shot };

bool in_block(const DirectionReport& d, Block block, std::size_t hub) {
  switch (block) {
    case Block::en_xx: return d.supervised && d.src_lang == hub;
    case Block::xx_en: return d.supervised && d.tgt_lang == hub;
    case Block::all: return d.supervised;
    case Block::zero_shot: return !d.supervised;
  }
  return false;
}

std::vector<DirectionReport> block_of(const std::vector<DirectionReport>& ds, Block block, std::size_t hub) {
  std::vector<DirectionReport> out;
  std::copy_if(ds.begin(), ds.end(), std::back_inserter(out),
               [&](const DirectionReport& d) { return in_block(d, block, hub); });
  return out;
}

BlockSummary summarize_block(const std::vector<DirectionReport>& ds) {
  BlockSummary s;
  s.directions = ds.size();
  if (ds.empty()) return s;
  for (const auto& d : ds) {
    s.bleu += d.bleu;
    s.lang_acc += d.lang_acc;
  }
  s.bleu /= static_cast<double>(ds.size());
  s.lang_acc /= static_cast<double>(ds.size());
  return s;
}

constexpr std::pair<Block, const char*> kBlocks[] = {
    {Block::en_xx, "en_xx"}, {Block::xx_en, "xx_en"}, {Block::all, "all"}, {Block::zero_shot, "zero_shot"}};

std::size_t hub_of(const EvaluationReport& r) {
  // The hub is the language shared by every supervised direction.
  for (const auto& d : r.directions) {
    if (d.supervised) {
      const bool src_hub = std::all_of(r.directions.begin(), r.directions.end(), [&](const DirectionReport& x) {
        return !x.supervised || x.src_lang == d.src_lang || x.tgt_lang == d.src_lang;
      });
      return src_hub ? d.src_lang : d.tgt_lang;
    }
  }
  return 0;
}

}  // namespace

EvaluationReport summarize(std::vector<DirectionReport> directions, std::size_t hub) {
  EvaluationReport r;
  r.directions = std::move(directions);
  r.en_xx = summarize_block(block_of(r.directions, Block::en_xx, hub));
  r.xx_en = summarize_block(block_of(r.directions, Block::xx_en, hub));
  r.all = summarize_block(block_of(r.directions, Block::all, hub));
  r.zero_shot = summarize_block(block_of(r.directions, Block::zero_shot, hub));
  return r;
}

json to_json(const EvaluationReport& report, const EvaluationReport* reference) {
  const std::size_t hub = hub_of(report);
  json blocks = json::object();
  const BlockSummary* sums[] = {&report.en_xx, &report.xx_en, &report.all, &report.zero_shot};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto [block, name] = kBlocks[i];
    json b{{"bleu", sums[i]->bleu}, {"lang_acc", sums[i]->lang_acc}, {"directions", sums[i]->directions}};
    if (reference && sums[i]->directions > 0) {
      b["win_rate"] = win_rate(block_of(report.directions, block, hub), block_of(reference->directions, block, hub));
    }
    blocks[name] = b;
  }
  json dirs = json::array();
  for (const auto& d : report.directions) {
    dirs.push_back({{"direction", d.name},
                    {"src_lang", d.src_lang},
                    {"tgt_lang", d.tgt_lang},
                    {"supervised", d.supervised},
                    {"bleu", d.bleu},
                    {"lang_acc", d.lang_acc},
                    {"n_sentences", d.n_sentences},
                    {"truncated", d.truncated}});
  }
  json j{{"blocks", blocks}, {"directions", dirs}};
  if (reference) j["win_rate_rule"] = "strictly higher BLEU";
  return j;
}

std::string to_csv(const EvaluationReport& report) {
  std::ostringstream out;
  out.precision(10);
  out << "direction,src_lang,tgt_lang,supervised,bleu,lang_acc,n_sentences,truncated\n";
  for (const auto& d : report.directions) {
    out << d.name << ',' << d.src_lang << ',' << d.tgt_lang << ',' << (d.supervised ? 1 : 0) << ',' << d.bleu << ','
        << d.lang_acc << ',' << d.n_sentences << ',' << d.truncated << '\n';
  }
  return out.str();
}

EvaluationReport evaluation_report_from_json(const json& j) {
  std::vector<DirectionReport> dirs;
  for (const auto& d : j.at("directions")) {
    DirectionReport r;
    r.name = d.at("direction").get<std::string>();
    r.src_lang = d.at("src_lang").get<std::size_t>();
    r.tgt_lang = d.at("tgt_lang").get<std::size_t>();
    r.supervised = d.at("supervised").get<bool>();
    r.bleu = d.at("bleu").get<double>();
    r.lang_acc = d.at("lang_acc").get<double>();
    r.n_sentences = d.value("n_sentences", std::size_t{0});
    r.truncated = d.value("truncated", std::size_t{0});
    dirs.push_back(std::move(r));
  }
  EvaluationReport probe;
  probe.directions = dirs;
  return summarize(std::move(dirs), hub_of(probe));
}

EvaluationReport evaluate(const Model& model, const Corpus& corpus,
                          const std::map<Direction, std::vector<Example>>& split, const DecodeConfig& config,
                          std::map<Direction, std::vector<DecodeResult>>* outputs) {
  config.validate();
  std::vector<DirectionReport> reports;
  for (const auto& [dir, examples] : split) {
    if (examples.empty()) continue;
    auto results = translate(model, examples, corpus.vocab, config);
    std::vector<std::vector<int>> hyps, refs;
    DirectionReport r;
    r.src_lang = dir.first;
    r.tgt_lang = dir.second;
    r.name = corpus.direction_name(dir);
    r.supervised = corpus.supervised(dir);
    r.n_sentences = examples.size();
    for (std::size_t i = 0; i < examples.size(); ++i) {
      hyps.push_back(results[i].tokens);
      refs.push_back(examples[i].tgt);
      r.truncated += results[i].hit_max_len;
    }
    r.bleu = corpus_bleu(hyps, refs);
    r.lang_acc = lang_acc(hyps, dir.second, corpus.vocab);
    reports.push_back(std::move(r));
    if (outputs) (*outputs)[dir] = std::move(results);
  }
  return summarize(std::move(reports));
}

TokenStats teacher_forced_accuracy(const Model& model, const std::vector<Example>& examples, const Vocabulary& vocab,
                                   std::size_t max_tokens, std::uint64_t seed) {
  NoGradGuard guard;
  Rng rng(seed);
  ForwardOptions opts;
  opts.rng = &rng;
  TokenStats stats;
  for (const auto& chunk : chunk_examples(examples, max_tokens)) {
    const Batch b = collate(chunk, model.config().spec.token_mode, vocab);
    const Tensor logits = model.forward(b.src, b.tgt_in, b.src_langs, b.tgt_langs, opts);
    label_smoothed_ce(logits, b.tgt_out, 0.0, model.config().pad_id, &stats);
  }
  return stats;
}

EvalHook supervised_dev_hook(const Corpus& corpus, DecodeConfig config) {
  config.validate();
  return [&corpus, config](const Model& model, std::size_t) {
    EvalResult r;
    double total = 0.0;
    std::size_t count = 0;
    TokenStats stats;
    json per_dir = json::object();
    for (const auto& [dir, examples] : corpus.dev) {
      if (!corpus.supervised(dir) || examples.empty()) continue;
      const auto results = translate(model, examples, corpus.vocab, config);
      std::vector<std::vector<int>> hyps, refs;
      for (std::size_t i = 0; i < examples.size(); ++i) {
        hyps.push_back(results[i].tokens);
        refs.push_back(examples[i].tgt);
      }
      const double bleu = corpus_bleu(hyps, refs);
      per_dir[corpus.direction_name(dir)] = bleu;
      total += bleu;
      ++count;
      const auto s = teacher_forced_accuracy(model, examples, corpus.vocab, 1024, config.seed);
      stats.tokens += s.tokens;
      stats.correct += s.correct;
    }
    if (count == 0) throw std::invalid_argument("dev hook: no supervised dev directions");
    r.score = total / static_cast<double>(count);
    r.metrics = {{"bleu", total / static_cast<double>(count)}, {"token_acc", stats.accuracy()}, {"directions", per_dir}};
    return r;
  };
}

}  // namespace langcond

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "langcond/data.h"
#include "langcond/model.h"
#include "langcond/training.h"

namespace langcond {

struct DecodeConfig {
  std::size_t beam_size = 5;
  double length_penalty = 1.0;
  /// Generated tokens, EOS included.
  std::size_t max_len = 64;
  /// Seeds the LAA^R draw at inference.
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const DecodeConfig& config);
DecodeConfig decode_config_from_json(const nlohmann::json& j);

struct DecodeResult {
  std::vector<int> tokens;  // without the start token and EOS
  double log_prob = 0.0;
  double score = 0.0;        // log_prob / len^alpha, len counting EOS
  bool hit_max_len = false;  // stopped without EOS
};

/// Next-token log-probabilities for equal-length prefixes (start token
/// included). Non-finite entries are never expanded.
using NextTokenScorer = std::function<std::vector<std::vector<double>>(const std::vector<std::vector<int>>&)>;

/// Length-normalised beam search with a shrinking beam: each finished
/// hypothesis takes one slot. Candidates are ranked by log-probability, then
/// parent rank, then lower token id; the final pick is the best score, then
/// the lexicographically smaller sequence.
DecodeResult beam_search(const NextTokenScorer& scorer, int start, int eos, const DecodeConfig& config);

/// Beam search through a model; conditioning follows the model's spec.
DecodeResult beam_search(const Model& model, const Example& example, const Vocabulary& vocab,
                         const DecodeConfig& config);

/// Argmax decoding of many sentences at once (pad is never emitted).
std::vector<DecodeResult> greedy_decode(const Model& model, std::span<const Example> examples,
                                        const Vocabulary& vocab, std::size_t max_len, std::uint64_t seed = 1);

/// Greedy batches of up to `batch` sentences for beam 1, beam search otherwise.
std::vector<DecodeResult> translate(const Model& model, std::span<const Example> examples, const Vocabulary& vocab,
                                    const DecodeConfig& config, std::size_t batch = 64);

/// Corpus BLEU (percentage) over token sequences with exponential smoothing
/// of zero-match precisions. Zero if any order has no hypothesis n-grams.
double corpus_bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs,
                   std::size_t max_n = 4);

/// Share of hypotheses with a strict majority of non-special tokens in the
/// target namespace; a hypothesis with none counts as off-target.
double lang_acc(const std::vector<std::vector<int>>& hyps, std::size_t tgt_lang, const Vocabulary& vocab);

struct DirectionReport {
  std::size_t src_lang = 0;
  std::size_t tgt_lang = 0;
  std::string name;
  bool supervised = false;
  double bleu = 0.0;
  double lang_acc = 0.0;
  std::size_t n_sentences = 0;
  std::size_t truncated = 0;  // hypotheses that hit max_len
};

/// Percentage of directions where the candidate's BLEU is strictly higher.
double win_rate(const std::vector<DirectionReport>& candidate, const std::vector<DirectionReport>& reference);

struct BlockSummary {
  double bleu = 0.0;      // plain mean over directions
  double lang_acc = 0.0;  // mean over directions
  std::size_t directions = 0;
};

struct EvaluationReport {
  std::vector<DirectionReport> directions;
  BlockSummary en_xx;      // supervised, from the hub language
  BlockSummary xx_en;      // supervised, into the hub language
  BlockSummary all;        // every supervised direction
  BlockSummary zero_shot;  // unsupervised directions
};

EvaluationReport summarize(std::vector<DirectionReport> directions, std::size_t hub = 0);

/// Reports each block; with a reference, adds win rates per block.
nlohmann::json to_json(const EvaluationReport& report, const EvaluationReport* reference = nullptr);
std::string to_csv(const EvaluationReport& report);
/// Rebuilds a report from its JSON directions; blocks are recomputed.
EvaluationReport evaluation_report_from_json(const nlohmann::json& j);

/// Decodes every direction of a held-out split.
EvaluationReport evaluate(const Model& model, const Corpus& corpus,
                          const std::map<Direction, std::vector<Example>>& split, const DecodeConfig& config,
                          std::map<Direction, std::vector<DecodeResult>>* outputs = nullptr);

/// Teacher-forced argmax accuracy over non-pad target positions.
TokenStats teacher_forced_accuracy(const Model& model, const std::vector<Example>& examples, const Vocabulary& vocab,
                                   std::size_t max_tokens = 1024, std::uint64_t seed = 1);

/// Training hook: score = mean BLEU over supervised dev directions; metrics
/// carry per-direction BLEU and teacher-forced token accuracy.
EvalHook supervised_dev_hook(const Corpus& corpus, DecodeConfig config);

}  // namespace langcond

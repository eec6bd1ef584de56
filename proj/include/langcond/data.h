#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "langcond/conditioning.h"
#include "langcond/model.h"
#include "langcond/tensor.h"

namespace langcond {

enum class WordOrder { identity, reverse, rotate, swap_adjacent };

std::string_view to_string(WordOrder order);
WordOrder word_order_from_string(std::string_view name);

/// A synthetic language: pivot symbols are ciphered, then reordered.
struct SyntheticLanguageSpec {
  std::size_t lang_id = 0;
  std::string name;  // also the token namespace prefix
  std::vector<int> cipher;  // bijection over base symbols
  WordOrder word_order = WordOrder::identity;
  std::size_t rotate_k = 0;

  void validate(std::size_t symbols) const;
  /// Pivot symbols -> this language's symbols.
  std::vector<int> encode(std::span<const int> pivot) const;
  /// Exact inverse of encode.
  std::vector<int> decode(std::span<const int> symbols) const;
};

nlohmann::json to_json(const SyntheticLanguageSpec& spec);
SyntheticLanguageSpec language_from_json(const nlohmann::json& j);

/// Languages named en, de, fr, ... Language 0 uses the identity cipher and
/// word order; the others get random ciphers and cycle through the orders.
std::vector<SyntheticLanguageSpec> make_languages(std::size_t count, std::size_t symbols, std::uint64_t seed);

/// pad, bos, eos, one tag per language, then each language's namespace.
class Vocabulary {
 public:
  static constexpr int kPad = 0, kBos = 1, kEos = 2;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> language_names, std::size_t symbols);

  std::size_t size() const { return 3 + names_.size() * (1 + symbols_); }
  std::size_t num_languages() const { return names_.size(); }
  std::size_t symbols() const { return symbols_; }
  const std::vector<std::string>& language_names() const { return names_; }
  std::size_t language_index(std::string_view name) const;

  int tag(std::size_t lang) const;
  std::vector<int> tag_ids() const;
  int token(std::size_t lang, int symbol) const;
  /// Namespace owner of a token; nullopt for specials and tags.
  std::optional<std::size_t> language_of(int token) const;
  bool is_special(int token) const { return token < 3 + static_cast<int>(names_.size()); }
  int symbol_of(int token) const;

  std::string to_string(int token) const;
  int from_string(std::string_view text) const;
  std::string join(std::span<const int> tokens) const;
  std::vector<int> parse(std::string_view line) const;

 private:
  std::vector<std::string> names_;
  std::size_t symbols_ = 0;
};

/// Token ids of both sides for one pivot (no specials).
std::pair<std::vector<int>, std::vector<int>> generate_pair(const SyntheticLanguageSpec& src,
                                                            const SyntheticLanguageSpec& tgt,
                                                            std::span<const int> pivot, const Vocabulary& vocab);

using Direction = std::pair<std::size_t, std::size_t>;

struct CorpusConfig {
  std::size_t num_languages = 4;
  std::size_t symbols = 40;
  std::vector<Direction> pairs;  // empty: English-centric
  std::size_t sentences_per_pair = 2000;
  std::size_t dev_sentences = 100;
  std::size_t test_sentences = 100;
  std::size_t min_len = 3;
  std::size_t max_len = 12;
  double pivot_overlap = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
  std::vector<Direction> training_pairs() const;
};

nlohmann::json to_json(const CorpusConfig& config);
CorpusConfig corpus_config_from_json(const nlohmann::json& j);

/// {(0, l), (l, 0)} for every other language l.
std::vector<Direction> english_centric_pairs(std::size_t num_languages);

struct Example {
  std::size_t src_lang = 0;
  std::size_t tgt_lang = 0;
  std::vector<int> src;
  std::vector<int> tgt;
};

struct Corpus {
  CorpusConfig config;
  std::vector<SyntheticLanguageSpec> languages;
  Vocabulary vocab;
  std::map<Direction, std::vector<Example>> train;
  /// Multi-way held-out sets over every ordered direction.
  std::map<Direction, std::vector<Example>> dev;
  std::map<Direction, std::vector<Example>> test;

  std::string direction_name(Direction d) const;
  bool supervised(Direction d) const { return train.contains(d); }
};

/// Both directions of a language pair share their pivots. A fraction
/// pivot_overlap of each pair's pivots comes from one pool shared by all
/// pairs; the rest are unique to the pair. Held-out pivots never occur in
/// training.
Corpus generate_corpus(const CorpusConfig& config);

/// train.<src>-<tgt>.txt (and dev., test.) as "src ||| tgt" lines plus manifest.json.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

struct MultiwayStats {
  std::map<std::size_t, std::size_t> histogram;  // translations per pivot -> count of pivots
  double mean = 0.0;
  std::size_t pivots = 0;
};

/// For each distinct English-side sentence in training, the number of distinct
/// other languages it is paired with.
MultiwayStats multiway_count(const Corpus& corpus, std::size_t english = 0);
nlohmann::json to_json(const MultiwayStats& stats);

/// Pair sizes, sampling probabilities at `temperature`, held-out totals and
/// the multi-way histogram with its mean.
nlohmann::json data_report(const Corpus& corpus, double temperature);

/// Temperature sampling over pairs: P(p) proportional to (n_p / sum n)^(1/T).
class Sampler {
 public:
  Sampler() = default;
  Sampler(std::vector<std::size_t> sizes, double temperature);
  const std::vector<double>& probabilities() const { return probs_; }
  std::size_t sample(Rng& rng) const;

 private:
  std::vector<double> probs_;
  std::vector<double> cdf_;
};

struct Batch {
  TokenGrid src;      // source (+ tag for Token_src) + eos
  TokenGrid tgt_in;   // bos or target tag, then target
  TokenGrid tgt_out;  // target + eos
  std::vector<std::size_t> src_langs;
  std::vector<std::size_t> tgt_langs;
  /// rows x longest raw side.
  std::size_t budget_tokens = 0;
};

Batch collate(std::span<const Example> examples, TokenMode mode, const Vocabulary& vocab);
/// Source row as the model sees it.
std::vector<int> model_source(const Example& example, TokenMode mode, const Vocabulary& vocab);
/// First decoder input for a target language.
int decoder_start(std::size_t tgt_lang, TokenMode mode, const Vocabulary& vocab);

inline std::size_t example_length(const Example& e) { return std::max(e.src.size(), e.tgt.size()); }

/// Endless stream of training batches: pick a pair with the sampler, then an
/// example of that pair uniformly, until the next one would overflow
/// max_tokens (rows x longest raw side). Examples with either side longer than
/// max_len are dropped up front.
class BatchStream {
 public:
  BatchStream(const Corpus& corpus, std::size_t max_tokens, std::size_t max_len, double temperature, TokenMode mode,
              std::uint64_t seed);

  Batch next();
  const Sampler& sampler() const { return sampler_; }
  const std::vector<Direction>& directions() const { return directions_; }
  std::size_t dropped() const { return dropped_; }
  /// Rng plus the example held over for the next batch.
  std::string state() const;
  void set_state(const std::string& state);

 private:
  const Vocabulary* vocab_;
  TokenMode mode_;
  std::size_t max_tokens_;
  std::vector<Direction> directions_;
  std::vector<std::vector<const Example*>> pool_;
  Sampler sampler_;
  Rng rng_;
  std::optional<std::pair<std::size_t, std::size_t>> carry_;  // (pair, example)
  std::size_t dropped_ = 0;
};

/// In-order batches for evaluation under the same budget rule.
std::vector<std::vector<Example>> chunk_examples(const std::vector<Example>& examples, std::size_t max_tokens);

}  // namespace langcond

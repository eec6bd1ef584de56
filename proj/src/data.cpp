#include "langcond/data.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "langcond/io.h"

namespace langcond {

using nlohmann::json;

namespace {

constexpr std::array kOrders{WordOrder::identity, WordOrder::reverse, WordOrder::rotate, WordOrder::swap_adjacent};

const std::vector<std::string>& default_names() {
  static const std::vector<std::string> names{"en", "de", "fr", "es", "it", "nl", "pt", "ru",
                                              "ja", "zh", "ko", "ar", "tr", "fi", "hu", "sv"};
  return names;
}

}  // namespace

std::string_view to_string(WordOrder order) {
  switch (order) {
    case WordOrder::identity: return "identity";
    case WordOrder::reverse: return "reverse";
    case WordOrder::rotate: return "rotate";
    case WordOrder::swap_adjacent: return "swap_adjacent";
  }
  return "?";
}

WordOrder word_order_from_string(std::string_view name) {
  for (auto o : kOrders) {
    if (to_string(o) == name) return o;
  }
  throw std::invalid_argument("unknown word order '" + std::string(name) + "'");
}

void SyntheticLanguageSpec::validate(std::size_t symbols) const {
  if (cipher.size() != symbols) throw std::invalid_argument("language " + name + ": cipher must cover every symbol");
  std::vector<bool> seen(symbols, false);
  for (int c : cipher) {
    if (c < 0 || static_cast<std::size_t>(c) >= symbols || seen[c]) {
      throw std::invalid_argument("language " + name + ": cipher is not a bijection");
    }
    seen[c] = true;
  }
  if (name.empty() || name.find_first_of(" _|<>") != std::string::npos) {
    throw std::invalid_argument("language name '" + name + "' must be non-empty without spaces, '_', '|', '<' or '>'");
  }
}

std::vector<int> SyntheticLanguageSpec::encode(std::span<const int> pivot) const {
  std::vector<int> out;
  out.reserve(pivot.size());
  for (int s : pivot) out.push_back(cipher.at(static_cast<std::size_t>(s)));
  switch (word_order) {
    case WordOrder::identity: break;
    case WordOrder::reverse: std::reverse(out.begin(), out.end()); break;
    case WordOrder::rotate:
      if (!out.empty()) std::rotate(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(rotate_k % out.size()), out.end());
      break;
    case WordOrder::swap_adjacent:
      for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
      break;
  }
  return out;
}

std::vector<int> SyntheticLanguageSpec::decode(std::span<const int> symbols) const {
  std::vector<int> out(symbols.begin(), symbols.end());
  switch (word_order) {
    case WordOrder::identity: break;
    case WordOrder::reverse: std::reverse(out.begin(), out.end()); break;
    case WordOrder::rotate:
      if (!out.empty()) {
        const std::size_t k = rotate_k % out.size();
        std::rotate(out.begin(), out.end() - static_cast<std::ptrdiff_t>(k), out.end());
      }
      break;
    case WordOrder::swap_adjacent:
      for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
      break;
  }
  std::vector<int> inverse(cipher.size());
  for (std::size_t s = 0; s < cipher.size(); ++s) inverse[static_cast<std::size_t>(cipher[s])] = static_cast<int>(s);
  for (auto& s : out) s = inverse.at(static_cast<std::size_t>(s));
  return out;
}

json to_json(const SyntheticLanguageSpec& s) {
  return json{{"lang_id", s.lang_id}, {"name", s.name},         {"cipher", s.cipher},
              {"word_order", to_string(s.word_order)}, {"rotate_k", s.rotate_k}};
}

SyntheticLanguageSpec language_from_json(const json& j) {
  SyntheticLanguageSpec s;
  s.lang_id = j.at("lang_id").get<std::size_t>();
  s.name = j.at("name").get<std::string>();
  s.cipher = j.at("cipher").get<std::vector<int>>();
  s.word_order = word_order_from_string(j.at("word_order").get<std::string>());
  s.rotate_k = j.value("rotate_k", std::size_t{0});
  return s;
}

std::vector<SyntheticLanguageSpec> make_languages(std::size_t count, std::size_t symbols, std::uint64_t seed) {
  if (count > default_names().size()) {
    throw std::invalid_argument("at most " + std::to_string(default_names().size()) + " synthetic languages");
  }
  Rng rng(seed);
  std::vector<SyntheticLanguageSpec> out;
  for (std::size_t l = 0; l < count; ++l) {
    SyntheticLanguageSpec s;
    s.lang_id = l;
    s.name = default_names()[l];
    s.cipher.resize(symbols);
    std::iota(s.cipher.begin(), s.cipher.end(), 0);
    if (l > 0) {
      for (std::size_t i = symbols; i > 1; --i) std::swap(s.cipher[i - 1], s.cipher[rng.below(i)]);
      s.word_order = kOrders[1 + (l - 1) % 3];
      if (s.word_order == WordOrder::rotate) s.rotate_k = 1 + (l - 1) / 3 % 3;
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> language_names, std::size_t symbols)
    : names_(std::move(language_names)), symbols_(symbols) {
  std::set<std::string> unique(names_.begin(), names_.end());
  if (unique.size() != names_.size()) throw std::invalid_argument("vocabulary: duplicate language names");
}

std::size_t Vocabulary::language_index(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::invalid_argument("unknown language '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

int Vocabulary::tag(std::size_t lang) const {
  if (lang >= names_.size()) throw std::out_of_range("vocabulary: language " + std::to_string(lang) + " out of range");
  return 3 + static_cast<int>(lang);
}

std::vector<int> Vocabulary::tag_ids() const {
  std::vector<int> out;
  for (std::size_t l = 0; l < names_.size(); ++l) out.push_back(tag(l));
  return out;
}

int Vocabulary::token(std::size_t lang, int symbol) const {
  if (lang >= names_.size() || symbol < 0 || static_cast<std::size_t>(symbol) >= symbols_) {
    throw std::out_of_range("vocabulary: no token for language " + std::to_string(lang) + " symbol " +
                            std::to_string(symbol));
  }
  return static_cast<int>(3 + names_.size() + lang * symbols_) + symbol;
}

std::optional<std::size_t> Vocabulary::language_of(int token) const {
  const int first = 3 + static_cast<int>(names_.size());
  if (token < first || static_cast<std::size_t>(token) >= size()) return std::nullopt;
  return static_cast<std::size_t>(token - first) / symbols_;
}

int Vocabulary::symbol_of(int token) const {
  const auto lang = language_of(token);
  if (!lang) throw std::invalid_argument("vocabulary: token " + std::to_string(token) + " is not a word");
  return static_cast<int>(static_cast<std::size_t>(token - 3 - static_cast<int>(names_.size())) % symbols_);
}

std::string Vocabulary::to_string(int token) const {
  switch (token) {
    case kPad: return "<pad>";
    case kBos: return "<s>";
    case kEos: return "</s>";
    default: break;
  }
  if (token > kEos && token < 3 + static_cast<int>(names_.size())) return "<2" + names_[token - 3] + ">";
  const auto lang = language_of(token);
  if (!lang) throw std::out_of_range("vocabulary: token id " + std::to_string(token) + " out of range");
  return names_[*lang] + "_" + std::to_string(symbol_of(token));
}

int Vocabulary::from_string(std::string_view text) const {
  if (text == "<pad>") return kPad;
  if (text == "<s>") return kBos;
  if (text == "</s>") return kEos;
  if (text.size() > 3 && text.starts_with("<2") && text.ends_with(">")) {
    return tag(language_index(text.substr(2, text.size() - 3)));
  }
  const auto us = text.rfind('_');
  if (us == std::string_view::npos) throw std::invalid_argument("unknown token '" + std::string(text) + "'");
  const auto lang = language_index(text.substr(0, us));
  int symbol = -1;
  try {
    std::size_t used = 0;
    symbol = std::stoi(std::string(text.substr(us + 1)), &used);
    if (used != text.size() - us - 1) symbol = -1;
  } catch (const std::exception&) {
    symbol = -1;
  }
  if (symbol < 0 || static_cast<std::size_t>(symbol) >= symbols_) {
    throw std::invalid_argument("unknown token '" + std::string(text) + "'");
  }
  return token(lang, symbol);
}

std::string Vocabulary::join(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) {
    if (!out.empty()) out += ' ';
    out += to_string(t);
  }
  return out;
}

std::vector<int> Vocabulary::parse(std::string_view line) const {
  std::vector<int> out;
  for (const auto& tok : split_ws(line)) out.push_back(from_string(tok));
  return out;
}

std::pair<std::vector<int>, std::vector<int>> generate_pair(const SyntheticLanguageSpec& src,
                                                            const SyntheticLanguageSpec& tgt,
                                                            std::span<const int> pivot, const Vocabulary& vocab) {
  auto tokens = [&](const SyntheticLanguageSpec& s) {
    std::vector<int> out;
    for (int sym : s.encode(pivot)) out.push_back(vocab.token(s.lang_id, sym));
    return out;
  };
  return {tokens(src), tokens(tgt)};
}

// ---------------------------------------------------------------------------
// Corpus

std::vector<Direction> english_centric_pairs(std::size_t num_languages) {
  std::vector<Direction> out;
  for (std::size_t l = 1; l < num_languages; ++l) {
    out.emplace_back(0, l);
    out.emplace_back(l, 0);
  }
  return out;
}

void CorpusConfig::validate() const {
  if (num_languages < 2) throw std::invalid_argument("corpus: need at least two languages");
  if (symbols < 2) throw std::invalid_argument("corpus: need at least two base symbols");
  if (min_len == 0 || min_len > max_len) throw std::invalid_argument("corpus: need 1 <= min_len <= max_len");
  if (!(pivot_overlap >= 0.0 && pivot_overlap <= 1.0)) throw std::invalid_argument("corpus: pivot_overlap must be in [0, 1]");
  for (auto [s, t] : pairs) {
    if (s >= num_languages || t >= num_languages || s == t) {
      throw std::invalid_argument("corpus: pair (" + std::to_string(s) + ", " + std::to_string(t) + ") is invalid");
    }
  }
}

std::vector<Direction> CorpusConfig::training_pairs() const {
  return pairs.empty() ? english_centric_pairs(num_languages) : pairs;
}

json to_json(const CorpusConfig& c) {
  json pairs = json::array();
  for (auto [s, t] : c.pairs) pairs.push_back({s, t});
  return json{{"num_languages", c.num_languages},
              {"symbols", c.symbols},
              {"pairs", pairs},
              {"sentences_per_pair", c.sentences_per_pair},
              {"dev_sentences", c.dev_sentences},
              {"test_sentences", c.test_sentences},
              {"min_len", c.min_len},
              {"max_len", c.max_len},
              {"pivot_overlap", c.pivot_overlap},
              {"seed", c.seed}};
}

CorpusConfig corpus_config_from_json(const json& j) {
  CorpusConfig c;
  c.num_languages = j.value("num_languages", c.num_languages);
  c.symbols = j.value("symbols", c.symbols);
  for (const auto& p : j.value("pairs", json::array())) c.pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
  c.sentences_per_pair = j.value("sentences_per_pair", c.sentences_per_pair);
  c.dev_sentences = j.value("dev_sentences", c.dev_sentences);
  c.test_sentences = j.value("test_sentences", c.test_sentences);
  c.min_len = j.value("min_len", c.min_len);
  c.max_len = j.value("max_len", c.max_len);
  c.pivot_overlap = j.value("pivot_overlap", c.pivot_overlap);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::string Corpus::direction_name(Direction d) const {
  return vocab.language_names().at(d.first) + "-" + vocab.language_names().at(d.second);
}

namespace {

class PivotSource {
 public:
  PivotSource(const CorpusConfig& c, Rng& rng) : c_(c), rng_(rng) {}

  std::vector<int> fresh() {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const std::size_t len = c_.min_len + rng_.below(c_.max_len - c_.min_len + 1);
      std::vector<int> p(len);
      for (auto& s : p) s = static_cast<int>(rng_.below(c_.symbols));
      if (used_.insert(p).second) return p;
    }
    throw std::runtime_error("corpus: could not draw enough distinct pivot sentences; raise symbols or lengths");
  }

  std::vector<std::vector<int>> fresh(std::size_t n) {
    std::vector<std::vector<int>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(fresh());
    return out;
  }

 private:
  const CorpusConfig& c_;
  Rng& rng_;
  std::set<std::vector<int>> used_;
};

}  // namespace

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  corpus.languages = make_languages(config.num_languages, config.symbols, config.seed);
  std::vector<std::string> names;
  for (const auto& l : corpus.languages) names.push_back(l.name);
  corpus.vocab = Vocabulary(names, config.symbols);

  Rng rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  PivotSource source(config, rng);
  const auto dev = source.fresh(config.dev_sentences);
  const auto test = source.fresh(config.test_sentences);
  const std::size_t shared_n =
      static_cast<std::size_t>(std::llround(config.pivot_overlap * static_cast<double>(config.sentences_per_pair)));
  const auto shared = source.fresh(shared_n);

  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::vector<int>>> pair_pivots;
  for (auto [s, t] : config.training_pairs()) {
    const auto key = std::minmax(s, t);
    if (pair_pivots.contains(key)) continue;
    auto pivots = shared;
    auto own = source.fresh(config.sentences_per_pair - shared_n);
    pivots.insert(pivots.end(), own.begin(), own.end());
    pair_pivots[key] = std::move(pivots);
  }

  auto make = [&](Direction d, const std::vector<std::vector<int>>& pivots) {
    std::vector<Example> out;
    out.reserve(pivots.size());
    for (const auto& p : pivots) {
      auto [src, tgt] = generate_pair(corpus.languages[d.first], corpus.languages[d.second], p, corpus.vocab);
      out.push_back({d.first, d.second, std::move(src), std::move(tgt)});
    }
    return out;
  };
  for (auto d : config.training_pairs()) corpus.train[d] = make(d, pair_pivots.at(std::minmax(d.first, d.second)));
  for (std::size_t s = 0; s < config.num_languages; ++s) {
    for (std::size_t t = 0; t < config.num_languages; ++t) {
      if (s == t) continue;
      corpus.dev[{s, t}] = make({s, t}, dev);
      corpus.test[{s, t}] = make({s, t}, test);
    }
  }
  return corpus;
}

namespace {

void write_split(const Corpus& corpus, const std::map<Direction, std::vector<Example>>& split, const std::string& prefix,
                 const std::filesystem::path& dir, json& files) {
  for (const auto& [d, examples] : split) {
    std::string text;
    for (const auto& e : examples) text += corpus.vocab.join(e.src) + " ||| " + corpus.vocab.join(e.tgt) + "\n";
    const auto name = prefix + "." + corpus.direction_name(d) + ".txt";
    atomic_write(dir / name, text);
    files[prefix].push_back({{"src", d.first}, {"tgt", d.second}, {"file", name}});
  }
}

std::vector<Example> read_split_file(const Corpus& corpus, Direction d, const std::filesystem::path& path) {
  std::vector<Example> out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    const auto bar = line.find("|||");
    if (bar == std::string::npos) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": expected 'src ||| tgt'");
    }
    Example e{d.first, d.second, corpus.vocab.parse(line.substr(0, bar)), corpus.vocab.parse(line.substr(bar + 3))};
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json files = {{"train", json::array()}, {"dev", json::array()}, {"test", json::array()}};
  write_split(corpus, corpus.train, "train", dir, files);
  write_split(corpus, corpus.dev, "dev", dir, files);
  write_split(corpus, corpus.test, "test", dir, files);
  json langs = json::array();
  for (const auto& l : corpus.languages) langs.push_back(to_json(l));
  const json manifest{{"format", "langcond-corpus"},
                      {"config", to_json(corpus.config)},
                      {"languages", langs},
                      {"vocab_size", corpus.vocab.size()},
                      {"files", files}};
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const json manifest = json::parse(read_file(dir / "manifest.json"));
  Corpus corpus;
  corpus.config = corpus_config_from_json(manifest.at("config"));
  std::vector<std::string> names;
  for (const auto& l : manifest.at("languages")) {
    corpus.languages.push_back(language_from_json(l));
    corpus.languages.back().validate(corpus.config.symbols);
    names.push_back(corpus.languages.back().name);
  }
  corpus.vocab = Vocabulary(names, corpus.config.symbols);
  const auto& files = manifest.at("files");
  auto load = [&](const char* split, std::map<Direction, std::vector<Example>>& target) {
    for (const auto& f : files.at(split)) {
      const Direction d{f.at("src").get<std::size_t>(), f.at("tgt").get<std::size_t>()};
      target[d] = read_split_file(corpus, d, dir / f.at("file").get<std::string>());
    }
  };
  load("train", corpus.train);
  load("dev", corpus.dev);
  load("test", corpus.test);
  return corpus;
}

MultiwayStats multiway_count(const Corpus& corpus, std::size_t english) {
  std::map<std::vector<int>, std::set<std::size_t>> partners;
  for (const auto& [d, examples] : corpus.train) {
    if (d.first != english && d.second != english) continue;
    for (const auto& e : examples) {
      if (d.first == english) {
        partners[e.src].insert(d.second);
      } else {
        partners[e.tgt].insert(d.first);
      }
    }
  }
  MultiwayStats stats;
  std::size_t total = 0;
  for (const auto& [_, langs] : partners) {
    ++stats.histogram[langs.size()];
    total += langs.size();
  }
  stats.pivots = partners.size();
  stats.mean = partners.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(partners.size());
  return stats;
}

json to_json(const MultiwayStats& s) {
  json hist = json::object();
  for (auto [k, v] : s.histogram) hist[std::to_string(k)] = v;
  return json{{"histogram", hist}, {"mean", s.mean}, {"pivots", s.pivots}};
}

// ---------------------------------------------------------------------------
// Sampling and batching

Sampler::Sampler(std::vector<std::size_t> sizes, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sampler: temperature must be positive");
  if (sizes.empty()) throw std::invalid_argument("sampler: no pairs");
  const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
  if (total <= 0.0) throw std::invalid_argument("sampler: all pairs are empty");
  double z = 0.0;
  for (auto n : sizes) {
    probs_.push_back(n == 0 ? 0.0 : std::pow(static_cast<double>(n) / total, 1.0 / temperature));
    z += probs_.back();
  }
  double acc = 0.0;
  for (auto& p : probs_) {
    p /= z;
    acc += p;
    cdf_.push_back(acc);
  }
}

std::size_t Sampler::sample(Rng& rng) const {
  const double u = rng.uniform() * cdf_.back();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  std::size_t i = std::min(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  while (probs_[i] == 0.0) --i;  // only reachable through rounding at the top end
  return i;
}

int decoder_start(std::size_t tgt_lang, TokenMode mode, const Vocabulary& vocab) {
  return mode == TokenMode::tgt ? vocab.tag(tgt_lang) : Vocabulary::kBos;
}

std::vector<int> model_source(const Example& e, TokenMode mode, const Vocabulary& vocab) {
  std::vector<int> src = mode == TokenMode::src ? prepend_token(e.src, e.tgt_lang, vocab.tag_ids()) : e.src;
  src.push_back(Vocabulary::kEos);
  return src;
}

Batch collate(std::span<const Example> examples, TokenMode mode, const Vocabulary& vocab) {
  if (examples.empty()) throw std::invalid_argument("collate: empty batch");
  std::vector<std::vector<int>> src, tgt_in, tgt_out;
  Batch b;
  std::size_t longest = 0;
  for (const auto& e : examples) {
    src.push_back(model_source(e, mode, vocab));
    std::vector<int> in{decoder_start(e.tgt_lang, mode, vocab)};
    in.insert(in.end(), e.tgt.begin(), e.tgt.end());
    std::vector<int> out(e.tgt.begin(), e.tgt.end());
    out.push_back(Vocabulary::kEos);
    tgt_in.push_back(std::move(in));
    tgt_out.push_back(std::move(out));
    b.src_langs.push_back(e.src_lang);
    b.tgt_langs.push_back(e.tgt_lang);
    longest = std::max(longest, example_length(e));
  }
  b.src = TokenGrid::from_rows(src, Vocabulary::kPad);
  b.tgt_in = TokenGrid::from_rows(tgt_in, Vocabulary::kPad);
  b.tgt_out = TokenGrid::from_rows(tgt_out, Vocabulary::kPad);
  b.budget_tokens = examples.size() * longest;
  return b;
}

BatchStream::BatchStream(const Corpus& corpus, std::size_t max_tokens, std::size_t max_len, double temperature,
                         TokenMode mode, std::uint64_t seed)
    : vocab_(&corpus.vocab), mode_(mode), max_tokens_(max_tokens), rng_(seed) {
  std::vector<std::size_t> sizes;
  for (const auto& [d, examples] : corpus.train) {
    std::vector<const Example*> kept;
    for (const auto& e : examples) {
      if (e.src.size() > max_len || e.tgt.size() > max_len) {
        ++dropped_;
        continue;
      }
      if (example_length(e) > max_tokens) {
        throw std::invalid_argument("batching: a " + std::to_string(example_length(e)) +
                                    "-token sample exceeds max_tokens=" + std::to_string(max_tokens));
      }
      kept.push_back(&e);
    }
    if (kept.empty()) continue;
    directions_.push_back(d);
    sizes.push_back(kept.size());
    pool_.push_back(std::move(kept));
  }
  if (pool_.empty()) throw std::invalid_argument("batching: no training examples left after the length filter");
  sampler_ = Sampler(sizes, temperature);
}

Batch BatchStream::next() {
  std::vector<Example> picked;
  std::size_t longest = 0;
  while (true) {
    std::pair<std::size_t, std::size_t> ref;
    if (carry_) {
      ref = *carry_;
      carry_.reset();
    } else {
      const std::size_t p = sampler_.sample(rng_);
      ref = {p, rng_.below(pool_[p].size())};
    }
    const Example& e = *pool_[ref.first][ref.second];
    const std::size_t len = std::max(longest, example_length(e));
    if (!picked.empty() && (picked.size() + 1) * len > max_tokens_) {
      carry_ = ref;
      break;
    }
    picked.push_back(e);
    longest = len;
  }
  return collate(picked, mode_, *vocab_);
}

std::string BatchStream::state() const {
  json j{{"rng", rng_.state()}};
  if (carry_) j["carry"] = {carry_->first, carry_->second};
  return j.dump();
}

void BatchStream::set_state(const std::string& state) {
  const json j = json::parse(state);
  rng_.set_state(j.at("rng").get<std::string>());
  carry_.reset();
  if (j.contains("carry")) carry_ = std::make_pair(j["carry"][0].get<std::size_t>(), j["carry"][1].get<std::size_t>());
}

std::vector<std::vector<Example>> chunk_examples(const std::vector<Example>& examples, std::size_t max_tokens) {
  std::vector<std::vector<Example>> out;
  std::vector<Example> cur;
  std::size_t longest = 0;
  for (const auto& e : examples) {
    const std::size_t len = std::max(longest, example_length(e));
    if (!cur.empty() && (cur.size() + 1) * len > max_tokens) {
      out.push_back(std::move(cur));
      cur.clear();
      longest = 0;
    }
    cur.push_back(e);
    longest = std::max(longest, example_length(e));
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

json data_report(const Corpus& corpus, double temperature) {
  json sizes = json::object();
  std::vector<std::size_t> counts;
  for (const auto& [d, ex] : corpus.train) {
    sizes[corpus.direction_name(d)] = ex.size();
    counts.push_back(ex.size());
  }
  const Sampler sampler(counts, temperature);
  json probs = json::object();
  std::size_t i = 0;
  for (const auto& [d, _] : corpus.train) probs[corpus.direction_name(d)] = sampler.probabilities()[i++];
  auto split_size = [](const auto& split) {
    std::size_t n = 0;
    for (const auto& [_, ex] : split) n += ex.size();
    return n;
  };
  return {{"multiway", to_json(multiway_count(corpus))},
          {"train_pairs", sizes},
          {"sampling_temperature", temperature},
          {"sampling_probabilities", probs},
          {"dev_sentences_total", split_size(corpus.dev)},
          {"test_sentences_total", split_size(corpus.test)}};
}

}  // namespace langcond

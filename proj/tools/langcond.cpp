#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <streambuf>

#include "CLI11.hpp"
#include "json.hpp"
#include "langcond/bench.h"
#include "langcond/data.h"
#include "langcond/evaluation.h"
#include "langcond/experiment.h"
#include "langcond/io.h"
#include "langcond/model.h"
#include "langcond/training.h"
#include "langcond/typology.h"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace langcond;

namespace {

constexpr int kOk = 0, kValidation = 1, kRuntime = 2;

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return !EOF;
    const int r1 = a_->sputc(static_cast<char>(c));
    const int r2 = b_ ? b_->sputc(static_cast<char>(c)) : c;
    return r1 == EOF || r2 == EOF ? EOF : c;
  }
  int sync() override { return a_->pubsync() | (b_ ? b_->pubsync() : 0); }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

Corpus load_corpus_dir(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw ValidationError(dir.string() + ": no manifest.json (run gen-data first)");
  return load_corpus(dir);
}

Model load_model(const fs::path& checkpoint, const Vocabulary& vocab) {
  Model model = model_from_checkpoint(load_checkpoint(checkpoint));
  const auto& c = model.config();
  if (c.vocab_size != vocab.size() || c.num_languages != vocab.num_languages()) {
    throw ValidationError(checkpoint.string() + ": model vocabulary (" + std::to_string(c.vocab_size) + " ids, " +
                          std::to_string(c.num_languages) + " languages) does not match the corpus");
  }
  return model;
}

std::size_t language_or_throw(const Vocabulary& vocab, const std::string& name, const char* what) {
  try {
    return vocab.language_index(name);
  } catch (const std::exception&) {
    std::string known;
    for (const auto& n : vocab.language_names()) known += (known.empty() ? "" : ", ") + n;
    throw ValidationError(std::string("unknown ") + what + " '" + name + "' (known: " + known + ")");
  }
}

std::vector<int> parse_source_line(const std::string& line, std::size_t src, const Vocabulary& vocab, std::size_t line_no) {
  std::vector<int> out;
  for (const auto& tok : split_ws(line)) {
    int symbol = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), symbol);
    int id = 0;
    try {
      id = ec == std::errc() && ptr == tok.data() + tok.size() ? vocab.token(src, symbol) : vocab.from_string(tok);
    } catch (const std::exception& e) {
      throw ValidationError("input line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto owner = vocab.language_of(id);
    if (!owner || *owner != src) {
      throw ValidationError("input line " + std::to_string(line_no) + ": token '" + tok + "' is not a " +
                            vocab.language_names()[src] + " token");
    }
    out.push_back(id);
  }
  return out;
}

DecodeConfig decode_flags(std::size_t beam, double alpha, std::size_t max_len, std::uint64_t seed) {
  DecodeConfig c{beam, alpha, max_len, seed};
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  return c;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::istringstream in(text);
  std::string f;
  while (std::getline(in, f, ',')) {
    std::size_t k = 0;
    const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), k);
    if (ec != std::errc() || ptr != f.data() + f.size()) throw ValidationError("bad k value '" + f + "'");
    ks.push_back(k);
  }
  if (ks.empty()) throw ValidationError("empty k list");
  return ks;
}

// ---------------------------------------------------------------------------

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig experiment(const Common& c) {
  ExperimentConfig e = c.config.empty() ? desk_experiment("token_tgt") : load_experiment(c.config);
  if (c.seed) e.apply_seed(*c.seed);
  e.validate();
  return e;
}

int cmd_gen_data(const Common& common, const std::string& out_opt) {
  const ExperimentConfig e = experiment(common);
  CorpusConfig cc = e.corpus;
  if (common.seed) cc.seed = *common.seed;
  const fs::path out = out_opt.empty() ? e.output_dir / "data" : fs::path(out_opt);
  const Corpus corpus = generate_corpus(cc);
  save_corpus(corpus, out);
  const json report = data_report(corpus, e.training.temperature);
  atomic_write(out / "data_report.json", dump(report));
  std::cout << "wrote " << out.string() << " (" << corpus.train.size() << " training directions, multiway mean "
            << report["multiway"]["mean"].get<double>() << ")\n";
  return kOk;
}

int cmd_train(const Common& common, const std::string& data_opt, const std::string& out_opt,
              std::optional<std::size_t> steps, bool resume, bool quiet) {
  ExperimentConfig e = experiment(common);
  if (steps) e.training.steps = *steps;
  const fs::path out = out_opt.empty() ? e.output_dir : fs::path(out_opt);
  const fs::path data = data_opt.empty() ? out / "data" : fs::path(data_opt);
  Corpus corpus;
  if (fs::exists(data / "manifest.json")) {
    corpus = load_corpus(data);
    if (to_json(corpus.config) != to_json(e.corpus)) {
      std::cerr << "note: corpus at " << data.string() << " differs from the config's corpus section; using the files\n";
    }
  } else {
    corpus = generate_corpus(e.corpus);
    save_corpus(corpus, data);
  }
  fs::create_directories(out);
  e.training.out_dir = out;
  e.training.validate();

  const ModelConfig mc = bind_to_vocabulary(e.model, corpus.vocab);
  Model model(mc, e.seed);
  std::optional<Checkpoint> last;
  if (resume) {
    if (!fs::exists(out / "last.ckpt")) throw ValidationError("--resume: no last.ckpt in " + out.string());
    last = load_checkpoint(out / "last.ckpt");
  }
  atomic_write(out / "config.json", dump(to_json(e)));

  std::ofstream log_file(out / "train.log.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!log_file) throw std::runtime_error("cannot write " + (out / "train.log.jsonl").string());
  TeeBuf tee(log_file.rdbuf(), quiet ? nullptr : std::cerr.rdbuf());
  std::ostream log(&tee);

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(model, corpus, e.training, supervised_dev_hook(corpus, e.dev_decode), &log,
                              last ? &*last : nullptr);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json evals = json::array();
  for (const auto& ev : r.evals) evals.push_back({{"step", ev.step}, {"score", ev.score}});
  atomic_write(out / "summary.json", dump({{"name", e.name},
                                           {"seed", e.seed},
                                           {"steps_run", r.steps_run},
                                           {"best_step", r.best_step},
                                           {"best_score", r.best_score},
                                           {"skipped_steps", r.skipped_steps},
                                           {"parameters", model.count_parameters()},
                                           {"seconds", seconds},
                                           {"evals", evals}}));
  std::cout << "best dev BLEU " << r.best_score << " at step " << r.best_step << "; checkpoints in " << out.string()
            << "\n";
  return kOk;
}

int cmd_translate(const std::string& checkpoint, const std::string& data, const std::string& src_name,
                  const std::string& tgt_name, const std::string& input, const std::string& output,
                  const DecodeConfig& dc, bool with_scores) {
  const Corpus corpus = load_corpus_dir(data);
  const auto& vocab = corpus.vocab;
  const std::size_t src = language_or_throw(vocab, src_name, "source language");
  const std::size_t tgt = language_or_throw(vocab, tgt_name, "target language");
  if (src == tgt) throw ValidationError("source and target language are the same");
  std::vector<Example> examples;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(input)) {
    ++line_no;
    examples.push_back({src, tgt, parse_source_line(line, src, vocab, line_no), {}});
  }
  const Model model = load_model(checkpoint, vocab);
  const auto results = translate(model, examples, vocab, dc);
  std::string text;
  std::size_t truncated = 0;
  for (const auto& r : results) {
    text += vocab.join(r.tokens);
    if (with_scores) text += "\t" + std::to_string(r.score);
    text += "\n";
    truncated += r.hit_max_len;
  }
  atomic_write(output, text);
  std::cout << "translated " << results.size() << " sentences (" << truncated << " hit max_len)\n";
  return kOk;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data, const std::string& split_name,
                 const std::string& out_dir, const std::string& reference, const DecodeConfig& dc) {
  const Corpus corpus = load_corpus_dir(data);
  const auto* split = split_name == "test" ? &corpus.test : split_name == "dev" ? &corpus.dev : nullptr;
  if (!split) throw ValidationError("--split must be dev or test");
  std::optional<EvaluationReport> ref;
  if (!reference.empty()) ref = evaluation_report_from_json(json::parse(read_file(reference)));
  const Model model = load_model(checkpoint, corpus.vocab);
  std::map<Direction, std::vector<DecodeResult>> outputs;
  const EvaluationReport report = evaluate(model, corpus, *split, dc, &outputs);
  const fs::path out(out_dir);
  fs::create_directories(out);
  for (const auto& [d, rs] : outputs) {
    std::string text;
    for (const auto& r : rs) text += corpus.vocab.join(r.tokens) + "\n";
    atomic_write(out / ("hyp." + corpus.direction_name(d) + ".txt"), text);
  }
  json j = to_json(report, ref ? &*ref : nullptr);
  j["split"] = split_name;
  j["decode"] = to_json(dc);
  atomic_write(out / "report.csv", to_csv(report));
  atomic_write(out / "report.json", dump(j));
  std::cout << "All " << report.all.bleu << " BLEU, zero-shot " << report.zero_shot.bleu << " BLEU / LangAcc "
            << report.zero_shot.lang_acc << "\n";
  return kOk;
}

int cmd_export(const std::string& checkpoint, const std::string& data, const std::string& source,
               const std::string& output) {
  const Corpus corpus = load_corpus_dir(data);
  const Model model = load_model(checkpoint, corpus.vocab);
  ReprExport e;
  try {
    e = export_representations(model, corpus.vocab.language_names(), source);
  } catch (const std::invalid_argument& ex) {
    throw ValidationError(ex.what());
  }
  atomic_write(output, to_json(e).dump() + "\n");
  std::cout << "exported " << e.languages.size() << " " << to_string(e.kind()) << " representations from "
            << e.source << "\n";
  return kOk;
}

int cmd_typology(const std::string& reprs_path, const std::string& features, const std::string& synthetic,
                 const std::string& ks_text, const std::string& output) {
  const ReprExport reprs = repr_export_from_json(json::parse(read_file(reprs_path)));
  if (features.empty() == synthetic.empty()) throw ValidationError("give exactly one of --features or --synthetic");
  const FeatureTable table = features.empty() ? synthetic_features(load_corpus_dir(synthetic).languages)
                                              : read_feature_table(features);
  std::vector<std::size_t> ks;
  if (ks_text.empty()) {
    for (std::size_t k : {1, 3, 5, 7, 9}) {
      if (k < reprs.languages.size()) ks.push_back(k);
    }
  } else {
    ks = parse_ks(ks_text);
  }
  std::vector<KnnResult> results;
  for (std::size_t k : ks) results.push_back(knn_loo_predict(reprs, table, k));
  const KnnSummary best = max_accuracy_over_k(results);
  json per_k = json::array();
  for (const auto& r : results) per_k.push_back(to_json(r));
  atomic_write(output, dump({{"source", reprs.source},
                             {"kind", to_string(reprs.kind())},
                             {"languages", reprs.languages},
                             {"max_over_k", to_json(best)},
                             {"per_k", per_k}}));
  for (const auto& [g, a] : best.group_accuracy) std::cout << g << " " << a << "\n";
  return kOk;
}

int cmd_bench(const LaaBenchConfig& base, const std::string& grid, const std::string& output, double tolerance) {
  const auto configs = grid.empty() ? std::vector<LaaBenchConfig>{base} : parse_laa_grid(grid, base);
  for (const auto& c : configs) c.validate();
  std::string csv = laa_bench_csv_header() + "\n";
  double worst = 0.0;
  for (const auto& c : configs) {
    const LaaBenchRow row = bench_laa(c);
    worst = std::max(worst, row.max_abs_diff);
    csv += to_csv_row(row) + "\n";
    std::cerr << to_csv_row(row) << "\n";
  }
  if (output.empty()) {
    std::cout << csv;
  } else {
    atomic_write(output, csv);
  }
  if (!(worst <= tolerance)) {
    std::cerr << "error: naive and batched LAA differ by " << worst << " (> " << tolerance << ")\n";
    return kRuntime;
  }
  return kOk;
}

int cmd_presets(const std::string& write_dir) {
  if (write_dir.empty()) {
    for (const auto& n : preset_names()) std::cout << n << "\n";
    return kOk;
  }
  fs::create_directories(write_dir);
  for (const auto& n : preset_names()) {
    json j = to_json(desk_experiment(n));
    j["model"].erase("conditioning");
    j["model"]["preset"] = n;
    atomic_write(fs::path(write_dir) / (n + ".json"), dump(j));
  }
  std::cout << "wrote " << preset_names().size() << " presets to " << write_dir << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-conditioned multilingual translation toolkit"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", common.config, "Experiment JSON (see configs/presets)")->check(CLI::ExistingFile);
    if (config_required) opt->required();
    sub->add_option("--seed", common.seed, "Seed for every random choice");
  };

  std::string data, out, checkpoint, src_lang, tgt_lang, input, output, split = "test", reference, source = "auto",
                                                                           features, synthetic, ks, grid, write_dir;
  std::optional<std::size_t> steps;
  bool resume = false, quiet = false, with_scores = false, no_backward = false;
  std::size_t beam = 5, max_len = 64;
  double alpha = 1.0, tolerance = 1e-10;
  std::uint64_t decode_seed = 1;
  LaaBenchConfig bench;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus and its data report");
  add_common(gen, false);
  gen->add_option("--out", out, "Output directory (default <output_dir>/data)");

  auto* tr = app.add_subcommand("train", "Train a model; writes best.ckpt, last.ckpt and a JSON-lines log");
  add_common(tr, true);
  tr->add_option("--data", data, "Corpus directory (generated there when missing)");
  tr->add_option("--out", out, "Run directory (default output_dir from the config)");
  tr->add_option("--steps", steps, "Override training.steps");
  tr->add_flag("--resume", resume, "Continue from last.ckpt in the run directory");
  tr->add_flag("--quiet", quiet, "Do not echo the log to stderr");

  auto add_decode = [&](CLI::App* sub) {
    sub->add_option("--beam", beam, "Beam size");
    sub->add_option("--alpha", alpha, "Length penalty exponent");
    sub->add_option("--max-len", max_len, "Maximum output length including EOS");
    sub->add_option("--seed", decode_seed, "Seed for random LAA draws at inference");
  };

  auto* tl = app.add_subcommand("translate", "Translate a file of source sentences");
  tl->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  tl->add_option("--data", data, "Corpus directory (for the vocabulary)")->required();
  tl->add_option("--src-lang", src_lang)->required();
  tl->add_option("--tgt-lang", tgt_lang)->required();
  tl->add_option("--input", input, "One sentence per line: tokens like de_12, or bare symbol ids")
      ->required()
      ->check(CLI::ExistingFile);
  tl->add_option("--output", output)->required();
  tl->add_flag("--scores", with_scores, "Append the length-normalised score after a tab");
  add_decode(tl);

  auto* ev = app.add_subcommand("evaluate", "BLEU and LangAcc per direction plus block summaries");
  ev->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "Corpus directory")->required();
  ev->add_option("--split", split, "dev or test")->check(CLI::IsMember({"dev", "test"}));
  ev->add_option("--out", out, "Report directory")->required();
  ev->add_option("--reference", reference, "report.json of a reference system for win rates")
      ->check(CLI::ExistingFile);
  add_decode(ev);

  auto* ex = app.add_subcommand("export-reprs", "Write the language representations of a checkpoint");
  ex->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  ex->add_option("--data", data, "Corpus directory (for language names)")->required();
  ex->add_option("--source", source, "auto, tags, laa.<placement>[.<layer>], adapter.<side>");
  ex->add_option("--out", output)->required();

  auto* ty = app.add_subcommand("typology", "Leave-one-out k-NN typology probe");
  ty->add_option("--reprs", input, "Output of export-reprs")->required()->check(CLI::ExistingFile);
  ty->add_option("--features", features, "Feature table CSV")->check(CLI::ExistingFile);
  ty->add_option("--synthetic", synthetic, "Corpus directory; derive features from its language specs");
  ty->add_option("--k", ks, "Comma-separated odd k values (default: those of 1,3,5,7,9 below the language count)");
  ty->add_option("--out", output)->required();

  auto* bl = app.add_subcommand("bench-laa", "Time naive vs batched LAA and check they agree");
  bl->add_option("--batch", bench.batch);
  bl->add_option("--length", bench.length);
  bl->add_option("--languages", bench.languages);
  bl->add_option("--d-model", bench.d_model);
  bl->add_option("--heads", bench.heads);
  bl->add_option("--repeats", bench.repeats);
  bl->add_option("--grid", grid, "Configurations 'b,n,l,d,h;...' (overrides the single-config flags)");
  bl->add_flag("--forward-only", no_backward, "Skip the backward pass");
  bl->add_option("--tolerance", tolerance, "Largest accepted max-abs-diff");
  bl->add_option("--seed", bench.seed);
  bl->add_option("--out", output, "CSV path (default stdout)");

  auto* pr = app.add_subcommand("presets", "List strategy presets or write their desk configs");
  pr->add_option("--write", write_dir, "Directory for one experiment JSON per preset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kValidation;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common, out);
    if (tr->parsed()) return cmd_train(common, data, out, steps, resume, quiet);
    if (tl->parsed()) {
      return cmd_translate(checkpoint, data, src_lang, tgt_lang, input, output,
                           decode_flags(beam, alpha, max_len, decode_seed), with_scores);
    }
    if (ev->parsed()) return cmd_evaluate(checkpoint, data, split, out, reference, decode_flags(beam, alpha, max_len, decode_seed));
    if (ex->parsed()) return cmd_export(checkpoint, data, source, output);
    if (ty->parsed()) return cmd_typology(input, features, synthetic, ks, output);
    if (bl->parsed()) {
      bench.backward = !no_backward;
      return cmd_bench(bench, grid, output, tolerance);
    }
    if (pr->parsed()) return cmd_presets(write_dir);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kValidation;
}

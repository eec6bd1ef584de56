#include "langcond/experiment.h"

#include <set>
#include <stdexcept>

#include "langcond/io.h"

namespace langcond {

using json = nlohmann::json;

namespace {

Vocabulary vocabulary_for(const CorpusConfig& corpus) {
  std::vector<std::string> names;
  for (const auto& l : make_languages(corpus.num_languages, corpus.symbols, corpus.seed)) names.push_back(l.name);
  return Vocabulary(names, corpus.symbols);
}

}  // namespace

ModelConfig bind_to_vocabulary(ModelConfig model, const Vocabulary& vocab) {
  model.vocab_size = vocab.size();
  model.num_languages = vocab.num_languages();
  model.tag_ids = vocab.tag_ids();
  model.pad_id = Vocabulary::kPad;
  model.bos_id = Vocabulary::kBos;
  model.eos_id = Vocabulary::kEos;
  return model;
}

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  training.seed = s;
  decode.seed = s;
  dev_decode.seed = s;
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw std::invalid_argument("experiment: empty name");
  corpus.validate();
  training.validate();
  decode.validate();
  dev_decode.validate();
  if (model.num_languages != 0 && model.num_languages != corpus.num_languages) {
    throw std::invalid_argument("experiment: model has " + std::to_string(model.num_languages) +
                                " languages but the corpus has " + std::to_string(corpus.num_languages));
  }
  const ModelConfig bound = bind_to_vocabulary(model, vocabulary_for(corpus));
  bound.validate();
  if (training.frozen_laa_id) {
    if (bound.spec.laa_placements.empty()) throw std::invalid_argument("experiment: frozen_laa_id without LAA");
    if (*training.frozen_laa_id >= corpus.num_languages) {
      throw std::invalid_argument("experiment: frozen_laa_id names no language");
    }
  }
  if (decode.max_len < corpus.max_len + 1) {
    throw std::invalid_argument("experiment: decode.max_len must leave room for the longest sentence plus EOS");
  }
}

json to_json(const ExperimentConfig& c) {
  json model = to_json(c.model);
  for (const char* k : {"vocab_size", "num_languages", "tag_ids", "pad_id", "bos_id", "eos_id"}) model.erase(k);
  json training = to_json(c.training);
  training.erase("seed");
  training.erase("out_dir");
  json decode = to_json(c.decode);
  decode.erase("seed");
  json dev = to_json(c.dev_decode);
  dev.erase("seed");
  return {{"name", c.name},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"corpus", to_json(c.corpus)},
          {"model", model},
          {"training", training},
          {"decode", decode},
          {"dev_decode", dev}};
}

ExperimentConfig experiment_from_json(const json& j) {
  static const std::set<std::string> known{"name",  "seed",     "output_dir", "corpus",
                                           "model", "training", "decode",     "dev_decode"};
  for (const auto& [k, _] : j.items()) {
    if (!known.contains(k)) throw std::invalid_argument("experiment: unknown key '" + k + "'");
  }
  ExperimentConfig c;
  c.name = j.value("name", c.name);
  c.output_dir = j.value("output_dir", "runs/" + c.name);
  if (j.contains("corpus")) c.corpus = corpus_config_from_json(j.at("corpus"));
  if (j.contains("model")) {
    json m = j.at("model");
    std::string preset_name;
    if (m.contains("preset")) {
      preset_name = m.at("preset").get<std::string>();
      m.erase("preset");
    }
    c.model = model_config_from_json(m);
    if (!preset_name.empty() && !m.contains("conditioning")) c.model.spec = preset(preset_name, c.model.aliases);
  }
  if (j.contains("training")) c.training = train_config_from_json(j.at("training"));
  if (j.contains("decode")) c.decode = decode_config_from_json(j.at("decode"));
  if (j.contains("dev_decode")) c.dev_decode = decode_config_from_json(j.at("dev_decode"));
  c.apply_seed(j.value("seed", c.seed));
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

ExperimentConfig desk_experiment(const std::string& preset_name) {
  ExperimentConfig c;
  c.name = preset_name;
  c.output_dir = "runs/" + preset_name;
  c.model.spec = preset(preset_name);
  c.training.steps = 5000;
  c.training.eval_interval = 250;
  c.training.log_interval = 50;
  c.training.max_tokens = 1024;
  c.training.schedule = {1000, 2e-3};
  c.training.stop_score = 80.0;
  c.training.stop_token_acc = 0.95;
  c.decode = {5, 1.0, 64, 1};
  c.apply_seed(1);
  return c;
}

}  // namespace langcond

#include "langcond/model.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "langcond/ops.h"

namespace langcond {

using nlohmann::json;

std::string_view to_string(LaaSharing sharing) {
  switch (sharing) {
    case LaaSharing::placement: return "placement";
    case LaaSharing::layer: return "layer";
    case LaaSharing::global: return "global";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw std::invalid_argument("model: d_model must be a positive multiple of heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model: dropout must be in [0, 1)");
  if (vocab_size == 0) throw std::invalid_argument("model: vocab_size must be positive");
  if (d_ffn == 0) throw std::invalid_argument("model: d_ffn must be positive");
  if (tag_ids.size() != num_languages) throw std::invalid_argument("model: need one tag id per language");
  for (int id : {pad_id, bos_id, eos_id}) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) throw std::invalid_argument("model: special id out of vocab");
  }
  for (int id : tag_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) throw std::invalid_argument("model: tag id out of vocab");
  }
  spec.validate(num_languages > 2);
  if (num_languages == 0 && (!spec.laa_placements.empty() || !spec.adapter_placements.empty() ||
                             !spec.lee_sites.empty() || spec.token_mode != TokenMode::none)) {
    throw std::invalid_argument("model: language conditioning needs at least one language");
  }
  if (spec.laa(LaaPlacement::enc_self) && layers_enc == 0) {
    throw std::invalid_argument("model: LAA on encoder self-attention but the encoder has no layers");
  }
  if ((spec.laa(LaaPlacement::dec_self) || spec.laa(LaaPlacement::cross)) && layers_dec == 0) {
    throw std::invalid_argument("model: LAA on the decoder but the decoder has no layers");
  }
}

json to_json(const ModelConfig& c) {
  return json{{"layers_enc", c.layers_enc},
              {"layers_dec", c.layers_dec},
              {"d_model", c.d_model},
              {"heads", c.heads},
              {"d_ffn", c.d_ffn},
              {"vocab_size", c.vocab_size},
              {"num_languages", c.num_languages},
              {"dropout", c.dropout},
              {"tie_embeddings", c.tie_embeddings},
              {"pre_norm", c.pre_norm},
              {"laa_sharing", to_string(c.laa_sharing)},
              {"conditioning", to_json(c.spec, c.aliases)},
              {"site_aliases", to_json(c.aliases)},
              {"pad_id", c.pad_id},
              {"bos_id", c.bos_id},
              {"eos_id", c.eos_id},
              {"tag_ids", c.tag_ids}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.layers_enc = j.value("layers_enc", c.layers_enc);
  c.layers_dec = j.value("layers_dec", c.layers_dec);
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.num_languages = j.value("num_languages", c.num_languages);
  c.dropout = j.value("dropout", c.dropout);
  c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
  c.pre_norm = j.value("pre_norm", c.pre_norm);
  const auto sharing = j.value("laa_sharing", std::string("placement"));
  if (sharing == "placement") {
    c.laa_sharing = LaaSharing::placement;
  } else if (sharing == "layer") {
    c.laa_sharing = LaaSharing::layer;
  } else if (sharing == "global") {
    c.laa_sharing = LaaSharing::global;
  } else {
    throw std::invalid_argument("model: unknown laa_sharing '" + sharing + "'");
  }
  if (j.contains("site_aliases")) c.aliases = alias_map_from_json(j.at("site_aliases"));
  if (j.contains("conditioning")) c.spec = conditioning_from_json(j.at("conditioning"), c.aliases);
  c.pad_id = j.value("pad_id", c.pad_id);
  c.bos_id = j.value("bos_id", c.bos_id);
  c.eos_id = j.value("eos_id", c.eos_id);
  c.tag_ids = j.value("tag_ids", c.tag_ids);
  return c;
}

TokenGrid TokenGrid::from_rows(const std::vector<std::vector<int>>& rows, int pad_id) {
  TokenGrid g;
  g.rows = rows.size();
  for (const auto& r : rows) g.cols = std::max(g.cols, r.size());
  g.ids.assign(g.rows * g.cols, pad_id);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), g.ids.begin() + static_cast<std::ptrdiff_t>(i * g.cols));
  return g;
}

std::vector<int> TokenGrid::row(std::size_t r) const {
  return {ids.begin() + static_cast<std::ptrdiff_t>(r * cols), ids.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols)};
}

EncoderState EncoderState::select(std::span<const std::size_t> rows) const {
  EncoderState s;
  s.memory = index_select(memory, rows);
  for (auto r : rows) {
    s.src_valid.push_back(src_valid.at(r));
    s.tgt_langs.push_back(tgt_langs.at(r));
    s.laa_ids.push_back(laa_ids.at(r));
  }
  return s;
}

Tensor sinusoidal_positions(std::size_t n, std::size_t d) {
  // Sine on the first half of the channels, cosine on the second.
  std::vector<double> v(n * d, 0.0);
  const std::size_t half = d / 2;
  const double step = half > 1 ? std::log(10000.0) / static_cast<double>(half - 1) : 0.0;
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = static_cast<double>(pos) * std::exp(-step * static_cast<double>(i));
      v[pos * d + i] = std::sin(angle);
      v[pos * d + half + i] = std::cos(angle);
    }
  }
  return Tensor::from({n, d}, std::move(v));
}

std::string laa_parameter_name(LaaSharing sharing, LaaPlacement placement, std::size_t layer) {
  switch (sharing) {
    case LaaSharing::global: return "laa.shared";
    case LaaSharing::layer: return "laa." + std::string(to_string(placement)) + "." + std::to_string(layer);
    case LaaSharing::placement: break;
  }
  return "laa." + std::string(to_string(placement));
}

namespace {

std::string layer_name(const char* side, std::size_t i, const char* part) {
  return std::string(side) + "." + std::to_string(i) + "." + part;
}

std::vector<std::vector<std::uint8_t>> validity(const TokenGrid& g, int pad_id) {
  std::vector<std::vector<std::uint8_t>> v(g.rows, std::vector<std::uint8_t>(g.cols));
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) v[r][c] = g.at(r, c) != pad_id;
  }
  return v;
}

void xavier(Tensor& t, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(init_seed);
  const std::size_t d = config_.d_model, f = config_.d_ffn, v = config_.vocab_size, l = config_.num_languages;

  Tensor& emb = add_param("embed.tokens", {v, d});
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& x : emb.mutable_data()) x = rng.normal() * sd;
  std::fill_n(emb.mutable_data().begin() + static_cast<std::ptrdiff_t>(config_.pad_id * d), d, 0.0);
  if (!config_.tie_embeddings) {
    Tensor& out = add_param("out.proj", {v, d});
    for (auto& x : out.mutable_data()) x = rng.normal() * sd;
  }

  auto attention = [&](const std::string& prefix) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) xavier(add_param(prefix + "." + w, {d, d}), rng, d, d);
  };
  auto norm = [&](const std::string& prefix) {
    std::fill_n(add_param(prefix + ".g", {d}).mutable_data().begin(), d, 1.0);
    add_param(prefix + ".b", {d});
  };
  auto feed_forward = [&](const std::string& prefix) {
    xavier(add_param(prefix + ".w1", {d, f}), rng, d, f);
    add_param(prefix + ".b1", {f});
    xavier(add_param(prefix + ".w2", {f, d}), rng, f, d);
    add_param(prefix + ".b2", {d});
  };

  for (std::size_t i = 0; i < config_.layers_enc; ++i) {
    attention(layer_name("enc", i, "self"));
    norm(layer_name("enc", i, "ln1"));
    feed_forward(layer_name("enc", i, "ffn"));
    norm(layer_name("enc", i, "ln2"));
  }
  for (std::size_t i = 0; i < config_.layers_dec; ++i) {
    attention(layer_name("dec", i, "self"));
    norm(layer_name("dec", i, "ln1"));
    attention(layer_name("dec", i, "cross"));
    norm(layer_name("dec", i, "ln2"));
    feed_forward(layer_name("dec", i, "ffn"));
    norm(layer_name("dec", i, "ln3"));
  }
  if (config_.pre_norm) {
    norm("enc.ln_final");
    norm("dec.ln_final");
  }

  // Language matrices start at zero so the model starts as plain attention.
  for (auto placement : config_.spec.laa_placements) {
    const std::size_t layers = placement == LaaPlacement::enc_self ? config_.layers_enc : config_.layers_dec;
    for (std::size_t i = 0; i < layers; ++i) {
      const auto name = laa_parameter_name(config_.laa_sharing, placement, i);
      if (!has_parameter(name)) add_param(name, {l, d, d});
    }
  }
  for (auto side : config_.spec.adapter_placements) add_param("adapter." + std::string(to_string(side)), {l, d, d});
}

Tensor& Model::add_param(const std::string& name, Shape shape) {
  index_[name] = params_.size();
  params_.emplace_back(name, Tensor::zeros(std::move(shape), true));
  return params_.back().second;
}

const Tensor& Model::parameter(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("model: no parameter '" + name + "'");
  return params_[it->second].second;
}

bool Model::has_parameter(const std::string& name) const { return index_.contains(name); }

std::size_t Model::count_parameters() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void Model::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

Tensor Model::language_embeddings() const {
  std::vector<std::size_t> rows(config_.tag_ids.begin(), config_.tag_ids.end());
  return index_select(parameter("embed.tokens"), rows);
}

Tensor Model::maybe_dropout(const Tensor& x, const ForwardOptions& options) const {
  if (!options.training || config_.dropout == 0.0) return x;
  if (!options.rng) throw std::invalid_argument("model: training forward needs an rng for dropout");
  return dropout(x, config_.dropout, *options.rng);
}

Tensor Model::embed(const TokenGrid& grid) const {
  for (int id : grid.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw std::out_of_range("model: token id " + std::to_string(id) + " outside vocabulary");
    }
  }
  const std::size_t d = config_.d_model;
  Tensor x = reshape(embedding(parameter("embed.tokens"), grid.ids), {grid.rows, grid.cols, d});
  x = scale(x, std::sqrt(static_cast<double>(d)));
  return add(x, sinusoidal_positions(grid.cols, d));
}

AttentionParams Model::attention_params(const std::string& prefix) const {
  return {parameter(prefix + ".wq"), parameter(prefix + ".wk"), parameter(prefix + ".wv"), parameter(prefix + ".wo"),
          config_.heads};
}

const Tensor* Model::laa_stack(LaaPlacement placement, std::size_t layer) const {
  if (!config_.spec.laa(placement)) return nullptr;
  return &parameter(laa_parameter_name(config_.laa_sharing, placement, layer));
}

Tensor Model::attend(const AttentionParams& params, LaaPlacement placement, std::size_t layer, const Tensor& q,
                     const Tensor& kv, const AttentionMask& mask, const std::vector<std::size_t>& laa_ids,
                     const ForwardOptions& options) const {
  const Tensor* stack = laa_stack(placement, layer);
  if (!stack) return mha(params, AttentionInput{q, kv, kv, mask, {}});
  const AttentionInput input{q, kv, kv, mask, laa_ids};
  const LanguageMatrixStack langs{*stack};
  return options.laa_impl == LaaImpl::naive ? laa_naive(params, langs, input) : laa_batched(params, langs, input);
}

Tensor Model::norm_in(const Tensor& x, const std::string& ln) const {
  return config_.pre_norm ? layer_norm(x, parameter(ln + ".g"), parameter(ln + ".b")) : x;
}

Tensor Model::sublayer(const Tensor& x, const Tensor& out, const std::string& ln, const ForwardOptions& options) const {
  const Tensor residual = add(x, maybe_dropout(out, options));
  return config_.pre_norm ? residual : layer_norm(residual, parameter(ln + ".g"), parameter(ln + ".b"));
}

Tensor Model::ffn(const std::string& prefix, const Tensor& x) const {
  const Tensor h = relu(add(matmul(x, parameter(prefix + ".w1")), parameter(prefix + ".b1")));
  return add(matmul(h, parameter(prefix + ".w2")), parameter(prefix + ".b2"));
}

EncoderState Model::encode(const TokenGrid& src, std::span<const std::size_t> src_langs,
                           std::span<const std::size_t> tgt_langs, const ForwardOptions& options) const {
  const std::size_t b = src.rows;
  if (tgt_langs.size() != b || (!src_langs.empty() && src_langs.size() != b)) {
    throw std::invalid_argument("model: need one source and target language per sample");
  }
  for (auto lang : tgt_langs) {
    if (lang >= config_.num_languages) throw std::out_of_range("model: unknown target language " + std::to_string(lang));
  }
  for (auto lang : src_langs) {
    if (lang >= config_.num_languages) throw std::out_of_range("model: unknown source language " + std::to_string(lang));
  }

  EncoderState state;
  state.tgt_langs.assign(tgt_langs.begin(), tgt_langs.end());
  if (options.laa_ids) {
    if (options.laa_ids->size() != b) throw std::invalid_argument("model: frozen LAA ids must cover the batch");
    state.laa_ids = *options.laa_ids;
  } else if (config_.spec.laa_random && !config_.spec.laa_placements.empty()) {
    if (!options.rng) throw std::invalid_argument("model: random LAA needs an rng");
    state.laa_ids = choose_laa_matrix(config_.num_languages, tgt_langs, config_.spec, *options.rng,
                                      options.training ? Phase::train : Phase::infer);
  } else {
    state.laa_ids = state.tgt_langs;
  }
  state.src_valid = validity(src, config_.pad_id);

  const auto& spec = config_.spec;
  const LanguageEmbedding lang_emb{spec.lee_sites.empty() ? Tensor{} : language_embeddings()};
  const AttentionMask self_mask = AttentionMask::key_padding(state.src_valid, src.cols);

  Tensor x = maybe_dropout(embed(src), options);
  for (std::size_t i = 0; i < config_.layers_enc; ++i) {
    const auto ln1 = layer_name("enc", i, "ln1"), ln2 = layer_name("enc", i, "ln2");
    Tensor u = inject_lee(norm_in(x, ln1), InjectionSite::enc_self_in, spec, lang_emb, tgt_langs);
    x = sublayer(x, attend(attention_params(layer_name("enc", i, "self")), LaaPlacement::enc_self, i, u, u, self_mask,
                           state.laa_ids, options),
                 ln1, options);
    u = inject_lee(norm_in(x, ln2), InjectionSite::enc_ffn_in, spec, lang_emb, tgt_langs);
    x = sublayer(x, ffn(layer_name("enc", i, "ffn"), u), ln2, options);
    if (spec.adapter(AdapterSide::enc)) x = apply_adapter(x, AdapterStack{parameter("adapter.enc")}, tgt_langs);
  }
  if (config_.pre_norm) x = layer_norm(x, parameter("enc.ln_final.g"), parameter("enc.ln_final.b"));
  state.memory = x;
  return state;
}

Tensor Model::decode(const EncoderState& state, const TokenGrid& tgt_in, const ForwardOptions& options) const {
  const std::size_t b = tgt_in.rows;
  if (state.memory.dim(0) != b || state.tgt_langs.size() != b || state.laa_ids.size() != b) {
    throw std::invalid_argument("model: decoder batch does not match encoder state");
  }
  const auto& spec = config_.spec;
  const std::span<const std::size_t> langs = state.tgt_langs;
  const LanguageEmbedding lang_emb{spec.lee_sites.empty() ? Tensor{} : language_embeddings()};
  const AttentionMask self_mask = AttentionMask::causal(validity(tgt_in, config_.pad_id));
  const AttentionMask cross_mask = AttentionMask::key_padding(state.src_valid, tgt_in.cols);

  Tensor x = inject_lee(embed(tgt_in), InjectionSite::dec_emb_in, spec, lang_emb, langs);
  x = maybe_dropout(x, options);
  for (std::size_t i = 0; i < config_.layers_dec; ++i) {
    const auto ln1 = layer_name("dec", i, "ln1"), ln2 = layer_name("dec", i, "ln2"), ln3 = layer_name("dec", i, "ln3");
    Tensor u = inject_lee(norm_in(x, ln1), InjectionSite::dec_self_in, spec, lang_emb, langs);
    x = sublayer(x, attend(attention_params(layer_name("dec", i, "self")), LaaPlacement::dec_self, i, u, u, self_mask,
                           state.laa_ids, options),
                 ln1, options);
    u = inject_lee(norm_in(x, ln2), InjectionSite::dec_cross_in, spec, lang_emb, langs);
    x = sublayer(x, attend(attention_params(layer_name("dec", i, "cross")), LaaPlacement::cross, i, u, state.memory,
                           cross_mask, state.laa_ids, options),
                 ln2, options);
    u = inject_lee(norm_in(x, ln3), InjectionSite::dec_ffn_in, spec, lang_emb, langs);
    x = sublayer(x, ffn(layer_name("dec", i, "ffn"), u), ln3, options);
    if (spec.adapter(AdapterSide::dec)) x = apply_adapter(x, AdapterStack{parameter("adapter.dec")}, langs);
  }
  if (config_.pre_norm) x = layer_norm(x, parameter("dec.ln_final.g"), parameter("dec.ln_final.b"));
  const Tensor& out = config_.tie_embeddings ? parameter("embed.tokens") : parameter("out.proj");
  return matmul(x, transpose_last2(out));
}

Tensor Model::forward(const TokenGrid& src, const TokenGrid& tgt_in, std::span<const std::size_t> src_langs,
                      std::span<const std::size_t> tgt_langs, const ForwardOptions& options) const {
  if (src.rows != tgt_in.rows) throw std::invalid_argument("model: source and target batch sizes differ");
  return decode(encode(src, src_langs, tgt_langs, options), tgt_in, options);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'L', 'C', 'N', 'D', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint64_t get_le(const std::string& in, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

std::uint64_t fnv1a(const std::string& bytes, std::size_t from) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = from; i < bytes.size(); ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::string payload;
  json arrays = json::array();
  auto write_group = [&](const NamedTensors& group, const char* kind) {
    for (const auto& [name, t] : group) {
      arrays.push_back({{"name", name}, {"group", kind}, {"shape", t.shape()}, {"offset", payload.size()}, {"count", t.size()}});
      for (double v : t.data()) put_u64(payload, std::bit_cast<std::uint64_t>(v));
    }
  };
  write_group(ck.parameters, "param");
  write_group(ck.optimizer, "optim");

  std::ostringstream checksum;
  checksum << std::hex << fnv1a(payload, 0);
  const json header{{"format", "langcond-checkpoint"},
                    {"version", kCheckpointVersion},
                    {"model", ck.model},
                    {"extra", ck.extra},
                    {"meta", ck.meta},
                    {"step", ck.step},
                    {"rng", ck.rng_states},
                    {"arrays", arrays},
                    {"payload_bytes", payload.size()},
                    {"checksum", checksum.str()}};
  const std::string header_text = header.dump();

  std::string file(kMagic, sizeof(kMagic));
  put_u32(file, kCheckpointVersion);
  put_u64(file, header_text.size());
  file += header_text;
  file += payload;

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + tmp.string());
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  const std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file.size() < 20 || std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("checkpoint: " + path.string() + " is not a langcond checkpoint");
  }
  const auto version = static_cast<std::uint32_t>(get_le(file, 8, 4));
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t header_len = get_le(file, 12, 8);
  if (20 + header_len > file.size()) throw CheckpointError("checkpoint: truncated header");
  json header;
  try {
    header = json::parse(file.substr(20, header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  const std::size_t base = 20 + header_len;
  const std::string payload = file.substr(base);
  if (payload.size() != header.value("payload_bytes", std::uint64_t{0})) {
    throw CheckpointError("checkpoint: payload size mismatch (truncated file?)");
  }
  std::ostringstream checksum;
  checksum << std::hex << fnv1a(payload, 0);
  if (checksum.str() != header.value("checksum", std::string())) throw CheckpointError("checkpoint: checksum mismatch");

  Checkpoint ck;
  ck.model = header.at("model");
  ck.extra = header.value("extra", json::object());
  ck.meta = header.value("meta", json::object());
  ck.step = header.value("step", std::uint64_t{0});
  ck.rng_states = header.value("rng", std::map<std::string, std::string>{});
  for (const auto& a : header.at("arrays")) {
    const Shape shape = a.at("shape").get<Shape>();
    const std::size_t offset = a.at("offset").get<std::size_t>(), count = a.at("count").get<std::size_t>();
    if (numel(shape) != count || offset + count * 8 > payload.size()) {
      throw CheckpointError("checkpoint: bad directory entry for " + a.at("name").get<std::string>());
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(get_le(payload, offset + i * 8, 8));
    const std::string group = a.at("group").get<std::string>();
    auto& target = group == "optim" ? ck.optimizer : ck.parameters;
    target.emplace_back(a.at("name").get<std::string>(), Tensor::from(shape, std::move(values), group == "param"));
  }
  return ck;
}

Checkpoint snapshot(const Model& model) {
  Checkpoint ck;
  ck.model = to_json(model.config());
  for (const auto& [name, t] : model.parameters()) ck.parameters.emplace_back(name, t.clone());
  return ck;
}

void restore_parameters(Model& model, const Checkpoint& ck) {
  const ModelConfig saved = model_config_from_json(ck.model);
  const ModelConfig& cur = model.config();
  auto mismatch = [](const char* field, auto a, auto b) {
    std::ostringstream os;
    os << "checkpoint: " << field << " mismatch (checkpoint " << a << ", model " << b << ")";
    throw CheckpointError(os.str());
  };
  if (saved.vocab_size != cur.vocab_size) mismatch("vocab_size", saved.vocab_size, cur.vocab_size);
  if (saved.d_model != cur.d_model) mismatch("d_model", saved.d_model, cur.d_model);
  if (saved.num_languages != cur.num_languages) mismatch("num_languages", saved.num_languages, cur.num_languages);
  if (ck.parameters.size() != model.parameters().size()) {
    mismatch("parameter count", ck.parameters.size(), model.parameters().size());
  }
  for (auto& [name, t] : model.parameters()) {
    const auto it = std::find_if(ck.parameters.begin(), ck.parameters.end(), [&](const auto& p) { return p.first == name; });
    if (it == ck.parameters.end()) throw CheckpointError("checkpoint: missing parameter " + name);
    if (it->second.shape() != t.shape()) throw CheckpointError("checkpoint: shape mismatch for " + name);
    std::copy(it->second.data().begin(), it->second.data().end(), t.mutable_data().begin());
  }
}

Model model_from_checkpoint(const Checkpoint& ck) {
  Model model(model_config_from_json(ck.model), 0);
  restore_parameters(model, ck);
  return model;
}

}  // namespace langcond

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "langcond/attention.h"
#include "langcond/conditioning.h"
#include "langcond/tensor.h"

namespace langcond {

/// How LAA matrices are shared: one stack per placement kind shared across its
/// layers, one per layer, or a single stack for every placement.
enum class LaaSharing { placement, layer, global };
enum class LaaImpl { batched, naive };

std::string_view to_string(LaaSharing sharing);

/// Parameter holding the LAA stack used at (placement, layer).
std::string laa_parameter_name(LaaSharing sharing, LaaPlacement placement, std::size_t layer);

struct ModelConfig {
  std::size_t layers_enc = 2;
  std::size_t layers_dec = 2;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ffn = 256;
  std::size_t vocab_size = 0;
  std::size_t num_languages = 0;
  double dropout = 0.1;
  bool tie_embeddings = true;
  bool pre_norm = false;
  LaaSharing laa_sharing = LaaSharing::placement;
  ConditioningSpec spec;
  SiteAliasMap aliases = SiteAliasMap::standard();
  int pad_id = 0;
  int bos_id = 1;
  int eos_id = 2;
  std::vector<int> tag_ids;  // reserved vocabulary id per language

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Row-major [rows, cols] token ids, right-padded.
struct TokenGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> ids;

  static TokenGrid from_rows(const std::vector<std::vector<int>>& rows, int pad_id);
  int at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  std::vector<int> row(std::size_t r) const;
};

struct ForwardOptions {
  bool training = false;
  /// Dropout masks and random LAA draws; required when either is in play.
  Rng* rng = nullptr;
  LaaImpl laa_impl = LaaImpl::batched;
  /// Frozen LAA matrix choice per sample (overrides random draws).
  const std::vector<std::size_t>* laa_ids = nullptr;
};

/// Encoder output plus everything the decoder needs about each sample.
struct EncoderState {
  Tensor memory;  // [b, ns, d_model]
  std::vector<std::vector<std::uint8_t>> src_valid;
  std::vector<std::size_t> tgt_langs;
  std::vector<std::size_t> laa_ids;

  /// Samples in the given order (duplicates allowed); used to expand beams.
  EncoderState select(std::span<const std::size_t> rows) const;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Post-norm (default) or pre-norm Transformer encoder-decoder with the
/// language-conditioning mechanisms wired in per ModelConfig::spec.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  NamedTensors& parameters() { return params_; }
  const NamedTensors& parameters() const { return params_; }
  const Tensor& parameter(const std::string& name) const;
  bool has_parameter(const std::string& name) const;
  std::size_t count_parameters() const;
  void zero_grad();

  /// Logits [b, nt, vocab].
  Tensor forward(const TokenGrid& src, const TokenGrid& tgt_in, std::span<const std::size_t> src_langs,
                 std::span<const std::size_t> tgt_langs, const ForwardOptions& options) const;
  EncoderState encode(const TokenGrid& src, std::span<const std::size_t> src_langs,
                      std::span<const std::size_t> tgt_langs, const ForwardOptions& options) const;
  Tensor decode(const EncoderState& state, const TokenGrid& tgt_in, const ForwardOptions& options) const;

  /// Language representations: tag embeddings [l, d] or an LAA stack.
  Tensor language_embeddings() const;

 private:
  Tensor& add_param(const std::string& name, Shape shape);
  Tensor embed(const TokenGrid& grid) const;
  Tensor attend(const AttentionParams& params, LaaPlacement placement, std::size_t layer, const Tensor& q,
                const Tensor& kv, const AttentionMask& mask, const std::vector<std::size_t>& laa_ids,
                const ForwardOptions& options) const;
  const Tensor* laa_stack(LaaPlacement placement, std::size_t layer) const;
  Tensor sublayer(const Tensor& x, const Tensor& out, const std::string& ln, const ForwardOptions& options) const;
  Tensor norm_in(const Tensor& x, const std::string& ln) const;
  Tensor ffn(const std::string& prefix, const Tensor& x) const;
  AttentionParams attention_params(const std::string& prefix) const;
  Tensor maybe_dropout(const Tensor& x, const ForwardOptions& options) const;

  ModelConfig config_;
  NamedTensors params_;
  std::map<std::string, std::size_t> index_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to resume training or run inference.
struct Checkpoint {
  nlohmann::json model;  // ModelConfig JSON
  nlohmann::json extra;  // caller data, e.g. vocabulary manifest
  nlohmann::json meta;   // optimizer scalars and the like
  NamedTensors parameters;
  NamedTensors optimizer;
  std::uint64_t step = 0;
  std::map<std::string, std::string> rng_states;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// File layout: 8-byte magic "LCNDCKPT", u32 version, u64 header length, JSON
/// header (config, array directory with name/shape/offset, checksum), then the
/// little-endian float64 payload. Written to a temp file and renamed.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies the model's config and parameter values.
Checkpoint snapshot(const Model& model);
/// Overwrites parameters from a checkpoint; the architecture must match.
void restore_parameters(Model& model, const Checkpoint& checkpoint);
Model model_from_checkpoint(const Checkpoint& checkpoint);

/// Sinusoidal position table [n, d].
Tensor sinusoidal_positions(std::size_t n, std::size_t d);

}  // namespace langcond

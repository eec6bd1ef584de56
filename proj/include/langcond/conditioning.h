#pragma once

#include <array>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "langcond/tensor.h"

namespace langcond {

/// Sub-layer inputs where a language embedding can be added.
enum class InjectionSite {
  enc_self_in,
  enc_ffn_in,
  dec_self_in,
  dec_cross_in,
  dec_ffn_in,
  dec_emb_in,
};

inline constexpr std::array<InjectionSite, 6> kAllSites = {
    InjectionSite::enc_self_in, InjectionSite::enc_ffn_in,   InjectionSite::dec_self_in,
    InjectionSite::dec_cross_in, InjectionSite::dec_ffn_in, InjectionSite::dec_emb_in,
};

std::string_view to_string(InjectionSite site);
InjectionSite site_from_string(std::string_view name);

/// Numeric aliases 1..6 used by preset names such as "lee_4_5". The mapping is
/// configuration so experiments can permute it.
class SiteAliasMap {
 public:
  /// 1 enc_ffn, 2 enc_self, 3 dec_ffn, 4 dec_cross, 5 dec_self, 6 dec_emb.
  static SiteAliasMap standard();
  /// sites[i] is the site for alias i+1; must be a permutation of all six.
  explicit SiteAliasMap(std::array<InjectionSite, 6> sites);

  InjectionSite site(int alias) const;
  int alias(InjectionSite site) const;
  const std::array<InjectionSite, 6>& sites() const { return sites_; }

 private:
  std::array<InjectionSite, 6> sites_;
};

enum class TokenMode { none, src, tgt };
enum class LaaPlacement { enc_self, dec_self, cross };
enum class AdapterSide { enc, dec };
enum class Phase { train, infer };

std::string_view to_string(TokenMode mode);
std::string_view to_string(LaaPlacement placement);
std::string_view to_string(AdapterSide side);

/// Which language-conditioning mechanisms a model uses.
struct ConditioningSpec {
  TokenMode token_mode = TokenMode::none;
  std::set<InjectionSite> lee_sites;
  std::set<LaaPlacement> laa_placements;
  std::set<AdapterSide> adapter_placements;
  bool laa_random = false;

  bool lee(InjectionSite site) const { return lee_sites.contains(site); }
  bool laa(LaaPlacement placement) const { return laa_placements.contains(placement); }
  bool adapter(AdapterSide side) const { return adapter_placements.contains(side); }
  /// True when something tells the decoder which language to produce.
  bool has_target_signal() const;
  /// Throws std::invalid_argument on inconsistent combinations.
  void validate(bool many_to_many) const;

  bool operator==(const ConditioningSpec&) const = default;
};

nlohmann::json to_json(const ConditioningSpec& spec, const SiteAliasMap& aliases = SiteAliasMap::standard());
/// LEE sites may be given as aliases ("lee_sites": [4, 5]) or names.
ConditioningSpec conditioning_from_json(const nlohmann::json& j,
                                        const SiteAliasMap& aliases = SiteAliasMap::standard());
nlohmann::json to_json(const SiteAliasMap& aliases);
SiteAliasMap alias_map_from_json(const nlohmann::json& j);

/// Strategy rows: token_src, token_tgt, lee_2, lee_1_2, lee_5, lee_4_5,
/// lee_3_4_5, lee_4_5_6, lee_2_5, laa_enc_self, laa_dec_self,
/// laa_enc_self_dec_self, laa_dec_self_cross, laa_dec_self_token_tgt,
/// laa_dec_self_lee_4_5, adapter_enc, adapter_dec, adapter_enc_dec,
/// laa_r_dec_self_token_src, laa_r_dec_self_token_tgt.
ConditioningSpec preset(std::string_view name, const SiteAliasMap& aliases = SiteAliasMap::standard());
const std::vector<std::string>& preset_names();

/// Puts the reserved tag of `lang` in front of `tokens`. tag_ids[lang] < 0
/// means the language has no reserved id.
std::vector<int> prepend_token(std::span<const int> tokens, std::size_t lang, std::span<const int> tag_ids);
/// Inverse of prepend_token; throws if the sequence does not start with a tag.
std::vector<int> strip_token(std::span<const int> tokens, std::span<const int> tag_ids);

/// Per-language embedding rows [l, d_model]. In the model these are the token
/// embeddings of the language tags, so LEE adds no parameters.
struct LanguageEmbedding {
  Tensor e_all;
};

/// x + E^lang (broadcast over positions) when `site` is active, else x itself.
/// The result feeds the sub-layer only; callers keep x for the residual.
Tensor inject_lee(const Tensor& x, InjectionSite site, const ConditioningSpec& spec, const LanguageEmbedding& emb,
                  std::span<const std::size_t> lang_ids);

/// One matrix per language per side, shared by all layers of that side.
struct AdapterStack {
  Tensor a_all;  // [l, d_model, d_model]
};

/// x + x A^lang.
Tensor apply_adapter(const Tensor& x, const AdapterStack& adapters, std::span<const std::size_t> lang_ids);

/// Effective LAA matrix index per sample: the language itself, or a uniform
/// draw over all l matrices when spec.laa_random (in both phases).
std::vector<std::size_t> choose_laa_matrix(std::size_t languages, std::span<const std::size_t> lang_ids,
                                           const ConditioningSpec& spec, Rng& rng, Phase phase);

}  // namespace langcond

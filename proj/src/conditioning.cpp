#include "langcond/conditioning.h"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "langcond/attention.h"
#include "langcond/ops.h"

namespace langcond {

using nlohmann::json;

std::string_view to_string(InjectionSite site) {
  switch (site) {
    case InjectionSite::enc_self_in: return "enc_self_in";
    case InjectionSite::enc_ffn_in: return "enc_ffn_in";
    case InjectionSite::dec_self_in: return "dec_self_in";
    case InjectionSite::dec_cross_in: return "dec_cross_in";
    case InjectionSite::dec_ffn_in: return "dec_ffn_in";
    case InjectionSite::dec_emb_in: return "dec_emb_in";
  }
  return "?";
}

InjectionSite site_from_string(std::string_view name) {
  for (auto s : kAllSites) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown injection site '" + std::string(name) + "'");
}

std::string_view to_string(TokenMode mode) {
  switch (mode) {
    case TokenMode::none: return "none";
    case TokenMode::src: return "src";
    case TokenMode::tgt: return "tgt";
  }
  return "?";
}

std::string_view to_string(LaaPlacement placement) {
  switch (placement) {
    case LaaPlacement::enc_self: return "enc_self";
    case LaaPlacement::dec_self: return "dec_self";
    case LaaPlacement::cross: return "cross";
  }
  return "?";
}

std::string_view to_string(AdapterSide side) { return side == AdapterSide::enc ? "enc" : "dec"; }

namespace {

template <class E, std::size_t N>
E enum_from_string(std::string_view name, const std::array<E, N>& all, const char* what) {
  for (auto v : all) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(name) + "'");
}

constexpr std::array kTokenModes{TokenMode::none, TokenMode::src, TokenMode::tgt};
constexpr std::array kPlacements{LaaPlacement::enc_self, LaaPlacement::dec_self, LaaPlacement::cross};
constexpr std::array kSides{AdapterSide::enc, AdapterSide::dec};

}  // namespace

SiteAliasMap SiteAliasMap::standard() {
  return SiteAliasMap({InjectionSite::enc_ffn_in, InjectionSite::enc_self_in, InjectionSite::dec_ffn_in,
                       InjectionSite::dec_cross_in, InjectionSite::dec_self_in, InjectionSite::dec_emb_in});
}

SiteAliasMap::SiteAliasMap(std::array<InjectionSite, 6> sites) : sites_(sites) {
  std::set<InjectionSite> seen(sites.begin(), sites.end());
  if (seen.size() != 6) throw std::invalid_argument("site alias map must be a bijection over the six sites");
}

InjectionSite SiteAliasMap::site(int alias) const {
  if (alias < 1 || alias > 6) throw std::invalid_argument("site alias must be in 1..6, got " + std::to_string(alias));
  return sites_[static_cast<std::size_t>(alias - 1)];
}

int SiteAliasMap::alias(InjectionSite site) const {
  const auto it = std::find(sites_.begin(), sites_.end(), site);
  return static_cast<int>(it - sites_.begin()) + 1;
}

bool ConditioningSpec::has_target_signal() const {
  // Random LAA matrices carry no language identity.
  return token_mode != TokenMode::none || !lee_sites.empty() || !adapter_placements.empty() ||
         (!laa_placements.empty() && !laa_random);
}

void ConditioningSpec::validate(bool many_to_many) const {
  if (laa_random && laa_placements.empty()) {
    throw std::invalid_argument("conditioning: laa_random needs at least one LAA placement");
  }
  if (laa_random && token_mode == TokenMode::none) {
    throw std::invalid_argument("conditioning: laa_random requires token_mode src or tgt");
  }
  if (many_to_many && !has_target_signal()) {
    throw std::invalid_argument("conditioning: a many-to-many model needs a target-language signal");
  }
}

json to_json(const SiteAliasMap& aliases) {
  json j = json::object();
  for (int a = 1; a <= 6; ++a) j[std::to_string(a)] = to_string(aliases.site(a));
  return j;
}

SiteAliasMap alias_map_from_json(const json& j) {
  std::array<InjectionSite, 6> sites{};
  for (int a = 1; a <= 6; ++a) {
    const auto key = std::to_string(a);
    if (!j.contains(key)) throw std::invalid_argument("site alias map is missing alias " + key);
    sites[static_cast<std::size_t>(a - 1)] = site_from_string(j.at(key).get<std::string>());
  }
  return SiteAliasMap(sites);
}

json to_json(const ConditioningSpec& spec, const SiteAliasMap& aliases) {
  json j;
  j["token_mode"] = to_string(spec.token_mode);
  json sites = json::array();
  for (auto s : kAllSites) {
    if (spec.lee(s)) sites.push_back(aliases.alias(s));
  }
  std::sort(sites.begin(), sites.end());
  j["lee_sites"] = sites;
  j["laa_placements"] = json::array();
  for (auto p : spec.laa_placements) j["laa_placements"].push_back(to_string(p));
  j["adapter_placements"] = json::array();
  for (auto s : spec.adapter_placements) j["adapter_placements"].push_back(to_string(s));
  j["laa_random"] = spec.laa_random;
  return j;
}

ConditioningSpec conditioning_from_json(const json& j, const SiteAliasMap& aliases) {
  if (!j.is_object()) throw std::invalid_argument("conditioning: expected an object");
  ConditioningSpec spec;
  spec.token_mode = enum_from_string(j.value("token_mode", std::string("none")), kTokenModes, "token mode");
  for (const auto& s : j.value("lee_sites", json::array())) {
    spec.lee_sites.insert(s.is_number_integer() ? aliases.site(s.get<int>()) : site_from_string(s.get<std::string>()));
  }
  for (const auto& p : j.value("laa_placements", json::array())) {
    spec.laa_placements.insert(enum_from_string(p.get<std::string>(), kPlacements, "LAA placement"));
  }
  for (const auto& s : j.value("adapter_placements", json::array())) {
    spec.adapter_placements.insert(enum_from_string(s.get<std::string>(), kSides, "adapter side"));
  }
  spec.laa_random = j.value("laa_random", false);
  for (const auto& [key, _] : j.items()) {
    static const std::set<std::string> known{"token_mode", "lee_sites", "laa_placements", "adapter_placements",
                                             "laa_random"};
    if (!known.contains(key)) throw std::invalid_argument("conditioning: unknown field '" + key + "'");
  }
  return spec;
}

namespace {

struct PresetRow {
  const char* name;
  TokenMode token;
  std::vector<int> lee;
  std::vector<LaaPlacement> laa;
  std::vector<AdapterSide> adapters;
  bool random = false;
};

const std::vector<PresetRow>& preset_rows() {
  using P = LaaPlacement;
  static const std::vector<PresetRow> rows{
      {"token_src", TokenMode::src, {}, {}, {}},
      {"token_tgt", TokenMode::tgt, {}, {}, {}},
      {"lee_2", TokenMode::none, {2}, {}, {}},
      {"lee_1_2", TokenMode::none, {1, 2}, {}, {}},
      {"lee_5", TokenMode::none, {5}, {}, {}},
      {"lee_4_5", TokenMode::none, {4, 5}, {}, {}},
      {"lee_3_4_5", TokenMode::none, {3, 4, 5}, {}, {}},
      {"lee_4_5_6", TokenMode::none, {4, 5, 6}, {}, {}},
      {"lee_2_5", TokenMode::none, {2, 5}, {}, {}},
      {"laa_enc_self", TokenMode::none, {}, {P::enc_self}, {}},
      {"laa_dec_self", TokenMode::none, {}, {P::dec_self}, {}},
      {"laa_enc_self_dec_self", TokenMode::none, {}, {P::enc_self, P::dec_self}, {}},
      {"laa_dec_self_cross", TokenMode::none, {}, {P::dec_self, P::cross}, {}},
      {"laa_dec_self_token_tgt", TokenMode::tgt, {}, {P::dec_self}, {}},
      {"laa_dec_self_lee_4_5", TokenMode::none, {4, 5}, {P::dec_self}, {}},
      {"adapter_enc", TokenMode::none, {}, {}, {AdapterSide::enc}},
      {"adapter_dec", TokenMode::none, {}, {}, {AdapterSide::dec}},
      {"adapter_enc_dec", TokenMode::none, {}, {}, {AdapterSide::enc, AdapterSide::dec}},
      {"laa_r_dec_self_token_src", TokenMode::src, {}, {P::dec_self}, {}, true},
      {"laa_r_dec_self_token_tgt", TokenMode::tgt, {}, {P::dec_self}, {}, true},
  };
  return rows;
}

}  // namespace

ConditioningSpec preset(std::string_view name, const SiteAliasMap& aliases) {
  for (const auto& row : preset_rows()) {
    if (row.name != name) continue;
    ConditioningSpec spec;
    spec.token_mode = row.token;
    for (int a : row.lee) spec.lee_sites.insert(aliases.site(a));
    spec.laa_placements.insert(row.laa.begin(), row.laa.end());
    spec.adapter_placements.insert(row.adapters.begin(), row.adapters.end());
    spec.laa_random = row.random;
    return spec;
  }
  throw std::invalid_argument("unknown conditioning preset '" + std::string(name) + "'");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& row : preset_rows()) n.emplace_back(row.name);
    return n;
  }();
  return names;
}

std::vector<int> prepend_token(std::span<const int> tokens, std::size_t lang, std::span<const int> tag_ids) {
  if (lang >= tag_ids.size() || tag_ids[lang] < 0) {
    throw std::invalid_argument("prepend_token: language " + std::to_string(lang) + " has no reserved tag");
  }
  std::vector<int> out;
  out.reserve(tokens.size() + 1);
  out.push_back(tag_ids[lang]);
  out.insert(out.end(), tokens.begin(), tokens.end());
  return out;
}

std::vector<int> strip_token(std::span<const int> tokens, std::span<const int> tag_ids) {
  if (tokens.empty() || std::find(tag_ids.begin(), tag_ids.end(), tokens.front()) == tag_ids.end()) {
    throw std::invalid_argument("strip_token: sequence does not start with a language tag");
  }
  return {tokens.begin() + 1, tokens.end()};
}

Tensor inject_lee(const Tensor& x, InjectionSite site, const ConditioningSpec& spec, const LanguageEmbedding& emb,
                  std::span<const std::size_t> lang_ids) {
  if (!spec.lee(site)) return x;
  if (x.rank() != 3 || lang_ids.size() != x.dim(0) || emb.e_all.rank() != 2 || emb.e_all.dim(1) != x.dim(2)) {
    throw std::invalid_argument("inject_lee: expected x [b, n, d], E [l, d] and one language per sample");
  }
  const Tensor rows = index_select(emb.e_all, lang_ids);  // [b, d]
  return add(x, reshape(rows, {x.dim(0), 1, x.dim(2)}));
}

Tensor apply_adapter(const Tensor& x, const AdapterStack& adapters, std::span<const std::size_t> lang_ids) {
  if (x.rank() != 3 || lang_ids.size() != x.dim(0)) {
    throw std::invalid_argument("apply_adapter: expected x [b, n, d] and one language per sample");
  }
  const Tensor a = select_language_matrices(LanguageMatrixStack{adapters.a_all}, lang_ids);
  return add(x, matmul(x, a));
}

std::vector<std::size_t> choose_laa_matrix(std::size_t languages, std::span<const std::size_t> lang_ids,
                                           const ConditioningSpec& spec, Rng& rng, Phase /*phase*/) {
  std::vector<std::size_t> out(lang_ids.begin(), lang_ids.end());
  if (!spec.laa_random) return out;
  if (languages == 0) throw std::invalid_argument("choose_laa_matrix: no language matrices");
  for (auto& id : out) id = rng.below(languages);
  return out;
}

}  // namespace langcond

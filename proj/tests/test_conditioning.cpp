#include <map>

#include "doctest.h"
#include "langcond/conditioning.h"
#include "langcond/ops.h"
#include "test_util.h"

using namespace langcond;
using langcond::testing::max_abs_diff;
using langcond::testing::random_tensor;

TEST_CASE("standard site aliases") {
  const auto m = SiteAliasMap::standard();
  CHECK(m.site(1) == InjectionSite::enc_ffn_in);
  CHECK(m.site(2) == InjectionSite::enc_self_in);
  CHECK(m.site(3) == InjectionSite::dec_ffn_in);
  CHECK(m.site(4) == InjectionSite::dec_cross_in);
  CHECK(m.site(5) == InjectionSite::dec_self_in);
  CHECK(m.site(6) == InjectionSite::dec_emb_in);
  for (int a = 1; a <= 6; ++a) CHECK(m.alias(m.site(a)) == a);
  CHECK_THROWS_AS(m.site(0), std::invalid_argument);
  CHECK_THROWS_AS(m.site(7), std::invalid_argument);
  CHECK_THROWS_AS(SiteAliasMap({InjectionSite::enc_ffn_in, InjectionSite::enc_ffn_in, InjectionSite::dec_ffn_in,
                                InjectionSite::dec_cross_in, InjectionSite::dec_self_in, InjectionSite::dec_emb_in}),
                  std::invalid_argument);
  CHECK(alias_map_from_json(to_json(m)).sites() == m.sites());
}

TEST_CASE("presets") {
  REQUIRE(preset_names().size() == 20);
  const auto lee = preset("lee_4_5");
  CHECK(lee.lee_sites == std::set{InjectionSite::dec_cross_in, InjectionSite::dec_self_in});
  CHECK(lee.token_mode == TokenMode::none);

  const auto r = preset("laa_r_dec_self_token_tgt");
  CHECK(r.laa_random);
  CHECK(r.token_mode == TokenMode::tgt);
  CHECK(r.laa_placements == std::set{LaaPlacement::dec_self});

  CHECK(preset("laa_dec_self_cross").laa_placements == std::set{LaaPlacement::dec_self, LaaPlacement::cross});
  CHECK(preset("adapter_enc_dec").adapter_placements == std::set{AdapterSide::enc, AdapterSide::dec});
  CHECK_THROWS_AS(preset("lee_7"), std::invalid_argument);

  for (const auto& name : preset_names()) {
    INFO(name);
    const auto spec = preset(name);
    CHECK_NOTHROW(spec.validate(true));
    CHECK(conditioning_from_json(to_json(spec)) == spec);
  }
}

TEST_CASE("permuted alias map changes what presets resolve to") {
  const SiteAliasMap swapped({InjectionSite::enc_ffn_in, InjectionSite::enc_self_in, InjectionSite::dec_ffn_in,
                              InjectionSite::dec_self_in, InjectionSite::dec_cross_in, InjectionSite::dec_emb_in});
  CHECK(preset("lee_5", swapped).lee_sites == std::set{InjectionSite::dec_cross_in});
  // Round trip under a non-standard map.
  const auto j = to_json(preset("lee_5"), swapped);
  CHECK(conditioning_from_json(j, swapped) == preset("lee_5"));
}

TEST_CASE("validation") {
  ConditioningSpec none;
  CHECK_NOTHROW(none.validate(false));
  CHECK_THROWS_AS(none.validate(true), std::invalid_argument);

  ConditioningSpec random_alone;
  random_alone.laa_placements = {LaaPlacement::dec_self};
  random_alone.laa_random = true;
  CHECK_THROWS_AS(random_alone.validate(false), std::invalid_argument);
  random_alone.token_mode = TokenMode::src;
  CHECK_NOTHROW(random_alone.validate(true));
  CHECK(random_alone.has_target_signal());

  ConditioningSpec random_no_laa;
  random_no_laa.token_mode = TokenMode::tgt;
  random_no_laa.laa_random = true;
  CHECK_THROWS_AS(random_no_laa.validate(true), std::invalid_argument);
}

TEST_CASE("conditioning json") {
  const auto j = nlohmann::json::parse(R"({"token_mode":"tgt","lee_sites":["dec_emb_in",5]})");
  const auto spec = conditioning_from_json(j);
  CHECK(spec.lee_sites == std::set{InjectionSite::dec_emb_in, InjectionSite::dec_self_in});
  CHECK(spec.token_mode == TokenMode::tgt);
  CHECK_THROWS_AS(conditioning_from_json(nlohmann::json::parse(R"({"lee_site":[1]})")), std::invalid_argument);
  CHECK_THROWS_AS(conditioning_from_json(nlohmann::json::parse(R"({"token_mode":"both"})")), std::invalid_argument);
  CHECK_THROWS_AS(conditioning_from_json(nlohmann::json::parse(R"({"lee_sites":[9]})")), std::invalid_argument);
}

TEST_CASE("token prepend and strip") {
  const std::vector<int> tags{3, 4, -1};
  const std::vector<int> x{10, 11, 2};
  const auto y = prepend_token(x, 1, tags);
  CHECK(y == std::vector<int>{4, 10, 11, 2});
  CHECK(strip_token(y, tags) == x);
  CHECK_THROWS_AS(prepend_token(x, 2, tags), std::invalid_argument);
  CHECK_THROWS_AS(prepend_token(x, 3, tags), std::invalid_argument);
  CHECK_THROWS_AS(strip_token(x, tags), std::invalid_argument);
}

TEST_CASE("language embedding injection matches a loop") {
  Rng rng(4);
  const std::size_t b = 3, n = 4, d = 5;
  const Tensor x = random_tensor(rng, {b, n, d});
  const LanguageEmbedding e{random_tensor(rng, {4, d})};
  const std::vector<std::size_t> langs{2, 0, 2};
  const auto spec = preset("lee_4_5");

  const Tensor y = inject_lee(x, InjectionSite::dec_self_in, spec, e, langs);
  double err = 0.0;
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t c = 0; c < d; ++c)
        err = std::max(err, std::abs(y.data()[(s * n + t) * d + c] - x.data()[(s * n + t) * d + c] -
                                     e.e_all.data()[langs[s] * d + c]));
  CHECK(err == 0.0);

  const Tensor same = inject_lee(x, InjectionSite::enc_self_in, spec, e, langs);
  CHECK(same.id() == x.id());
  CHECK_THROWS_AS(inject_lee(x, InjectionSite::dec_self_in, spec, e, std::vector<std::size_t>{0}),
                  std::invalid_argument);
}

TEST_CASE("adapter matches a loop and zero adapter is identity") {
  Rng rng(5);
  const std::size_t b = 2, n = 3, d = 4;
  const Tensor x = random_tensor(rng, {b, n, d});
  const AdapterStack a{random_tensor(rng, {3, d, d})};
  const std::vector<std::size_t> langs{1, 2};
  const Tensor y = apply_adapter(x, a, langs);
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < d; ++j) {
        double v = x.data()[(s * n + t) * d + j];
        for (std::size_t k = 0; k < d; ++k) v += x.data()[(s * n + t) * d + k] * a.a_all.data()[(langs[s] * d + k) * d + j];
        CHECK(std::abs(y.data()[(s * n + t) * d + j] - v) <= 1e-12);
      }
  CHECK(max_abs_diff(apply_adapter(x, AdapterStack{Tensor::zeros({3, d, d})}, langs), x) == 0.0);
}

TEST_CASE("LAA matrix choice") {
  const std::vector<std::size_t> langs{0, 1, 2, 1};
  Rng rng(1);
  CHECK(choose_laa_matrix(3, langs, preset("laa_dec_self"), rng, Phase::train) == langs);

  const auto spec = preset("laa_r_dec_self_token_tgt");
  Rng a(9), b(9);
  CHECK(choose_laa_matrix(3, langs, spec, a, Phase::train) == choose_laa_matrix(3, langs, spec, b, Phase::infer));

  // Uniform over the matrices regardless of the true language.
  std::map<std::size_t, int> counts;
  const std::vector<std::size_t> one(30000, 0);
  for (auto id : choose_laa_matrix(3, one, spec, rng, Phase::train)) ++counts[id];
  REQUIRE(counts.size() == 3);
  double chi2 = 0.0;
  for (auto [_, c] : counts) chi2 += (c - 10000.0) * (c - 10000.0) / 10000.0;
  CHECK(chi2 < 13.8);  // p = 0.001 at two degrees of freedom
}

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "langcond/data.h"
#include "langcond/model.h"

namespace langcond {

enum class ReprKind { vector, matrix };

std::string_view to_string(ReprKind kind);
ReprKind repr_kind_from_string(std::string_view name);

/// Row-major representation; a vector is stored as a single row.
struct Repr {
  ReprKind kind = ReprKind::vector;
  std::size_t rows = 1;
  std::size_t cols = 0;
  std::vector<double> values;

  static Repr vector(std::vector<double> v);
  static Repr matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
};

/// 1 - cosine for vectors, 1 - mean row cosine for matrices. Rows with zero
/// norm count as similarity 0.
double distance(const Repr& a, const Repr& b);

/// One representation per language.
struct ReprExport {
  std::string source;  // e.g. "tags", "laa.dec_self"
  std::vector<std::string> languages;
  std::vector<Repr> reprs;

  ReprKind kind() const;
  void validate() const;
};

nlohmann::json to_json(const ReprExport& e);
ReprExport repr_export_from_json(const nlohmann::json& j);

/// `source`: "auto", "tags", an LAA placement ("laa.enc_self", "laa.dec_self",
/// "laa.cross", optionally with ".<layer>"), "adapter.enc", "adapter.dec", or
/// any parameter holding a [languages, d, d] stack. "auto" picks the decoder
/// self-attention LAA stack, then any LAA stack, then a decoder/encoder
/// adapter, then the tag embeddings.
ReprExport export_representations(const Model& model, const std::vector<std::string>& languages,
                                  const std::string& source = "auto");

/// Binary features, -1 = missing. Feature names may carry a group prefix
/// ("syntax.order_reverse"); names without one fall into group "all".
struct FeatureTable {
  static constexpr int kMissing = -1;

  std::vector<std::string> languages;
  std::vector<std::string> features;
  std::vector<std::vector<int>> values;  // [language][feature]

  void validate() const;
  std::optional<std::size_t> language_index(const std::string& name) const;
};

std::string feature_group(const std::string& feature);

/// Header `language,<feature>,...`; cells 0/1, or empty, "?", "NA", "-1" for missing.
FeatureTable read_feature_table(const std::filesystem::path& path);
FeatureTable parse_feature_table(const std::string& csv);
std::string to_csv(const FeatureTable& table);

/// Ground-truth features of the synthetic languages (word order and cipher
/// properties).
FeatureTable synthetic_features(const std::vector<SyntheticLanguageSpec>& languages);

struct KnnResult {
  std::size_t k = 0;
  std::vector<std::string> languages;  // export order
  std::vector<std::string> features;
  /// [language][feature]: predicted value, or -1 when abstaining.
  std::vector<std::vector<int>> predictions;
  /// Correct / scored; a feature with nothing scored is absent.
  std::map<std::string, double> feature_accuracy;
  /// Pooled over the (language, feature) pairs of each group.
  std::map<std::string, double> group_accuracy;
  std::map<std::string, std::size_t> group_scored;
};

/// Leave-one-out k-NN over the export's languages, which must all appear in
/// the table. Neighbour ties break by export order; even vote splits go to
/// the nearest voting neighbour.
KnnResult knn_loo_predict(const ReprExport& reprs, const FeatureTable& table, std::size_t k);

struct KnnSummary {
  std::vector<std::size_t> ks;
  std::map<std::string, double> feature_accuracy;
  std::map<std::string, double> group_accuracy;
};

/// Elementwise max across k.
KnnSummary max_accuracy_over_k(const std::vector<KnnResult>& results);

nlohmann::json to_json(const KnnResult& r);
nlohmann::json to_json(const KnnSummary& s);

}  // namespace langcond

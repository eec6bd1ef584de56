#include "langcond/typology.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "langcond/io.h"

namespace langcond {

std::string_view to_string(ReprKind kind) { return kind == ReprKind::vector ? "vector" : "matrix"; }

ReprKind repr_kind_from_string(std::string_view name) {
  if (name == "vector") return ReprKind::vector;
  if (name == "matrix") return ReprKind::matrix;
  throw std::invalid_argument("unknown representation kind '" + std::string(name) + "'");
}

Repr Repr::vector(std::vector<double> v) {
  Repr r;
  r.kind = ReprKind::vector;
  r.rows = 1;
  r.cols = v.size();
  r.values = std::move(v);
  return r;
}

Repr Repr::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  if (v.size() != rows * cols) throw std::invalid_argument("matrix repr: value count does not match shape");
  Repr r;
  r.kind = ReprKind::matrix;
  r.rows = rows;
  r.cols = cols;
  r.values = std::move(v);
  return r;
}

double distance(const Repr& a, const Repr& b) {
  if (a.kind != b.kind) throw std::invalid_argument("distance: representation kinds differ");
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("distance: representation shapes differ");
  if (a.values.size() != a.rows * a.cols || b.values.size() != b.rows * b.cols) {
    throw std::invalid_argument("distance: malformed representation");
  }
  if (a.rows == 0 || a.cols == 0) throw std::invalid_argument("distance: empty representation");
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* x = a.values.data() + i * a.cols;
    const double* y = b.values.data() + i * b.cols;
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) {
      dot += x[j] * y[j];
      nx += x[j] * x[j];
      ny += y[j] * y[j];
    }
    if (nx > 0.0 && ny > 0.0) total += dot / (std::sqrt(nx) * std::sqrt(ny));
  }
  return 1.0 - total / static_cast<double>(a.rows);
}

// ---------------------------------------------------------------------------
// Export

ReprKind ReprExport::kind() const {
  if (reprs.empty()) throw std::invalid_argument("repr export: empty");
  return reprs.front().kind;
}

void ReprExport::validate() const {
  if (reprs.empty()) throw std::invalid_argument("repr export: no representations");
  if (languages.size() != reprs.size()) throw std::invalid_argument("repr export: one representation per language");
  if (std::set<std::string>(languages.begin(), languages.end()).size() != languages.size()) {
    throw std::invalid_argument("repr export: duplicate language");
  }
  const Repr& first = reprs.front();
  for (const auto& r : reprs) {
    if (r.kind != first.kind || r.rows != first.rows || r.cols != first.cols) {
      throw std::invalid_argument("repr export: representations must share kind and shape");
    }
    if (r.values.size() != r.rows * r.cols) throw std::invalid_argument("repr export: malformed representation");
    if (r.kind == ReprKind::vector && r.rows != 1) throw std::invalid_argument("repr export: vector with several rows");
  }
}

nlohmann::json to_json(const ReprExport& e) {
  e.validate();
  nlohmann::json reprs = nlohmann::json::array();
  for (const auto& r : e.reprs) reprs.push_back(r.values);
  return {{"source", e.source},
          {"kind", to_string(e.kind())},
          {"rows", e.reprs.front().rows},
          {"cols", e.reprs.front().cols},
          {"languages", e.languages},
          {"reprs", reprs}};
}

ReprExport repr_export_from_json(const nlohmann::json& j) {
  ReprExport e;
  e.source = j.value("source", "");
  e.languages = j.at("languages").get<std::vector<std::string>>();
  const ReprKind kind = repr_kind_from_string(j.at("kind").get<std::string>());
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  for (const auto& v : j.at("reprs")) {
    auto values = v.get<std::vector<double>>();
    e.reprs.push_back(kind == ReprKind::vector ? Repr::vector(std::move(values))
                                               : Repr::matrix(rows, cols, std::move(values)));
  }
  e.validate();
  if (e.reprs.front().rows != rows || e.reprs.front().cols != cols) {
    throw std::invalid_argument("repr export: declared shape does not match values");
  }
  return e;
}

namespace {

std::string resolve_source(const Model& model, const std::string& source) {
  const auto& cfg = model.config();
  if (source != "auto") return source;
  if (cfg.spec.laa(LaaPlacement::dec_self)) return "laa.dec_self";
  for (auto p : {LaaPlacement::enc_self, LaaPlacement::cross}) {
    if (cfg.spec.laa(p)) return "laa." + std::string(to_string(p));
  }
  if (cfg.spec.adapter(AdapterSide::dec)) return "adapter.dec";
  if (cfg.spec.adapter(AdapterSide::enc)) return "adapter.enc";
  return "tags";
}

std::string stack_parameter(const Model& model, const std::string& source) {
  const auto& cfg = model.config();
  for (auto p : {LaaPlacement::enc_self, LaaPlacement::dec_self, LaaPlacement::cross}) {
    const std::string base = "laa." + std::string(to_string(p));
    std::size_t layer = 0;
    if (source == base) {
    } else if (source.starts_with(base + ".")) {
      const std::string tail = source.substr(base.size() + 1);
      if (tail.empty() || tail.find_first_not_of("0123456789") != std::string::npos) break;
      layer = std::stoul(tail);
    } else {
      continue;
    }
    if (!cfg.spec.laa(p)) throw std::invalid_argument("export: model has no LAA at " + std::string(to_string(p)));
    const std::size_t layers = p == LaaPlacement::enc_self ? cfg.layers_enc : cfg.layers_dec;
    if (layer >= layers) throw std::invalid_argument("export: LAA layer " + std::to_string(layer) + " out of range");
    return laa_parameter_name(cfg.laa_sharing, p, layer);
  }
  return source;
}

}  // namespace

ReprExport export_representations(const Model& model, const std::vector<std::string>& languages,
                                  const std::string& source) {
  const auto& cfg = model.config();
  if (languages.size() != cfg.num_languages) {
    throw std::invalid_argument("export: " + std::to_string(languages.size()) + " names for " +
                                std::to_string(cfg.num_languages) + " model languages");
  }
  ReprExport e;
  e.source = resolve_source(model, source);
  e.languages = languages;
  if (e.source == "tags") {
    const Tensor emb = model.language_embeddings();
    const std::size_t d = emb.dim(1);
    const auto data = emb.data();
    for (std::size_t l = 0; l < languages.size(); ++l) {
      e.reprs.push_back(Repr::vector({data.begin() + static_cast<std::ptrdiff_t>(l * d),
                                      data.begin() + static_cast<std::ptrdiff_t>((l + 1) * d)}));
    }
    e.validate();
    return e;
  }
  const std::string name = stack_parameter(model, e.source);
  if (!model.has_parameter(name)) throw std::invalid_argument("export: unknown source '" + e.source + "'");
  const Tensor& stack = model.parameter(name);
  if (stack.rank() != 3 || stack.dim(0) != languages.size()) {
    throw std::invalid_argument("export: '" + name + "' is not a per-language matrix stack");
  }
  const std::size_t r = stack.dim(1), c = stack.dim(2);
  const auto data = stack.data();
  for (std::size_t l = 0; l < languages.size(); ++l) {
    e.reprs.push_back(Repr::matrix(r, c,
                                   {data.begin() + static_cast<std::ptrdiff_t>(l * r * c),
                                    data.begin() + static_cast<std::ptrdiff_t>((l + 1) * r * c)}));
  }
  e.validate();
  return e;
}

// ---------------------------------------------------------------------------
// Feature tables

void FeatureTable::validate() const {
  if (languages.empty()) throw std::invalid_argument("feature table: no languages");
  if (features.empty()) throw std::invalid_argument("feature table: no features");
  if (values.size() != languages.size()) throw std::invalid_argument("feature table: one row per language");
  if (std::set<std::string>(languages.begin(), languages.end()).size() != languages.size()) {
    throw std::invalid_argument("feature table: duplicate language");
  }
  if (std::set<std::string>(features.begin(), features.end()).size() != features.size()) {
    throw std::invalid_argument("feature table: duplicate feature");
  }
  for (const auto& row : values) {
    if (row.size() != features.size()) throw std::invalid_argument("feature table: ragged row");
    for (int v : row) {
      if (v != 0 && v != 1 && v != kMissing) throw std::invalid_argument("feature table: values must be 0, 1 or missing");
    }
  }
}

std::optional<std::size_t> FeatureTable::language_index(const std::string& name) const {
  const auto it = std::find(languages.begin(), languages.end(), name);
  if (it == languages.end()) return std::nullopt;
  return static_cast<std::size_t>(it - languages.begin());
}

std::string feature_group(const std::string& feature) {
  const auto dot = feature.find('.');
  return dot == std::string::npos || dot == 0 ? "all" : feature.substr(0, dot);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

FeatureTable parse_feature_table(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  FeatureTable t;
  bool header = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_csv(line);
    if (header) {
      if (cells.size() < 2) throw std::invalid_argument("feature table: header needs a language column and features");
      t.features.assign(cells.begin() + 1, cells.end());
      header = false;
      continue;
    }
    if (cells.size() != t.features.size() + 1) {
      throw std::invalid_argument("feature table: line " + std::to_string(line_no) + " has " +
                                  std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(t.features.size() + 1));
    }
    t.languages.push_back(cells[0]);
    std::vector<int> row;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      const auto& c = cells[i];
      if (c == "0") row.push_back(0);
      else if (c == "1") row.push_back(1);
      else if (c.empty() || c == "?" || c == "NA" || c == "-1") row.push_back(FeatureTable::kMissing);
      else throw std::invalid_argument("feature table: line " + std::to_string(line_no) + ": bad value '" + c + "'");
    }
    t.values.push_back(std::move(row));
  }
  if (header) throw std::invalid_argument("feature table: empty input");
  t.validate();
  return t;
}

FeatureTable read_feature_table(const std::filesystem::path& path) { return parse_feature_table(read_file(path)); }

std::string to_csv(const FeatureTable& table) {
  table.validate();
  std::string out = "language";
  for (const auto& f : table.features) out += "," + f;
  out += "\n";
  for (std::size_t l = 0; l < table.languages.size(); ++l) {
    out += table.languages[l];
    for (int v : table.values[l]) out += v == FeatureTable::kMissing ? std::string(",?") : "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

FeatureTable synthetic_features(const std::vector<SyntheticLanguageSpec>& languages) {
  FeatureTable t;
  t.features = {"syntax.order_identity", "syntax.order_reverse", "syntax.order_rotate", "syntax.order_swap_adjacent",
                "syntax.rotate_gt1",     "lexicon.cipher_even",  "lexicon.cipher_fixes_first"};
  for (const auto& l : languages) {
    t.languages.push_back(l.name);
    const bool rotate = l.word_order == WordOrder::rotate;
    // permutation parity from cycle lengths
    std::size_t transpositions = 0;
    std::vector<bool> seen(l.cipher.size(), false);
    for (std::size_t i = 0; i < l.cipher.size(); ++i) {
      std::size_t len = 0;
      for (std::size_t j = i; !seen[j]; j = static_cast<std::size_t>(l.cipher[j])) {
        seen[j] = true;
        ++len;
      }
      if (len > 0) transpositions += len - 1;
    }
    t.values.push_back({l.word_order == WordOrder::identity, l.word_order == WordOrder::reverse, rotate,
                        l.word_order == WordOrder::swap_adjacent,
                        rotate ? static_cast<int>(l.rotate_k > 1) : FeatureTable::kMissing,
                        static_cast<int>(transpositions % 2 == 0),
                        static_cast<int>(!l.cipher.empty() && l.cipher[0] == 0)});
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// k-NN

KnnResult knn_loo_predict(const ReprExport& reprs, const FeatureTable& table, std::size_t k) {
  reprs.validate();
  table.validate();
  const std::size_t n = reprs.languages.size();
  if (k == 0 || k % 2 == 0) throw std::invalid_argument("knn: k must be odd, got " + std::to_string(k));
  if (k >= n) {
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " needs more than " + std::to_string(k) + " languages, have " +
                                std::to_string(n));
  }
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = table.language_index(reprs.languages[i]);
    if (!idx) throw std::invalid_argument("knn: language '" + reprs.languages[i] + "' missing from the feature table");
    rows[i] = *idx;
  }
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) dist[i * n + j] = dist[j * n + i] = distance(reprs.reprs[i], reprs.reprs[j]);
  }

  const std::size_t nf = table.features.size();
  KnnResult r;
  r.k = k;
  r.languages = reprs.languages;
  r.features = table.features;
  r.predictions.assign(n, std::vector<int>(nf, FeatureTable::kMissing));
  std::vector<std::size_t> correct(nf, 0), scored(nf, 0);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist[i * n + a] < dist[i * n + b]; });
    order.resize(k);
    for (std::size_t f = 0; f < nf; ++f) {
      int ones = 0, zeros = 0, nearest = FeatureTable::kMissing;
      for (std::size_t j : order) {
        const int v = table.values[rows[j]][f];
        if (v == FeatureTable::kMissing) continue;
        if (nearest == FeatureTable::kMissing) nearest = v;
        (v == 1 ? ones : zeros) += 1;
      }
      if (ones + zeros == 0) continue;
      const int pred = ones > zeros ? 1 : zeros > ones ? 0 : nearest;
      r.predictions[i][f] = pred;
      const int truth = table.values[rows[i]][f];
      if (truth == FeatureTable::kMissing) continue;
      ++scored[f];
      if (pred == truth) ++correct[f];
    }
  }
  std::map<std::string, std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t f = 0; f < nf; ++f) {
    if (scored[f] == 0) continue;
    r.feature_accuracy[table.features[f]] = static_cast<double>(correct[f]) / static_cast<double>(scored[f]);
    auto& g = groups[feature_group(table.features[f])];
    g.first += correct[f];
    g.second += scored[f];
  }
  for (const auto& [name, g] : groups) {
    r.group_accuracy[name] = static_cast<double>(g.first) / static_cast<double>(g.second);
    r.group_scored[name] = g.second;
  }
  return r;
}

KnnSummary max_accuracy_over_k(const std::vector<KnnResult>& results) {
  if (results.empty()) throw std::invalid_argument("max_accuracy_over_k: no results");
  KnnSummary s;
  for (const auto& r : results) {
    s.ks.push_back(r.k);
    for (const auto& [f, a] : r.feature_accuracy) {
      auto [it, inserted] = s.feature_accuracy.emplace(f, a);
      if (!inserted) it->second = std::max(it->second, a);
    }
    for (const auto& [g, a] : r.group_accuracy) {
      auto [it, inserted] = s.group_accuracy.emplace(g, a);
      if (!inserted) it->second = std::max(it->second, a);
    }
  }
  return s;
}

nlohmann::json to_json(const KnnResult& r) {
  nlohmann::json preds = nlohmann::json::object();
  for (std::size_t i = 0; i < r.languages.size(); ++i) {
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t f = 0; f < r.features.size(); ++f) {
      const int p = r.predictions[i][f];
      row[r.features[f]] = p == FeatureTable::kMissing ? nlohmann::json(nullptr) : nlohmann::json(p);
    }
    preds[r.languages[i]] = row;
  }
  return {{"k", r.k},
          {"feature_accuracy", r.feature_accuracy},
          {"group_accuracy", r.group_accuracy},
          {"group_scored", r.group_scored},
          {"predictions", preds}};
}

nlohmann::json to_json(const KnnSummary& s) {
  return {{"ks", s.ks}, {"feature_accuracy", s.feature_accuracy}, {"group_accuracy", s.group_accuracy}};
}

}  // namespace langcond

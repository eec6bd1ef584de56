#include "langcond/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "langcond/attention.h"
#include "langcond/ops.h"

namespace langcond {

void LaaBenchConfig::validate() const {
  if (batch == 0 || length == 0 || languages == 0 || repeats == 0) {
    throw std::invalid_argument("bench-laa: batch, length, languages and repeats must be positive");
  }
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw std::invalid_argument("bench-laa: d_model must be a positive multiple of heads");
  }
}

double LaaBenchRow::speedup() const {
  const double naive = naive_forward_ms + naive_backward_ms;
  const double batched = batched_forward_ms + batched_backward_ms;
  return batched > 0.0 ? naive / batched : 0.0;
}

namespace {

using Clock = std::chrono::steady_clock;

Tensor random(Rng& rng, Shape shape, double s) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-s, s);
  return Tensor::from(std::move(shape), std::move(v), true);
}

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

LaaBenchRow bench_laa(const LaaBenchConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t d = config.d_model;
  const double ws = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionParams params{random(rng, {d, d}, ws), random(rng, {d, d}, ws), random(rng, {d, d}, ws),
                         random(rng, {d, d}, ws), config.heads};
  LanguageMatrixStack langs{random(rng, {config.languages, d, d}, 0.5 * ws)};
  const Tensor x = random(rng, {config.batch, config.length, d}, 1.0);
  const Tensor probe = random(rng, {config.batch, config.length, d}, 1.0).detach();
  std::vector<std::size_t> ids(config.batch);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i % config.languages;
  const AttentionInput input{x, x, x, {}, ids};
  std::vector<Tensor> leaves{x, params.wq, params.wk, params.wv, params.wo, langs.w_all};

  LaaBenchRow row;
  row.config = config;
  std::vector<double> nf, bf, nb, bb;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    for (bool naive : {true, false}) {
      for (auto& t : leaves) t.zero_grad();
      auto t0 = Clock::now();
      const Tensor out = naive ? laa_naive(params, langs, input) : laa_batched(params, langs, input);
      (naive ? nf : bf).push_back(ms_since(t0));
      if (!config.backward) continue;
      const Tensor loss = sum(mul(out, probe));
      t0 = Clock::now();
      loss.backward();
      (naive ? nb : bb).push_back(ms_since(t0));
    }
  }
  row.naive_forward_ms = median(nf);
  row.batched_forward_ms = median(bf);
  if (config.backward) {
    row.naive_backward_ms = median(nb);
    row.batched_backward_ms = median(bb);
  }

  // correctness on fresh graphs
  for (auto& t : leaves) t.zero_grad();
  const Tensor a = laa_naive(params, langs, input);
  std::vector<std::vector<double>> grads;
  if (config.backward) {
    sum(mul(a, probe)).backward();
    for (auto& t : leaves) grads.emplace_back(t.grad().begin(), t.grad().end());
    for (auto& t : leaves) t.zero_grad();
  }
  const Tensor b = laa_batched(params, langs, input);
  row.max_abs_diff = diff(a.data(), b.data());
  if (config.backward) {
    sum(mul(b, probe)).backward();
    for (std::size_t i = 0; i < leaves.size(); ++i) row.max_abs_diff = std::max(row.max_abs_diff, diff(grads[i], leaves[i].grad()));
  }
  return row;
}

std::string laa_bench_csv_header() {
  return "batch,length,languages,d_model,heads,repeats,naive_forward_ms,batched_forward_ms,naive_backward_ms,"
         "batched_backward_ms,speedup,max_abs_diff";
}

std::string to_csv_row(const LaaBenchRow& r) {
  std::ostringstream out;
  out.precision(6);
  const auto& c = r.config;
  out << c.batch << ',' << c.length << ',' << c.languages << ',' << c.d_model << ',' << c.heads << ',' << c.repeats << ','
      << r.naive_forward_ms << ',' << r.batched_forward_ms << ',' << r.naive_backward_ms << ',' << r.batched_backward_ms
      << ',' << r.speedup() << ',';
  out.precision(3);
  out << std::scientific << r.max_abs_diff;
  return out.str();
}

std::vector<LaaBenchConfig> parse_laa_grid(const std::string& grid, const LaaBenchConfig& base) {
  std::vector<LaaBenchConfig> out;
  std::istringstream in(grid);
  std::string entry;
  while (std::getline(in, entry, ';')) {
    if (entry.find_first_not_of(" ") == std::string::npos) continue;
    std::istringstream e(entry);
    std::vector<std::size_t> v;
    std::string field;
    while (std::getline(e, field, ',')) {
      try {
        std::size_t used = 0;
        const long long n = std::stoll(field, &used);
        if (n <= 0 || field.find_first_not_of(" ", used) != std::string::npos) throw std::invalid_argument("");
        v.push_back(static_cast<std::size_t>(n));
      } catch (const std::exception&) {
        throw std::invalid_argument("bench-laa grid: bad number '" + field + "' in '" + entry + "'");
      }
    }
    if (v.size() != 5) throw std::invalid_argument("bench-laa grid: '" + entry + "' needs b,n,l,d,h");
    LaaBenchConfig c = base;
    c.batch = v[0];
    c.length = v[1];
    c.languages = v[2];
    c.d_model = v[3];
    c.heads = v[4];
    c.validate();
    out.push_back(c);
  }
  if (out.empty()) throw std::invalid_argument("bench-laa grid: no entries");
  return out;
}

}  // namespace langcond

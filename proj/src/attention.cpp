#include "langcond/attention.h"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "langcond/ops.h"

namespace langcond {

void AttentionParams::validate() const {
  if (!wq.defined() || !wk.defined() || !wv.defined() || !wo.defined()) {
    throw std::invalid_argument("attention: missing projection weights");
  }
  const std::size_t dm = wq.dim(0);
  const Shape square{dm, dm};
  if (wq.shape() != square || wk.shape() != square || wv.shape() != square || wo.shape() != square) {
    throw std::invalid_argument("attention: projections must all be d_model x d_model");
  }
  if (heads == 0 || dm % heads != 0) {
    throw std::invalid_argument("attention: d_model " + std::to_string(dm) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
}

AttentionMask::AttentionMask(std::size_t batch, std::size_t queries, std::size_t keys)
    : batch_(batch), queries_(queries), keys_(keys), blocked_(batch * queries * keys, 0) {}

AttentionMask AttentionMask::key_padding(const std::vector<std::vector<std::uint8_t>>& key_valid,
                                         std::size_t queries) {
  const std::size_t keys = key_valid.empty() ? 0 : key_valid.front().size();
  AttentionMask m(key_valid.size(), queries, keys);
  for (std::size_t b = 0; b < key_valid.size(); ++b) {
    if (key_valid[b].size() != keys) throw std::invalid_argument("key_padding: ragged validity rows");
    for (std::size_t k = 0; k < keys; ++k) {
      if (!key_valid[b][k]) {
        for (std::size_t q = 0; q < queries; ++q) m.block(b, q, k);
      }
    }
  }
  return m;
}

AttentionMask AttentionMask::causal(const std::vector<std::vector<std::uint8_t>>& key_valid) {
  const std::size_t n = key_valid.empty() ? 0 : key_valid.front().size();
  AttentionMask m = key_padding(key_valid, n);
  for (std::size_t b = 0; b < m.batch(); ++b) {
    for (std::size_t q = 0; q < n; ++q) {
      for (std::size_t k = q + 1; k < n; ++k) m.block(b, q, k);
    }
  }
  return m;
}

AttentionMask AttentionMask::select(std::span<const std::size_t> rows) const {
  if (empty()) return {};
  AttentionMask m(rows.size(), queries_, keys_);
  const std::size_t stride = queries_ * keys_;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= batch_) throw std::out_of_range("AttentionMask::select: row out of range");
    std::copy_n(blocked_.begin() + static_cast<std::ptrdiff_t>(rows[i] * stride), stride,
                m.blocked_.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return m;
}

Tensor AttentionMask::additive_bias(bool with_head_axis) const {
  std::vector<double> bias(blocked_.size(), 0.0);
  for (std::size_t b = 0; b < batch_; ++b) {
    for (std::size_t q = 0; q < queries_; ++q) {
      bool any_open = false;
      for (std::size_t k = 0; k < keys_; ++k) {
        const std::size_t i = (b * queries_ + q) * keys_ + k;
        if (blocked_[i]) {
          bias[i] = kMaskSentinel;
        } else {
          any_open = true;
        }
      }
      if (!any_open) {
        throw std::invalid_argument("attention: query row " + std::to_string(q) + " of sample " +
                                    std::to_string(b) + " has every key masked");
      }
    }
  }
  Shape shape = with_head_axis ? Shape{batch_, 1, queries_, keys_} : Shape{batch_, queries_, keys_};
  return Tensor::from(std::move(shape), std::move(bias));
}

namespace {

void check_input(const AttentionParams& params, const AttentionInput& input) {
  params.validate();
  const std::size_t dm = params.d_model();
  for (const Tensor* t : {&input.q, &input.k, &input.v}) {
    if (!t->defined() || t->rank() != 3 || t->dim(2) != dm) {
      throw std::invalid_argument("attention: activations must be [b, n, " + std::to_string(dm) + "]");
    }
  }
  const std::size_t b = input.q.dim(0);
  if (input.k.dim(0) != b || input.v.dim(0) != b || input.k.dim(1) != input.v.dim(1)) {
    throw std::invalid_argument("attention: q/k/v batch or key length mismatch");
  }
  if (!input.mask.empty() &&
      (input.mask.batch() != b || input.mask.queries() != input.q.dim(1) || input.mask.keys() != input.k.dim(1))) {
    throw std::invalid_argument("attention: mask shape does not match activations");
  }
}

void check_languages(const LanguageMatrixStack& langs, const AttentionInput& input, std::size_t d_model) {
  if (!langs.w_all.defined() || langs.w_all.rank() != 3 || langs.d_model() != d_model ||
      langs.w_all.dim(2) != d_model) {
    throw std::invalid_argument("attention: language matrices must be [l, d_model, d_model]");
  }
  if (input.lang_ids.size() != input.q.dim(0)) {
    throw std::invalid_argument("attention: need one language id per sample");
  }
  for (auto id : input.lang_ids) {
    if (id >= langs.languages()) {
      throw std::out_of_range("attention: unknown language id " + std::to_string(id));
    }
  }
}

}  // namespace

Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0), n = x.dim(1), dm = x.dim(2);
  return permute(reshape(x, {b, n, heads, dm / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  const std::size_t b = x.dim(0), h = x.dim(1), n = x.dim(2), d = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {b, n, h * d});
}

Tensor scaled_dot_product(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(-1)));
  Tensor scores = scale(matmul_nt(q, k), inv_sqrt_d);
  if (bias.defined()) scores = add(scores, bias);
  return matmul(softmax_rows(scores), v);
}

Tensor mha(const AttentionParams& params, const AttentionInput& input) {
  check_input(params, input);
  const Tensor bias = input.mask.empty() ? Tensor{} : input.mask.additive_bias(true);
  const Tensor q = split_heads(matmul(input.q, params.wq), params.heads);
  const Tensor k = split_heads(matmul(input.k, params.wk), params.heads);
  const Tensor v = split_heads(matmul(input.v, params.wv), params.heads);
  return matmul(merge_heads(scaled_dot_product(q, k, v, bias)), params.wo);
}

Tensor select_language_matrices(const LanguageMatrixStack& langs, std::span<const std::size_t> lang_ids) {
  for (auto id : lang_ids) {
    if (id >= langs.languages()) {
      throw std::out_of_range("select_language_matrices: id " + std::to_string(id) + " >= " +
                              std::to_string(langs.languages()));
    }
  }
  return index_select(langs.w_all, lang_ids);
}

Tensor laa_naive(const AttentionParams& params, const LanguageMatrixStack& langs, const AttentionInput& input) {
  check_input(params, input);
  const std::size_t dm = params.d_model(), h = params.heads, d = params.head_dim();
  check_languages(langs, input, dm);

  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < input.lang_ids.size(); ++i) groups[input.lang_ids[i]].push_back(i);

  std::vector<Tensor> outputs;
  std::vector<std::size_t> order;  // order[j] = original sample of concatenated row j
  for (const auto& [lang, rows] : groups) {
    const Tensor q_in = index_select(input.q, rows);
    const Tensor k_in = index_select(input.k, rows);
    const Tensor v_in = index_select(input.v, rows);
    const Tensor bias = input.mask.empty() ? Tensor{} : input.mask.select(rows).additive_bias(false);
    const std::size_t lang_row[] = {lang};
    const Tensor w_lang = reshape(index_select(langs.w_all, lang_row), {dm, dm});

    Tensor packed;
    for (std::size_t i = 0; i < h; ++i) {
      const Tensor w_lang_i = slice(w_lang, 1, i * d, d);
      const Tensor qi = matmul(q_in, add(slice(params.wq, 1, i * d, d), w_lang_i));
      const Tensor ki = matmul(k_in, add(slice(params.wk, 1, i * d, d), w_lang_i));
      const Tensor vi = matmul(v_in, add(slice(params.wv, 1, i * d, d), w_lang_i));
      const Tensor zi = scaled_dot_product(qi, ki, vi, bias);
      const Tensor head_out = matmul(zi, add(slice(params.wo, 0, i * d, d), transpose_last2(w_lang_i)));
      packed = packed.defined() ? add(packed, head_out) : head_out;
    }
    outputs.push_back(packed);
    order.insert(order.end(), rows.begin(), rows.end());
  }

  std::vector<std::size_t> restore(order.size());
  for (std::size_t j = 0; j < order.size(); ++j) restore[order[j]] = j;
  return index_select(concat0(outputs), restore);
}

Tensor laa_batched(const AttentionParams& params, const LanguageMatrixStack& langs, const AttentionInput& input,
                   KVCachePolicy cache) {
  check_input(params, input);
  check_languages(langs, input, params.d_model());
  const Tensor w_bar = select_language_matrices(langs, input.lang_ids);

  // X * W_bar per distinct activation tensor when caching.
  std::vector<std::pair<const Node*, Tensor>> projected;
  auto language_term = [&](const Tensor& x) {
    if (cache == KVCachePolicy::reuse_shared_projection) {
      for (const auto& [id, t] : projected) {
        if (id == x.id()) return t;
      }
    }
    Tensor t = matmul(x, w_bar);
    projected.emplace_back(x.id(), t);
    return t;
  };

  const Tensor q = split_heads(add(matmul(input.q, params.wq), language_term(input.q)), params.heads);
  const Tensor k = split_heads(add(matmul(input.k, params.wk), language_term(input.k)), params.heads);
  const Tensor v = split_heads(add(matmul(input.v, params.wv), language_term(input.v)), params.heads);
  const Tensor bias = input.mask.empty() ? Tensor{} : input.mask.additive_bias(true);
  const Tensor z = merge_heads(scaled_dot_product(q, k, v, bias));
  return add(matmul(z, params.wo), matmul(z, transpose_last2(w_bar)));
}

}  // namespace langcond

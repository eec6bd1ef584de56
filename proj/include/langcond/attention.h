#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "langcond/tensor.h"

namespace langcond {

/// Projection weights of one attention block. Every matrix is
/// d_model x d_model; head i owns columns [i*d, (i+1)*d) of wq/wk/wv and rows
/// [i*d, (i+1)*d) of wo.
struct AttentionParams {
  Tensor wq, wk, wv, wo;
  std::size_t heads = 1;

  std::size_t d_model() const { return wq.dim(0); }
  std::size_t head_dim() const { return d_model() / heads; }
  void validate() const;
};

/// One d_model x d_model matrix per language, stored as [l, d_model, d_model].
struct LanguageMatrixStack {
  Tensor w_all;

  std::size_t languages() const { return w_all.dim(0); }
  std::size_t d_model() const { return w_all.dim(1); }
};

/// Per-sample blocked (query, key) pairs. An empty mask blocks nothing.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t batch, std::size_t queries, std::size_t keys);

  /// Blocks padded keys: key_valid[b] has one flag per key position.
  static AttentionMask key_padding(const std::vector<std::vector<std::uint8_t>>& key_valid, std::size_t queries);
  /// Causal plus key padding for decoder self-attention.
  static AttentionMask causal(const std::vector<std::vector<std::uint8_t>>& key_valid);

  bool empty() const { return blocked_.empty(); }
  std::size_t batch() const { return batch_; }
  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }
  bool blocked(std::size_t b, std::size_t q, std::size_t k) const {
    return blocked_[(b * queries_ + q) * keys_ + k] != 0;
  }
  void block(std::size_t b, std::size_t q, std::size_t k) { blocked_[(b * queries_ + q) * keys_ + k] = 1; }

  /// Rows of the batch axis, in the given order.
  AttentionMask select(std::span<const std::size_t> rows) const;
  /// Additive bias [b, 1, nq, nk] (0 or -1e9); throws on a fully blocked query row.
  Tensor additive_bias(bool with_head_axis) const;

 private:
  std::size_t batch_ = 0, queries_ = 0, keys_ = 0;
  std::vector<std::uint8_t> blocked_;
};

inline constexpr double kMaskSentinel = -1e9;

struct AttentionInput {
  Tensor q, k, v;  // [b, n, d_model]; k and v share their length
  AttentionMask mask;
  std::vector<std::size_t> lang_ids;
};

enum class KVCachePolicy {
  reuse_shared_projection,  // X * W_bar computed once when q/k/v alias
  recompute,
};

/// Standard multi-head attention: concat_i softmax(q_i k_i^T / sqrt(d)) v_i, times wo.
Tensor mha(const AttentionParams& params, const AttentionInput& input);

/// Language-aware attention computed the direct way: the minibatch is split by
/// language, each group runs per-head projections with W_i + W_i^lang and the
/// output packs heads through W_i^O + (W_i^lang)^T, then samples are put back in
/// their original order.
Tensor laa_naive(const AttentionParams& params, const LanguageMatrixStack& langs, const AttentionInput& input);

/// Language-aware attention with the per-sample matrices gathered into one
/// [b, d_model, d_model] stack, so the whole minibatch runs at once:
///   q = Q Wq + Q W_bar,  k = K Wk + K W_bar,  v = V Wv + V W_bar,
///   Z = z Wo + z W_bar^T.
Tensor laa_batched(const AttentionParams& params, const LanguageMatrixStack& langs, const AttentionInput& input,
                   KVCachePolicy cache = KVCachePolicy::reuse_shared_projection);

/// W_bar = W_all[lang_ids], shape [b, d_model, d_model].
Tensor select_language_matrices(const LanguageMatrixStack& langs, std::span<const std::size_t> lang_ids);

/// [b, n, h*d] -> [b, h, n, d] and back.
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x);

/// softmax(q k^T / sqrt(d) + bias) v over the trailing two axes.
Tensor scaled_dot_product(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias);

}  // namespace langcond

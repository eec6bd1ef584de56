#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "langcond/tensor.h"

namespace langcond {

// Elementwise ops broadcast numpy-style (shapes aligned from the right).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);

/// a[..., m, k] x b[..., k, n] -> [..., m, n]; leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a @ b^T over the last two axes, with broadcast leading dims.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, Shape shape);

/// Softmax over the last axis, max-subtracted.
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Rows of the leading axis: result[i] = x[ids[i]]. Backward scatter-adds, so
/// duplicate ids accumulate.
Tensor index_select(const Tensor& x, std::span<const std::size_t> ids);
/// Embedding lookup: table[V, d] with int ids -> [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// Concatenate along the leading axis.
Tensor concat0(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

class Rng;
/// Inverted dropout. Identity (no draws) when rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace langcond

#include "langcond/ops.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace langcond {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

// Offsets of each broadcast output element into the two operands.
struct BroadcastPlan {
  Shape out;
  enum class Kind { same, suffix, general } kind = Kind::general;
  std::size_t b_size = 0;
  std::vector<std::size_t> a_off, b_off;
};

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.kind = BroadcastPlan::Kind::same;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape ap(r, 1), bp(r, 1);
  std::copy(a.begin(), a.end(), ap.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), bp.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  p.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (ap[i] != bp[i] && ap[i] != 1 && bp[i] != 1) shape_error(op, a, b);
    p.out[i] = std::max(ap[i], bp[i]);
  }
  // b is a trailing block of a (bias-style add).
  if (p.out == a && b.size() <= a.size() &&
      std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
    p.kind = BroadcastPlan::Kind::suffix;
    p.b_size = numel(b);
    return p;
  }
  auto strides = [&](const Shape& s) {
    std::vector<std::size_t> st(r, 0);
    std::size_t acc = 1;
    for (std::size_t i = r; i-- > 0;) {
      st[i] = s[i] == 1 ? 0 : acc;
      acc *= s[i];
    }
    return st;
  };
  const auto sa = strides(ap), sb = strides(bp);
  const std::size_t n = numel(p.out);
  p.a_off.resize(n);
  p.b_off.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t k = 0; k < n; ++k) {
    p.a_off[k] = oa;
    p.b_off[k] = ob;
    for (std::size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < p.out[ax]) {
        oa += sa[ax];
        ob += sb[ax];
        break;
      }
      oa -= sa[ax] * (p.out[ax] - 1);
      ob -= sb[ax] * (p.out[ax] - 1);
      idx[ax] = 0;
    }
  }
  return p;
}

template <class F>
std::vector<double> apply_binary(const BroadcastPlan& p, std::span<const double> a, std::span<const double> b,
                                 F f) {
  const std::size_t n = numel(p.out);
  std::vector<double> out(n);
  switch (p.kind) {
    case BroadcastPlan::Kind::same:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
      break;
    case BroadcastPlan::Kind::suffix:
      for (std::size_t o = 0; o < n; o += p.b_size) {
        for (std::size_t j = 0; j < p.b_size; ++j) out[o + j] = f(a[o + j], b[j]);
      }
      break;
    case BroadcastPlan::Kind::general:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(a[p.a_off[i]], b[p.b_off[i]]);
      break;
  }
  return out;
}

inline std::size_t a_index(const BroadcastPlan& p, std::size_t i) {
  return p.kind == BroadcastPlan::Kind::general ? p.a_off[i] : i;
}
inline std::size_t b_index(const BroadcastPlan& p, std::size_t i) {
  switch (p.kind) {
    case BroadcastPlan::Kind::same: return i;
    case BroadcastPlan::Kind::suffix: return i % p.b_size;
    default: return p.b_off[i];
  }
}

// ga[ia] += da(i, ia, ib) and gb[ib] += db(i, ia, ib) over every output element i.
template <class DA, class DB>
void backward_binary(const BroadcastPlan& p, std::size_t n, std::span<double> ga, std::span<double> gb, DA da,
                     DB db) {
  switch (p.kind) {
    case BroadcastPlan::Kind::same:
      if (!ga.empty()) for (std::size_t i = 0; i < n; ++i) ga[i] += da(i, i, i);
      if (!gb.empty()) for (std::size_t i = 0; i < n; ++i) gb[i] += db(i, i, i);
      break;
    case BroadcastPlan::Kind::suffix:
      if (!ga.empty()) for (std::size_t o = 0; o < n; o += p.b_size) {
          for (std::size_t j = 0; j < p.b_size; ++j) ga[o + j] += da(o + j, o + j, j);
        }
      if (!gb.empty()) for (std::size_t o = 0; o < n; o += p.b_size) {
          for (std::size_t j = 0; j < p.b_size; ++j) gb[j] += db(o + j, o + j, j);
        }
      break;
    case BroadcastPlan::Kind::general:
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = p.a_off[i], ib = p.b_off[i];
        if (!ga.empty()) ga[ia] += da(i, ia, ib);
        if (!gb.empty()) gb[ib] += db(i, ia, ib);
      }
      break;
  }
}

// Visits out[k] <-> in[off(k)] for a permutation given as output shape and
// input strides per output axis; the last axis is the inner loop.
template <class F>
void for_each_strided(const Shape& out_shape, const std::vector<std::size_t>& st, F f) {
  const std::size_t r = out_shape.size();
  const std::size_t n = numel(out_shape);
  if (n == 0) return;
  if (r == 0) {
    f(0, 0);
    return;
  }
  const std::size_t inner = out_shape[r - 1], inner_st = st[r - 1];
  std::vector<std::size_t> idx(r - 1, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; k += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(k + j, off + j * inner_st);
    for (std::size_t ax = r - 1; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        off += st[ax];
        break;
      }
      off -= st[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
}

// One GEMM per (broadcast) batch entry; b is [.., n, k] when trans_b.
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool trans_b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const char* op = trans_b ? "matmul_nt" : "matmul";
  if (as.size() < 2 || bs.size() < 2) shape_error(op, as, bs);
  const std::size_t m = as[as.size() - 2], k = as.back();
  const std::size_t k2 = trans_b ? bs.back() : bs[bs.size() - 2];
  const std::size_t n = trans_b ? bs[bs.size() - 2] : bs.back();
  if (k != k2) shape_error(op, as, bs);
  const Shape a_batch(as.begin(), as.end() - 2), b_batch(bs.begin(), bs.end() - 2);
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(op, a_batch, b_batch));
  const std::size_t batches = numel(plan->out);
  Shape out_shape = plan->out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  // b block viewed as stored: [k, n], or [n, k] when transposed.
  const Eigen::Index br = trans_b ? N : K, bc = trans_b ? K : N;
  std::vector<double> out(batches * m * n);
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < batches; ++i) {
    ConstMap ai(ad.data() + a_index(*plan, i) * m * k, M, K);
    ConstMap bi(bd.data() + b_index(*plan, i) * k * n, br, bc);
    MutMap oi(out.data() + i * m * n, M, N);
    if (trans_b) {
      oi.noalias() = ai * bi.transpose();
    } else {
      oi.noalias() = ai * bi;
    }
  }
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [a, b, plan, batches, m, k, n, M, K, N, br, bc, trans_b](const Node& self) {
                       auto ga = grad_sink(a), gb = grad_sink(b);
                       const auto ad = a.data(), bd = b.data();
                       for (std::size_t i = 0; i < batches; ++i) {
                         ConstMap g(self.grad.data() + i * m * n, M, N);
                         const std::size_t ia = a_index(*plan, i) * m * k, ib = b_index(*plan, i) * k * n;
                         ConstMap bi(bd.data() + ib, br, bc);
                         ConstMap ai(ad.data() + ia, M, K);
                         if (!ga.empty()) {
                           MutMap gai(ga.data() + ia, M, K);
                           if (trans_b) {
                             gai.noalias() += g * bi;
                           } else {
                             gai.noalias() += g * bi.transpose();
                           }
                         }
                         if (!gb.empty()) {
                           MutMap gbi(gb.data() + ib, br, bc);
                           if (trans_b) {
                             gbi.noalias() += g.transpose() * ai;
                           } else {
                             gbi.noalias() += ai.transpose() * g;
                           }
                         }
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast("add", a.shape(), b.shape()));
  auto out = apply_binary(*plan, a.data(), b.data(), [](double x, double y) { return x + y; });
  return make_result(plan->out, std::move(out), {a, b}, [a, b, plan](const Node& self) {
    const double* g = self.grad.data();
    auto pass = [g](std::size_t i, std::size_t, std::size_t) { return g[i]; };
    backward_binary(*plan, self.grad.size(), grad_sink(a), grad_sink(b), pass, pass);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast("sub", a.shape(), b.shape()));
  auto out = apply_binary(*plan, a.data(), b.data(), [](double x, double y) { return x - y; });
  return make_result(plan->out, std::move(out), {a, b}, [a, b, plan](const Node& self) {
    const double* g = self.grad.data();
    backward_binary(
        *plan, self.grad.size(), grad_sink(a), grad_sink(b),
        [g](std::size_t i, std::size_t, std::size_t) { return g[i]; },
        [g](std::size_t i, std::size_t, std::size_t) { return -g[i]; });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast("mul", a.shape(), b.shape()));
  auto out = apply_binary(*plan, a.data(), b.data(), [](double x, double y) { return x * y; });
  return make_result(plan->out, std::move(out), {a, b}, [a, b, plan](const Node& self) {
    const double* g = self.grad.data();
    const double* av = a.data().data();
    const double* bv = b.data().data();
    backward_binary(
        *plan, self.grad.size(), grad_sink(a), grad_sink(b),
        [g, bv](std::size_t i, std::size_t, std::size_t ib) { return g[i] * bv[ib]; },
        [g, av](std::size_t i, std::size_t ia, std::size_t) { return g[i] * av[ia]; });
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x}, [x, factor](const Node& self) {
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [x](const Node& self) {
    auto gx = grad_sink(x);
    const auto xv = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) shape_error("matmul", as, bs);
  const std::size_t m = as[as.size() - 2], k = as.back();
  const std::size_t k2 = bs[bs.size() - 2], n = bs.back();
  if (k != k2) shape_error("matmul", as, bs);

  const Shape a_batch(as.begin(), as.end() - 2), b_batch(bs.begin(), bs.end() - 2);

  // Common case: right operand is a plain matrix, fold all leading dims into rows.
  if (b_batch.empty()) {
    const std::size_t rows = numel(a_batch) * m;
    Shape out_shape = as;
    out_shape.back() = n;
    std::vector<double> out(rows * n);
    MutMap(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n)).noalias() =
        ConstMap(a.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k)) *
        ConstMap(b.data().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    return make_result(std::move(out_shape), std::move(out), {a, b}, [a, b, rows, k, n](const Node& self) {
      ConstMap g(self.grad.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
      if (auto ga = grad_sink(a); !ga.empty()) {
        MutMap(ga.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k)).noalias() +=
            g * ConstMap(b.data().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)).transpose();
      }
      if (auto gb = grad_sink(b); !gb.empty()) {
        MutMap(gb.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)).noalias() +=
            ConstMap(a.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k)).transpose() * g;
      }
    });
  }

  return batched_matmul(a, b, false);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) { return batched_matmul(a, b, true); }

Tensor transpose_last2(const Tensor& x) {
  const auto r = x.rank();
  if (r < 2) throw std::invalid_argument("transpose_last2: rank < 2");
  std::vector<std::size_t> axes(r);
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, axes);
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& s = x.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) throw std::invalid_argument("permute: axes rank mismatch");
  std::vector<bool> used(r, false);
  for (auto a : axes) {
    if (a >= r || used[a]) throw std::invalid_argument("permute: invalid axes");
    used[a] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out_shape(r);
  std::vector<std::size_t> st(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = s[axes[i]];
    st[i] = in_strides[axes[i]];
  }
  std::vector<double> out(numel(s));
  const double* xv = x.data().data();
  for_each_strided(out_shape, st, [&](std::size_t k, std::size_t off) { out[k] = xv[off]; });
  Shape grad_shape = out_shape;
  return make_result(std::move(out_shape), std::move(out), {x},
                     [x, grad_shape = std::move(grad_shape), st = std::move(st)](const Node& self) {
                       auto gx = grad_sink(x);
                       const double* g = self.grad.data();
                       for_each_strided(grad_shape, st, [&](std::size_t k, std::size_t off) { gx[off] += g[k]; });
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) shape_error("reshape", x.shape(), shape);
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [x](const Node& self) {
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() == 0) throw std::invalid_argument("softmax_rows: scalar input");
  const std::size_t n = x.dim(-1);
  const std::size_t rows = n ? x.size() / n : 0;
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  return make_result(x.shape(), std::move(out), {x}, [x, n, rows](const Node& self) {
    auto gx = grad_sink(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = x.dim(-1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) shape_error("layer_norm", x.shape(), gamma.shape());
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (in[j] - mu) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, n, rows](const Node& self) {
                       auto gx = grad_sink(x), gg = grad_sink(gamma), gb = grad_sink(beta);
                       const auto gv = gamma.data();
                       std::vector<double> dh(n);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* g = self.grad.data() + r * n;
                         const double* h = xhat->data() + r * n;
                         double sum_dh = 0.0, sum_dh_h = 0.0;
                         for (std::size_t j = 0; j < n; ++j) {
                           if (!gg.empty()) gg[j] += g[j] * h[j];
                           if (!gb.empty()) gb[j] += g[j];
                           dh[j] = g[j] * gv[j];
                           sum_dh += dh[j];
                           sum_dh_h += dh[j] * h[j];
                         }
                         if (gx.empty()) continue;
                         const double is = (*inv_std)[r];
                         const double inv_n = 1.0 / static_cast<double>(n);
                         for (std::size_t j = 0; j < n; ++j) {
                           gx[r * n + j] += is * (dh[j] - inv_n * sum_dh - h[j] * inv_n * sum_dh_h);
                         }
                       }
                     });
}

Tensor index_select(const Tensor& x, std::span<const std::size_t> ids) {
  if (x.rank() == 0) throw std::invalid_argument("index_select: scalar input");
  const std::size_t rows = x.dim(0);
  const std::size_t width = rows ? x.size() / rows : 0;
  for (auto id : ids) {
    if (id >= rows) {
      throw std::out_of_range("index_select: id " + std::to_string(id) + " out of range for " + shape_str(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = ids.size();
  std::vector<double> out(ids.size() * width);
  const auto xv = x.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  auto id_copy = std::make_shared<std::vector<std::size_t>>(ids.begin(), ids.end());
  return make_result(std::move(out_shape), std::move(out), {x}, [x, id_copy, width](const Node& self) {
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < id_copy->size(); ++i) {
      double* dst = gx.data() + (*id_copy)[i] * width;
      const double* src = self.grad.data() + i * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0) throw std::out_of_range("embedding: negative token id");
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return index_select(table, rows);
}

Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat0: no inputs");
  Shape out_shape = parts.front().shape();
  if (out_shape.empty()) throw std::invalid_argument("concat0: scalar input");
  out_shape[0] = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != out_shape.size() || !std::equal(s.begin() + 1, s.end(), out_shape.begin() + 1)) {
      shape_error("concat0", parts.front().shape(), s);
    }
    out_shape[0] += s[0];
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_result(std::move(out_shape), std::move(out), parts, [parts](const Node& self) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      auto gp = grad_sink(p);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[off + i];
      off += p.size();
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& s = x.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    throw std::out_of_range("slice: [" + std::to_string(start) + "," + std::to_string(start + length) +
                            ") on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<double> out(outer * length * inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * s[axis] + start) * inner), length * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  }
  const std::size_t full = s[axis];
  return make_result(std::move(out_shape), std::move(out), {x},
                     [x, outer, inner, full, start, length](const Node& self) {
                       auto gx = grad_sink(x);
                       for (std::size_t o = 0; o < outer; ++o) {
                         double* dst = gx.data() + (o * full + start) * inner;
                         const double* src = self.grad.data() + o * length * inner;
                         for (std::size_t j = 0; j < length * inner; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (auto& m : *mask) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (*mask)[i];
  return make_result(x.shape(), std::move(out), {x}, [x, mask](const Node& self) {
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total}, {x}, [x](const Node& self) {
    auto gx = grad_sink(x);
    for (auto& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

}  // namespace langcond

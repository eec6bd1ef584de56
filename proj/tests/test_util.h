#pragma once

// Test-only helpers: random tensors and a central finite-difference oracle that
// touches nothing but forward values.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "langcond/tensor.h"

namespace langcond::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = false, double scale = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  return max_abs_diff(a.data(), b.data());
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "<param index>[<element>] analytic numeric"
  std::size_t checked = 0;
};

/// Relative error with a floor on the denominator so entries whose true
/// gradient is ~0 are judged on absolute error instead.
inline double rel_err(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward() against central differences for every element of
/// every tensor in `params`. `loss_fn` must rebuild the graph on each call.
inline GradCheckResult gradcheck(std::vector<Tensor> params, const std::function<Tensor()>& loss_fn,
                                 double h = 1e-6, double floor = 1e-6) {
  for (auto& p : params) p.zero_grad();
  const Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.size(), 0.0);
    }
  }
  GradCheckResult r;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double up, down;
      {
        NoGradGuard guard;
        values[i] = saved + h;
        up = loss_fn().item();
        values[i] = saved - h;
        down = loss_fn().item();
      }
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double e = rel_err(analytic[pi][i], numeric, floor);
      ++r.checked;
      if (e > r.max_rel_err) {
        r.max_rel_err = e;
        r.worst = std::to_string(pi) + "[" + std::to_string(i) + "] " + fmt(analytic[pi][i]) + " " +
                  fmt(numeric);
      }
    }
  }
  return r;
}

}  // namespace langcond::testing

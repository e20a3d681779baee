#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "anonact/autograd.hpp"
#include "anonact/rng.hpp"

namespace anonact::testutil {

// Central finite differences of a scalar-valued graph builder against the
// analytic gradient at leaf x. f() must rebuild the graph from the current
// value of x and be deterministic.
inline double grad_check_max_rel(Var& x, const std::function<Var()>& f, std::vector<std::int64_t> indices = {},
                                 double eps = 1e-4) {
  x.zero_grad();
  Var loss = f();
  backward(loss);
  Tensor analytic = x.has_grad() ? x.grad() : Tensor(x.value().shape());

  if (indices.empty())
    for (std::int64_t i = 0; i < x.value().numel(); ++i) indices.push_back(i);

  double max_rel = 0.0;
  for (std::int64_t i : indices) {
    const double orig = x.value()[i];
    x.mutable_value()[i] = orig + eps;
    const double up = f().value().item();
    x.mutable_value()[i] = orig - eps;
    const double dn = f().value().item();
    x.mutable_value()[i] = orig;
    const double fd = (up - dn) / (2.0 * eps);
    const double an = analytic[i];
    const double denom = std::max(std::fabs(fd), std::fabs(an));
    double rel;
    if (denom < 1e-7)
      rel = std::fabs(fd - an) < 1e-7 ? 0.0 : 1.0;
    else
      rel = std::fabs(fd - an) / denom;
    max_rel = std::max(max_rel, rel);
  }
  x.zero_grad();
  return max_rel;
}

inline std::vector<std::int64_t> sample_indices(std::int64_t n, int count, Rng& rng) {
  std::vector<std::int64_t> idx;
  if (n <= count) {
    for (std::int64_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
  }
  for (int i = 0; i < count; ++i) idx.push_back(rng.randint(n));
  return idx;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace anonact::testutil

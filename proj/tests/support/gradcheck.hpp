#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tripcast/core/ops.hpp"
#include "tripcast/core/rng.hpp"
#include "tripcast/core/tensor.hpp"

namespace tripcast::testing {

template <typename T>
std::vector<T> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return v;
}

template <typename T>
Tensor<T> random_param(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const auto n = numel(shape);
  return Tensor<T>::parameter(std::move(shape), random_values<T>(rng, n, lo, hi));
}

/// Reduces a tensor to a scalar with fixed random weights so every output
/// element contributes a distinct amount to the loss.
template <typename T>
Tensor<T> project(const Tensor<T>& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor<T> w(out.shape(), random_values<T>(rng, out.size(), 0.5, 1.5));
  return sum(mul(out, w));
}

/// Norm-wise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
/// per leaf, maximised over leaves. Numeric gradients are central differences.
template <typename T>
double gradcheck(std::vector<Tensor<T>> leaves, const std::function<Tensor<T>()>& loss_fn,
                 double h, double floor = 1e-8) {
  for (auto& l : leaves) l.zero_grad();
  backward(loss_fn());
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const std::vector<T> analytic = leaf.grad();
    auto w = leaf.mutable_values();
    double diff2 = 0, an2 = 0, nu2 = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T orig = w[i];
      double fp, fm;
      {
        NoGradGuard guard;
        w[i] = static_cast<T>(orig + h);
        fp = static_cast<double>(loss_fn().item());
        w[i] = static_cast<T>(orig - h);
        fm = static_cast<double>(loss_fn().item());
      }
      w[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double a = static_cast<double>(analytic[i]);
      diff2 += (a - numeric) * (a - numeric);
      an2 += a * a;
      nu2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(an2), std::sqrt(nu2), floor});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

/// Central-difference gradient of loss_fn with respect to every element of
/// `leaf`.
template <typename T>
std::vector<double> numeric_gradient(Tensor<T> leaf, const std::function<Tensor<T>()>& loss_fn,
                                     double h) {
  NoGradGuard guard;
  auto w = leaf.mutable_values();
  std::vector<double> g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const T orig = w[i];
    w[i] = static_cast<T>(orig + h);
    const double fp = static_cast<double>(loss_fn().item());
    w[i] = static_cast<T>(orig - h);
    const double fm = static_cast<double>(loss_fn().item());
    w[i] = orig;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

}  // namespace tripcast::testing

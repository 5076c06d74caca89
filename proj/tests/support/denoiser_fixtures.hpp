#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"
#include "tripcast/core/rng.hpp"
#include "tripcast/model/denoiser.hpp"

// Shared by the denoiser unit tests and the acceptance gate.
namespace tripcast::testing {

inline DenoiserConfig tiny_config(Topology topology = Topology::c) {
  DenoiserConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.ff_dim = 12;
  c.step_embed_dim = 6;
  c.n_blocks = 3;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.num_features = 5;
  c.diffusion_steps = 4;
  c.capacity = 6;
  c.target_capacity = 3;
  c.topology = topology;
  return c;
}

inline IcuSample random_sample(Rng& rng, const DenoiserConfig& c, std::size_t n_cond, std::size_t n_target) {
  IcuSample s;
  s.subject_id = "P1";
  s.stay_id = "S" + std::to_string(rng.below(1000000));
  s.conditional.assign(c.capacity, Triplet{});
  s.target.assign(c.target_capacity, Triplet{});
  float t = 0.0f;
  for (std::size_t i = 0; i < n_cond; ++i) {
    t += static_cast<float>(rng.uniform(0.0, 3.0));
    s.conditional[i] = {static_cast<std::int32_t>(1 + rng.below(c.num_features)), t,
                        static_cast<float>(rng.normal()), 1};
  }
  t = 30.0f;
  for (std::size_t j = 0; j < n_target; ++j) {
    t += static_cast<float>(rng.uniform(0.0, 2.0));
    s.target[j] = {static_cast<std::int32_t>(1 + rng.below(std::min<std::size_t>(3, c.num_features))),
                   t, static_cast<float>(rng.normal()), 1};
  }
  return s;
}

template <typename T>
Tensor<T> noisy_values(Rng& rng, const DenoiserBatch& b) {
  std::vector<T> v(b.batch * b.target_len);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return Tensor<T>({b.batch, b.target_len}, std::move(v));
}

inline std::vector<int> random_steps(Rng& rng, std::size_t n, std::size_t T) {
  std::vector<int> s(n);
  for (auto& x : s) x = static_cast<int>(1 + rng.below(T));
  return s;
}

struct GradReport {
  double worst = 0.0;
  std::string name;
};

// Norm-wise relative error per parameter group. Groups whose true gradient
// vanishes (the key biases, by softmax shift invariance) are judged against
// 1e-4 of the overall gradient norm instead of their own.
template <typename A, typename N>
GradReport compare_gradients(Denoiser<A>& analytic_model, Denoiser<N>& numeric_model,
                             const std::function<Tensor<A>()>& analytic_loss,
                             const std::function<Tensor<N>()>& numeric_loss, double h) {
  for (auto& p : analytic_model.parameters()) p.tensor.zero_grad();
  backward(analytic_loss());
  std::vector<std::vector<double>> an, nu;
  double global2 = 0.0;
  for (std::size_t g = 0; g < analytic_model.parameters().size(); ++g) {
    const auto a = analytic_model.parameters()[g].tensor.grad();
    an.emplace_back(a.begin(), a.end());
    nu.push_back(numeric_gradient<N>(numeric_model.parameters()[g].tensor, numeric_loss, h));
    for (double x : nu.back()) global2 += x * x;
  }
  const double floor = 1e-4 * std::sqrt(global2);
  GradReport r;
  for (std::size_t g = 0; g < an.size(); ++g) {
    double d2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < an[g].size(); ++i) {
      d2 += (an[g][i] - nu[g][i]) * (an[g][i] - nu[g][i]);
      a2 += an[g][i] * an[g][i];
      n2 += nu[g][i] * nu[g][i];
    }
    const double err = std::sqrt(d2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
    if (err > r.worst) {
      r.worst = err;
      r.name = analytic_model.parameters()[g].name;
    }
  }
  return r;
}

}  // namespace tripcast::testing

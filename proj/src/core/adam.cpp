#include "tripcast/core/adam.hpp"

#include <cmath>

#include "tripcast/core/error.hpp"

namespace tripcast {

AdamState make_adam_state(const AdamOptions& options) {
  if (!(options.lr > 0)) throw ConfigError("adam: learning rate must be positive");
  if (!(options.beta1 >= 0 && options.beta1 < 1 && options.beta2 >= 0 && options.beta2 < 1)) {
    throw ConfigError("adam: moment decay rates must lie in [0, 1)");
  }
  AdamState state;
  state.options = options;
  return state;
}

template <typename T>
void adam_step(std::span<NamedParameter<T>> params, AdamState& state) {
  if (!(state.options.lr > 0)) throw ConfigError("adam: learning rate must be positive");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), 0.0);
      state.v.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (state.m[i].size() != p.tensor.size()) {
      throw ShapeError("adam: moment size mismatch for '" + p.name + "'");
    }
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.node()->grad) {
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in '" + p.name + "'");
    }
  }

  const auto& o = state.options;
  ++state.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.tensor.has_grad()) {
      // A zero gradient still decays the moments.
      auto& m = state.m[i];
      auto& v = state.v[i];
      auto w = p.tensor.mutable_values();
      for (std::size_t j = 0; j < m.size(); ++j) {
        m[j] *= o.beta1;
        v[j] *= o.beta2;
        if (m[j] != 0.0) w[j] -= static_cast<T>(o.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + o.eps));
      }
      continue;
    }
    const auto& g = p.tensor.node()->grad;
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto w = p.tensor.mutable_values();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = g[j];
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * gj;
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= static_cast<T>(o.lr * mhat / (std::sqrt(vhat) + o.eps));
    }
  }
}

template void adam_step(std::span<NamedParameter<float>>, AdamState&);
template void adam_step(std::span<NamedParameter<double>>, AdamState&);

}  // namespace tripcast

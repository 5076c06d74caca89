#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tripcast/core/tensor.hpp"

namespace tripcast {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates for each parameter, in parameter order.
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

AdamState make_adam_state(const AdamOptions& options);

/// One bias-corrected ADAM update using each parameter's accumulated
/// gradient. If any gradient holds NaN/Inf nothing is modified and a
/// NumericError naming the parameter is thrown.
template <typename T>
void adam_step(std::span<NamedParameter<T>> params, AdamState& state);

extern template void adam_step(std::span<NamedParameter<float>>, AdamState&);
extern template void adam_step(std::span<NamedParameter<double>>, AdamState&);

}  // namespace tripcast

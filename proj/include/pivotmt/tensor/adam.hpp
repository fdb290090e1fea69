#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pivotmt/error.hpp"
#include "pivotmt/tensor/tensor.hpp"

namespace pivotmt::tensor {

template <typename T>
struct AdamState {
  std::int64_t step_count = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Indexed like the parameter list passed to adam_step; empty until the
  // parameter's first unfrozen update.
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

template <typename T>
struct AdamParam {
  Tensor<T>* value;
  const Tensor<T>* grad;
  bool frozen = false;
};

// One bias-corrected Adam update. Frozen parameters keep their values and
// moments untouched. The step counter advances once per call.
template <typename T>
void adam_step(std::span<const AdamParam<T>> params, AdamState<T>& state) {
  if (!(state.learning_rate > 0.0)) {
    throw ConfigError("adam_step: learning rate must be positive");
  }
  if (state.first_moment.size() < params.size()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (p.frozen) continue;
    auto& value = *p.value;
    const auto& grad = *p.grad;
    if (grad.shape() != value.shape()) {
      throw ShapeError("adam_step: gradient " + shape_str(grad.shape()) + " does not match parameter " +
                       shape_str(value.shape()));
    }
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.empty() && !value.empty()) {
      m = Tensor<T>::zeros(value.shape());
      v = Tensor<T>::zeros(value.shape());
    }
    if (m.shape() != value.shape()) {
      throw ShapeError("adam_step: moment buffer " + shape_str(m.shape()) + " does not match parameter " +
                       shape_str(value.shape()));
    }
    const T b1 = static_cast<T>(state.beta1);
    const T b2 = static_cast<T>(state.beta2);
    const T step = static_cast<T>(state.learning_rate / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(state.epsilon);
    for (std::size_t j = 0; j < value.size(); ++j) {
      const T g = grad[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      value[j] -= step * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

}  // namespace pivotmt::tensor

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tegaarec/tensor.hpp"

namespace tegaarec {

// Adam with bias correction. Moment buffers are zero-initialized and the
// step counter increases by one per update.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState for_params(std::span<const Tensor> params, double beta1 = 0.9,
                              double beta2 = 0.999, double epsilon = 1e-8) {
    AdamState st;
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.epsilon = epsilon;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const Tensor& p : params) {
      st.m.emplace_back(p.numel(), 0.0);
      st.v.emplace_back(p.numel(), 0.0);
    }
    return st;
  }
};

// Reads gradients from the parameters' grad buffers and updates values in place.
inline void adam_step(std::span<Tensor> params, AdamState& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam state tracks " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (state.m[p].size() != params[p].numel()) {
      throw DimensionError("adam moment size " + std::to_string(state.m[p].size()) +
                           " does not match parameter " + shape_str(params[p].shape()));
    }
    auto g = params[p].grad();
    auto vals = params[p].values_mut();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      vals[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

// Linear ramp to peak_lr over warmup_steps optimizer steps, constant after.
inline double warmup_lr(std::int64_t step, std::int64_t warmup_steps, double peak_lr) {
  if (warmup_steps < 1) {
    throw ConfigError("warmup_steps must be >= 1, got " + std::to_string(warmup_steps));
  }
  if (step < 1) throw ContractError("warmup_lr step must be >= 1, got " + std::to_string(step));
  if (step >= warmup_steps) return peak_lr;
  return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

}  // namespace tegaarec

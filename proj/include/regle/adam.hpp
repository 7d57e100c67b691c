#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "regle/errors.hpp"
#include "regle/tensor.hpp"

namespace regle {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

/// First/second moment accumulators mirroring a parameter list.
template <class T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;
};

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

/// One bias-corrected Adam update, in place. Throws TrainingError naming the
/// first parameter whose gradient is non-finite, before touching any state.
template <class T>
void adam_step(std::vector<NamedTensor<T>>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state) {
  if (grads.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape() || state.m[i].shape() != params[i].value.shape()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + params[i].name);
    }
    bool finite = true;
    for (T g : grads[i].data()) finite &= std::isfinite(g);
    if (!finite) throw TrainingError("non-finite gradient in parameter " + params[i].name);
  }

  state.t += 1;
  const AdamConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T step = static_cast<T>(c.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(c.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i].value.raw();
    T* m = state.m[i].raw();
    T* v = state.v[i].raw();
    const T* g = grads[i].raw();
    for (std::size_t j = 0, n = params[i].value.size(); j < n; ++j) {
      m[j] = b1 * m[j] + (T{1} - b1) * g[j];
      v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
      p[j] -= step * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

}  // namespace regle

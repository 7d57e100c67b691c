#pragma once

#include <optional>
#include <span>
#include <vector>

#include "regle/autograd.hpp"
#include "regle/models/architecture.hpp"
#include "regle/ops.hpp"
#include "regle/rng.hpp"

namespace regle::models {

/// Places every tensor of a parameter set on the tape as a non-owning leaf.
template <class T>
std::vector<Var> bind_params(Tape<T>& tape, const ParamSet<T>& params, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.view(p.value, requires_grad, p.name));
  return vars;
}

/// Gradients of the bound tensors after backward(), aligned with the set.
/// Moves them out of the tape.
template <class T>
std::vector<Tensor<T>> grads_of(Tape<T>& tape, std::span<const Var> vars) {
  std::vector<Tensor<T>> out;
  out.reserve(vars.size());
  for (Var v : vars) out.push_back(tape.take_grad(v));
  return out;
}

template <class T>
Tensor<T> standard_normal(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor<T> t(Shape{rows, cols});
  for (T& v : t.data()) v = static_cast<T>(rng.normal());
  return t;
}

struct EncoderOutput {
  Var mu;
  std::optional<Var> logvar;  // absent for AE
  Var z;
};

namespace detail {

struct Cursor {
  std::span<const Var> vars;
  std::size_t next_index = 0;
  Var next() { return vars[next_index++]; }
};

}  // namespace detail

/// x[B,1000,2] -> (mu, logvar, z). For variational models z = mu + exp(logvar/2) * eps;
/// with no noise supplied (or for AE) z = mu.
template <class T>
EncoderOutput encode(Tape<T>& tape, Var x, std::span<const Var> params, bool variational,
                     const Tensor<T>* eps = nullptr) {
  detail::Cursor p{params};
  Var h = x;
  for (int i = 0; i < 3; ++i) {
    Var k = p.next(), b = p.next();
    h = maxpool1d(tape, relu(tape, bias_add(tape, conv1d(tape, h, k), b)));
  }
  const Shape& s = tape.shape(h);
  h = reshape(tape, h, Shape{s[0], s[1] * s[2]});
  for (int i = 0; i < 3; ++i) {
    Var w = p.next(), b = p.next();
    h = relu(tape, dense(tape, h, w, b));
  }
  EncoderOutput out;
  {
    Var w = p.next(), b = p.next();
    out.mu = dense(tape, h, w, b);
  }
  out.z = out.mu;
  if (variational) {
    Var w = p.next(), b = p.next();
    out.logvar = dense(tape, h, w, b);
    if (eps) {
      Var noise = tape.leaf(*eps);
      Var sd = exp(tape, scale(tape, *out.logvar, T(0.5)));
      out.z = add(tape, out.mu, mul(tape, sd, noise));
    }
  }
  return out;
}

/// z[B,latent] -> xhat[B,1000,2].
template <class T>
Var decode(Tape<T>& tape, Var z, std::span<const Var> params) {
  using A = Architecture;
  detail::Cursor p{params};
  Var h = z;
  for (int i = 0; i < 4; ++i) {
    Var w = p.next(), b = p.next();
    h = relu(tape, dense(tape, h, w, b));
  }
  h = reshape(tape, h, Shape{tape.shape(h)[0], A::kSeedLength, A::kSeedChannels});
  for (int i = 0; i < 3; ++i) {
    Var k = p.next(), b = p.next();
    h = relu(tape, bias_add(tape, conv1d_transpose(tape, upsample1d(tape, h), k), b));
  }
  return h;
}

/// z[B,latent] -> class logits [B,2]; class 0 = joint sample, class 1 = permuted.
template <class T>
Var discriminate(Tape<T>& tape, Var z, std::span<const Var> params) {
  detail::Cursor p{params};
  Var h = z;
  for (std::size_t i = 0; i < Architecture::kDiscLayers; ++i) {
    Var w = p.next(), b = p.next();
    h = leaky_relu(tape, dense(tape, h, w, b), T(Architecture::kLeakySlope));
  }
  Var w = p.next(), b = p.next();
  return dense(tape, h, w, b);
}

}  // namespace regle::models

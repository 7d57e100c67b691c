#pragma once

#include <optional>

#include "regle/autograd.hpp"
#include "regle/errors.hpp"
#include "regle/models/architecture.hpp"
#include "regle/ops.hpp"

namespace regle::models {

/// Batch mean of KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dims.
template <class T>
Var kl_divergence(Tape<T>& tape, Var mu, Var logvar) {
  regle::detail::require_rank(tape.shape(mu), 2, "kl_divergence", "mu [B,D]");
  regle::detail::require_same_shape(tape.shape(mu), tape.shape(logvar), "kl_divergence");
  const T batch = static_cast<T>(tape.shape(mu)[0]);
  Var terms = sub(tape, add(tape, square(tape, mu), exp(tape, logvar)), add_scalar(tape, logvar, T(1)));
  return scale(tape, sum(tape, terms), T(0.5) / batch);
}

/// Squared error summed over each sample's elements, averaged over the batch.
template <class T>
Var sum_squared_error(Tape<T>& tape, Var x, Var xhat) {
  const T batch = static_cast<T>(tape.shape(x)[0]);
  return scale(tape, sum(tape, square(tape, sub(tape, xhat, x))), T(1) / batch);
}

/// Squared error averaged over every element.
template <class T>
Var mean_squared_error(Tape<T>& tape, Var x, Var xhat) {
  return mean(tape, square(tape, sub(tape, xhat, x)));
}

/// Density-ratio estimate of total correlation from discriminator logits:
/// mean over the batch of log D(z) - log(1 - D(z)), D = softmax class 0.
template <class T>
Var tc_estimate(Tape<T>& tape, Var logits) {
  Var logp = log_softmax(tape, logits);
  return mean(tape, sub(tape, select_column(tape, logp, 0), select_column(tape, logp, 1)));
}

/// Two-class cross-entropy on stacked logits: rows [0, n_joint) are joint
/// samples (class 0), the remaining rows permuted samples (class 1). Each
/// class contributes half, averaged over its own rows.
template <class T>
Var discriminator_loss(Tape<T>& tape, Var logits, std::size_t n_joint) {
  const Shape& s = tape.shape(logits);
  regle::detail::require_rank(s, 2, "discriminator_loss", "logits [B,2]");
  if (s[1] != 2) throw DimensionError("discriminator_loss: logits axis 1 must be 2, got " + std::to_string(s[1]));
  if (n_joint == 0 || n_joint >= s[0]) {
    throw UsageError("discriminator_loss needs joint and permuted rows, got " + std::to_string(n_joint) + " of " +
                     std::to_string(s[0]));
  }
  const std::size_t n_perm = s[0] - n_joint;
  Tensor<T> w(s);
  for (std::size_t i = 0; i < n_joint; ++i) w(i, 0) = static_cast<T>(-0.5 / static_cast<double>(n_joint));
  for (std::size_t i = n_joint; i < s[0]; ++i) w(i, 1) = static_cast<T>(-0.5 / static_cast<double>(n_perm));
  return sum(tape, mul(tape, log_softmax(tape, logits), tape.leaf(std::move(w))));
}

/// Network outputs needed to assemble a training loss.
struct ForwardPass {
  Var x;
  Var xhat;
  Var mu;
  std::optional<Var> logvar;
  std::optional<Var> disc_logits;  // discriminator applied to z (FactorVAE)
};

struct LossTerms {
  Var total;
  double reconstruction = 0.0;
  double kl = 0.0;
  double tc = 0.0;
};

/// AE: MSE. VAE / BETA_VAE: per-sample SSE + beta * KL (VAE is beta = 1).
/// FACTOR_VAE: per-sample SSE + KL + gamma * TC.
template <class T>
LossTerms model_loss(Tape<T>& tape, const ModelVariant& variant, const ForwardPass& f) {
  variant.validate();
  LossTerms out;
  if (variant.tag == VariantTag::AE) {
    out.total = mean_squared_error(tape, f.x, f.xhat);
    out.reconstruction = static_cast<double>(tape.value(out.total)[0]);
    return out;
  }
  if (!f.logvar) throw UsageError("variational loss needs a log-variance head");
  Var recon = sum_squared_error(tape, f.x, f.xhat);
  Var kl = kl_divergence(tape, f.mu, *f.logvar);
  out.reconstruction = static_cast<double>(tape.value(recon)[0]);
  out.kl = static_cast<double>(tape.value(kl)[0]);
  if (variant.tag == VariantTag::FactorVAE) {
    if (!f.disc_logits) throw UsageError("FACTOR_VAE loss needs discriminator logits");
    Var tc = tc_estimate(tape, *f.disc_logits);
    out.tc = static_cast<double>(tape.value(tc)[0]);
    out.total = add(tape, add(tape, recon, kl), scale(tape, tc, static_cast<T>(*variant.gamma)));
  } else {
    out.total = add(tape, recon, scale(tape, kl, static_cast<T>(variant.kl_weight())));
  }
  return out;
}

}  // namespace regle::models

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "regle/adam.hpp"
#include "regle/autograd.hpp"
#include "regle/errors.hpp"
#include "regle/models/architecture.hpp"
#include "regle/models/losses.hpp"
#include "regle/models/networks.hpp"
#include "regle/rng.hpp"
#include "regle/tensor.hpp"

namespace regle::models {

/// Trained (or freshly initialized) networks plus the variant they belong to.
struct ModelBundle {
  ModelVariant variant;
  std::size_t latent_dim = Architecture::kDefaultLatent;
  std::uint64_t seed = 0;
  ParamSet<float> encoder;
  ParamSet<float> decoder;
  ParamSet<float> discriminator;  // empty unless FACTOR_VAE

  /// Every tensor in encoder, decoder, discriminator order.
  std::vector<NamedTensor<float>> all_tensors() const {
    std::vector<NamedTensor<float>> out(encoder);
    out.insert(out.end(), decoder.begin(), decoder.end());
    out.insert(out.end(), discriminator.begin(), discriminator.end());
    return out;
  }
};

inline ModelBundle make_bundle(const ModelVariant& variant, std::size_t latent_dim, std::uint64_t seed,
                               bool zero_discriminator_output = false) {
  variant.validate();
  const Rng root = Rng(seed).split("init");
  ModelBundle b;
  b.variant = variant;
  b.latent_dim = latent_dim;
  b.seed = seed;
  b.encoder = init_params<float>(encoder_specs(variant.variational(), latent_dim), root.split("encoder"));
  b.decoder = init_params<float>(decoder_specs(latent_dim), root.split("decoder"));
  if (variant.has_discriminator()) {
    b.discriminator = init_params<float>(discriminator_specs(latent_dim), root.split("discriminator"));
    if (zero_discriminator_output) {
      for (auto& p : b.discriminator) {
        if (p.name.starts_with("discriminator/logits")) p.value.fill(0.0f);
      }
    }
  }
  return b;
}

/// Restores a bundle from a flat tensor list written by all_tensors().
inline ModelBundle bundle_from_tensors(const ModelVariant& variant, std::size_t latent_dim, std::uint64_t seed,
                                       std::vector<NamedTensor<float>> tensors) {
  ModelBundle b;
  b.variant = variant;
  b.latent_dim = latent_dim;
  b.seed = seed;
  const auto check = [&](const std::vector<ParamSpec>& specs, ParamSet<float>& dst, std::size_t& at) {
    for (const auto& spec : specs) {
      if (at >= tensors.size() || tensors[at].name != spec.name || tensors[at].value.shape() != spec.shape) {
        throw IoError("checkpoint does not match architecture at tensor " + spec.name);
      }
      dst.push_back(std::move(tensors[at++]));
    }
  };
  std::size_t at = 0;
  check(encoder_specs(variant.variational(), latent_dim), b.encoder, at);
  check(decoder_specs(latent_dim), b.decoder, at);
  if (variant.has_discriminator()) check(discriminator_specs(latent_dim), b.discriminator, at);
  if (at != tensors.size()) throw IoError("checkpoint has extra tensors");
  return b;
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  std::size_t latent_dim = Architecture::kDefaultLatent;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-7;
  double disc_lr = 1e-4;
  double disc_beta1 = 0.5;
  double disc_beta2 = 0.9;
  std::size_t eval_batch = 250;
  bool zero_discriminator_output = false;
};

struct Dataset {
  Tensor<float> train;       // [N,1000,2]
  Tensor<float> validation;  // [M,1000,2]
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mse = 0.0;
  double val_kl = 0.0;
  double tc_hat = 0.0;
};

struct TrainResult {
  ModelBundle bundle;
  std::vector<EpochLog> log;
};

/// Independently permutes the rows of every latent column. Each column keeps
/// its exact multiset of values; cross-column dependence is destroyed.
template <class T>
Tensor<T> permute_dims(const Tensor<T>& z, Rng& rng) {
  regle::detail::require_rank(z.shape(), 2, "permute_dims", "z [B,D]");
  const std::size_t B = z.dim(0), D = z.dim(1);
  if (B < 2) throw UsageError("permute_dims needs a batch of at least 2, got " + std::to_string(B));
  Tensor<T> out(z.shape());
  std::vector<std::size_t> order(B);
  for (std::size_t d = 0; d < D; ++d) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t b = 0; b < B; ++b) out(b, d) = z(order[b], d);
  }
  return out;
}

/// One Adam update of the discriminator on (joint, permuted) batches; returns
/// the cross-entropy before the update.
inline double train_discriminator_step(const Tensor<float>& z_joint, const Tensor<float>& z_permuted,
                                       ParamSet<float>& params, AdamState<float>& state) {
  if (z_joint.rank() != 2 || z_joint.dim(0) < 2 || z_permuted.rank() != 2 || z_permuted.dim(0) < 2) {
    throw UsageError("discriminator step needs batches of at least 2 latent rows");
  }
  if (z_joint.dim(1) != z_permuted.dim(1)) throw DimensionError("joint and permuted latents differ in axis 1");
  // One stacked pass streams the large weight matrices once instead of twice.
  std::vector<float> stacked(z_joint.data().begin(), z_joint.data().end());
  stacked.insert(stacked.end(), z_permuted.data().begin(), z_permuted.data().end());
  Tape<float> tape;
  const auto vars = bind_params(tape, params, true);
  Var z = tape.leaf(Tensor<float>(Shape{z_joint.dim(0) + z_permuted.dim(0), z_joint.dim(1)}, std::move(stacked)));
  Var loss = discriminator_loss(tape, discriminate(tape, z, vars), z_joint.dim(0));
  const double value = tape.value(loss)[0];
  tape.backward(loss);
  adam_step(params, grads_of(tape, vars), state);
  return value;
}

/// Discriminator TC estimate on fixed latent samples, no gradient.
inline double estimate_tc(const ParamSet<float>& disc, const Tensor<float>& z) {
  Tape<float> tape;
  const auto vars = bind_params(tape, disc, false);
  return tape.value(tc_estimate(tape, discriminate(tape, tape.leaf(z), vars)))[0];
}

struct Posterior {
  Tensor<float> mean;     // [N,latent]
  Tensor<float> logvar;   // [N,latent]; zeros for AE
};

/// Encoder posterior parameters for every row of x, evaluated in batches.
inline Posterior encode_posterior(const ModelBundle& m, const Tensor<float>& x, std::size_t batch = 250) {
  const std::size_t N = x.dim(0), D = m.latent_dim;
  Posterior out{Tensor<float>(Shape{N, D}), Tensor<float>(Shape{N, D})};
  for (std::size_t start = 0; start < N; start += batch) {
    const std::size_t n = std::min(batch, N - start);
    Tape<float> tape;
    const auto enc = bind_params(tape, m.encoder, false);
    const EncoderOutput e = encode(tape, tape.leaf(slice_rows(x, start, n)), enc, m.variant.variational());
    std::copy_n(tape.value(e.mu).raw(), n * D, out.mean.raw() + start * D);
    if (e.logvar) std::copy_n(tape.value(*e.logvar).raw(), n * D, out.logvar.raw() + start * D);
  }
  return out;
}

/// Decoder output for latent rows z, evaluated in batches.
inline Tensor<float> decode_latents(const ModelBundle& m, const Tensor<float>& z, std::size_t batch = 250) {
  const std::size_t N = z.dim(0);
  constexpr std::size_t row = Architecture::kLength * Architecture::kChannels;
  Tensor<float> out(Shape{N, Architecture::kLength, Architecture::kChannels});
  for (std::size_t start = 0; start < N; start += batch) {
    const std::size_t n = std::min(batch, N - start);
    Tape<float> tape;
    const auto dec = bind_params(tape, m.decoder, false);
    Var xhat = decode(tape, tape.leaf(slice_rows(z, start, n)), dec);
    std::copy_n(tape.value(xhat).raw(), n * row, out.raw() + start * row);
  }
  return out;
}

/// Reconstruction through the posterior mean (z = mu).
inline Tensor<float> reconstruct(const ModelBundle& m, const Tensor<float>& x, std::size_t batch = 250) {
  return decode_latents(m, encode_posterior(m, x, batch).mean, batch);
}

namespace detail {

inline EpochLog evaluate(const ModelBundle& m, const Tensor<float>& val, std::size_t batch, Rng rng) {
  EpochLog log;
  const Posterior post = encode_posterior(m, val, batch);
  const Tensor<float> xhat = decode_latents(m, post.mean, batch);
  double sq = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const double d = static_cast<double>(xhat[i]) - static_cast<double>(val[i]);
    sq += d * d;
  }
  log.val_mse = sq / static_cast<double>(val.size());
  if (m.variant.variational()) {
    double kl = 0.0;
    for (std::size_t i = 0; i < post.mean.size(); ++i) {
      const double mu = post.mean[i], lv = post.logvar[i];
      kl += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    }
    log.val_kl = kl / static_cast<double>(val.dim(0));
  }
  if (m.variant.has_discriminator()) {
    Tensor<float> z = post.mean;
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] += std::exp(0.5f * post.logvar[i]) * static_cast<float>(rng.normal());
    }
    log.tc_hat = estimate_tc(m.discriminator, z);
  }
  return log;
}

inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace detail

/// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochLog&)>;

/// Adam training of one model. FACTOR_VAE alternates one encoder/decoder
/// update with one discriminator update per batch; the discriminator's
/// permuted sample comes from a second, independently drawn batch.
inline TrainResult train(const ModelVariant& variant, const Dataset& data, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  variant.validate();
  if (data.train.empty() || data.validation.empty()) throw UsageError("training needs train and validation splits");
  if (data.train.rank() != 3 || data.train.dim(1) != Architecture::kLength ||
      data.train.dim(2) != Architecture::kChannels) {
    throw DimensionError("training data must be [N,1000,2], got " + shape_string(data.train.shape()));
  }
  const std::size_t N = data.train.dim(0);
  if (variant.has_discriminator() && N < 2) throw UsageError("FACTOR_VAE needs at least 2 training samples");

  TrainResult result;
  result.bundle = make_bundle(variant, config.latent_dim, config.seed, config.zero_discriminator_output);
  ModelBundle& m = result.bundle;

  const Rng root(config.seed);
  Rng shuffle_rng = root.split("shuffle");
  Rng noise_rng = root.split("noise");
  Rng disc_rng = root.split("discriminator");
  const Rng eval_root = root.split("eval");

  ParamSet<float> model_params(m.encoder);
  model_params.insert(model_params.end(), m.decoder.begin(), m.decoder.end());
  const std::size_t n_enc = m.encoder.size();
  AdamState<float> opt;
  opt.config = {config.lr, config.beta1, config.beta2, config.adam_eps};
  AdamState<float> disc_opt;
  disc_opt.config = {config.disc_lr, config.disc_beta1, config.disc_beta2, config.adam_eps};

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool variational = variant.variational();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < N; start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, N - start);
      if (variant.has_discriminator() && n < 2) continue;
      const Tensor<float> xb = gather_rows(data.train, std::span(order).subspan(start, n));
      Tensor<float> z_joint;
      {
        Tape<float> tape;
        const auto vars = bind_params(tape, model_params, true);
        const std::span<const Var> enc(vars.data(), n_enc);
        const std::span<const Var> dec(vars.data() + n_enc, vars.size() - n_enc);
        Var x = tape.leaf(xb);
        std::optional<Tensor<float>> eps;
        if (variational) eps = standard_normal<float>(noise_rng, n, m.latent_dim);
        const EncoderOutput e = encode(tape, x, enc, variational, eps ? &*eps : nullptr);
        ForwardPass f{x, decode(tape, e.z, dec), e.mu, e.logvar, {}};
        if (variant.has_discriminator()) {
          const auto disc_vars = bind_params(tape, m.discriminator, false);
          f.disc_logits = discriminate(tape, e.z, disc_vars);
          z_joint = tape.value(e.z);
        }
        const LossTerms loss = model_loss(tape, variant, f);
        const double value = tape.value(loss.total)[0];
        if (!std::isfinite(value)) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                              std::to_string(batches + 1));
        }
        tape.backward(loss.total);
        adam_step(model_params, grads_of(tape, vars), opt);
        loss_sum += value;
        ++batches;
      }
      // Copy back so the discriminator step sees the updated encoder.
      for (std::size_t i = 0; i < n_enc; ++i) m.encoder[i].value = model_params[i].value;
      if (variant.has_discriminator()) {
        const auto idx = detail::sample_without_replacement(N, n, disc_rng);
        const Tensor<float> x2 = gather_rows(data.train, std::span<const std::size_t>(idx));
        Tape<float> tape;
        const auto enc = bind_params(tape, m.encoder, false);
        const Tensor<float> eps2 = standard_normal<float>(disc_rng, n, m.latent_dim);
        const EncoderOutput e2 = encode(tape, tape.leaf(x2), enc, true, &eps2);
        const Tensor<float> z_perm = permute_dims(tape.value(e2.z), disc_rng);
        train_discriminator_step(z_joint, z_perm, m.discriminator, disc_opt);
      }
    }
    for (std::size_t i = 0; i < m.decoder.size(); ++i) m.decoder[i].value = model_params[n_enc + i].value;

    EpochLog log = detail::evaluate(m, data.validation, config.eval_batch, eval_root.split(epoch));
    log.epoch = epoch;
    log.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    if (!std::isfinite(log.val_mse) || !std::isfinite(log.val_kl)) {
      throw TrainingError("non-finite validation metric at epoch " + std::to_string(epoch));
    }
    result.log.push_back(log);
    if (on_epoch && !on_epoch(log)) break;
  }
  for (std::size_t i = 0; i < n_enc; ++i) m.encoder[i].value = model_params[i].value;
  for (std::size_t i = 0; i < m.decoder.size(); ++i) m.decoder[i].value = model_params[n_enc + i].value;
  return result;
}

}  // namespace regle::models

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "regle/adam.hpp"
#include "regle/errors.hpp"
#include "regle/rng.hpp"
#include "regle/tensor.hpp"

namespace regle::models {

/// Fixed layer geometry of the spirogram networks.
struct Architecture {
  static constexpr std::size_t kLength = 1000;
  static constexpr std::size_t kChannels = 2;
  static constexpr std::size_t kKernel = 10;
  static constexpr std::size_t kConvFilters[3] = {8, 16, 32};
  static constexpr std::size_t kHidden = 64;
  static constexpr std::size_t kSeedLength = 125;  // decoder reshape (125, 32)
  static constexpr std::size_t kSeedChannels = 32;
  static constexpr std::size_t kDeconvFilters[3] = {16, 8, 2};
  static constexpr std::size_t kDiscHidden = 1000;
  static constexpr std::size_t kDiscLayers = 6;
  static constexpr std::size_t kDiscClasses = 2;
  static constexpr float kLeakySlope = 0.2f;
  static constexpr std::size_t kDefaultLatent = 5;
};

enum class VariantTag { AE, VAE, BetaVAE, FactorVAE };

inline std::string to_string(VariantTag tag) {
  switch (tag) {
    case VariantTag::AE: return "AE";
    case VariantTag::VAE: return "VAE";
    case VariantTag::BetaVAE: return "BETA_VAE";
    case VariantTag::FactorVAE: return "FACTOR_VAE";
  }
  return "?";
}

inline VariantTag parse_variant_tag(const std::string& s) {
  if (s == "AE") return VariantTag::AE;
  if (s == "VAE") return VariantTag::VAE;
  if (s == "BETA_VAE") return VariantTag::BetaVAE;
  if (s == "FACTOR_VAE") return VariantTag::FactorVAE;
  throw ConfigError("unknown model variant '" + s + "' (expected AE, VAE, BETA_VAE or FACTOR_VAE)");
}

/// Model family plus its regularization weight. beta applies only to
/// BETA_VAE and gamma only to FACTOR_VAE.
struct ModelVariant {
  VariantTag tag = VariantTag::VAE;
  std::optional<double> beta;
  std::optional<double> gamma;

  static ModelVariant ae() { return {VariantTag::AE, {}, {}}; }
  static ModelVariant vae() { return {VariantTag::VAE, {}, {}}; }
  static ModelVariant beta_vae(double beta) { return {VariantTag::BetaVAE, beta, {}}; }
  static ModelVariant factor_vae(double gamma) { return {VariantTag::FactorVAE, {}, gamma}; }

  bool variational() const { return tag != VariantTag::AE; }
  bool has_discriminator() const { return tag == VariantTag::FactorVAE; }

  /// Weight on the KL term (1 for VAE and FactorVAE).
  double kl_weight() const { return tag == VariantTag::BetaVAE ? *beta : 1.0; }

  void validate() const {
    if (gamma && tag != VariantTag::FactorVAE) throw ConfigError("gamma is only valid for FACTOR_VAE");
    if (beta && tag != VariantTag::BetaVAE) throw ConfigError("beta is only valid for BETA_VAE");
    if (tag == VariantTag::BetaVAE && !(beta && *beta > 0.0)) throw ConfigError("BETA_VAE needs beta > 0");
    if (tag == VariantTag::FactorVAE && !(gamma && *gamma > 0.0)) {
      throw ConfigError("FACTOR_VAE needs gamma > 0");
    }
  }

  /// beta or gamma, whichever applies; 0 otherwise.
  double hyperparameter() const { return beta ? *beta : gamma ? *gamma : 0.0; }

  std::string label() const {
    std::ostringstream os;
    os << to_string(tag);
    if (beta) os << "_b" << *beta;
    if (gamma) os << "_g" << *gamma;
    return os.str();
  }
};

/// One parameter tensor of the networks with its Glorot fan counts.
struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  bool is_bias = false;
};

namespace detail {

inline void add_dense(std::vector<ParamSpec>& out, const std::string& name, std::size_t in, std::size_t outd) {
  out.push_back({name + "/weights", {in, outd}, in, outd, false});
  out.push_back({name + "/bias", {outd}, in, outd, true});
}

inline void add_conv(std::vector<ParamSpec>& out, const std::string& name, std::size_t k, std::size_t in,
                     std::size_t outc) {
  out.push_back({name + "/kernel", {k, in, outc}, k * in, k * outc, false});
  out.push_back({name + "/bias", {outc}, k * in, k * outc, true});
}

}  // namespace detail

inline std::vector<ParamSpec> encoder_specs(bool variational, std::size_t latent_dim) {
  using A = Architecture;
  std::vector<ParamSpec> s;
  std::size_t channels = A::kChannels;
  for (int i = 0; i < 3; ++i) {
    detail::add_conv(s, "encoder/conv" + std::to_string(i + 1), A::kKernel, channels, A::kConvFilters[i]);
    channels = A::kConvFilters[i];
  }
  std::size_t width = (A::kLength / 8) * channels;
  for (int i = 0; i < 3; ++i) {
    detail::add_dense(s, "encoder/dense" + std::to_string(i + 1), width, A::kHidden);
    width = A::kHidden;
  }
  detail::add_dense(s, "encoder/mean", A::kHidden, latent_dim);
  if (variational) detail::add_dense(s, "encoder/logvar", A::kHidden, latent_dim);
  return s;
}

inline std::vector<ParamSpec> decoder_specs(std::size_t latent_dim) {
  using A = Architecture;
  std::vector<ParamSpec> s;
  std::size_t width = latent_dim;
  for (int i = 0; i < 3; ++i) {
    detail::add_dense(s, "decoder/dense" + std::to_string(i + 1), width, A::kHidden);
    width = A::kHidden;
  }
  detail::add_dense(s, "decoder/dense4", A::kHidden, A::kSeedLength * A::kSeedChannels);
  std::size_t channels = A::kSeedChannels;
  for (int i = 0; i < 3; ++i) {
    detail::add_conv(s, "decoder/deconv" + std::to_string(i + 1), A::kKernel, channels, A::kDeconvFilters[i]);
    channels = A::kDeconvFilters[i];
  }
  return s;
}

inline std::vector<ParamSpec> discriminator_specs(std::size_t latent_dim) {
  using A = Architecture;
  std::vector<ParamSpec> s;
  std::size_t width = latent_dim;
  for (std::size_t i = 0; i < A::kDiscLayers; ++i) {
    detail::add_dense(s, "discriminator/dense" + std::to_string(i + 1), width, A::kDiscHidden);
    width = A::kDiscHidden;
  }
  detail::add_dense(s, "discriminator/logits", width, A::kDiscClasses);
  return s;
}

template <class T>
using ParamSet = std::vector<NamedTensor<T>>;

/// Glorot-uniform weights, zero biases.
template <class T>
ParamSet<T> init_params(const std::vector<ParamSpec>& specs, Rng rng) {
  ParamSet<T> out;
  out.reserve(specs.size());
  for (const auto& spec : specs) {
    Tensor<T> t(spec.shape);
    if (!spec.is_bias) {
      const double limit = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
      for (T& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
    }
    out.push_back({spec.name, std::move(t)});
  }
  return out;
}

/// One line per tensor: "<name> <d0>x<d1>...". Used by the architecture audit.
inline std::string shape_manifest(const std::vector<ParamSpec>& specs) {
  std::ostringstream os;
  for (const auto& s : specs) {
    os << s.name << ' ';
    for (std::size_t i = 0; i < s.shape.size(); ++i) os << (i ? "x" : "") << s.shape[i];
    os << '\n';
  }
  return os.str();
}

}  // namespace regle::models

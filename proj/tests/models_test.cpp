#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "regle/models/architecture.hpp"
#include "regle/models/losses.hpp"
#include "regle/models/networks.hpp"
#include "regle/models/train.hpp"
#include "support/model_checks.hpp"
#include "support/test_util.hpp"

using namespace regle;
namespace rt = regle::testing;
using namespace regle::models;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Tensor<float> exponential_batch(std::size_t n, Rng& rng) {
  Tensor<float> x(Shape{n, Architecture::kLength, Architecture::kChannels});
  for (std::size_t b = 0; b < n; ++b) {
    const double amp = rng.uniform(0.5, 1.5), rate = rng.uniform(0.5, 2.0);
    for (std::size_t l = 0; l < Architecture::kLength; ++l) {
      const double t = 10.0 * static_cast<double>(l) / 999.0;
      x(b, l, 0) = static_cast<float>(amp * (1.0 - std::exp(-rate * t)));
      x(b, l, 1) = static_cast<float>(amp * rate * std::exp(-rate * t));
    }
  }
  return x;
}

Tensor<float> constant_waveforms(std::size_t n, Rng& rng) {
  Tensor<float> x(Shape{n, Architecture::kLength, Architecture::kChannels});
  for (std::size_t b = 0; b < n; ++b) {
    const float level = static_cast<float>(rng.uniform(0.5, 1.5));
    for (std::size_t l = 0; l < Architecture::kLength; ++l) {
      x(b, l, 0) = level;
      x(b, l, 1) = 0.5f * level;
    }
  }
  return x;
}

// KL(N(mu, e^logvar) || N(0,1)) by Simpson quadrature, one dimension.
double kl_1d_quadrature(double mu, double logvar) {
  const double s = std::exp(0.5 * logvar);
  const double lo = mu - 14.0 * s, hi = mu + 14.0 * s;
  const int n = 200000;  // Simpson, even count
  const double h = (hi - lo) / n;
  auto f = [&](double z) {
    const double lq = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(s) - 0.5 * (z - mu) * (z - mu) / (s * s);
    const double lp = -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z;
    return std::exp(lq) * (lq - lp);
  };
  double acc = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) acc += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

double pearson(const Tensor<float>& z, std::size_t a, std::size_t b) {
  const std::size_t n = z.dim(0);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += z(i, a);
    mb += z(i, b);
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = z(i, a) - ma, db = z(i, b) - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

// ---------------------------------------------------------------- architecture

TEST(Architecture, ShapeManifestMatchesGolden) {
  const std::string golden = read_file(std::string(REGLE_TEST_DATA_DIR) + "/architecture_manifest.txt");
  ASSERT_FALSE(golden.empty());
  const std::string actual = shape_manifest(encoder_specs(true, 5)) + shape_manifest(decoder_specs(5)) +
                             shape_manifest(discriminator_specs(5));
  EXPECT_EQ(actual, golden);
}

TEST(Architecture, AutoencoderHasNoVarianceHead) {
  const auto ae = encoder_specs(false, 5);
  const auto vae = encoder_specs(true, 5);
  EXPECT_EQ(ae.size() + 2, vae.size());
  for (const auto& s : ae) EXPECT_EQ(s.name.find("logvar"), std::string::npos);
}

TEST(Architecture, GlorotInitBoundsAndZeroBiases) {
  const auto specs = decoder_specs(5);
  const auto params = init_params<float>(specs, Rng(3));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double limit = std::sqrt(6.0 / static_cast<double>(specs[i].fan_in + specs[i].fan_out));
    for (float v : params[i].value.data()) {
      if (specs[i].is_bias) {
        EXPECT_EQ(v, 0.0f);
      } else {
        EXPECT_LE(std::abs(v), limit);
      }
    }
  }
}

TEST(Architecture, RoundTripShapeIdentity) {
  Rng rng(5);
  const ModelBundle m = make_bundle(ModelVariant::vae(), 5, 5);
  for (std::size_t batch : {1u, 3u}) {
    const Tensor<float> x = exponential_batch(batch, rng);
    EXPECT_EQ(reconstruct(m, x).shape(), x.shape());
  }
}

TEST(Architecture, VariantValidation) {
  EXPECT_THROW((ModelVariant{VariantTag::VAE, {}, 2.0}.validate()), ConfigError);
  EXPECT_THROW((ModelVariant{VariantTag::AE, 2.0, {}}.validate()), ConfigError);
  EXPECT_THROW(ModelVariant::beta_vae(0.0).validate(), ConfigError);
  EXPECT_THROW(ModelVariant::factor_vae(-1.0).validate(), ConfigError);
  EXPECT_THROW(parse_variant_tag("DIP_VAE"), ConfigError);
  EXPECT_NO_THROW(ModelVariant::factor_vae(16).validate());
  EXPECT_EQ(parse_variant_tag("BETA_VAE"), VariantTag::BetaVAE);
}

// ---------------------------------------------------------------- encode

TEST(Encode, ZeroNoiseGivesMean) {
  Rng rng(1);
  const ModelBundle m = make_bundle(ModelVariant::vae(), 5, 1);
  Tape<float> tape;
  const auto enc = bind_params(tape, m.encoder, false);
  const Tensor<float> eps(Shape{2, 5});
  const auto e = encode(tape, tape.leaf(exponential_batch(2, rng)), enc, true, &eps);
  EXPECT_EQ(tape.value(e.z), tape.value(e.mu));
}

TEST(Encode, UnitNoiseWithZeroLogvarShiftsByOne) {
  Rng rng(2);
  ModelBundle m = make_bundle(ModelVariant::vae(), 5, 2);
  for (auto& p : m.encoder) {
    if (p.name.starts_with("encoder/logvar")) p.value.fill(0.0f);
  }
  Tape<float> tape;
  const auto enc = bind_params(tape, m.encoder, false);
  const Tensor<float> ones(Shape{3, 5}, 1.0f);
  const auto e = encode(tape, tape.leaf(exponential_batch(3, rng)), enc, true, &ones);
  const auto& z = tape.value(e.z);
  const auto& mu = tape.value(e.mu);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_FLOAT_EQ(z[i], mu[i] + 1.0f);
}

TEST(Encode, AutoencoderHasNoLogvar) {
  Rng rng(3);
  const ModelBundle m = make_bundle(ModelVariant::ae(), 5, 3);
  Tape<float> tape;
  const auto enc = bind_params(tape, m.encoder, false);
  const auto e = encode(tape, tape.leaf(exponential_batch(2, rng)), enc, false);
  EXPECT_FALSE(e.logvar.has_value());
  EXPECT_EQ(tape.value(e.z), tape.value(e.mu));
}

TEST(Encode, SampleVarianceMatchesPosterior) {
  Rng rng(4);
  ModelBundle m = make_bundle(ModelVariant::vae(), 5, 4);
  // Spread the log-variances so the check covers more than one scale.
  for (auto& p : m.encoder) {
    if (p.name == "encoder/logvar/bias") p.value = Tensor<float>(Shape{5}, {-1.0f, -0.5f, 0.0f, 0.5f, 1.0f});
  }
  const Tensor<float> x = exponential_batch(1, rng);
  const std::size_t per_batch = 500, batches = 20;
  std::vector<size_t> same(per_batch, 0);
  const Tensor<float> xb = gather_rows(x, std::span<const std::size_t>(same));
  std::vector<double> sum(5, 0.0), sumsq(5, 0.0);
  Tensor<float> logvar;
  for (std::size_t k = 0; k < batches; ++k) {
    Tape<float> tape;
    const auto enc = bind_params(tape, m.encoder, false);
    const Tensor<float> eps = standard_normal<float>(rng, per_batch, 5);
    const auto e = encode(tape, tape.leaf(xb), enc, true, &eps);
    const auto& z = tape.value(e.z);
    for (std::size_t i = 0; i < per_batch; ++i)
      for (std::size_t d = 0; d < 5; ++d) {
        sum[d] += z(i, d);
        sumsq[d] += static_cast<double>(z(i, d)) * z(i, d);
      }
    logvar = tape.value(*e.logvar);
  }
  const double n = static_cast<double>(per_batch * batches);
  for (std::size_t d = 0; d < 5; ++d) {
    const double var = (sumsq[d] - sum[d] * sum[d] / n) / (n - 1.0);
    const double expected = std::exp(static_cast<double>(logvar(0, d)));
    EXPECT_NEAR(var / expected, 1.0, 0.05) << "dim " << d;
  }
}

// ---------------------------------------------------------------- decode

TEST(Decode, OutputShapeAndDeterminism) {
  Rng rng(6);
  const ModelBundle m = make_bundle(ModelVariant::vae(), 5, 6);
  const Tensor<float> z = standard_normal<float>(rng, 3, 5);
  const Tensor<float> a = decode_latents(m, z);
  const Tensor<float> b = decode_latents(m, z);
  EXPECT_EQ(a.shape(), (Shape{3, 1000, 2}));
  EXPECT_EQ(a, b);
}

TEST(Decode, DirectionalDerivativeMatchesFiniteDifference) {
  // A few warm-up epochs lift the decoder output away from its final ReLU
  // kink; the check itself is on a fixed parameter point.
  Rng rng(7);
  TrainConfig warm;
  warm.epochs = 20;
  warm.batch_size = 4;
  warm.lr = 1e-3;
  const Tensor<float> x = exponential_batch(4, rng);
  const ModelBundle m = train(ModelVariant::vae(), {x, x}, warm).bundle;
  const Tensor<float> z0 = standard_normal<float>(rng, 1, 5);
  const Tensor<float> u = rt::random_tensor<float>(Shape{1, 1000, 2}, rng);
  auto projected = [&](const Tensor<float>& z) {
    const Tensor<float> y = decode_latents(m, z);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(y[i]) * u[i];
    return acc;
  };
  Tape<float> tape;
  const auto dec = bind_params(tape, m.decoder, false);
  Var zv = tape.leaf(z0, true);
  Var loss = sum(tape, mul(tape, decode(tape, zv, dec), tape.leaf(u)));
  tape.backward(loss);
  const Tensor<float> g = tape.grad(zv);
  const double h = 1e-3;
  for (int k = 0; k < 3; ++k) {
    const Tensor<float> v = rt::random_tensor<float>(Shape{1, 5}, rng);
    Tensor<float> zp = z0, zm = z0;
    double analytic = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      zp[i] += static_cast<float>(h) * v[i];
      zm[i] -= static_cast<float>(h) * v[i];
      analytic += static_cast<double>(g[i]) * v[i];
    }
    const double numeric = (projected(zp) - projected(zm)) / (2.0 * h);
    EXPECT_LE(std::abs(analytic - numeric), 1e-2 * std::max(std::abs(analytic), std::abs(numeric)))
        << "direction " << k << " analytic " << analytic << " numeric " << numeric;
  }
}

// ---------------------------------------------------------------- KL

TEST(KlDivergence, ZeroAtPrior) {
  Tape<double> tape;
  Var kl = kl_divergence(tape, tape.leaf(Tensor<double>(Shape{2, 5})), tape.leaf(Tensor<double>(Shape{2, 5})));
  EXPECT_EQ(tape.value(kl)[0], 0.0);
}

TEST(KlDivergence, UnitMeanShiftIsOneHalf) {
  Tape<double> tape;
  Var kl = kl_divergence(tape, tape.leaf(Tensor<double>(Shape{1, 1}, 1.0)), tape.leaf(Tensor<double>(Shape{1, 1})));
  EXPECT_DOUBLE_EQ(tape.value(kl)[0], 0.5);
}

TEST(KlDivergence, MatchesQuadrature) {
  Rng rng(8);
  const std::size_t B = 3, D = 5;
  const Tensor<double> mu = rt::random_tensor<double>(Shape{B, D}, rng);
  Tensor<double> lv(Shape{B, D});
  for (double& v : lv.data()) v = rng.uniform(-2.0, 1.5);
  Tape<double> tape;
  const double kl = tape.value(kl_divergence(tape, tape.leaf(mu), tape.leaf(lv)))[0];
  double oracle = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) oracle += kl_1d_quadrature(mu[i], lv[i]);
  oracle /= static_cast<double>(B);
  EXPECT_NEAR(kl, oracle, 1e-4);
  EXPECT_GE(kl, 0.0);
}

// ---------------------------------------------------------------- losses

namespace {

struct FixedForward {
  Tensor<float> x, xhat, mu, logvar;
};

FixedForward random_forward(Rng& rng) {
  return {rt::random_tensor<float>(Shape{4, 10, 2}, rng), rt::random_tensor<float>(Shape{4, 10, 2}, rng),
          rt::random_tensor<float>(Shape{4, 5}, rng), rt::random_tensor<float>(Shape{4, 5}, rng, 0.5)};
}

struct LossWithGrads {
  double loss;
  std::vector<Tensor<float>> grads;
};

LossWithGrads loss_of(const ModelVariant& v, const FixedForward& f, const Tensor<float>* logits = nullptr) {
  Tape<float> tape;
  Var x = tape.leaf(f.x), xh = tape.leaf(f.xhat, true), mu = tape.leaf(f.mu, true), lv = tape.leaf(f.logvar, true);
  ForwardPass fp{x, xh, mu, lv, {}};
  if (logits) fp.disc_logits = tape.leaf(*logits);
  const LossTerms t = model_loss(tape, v, fp);
  tape.backward(t.total);
  return {tape.value(t.total)[0], {tape.grad(xh), tape.grad(mu), tape.grad(lv)}};
}

}  // namespace

TEST(Loss, BetaOneIsBitIdenticalToVae) {
  Rng rng(9);
  const FixedForward f = random_forward(rng);
  const auto a = loss_of(ModelVariant::vae(), f);
  const auto b = loss_of(ModelVariant::beta_vae(1.0), f);
  EXPECT_EQ(a.loss, b.loss);
  for (std::size_t i = 0; i < a.grads.size(); ++i) EXPECT_EQ(a.grads[i], b.grads[i]);
}

TEST(Loss, PerfectReconstructionAtPriorIsZero) {
  Rng rng(10);
  FixedForward f = random_forward(rng);
  f.xhat = f.x;
  f.mu.fill(0.0f);
  f.logvar.fill(0.0f);
  EXPECT_EQ(loss_of(ModelVariant::vae(), f).loss, 0.0);
}

TEST(Loss, UninformativeDiscriminatorReducesToVae) {
  Rng rng(11);
  const FixedForward f = random_forward(rng);
  const Tensor<float> logits(Shape{4, 2});
  EXPECT_EQ(loss_of(ModelVariant::factor_vae(10.0), f, &logits).loss, loss_of(ModelVariant::vae(), f).loss);
}

TEST(Loss, ComponentsFollowDefinitions) {
  Rng rng(12);
  const FixedForward f = random_forward(rng);
  double sse = 0.0, kl = 0.0;
  for (std::size_t i = 0; i < f.x.size(); ++i) sse += std::pow(static_cast<double>(f.xhat[i]) - f.x[i], 2);
  for (std::size_t i = 0; i < f.mu.size(); ++i) {
    kl += 0.5 * (std::pow(f.mu[i], 2) + std::exp(static_cast<double>(f.logvar[i])) - 1.0 - f.logvar[i]);
  }
  EXPECT_NEAR(loss_of(ModelVariant::ae(), f).loss, sse / static_cast<double>(f.x.size()), 1e-5);
  EXPECT_NEAR(loss_of(ModelVariant::beta_vae(4.0), f).loss, (sse + 4.0 * kl) / 4.0, 1e-3);
}

TEST(Loss, StrictlyIncreasingInBetaAndGamma) {
  Rng rng(13);
  const FixedForward f = random_forward(rng);
  double prev = -1e300;
  for (double beta : {0.25, 0.5, 1.0, 2.0, 8.0, 128.0}) {
    const double l = loss_of(ModelVariant::beta_vae(beta), f).loss;
    EXPECT_GT(l, prev) << "beta " << beta;
    prev = l;
  }
  Tensor<float> logits(Shape{4, 2});
  for (std::size_t i = 0; i < 4; ++i) logits(i, 0) = 1.0f + 0.1f * static_cast<float>(i);  // TC_hat > 0
  prev = -1e300;
  for (double gamma : {0.125, 1.0, 4.0, 64.0}) {
    const double l = loss_of(ModelVariant::factor_vae(gamma), f, &logits).loss;
    EXPECT_GT(l, prev) << "gamma " << gamma;
    prev = l;
  }
}

TEST(Loss, FactorVaeNeedsLogits) {
  Rng rng(14);
  const FixedForward f = random_forward(rng);
  EXPECT_THROW(loss_of(ModelVariant::factor_vae(1.0), f), UsageError);
}

// ---------------------------------------------------------------- permute_dims

TEST(PermuteDims, ColumnsArePermutations) {
  Rng rng(15);
  const Tensor<float> z = rt::random_tensor<float>(Shape{50, 5}, rng);
  const Tensor<float> p = permute_dims(z, rng);
  for (std::size_t d = 0; d < 5; ++d) {
    std::vector<float> a, b;
    for (std::size_t i = 0; i < 50; ++i) {
      a.push_back(z(i, d));
      b.push_back(p(i, d));
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
}

TEST(PermuteDims, RejectsSingleRow) {
  Rng rng(16);
  EXPECT_THROW(permute_dims(Tensor<float>(Shape{1, 5}), rng), UsageError);
}

TEST(PermuteDims, BreaksCorrelation) {
  Rng rng(17);
  const Tensor<float> z = rt::correlated_latents(20000, 5, 0.9, rng);
  ASSERT_GT(pearson(z, 0, 1), 0.85);
  const Tensor<float> p = permute_dims(z, rng);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) EXPECT_LE(std::abs(pearson(p, a, b)), 0.05);
}

// ---------------------------------------------------------------- discriminator

TEST(Discriminator, ZeroFinalLayerGivesZeroTc) {
  Rng rng(18);
  const ModelBundle m = make_bundle(ModelVariant::factor_vae(1.0), 5, 18, true);
  EXPECT_EQ(estimate_tc(m.discriminator, rt::random_tensor<float>(Shape{64, 5}, rng)), 0.0);
}

TEST(Discriminator, RejectsTinyBatches) {
  auto disc = init_params<float>(discriminator_specs(5), Rng(1));
  AdamState<float> st;
  EXPECT_THROW(train_discriminator_step(Tensor<float>(Shape{1, 5}), Tensor<float>(Shape{1, 5}), disc, st),
               UsageError);
}

TEST(Discriminator, CannotBeatChanceOnIdenticalDistributions) {
  // Factorized latents: permuting changes nothing, so the Bayes-optimal
  // cross-entropy is ln 2 and a trained classifier cannot do better.
  auto draw = [](std::size_t n, Rng& r) { return rt::correlated_latents(n, 5, 0.0, r); };
  Rng rng(19);
  auto disc = init_params<float>(discriminator_specs(5), rng.split("init"));
  AdamState<float> st;
  st.config = {1e-4, 0.5, 0.9, 1e-7};
  Rng data = rng.split("data");
  for (int s = 0; s < 200; ++s) {
    const Tensor<float> j = draw(32, data), o = draw(32, data);
    train_discriminator_step(j, permute_dims(o, data), disc, st);
  }
  const Tensor<float> j = draw(2000, data), o = draw(2000, data);
  Tape<float> tape;
  const auto vars = bind_params(tape, disc, false);
  std::vector<float> stacked(j.data().begin(), j.data().end());
  const Tensor<float> p = permute_dims(o, data);
  stacked.insert(stacked.end(), p.data().begin(), p.data().end());
  Var logits = discriminate(tape, tape.leaf(Tensor<float>(Shape{4000, 5}, stacked)), vars);
  const double ce = tape.value(discriminator_loss(tape, logits, 2000))[0];
  EXPECT_GE(ce, std::log(2.0) - 0.05);
}

TEST(Discriminator, SeparatesDiagonalFromPermuted) {
  // Joint samples lie on z1 == z0; permuting the columns moves them off the
  // diagonal, so the classes are separable.
  auto draw = [](std::size_t n, Rng& r) { return rt::correlated_latents(n, 5, 1.0, r); };
  Rng rng(20);
  auto disc = init_params<float>(discriminator_specs(5), rng.split("init"));
  AdamState<float> st;
  st.config = {1e-4, 0.5, 0.9, 1e-7};
  Rng data = rng.split("data");
  for (int s = 0; s < 500; ++s) {
    const Tensor<float> j = draw(32, data), o = draw(32, data);
    train_discriminator_step(j, permute_dims(o, data), disc, st);
  }
  const std::size_t n = 1000;
  const Tensor<float> j = draw(n, data);
  const Tensor<float> p = permute_dims(draw(n, data), data);
  auto correct = [&](const Tensor<float>& z, std::size_t cls) {
    Tape<float> tape;
    const auto vars = bind_params(tape, disc, false);
    const auto& lg = tape.value(discriminate(tape, tape.leaf(z), vars));
    std::size_t c = 0;
    for (std::size_t i = 0; i < z.dim(0); ++i) c += ((lg(i, 0) > lg(i, 1)) == (cls == 0));
    return c;
  };
  const double acc = static_cast<double>(correct(j, 0) + correct(p, 1)) / static_cast<double>(2 * n);
  EXPECT_GT(acc, 0.95);
}

// ---------------------------------------------------------------- training

TEST(Train, AutoencoderFitsConstantWaveforms) {
  Rng rng(7);
  TrainConfig c;
  c.epochs = 100;
  c.batch_size = 16;
  c.lr = 1e-3;
  c.seed = 1;
  const TrainResult r = train(ModelVariant::ae(), {constant_waveforms(64, rng), constant_waveforms(16, rng)}, c);
  ASSERT_EQ(r.log.size(), 100u);
  EXPECT_LT(r.log.back().val_mse, 1e-3);
}

TEST(Train, EqualSeedsGiveBitIdenticalCheckpoints) {
  Rng rng(22);
  const Dataset d{exponential_batch(40, rng), exponential_batch(8, rng)};
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.seed = 9;
  for (const auto& v : {ModelVariant::vae(), ModelVariant::factor_vae(2.0)}) {
    const auto a = train(v, d, c).bundle.all_tensors();
    const auto b = train(v, d, c).bundle.all_tensors();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].value, b[i].value) << a[i].name;
  }
  c.seed = 10;
  const auto other = train(ModelVariant::vae(), d, c).bundle.all_tensors();
  c.seed = 9;
  EXPECT_NE(other[0].value, train(ModelVariant::vae(), d, c).bundle.all_tensors()[0].value);
}

TEST(Train, VaeKlStaysFiniteAndNonNegative) {
  Rng rng(23);
  TrainConfig c;
  c.epochs = 5;
  c.batch_size = 16;
  const TrainResult r = train(ModelVariant::vae(), {exponential_batch(48, rng), exponential_batch(16, rng)}, c);
  for (const auto& log : r.log) {
    EXPECT_TRUE(std::isfinite(log.val_kl));
    EXPECT_GE(log.val_kl, 0.0);
  }
}

TEST(Train, NonFiniteInputAbortsWithContext) {
  Rng rng(24);
  Tensor<float> x = exponential_batch(8, rng);
  x[5] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 8;
  try {
    train(ModelVariant::vae(), {x, exponential_batch(2, rng)}, c);
    FAIL() << "expected a training error";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1 batch 1"), std::string::npos) << e.what();
  }
}

TEST(Train, CheckpointRoundTrip) {
  Rng rng(25);
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 8;
  const ModelBundle m = train(ModelVariant::factor_vae(4.0), {exponential_batch(16, rng), exponential_batch(4, rng)}, c).bundle;
  const ModelBundle back = bundle_from_tensors(m.variant, m.latent_dim, m.seed, m.all_tensors());
  const auto a = m.all_tensors(), b = back.all_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].value, b[i].value);
  auto wrong = m.all_tensors();
  wrong.pop_back();
  EXPECT_THROW(bundle_from_tensors(m.variant, m.latent_dim, m.seed, wrong), IoError);
}

// ---------------------------------------------------------------- end to end

TEST(EndToEndGradient, AutoencoderMseMatchesFiniteDifferences) {
  for (const auto& c : rt::end_to_end_gradient_check(ModelVariant::ae(), 4)) {
    EXPECT_LE(c.rel_error, 1e-2) << c.name << " analytic " << c.analytic << " numeric " << c.numeric;
  }
}

TEST(EndToEndGradient, VaeLossMatchesFiniteDifferences) {
  for (const auto& c : rt::end_to_end_gradient_check(ModelVariant::vae(), 5)) {
    EXPECT_LE(c.rel_error, 1e-2) << c.name << " analytic " << c.analytic << " numeric " << c.numeric;
  }
}

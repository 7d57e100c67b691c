#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "regle/checkpoint.hpp"
#include "regle/csv.hpp"
#include "regle/errors.hpp"
#include "regle/rng.hpp"
#include "regle/tensor.hpp"

namespace regle::synth {

inline constexpr std::size_t kFactors = 3;
inline constexpr std::size_t kWaveLength = 1000;

enum class Split : std::uint8_t { Train, Val, PrsEval };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "TRAIN";
    case Split::Val: return "VAL";
    case Split::PrsEval: return "PRS_EVAL";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "TRAIN") return Split::Train;
  if (s == "VAL") return Split::Val;
  if (s == "PRS_EVAL") return Split::PrsEval;
  throw IoError("unknown split tag '" + s + "'");
}

struct Variant {
  std::uint32_t chrom = 1;
  std::uint64_t pos = 0;
  double maf = 0.0;
};

/// Dosages stored variant-major (all individuals of one variant contiguous),
/// which is the access pattern of every per-variant analysis.
struct Genotypes {
  std::size_t n = 0;  // individuals
  std::size_t m = 0;  // variants
  std::vector<std::uint8_t> dosage;

  Genotypes() = default;
  Genotypes(std::size_t individuals, std::size_t variants)
      : n(individuals), m(variants), dosage(individuals * variants, 0) {}

  std::uint8_t& at(std::size_t individual, std::size_t variant) { return dosage[variant * n + individual]; }
  std::uint8_t at(std::size_t individual, std::size_t variant) const { return dosage[variant * n + individual]; }
  const std::uint8_t* column(std::size_t variant) const { return dosage.data() + variant * n; }

  /// Dosages of `rows` individuals only (same variant order).
  Genotypes subset(const std::vector<std::size_t>& rows) const {
    Genotypes g(rows.size(), m);
    for (std::size_t j = 0; j < m; ++j) {
      const std::uint8_t* src = column(j);
      std::uint8_t* dst = g.dosage.data() + j * g.n;
      for (std::size_t i = 0; i < rows.size(); ++i) dst[i] = src[rows[i]];
    }
    return g;
  }
};

/// Column standardized to mean 0 and unit (population) variance. A
/// monomorphic column comes back all zero with `ok` false.
struct StandardizedColumn {
  std::vector<double> values;
  bool ok = false;
};

inline StandardizedColumn standardize(const Genotypes& g, std::size_t variant) {
  StandardizedColumn out;
  out.values.resize(g.n);
  const std::uint8_t* c = g.column(variant);
  double s = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < g.n; ++i) {
    s += c[i];
    ss += static_cast<double>(c[i]) * c[i];
  }
  const double mean = s / static_cast<double>(g.n);
  const double var = ss / static_cast<double>(g.n) - mean * mean;
  if (!(var > 1e-12)) return out;
  const double inv = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < g.n; ++i) out.values[i] = (c[i] - mean) * inv;
  out.ok = true;
  return out;
}

struct DiseaseConfig {
  std::string name;
  std::array<double, kFactors> weights{};
  double prevalence = 0.15;
  double noise_sd = 1.0;
};

struct SpirogramConfig {
  double duration = 6.0;       // seconds spanned by the 1000 samples
  double amplitude = 1.0;      // FVC-like plateau at factor 0
  double amplitude_slope = 0.15;
  double rate = 1.0;           // decay rate at factor 0
  double rate_slope = 0.15;
  double fast_rate_ratio = 5.0;  // early-peak component decays this much faster
  double peak_share = 0.5;       // upper bound of the early component's share
  double flow_scale = 0.5;
  double noise_sd = 0.01;
  double floor = 0.1;
};

struct SimConfig {
  std::size_t n_individuals = 5000;
  std::size_t n_variants = 2000;
  std::size_t n_chromosomes = 5;
  std::array<double, kFactors> h2{0.25, 0.15, 0.05};
  double causal_fraction = 0.01;
  std::size_t ld_block_length = 50;
  double flip_probability = 0.05;
  double maf_min = 0.05;
  double maf_max = 0.5;
  std::uint64_t mean_spacing_bp = 10000;
  SpirogramConfig spirogram;
  std::vector<DiseaseConfig> diseases{{"asthma_like", {1.0, 0.0, 0.6}, 0.15, 1.0},
                                      {"copd_like", {0.8, 0.8, 0.0}, 0.15, 1.0}};
  std::array<double, 3> split_fractions{0.6, 0.2, 0.2};
  std::uint64_t seed = 1;

  void validate() const {
    if (n_individuals < 3) throw ConfigError("need at least 3 individuals");
    if (n_variants < 1) throw ConfigError("need at least 1 variant");
    if (n_chromosomes < 1 || n_chromosomes > n_variants) throw ConfigError("chromosome count must be in [1, M]");
    for (double h : h2) {
      if (!(h >= 0.0 && h < 1.0)) throw ConfigError("heritability must lie in [0, 1)");
    }
    if (!(causal_fraction >= 0.0 && causal_fraction <= 1.0)) throw ConfigError("causal fraction must lie in [0, 1]");
    if (ld_block_length < 1) throw ConfigError("LD block length must be positive");
    if (!(flip_probability >= 0.0 && flip_probability <= 0.5)) {
      throw ConfigError("flip probability must lie in [0, 0.5]");
    }
    if (!(maf_min > 0.0 && maf_min <= maf_max && maf_max <= 0.5)) {
      throw ConfigError("MAF bounds must satisfy 0 < min <= max <= 0.5");
    }
    if (mean_spacing_bp < 1) throw ConfigError("variant spacing must be positive");
    for (const auto& d : diseases) {
      if (!(d.prevalence > 0.0 && d.prevalence < 1.0)) throw ConfigError("prevalence of " + d.name + " not in (0,1)");
    }
    const double total = split_fractions[0] + split_fractions[1] + split_fractions[2];
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    for (double f : split_fractions) {
      if (f < 0.0) throw ConfigError("split fractions must be non-negative");
    }
  }
};

// ---------------------------------------------------------------- genotypes

struct GenotypeSim {
  std::vector<Variant> variants;
  Genotypes genotypes;
};

/// Block-copy haplotypes. Each haplotype carries a uniform "ancestor" draw u
/// through an LD block; at every variant u is redrawn with probability
/// 2 * flip_probability, and the allele is 1 iff u < maf. Adjacent variants
/// of equal MAF therefore correlate with r = 1 - 2 * flip, decaying
/// geometrically with distance, while each marginal stays Bernoulli(maf).
inline GenotypeSim simulate_genotypes(const SimConfig& cfg) {
  cfg.validate();
  const std::size_t N = cfg.n_individuals, M = cfg.n_variants, C = cfg.n_chromosomes;
  const Rng root = Rng(cfg.seed).split("genotypes");
  GenotypeSim out;
  out.variants.resize(M);
  std::vector<bool> block_start(M, false);
  {
    Rng vr = root.split("variants");
    std::size_t j = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t count = M / C + (c < M % C ? 1 : 0);
      std::uint64_t pos = 0;
      for (std::size_t k = 0; k < count; ++k, ++j) {
        pos += 1 + vr.below(2 * cfg.mean_spacing_bp - 1);
        out.variants[j] = {static_cast<std::uint32_t>(c + 1), pos, vr.uniform(cfg.maf_min, cfg.maf_max)};
        block_start[j] = (k % cfg.ld_block_length) == 0;
      }
    }
  }
  out.genotypes = Genotypes(N, M);
  const double redraw = 2.0 * cfg.flip_probability;
  const Rng people = root.split("individuals");
  for (std::size_t i = 0; i < N; ++i) {
    Rng r = people.split(static_cast<std::uint64_t>(i));
    for (int hap = 0; hap < 2; ++hap) {
      double u = 0.0;
      for (std::size_t j = 0; j < M; ++j) {
        if (block_start[j] || r.uniform() < redraw) u = r.uniform();
        out.genotypes.at(i, j) += static_cast<std::uint8_t>(u < out.variants[j].maf);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- factors

struct CausalEffect {
  std::size_t factor = 0;
  std::size_t variant = 0;
  double effect = 0.0;  // per standardized dosage
};

struct FactorSim {
  std::vector<double> factors;  // N x kFactors, row-major
  std::vector<CausalEffect> effects;
  std::array<double, kFactors> genetic_variance{};

  double at(std::size_t i, std::size_t f) const { return factors[i * kFactors + f]; }
};

/// factor_f = sum_j w_jf * standardized dosage_j + noise. The weights are
/// rescaled so the sample variance of the genetic score is exactly h2_f and
/// the noise has variance 1 - h2_f (1 when the factor has no causal variant).
inline FactorSim simulate_factors(const Genotypes& g, const SimConfig& cfg) {
  cfg.validate();
  const std::size_t N = g.n, M = g.m;
  const Rng root = Rng(cfg.seed).split("factors");
  FactorSim out;
  out.factors.assign(N * kFactors, 0.0);
  const std::size_t n_causal = static_cast<std::size_t>(std::llround(cfg.causal_fraction * static_cast<double>(M)));
  for (std::size_t f = 0; f < kFactors; ++f) {
    Rng r = root.split(static_cast<std::uint64_t>(f));
    std::vector<std::size_t> ids(M);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    r.shuffle(std::span<std::size_t>(ids));
    ids.resize(cfg.h2[f] > 0.0 ? n_causal : 0);
    std::sort(ids.begin(), ids.end());
    std::vector<double> score(N, 0.0);
    std::vector<CausalEffect> effects;
    for (std::size_t j : ids) {
      const double w = r.normal();
      const StandardizedColumn col = standardize(g, j);
      if (!col.ok) continue;
      for (std::size_t i = 0; i < N; ++i) score[i] += w * col.values[i];
      effects.push_back({f, j, w});
    }
    double mean = std::accumulate(score.begin(), score.end(), 0.0) / static_cast<double>(N);
    double var = 0.0;
    for (double s : score) var += (s - mean) * (s - mean);
    var /= static_cast<double>(N);
    double h2 = 0.0;
    if (var > 0.0) {
      h2 = cfg.h2[f];
      const double k = std::sqrt(h2 / var);
      for (double& s : score) s = (s - mean) * k;
      for (auto& e : effects) e.effect *= k;
    } else {
      std::fill(score.begin(), score.end(), 0.0);
      effects.clear();
    }
    out.genetic_variance[f] = h2;
    const double noise_sd = std::sqrt(1.0 - h2);
    Rng noise = r.split("noise");
    for (std::size_t i = 0; i < N; ++i) out.factors[i * kFactors + f] = score[i] + noise_sd * noise.normal();
    out.effects.insert(out.effects.end(), effects.begin(), effects.end());
  }
  return out;
}

// ---------------------------------------------------------------- waveforms

struct SpirogramCurves {
  std::vector<double> volume;  // kWaveLength samples
  std::vector<double> flow;    // discrete derivative of volume, before scaling
  bool clamped = false;
};

/// Central differences in the interior, one-sided at both ends.
inline std::vector<double> discrete_derivative(const std::vector<double>& v, double dt) {
  const std::size_t n = v.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  d[0] = (v[1] - v[0]) / dt;
  d[n - 1] = (v[n - 1] - v[n - 2]) / dt;
  for (std::size_t l = 1; l + 1 < n; ++l) d[l] = (v[l + 1] - v[l - 1]) / (2.0 * dt);
  return d;
}

/// Noise-free curves. Volume is a two-rate saturation
///   V(t) = A * (1 - (1 - m) exp(-k t) - m exp(-r k t)),
/// with A and k affine in factors 0 and 1 and the fast share m in
/// (0, peak_share) a logistic function of factor 2. V(0) = 0 and V is
/// non-decreasing because both exponentials decay.
inline SpirogramCurves spirogram_curves(double f0, double f1, double f2, const SpirogramConfig& c) {
  SpirogramCurves out;
  double A = c.amplitude + c.amplitude_slope * f0;
  double k = c.rate + c.rate_slope * f1;
  if (!(A >= c.floor)) {
    A = c.floor;
    out.clamped = true;
  }
  if (!(k >= c.floor)) {
    k = c.floor;
    out.clamped = true;
  }
  const double m = c.peak_share / (1.0 + std::exp(-f2));
  const double dt = c.duration / static_cast<double>(kWaveLength - 1);
  out.volume.resize(kWaveLength);
  for (std::size_t l = 0; l < kWaveLength; ++l) {
    const double t = dt * static_cast<double>(l);
    out.volume[l] = -A * ((1.0 - m) * std::expm1(-k * t) + m * std::expm1(-c.fast_rate_ratio * k * t));
  }
  out.flow = discrete_derivative(out.volume, dt);
  return out;
}

/// [1000,2] waveform: channel 0 volume, channel 1 scaled flow, plus i.i.d.
/// Gaussian observation noise when `noise` is given.
inline Tensor<float> render_spirogram(double f0, double f1, double f2, const SpirogramConfig& c, Rng* noise,
                                      bool* clamped = nullptr) {
  const SpirogramCurves s = spirogram_curves(f0, f1, f2, c);
  if (clamped) *clamped = s.clamped;
  Tensor<float> w(Shape{kWaveLength, 2});
  for (std::size_t l = 0; l < kWaveLength; ++l) {
    double v = s.volume[l], fl = c.flow_scale * s.flow[l];
    if (noise) {
      v += c.noise_sd * noise->normal();
      fl += c.noise_sd * noise->normal();
    }
    w(l, 0) = static_cast<float>(v);
    w(l, 1) = static_cast<float>(fl);
  }
  return w;
}

struct WaveformSim {
  Tensor<float> waveforms;  // [N,1000,2]
  std::size_t clamped = 0;
};

inline WaveformSim render_waveforms(const FactorSim& factors, const SimConfig& cfg, bool with_noise = true) {
  const std::size_t N = factors.factors.size() / kFactors;
  const Rng root = Rng(cfg.seed).split("waveforms");
  WaveformSim out{Tensor<float>(Shape{N, kWaveLength, 2}), 0};
  for (std::size_t i = 0; i < N; ++i) {
    Rng r = root.split(static_cast<std::uint64_t>(i));
    bool clamped = false;
    const Tensor<float> w =
        render_spirogram(factors.at(i, 0), factors.at(i, 1), factors.at(i, 2), cfg.spirogram, with_noise ? &r : nullptr,
                         &clamped);
    std::copy(w.data().begin(), w.data().end(), out.waveforms.raw() + i * kWaveLength * 2);
    out.clamped += clamped;
  }
  return out;
}

// ---------------------------------------------------------------- disease

/// Liability-threshold labels: exactly round(prevalence * N) cases, the
/// individuals with the highest liability (ties broken by index).
inline std::vector<std::uint8_t> simulate_disease(const FactorSim& factors, const DiseaseConfig& d, Rng rng) {
  const std::size_t N = factors.factors.size() / kFactors;
  std::vector<double> liability(N);
  for (std::size_t i = 0; i < N; ++i) {
    double l = d.noise_sd * rng.normal();
    for (std::size_t f = 0; f < kFactors; ++f) l += d.weights[f] * factors.at(i, f);
    liability[i] = l;
  }
  const std::size_t cases = static_cast<std::size_t>(std::llround(d.prevalence * static_cast<double>(N)));
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return liability[a] > liability[b]; });
  std::vector<std::uint8_t> labels(N, 0);
  for (std::size_t k = 0; k < cases; ++k) labels[order[k]] = 1;
  return labels;
}

// ---------------------------------------------------------------- splits

/// Largest-remainder allocation of n items to the given fractions.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = fractions[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

inline std::vector<Split> assign_splits(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  const auto sizes = split_sizes(n, fractions);
  std::vector<Split> tags;
  tags.reserve(n);
  tags.insert(tags.end(), sizes[0], Split::Train);
  tags.insert(tags.end(), sizes[1], Split::Val);
  tags.insert(tags.end(), sizes[2], Split::PrsEval);
  Rng r = Rng(seed).split("splits");
  r.shuffle(std::span<Split>(tags));
  return tags;
}

inline std::vector<std::size_t> indices_of(const std::vector<Split>& tags, std::initializer_list<Split> wanted) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (std::find(wanted.begin(), wanted.end(), tags[i]) != wanted.end()) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------- cohort

struct CatalogEntry {
  std::uint32_t chrom = 0;
  std::uint64_t pos = 0;
  std::string trait;
};

struct Cohort {
  std::vector<Variant> variants;
  Genotypes genotypes;
  FactorSim factors;
  Tensor<float> waveforms;
  std::vector<std::string> disease_names;
  std::vector<std::vector<std::uint8_t>> labels;
  std::vector<Split> splits;
  std::size_t clamped_waveforms = 0;
};

inline Cohort simulate_cohort(const SimConfig& cfg) {
  cfg.validate();
  Cohort c;
  GenotypeSim g = simulate_genotypes(cfg);
  c.variants = std::move(g.variants);
  c.genotypes = std::move(g.genotypes);
  c.factors = simulate_factors(c.genotypes, cfg);
  WaveformSim w = render_waveforms(c.factors, cfg);
  c.waveforms = std::move(w.waveforms);
  c.clamped_waveforms = w.clamped;
  const Rng disease_root = Rng(cfg.seed).split("disease");
  for (std::size_t k = 0; k < cfg.diseases.size(); ++k) {
    c.disease_names.push_back(cfg.diseases[k].name);
    c.labels.push_back(simulate_disease(c.factors, cfg.diseases[k], disease_root.split(cfg.diseases[k].name)));
  }
  c.splits = assign_splits(cfg.n_individuals, cfg.split_fractions, cfg.seed);
  return c;
}

/// Reference-catalog stand-in: every other planted causal position carries a
/// lung-function trait, so recovered loci split into known and novel; decoy
/// rows with an unrelated trait sit at random positions.
inline std::vector<CatalogEntry> synthetic_catalog(const Cohort& c, std::uint64_t seed, std::size_t decoys = 20) {
  static const char* kTraits[] = {"FEV1", "Forced vital capacity", "Lung function (FEV1/FVC)", "Expiratory flow"};
  std::vector<CatalogEntry> out;
  std::vector<std::size_t> causal;
  for (const auto& e : c.factors.effects) causal.push_back(e.variant);
  std::sort(causal.begin(), causal.end());
  causal.erase(std::unique(causal.begin(), causal.end()), causal.end());
  for (std::size_t k = 0; k < causal.size(); k += 2) {
    const Variant& v = c.variants[causal[k]];
    out.push_back({v.chrom, v.pos, kTraits[(k / 2) % 4]});
  }
  Rng r = Rng(seed).split("catalog");
  for (std::size_t k = 0; k < decoys && !c.variants.empty(); ++k) {
    const Variant& v = c.variants[r.below(c.variants.size())];
    out.push_back({v.chrom, v.pos, "Body mass index"});
  }
  return out;
}

// ---------------------------------------------------------------- I/O

inline constexpr char kGenoMagic[5] = {'G', 'E', 'N', 'O', '1'};

/// Packed 2-bit dosages, individual-major: "GENO1", u64 N, u64 M (little
/// endian), then ceil(N*M/4) bytes with four dosages per byte, low bits first.
inline void write_genotypes(const std::filesystem::path& path, const Genotypes& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kGenoMagic, 5);
  for (std::uint64_t v : {static_cast<std::uint64_t>(g.n), static_cast<std::uint64_t>(g.m)}) {
    for (int b = 0; b < 8; ++b) os.put(static_cast<char>((v >> (8 * b)) & 0xff));
  }
  std::vector<char> packed((g.n * g.m + 3) / 4, 0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j < g.m; ++j, ++k) packed[k / 4] |= static_cast<char>((g.at(i, j) & 3) << (2 * (k % 4)));
  os.write(packed.data(), static_cast<std::streamsize>(packed.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

inline Genotypes read_genotypes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[5];
  is.read(magic, 5);
  if (!is || !std::equal(magic, magic + 5, kGenoMagic)) throw IoError(path.string() + ": bad genotype magic");
  std::uint64_t dims[2] = {0, 0};
  for (auto& v : dims) {
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(is.get())) << (8 * b);
  }
  if (!is) throw IoError(path.string() + ": truncated header");
  Genotypes g(dims[0], dims[1]);
  std::vector<char> packed((g.n * g.m + 3) / 4);
  is.read(packed.data(), static_cast<std::streamsize>(packed.size()));
  if (static_cast<std::size_t>(is.gcount()) != packed.size()) throw IoError(path.string() + ": truncated dosages");
  std::size_t k = 0;
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j < g.m; ++j, ++k) {
      const auto d = static_cast<std::uint8_t>((static_cast<unsigned char>(packed[k / 4]) >> (2 * (k % 4))) & 3);
      if (d > 2) throw IoError(path.string() + ": dosage out of range");
      g.at(i, j) = d;
    }
  return g;
}

inline void write_variants(const std::filesystem::path& path, const std::vector<Variant>& variants) {
  csv::Table t{{"chrom", "pos", "maf"}, {}};
  for (const auto& v : variants) t.rows.push_back({std::to_string(v.chrom), std::to_string(v.pos), csv::format(v.maf)});
  csv::write(path, t);
}

inline std::vector<Variant> read_variants(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t c = t.column("chrom"), p = t.column("pos"), f = t.column("maf");
  std::vector<Variant> out;
  for (const auto& r : t.rows) {
    out.push_back({csv::parse_or_throw<std::uint32_t>(r.at(c), "chrom"), csv::parse_or_throw<std::uint64_t>(r.at(p), "pos"),
                   csv::parse_or_throw<double>(r.at(f), "maf")});
  }
  return out;
}

/// Writes the cohort files into `dir`: variants.csv, genotypes.geno,
/// waveforms.rgl, factors.csv, effects.csv, labels.csv, splits.csv, catalog.csv.
inline void write_cohort(const std::filesystem::path& dir, const Cohort& c, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  write_variants(dir / "variants.csv", c.variants);
  write_genotypes(dir / "genotypes.geno", c.genotypes);
  save_tensors(dir / "waveforms.rgl", {{"waveforms", c.waveforms}});
  const std::size_t N = c.genotypes.n;
  {
    csv::Table t{{"individual", "factor1", "factor2", "factor3"}, {}};
    for (std::size_t i = 0; i < N; ++i) {
      t.rows.push_back({std::to_string(i), csv::format(c.factors.at(i, 0)), csv::format(c.factors.at(i, 1)),
                        csv::format(c.factors.at(i, 2))});
    }
    csv::write(dir / "factors.csv", t);
  }
  {
    csv::Table t{{"factor", "variant_id", "effect"}, {}};
    for (const auto& e : c.factors.effects) {
      t.rows.push_back({std::to_string(e.factor + 1), std::to_string(e.variant), csv::format(e.effect)});
    }
    csv::write(dir / "effects.csv", t);
  }
  {
    csv::Table t{{"individual"}, {}};
    for (const auto& n : c.disease_names) t.header.push_back(n);
    for (std::size_t i = 0; i < N; ++i) {
      std::vector<std::string> row{std::to_string(i)};
      for (const auto& l : c.labels) row.push_back(std::to_string(static_cast<int>(l[i])));
      t.rows.push_back(std::move(row));
    }
    csv::write(dir / "labels.csv", t);
  }
  {
    csv::Table t{{"individual", "split"}, {}};
    for (std::size_t i = 0; i < N; ++i) t.rows.push_back({std::to_string(i), to_string(c.splits[i])});
    csv::write(dir / "splits.csv", t);
  }
  {
    csv::Table t{{"chrom", "pos", "trait"}, {}};
    for (const auto& e : synthetic_catalog(c, seed)) t.rows.push_back({std::to_string(e.chrom), std::to_string(e.pos), e.trait});
    csv::write(dir / "catalog.csv", t);
  }
}

/// Reads what write_cohort wrote. Factors and effects are optional (a cohort
/// built from real inputs has neither).
inline Cohort read_cohort(const std::filesystem::path& dir) {
  Cohort c;
  c.variants = read_variants(dir / "variants.csv");
  c.genotypes = read_genotypes(dir / "genotypes.geno");
  if (c.genotypes.m != c.variants.size()) throw IoError("genotype and variant tables disagree on M");
  const auto tensors = load_tensors(dir / "waveforms.rgl");
  if (tensors.size() != 1) throw IoError("waveforms.rgl must hold exactly one tensor");
  c.waveforms = tensors[0].value;
  const std::size_t N = c.genotypes.n;
  if (c.waveforms.rank() != 3 || c.waveforms.dim(0) != N) throw IoError("waveform count disagrees with genotypes");
  {
    const csv::Table t = csv::read(dir / "labels.csv");
    if (t.rows.size() != N) throw IoError("labels.csv row count disagrees with genotypes");
    for (std::size_t k = 1; k < t.header.size(); ++k) {
      c.disease_names.push_back(t.header[k]);
      std::vector<std::uint8_t> l(N);
      for (std::size_t i = 0; i < N; ++i) l[i] = csv::parse_or_throw<std::uint8_t>(t.rows[i].at(k), "label") ? 1 : 0;
      c.labels.push_back(std::move(l));
    }
  }
  {
    const csv::Table t = csv::read(dir / "splits.csv");
    if (t.rows.size() != N) throw IoError("splits.csv row count disagrees with genotypes");
    const std::size_t s = t.column("split");
    for (const auto& r : t.rows) c.splits.push_back(parse_split(r.at(s)));
  }
  if (std::filesystem::exists(dir / "factors.csv")) {
    const csv::Table t = csv::read(dir / "factors.csv");
    c.factors.factors.reserve(N * kFactors);
    for (const auto& r : t.rows)
      for (std::size_t f = 0; f < kFactors; ++f) c.factors.factors.push_back(csv::parse_or_throw<double>(r.at(f + 1), "factor"));
  }
  if (std::filesystem::exists(dir / "effects.csv")) {
    const csv::Table t = csv::read(dir / "effects.csv");
    for (const auto& r : t.rows) {
      c.factors.effects.push_back({csv::parse_or_throw<std::size_t>(r.at(0), "factor") - 1,
                                   csv::parse_or_throw<std::size_t>(r.at(1), "variant_id"),
                                   csv::parse_or_throw<double>(r.at(2), "effect")});
    }
  }
  return c;
}

}  // namespace regle::synth

#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "regle/checkpoint.hpp"
#include "regle/config.hpp"
#include "regle/csv.hpp"
#include "regle/errors.hpp"
#include "regle/genassoc.hpp"
#include "regle/metrics.hpp"
#include "regle/models/train.hpp"
#include "regle/prs.hpp"
#include "regle/synthdata.hpp"

namespace regle::experiment {

namespace fs = std::filesystem;
using models::ModelVariant;

/// {2^lo, ..., 2^hi}.
inline std::vector<double> pow2_grid(int lo, int hi) {
  std::vector<double> g;
  for (int i = lo; i <= hi; ++i) g.push_back(std::ldexp(1.0, i));
  return g;
}

struct ExperimentPlan {
  synth::SimConfig cohort;
  models::TrainConfig train = [] {
    models::TrainConfig t;
    t.epochs = 30;
    return t;
  }();
  bool include_ae = true;
  bool include_vae = true;
  std::vector<double> beta_grid = pow2_grid(-2, 7);
  std::vector<double> gamma_grid = pow2_grid(-3, 6);
  std::size_t seeds = 3;
  std::uint64_t first_seed = 1;
  assoc::ClumpParams clump;
  fs::path output = "regle_runs";
  std::size_t jobs = 1;

  /// Restores the full-scale schedule: 10 seeds x 100 epochs.
  void use_paper_grid() {
    seeds = 10;
    train.epochs = 100;
  }

  std::vector<ModelVariant> cells() const {
    std::vector<ModelVariant> out;
    if (include_ae) out.push_back(ModelVariant::ae());
    if (include_vae) out.push_back(ModelVariant::vae());
    for (double b : beta_grid) out.push_back(ModelVariant::beta_vae(b));
    for (double g : gamma_grid) out.push_back(ModelVariant::factor_vae(g));
    return out;
  }

  void validate() const {
    cohort.validate();
    if (seeds < 1) throw ConfigError("seeds per cell must be at least 1");
    if (train.epochs < 1) throw ConfigError("epochs must be at least 1");
    if (train.batch_size < 2) throw ConfigError("batch size must be at least 2");
    if (!(train.lr > 0.0) || !(train.disc_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (train.latent_dim < 2) throw ConfigError("latent dimension must be at least 2");
    if (jobs < 1) throw ConfigError("jobs must be at least 1");
    if (!(clump.r2_max >= 0.0 && clump.r2_max <= 1.0)) throw ConfigError("r2_max must lie in [0, 1]");
    if (!(clump.p_max > 0.0 && clump.p_max <= 1.0)) throw ConfigError("p_max must lie in (0, 1]");
    const auto all = cells();
    if (all.empty()) throw ConfigError("plan has no cells");
    for (const auto& v : all) v.validate();
    std::vector<std::string> ids;
    for (const auto& v : all) ids.push_back(v.label());
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ConfigError("plan lists a cell twice");
  }
};

// ------------------------------------------------------------------ settings

/// One configurable field: config key `section.key`, CLI flag, accessors.
struct Setting {
  std::string name;
  std::string flag;
  std::string help;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
  bool affects_results = true;
};

namespace detail {

template <class T>
Setting scalar(std::string name, std::string flag, std::string help, T& field) {
  return {name, std::move(flag), std::move(help),
          [&field, name](const std::string& v) { field = config::parse_value<T>(v, name); },
          [&field] {
            if constexpr (std::is_floating_point_v<T>) {
              return csv::format(field);
            } else {
              return std::to_string(field);
            }
          }};
}

inline Setting boolean(std::string name, std::string flag, std::string help, bool& field) {
  return {name, std::move(flag), std::move(help),
          [&field, name](const std::string& v) { field = config::parse_bool(v, name); },
          [&field] { return std::string(field ? "true" : "false"); }};
}

template <std::size_t N>
Setting array(std::string name, std::string flag, std::string help, std::array<double, N>& field) {
  return {name, std::move(flag), std::move(help),
          [&field, name](const std::string& v) {
            const auto list = config::parse_list(v, name);
            if (list.size() != N) throw ConfigError(name + " needs " + std::to_string(N) + " values");
            std::copy(list.begin(), list.end(), field.begin());
          },
          [&field] { return config::format_list(std::vector<double>(field.begin(), field.end())); }};
}

inline Setting list(std::string name, std::string flag, std::string help, std::vector<double>& field) {
  return {name, std::move(flag), std::move(help),
          [&field, name](const std::string& v) { field = config::parse_list(v, name); },
          [&field] { return config::format_list(field); }};
}

}  // namespace detail

/// Every plan field except diseases (see apply_entries). The returned
/// accessors reference `plan`, which must outlive them.
inline std::vector<Setting> settings(ExperimentPlan& plan) {
  using namespace detail;
  auto& c = plan.cohort;
  auto& s = plan.cohort.spirogram;
  auto& t = plan.train;
  std::vector<Setting> out{
      scalar("cohort.n_individuals", "n-individuals", "individuals in the synthetic cohort", c.n_individuals),
      scalar("cohort.n_variants", "n-variants", "genotyped variants", c.n_variants),
      scalar("cohort.n_chromosomes", "n-chromosomes", "chromosomes the variants are spread over", c.n_chromosomes),
      array("cohort.h2", "h2", "heritability of the three factors (comma list)", c.h2),
      scalar("cohort.causal_fraction", "causal-fraction", "fraction of variants causal per factor", c.causal_fraction),
      scalar("cohort.ld_block_length", "ld-block-length", "variants per LD block", c.ld_block_length),
      scalar("cohort.flip_probability", "flip-probability", "haplotype switch probability between adjacent variants",
             c.flip_probability),
      scalar("cohort.maf_min", "maf-min", "lower MAF bound", c.maf_min),
      scalar("cohort.maf_max", "maf-max", "upper MAF bound", c.maf_max),
      scalar("cohort.mean_spacing_bp", "mean-spacing-bp", "mean distance between adjacent variants", c.mean_spacing_bp),
      array("cohort.split_fractions", "split-fractions", "TRAIN, VAL, PRS_EVAL fractions (comma list)",
            c.split_fractions),
      scalar("cohort.seed", "seed", "cohort simulation seed", c.seed),
      scalar("spirogram.duration", "spirogram-duration", "seconds spanned by a waveform", s.duration),
      scalar("spirogram.amplitude", "spirogram-amplitude", "volume plateau at factor 0", s.amplitude),
      scalar("spirogram.amplitude_slope", "spirogram-amplitude-slope", "plateau change per unit of factor 0",
             s.amplitude_slope),
      scalar("spirogram.rate", "spirogram-rate", "emptying rate at factor 1", s.rate),
      scalar("spirogram.rate_slope", "spirogram-rate-slope", "rate change per unit of factor 1", s.rate_slope),
      scalar("spirogram.fast_rate_ratio", "spirogram-fast-rate-ratio", "speed of the early component", s.fast_rate_ratio),
      scalar("spirogram.peak_share", "spirogram-peak-share", "maximum share of the early component", s.peak_share),
      scalar("spirogram.flow_scale", "spirogram-flow-scale", "scale of the flow channel", s.flow_scale),
      scalar("spirogram.noise_sd", "spirogram-noise-sd", "measurement noise", s.noise_sd),
      scalar("spirogram.floor", "spirogram-floor", "lower clamp for amplitude and rate", s.floor),
      scalar("train.epochs", "epochs", "training epochs per seed", t.epochs),
      scalar("train.batch_size", "batch-size", "minibatch size", t.batch_size),
      scalar("train.lr", "lr", "Adam learning rate", t.lr),
      scalar("train.latent_dim", "latent-dim", "latent coordinates", t.latent_dim),
      scalar("train.beta1", "beta1", "Adam first-moment decay", t.beta1),
      scalar("train.beta2", "beta2", "Adam second-moment decay", t.beta2),
      scalar("train.adam_eps", "adam-eps", "Adam epsilon", t.adam_eps),
      scalar("train.disc_lr", "disc-lr", "discriminator learning rate", t.disc_lr),
      scalar("train.disc_beta1", "disc-beta1", "discriminator Adam first-moment decay", t.disc_beta1),
      scalar("train.disc_beta2", "disc-beta2", "discriminator Adam second-moment decay", t.disc_beta2),
      scalar("train.eval_batch", "eval-batch", "batch size for evaluation passes", t.eval_batch),
      boolean("plan.include_ae", "include-ae", "train the plain autoencoder cell", plan.include_ae),
      boolean("plan.include_vae", "include-vae", "train the VAE cell", plan.include_vae),
      list("plan.beta_grid", "beta-grid", "beta values for BETA_VAE cells (comma list, may be empty)", plan.beta_grid),
      list("plan.gamma_grid", "gamma-grid", "gamma values for FACTOR_VAE cells (comma list, may be empty)",
           plan.gamma_grid),
      scalar("plan.seeds", "seeds", "training seeds per cell", plan.seeds),
      scalar("plan.first_seed", "first-seed", "first training seed; seeds are consecutive", plan.first_seed),
      scalar("analysis.r2_max", "r2-max", "clumping LD threshold", plan.clump.r2_max),
      scalar("analysis.p_max", "p-max", "clumping and significance p threshold", plan.clump.p_max),
      scalar("analysis.merge_window", "merge-window", "locus merge window in bp", plan.clump.merge_window),
  };
  Setting output{"run.output", "out", "output directory",
                 [&plan](const std::string& v) { plan.output = config::trim(v); },
                 [&plan] { return plan.output.string(); }, false};
  Setting jobs = scalar("run.jobs", "jobs", "cells trained concurrently", plan.jobs);
  jobs.affects_results = false;
  out.push_back(std::move(output));
  out.push_back(std::move(jobs));
  return out;
}

/// Applies parsed config entries. `[disease.NAME]` sections replace the
/// default disease list (in order of first appearance).
inline void apply_entries(ExperimentPlan& plan, const std::vector<config::Entry>& entries) {
  auto table = settings(plan);
  std::map<std::string, const Setting*> by_name;
  for (const auto& s : table) by_name[s.name] = &s;
  std::vector<synth::DiseaseConfig> diseases;
  for (const auto& e : entries) {
    if (e.section.starts_with("disease.")) {
      const std::string name = e.section.substr(8);
      auto it = std::find_if(diseases.begin(), diseases.end(), [&](const auto& d) { return d.name == name; });
      if (it == diseases.end()) {
        diseases.push_back({name, {0.0, 0.0, 0.0}, 0.15, 1.0});
        it = diseases.end() - 1;
      }
      if (e.key == "weights") {
        const auto w = config::parse_list(e.value, e.qualified());
        if (w.size() != synth::kFactors) throw ConfigError(e.qualified() + " needs 3 values");
        std::copy(w.begin(), w.end(), it->weights.begin());
      } else if (e.key == "prevalence") {
        it->prevalence = config::parse_value<double>(e.value, e.qualified());
      } else if (e.key == "noise_sd") {
        it->noise_sd = config::parse_value<double>(e.value, e.qualified());
      } else {
        throw ConfigError("line " + std::to_string(e.line) + ": unknown disease key '" + e.key + "'");
      }
      continue;
    }
    const auto it = by_name.find(e.qualified());
    if (it == by_name.end()) {
      throw ConfigError("line " + std::to_string(e.line) + ": unknown setting '" + e.qualified() + "'");
    }
    it->second->set(e.value);
  }
  if (!diseases.empty()) plan.cohort.diseases = std::move(diseases);
}

/// Canonical config text; parsing it back yields the same plan.
inline std::string to_text(const ExperimentPlan& plan, bool include_run = true) {
  ExperimentPlan copy = plan;
  std::ostringstream os;
  std::string section;
  for (const auto& s : settings(copy)) {
    if (!include_run && !s.affects_results) continue;
    const std::size_t dot = s.name.find('.');
    const std::string sec = s.name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << s.name.substr(dot + 1) << " = " << s.get() << '\n';
  }
  for (const auto& d : plan.cohort.diseases) {
    os << "\n[disease." << d.name << "]\n"
       << "weights = " << config::format_list({d.weights.begin(), d.weights.end()}) << '\n'
       << "prevalence = " << csv::format(d.prevalence) << '\n'
       << "noise_sd = " << csv::format(d.noise_sd) << '\n';
  }
  return os.str();
}

/// Identifies everything that influences results (not the output path or
/// worker count).
inline std::string fingerprint(const ExperimentPlan& plan) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_tag(to_text(plan, false))));
  return buf;
}

// ------------------------------------------------------------------ cell files

inline constexpr const char* kSeedsFile = "seeds.csv";
inline constexpr const char* kTrainingLogFile = "training_log.csv";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kModelFile = "model.rgl";
inline constexpr const char* kModelInfoFile = "model_info.csv";
inline constexpr const char* kLatentsFile = "latents.csv";
inline constexpr const char* kLociFile = "loci.csv";
inline constexpr const char* kLociSummaryFile = "loci_summary.csv";
inline constexpr const char* kLdscFile = "ldsc.csv";
inline constexpr const char* kPrsWeightsFile = "prs_weights.csv";
inline constexpr const char* kPrsScoresFile = "prs_scores.csv";
inline constexpr const char* kCombinationFile = "combination.json";
inline constexpr const char* kAucFile = "auc.csv";

inline std::string gwas_file(std::size_t k) { return "gwas_z" + std::to_string(k) + ".csv"; }

inline std::vector<std::string> train_files() {
  return {kSeedsFile, kTrainingLogFile, kMetricsFile, kModelFile, kModelInfoFile, kLatentsFile};
}

inline std::vector<std::string> gwas_files(std::size_t latent_dim) {
  std::vector<std::string> f{kLociFile, kLociSummaryFile, kLdscFile};
  for (std::size_t k = 0; k < latent_dim; ++k) f.push_back(gwas_file(k));
  return f;
}

inline std::vector<std::string> prs_files() { return {kPrsWeightsFile, kPrsScoresFile, kCombinationFile, kAucFile}; }

inline std::vector<std::string> cell_files(std::size_t latent_dim) {
  auto f = train_files();
  for (auto& g : gwas_files(latent_dim)) f.push_back(g);
  for (auto& p : prs_files()) f.push_back(p);
  return f;
}

inline std::vector<std::string> missing_files(const fs::path& dir, const std::vector<std::string>& names) {
  std::vector<std::string> out;
  for (const auto& n : names) {
    if (!fs::exists(dir / n)) out.push_back((dir / n).string());
  }
  return out;
}

using Logger = std::function<void(const std::string&)>;

// ------------------------------------------------------------------ stages

inline models::Dataset training_data(const synth::Cohort& cohort) {
  const auto tr = synth::indices_of(cohort.splits, {synth::Split::Train});
  const auto va = synth::indices_of(cohort.splits, {synth::Split::Val});
  if (tr.empty() || va.empty()) throw UsageError("cohort needs TRAIN and VAL individuals");
  return {gather_rows(cohort.waveforms, std::span<const std::size_t>(tr)),
          gather_rows(cohort.waveforms, std::span<const std::size_t>(va))};
}

inline void write_metric_rows(csv::Table& t, const std::string& name, const std::vector<double>& values) {
  const double lo = *std::min_element(values.begin(), values.end());
  const double hi = *std::max_element(values.begin(), values.end());
  if (values.size() < 2) {
    t.rows.push_back({name, "1", csv::format(values[0]), "NA", "NA", csv::format(lo), csv::format(hi)});
    return;
  }
  const auto s = metrics::aggregate_seeds(values);
  t.rows.push_back({name, std::to_string(values.size()), csv::format(s.mean), csv::format(s.standard_error),
                    csv::format(s.ci_halfwidth), csv::format(lo), csv::format(hi)});
}

inline prs::ScoreMatrix read_latents(const fs::path& path) {
  const csv::Table t = csv::read(path);
  if (t.header.size() < 2) throw IoError(path.string() + " has no latent columns");
  prs::ScoreMatrix z(t.rows.size(), t.header.size() - 1);
  for (std::size_t i = 0; i < z.n; ++i) {
    if (t.rows[i].size() != t.header.size()) throw IoError("malformed row in " + path.string());
    for (std::size_t k = 0; k < z.k; ++k) z.at(i, k) = csv::parse_or_throw<double>(t.rows[i][k + 1], "latent");
  }
  return z;
}

/// Trains every seed of one cell, writes per-seed metrics, the aggregated
/// summary, the median model and its posterior means for all individuals.
inline void train_cell(const synth::Cohort& cohort, const ModelVariant& variant, const ExperimentPlan& plan,
                       const fs::path& dir, const Logger& log = {}) {
  fs::create_directories(dir);
  const models::Dataset data = training_data(cohort);
  csv::Table seeds{{"seed", "val_mse", "mean_abs_correlation", "final_train_loss", "val_kl", "tc_hat"}, {}};
  csv::Table train_log{{"seed", "epoch", "train_loss", "val_mse", "val_kl", "tc_hat"}, {}};
  std::vector<models::ModelBundle> bundles;
  std::vector<double> mse, corr;
  for (std::size_t s = 0; s < plan.seeds; ++s) {
    models::TrainConfig cfg = plan.train;
    cfg.seed = plan.first_seed + s;
    const std::string seed_str = std::to_string(cfg.seed);
    auto result = models::train(variant, data, cfg, [&](const models::EpochLog& e) {
      train_log.rows.push_back({seed_str, std::to_string(e.epoch), csv::format(e.train_loss), csv::format(e.val_mse),
                                csv::format(e.val_kl), csv::format(e.tc_hat)});
      if (log && (e.epoch == cfg.epochs || e.epoch % 10 == 0)) {
        log(variant.label() + " seed " + seed_str + " epoch " + std::to_string(e.epoch) + " loss " +
            csv::format(e.train_loss) + " val_mse " + csv::format(e.val_mse));
      }
      return true;
    });
    const auto post = models::encode_posterior(result.bundle, data.validation, cfg.eval_batch);
    mse.push_back(metrics::mean_squared_error(data.validation, models::decode_latents(result.bundle, post.mean,
                                                                                      cfg.eval_batch)));
    corr.push_back(metrics::mean_abs_correlation(post.mean));
    const auto& last = result.log.back();
    seeds.rows.push_back({seed_str, csv::format(mse.back()), csv::format(corr.back()), csv::format(last.train_loss),
                          csv::format(last.val_kl), csv::format(last.tc_hat)});
    bundles.push_back(std::move(result.bundle));
  }
  csv::write(dir / kSeedsFile, seeds);
  csv::write(dir / kTrainingLogFile, train_log);

  csv::Table summary{{"metric", "n", "mean", "standard_error", "ci_halfwidth", "min", "max"}, {}};
  write_metric_rows(summary, "val_mse", mse);
  write_metric_rows(summary, "mean_abs_correlation", corr);
  csv::write(dir / kMetricsFile, summary);

  const std::size_t median = metrics::median_index(mse);
  const models::ModelBundle& m = bundles[median];
  save_tensors(dir / kModelFile, m.all_tensors());
  csv::write(dir / kModelInfoFile,
             {{"variant", "beta", "gamma", "latent_dim", "seed", "val_mse"},
              {{models::to_string(variant.tag), variant.beta ? csv::format(*variant.beta) : "NA",
                variant.gamma ? csv::format(*variant.gamma) : "NA", std::to_string(m.latent_dim),
                std::to_string(m.seed), csv::format(mse[median])}}});

  const auto all = models::encode_posterior(m, cohort.waveforms, plan.train.eval_batch);
  csv::Table lat{{"individual"}, {}};
  for (std::size_t k = 0; k < m.latent_dim; ++k) lat.header.push_back("z" + std::to_string(k));
  for (std::size_t i = 0; i < all.mean.dim(0); ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (std::size_t k = 0; k < m.latent_dim; ++k) row.push_back(csv::format(all.mean(i, k)));
    lat.rows.push_back(std::move(row));
  }
  csv::write(dir / kLatentsFile, lat);
}

/// Restores the median model a train stage wrote.
inline models::ModelBundle load_cell_model(const fs::path& dir) {
  const csv::Table info = csv::read(dir / kModelInfoFile);
  if (info.rows.size() != 1) throw IoError(dir.string() + "/" + kModelInfoFile + " must hold one row");
  const auto& r = info.rows[0];
  ModelVariant v{models::parse_variant_tag(r.at(info.column("variant"))), {}, {}};
  if (r.at(info.column("beta")) != "NA") v.beta = csv::parse_or_throw<double>(r.at(info.column("beta")), "beta");
  if (r.at(info.column("gamma")) != "NA") v.gamma = csv::parse_or_throw<double>(r.at(info.column("gamma")), "gamma");
  return models::bundle_from_tensors(v, csv::parse_or_throw<std::size_t>(r.at(info.column("latent_dim")), "latent_dim"),
                                     csv::parse_or_throw<std::uint64_t>(r.at(info.column("seed")), "seed"),
                                     load_tensors(dir / kModelFile));
}

/// GWAS of each latent coordinate on TRAIN+VAL, per-coordinate and union
/// loci with catalog annotation, and LD-score regression per coordinate.
inline void gwas_cell(const synth::Cohort& cohort, const fs::path& catalog_path, const ExperimentPlan& plan,
                      const fs::path& dir) {
  const prs::ScoreMatrix z = read_latents(dir / kLatentsFile);
  const auto rows = prs::analysis_rows(cohort);
  const synth::Genotypes analysis = cohort.genotypes.subset(rows);
  const auto tables = prs::latent_gwas(cohort, analysis, rows, z);
  const assoc::LdMatrix ld(analysis);
  const auto catalog = assoc::read_catalog(catalog_path);
  const auto l = assoc::ld_scores(ld, cohort.variants);

  csv::Table summary{{"phenotype", "loci", "known", "novel"}, {}};
  csv::Table ldsc{{"phenotype", "h2g", "intercept", "h2g_se", "intercept_se"}, {}};
  std::vector<std::vector<assoc::Locus>> per_coordinate;
  auto count_row = [&](const std::string& name, const std::vector<assoc::Locus>& loci) {
    std::size_t known = 0;
    for (const auto& x : loci) known += x.annotation == assoc::Annotation::Known;
    summary.rows.push_back({name, std::to_string(loci.size()), std::to_string(known),
                            std::to_string(loci.size() - known)});
  };
  for (std::size_t k = 0; k < tables.size(); ++k) {
    const std::string name = "z" + std::to_string(k);
    assoc::write_association_csv(dir / gwas_file(k), tables[k], cohort.variants);
    auto loci = assoc::clump_and_merge(tables[k], cohort.variants, ld, plan.clump);
    assoc::annotate_loci(loci, catalog.entries, assoc::default_keywords(), plan.clump.merge_window);
    count_row(name, loci);
    per_coordinate.push_back(std::move(loci));
    std::vector<double> chi2;
    for (const auto& a : tables[k].rows) chi2.push_back(a.chi2);
    const auto fit = assoc::ldsc_regression(chi2, l, static_cast<double>(analysis.n),
                                            static_cast<double>(analysis.m));
    ldsc.rows.push_back({name, csv::format(fit.h2g), csv::format(fit.intercept), csv::format(fit.h2g_se),
                         csv::format(fit.intercept_se)});
  }
  auto merged = assoc::union_loci(per_coordinate, plan.clump.merge_window);
  assoc::annotate_loci(merged, catalog.entries, assoc::default_keywords(), plan.clump.merge_window);
  count_row("union", merged);
  assoc::write_loci_csv(dir / kLociFile, merged);
  csv::write(dir / kLociSummaryFile, summary);
  csv::write(dir / kLdscFile, ldsc);
}

/// Per-coordinate PRS from the stored GWAS tables, per-disease combination
/// and held-out AUC.
inline prs::RegleResult prs_cell(const synth::Cohort& cohort, const ExperimentPlan& plan, const fs::path& dir) {
  std::vector<assoc::AssociationTable> tables;
  for (std::size_t k = 0; fs::exists(dir / gwas_file(k)); ++k) {
    tables.push_back(assoc::read_association_csv(dir / gwas_file(k), k));
    if (tables.back().rows.size() != cohort.variants.size()) throw IoError(gwas_file(k) + " does not match the cohort");
  }
  if (tables.empty()) throw IoError("no GWAS tables in " + dir.string());
  prs::RegleResult r = prs::evaluate_prs(cohort, std::move(tables), plan.clump);
  prs::write_prs_csv(dir / kPrsWeightsFile, r.coordinate_prs);
  prs::write_scores_csv(dir / kPrsScoresFile, r.scores);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  csv::Table auc{{"disease", "combined_auc", "best_single_auc"}, {}};
  for (std::size_t k = 0; k < r.scores.k; ++k) auc.header.push_back("auc_z" + std::to_string(k));
  for (const auto& d : r.diseases) {
    j.push_back(prs::combination_json(d));
    std::vector<std::string> row{d.disease, csv::format(d.combined_auc), csv::format(d.best_single_auc())};
    for (double a : d.single_auc) row.push_back(csv::format(a));
    auc.rows.push_back(std::move(row));
  }
  std::ofstream(dir / kCombinationFile) << j.dump(2) << '\n';
  csv::write(dir / kAucFile, auc);
  return r;
}

// ------------------------------------------------------------------ sweep

inline constexpr const char* kManifestFile = "manifest.csv";
inline constexpr const char* kPlanFile = "plan.txt";
inline constexpr const char* kCohortDir = "cohort";
inline constexpr const char* kCellsDir = "cells";

struct ManifestRow {
  std::string status;  // "done" or "failed"
  std::string fingerprint;
  std::string message;
};

using Manifest = std::map<std::string, ManifestRow>;

inline Manifest read_manifest(const fs::path& path) {
  Manifest m;
  if (!fs::exists(path)) return m;
  const csv::Table t = csv::read(path);
  const std::size_t c = t.column("cell"), s = t.column("status"), f = t.column("fingerprint");
  for (const auto& r : t.rows) {
    if (r.size() < t.header.size()) throw IoError("malformed manifest row in " + path.string());
    std::string msg;
    for (std::size_t i = t.header.size() - 1; i < r.size(); ++i) msg += (i + 1 == t.header.size() ? "" : ",") + r[i];
    m[r[c]] = {r[s], r[f], msg};
  }
  return m;
}

/// Rows follow plan cell order so the file is deterministic.
inline void write_manifest(const fs::path& path, const Manifest& m, const std::vector<ModelVariant>& order) {
  csv::Table t{{"cell", "status", "fingerprint", "message"}, {}};
  for (const auto& v : order) {
    const auto it = m.find(v.label());
    if (it == m.end()) continue;
    std::string msg = it->second.message;
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    t.rows.push_back({v.label(), it->second.status, it->second.fingerprint, msg});
  }
  const fs::path tmp = path.string() + ".tmp";
  csv::write(tmp, t);
  fs::rename(tmp, path);
}

struct SweepSummary {
  std::size_t trained = 0;
  std::size_t skipped = 0;
  std::vector<std::pair<std::string, std::string>> failed;  // cell, message
};

inline fs::path cell_dir(const fs::path& output, const ModelVariant& v) { return output / kCellsDir / v.label(); }

/// Runs every cell of the plan. Completed cells (manifest "done" with this
/// plan's fingerprint and all files present) are skipped; a failing cell is
/// recorded and the sweep moves on.
inline SweepSummary run_sweep(const ExperimentPlan& plan, const Logger& log = {}) {
  plan.validate();
  const fs::path out = plan.output;
  fs::create_directories(out / kCellsDir);
  const std::string fp = fingerprint(plan);
  const std::string plan_text = to_text(plan, false);
  if (fs::exists(out / kPlanFile)) {
    std::ifstream in(out / kPlanFile);
    std::stringstream ss;
    ss << in.rdbuf();
    if (ss.str() != plan_text) {
      throw ConfigError("output directory " + out.string() + " holds results of a different plan");
    }
  } else {
    std::ofstream(out / kPlanFile, std::ios::binary) << plan_text;
  }

  const synth::Cohort cohort = synth::simulate_cohort(plan.cohort);
  const fs::path cohort_dir = out / kCohortDir;
  if (!missing_files(cohort_dir, {"variants.csv", "genotypes.geno", "waveforms.rgl", "labels.csv", "splits.csv",
                                  "catalog.csv"})
           .empty()) {
    synth::write_cohort(cohort_dir, cohort, plan.cohort.seed);
  }

  const auto cells = plan.cells();
  Manifest manifest = read_manifest(out / kManifestFile);
  std::vector<ModelVariant> todo;
  SweepSummary summary;
  for (const auto& v : cells) {
    const auto it = manifest.find(v.label());
    const bool complete = it != manifest.end() && it->second.status == "done" && it->second.fingerprint == fp &&
                          missing_files(cell_dir(out, v), cell_files(plan.train.latent_dim)).empty();
    if (complete) {
      ++summary.skipped;
    } else {
      todo.push_back(v);
    }
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto locked_log = [&](const std::string& s) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(mu);
    log(s);
  };
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      const ModelVariant& v = todo[i];
      const fs::path dir = cell_dir(out, v);
      ManifestRow row{"done", fp, ""};
      try {
        fs::remove_all(dir);
        locked_log("cell " + v.label() + ": training " + std::to_string(plan.seeds) + " seeds");
        train_cell(cohort, v, plan, dir, locked_log);
        locked_log("cell " + v.label() + ": GWAS, loci, LDSC");
        gwas_cell(cohort, cohort_dir / "catalog.csv", plan, dir);
        locked_log("cell " + v.label() + ": PRS");
        prs_cell(cohort, plan, dir);
      } catch (const Error& e) {
        row = {"failed", fp, std::string(to_string(e.kind())) + ": " + e.what()};
      } catch (const std::exception& e) {
        row = {"failed", fp, std::string("internal: ") + e.what()};
      }
      std::lock_guard<std::mutex> lock(mu);
      if (row.status == "done") {
        ++summary.trained;
      } else {
        summary.failed.emplace_back(v.label(), row.message);
        if (log) log("cell " + v.label() + " failed: " + row.message);
      }
      manifest[v.label()] = row;
      write_manifest(out / kManifestFile, manifest, cells);
    }
  };
  const std::size_t n_threads = std::min(plan.jobs, std::max<std::size_t>(todo.size(), 1));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  write_manifest(out / kManifestFile, manifest, cells);
  return summary;
}

}  // namespace regle::experiment

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "regle/csv.hpp"
#include "regle/errors.hpp"
#include "regle/genassoc.hpp"
#include "regle/synthdata.hpp"

namespace regle::prs {

using synth::Genotypes;
using synth::Variant;

/// Scores weight standardized dosages. Mean and sd are frozen from the
/// individuals the GWAS saw, so held-out scoring uses the same scale.
struct CoordinatePrs {
  std::vector<std::size_t> variants;
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> sds;

  bool empty() const { return variants.empty(); }
};

struct PrsScores {
  std::vector<double> scores;
  bool empty_selection = false;
};

/// Selects clumped index variants and freezes their standardization on
/// `reference` (the genotypes the association table was computed on).
inline CoordinatePrs build_coordinate_prs(const assoc::AssociationTable& t, const std::vector<Variant>& variants,
                                          const Genotypes& reference, const assoc::LdMatrix& ld,
                                          const assoc::ClumpParams& params = {}) {
  if (t.rows.size() != reference.m || variants.size() != reference.m) {
    throw UsageError("association table, variants and genotypes are misaligned");
  }
  CoordinatePrs p;
  for (const auto& c : assoc::clump(t, variants, ld, params)) p.variants.push_back(c.index);
  std::sort(p.variants.begin(), p.variants.end());
  const double n = static_cast<double>(reference.n);
  for (std::size_t j : p.variants) {
    const std::uint8_t* col = reference.column(j);
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < reference.n; ++i) {
      s += col[i];
      ss += static_cast<double>(col[i]) * col[i];
    }
    const double mean = s / n;
    p.weights.push_back(t.rows[j].beta);
    p.means.push_back(mean);
    p.sds.push_back(std::sqrt(std::max(0.0, ss / n - mean * mean)));
  }
  return p;
}

inline std::vector<double> score(const CoordinatePrs& p, const Genotypes& g) {
  std::vector<double> out(g.n, 0.0);
  for (std::size_t k = 0; k < p.variants.size(); ++k) {
    if (p.variants[k] >= g.m) throw UsageError("PRS variant id exceeds genotype matrix");
    if (!(p.sds[k] > 0.0)) continue;  // monomorphic variants never pass clumping
    const std::uint8_t* col = g.column(p.variants[k]);
    const double w = p.weights[k] / p.sds[k];
    for (std::size_t i = 0; i < g.n; ++i) out[i] += w * (col[i] - p.means[k]);
  }
  return out;
}

/// One-shot form: selection and standardization both on `g`.
inline PrsScores coordinate_prs(const assoc::AssociationTable& t, const std::vector<Variant>& variants,
                                const Genotypes& g, const assoc::ClumpParams& params = {}) {
  const CoordinatePrs p = build_coordinate_prs(t, variants, g, assoc::LdMatrix(g), params);
  return {score(p, g), p.empty()};
}

// ------------------------------------------------------------------ AUC

/// Mann-Whitney AUC from midranks: P(case > control) + P(tie)/2.
inline double auc_roc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc_roc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t cases = 0;
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo + 1;
    while (hi < n && scores[order[hi]] == scores[order[lo]]) ++hi;
    const double midrank = 0.5 * static_cast<double>(lo + 1 + hi);
    for (std::size_t k = lo; k < hi; ++k) {
      if (labels[order[k]]) {
        rank_sum += midrank;
        ++cases;
      }
    }
    lo = hi;
  }
  const std::size_t controls = n - cases;
  if (cases == 0 || controls == 0) throw MetricError("auc_roc needs both cases and controls");
  const double n1 = static_cast<double>(cases);
  return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * static_cast<double>(controls));
}

// ------------------------------------------------------------------ combination

inline constexpr double kRidge = 1e-6;
inline constexpr double kCoefTolerance = 1e-8;
inline constexpr int kMaxIterations = 100;
inline constexpr std::size_t kMinTrainingIndividuals = 50;

/// Logistic model on standardized columns; `means`/`sds` come from the
/// training rows. A zero-sd column standardizes to 0.
struct Combination {
  std::vector<double> weights;
  double intercept = 0.0;
  std::vector<double> means;
  std::vector<double> sds;
  int iterations = 0;
  bool converged = false;

  double logit(std::span<const double> row) const {
    double z = intercept;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (sds[k] > 0.0) z += weights[k] * (row[k] - means[k]) / sds[k];
    }
    return z;
  }
};

/// Row-major N x K score matrix.
struct ScoreMatrix {
  std::size_t n = 0, k = 0;
  std::vector<double> values;

  ScoreMatrix() = default;
  ScoreMatrix(std::size_t rows, std::size_t cols) : n(rows), k(cols), values(rows * cols, 0.0) {}
  double& at(std::size_t i, std::size_t j) { return values[i * k + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * k + j]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * k, k}; }
};

namespace detail {

// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

/// Ridge-penalized logistic regression by damped IRLS. The intercept is not
/// penalized. Step halving keeps the penalized objective non-increasing, which
/// keeps separable data finite instead of overflowing.
inline Combination fit_combination(const ScoreMatrix& x, std::span<const std::uint8_t> labels,
                                   const std::vector<bool>& train_mask) {
  if (labels.size() != x.n || train_mask.size() != x.n) throw DimensionError("fit_combination: inputs differ in length");
  if (x.k == 0) throw UsageError("fit_combination needs at least one score column");
  std::vector<std::size_t> rows;
  std::size_t cases = 0;
  for (std::size_t i = 0; i < x.n; ++i) {
    if (train_mask[i]) {
      rows.push_back(i);
      cases += labels[i] != 0;
    }
  }
  if (rows.size() < kMinTrainingIndividuals) {
    throw UsageError("fit_combination needs at least 50 training individuals, got " + std::to_string(rows.size()));
  }
  if (cases == 0 || cases == rows.size()) throw FitError("training labels contain a single class");

  Combination c;
  const std::size_t K = x.k, n = rows.size();
  c.means.assign(K, 0.0);
  c.sds.assign(K, 0.0);
  for (std::size_t j = 0; j < K; ++j) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i : rows) s += x.at(i, j);
    c.means[j] = s / static_cast<double>(n);
    for (std::size_t i : rows) ss += (x.at(i, j) - c.means[j]) * (x.at(i, j) - c.means[j]);
    c.sds[j] = std::sqrt(ss / static_cast<double>(n));
  }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K + 1));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const auto R = static_cast<Eigen::Index>(r);
    X(R, 0) = 1.0;
    for (std::size_t j = 0; j < K; ++j) {
      X(R, static_cast<Eigen::Index>(j + 1)) = c.sds[j] > 0.0 ? (x.at(rows[r], j) - c.means[j]) / c.sds[j] : 0.0;
    }
    y(R) = labels[rows[r]] ? 1.0 : 0.0;
  }
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(K + 1), kRidge);
  penalty(0) = 0.0;

  auto objective = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd z = X * b;
    double f = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) f += detail::softplus(z(i)) - y(i) * z(i);
    return f + 0.5 * b.cwiseProduct(penalty).dot(b);
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K + 1));
  const double prior = static_cast<double>(cases) / static_cast<double>(n);
  beta(0) = std::log(prior / (1.0 - prior));
  double f = objective(beta);
  for (c.iterations = 1; c.iterations <= kMaxIterations; ++c.iterations) {
    const Eigen::VectorXd z = X * beta;
    Eigen::VectorXd p(z.size()), w(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      p(i) = detail::sigmoid(z(i));
      w(i) = p(i) * (1.0 - p(i));
    }
    const Eigen::VectorXd grad = X.transpose() * (p - y) + penalty.cwiseProduct(beta);
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    H.diagonal() += penalty;
    // Guards the unpenalized intercept when every weight underflows.
    H(0, 0) = std::max(H(0, 0), 1e-12);
    Eigen::VectorXd step = H.ldlt().solve(grad);
    if (!step.allFinite()) step = grad;
    double t = 1.0, f_new = objective(beta - step);
    for (int halvings = 0; halvings < 60 && !(f_new <= f); ++halvings) {
      t *= 0.5;
      f_new = objective(beta - t * step);
    }
    const Eigen::VectorXd delta = t * step;
    if (!(f_new <= f)) {
      c.converged = true;  // no descent direction left at working precision
      break;
    }
    beta -= delta;
    f = f_new;
    if (delta.cwiseAbs().maxCoeff() < kCoefTolerance) {
      c.converged = true;
      break;
    }
  }
  c.iterations = std::min(c.iterations, kMaxIterations);
  c.intercept = beta(0);
  c.weights.resize(K);
  for (std::size_t j = 0; j < K; ++j) c.weights[j] = beta(static_cast<Eigen::Index>(j + 1));
  return c;
}

inline std::vector<double> predict_logits(const Combination& c, const ScoreMatrix& x) {
  if (x.k != c.weights.size()) throw DimensionError("score matrix width does not match the combination");
  std::vector<double> out(x.n);
  for (std::size_t i = 0; i < x.n; ++i) out[i] = c.logit(x.row(i));
  return out;
}

inline double sigmoid(double z) { return detail::sigmoid(z); }

// ------------------------------------------------------------------ pipeline

struct DiseaseEvaluation {
  std::string disease;
  Combination combination;
  double combined_auc = 0.0;
  std::vector<double> single_auc;  // one-column combination per coordinate
  double best_single_auc() const { return *std::max_element(single_auc.begin(), single_auc.end()); }
};

struct RegleResult {
  std::vector<assoc::AssociationTable> gwas;  // per coordinate, on the analysis set
  std::vector<CoordinatePrs> coordinate_prs;
  ScoreMatrix scores;  // all individuals x coordinates
  std::vector<DiseaseEvaluation> diseases;
  std::vector<std::size_t> analysis_rows;
  std::vector<std::size_t> eval_rows;
};

/// Individuals the GWAS and the combination may see (TRAIN + VAL).
inline std::vector<std::size_t> analysis_rows(const synth::Cohort& cohort) {
  return synth::indices_of(cohort.splits, {synth::Split::Train, synth::Split::Val});
}

/// GWAS of every latent column on the analysis rows. `latents` is N x K
/// row-major over all cohort individuals.
inline std::vector<assoc::AssociationTable> latent_gwas(const synth::Cohort& cohort, const Genotypes& analysis,
                                                        const std::vector<std::size_t>& rows,
                                                        const ScoreMatrix& latents) {
  if (latents.n != cohort.genotypes.n) throw DimensionError("latent matrix rows do not match the cohort");
  std::vector<assoc::AssociationTable> out;
  for (std::size_t k = 0; k < latents.k; ++k) {
    std::vector<double> y(rows.size());
    for (std::size_t a = 0; a < y.size(); ++a) y[a] = latents.at(rows[a], k);
    out.push_back(assoc::gwas(y, analysis, {}, k));
  }
  return out;
}

/// Builds one PRS per association table, fits a per-disease combination on
/// TRAIN+VAL labels and evaluates AUC on PRS_EVAL.
inline RegleResult evaluate_prs(const synth::Cohort& cohort, std::vector<assoc::AssociationTable> tables,
                                const assoc::ClumpParams& params = {}) {
  const std::size_t N = cohort.genotypes.n;
  if (tables.empty()) throw UsageError("evaluate_prs needs at least one association table");
  RegleResult r;
  r.analysis_rows = analysis_rows(cohort);
  r.eval_rows = synth::indices_of(cohort.splits, {synth::Split::PrsEval});
  if (r.eval_rows.empty()) throw UsageError("cohort has no PRS_EVAL individuals");
  const Genotypes analysis = cohort.genotypes.subset(r.analysis_rows);
  const assoc::LdMatrix ld(analysis);
  r.gwas = std::move(tables);
  r.scores = ScoreMatrix(N, r.gwas.size());
  for (std::size_t k = 0; k < r.gwas.size(); ++k) {
    r.coordinate_prs.push_back(build_coordinate_prs(r.gwas[k], cohort.variants, analysis, ld, params));
    const std::vector<double> s = score(r.coordinate_prs.back(), cohort.genotypes);
    for (std::size_t i = 0; i < N; ++i) r.scores.at(i, k) = s[i];
  }
  std::vector<bool> train_mask(N, false);
  for (std::size_t i : r.analysis_rows) train_mask[i] = true;
  auto held_out_auc = [&](const Combination& c, const ScoreMatrix& x, const std::vector<std::uint8_t>& labels) {
    std::vector<double> s;
    std::vector<std::uint8_t> l;
    for (std::size_t i : r.eval_rows) {
      s.push_back(c.logit(x.row(i)));
      l.push_back(labels[i]);
    }
    return auc_roc(s, l);
  };
  for (std::size_t d = 0; d < cohort.labels.size(); ++d) {
    DiseaseEvaluation e;
    e.disease = cohort.disease_names[d];
    e.combination = fit_combination(r.scores, cohort.labels[d], train_mask);
    e.combined_auc = held_out_auc(e.combination, r.scores, cohort.labels[d]);
    for (std::size_t k = 0; k < r.scores.k; ++k) {
      ScoreMatrix one(N, 1);
      for (std::size_t i = 0; i < N; ++i) one.at(i, 0) = r.scores.at(i, k);
      e.single_auc.push_back(held_out_auc(fit_combination(one, cohort.labels[d], train_mask), one, cohort.labels[d]));
    }
    r.diseases.push_back(std::move(e));
  }
  return r;
}

/// Full REGLE pass from latent coordinates: GWAS, per-coordinate PRS,
/// combination, held-out AUC.
inline RegleResult run_regle(const synth::Cohort& cohort, const ScoreMatrix& latents,
                             const assoc::ClumpParams& params = {}) {
  const auto rows = analysis_rows(cohort);
  const Genotypes analysis = cohort.genotypes.subset(rows);
  return evaluate_prs(cohort, latent_gwas(cohort, analysis, rows, latents), params);
}

// ------------------------------------------------------------------ I/O

inline void write_prs_csv(const std::filesystem::path& path, const std::vector<CoordinatePrs>& prs) {
  csv::Table t;
  t.header = {"coordinate", "variant_id", "weight", "mean", "sd"};
  for (std::size_t k = 0; k < prs.size(); ++k) {
    for (std::size_t v = 0; v < prs[k].variants.size(); ++v) {
      t.rows.push_back({std::to_string(k), std::to_string(prs[k].variants[v]), csv::format(prs[k].weights[v]),
                        csv::format(prs[k].means[v]), csv::format(prs[k].sds[v])});
    }
  }
  csv::write(path, t);
}

inline std::vector<CoordinatePrs> read_prs_csv(const std::filesystem::path& path, std::size_t coordinates) {
  const csv::Table t = csv::read(path);
  const std::size_t ck = t.column("coordinate"), cv = t.column("variant_id"), cw = t.column("weight"),
                    cm = t.column("mean"), cs = t.column("sd");
  std::vector<CoordinatePrs> out(coordinates);
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw IoError("malformed PRS row in " + path.string());
    const auto k = csv::parse_or_throw<std::size_t>(row[ck], "coordinate");
    if (k >= coordinates) throw IoError("PRS coordinate " + row[ck] + " out of range");
    out[k].variants.push_back(csv::parse_or_throw<std::size_t>(row[cv], "variant_id"));
    out[k].weights.push_back(csv::parse_or_throw<double>(row[cw], "weight"));
    out[k].means.push_back(csv::parse_or_throw<double>(row[cm], "mean"));
    out[k].sds.push_back(csv::parse_or_throw<double>(row[cs], "sd"));
  }
  return out;
}

inline nlohmann::ordered_json combination_json(const DiseaseEvaluation& e) {
  nlohmann::ordered_json j;
  j["disease"] = e.disease;
  j["intercept"] = e.combination.intercept;
  j["weights"] = e.combination.weights;
  j["score_means"] = e.combination.means;
  j["score_sds"] = e.combination.sds;
  j["iterations"] = e.combination.iterations;
  j["converged"] = e.combination.converged;
  j["heldout_auc"] = e.combined_auc;
  j["single_coordinate_auc"] = e.single_auc;
  return j;
}

inline void write_scores_csv(const std::filesystem::path& path, const ScoreMatrix& s) {
  csv::Table t;
  t.header = {"individual"};
  for (std::size_t k = 0; k < s.k; ++k) t.header.push_back("prs" + std::to_string(k));
  for (std::size_t i = 0; i < s.n; ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (std::size_t k = 0; k < s.k; ++k) row.push_back(csv::format(s.at(i, k)));
    t.rows.push_back(std::move(row));
  }
  csv::write(path, t);
}

}  // namespace regle::prs

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "regle/csv.hpp"
#include "regle/errors.hpp"
#include "regle/synthdata.hpp"

namespace regle::assoc {

using synth::Genotypes;
using synth::Variant;

inline constexpr double kPFloor = 1e-300;
inline constexpr double kGwsThreshold = 5e-8;
inline constexpr std::uint64_t kMergeWindow = 250000;

/// Two-sided p of a 1-df chi-square statistic, floored at 1e-300.
inline double chi2_p(double chi2) {
  if (!(chi2 > 0.0)) return 1.0;
  return std::max(std::erfc(std::sqrt(0.5 * chi2)), kPFloor);
}

struct Association {
  double beta = 0.0;
  double se = 0.0;
  double chi2 = 0.0;
  double p = 1.0;
  bool monomorphic = false;
};

struct AssociationTable {
  std::size_t phenotype = 0;  // latent coordinate index
  std::vector<Association> rows;
};

/// Copy of v with mean 0 and unit population variance.
inline std::vector<double> standardize_vector(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  if (!(var > 0.0)) throw AnalysisError("phenotype has zero variance");
  const double inv = 1.0 / std::sqrt(var);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) * inv;
  return out;
}

/// Per-variant OLS of the standardized phenotype on one standardized dosage
/// plus an intercept and optional covariate columns (N x C, column-major).
/// The covariates are projected out once (Frisch-Waugh-Lovell), so each
/// variant costs one residualization and two inner products.
inline AssociationTable gwas(const std::vector<double>& phenotype, const Genotypes& g,
                             const Eigen::MatrixXd& covariates = Eigen::MatrixXd(), std::size_t phenotype_id = 0) {
  const std::size_t N = g.n;
  if (phenotype.size() != N) {
    throw DimensionError("phenotype has " + std::to_string(phenotype.size()) + " rows, genotypes " + std::to_string(N));
  }
  if (covariates.size() && static_cast<std::size_t>(covariates.rows()) != N) {
    throw DimensionError("covariate rows disagree with genotypes");
  }
  Eigen::MatrixXd design(static_cast<Eigen::Index>(N), 1 + covariates.cols());
  design.col(0).setOnes();
  if (covariates.cols()) design.rightCols(covariates.cols()) = covariates;
  const Eigen::Index k = design.cols();
  if (static_cast<Eigen::Index>(N) <= k + 1) throw AnalysisError("too few individuals for the covariate model");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < k) throw AnalysisError("covariate matrix is rank deficient");
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(N), k);
  auto residualize = [&](Eigen::VectorXd& v) { v -= Q * (Q.transpose() * v); };

  const std::vector<double> ys = standardize_vector(phenotype);
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(N));
  residualize(y);
  const double yy = y.squaredNorm();
  const double df = static_cast<double>(N) - static_cast<double>(k) - 1.0;

  AssociationTable t;
  t.phenotype = phenotype_id;
  t.rows.resize(g.m);
  Eigen::VectorXd x(static_cast<Eigen::Index>(N));
  for (std::size_t j = 0; j < g.m; ++j) {
    const synth::StandardizedColumn col = synth::standardize(g, j);
    Association& a = t.rows[j];
    if (!col.ok) {
      a.monomorphic = true;
      continue;
    }
    x = Eigen::Map<const Eigen::VectorXd>(col.values.data(), static_cast<Eigen::Index>(N));
    residualize(x);
    const double xx = x.squaredNorm();
    if (!(xx > 1e-9 * static_cast<double>(N))) {  // dosage explained by covariates
      a.monomorphic = true;
      continue;
    }
    const double xy = x.dot(y);
    a.beta = xy / xx;
    const double rss = std::max(0.0, yy - a.beta * xy);
    a.se = std::sqrt(rss / df / xx);
    a.chi2 = a.se > 0.0 ? (a.beta / a.se) * (a.beta / a.se) : std::numeric_limits<double>::infinity();
    a.p = a.se > 0.0 ? chi2_p(a.chi2) : kPFloor;
  }
  return t;
}

// ---------------------------------------------------------------- LD

/// Standardized dosage columns for repeated r^2 queries. Monomorphic columns
/// are flagged and have r^2 = 0 with everything but themselves.
class LdMatrix {
 public:
  explicit LdMatrix(const Genotypes& g) : n_(g.n), m_(g.m), z_(g.n * g.m), ok_(g.m) {
    for (std::size_t j = 0; j < m_; ++j) {
      const auto col = synth::standardize(g, j);
      ok_[j] = col.ok;
      std::copy(col.values.begin(), col.values.end(), z_.begin() + static_cast<std::ptrdiff_t>(j * n_));
    }
  }

  std::size_t individuals() const { return n_; }

  double r(std::size_t a, std::size_t b) const {
    if (a == b) return ok_[a] ? 1.0 : 0.0;
    if (!ok_[a] || !ok_[b]) return 0.0;
    const double* x = z_.data() + a * n_;
    const double* y = z_.data() + b * n_;
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i) s += x[i] * y[i];
    return std::clamp(s / static_cast<double>(n_), -1.0, 1.0);
  }

  double r2(std::size_t a, std::size_t b) const {
    const double v = r(a, b);
    return v * v;
  }

 private:
  std::size_t n_, m_;
  std::vector<double> z_;
  std::vector<bool> ok_;
};

// ---------------------------------------------------------------- loci

enum class Annotation { Unannotated, Known, Novel };

inline std::string to_string(Annotation a) {
  switch (a) {
    case Annotation::Known: return "KNOWN";
    case Annotation::Novel: return "NOVEL";
    case Annotation::Unannotated: return "NA";
  }
  return "?";
}

struct Locus {
  std::uint32_t chrom = 0;
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  std::size_t lead = 0;
  double lead_p = 1.0;
  std::vector<std::size_t> members;  // sorted variant ids
  Annotation annotation = Annotation::Unannotated;
};

struct ClumpParams {
  double r2_max = 0.1;
  double p_max = kGwsThreshold;
  std::uint64_t merge_window = kMergeWindow;
};

struct Clump {
  std::size_t index = 0;
  std::vector<std::size_t> members;  // includes the index variant
};

/// Greedy LD clumping: the smallest-p remaining hit becomes an index variant
/// and absorbs remaining hits on its chromosome with r^2 > r2_max. Ties in p
/// go to the lower variant id.
inline std::vector<Clump> clump(const AssociationTable& t, const std::vector<Variant>& variants, const LdMatrix& ld,
                                const ClumpParams& params = {}) {
  if (t.rows.size() != variants.size()) throw UsageError("association table and variant table are misaligned");
  std::vector<std::size_t> hits;
  for (std::size_t j = 0; j < t.rows.size(); ++j) {
    if (!t.rows[j].monomorphic && t.rows[j].p <= params.p_max) hits.push_back(j);
  }
  std::stable_sort(hits.begin(), hits.end(), [&](std::size_t a, std::size_t b) { return t.rows[a].p < t.rows[b].p; });
  std::vector<bool> taken(hits.size(), false);
  std::vector<Clump> out;
  for (std::size_t a = 0; a < hits.size(); ++a) {
    if (taken[a]) continue;
    taken[a] = true;
    Clump c{hits[a], {hits[a]}};
    for (std::size_t b = a + 1; b < hits.size(); ++b) {
      if (taken[b] || variants[hits[b]].chrom != variants[hits[a]].chrom) continue;
      if (ld.r2(hits[a], hits[b]) > params.r2_max) {
        taken[b] = true;
        c.members.push_back(hits[b]);
      }
    }
    std::sort(c.members.begin(), c.members.end());
    out.push_back(std::move(c));
  }
  return out;
}

inline Locus make_locus(const std::vector<std::size_t>& members, const AssociationTable& t,
                        const std::vector<Variant>& variants) {
  Locus l;
  l.members = members;
  std::sort(l.members.begin(), l.members.end());
  l.chrom = variants[l.members.front()].chrom;
  l.start = std::numeric_limits<std::uint64_t>::max();
  l.lead = l.members.front();
  l.lead_p = t.rows[l.lead].p;
  for (std::size_t v : l.members) {
    l.start = std::min(l.start, variants[v].pos);
    l.end = std::max(l.end, variants[v].pos);
    if (t.rows[v].p < l.lead_p) {
      l.lead_p = t.rows[v].p;
      l.lead = v;
    }
  }
  return l;
}

/// Clumps, then merges index variants on one chromosome whose positions lie
/// within merge_window of the previous index variant (single linkage). Loci
/// come back ordered by (chromosome, start).
inline std::vector<Locus> clump_and_merge(const AssociationTable& t, const std::vector<Variant>& variants,
                                          const LdMatrix& ld, const ClumpParams& params = {}) {
  std::vector<Clump> clumps = clump(t, variants, ld, params);
  std::sort(clumps.begin(), clumps.end(), [&](const Clump& a, const Clump& b) {
    const Variant &va = variants[a.index], &vb = variants[b.index];
    return va.chrom != vb.chrom ? va.chrom < vb.chrom : va.pos < vb.pos;
  });
  std::vector<Locus> out;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < clumps.size(); ++i) {
    const Variant& v = variants[clumps[i].index];
    const bool joins = i > 0 && variants[clumps[i - 1].index].chrom == v.chrom &&
                       v.pos - variants[clumps[i - 1].index].pos <= params.merge_window;
    if (!joins && !members.empty()) {
      out.push_back(make_locus(members, t, variants));
      members.clear();
    }
    members.insert(members.end(), clumps[i].members.begin(), clumps[i].members.end());
  }
  if (!members.empty()) out.push_back(make_locus(members, t, variants));
  // Genomic order. Differs from index order when a locus nests inside the
  // span of another whose index variant is further away.
  std::sort(out.begin(), out.end(), [](const Locus& a, const Locus& b) {
    return std::tie(a.chrom, a.start, a.end, a.lead) < std::tie(b.chrom, b.start, b.end, b.lead);
  });
  return out;
}

/// Merges loci from several phenotypes: loci on one chromosome whose spans
/// come within `window` of each other collapse into one.
inline std::vector<Locus> union_loci(const std::vector<std::vector<Locus>>& lists, std::uint64_t window = kMergeWindow) {
  std::vector<Locus> all;
  for (const auto& l : lists) all.insert(all.end(), l.begin(), l.end());
  std::sort(all.begin(), all.end(), [](const Locus& a, const Locus& b) {
    return a.chrom != b.chrom ? a.chrom < b.chrom : a.start < b.start;
  });
  std::vector<Locus> out;
  for (Locus& l : all) {
    if (!out.empty() && out.back().chrom == l.chrom && l.start <= out.back().end + window) {
      Locus& m = out.back();
      m.end = std::max(m.end, l.end);
      if (l.lead_p < m.lead_p) {
        m.lead_p = l.lead_p;
        m.lead = l.lead;
      }
      std::vector<std::size_t> merged;
      std::set_union(m.members.begin(), m.members.end(), l.members.begin(), l.members.end(),
                     std::back_inserter(merged));
      m.members = std::move(merged);
      if (l.annotation == Annotation::Known) m.annotation = Annotation::Known;
    } else {
      out.push_back(std::move(l));
    }
  }
  return out;
}

// ---------------------------------------------------------------- annotation

/// Default lung-function trait keywords for the reference catalog search.
inline const std::vector<std::string>& default_keywords() {
  static const std::vector<std::string> k{"asthma",        "chronic obstructive pulmonary disease",
                                          "copd",          "expiratory flow",
                                          "fev1",          "forced expiratory",
                                          "forced vital capacity", "lung function"};
  return k;
}

inline std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool matches_keyword(const std::string& trait, const std::vector<std::string>& keywords) {
  const std::string t = lowercase(trait);
  for (const auto& k : keywords) {
    if (t.find(lowercase(k)) != std::string::npos) return true;
  }
  return false;
}

struct Catalog {
  std::vector<synth::CatalogEntry> entries;
  std::size_t malformed = 0;
};

/// CSV (chrom,pos,trait). Rows that do not parse are skipped and counted.
/// Traits may contain commas; everything after the second comma is the trait.
inline Catalog read_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog " + path.string());
  Catalog c;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t a = line.find(','), b = a == std::string::npos ? a : line.find(',', a + 1);
    synth::CatalogEntry e;
    if (b == std::string::npos || !csv::parse(std::string_view(line).substr(0, a), e.chrom) ||
        !csv::parse(std::string_view(line).substr(a + 1, b - a - 1), e.pos) || b + 1 >= line.size()) {
      ++c.malformed;
      continue;
    }
    e.trait = line.substr(b + 1);
    c.entries.push_back(std::move(e));
  }
  return c;
}

/// Tags each locus KNOWN iff a keyword-matching catalog position lies within
/// [start - window, end + window] on its chromosome, NOVEL otherwise.
inline void annotate_loci(std::vector<Locus>& loci, const std::vector<synth::CatalogEntry>& catalog,
                          const std::vector<std::string>& keywords = default_keywords(),
                          std::uint64_t window = kMergeWindow) {
  std::vector<synth::CatalogEntry> hits;
  for (const auto& e : catalog) {
    if (matches_keyword(e.trait, keywords)) hits.push_back(e);
  }
  for (Locus& l : loci) {
    const std::uint64_t lo = l.start > window ? l.start - window : 0;
    const std::uint64_t hi = l.end + window;
    l.annotation = Annotation::Novel;
    for (const auto& e : hits) {
      if (e.chrom == l.chrom && e.pos >= lo && e.pos <= hi) {
        l.annotation = Annotation::Known;
        break;
      }
    }
  }
}

// ---------------------------------------------------------------- LD scores

/// l_j = sum over variants k on j's chromosome within window_bp of j
/// (including j) of r^2 - (1 - r^2) / (N - 2).
inline std::vector<double> ld_scores(const LdMatrix& ld, const std::vector<Variant>& variants,
                                     std::uint64_t window_bp = 1000000) {
  const std::size_t M = variants.size();
  const double N = static_cast<double>(ld.individuals());
  if (N <= 2) throw AnalysisError("LD scores need more than 2 individuals");
  std::vector<double> l(M, 0.0);
  for (std::size_t j = 0; j < M; ++j) {
    l[j] += 1.0;  // self term: r^2 = 1 exactly
    for (std::size_t k = j + 1; k < M; ++k) {
      if (variants[k].chrom != variants[j].chrom || variants[k].pos - variants[j].pos > window_bp) break;
      const double r2 = ld.r2(j, k);
      const double adj = r2 - (1.0 - r2) / (N - 2.0);
      l[j] += adj;
      l[k] += adj;
    }
  }
  return l;
}

// ---------------------------------------------------------------- LDSC

struct LdscFit {
  double h2g = 0.0;
  double intercept = 0.0;
  double h2g_se = 0.0;
  double intercept_se = 0.0;
};

namespace detail {

/// Weighted least squares of y on [1, x] over [begin, end) with rows in
/// [skip_begin, skip_end) left out. Returns (intercept, slope).
inline std::pair<double, double> wls_line(const std::vector<double>& x, const std::vector<double>& y,
                                          const std::vector<double>& w, std::size_t skip_begin, std::size_t skip_end) {
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (j >= skip_begin && j < skip_end) continue;
    sw += w[j];
    sx += w[j] * x[j];
    sy += w[j] * y[j];
  }
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (j >= skip_begin && j < skip_end) continue;
    sxx += w[j] * (x[j] - mx) * (x[j] - mx);
    sxy += w[j] * (x[j] - mx) * (y[j] - my);
  }
  if (!(sxx > 0.0)) throw FitError("LD score regression needs at least 2 distinct LD scores");
  const double slope = sxy / sxx;
  return {my - slope * mx, slope};
}

}  // namespace detail

/// Univariate LD-score regression: chi2_j ~ b + h2g * (N l_j / M), weights
/// 1 / max(1, l_j); standard errors by delete-one-block jackknife over
/// contiguous variant blocks.
inline LdscFit ldsc_regression(const std::vector<double>& chi2, const std::vector<double>& l, double N, double M,
                               std::size_t blocks = 20) {
  if (chi2.size() != l.size()) throw DimensionError("chi2 and LD score vectors differ in length");
  if (!(N > 0.0 && M > 0.0)) throw FitError("LD score regression needs N > 0 and M > 0");
  for (double c : chi2) {
    if (!std::isfinite(c)) throw FitError("non-finite chi2 statistic");
  }
  const std::size_t n = chi2.size();
  std::vector<double> x(n), w(n);
  for (std::size_t j = 0; j < n; ++j) {
    x[j] = N * l[j] / M;
    w[j] = 1.0 / std::max(1.0, l[j]);
  }
  const auto [b, h2] = detail::wls_line(x, chi2, w, n, n);
  LdscFit fit{h2, b, 0.0, 0.0};
  const std::size_t B = std::min(blocks, n);
  if (B < 2) return fit;
  std::vector<double> hb, bb;
  for (std::size_t k = 0; k < B; ++k) {
    const std::size_t lo = k * n / B, hi = (k + 1) * n / B;
    try {
      const auto [ib, sb] = detail::wls_line(x, chi2, w, lo, hi);
      bb.push_back(ib);
      hb.push_back(sb);
    } catch (const FitError&) {
      // A block whose removal leaves one distinct LD score carries no
      // jackknife replicate.
    }
  }
  auto jk_se = [](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double t : v) s += (t - m) * (t - m);
    return std::sqrt(s * (static_cast<double>(v.size()) - 1.0) / static_cast<double>(v.size()));
  };
  fit.h2g_se = jk_se(hb);
  fit.intercept_se = jk_se(bb);
  return fit;
}

// ---------------------------------------------------------------- output

inline void write_association_csv(const std::filesystem::path& path, const AssociationTable& t,
                                  const std::vector<Variant>& variants) {
  csv::Table out{{"variant_id", "chrom", "pos", "beta", "se", "chi2", "p"}, {}};
  for (std::size_t j = 0; j < t.rows.size(); ++j) {
    const auto& a = t.rows[j];
    out.rows.push_back({std::to_string(j), std::to_string(variants[j].chrom), std::to_string(variants[j].pos),
                        csv::format(a.beta), csv::format(a.se), csv::format(a.chi2), csv::format(a.p)});
  }
  csv::write(path, out);
}

inline AssociationTable read_association_csv(const std::filesystem::path& path, std::size_t phenotype = 0) {
  const csv::Table t = csv::read(path);
  const std::size_t b = t.column("beta"), se = t.column("se"), c = t.column("chi2"), p = t.column("p");
  AssociationTable out;
  out.phenotype = phenotype;
  for (const auto& r : t.rows) {
    Association a;
    a.beta = csv::parse_or_throw<double>(r.at(b), "beta");
    a.se = csv::parse_or_throw<double>(r.at(se), "se");
    a.chi2 = csv::parse_or_throw<double>(r.at(c), "chi2");
    a.p = csv::parse_or_throw<double>(r.at(p), "p");
    a.monomorphic = a.se == 0.0 && a.beta == 0.0;
    out.rows.push_back(a);
  }
  return out;
}

inline void write_loci_csv(const std::filesystem::path& path, const std::vector<Locus>& loci) {
  csv::Table out{{"chrom", "start", "end", "lead_id", "lead_p", "annotation"}, {}};
  for (const auto& l : loci) {
    out.rows.push_back({std::to_string(l.chrom), std::to_string(l.start), std::to_string(l.end), std::to_string(l.lead),
                        csv::format(l.lead_p), to_string(l.annotation)});
  }
  csv::write(path, out);
}

}  // namespace regle::assoc

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "regle/config.hpp"
#include "regle/csv.hpp"
#include "regle/errors.hpp"
#include "regle/experiment.hpp"
#include "regle/metrics.hpp"

namespace regle::report {

namespace fs = std::filesystem;
using experiment::ExperimentPlan;
using models::ModelVariant;
using models::VariantTag;

/// Mean and 95% half-width of per-seed values; no half-width below 2 seeds.
struct Aggregate {
  double mean = 0.0;
  std::optional<double> halfwidth;
  std::size_t n = 0;
};

inline Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  a.n = v.size();
  if (v.size() >= 2) {
    const auto s = metrics::aggregate_seeds(v);
    a.mean = s.mean;
    a.halfwidth = s.ci_halfwidth;
  } else if (v.size() == 1) {
    a.mean = v[0];
  }
  return a;
}

struct CellData {
  ModelVariant variant;
  std::string label;
  std::vector<double> val_mse;
  std::vector<double> correlation;
  std::size_t loci_known = 0;
  std::size_t loci_novel = 0;
  std::vector<double> h2g;
  std::vector<double> intercept;
  std::vector<std::pair<std::string, double>> auc;  // disease, combined AUC
};

struct SweepData {
  ExperimentPlan plan;
  std::vector<CellData> cells;           // plan order, completed cells only
  std::vector<std::string> failed_cells;  // failed or never run
};

inline ExperimentPlan read_plan(const fs::path& dir) {
  ExperimentPlan plan;
  plan.beta_grid.clear();
  plan.gamma_grid.clear();
  experiment::apply_entries(plan, config::read_file(dir / experiment::kPlanFile));
  plan.output = dir;
  return plan;
}

/// Loads every completed cell. Any absent input raises ReportError naming
/// all absent files at once.
inline SweepData load_sweep(const fs::path& dir) {
  std::vector<std::string> missing = experiment::missing_files(dir, {experiment::kPlanFile, experiment::kManifestFile});
  if (!missing.empty()) throw ReportError("missing report inputs: " + csv::join(missing));
  SweepData data;
  data.plan = read_plan(dir);
  const auto manifest = experiment::read_manifest(dir / experiment::kManifestFile);
  const std::vector<std::string> needed{experiment::kSeedsFile, experiment::kLociSummaryFile, experiment::kLdscFile,
                                        experiment::kAucFile};
  for (const auto& v : data.plan.cells()) {
    const auto it = manifest.find(v.label());
    if (it == manifest.end() || it->second.status != "done") {
      data.failed_cells.push_back(v.label());
      continue;
    }
    const fs::path cd = experiment::cell_dir(dir, v);
    const auto absent = experiment::missing_files(cd, needed);
    missing.insert(missing.end(), absent.begin(), absent.end());
    if (!absent.empty()) continue;
    CellData c;
    c.variant = v;
    c.label = v.label();
    {
      const csv::Table t = csv::read(cd / experiment::kSeedsFile);
      const std::size_t m = t.column("val_mse"), r = t.column("mean_abs_correlation");
      for (const auto& row : t.rows) {
        c.val_mse.push_back(csv::parse_or_throw<double>(row.at(m), "val_mse"));
        c.correlation.push_back(csv::parse_or_throw<double>(row.at(r), "mean_abs_correlation"));
      }
    }
    {
      const csv::Table t = csv::read(cd / experiment::kLociSummaryFile);
      for (const auto& row : t.rows) {
        if (row.at(0) != "union") continue;
        c.loci_known = csv::parse_or_throw<std::size_t>(row.at(t.column("known")), "known");
        c.loci_novel = csv::parse_or_throw<std::size_t>(row.at(t.column("novel")), "novel");
      }
    }
    {
      const csv::Table t = csv::read(cd / experiment::kLdscFile);
      for (const auto& row : t.rows) {
        c.h2g.push_back(csv::parse_or_throw<double>(row.at(t.column("h2g")), "h2g"));
        c.intercept.push_back(csv::parse_or_throw<double>(row.at(t.column("intercept")), "intercept"));
      }
    }
    {
      const csv::Table t = csv::read(cd / experiment::kAucFile);
      for (const auto& row : t.rows) {
        c.auc.emplace_back(row.at(0), csv::parse_or_throw<double>(row.at(t.column("combined_auc")), "auc"));
      }
    }
    data.cells.push_back(std::move(c));
  }
  if (!missing.empty()) throw ReportError("missing report inputs: " + csv::join(missing));
  if (data.cells.empty()) throw ReportError("no completed cells in " + dir.string());
  return data;
}

// ------------------------------------------------------------------ SVG

namespace svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string text(double x, double y, const std::string& s, const std::string& extra = "", int size = 11) {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"sans-serif\" font-size=\"" +
         std::to_string(size) + "\"" +
         (extra.empty() ? "" : " " + extra) + ">" + escape(s) + "</text>\n";
}

inline std::string line(double x1, double y1, double x2, double y2, const std::string& style) {
  return "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) + "\" " + style +
         "/>\n";
}

/// Plot area in pixels plus the data range it shows. y grows downwards.
struct Panel {
  double x0, y0, width, height;
  double xmin, xmax, ymin, ymax;

  double px(double x) const { return xmax == xmin ? x0 + width / 2 : x0 + (x - xmin) / (xmax - xmin) * width; }
  double py(double y) const { return y0 + height - (y - ymin) / (ymax - ymin) * height; }

  std::string open(const std::string& name) const {
    return "<g class=\"panel\" data-name=\"" + name + "\" data-x0=\"" + num(x0) + "\" data-y0=\"" + num(y0) +
           "\" data-width=\"" + num(width) + "\" data-height=\"" + num(height) + "\" data-xmin=\"" +
           csv::format(xmin) + "\" data-xmax=\"" + csv::format(xmax) + "\" data-ymin=\"" + csv::format(ymin) +
           "\" data-ymax=\"" + csv::format(ymax) + "\">\n";
  }

  std::string frame(const std::string& title, const std::string& ylabel) const {
    std::string s = "<rect x=\"" + num(x0) + "\" y=\"" + num(y0) + "\" width=\"" + num(width) + "\" height=\"" +
                    num(height) + "\" fill=\"none\" stroke=\"#444\"/>\n";
    s += text(x0, y0 - 8, title, "font-weight=\"bold\"");
    s += text(x0 - 48, y0 + height / 2, ylabel,
              "transform=\"rotate(-90 " + num(x0 - 48) + " " + num(y0 + height / 2) + ")\" text-anchor=\"middle\"");
    for (int i = 0; i <= 4; ++i) {
      const double v = ymin + (ymax - ymin) * i / 4.0;
      s += line(x0 - 4, py(v), x0, py(v), "stroke=\"#444\"");
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3g", v);
      s += text(x0 - 6, py(v) + 4, buf, "text-anchor=\"end\"");
    }
    return s;
  }
};

/// Rounds a range outward and pads it; a flat range gets a unit window.
inline std::pair<double, double> padded_range(double lo, double hi) {
  if (!(hi > lo)) {
    const double c = std::isfinite(lo) ? lo : 0.0;
    return {c - 0.5, c + 0.5};
  }
  const double pad = 0.08 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline std::string document(double w, double h, const std::string& body) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) +
         "\" height=\"" + num(h) + "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" + body + "</svg>\n";
}

inline const char* series_color(VariantTag t) {
  switch (t) {
    case VariantTag::BetaVAE: return "#1f77b4";
    case VariantTag::FactorVAE: return "#d62728";
    case VariantTag::VAE: return "#2ca02c";
    case VariantTag::AE: return "#555555";
  }
  return "#000";
}

}  // namespace svg

// ------------------------------------------------------------------ figures

struct CurvePoint {
  double hyper;
  Aggregate value;
};

/// Metric-vs-hyperparameter panel: one curve per regularized family with a
/// CI band, AE as a dashed and VAE as a dotted baseline.
inline std::string metric_panel(const SweepData& d, const std::string& metric, const std::string& title,
                                double x0, double y0, csv::Table& data_rows) {
  auto values = [&](const CellData& c) { return metric == "val_mse" ? c.val_mse : c.correlation; };
  std::map<VariantTag, std::vector<CurvePoint>> curves;
  std::map<VariantTag, Aggregate> baselines;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, xlo = lo, xhi = -lo;
  for (const auto& c : d.cells) {
    const Aggregate a = aggregate(values(c));
    const double hw = a.halfwidth.value_or(0.0);
    lo = std::min(lo, a.mean - hw);
    hi = std::max(hi, a.mean + hw);
    const std::string series = models::to_string(c.variant.tag);
    const double hyper = c.variant.hyperparameter();
    data_rows.rows.push_back({metric, series, hyper > 0 ? csv::format(hyper) : "NA", std::to_string(a.n),
                              csv::format(a.mean), a.halfwidth ? csv::format(*a.halfwidth) : "NA"});
    if (c.variant.tag == VariantTag::AE || c.variant.tag == VariantTag::VAE) {
      baselines[c.variant.tag] = a;
      continue;
    }
    curves[c.variant.tag].push_back({hyper, a});
    xlo = std::min(xlo, std::log2(hyper));
    xhi = std::max(xhi, std::log2(hyper));
  }
  if (!std::isfinite(xlo)) xlo = xhi = 0.0;
  const auto [ymin, ymax] = svg::padded_range(lo, hi);
  const svg::Panel p{x0, y0, 380, 240, xlo, xhi, ymin, ymax};
  std::string s = p.open(metric) + p.frame(title, metric);
  for (double e = std::ceil(xlo); e <= xhi + 1e-9; e += 1.0) {
    s += svg::line(p.px(e), p.y0 + p.height, p.px(e), p.y0 + p.height + 4, "stroke=\"#444\"");
    s += svg::text(p.px(e), p.y0 + p.height + 16, csv::format(std::ldexp(1.0, static_cast<int>(e))),
                   "text-anchor=\"middle\"");
  }
  s += svg::text(p.x0 + p.width / 2, p.y0 + p.height + 32, "beta / gamma (log2 scale)", "text-anchor=\"middle\"");
  for (auto& [tag, pts] : curves) {
    std::sort(pts.begin(), pts.end(), [](const CurvePoint& a, const CurvePoint& b) { return a.hyper < b.hyper; });
    const std::string series = models::to_string(tag);
    const bool band = std::all_of(pts.begin(), pts.end(), [](const CurvePoint& q) { return q.value.halfwidth; });
    if (band && pts.size() >= 2) {
      std::string path = "M";
      for (const auto& q : pts) {
        path += " " + svg::num(p.px(std::log2(q.hyper))) + "," + svg::num(p.py(q.value.mean + *q.value.halfwidth));
      }
      for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
        path += " L " + svg::num(p.px(std::log2(it->hyper))) + "," +
                svg::num(p.py(it->value.mean - *it->value.halfwidth));
      }
      s += "<path class=\"ci-band\" data-series=\"" + series + "\" d=\"" + path + " Z\" fill=\"" +
           svg::series_color(tag) + "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    }
    std::string poly;
    for (const auto& q : pts) poly += svg::num(p.px(std::log2(q.hyper))) + "," + svg::num(p.py(q.value.mean)) + " ";
    s += "<polyline class=\"mean-line\" data-series=\"" + series + "\" points=\"" + poly + "\" fill=\"none\" stroke=\"" +
         svg::series_color(tag) + "\" stroke-width=\"1.5\"/>\n";
    for (const auto& q : pts) {
      s += "<circle class=\"point\" data-series=\"" + series + "\" data-hyper=\"" + csv::format(q.hyper) +
           "\" cx=\"" + svg::num(p.px(std::log2(q.hyper))) + "\" cy=\"" + svg::num(p.py(q.value.mean)) +
           "\" r=\"3\" fill=\"" + svg::series_color(tag) + "\"/>\n";
    }
  }
  for (const auto& [tag, a] : baselines) {
    const char* dash = tag == VariantTag::AE ? "6 4" : "2 3";
    s += "<line class=\"baseline\" data-series=\"" + models::to_string(tag) + "\" x1=\"" + svg::num(p.x0) +
         "\" y1=\"" + svg::num(p.py(a.mean)) + "\" x2=\"" + svg::num(p.x0 + p.width) + "\" y2=\"" +
         svg::num(p.py(a.mean)) + "\" stroke=\"" + svg::series_color(tag) + "\" stroke-dasharray=\"" + dash +
         "\"/>\n";
  }
  return s + "</g>\n";
}

inline std::string legend(double x, double y, const std::vector<std::pair<std::string, std::string>>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const double yy = y + 16.0 * static_cast<double>(i);
    s += "<rect x=\"" + svg::num(x) + "\" y=\"" + svg::num(yy - 9) + "\" width=\"10\" height=\"10\" fill=\"" +
         items[i].second + "\"/>\n";
    s += svg::text(x + 14, yy, items[i].first);
  }
  return s;
}

inline std::vector<std::pair<std::string, std::string>> family_legend() {
  return {{"BETA_VAE", svg::series_color(VariantTag::BetaVAE)},
          {"FACTOR_VAE", svg::series_color(VariantTag::FactorVAE)},
          {"AE (dashed)", svg::series_color(VariantTag::AE)},
          {"VAE (dotted)", svg::series_color(VariantTag::VAE)}};
}

/// Category axis labels, rotated so long cell names fit.
inline std::string category_labels(const svg::Panel& p, const std::vector<std::string>& names, double slot) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double x = p.x0 + slot * (static_cast<double>(i) + 0.5);
    const double y = p.y0 + p.height + 10;
    s += svg::text(x, y, names[i],
                   "text-anchor=\"end\" transform=\"rotate(-60 " + svg::num(x) + " " + svg::num(y) + ")\"", 9);
  }
  return s;
}

inline std::string loci_figure(const SweepData& d, csv::Table& rows) {
  const std::size_t n = d.cells.size();
  const double width = std::max(380.0, 22.0 * static_cast<double>(n));
  std::size_t top = 1;
  for (const auto& c : d.cells) top = std::max(top, c.loci_known + c.loci_novel);
  const svg::Panel a{70, 40, width, 220, 0, static_cast<double>(n), 0, static_cast<double>(top) * 1.1};
  const double slot = width / static_cast<double>(n);
  std::string s = a.open("loci") + a.frame("Genome-wide significant loci (union over coordinates)", "loci");
  std::vector<std::string> names;
  double hmax = 0.0, hmin = 0.0;
  for (const auto& c : d.cells) {
    for (double h : c.h2g) {
      hmax = std::max(hmax, h);
      hmin = std::min(hmin, h);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = d.cells[i];
    names.push_back(c.label);
    const double x = a.x0 + slot * static_cast<double>(i) + slot * 0.15;
    const double known_top = a.py(static_cast<double>(c.loci_known));
    const double all_top = a.py(static_cast<double>(c.loci_known + c.loci_novel));
    s += "<rect class=\"bar known\" data-cell=\"" + c.label + "\" data-count=\"" + std::to_string(c.loci_known) +
         "\" x=\"" + svg::num(x) + "\" y=\"" + svg::num(known_top) + "\" width=\"" + svg::num(slot * 0.7) +
         "\" height=\"" + svg::num(a.py(0) - known_top) + "\" fill=\"#08519c\"/>\n";
    s += "<rect class=\"bar novel\" data-cell=\"" + c.label + "\" data-count=\"" + std::to_string(c.loci_novel) +
         "\" x=\"" + svg::num(x) + "\" y=\"" + svg::num(all_top) + "\" width=\"" + svg::num(slot * 0.7) +
         "\" height=\"" + svg::num(known_top - all_top) + "\" fill=\"#9ecae1\"/>\n";
    rows.rows.push_back({c.label, std::to_string(c.loci_known), std::to_string(c.loci_novel),
                         c.h2g.empty() ? "NA" : csv::format(aggregate(c.h2g).mean)});
  }
  s += category_labels(a, names, slot) + "</g>\n";
  s += legend(a.x0 + a.width + 12, a.y0 + 10, {{"known", "#08519c"}, {"novel", "#9ecae1"}});

  const auto [lo, hi] = svg::padded_range(std::min(0.0, hmin), std::max(hmax, 0.01));
  const svg::Panel b{70, 420, width, 220, 0, static_cast<double>(n), lo, hi};
  s += b.open("h2g") + b.frame("LD-score heritability of latent coordinates (mean, min-max)", "h2g");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = d.cells[i];
    if (c.h2g.empty()) continue;
    const double mean = aggregate(c.h2g).mean;
    const double x = b.x0 + slot * static_cast<double>(i) + slot * 0.15;
    const double y = std::min(b.py(mean), b.py(0));
    s += "<rect class=\"bar h2g\" data-cell=\"" + c.label + "\" data-value=\"" + csv::format(mean) + "\" x=\"" +
         svg::num(x) + "\" y=\"" + svg::num(y) + "\" width=\"" + svg::num(slot * 0.7) + "\" height=\"" +
         svg::num(std::abs(b.py(mean) - b.py(0))) + "\" fill=\"#6a51a3\"/>\n";
    const double cx = x + slot * 0.35;
    const auto [mn, mx] = std::minmax_element(c.h2g.begin(), c.h2g.end());
    s += svg::line(cx, b.py(*mn), cx, b.py(*mx), "stroke=\"#222\"");
  }
  s += category_labels(b, names, slot) + "</g>\n";
  return svg::document(a.x0 + width + 120, 800, s);
}

inline std::string auc_figure(const SweepData& d, csv::Table& rows) {
  const std::size_t n = d.cells.size();
  std::vector<std::string> diseases;
  for (const auto& c : d.cells)
    for (const auto& [name, v] : c.auc)
      if (std::find(diseases.begin(), diseases.end(), name) == diseases.end()) diseases.push_back(name);
  const double width = std::max(380.0, 26.0 * static_cast<double>(n));
  const svg::Panel p{70, 40, width, 240, 0, static_cast<double>(n), 0.3, 1.0};
  const double slot = width / static_cast<double>(n);
  const char* colors[] = {"#e6550d", "#31a354", "#756bb1", "#636363"};
  std::string s = p.open("auc") + p.frame("Held-out AUC of the combined latent PRS", "AUC-ROC");
  s += svg::line(p.x0, p.py(0.5), p.x0 + p.width, p.py(0.5), "stroke=\"#888\" stroke-dasharray=\"4 3\"");
  std::vector<std::string> names;
  const double bar = slot * 0.8 / static_cast<double>(std::max<std::size_t>(diseases.size(), 1));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = d.cells[i];
    names.push_back(c.label);
    for (const auto& [name, v] : c.auc) {
      const auto k = static_cast<std::size_t>(std::find(diseases.begin(), diseases.end(), name) - diseases.begin());
      const double x = p.x0 + slot * static_cast<double>(i) + slot * 0.1 + bar * static_cast<double>(k);
      const double y = p.py(std::max(v, p.ymin));
      s += "<rect class=\"bar auc\" data-cell=\"" + c.label + "\" data-disease=\"" + name + "\" data-value=\"" +
           csv::format(v) + "\" x=\"" + svg::num(x) + "\" y=\"" + svg::num(y) + "\" width=\"" + svg::num(bar) +
           "\" height=\"" + svg::num(p.py(p.ymin) - y) + "\" fill=\"" + colors[k % 4] + "\"/>\n";
      rows.rows.push_back({c.label, name, csv::format(v)});
    }
  }
  s += category_labels(p, names, slot) + "</g>\n";
  std::vector<std::pair<std::string, std::string>> items;
  for (std::size_t k = 0; k < diseases.size(); ++k) items.emplace_back(diseases[k], colors[k % 4]);
  s += legend(p.x0 + p.width + 12, p.y0 + 10, items);
  return svg::document(p.x0 + width + 140, 420, s);
}

inline csv::Table table_one(const SweepData& d) {
  csv::Table t{{"cell", "variant", "hyperparameter", "h2g_min", "h2g_max", "h2g_mean", "intercept_min",
                "intercept_max", "intercept_mean"},
               {}};
  for (const auto& c : d.cells) {
    if (c.h2g.empty()) continue;
    auto stats = [](const std::vector<double>& v) {
      const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      // Guards the order invariant against last-bit rounding of the mean.
      return std::array<double, 3>{*mn, *mx, std::clamp(mean, *mn, *mx)};
    };
    const auto h = stats(c.h2g), b = stats(c.intercept);
    const double hyper = c.variant.hyperparameter();
    t.rows.push_back({c.label, models::to_string(c.variant.tag), hyper > 0 ? csv::format(hyper) : "NA",
                      csv::format(h[0]), csv::format(h[1]), csv::format(h[2]), csv::format(b[0]), csv::format(b[1]),
                      csv::format(b[2])});
  }
  return t;
}

inline constexpr const char* kFig1 = "fig1_reconstruction_correlation.svg";
inline constexpr const char* kFig2 = "fig2_loci_heritability.svg";
inline constexpr const char* kFig3 = "fig3_prs_auc.svg";
inline constexpr const char* kTable1 = "table1.csv";

/// Writes the three figures, their data tables and table1.csv into
/// `out` (default: <sweep>/report). Returns the paths written.
inline std::vector<fs::path> render_reports(const fs::path& sweep_dir, fs::path out = {}) {
  const SweepData d = load_sweep(sweep_dir);
  if (out.empty()) out = sweep_dir / "report";
  fs::create_directories(out);
  std::vector<fs::path> written;
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream f(out / name, std::ios::binary);
    if (!f) throw IoError("cannot write " + (out / name).string());
    f << content;
    written.push_back(out / name);
  };

  csv::Table fig1{{"metric", "series", "hyperparameter", "n", "mean", "ci_halfwidth"}, {}};
  std::string body = metric_panel(d, "val_mse", "Validation reconstruction error", 80, 40, fig1);
  body += metric_panel(d, "mean_abs_correlation", "Mean |correlation| between latent coordinates", 560, 40, fig1);
  body += legend(80, 340, family_legend());
  write(kFig1, svg::document(1000, 420, body));
  csv::write(out / "fig1_data.csv", fig1);
  written.push_back(out / "fig1_data.csv");

  csv::Table fig2{{"cell", "known", "novel", "h2g_mean"}, {}};
  write(kFig2, loci_figure(d, fig2));
  csv::write(out / "fig2_data.csv", fig2);
  written.push_back(out / "fig2_data.csv");

  csv::Table fig3{{"cell", "disease", "auc"}, {}};
  write(kFig3, auc_figure(d, fig3));
  csv::write(out / "fig3_data.csv", fig3);
  written.push_back(out / "fig3_data.csv");

  csv::write(out / kTable1, table_one(d));
  written.push_back(out / kTable1);
  if (!d.failed_cells.empty()) {
    write("incomplete_cells.txt", csv::join(d.failed_cells) + "\n");
  }
  return written;
}

}  // namespace regle::report

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "regle/experiment.hpp"
#include "regle/report.hpp"

using namespace regle;
using namespace regle::experiment;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("regle_exp_" + name);
  fs::remove_all(d);
  return d;
}

ExperimentPlan tiny_plan(const fs::path& out) {
  ExperimentPlan p;
  p.cohort.n_individuals = 200;
  p.cohort.n_variants = 120;
  p.cohort.n_chromosomes = 2;
  p.cohort.seed = 5;
  p.train.epochs = 1;
  p.seeds = 2;
  p.include_ae = true;
  p.include_vae = false;
  p.beta_grid = {0.5, 2.0};
  p.gamma_grid = {};
  p.output = out;
  return p;
}

std::map<std::string, std::string> csv_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && (e.path().extension() == ".csv" || e.path().extension() == ".json")) {
      out[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- config text

TEST(Config, ParsesSectionsCommentsAndWhitespace) {
  const auto e = config::parse("# header\n[cohort]\n  n_individuals =  120 ; trailing\n\n[plan]\nbeta_grid = 1, 2\n");
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].qualified(), "cohort.n_individuals");
  EXPECT_EQ(e[0].value, "120");
  EXPECT_EQ(e[0].line, 3u);
  EXPECT_EQ(e[1].value, "1, 2");
}

TEST(Config, MalformedLinesNameTheirLine) {
  try {
    config::parse("[cohort]\nn_individuals 5\n", "x.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(config::parse("[cohort\n"), ConfigError);
  EXPECT_THROW(config::parse("= 3\n"), ConfigError);
}

TEST(Config, UnknownOrUnparsableSettingsAreErrors) {
  ExperimentPlan p;
  EXPECT_THROW(apply_entries(p, config::parse("[cohort]\nn_individualz = 3\n")), ConfigError);
  EXPECT_THROW(apply_entries(p, config::parse("[cohort]\nn_individuals = many\n")), ConfigError);
  EXPECT_THROW(apply_entries(p, config::parse("[cohort]\nh2 = 0.1, 0.2\n")), ConfigError);
  EXPECT_THROW(apply_entries(p, config::parse("[plan]\ninclude_ae = maybe\n")), ConfigError);
  EXPECT_THROW(apply_entries(p, config::parse("[disease.x]\ncolour = red\n")), ConfigError);
}

TEST(Config, CanonicalTextRoundTrips) {
  ExperimentPlan p;
  apply_entries(p, config::parse("[cohort]\nn_individuals = 777\nh2 = 0.3, 0.2, 0.1\n[plan]\nbeta_grid = 0.5\n"
                                 "gamma_grid =\ninclude_vae = false\n[disease.only]\nweights = 1, 0, 0\n"
                                 "prevalence = 0.2\n[run]\njobs = 3\n"));
  EXPECT_EQ(p.cohort.n_individuals, 777u);
  EXPECT_EQ(p.cohort.h2[2], 0.1);
  EXPECT_TRUE(p.gamma_grid.empty());
  ASSERT_EQ(p.cohort.diseases.size(), 1u);
  EXPECT_EQ(p.cohort.diseases[0].prevalence, 0.2);
  const std::string text = to_text(p);
  ExperimentPlan q;
  apply_entries(q, config::parse(text));
  EXPECT_EQ(to_text(q), text);
  EXPECT_EQ(q.jobs, 3u);
}

// ---------------------------------------------------------------- plan

TEST(Plan, DefaultGridsAndSchedule) {
  const ExperimentPlan p;
  ASSERT_EQ(p.beta_grid.size(), 10u);
  EXPECT_EQ(p.beta_grid.front(), 0.25);
  EXPECT_EQ(p.beta_grid.back(), 128.0);
  ASSERT_EQ(p.gamma_grid.size(), 10u);
  EXPECT_EQ(p.gamma_grid.front(), 0.125);
  EXPECT_EQ(p.gamma_grid.back(), 64.0);
  EXPECT_EQ(p.cells().size(), 22u);
  EXPECT_EQ(p.seeds, 3u);
  EXPECT_EQ(p.train.epochs, 30u);
  ExperimentPlan paper;
  paper.use_paper_grid();
  EXPECT_EQ(paper.seeds, 10u);
  EXPECT_EQ(paper.train.epochs, 100u);
  EXPECT_NO_THROW(p.validate());
}

TEST(Plan, FingerprintTracksResultsOnly) {
  ExperimentPlan a, b;
  b.output = "elsewhere";
  b.jobs = 4;
  EXPECT_EQ(fingerprint(a), fingerprint(b));
  b.train.epochs = 31;
  EXPECT_NE(fingerprint(a), fingerprint(b));
}

TEST(Plan, ValidationRejectsBadPlans) {
  ExperimentPlan p;
  p.beta_grid = {1.0, 1.0};
  EXPECT_THROW(p.validate(), ConfigError);
  p = ExperimentPlan();
  p.seeds = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = ExperimentPlan();
  p.gamma_grid = {-1.0};
  EXPECT_THROW(p.validate(), ConfigError);
  p = ExperimentPlan();
  p.include_ae = p.include_vae = false;
  p.beta_grid.clear();
  p.gamma_grid.clear();
  EXPECT_THROW(p.validate(), ConfigError);
}

// ---------------------------------------------------------------- sweep

class Sweep : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fresh_dir("sweep");
    first_ = run_sweep(tiny_plan(dir_));
  }
  static inline fs::path dir_;
  static inline SweepSummary first_;
};

TEST_F(Sweep, SmokeRunEmitsEveryExpectedFile) {
  EXPECT_EQ(first_.trained, 3u);
  EXPECT_TRUE(first_.failed.empty());
  EXPECT_TRUE(fs::exists(dir_ / kPlanFile));
  EXPECT_TRUE(fs::exists(dir_ / kManifestFile));
  EXPECT_TRUE(fs::exists(dir_ / kCohortDir / "catalog.csv"));
  for (const auto& v : tiny_plan(dir_).cells()) {
    EXPECT_TRUE(missing_files(cell_dir(dir_, v), cell_files(5)).empty()) << v.label();
    const csv::Table seeds = csv::read(cell_dir(dir_, v) / kSeedsFile);
    EXPECT_EQ(seeds.rows.size(), 2u);
  }
  const auto m = read_manifest(dir_ / kManifestFile);
  for (const auto& [cell, row] : m) EXPECT_EQ(row.status, "done") << cell;
}

TEST_F(Sweep, MedianModelReloadsAndMatchesItsLatents) {
  const fs::path cd = cell_dir(dir_, models::ModelVariant::beta_vae(0.5));
  const models::ModelBundle m = load_cell_model(cd);
  const synth::Cohort c = synth::read_cohort(dir_ / kCohortDir);
  const auto post = models::encode_posterior(m, c.waveforms);
  const prs::ScoreMatrix z = read_latents(cd / kLatentsFile);
  ASSERT_EQ(z.n, c.genotypes.n);
  for (std::size_t i = 0; i < z.n; i += 17)
    for (std::size_t k = 0; k < z.k; ++k) EXPECT_EQ(z.at(i, k), static_cast<double>(post.mean(i, k)));
  // The stored model is the seed whose validation error is the median.
  const csv::Table info = csv::read(cd / kModelInfoFile);
  const csv::Table seeds = csv::read(cd / kSeedsFile);
  std::vector<double> mse;
  for (const auto& r : seeds.rows) mse.push_back(csv::parse_or_throw<double>(r[1], "mse"));
  EXPECT_EQ(info.rows[0][4], seeds.rows[metrics::median_index(mse)][0]);
}

TEST_F(Sweep, RerunPerformsNoTraining) {
  const auto before = fs::last_write_time(cell_dir(dir_, models::ModelVariant::ae()) / kModelFile);
  const SweepSummary s = run_sweep(tiny_plan(dir_));
  EXPECT_EQ(s.trained, 0u);
  EXPECT_EQ(s.skipped, 3u);
  EXPECT_EQ(fs::last_write_time(cell_dir(dir_, models::ModelVariant::ae()) / kModelFile), before);
}

TEST_F(Sweep, DeletedCellIsRegeneratedAlone) {
  const auto untouched = fs::last_write_time(cell_dir(dir_, models::ModelVariant::ae()) / kModelFile);
  const fs::path victim = cell_dir(dir_, models::ModelVariant::beta_vae(2.0));
  const std::string before = slurp(victim / kAucFile);
  fs::remove_all(victim);
  const SweepSummary s = run_sweep(tiny_plan(dir_));
  EXPECT_EQ(s.trained, 1u);
  EXPECT_EQ(s.skipped, 2u);
  EXPECT_EQ(slurp(victim / kAucFile), before);
  EXPECT_EQ(fs::last_write_time(cell_dir(dir_, models::ModelVariant::ae()) / kModelFile), untouched);
}

TEST_F(Sweep, DifferentPlanInSameDirectoryIsRefused) {
  ExperimentPlan p = tiny_plan(dir_);
  p.train.epochs = 2;
  EXPECT_THROW(run_sweep(p), ConfigError);
}

TEST(SweepDeterminism, IdenticalPlansGiveByteIdenticalCsvs) {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  ExperimentPlan pa = tiny_plan(a), pb = tiny_plan(b);
  pa.gamma_grid = pb.gamma_grid = {1.0};
  pb.jobs = 2;  // worker count must not change results
  run_sweep(pa);
  run_sweep(pb);
  const auto fa = csv_files(a), fb = csv_files(b);
  ASSERT_EQ(fa.size(), fb.size());
  EXPECT_GT(fa.size(), 40u);
  for (const auto& [name, content] : fa) {
    ASSERT_TRUE(fb.count(name)) << name;
    EXPECT_TRUE(fb.at(name) == content) << name;
  }
}

TEST(SweepIsolation, FailingCellIsRecordedAndOthersComplete) {
  const fs::path d = fresh_dir("isolation");
  ExperimentPlan p = tiny_plan(d);
  p.include_ae = false;
  p.beta_grid = {0.5, 1e300};  // the KL term overflows the loss
  const SweepSummary s = run_sweep(p);
  EXPECT_EQ(s.trained, 1u);
  ASSERT_EQ(s.failed.size(), 1u);
  EXPECT_EQ(s.failed[0].first, models::ModelVariant::beta_vae(1e300).label());
  EXPECT_NE(s.failed[0].second.find("training"), std::string::npos);
  const auto m = read_manifest(d / kManifestFile);
  EXPECT_EQ(m.at(models::ModelVariant::beta_vae(0.5).label()).status, "done");
  EXPECT_EQ(m.at(models::ModelVariant::beta_vae(1e300).label()).status, "failed");
  // Failed cells are retried, completed ones are not.
  const SweepSummary again = run_sweep(p);
  EXPECT_EQ(again.skipped, 1u);
  EXPECT_EQ(again.failed.size(), 1u);
}

// ---------------------------------------------------------------- reports

namespace {

struct Circle {
  std::string series;
  double hyper, cx, cy;
};

std::string attr(const std::string& tag, const std::string& name) {
  const std::regex re(" " + name + "=\"([^\"]*)\"");
  std::smatch m;
  return std::regex_search(tag, m, re) ? m[1].str() : std::string();
}

std::vector<std::string> tags(const std::string& svg, const std::string& element, const std::string& cls) {
  std::vector<std::string> out;
  const std::regex re("<" + element + " [^>]*class=\"" + cls + "\"[^>]*>");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it) {
    out.push_back(it->str());
  }
  return out;
}

/// The <g class="panel"> block with the given data-name.
std::string panel(const std::string& svg, const std::string& name) {
  const std::size_t a = svg.find("data-name=\"" + name + "\"");
  const std::size_t g = svg.rfind("<g ", a);
  return svg.substr(g, svg.find("</g>", a) - g);
}

}  // namespace

TEST_F(Sweep, ReportBandHalfwidthMatchesAggregateWithinOnePixel) {
  const auto files = report::render_reports(dir_);
  EXPECT_EQ(files.size(), 7u);
  const std::string svg = slurp(dir_ / "report" / report::kFig1);
  for (const std::string metric : {"val_mse", "mean_abs_correlation"}) {
    const std::string p = panel(svg, metric);
    const std::string head = p.substr(0, p.find('>') + 1);
    const double y0 = std::stod(attr(head, "data-y0")), h = std::stod(attr(head, "data-height"));
    const double ymin = std::stod(attr(head, "data-ymin")), ymax = std::stod(attr(head, "data-ymax"));
    const double px_per_unit = h / (ymax - ymin);
    const auto bands = tags(p, "path", "ci-band");
    ASSERT_EQ(bands.size(), 1u);  // one regularized family in the tiny plan
    std::vector<std::pair<double, double>> verts;
    const std::string d = attr(bands[0], "d");
    const std::regex pt("(-?[0-9.]+),(-?[0-9.]+)");
    for (auto it = std::sregex_iterator(d.begin(), d.end(), pt); it != std::sregex_iterator(); ++it) {
      verts.emplace_back(std::stod((*it)[1]), std::stod((*it)[2]));
    }
    const auto circles = tags(p, "circle", "point");
    ASSERT_EQ(circles.size(), 2u);
    ASSERT_EQ(verts.size(), 4u);
    for (std::size_t i = 0; i < circles.size(); ++i) {
      const double hyper = std::stod(attr(circles[i], "data-hyper"));
      const double cx = std::stod(attr(circles[i], "cx")), cy = std::stod(attr(circles[i], "cy"));
      // Independent expectation straight from the per-seed CSV.
      const csv::Table seeds = csv::read(cell_dir(dir_, models::ModelVariant::beta_vae(hyper)) / kSeedsFile);
      std::vector<double> v;
      for (const auto& r : seeds.rows) v.push_back(csv::parse_or_throw<double>(r[seeds.column(metric)], metric));
      const auto agg = metrics::aggregate_seeds(v);
      EXPECT_NEAR(cy, y0 + h - (agg.mean - ymin) * px_per_unit, 1.0);
      const auto upper = verts[i], lower = verts[verts.size() - 1 - i];
      EXPECT_NEAR(upper.first, cx, 0.01);
      EXPECT_NEAR(cy - upper.second, agg.ci_halfwidth * px_per_unit, 1.0) << metric << " " << hyper;
      EXPECT_NEAR(lower.second - cy, agg.ci_halfwidth * px_per_unit, 1.0) << metric << " " << hyper;
    }
    EXPECT_EQ(tags(p, "line", "baseline").size(), 1u);  // AE only
  }
}

TEST_F(Sweep, TableOneIsOrderedAndFiguresTraceToCsv) {
  report::render_reports(dir_);
  const csv::Table t = csv::read(dir_ / "report" / report::kTable1);
  EXPECT_EQ(t.rows.size(), 3u);
  for (const auto& r : t.rows) {
    for (const std::string stem : {"h2g", "intercept"}) {
      const double lo = std::stod(r[t.column(stem + "_min")]), mid = std::stod(r[t.column(stem + "_mean")]),
                   hi = std::stod(r[t.column(stem + "_max")]);
      EXPECT_LE(lo, mid);
      EXPECT_LE(mid, hi);
    }
  }
  const std::string fig3 = slurp(dir_ / "report" / report::kFig3);
  const csv::Table data = csv::read(dir_ / "report" / "fig3_data.csv");
  const auto bars = tags(fig3, "rect", "bar auc");
  ASSERT_EQ(bars.size(), data.rows.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    EXPECT_EQ(attr(bars[i], "data-cell"), data.rows[i][0]);
    EXPECT_EQ(attr(bars[i], "data-value"), data.rows[i][2]);
  }
}

TEST(Report, SingleSeedCellHasPointButNoBand) {
  const fs::path d = fresh_dir("single");
  ExperimentPlan p = tiny_plan(d);
  p.include_ae = false;
  p.beta_grid = {1.0};
  p.seeds = 1;
  run_sweep(p);
  report::render_reports(d);
  const std::string svg = slurp(d / "report" / report::kFig1);
  EXPECT_EQ(tags(svg, "circle", "point").size(), 2u);  // one per panel
  EXPECT_TRUE(tags(svg, "path", "ci-band").empty());
  const csv::Table data = csv::read(d / "report" / "fig1_data.csv");
  for (const auto& r : data.rows) EXPECT_EQ(r[data.column("ci_halfwidth")], "NA");
}

TEST(Report, MissingInputsAreListed) {
  EXPECT_THROW(report::render_reports(fresh_dir("nothing")), ReportError);
  const fs::path d = fresh_dir("missing");
  ExperimentPlan p = tiny_plan(d);
  p.beta_grid = {};
  run_sweep(p);
  const fs::path cd = cell_dir(d, models::ModelVariant::ae());
  fs::remove(cd / kLdscFile);
  fs::remove(cd / kAucFile);
  try {
    report::render_reports(d);
    FAIL() << "expected ReportError";
  } catch (const ReportError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(kLdscFile), std::string::npos);
    EXPECT_NE(msg.find(kAucFile), std::string::npos);
  }
}

TEST_F(Sweep, FiguresHaveNoDuplicateAttributesAndBalancedGroups) {
  report::render_reports(dir_);
  for (const char* f : {report::kFig1, report::kFig2, report::kFig3}) {
    const std::string svg = slurp(dir_ / "report" / f);
    const std::regex tag_re("<([a-z]+)((?:\\s+[a-zA-Z-]+=\"[^\"]*\")*)\\s*/?>");
    const std::regex attr_re("([a-zA-Z-]+)=\"");
    std::size_t tags_seen = 0;
    for (auto it = std::sregex_iterator(svg.begin(), svg.end(), tag_re); it != std::sregex_iterator(); ++it) {
      const std::string attrs = (*it)[2];
      std::set<std::string> names;
      for (auto a = std::sregex_iterator(attrs.begin(), attrs.end(), attr_re); a != std::sregex_iterator(); ++a) {
        EXPECT_TRUE(names.insert((*a)[1]).second) << f << ": duplicate " << (*a)[1] << " in " << it->str();
      }
      ++tags_seen;
    }
    EXPECT_GT(tags_seen, 10u);
    const auto count = [&](const std::string& s) {
      std::size_t n = 0;
      for (std::size_t p = svg.find(s); p != std::string::npos; p = svg.find(s, p + 1)) ++n;
      return n;
    };
    EXPECT_EQ(count("<g "), count("</g>")) << f;
    EXPECT_EQ(count("<text "), count("</text>")) << f;
  }
}

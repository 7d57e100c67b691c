// Command-line front end: simulate, train, gwas, prs, sweep, report.
//
// Every failure ends with one JSON line on stderr,
//   {"error":"<kind>","message":"..."}
// and a nonzero exit code (2 for usage problems, 1 otherwise).

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "regle/config.hpp"
#include "regle/experiment.hpp"
#include "regle/report.hpp"
#include "regle/synthdata.hpp"

namespace fs = std::filesystem;
using namespace regle;
using experiment::ExperimentPlan;

namespace {

struct Overrides {
  std::optional<fs::path> config_file;
  std::vector<std::pair<std::string, std::string>> values;  // setting name, value, in command-line order
};

/// Registers one flag per setting whose section is in `sections`.
void add_setting_flags(CLI::App* app, ExperimentPlan& scratch, Overrides& ov,
                       const std::vector<std::string>& sections) {
  app->add_option_function<std::string>(
      "--config", [&ov](const std::string& p) { ov.config_file = p; }, "plain-text config file (key = value)");
  for (const auto& s : experiment::settings(scratch)) {
    const std::string sec = s.name.substr(0, s.name.find('.'));
    if (std::find(sections.begin(), sections.end(), sec) == sections.end()) continue;
    app->add_option_function<std::string>(
           "--" + s.flag, [&ov, name = s.name](const std::string& v) { ov.values.emplace_back(name, v); },
           s.help + " [" + s.get() + "]")
        ->option_text("VALUE")
        ->trigger_on_parse()  // record flags in the order given
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

ExperimentPlan resolve(const Overrides& ov, bool paper_grid = false) {
  ExperimentPlan plan;
  if (paper_grid) plan.use_paper_grid();
  if (ov.config_file) experiment::apply_entries(plan, config::read_file(*ov.config_file));
  std::vector<config::Entry> flags;
  for (const auto& [name, value] : ov.values) {
    const std::size_t dot = name.find('.');
    flags.push_back({name.substr(0, dot), name.substr(dot + 1), value, 0});
  }
  experiment::apply_entries(plan, flags);
  return plan;
}

void log_line(const std::string& s) { std::cerr << "[regle] " << s << std::endl; }

void ok(nlohmann::ordered_json j) {
  j["status"] = "ok";
  std::cout << j.dump() << std::endl;
}

int fail(std::string_view kind, const std::string& message, int code) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled spirogram representations, latent GWAS and PRS on synthetic cohorts"};
  app.require_subcommand(1);
  ExperimentPlan scratch;  // supplies defaults for help text only
  Overrides ov;

  auto* simulate = app.add_subcommand("simulate", "simulate a cohort and write it to a directory");
  fs::path sim_out;
  simulate->add_option("--out", sim_out, "cohort directory")->required();
  add_setting_flags(simulate, scratch, ov, {"cohort", "spirogram"});

  auto* train = app.add_subcommand("train", "train every seed of one model cell on a cohort");
  fs::path cohort_dir, cell_out;
  std::string variant_tag = "VAE";
  std::optional<double> beta, gamma;
  train->add_option("--cohort", cohort_dir, "cohort directory written by simulate")->required();
  train->add_option("--out", cell_out, "cell output directory")->required();
  train->add_option("--variant", variant_tag, "AE, VAE, BETA_VAE or FACTOR_VAE")->capture_default_str();
  train->add_option("--beta", beta, "KL weight for BETA_VAE");
  train->add_option("--gamma", gamma, "TC weight for FACTOR_VAE");
  add_setting_flags(train, scratch, ov, {"train", "plan"});

  auto* gwas = app.add_subcommand("gwas", "GWAS, loci and LD-score regression on a trained cell's latents");
  fs::path gwas_cohort, gwas_cell, catalog;
  gwas->add_option("--cohort", gwas_cohort, "cohort directory")->required();
  gwas->add_option("--cell", gwas_cell, "cell directory written by train")->required();
  gwas->add_option("--catalog", catalog, "association catalog CSV (default: <cohort>/catalog.csv)");
  add_setting_flags(gwas, scratch, ov, {"analysis"});

  auto* prs = app.add_subcommand("prs", "per-coordinate PRS, disease combination and held-out AUC");
  fs::path prs_cohort, prs_cell;
  prs->add_option("--cohort", prs_cohort, "cohort directory")->required();
  prs->add_option("--cell", prs_cell, "cell directory with GWAS tables")->required();
  add_setting_flags(prs, scratch, ov, {"analysis"});

  auto* sweep = app.add_subcommand("sweep", "run the full experiment plan (idempotent)");
  bool paper_grid = false;
  sweep->add_flag("--paper-grid", paper_grid, "10 seeds x 100 epochs instead of the desk-scale 3 x 30");
  add_setting_flags(sweep, scratch, ov, {"cohort", "spirogram", "train", "plan", "analysis", "run"});

  auto* report = app.add_subcommand("report", "render figures and table1.csv from sweep outputs");
  fs::path report_in, report_out;
  report->add_option("--in", report_in, "sweep output directory")->required();
  report->add_option("--out", report_out, "figure directory (default: <in>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (simulate->parsed()) {
      const ExperimentPlan plan = resolve(ov);
      plan.cohort.validate();
      const synth::Cohort c = synth::simulate_cohort(plan.cohort);
      synth::write_cohort(sim_out, c, plan.cohort.seed);
      ok({{"verb", "simulate"}, {"out", sim_out.string()}, {"individuals", c.genotypes.n},
          {"variants", c.genotypes.m}});
    } else if (train->parsed()) {
      const ExperimentPlan plan = resolve(ov);
      models::ModelVariant v{models::parse_variant_tag(variant_tag), beta, gamma};
      v.validate();
      const synth::Cohort c = synth::read_cohort(cohort_dir);
      experiment::train_cell(c, v, plan, cell_out, log_line);
      ok({{"verb", "train"}, {"cell", v.label()}, {"out", cell_out.string()}});
    } else if (gwas->parsed()) {
      const ExperimentPlan plan = resolve(ov);
      const synth::Cohort c = synth::read_cohort(gwas_cohort);
      experiment::gwas_cell(c, catalog.empty() ? gwas_cohort / "catalog.csv" : catalog, plan, gwas_cell);
      ok({{"verb", "gwas"}, {"cell", gwas_cell.string()}});
    } else if (prs->parsed()) {
      const ExperimentPlan plan = resolve(ov);
      const synth::Cohort c = synth::read_cohort(prs_cohort);
      const auto r = experiment::prs_cell(c, plan, prs_cell);
      nlohmann::ordered_json aucs;
      for (const auto& d : r.diseases) aucs[d.disease] = d.combined_auc;
      ok({{"verb", "prs"}, {"cell", prs_cell.string()}, {"heldout_auc", aucs}});
    } else if (sweep->parsed()) {
      const ExperimentPlan plan = resolve(ov, paper_grid);
      const auto s = experiment::run_sweep(plan, log_line);
      nlohmann::ordered_json failed = nlohmann::ordered_json::array();
      for (const auto& [cell, msg] : s.failed) failed.push_back({{"cell", cell}, {"message", msg}});
      nlohmann::ordered_json j{{"verb", "sweep"}, {"out", plan.output.string()}, {"trained", s.trained},
                               {"skipped", s.skipped}, {"failed", failed}};
      if (!s.failed.empty()) {
        std::cout << j.dump() << std::endl;
        return fail("sweep", std::to_string(s.failed.size()) + " cell(s) failed; see manifest.csv", 1);
      }
      ok(j);
    } else if (report->parsed()) {
      const auto files = report::render_reports(report_in, report_out);
      nlohmann::ordered_json list = nlohmann::ordered_json::array();
      for (const auto& f : files) list.push_back(f.string());
      ok({{"verb", "report"}, {"files", list}});
    }
  } catch (const Error& e) {
    return fail(to_string(e.kind()), e.what(), e.kind() == ErrorKind::Usage || e.kind() == ErrorKind::Config ? 2 : 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}

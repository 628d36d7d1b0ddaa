// mzip: fit, simulate and study marginalized ZIP / ZINB random-intercept models.

#include <CLI11.hpp>

#include <iostream>

#include "mzip/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Maximum-likelihood fitting and simulation for marginalized ZIP/ZINB random-intercept models"};
  app.require_subcommand(1);
  int code = 0;

  mzip::cli::FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to a long-format CSV panel");
  fit_cmd->add_option("--config,-c", fit.config, "Model configuration file")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--data,-d", fit.data, "CSV data (subject, y, [offset], [time], covariates)")
      ->required()
      ->check(CLI::ExistingFile);
  fit_cmd->add_option("--out,-o", fit.out, "Write the fit as JSON to this path");
  fit_cmd->add_option("--seed", fit.seed, "Seed recorded with the fit (overrides the config)");
  fit_cmd->add_option("--threads", fit.threads, "Worker threads (0 = all cores)");
  fit_cmd->add_option("--level", fit.level, "Confidence level for intervals")->check(CLI::Range(0.5, 0.9999));
  fit_cmd->callback([&] { code = mzip::cli::cmd_fit(fit, std::cout, std::cerr); });

  mzip::cli::CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Compare two fits by AIC and, for nested models, an LRT");
  cmp_cmd->add_option("fit_a", cmp.fit_a, "Fit JSON of model A")->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("fit_b", cmp.fit_b, "Fit JSON of model B")->required()->check(CLI::ExistingFile);
  auto* df_opt = cmp_cmd->add_option("--df", cmp.df, "Degrees of freedom of the LRT")->check(CLI::PositiveNumber);
  cmp_cmd->add_flag("--nested", cmp.nested, "Models are nested; df is the difference in parameter counts")
      ->excludes(df_opt);
  cmp_cmd->callback([&] { code = mzip::cli::cmd_compare(cmp, std::cout, std::cerr); });

  mzip::cli::StudyArgs study;
  auto* study_cmd = app.add_subcommand("study", "Run a Monte-Carlo replication study");
  study_cmd->add_option("--scenario,-s", study.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  study_cmd->add_option("--out,-o", study.out_dir, "Output directory for replicates.csv and report.{csv,json}");
  study_cmd->add_option("--seed", study.seed, "Master seed (overrides the scenario)");
  study_cmd->add_option("--threads", study.threads, "Concurrent replicates (0 = all cores)");
  study_cmd->add_flag("--quiet,-q", study.quiet, "Suppress per-replicate progress lines");
  study_cmd->callback([&] { code = mzip::cli::cmd_study(study, std::cout, std::cerr); });

  mzip::cli::SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Draw one synthetic panel from a scenario");
  sim_cmd->add_option("--scenario,-s", sim.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--out,-o", sim.out, "CSV output path (default: standard output)");
  sim_cmd->add_option("--config-out", sim.config_out, "Also write a fit configuration for the panel");
  sim_cmd->add_option("--replicate,-r", sim.replicate, "Replicate index");
  sim_cmd->add_option("--seed", sim.seed, "Master seed (overrides the scenario)");
  sim_cmd->callback([&] { code = mzip::cli::cmd_simulate(sim, std::cout, std::cerr); });

  mzip::cli::ReprofileArgs rep;
  auto* rep_cmd = app.add_subcommand("reprofile", "Random-effects covariance at given covariate profiles");
  rep_cmd->add_option("fit", rep.fit, "Fit JSON")->required()->check(CLI::ExistingFile);
  rep_cmd->add_option("profiles", rep.profiles, "Profile CSV (sigma/rho covariates, optional label)")
      ->required()
      ->check(CLI::ExistingFile);
  rep_cmd->add_option("--digits", rep.digits, "Decimal places")->check(CLI::Range(0, 17));
  rep_cmd->callback([&] { code = mzip::cli::cmd_reprofile(rep, std::cout, std::cerr); });

  mzip::cli::GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare the analytic score with finite differences");
  gc_cmd->add_option("--config,-c", gc.config, "Model configuration file")->required()->check(CLI::ExistingFile);
  gc_cmd->add_option("--data,-d", gc.data, "CSV data")->required()->check(CLI::ExistingFile);
  gc_cmd->add_option("--theta", gc.theta, "Fit JSON giving the evaluation point (default: starting values)")
      ->check(CLI::ExistingFile);
  gc_cmd->add_option("--step", gc.step, "Relative finite-difference step")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--threads", gc.threads, "Worker threads (0 = all cores)");
  gc_cmd->add_option("--corrupt-score", gc.corrupt_score, "Testing aid: perturb the first analytic score entry")
      ->group("");
  gc_cmd->callback([&] { code = mzip::cli::cmd_gradcheck(gc, std::cout, std::cerr); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : mzip::cli::kExitError;
  }
  return code;
}

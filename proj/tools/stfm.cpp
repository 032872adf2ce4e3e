// stfm: simulate, fit, select, forecast, diagnose, table1.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "stfm/cli.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Sampler flags shared by fit and select; unset flags leave config values alone.
struct SamplerFlags {
  std::string config;
  std::vector<std::string> set;
  std::optional<std::size_t> burnin, draws, chains, thin, threads, latent_stride;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> extension, loading_prior;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "flat key=value config file")->check(CLI::ExistingFile);
    app->add_option("--set", set, "override a config key (key=value), repeatable");
    app->add_option("--burnin", burnin, "burn-in sweeps per chain");
    app->add_option("--draws", draws, "stored draws per chain");
    app->add_option("--chains", chains, "number of chains");
    app->add_option("--thin", thin, "sweeps per stored draw");
    app->add_option("--threads", threads, "worker threads (0: one per chain)");
    app->add_option("--latent-stride", latent_stride, "keep latent curves every k-th draw (0: none)");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--extension", extension, "calendar extension: none, I or II");
    app->add_option("--loading-prior", loading_prior, "horseshoe or nonsparse");
  }

  stfm::RunConfig resolve() const {
    Overrides o;
    for (const auto& kv : set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw stfm::ValidationError("--set expects key=value, got '" + kv + "'");
      o.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    auto add = [&](const char* key, const auto& v) {
      if (v) o.emplace_back(key, std::to_string(*v));
    };
    add("n_burnin", burnin);
    add("n_draws", draws);
    add("n_chains", chains);
    add("thin", thin);
    add("threads", threads);
    add("latent_stride", latent_stride);
    add("seed", seed);
    if (extension) o.emplace_back("extension", *extension);
    if (loading_prior) o.emplace_back("loading_prior", *loading_prior);
    return stfm::cli::load_run_config(config, o);
  }
};

}  // namespace

int main(int argc, char** argv) {
  using namespace stfm;
  CLI::App app{"Bayesian spatiotemporal functional factor model"};
  app.require_subcommand(1);
  app.set_version_flag("--version", cli::kVersion);

  // simulate
  cli::SimulateArgs sim;
  std::string snr = "high", sim_out;
  auto* c_sim = app.add_subcommand("simulate", "generate a synthetic panel with known truth");
  c_sim->add_option("--n", sim.sim.n, "districts")->capture_default_str();
  c_sim->add_option("--t", sim.sim.t, "days")->capture_default_str();
  c_sim->add_option("--k", sim.sim.k, "grid points per day")->capture_default_str();
  c_sim->add_option("--snr", snr, "high or low")->check(CLI::IsMember({"high", "low"}))->capture_default_str();
  c_sim->add_option("--seed", sim.sim.seed, "seed")->capture_default_str();
  c_sim->add_flag("--superfluous-factor", sim.sim.superfluous_factor, "add an independent sixth factor district");
  c_sim->add_option("--pre-dayoff-effect", sim.sim.pre_dayoff_effect, "shift applied on pre-day-off transitions");
  c_sim->add_flag("--weekly", sim.weekly, "weekday/weekend calendar instead of all working days");
  c_sim->add_option("--out", sim_out, "output directory")->required();

  // fit
  cli::FitArgs fit;
  SamplerFlags fit_flags;
  std::string fit_factors, fit_panel, fit_cal, fit_adj, fit_out;
  bool no_normalize = false;
  auto* c_fit = app.add_subcommand("fit", "run the Gibbs sampler and write a draw store");
  c_fit->add_option("--panel", fit_panel, "panel CSV")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--calendar", fit_cal, "calendar CSV")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--adjacency", fit_adj, "adjacency CSV")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--factors", fit_factors, "comma-separated factor district ids, in order")->required();
  c_fit->add_option("--out", fit_out, "store directory")->required();
  c_fit->add_flag("--no-normalize", no_normalize, "fit on the raw scale");
  fit_flags.attach(c_fit);

  // select
  cli::SelectArgs sel;
  SamplerFlags sel_flags;
  std::string sel_panel, sel_cal, sel_adj, sel_cand, sel_out;
  auto* c_sel = app.add_subcommand("select", "score candidate factor sets by PPL and prune the winner");
  c_sel->add_option("--panel", sel_panel, "panel CSV")->required()->check(CLI::ExistingFile);
  c_sel->add_option("--calendar", sel_cal, "calendar CSV")->required()->check(CLI::ExistingFile);
  c_sel->add_option("--adjacency", sel_adj, "adjacency CSV")->required()->check(CLI::ExistingFile);
  c_sel->add_option("--candidates", sel_cand, "candidate file, one 'label: id,id,...' per line")
      ->required()
      ->check(CLI::ExistingFile);
  c_sel->add_option("--subsample-days", sel.subsample.days, "fit on the first d days (0: all)");
  c_sel->add_option("--subsample-districts", sel.subsample.districts, "districts in the subsample (0: all)");
  c_sel->add_option("--subsample-seed", sel.subsample.seed, "seed of the district subsample");
  c_sel->add_option("--out", sel_out, "output directory")->required();
  sel_flags.attach(c_sel);

  // forecast
  cli::ForecastArgs fc;
  std::string fc_store, fc_cal, fc_out, fc_truth;
  auto* c_fc = app.add_subcommand("forecast", "posterior-predictive forecasts from a draw store");
  c_fc->add_option("--store", fc_store, "store directory")->required()->check(CLI::ExistingDirectory);
  c_fc->add_option("--future-calendar", fc_cal, "calendar CSV of the forecast days")
      ->required()
      ->check(CLI::ExistingFile);
  c_fc->add_option("--horizon", fc.horizon, "days ahead")->required();
  c_fc->add_option("--seed", fc.seed, "seed")->capture_default_str();
  c_fc->add_option("--level", fc.options.level, "interval level")->capture_default_str();
  c_fc->add_option("--max-draws", fc.options.max_draws, "draws used (evenly spaced)")->capture_default_str();
  c_fc->add_option("--truth", fc_truth, "panel CSV of realized values for metrics")->check(CLI::ExistingFile);
  c_fc->add_option("--out", fc_out, "output directory")->required();

  // diagnose
  cli::DiagnoseArgs dg;
  std::string dg_store, dg_out;
  auto* c_dg = app.add_subcommand("diagnose", "R-hat and ESS of the monitored parameters");
  c_dg->add_option("--store", dg_store, "store directory")->required()->check(CLI::ExistingDirectory);
  c_dg->add_option("--out", dg_out, "report CSV")->required();
  c_dg->add_option("--threshold", dg.options.threshold, "R-hat pass threshold")->capture_default_str();
  c_dg->add_flag("--split", dg.options.split, "split each chain in half");
  c_dg->add_option("--seed", dg.options.seed, "seed for the random monitored entries");

  // table1
  cli::Table1Args t1;
  std::string t1_out;
  auto* c_t1 = app.add_subcommand("table1", "RMSE/CP scenario grid for FFM, NSFFM and UDLM");
  c_t1->add_option("--scale", t1.scale, "smoke, desk or paper")
      ->check(CLI::IsMember({"smoke", "desk", "paper"}))
      ->capture_default_str();
  c_t1->add_option("--seeds", t1.seeds, "replications per scenario")->capture_default_str();
  c_t1->add_option("--seed", t1.seed, "master seed")->capture_default_str();
  c_t1->add_option("--threads", t1.threads, "worker threads");
  c_t1->add_option("--out", t1_out, "metrics CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cli::ok : cli::usage;
  }

  return cli::guarded([&]() -> int {
    if (c_sim->parsed()) {
      sim.sim.snr = snr == "high" ? Snr::high : Snr::low;
      sim.out_dir = sim_out;
      return cli::cmd_simulate(sim);
    }
    if (c_fit->parsed()) {
      fit.panel = fit_panel;
      fit.calendar = fit_cal;
      fit.adjacency = fit_adj;
      fit.out_dir = fit_out;
      fit.factors = cli::split_list(fit_factors);
      fit.normalize = !no_normalize;
      fit.config = fit_flags.resolve();
      return cli::cmd_fit(fit);
    }
    if (c_sel->parsed()) {
      sel.panel = sel_panel;
      sel.calendar = sel_cal;
      sel.adjacency = sel_adj;
      sel.candidates = sel_cand;
      sel.out_dir = sel_out;
      sel.config = sel_flags.resolve();
      return cli::cmd_select(sel);
    }
    if (c_fc->parsed()) {
      fc.store = fc_store;
      fc.future_calendar = fc_cal;
      fc.out_dir = fc_out;
      if (!fc_truth.empty()) fc.truth = fc_truth;
      return cli::cmd_forecast(fc);
    }
    if (c_dg->parsed()) {
      dg.store = dg_store;
      dg.out = dg_out;
      return cli::cmd_diagnose(dg);
    }
    t1.out = t1_out;
    return cli::cmd_table1(t1);
  });
}

#pragma once

// Subcommand implementations behind the stfm tool. Each command validates its
// inputs, runs the pipeline, writes its outputs and a run manifest, and maps
// failures to exit codes.

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stfm/diagnostics.hpp"
#include "stfm/domain.hpp"
#include "stfm/errors.hpp"
#include "stfm/forecast.hpp"
#include "stfm/io.hpp"
#include "stfm/sampler.hpp"
#include "stfm/selection.hpp"
#include "stfm/simulate.hpp"
#include "stfm/store.hpp"

namespace stfm::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { ok = 0, usage = 1, validation = 2, numerical = 3, diagnostics_failed = 4 };

// ---------------------------------------------------------------------------
// Manifest

inline std::string sha256_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

class RunManifest {
 public:
  explicit RunManifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    started_at_ = utc_now();
  }

  nlohmann::json& config() { return config_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void add_input(const std::filesystem::path& p) { inputs_.push_back(p); }
  void add_output(const std::filesystem::path& p) { outputs_.push_back(p); }

  // Digests are taken at write time; directories are hashed file by file.
  void write(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["command"] = command_;
    j["version"] = kVersion;
    j["seed"] = seed_;
    j["config"] = config_;
    j["started_at"] = started_at_;
    j["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    j["inputs"] = digests(inputs_);
    j["outputs"] = digests(outputs_);
    write_file_atomic(path, j.dump(2) + "\n");
  }

 private:
  static std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  static nlohmann::json digests(const std::vector<std::filesystem::path>& paths) {
    namespace fs = std::filesystem;
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : paths) {
      if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(p)) {
          if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out.push_back({{"path", f.string()}, {"sha256", sha256_hex(f)}});
      } else if (fs::exists(p)) {
        out.push_back({{"path", p.string()}, {"sha256", sha256_hex(p)}});
      }
    }
    return out;
  }

  std::string command_;
  nlohmann::json config_ = nlohmann::json::object();
  std::uint64_t seed_ = 0;
  std::vector<std::filesystem::path> inputs_, outputs_;
  std::string started_at_;
  std::chrono::steady_clock::time_point start_;
};

// Runs f and maps exceptions to exit codes, reporting on err.
template <typename F>
int guarded(F&& f, std::ostream& err = std::cerr) {
  try {
    return f();
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return numerical;
  } catch (const ValidationError& e) {
    err << "invalid input: " << e.what() << '\n';
    return validation;
  } catch (const DomainError& e) {
    err << "invalid input: " << e.what() << '\n';
    return validation;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
    return validation;
  } catch (const nlohmann::json::exception& e) {
    err << "invalid input: " << e.what() << '\n';
    return validation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return numerical;
  }
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Config file (optional) followed by flag overrides given as key=value pairs.
inline RunConfig load_run_config(const std::string& config_path, const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig rc;
  if (!config_path.empty()) rc = read_config(config_path);
  for (const auto& [k, v] : overrides) apply_config_value(rc, k, v, "flag --" + k, 0);
  rc.hyper.validate();
  rc.sampler.validate();
  return rc;
}

inline nlohmann::json run_config_json(const RunConfig& rc) {
  return {{"hyper", hyper_to_json(rc.hyper)},
          {"sampler", config_to_json(rc.sampler)},
          {"prune_quantile", rc.prune_quantile},
          {"prune_threshold", rc.prune_threshold}};
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  SimConfig sim;
  std::filesystem::path out_dir;
  bool weekly = false;  // weekday/weekend calendar instead of all working days
};

inline int cmd_simulate(SimulateArgs a, std::ostream& log = std::cout) {
  namespace fs = std::filesystem;
  RunManifest man("simulate");
  if (a.weekly) a.sim.day_types = weekly_calendar(a.sim.t);
  const SimResult r = generate(a.sim);
  fs::create_directories(a.out_dir);
  FunctionalPanel truth = r.panel;
  truth.values = r.truth.latent;
  const auto panel = a.out_dir / "panel.csv", truth_p = a.out_dir / "truth.csv",
             adj = a.out_dir / "adjacency.csv", cal = a.out_dir / "calendar.csv";
  write_panel_csv(panel, r.panel);
  write_panel_csv(truth_p, truth);
  write_adjacency_csv(adj, r.graph, r.panel.district_ids);
  write_calendar_csv(cal, r.panel.day_ids, r.day_types);
  man.set_seed(a.sim.seed);
  man.config() = {{"n", a.sim.n}, {"t", a.sim.t}, {"k", a.sim.k}, {"snr", a.sim.snr == Snr::high ? "high" : "low"},
                  {"superfluous_factor", a.sim.superfluous_factor}, {"pre_dayoff_effect", a.sim.pre_dayoff_effect},
                  {"weekly", a.weekly}};
  for (const auto& p : {panel, truth_p, adj, cal}) man.add_output(p);
  man.write(a.out_dir / "manifest.json");
  log << "wrote " << a.out_dir.string() << '\n';
  return ok;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::filesystem::path panel, calendar, adjacency, out_dir;
  std::vector<std::string> factors;
  RunConfig config;
  bool normalize = true;
};

struct PreparedData {
  FunctionalPanel panel;  // model order, normalized when requested
  AdjacencyGraph graph;
  Calendar calendar;
  StoreMeta meta;
};

inline PreparedData prepare_data(const FunctionalPanel& raw, const std::vector<DayType>& day_types,
                                 const AdjacencyGraph& graph, const std::vector<std::string>& factors,
                                 Extension extension, bool normalize) {
  raw.validate();
  PreparedData d;
  auto re = reorder_for_factors(raw, graph, factors);
  d.meta.permutation = re.permutation;
  if (normalize) {
    auto np = normalize_panel(re.panel);
    d.panel = std::move(np.panel);
    d.meta.scale = np.scale;
  } else {
    d.panel = std::move(re.panel);
    d.meta.scale = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(raw.districts()));
  }
  d.graph = std::move(re.graph);
  d.calendar = build_calendar(day_types, extension);
  d.meta.district_ids = d.panel.district_ids;
  d.meta.day_ids = d.panel.day_ids;
  return d;
}

inline int cmd_fit(const FitArgs& a, std::ostream& log = std::cout) {
  RunManifest man("fit");
  const FunctionalPanel raw = read_panel_csv(a.panel);
  const auto days = align_calendar(read_calendar_csv(a.calendar), raw.day_ids);
  const AdjacencyGraph graph = read_adjacency_csv(a.adjacency, raw.district_ids);
  if (a.factors.empty()) throw ValidationError("fit needs --factors");
  const auto d = prepare_data(raw, days, graph, a.factors, a.config.sampler.extension, a.normalize);
  const DrawStore store =
      run_chains(d.panel, d.calendar, d.graph, a.config.hyper, a.factors.size(), a.config.sampler, d.meta);
  save_store(store, a.out_dir);
  man.set_seed(a.config.sampler.seed);
  man.config() = run_config_json(a.config);
  man.config()["factors"] = a.factors;
  man.config()["normalize"] = a.normalize;
  for (const auto& p : {a.panel, a.calendar, a.adjacency}) man.add_input(p);
  man.add_output(a.out_dir);
  man.write(a.out_dir / "manifest.json");
  if (!store.complete()) {
    for (const auto& c : store.chains()) {
      if (!c.complete) log << "chain failed: " << c.error << '\n';
    }
    throw NumericalError("one or more chains failed; partial store written");
  }
  log << "stored " << store.total_draws() << " draws in " << a.out_dir.string() << '\n';
  return ok;
}

// ---------------------------------------------------------------------------
// select

struct SelectArgs {
  std::filesystem::path panel, calendar, adjacency, candidates, out_dir;
  RunConfig config;
  Subsample subsample;
};

// One candidate per line: "label: id,id,..." or just "id,id,...".
inline std::vector<CandidateSet> read_candidates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<CandidateSet> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    CandidateSet c;
    if (auto colon = line.find(':'); colon != std::string::npos) {
      c.label = detail::trim(line.substr(0, colon));
      line = line.substr(colon + 1);
    } else {
      c.label = "candidate" + std::to_string(out.size() + 1);
    }
    c.factor_districts = split_list(line);
    if (c.factor_districts.empty()) throw ParseError(path.string(), no, "candidate without districts");
    out.push_back(std::move(c));
  }
  if (out.empty()) throw ValidationError(path.string() + ": no candidates");
  return out;
}

inline int cmd_select(const SelectArgs& a, std::ostream& log = std::cout) {
  namespace fs = std::filesystem;
  RunManifest man("select");
  const FunctionalPanel raw = read_panel_csv(a.panel);
  const auto days = align_calendar(read_calendar_csv(a.calendar), raw.day_ids);
  const AdjacencyGraph graph = read_adjacency_csv(a.adjacency, raw.district_ids);
  const auto candidates = read_candidates(a.candidates);
  const auto norm = normalize_panel(raw);
  const auto rep = select_factors(norm.panel, days, graph, candidates, a.config.hyper, a.config.sampler,
                                  a.subsample, {a.config.prune_quantile, a.config.prune_threshold});
  fs::create_directories(a.out_dir);

  nlohmann::json j;
  j["winner"] = rep.candidates[rep.winner].candidate.label;
  j["subsample_districts"] = rep.subsample_districts;
  for (const auto& c : rep.candidates) {
    j["candidates"].push_back({{"label", c.candidate.label},
                               {"factors", c.candidate.factor_districts},
                               {"valid", c.valid},
                               {"error", c.error},
                               {"ppl", c.valid ? nlohmann::json(c.ppl.total()) : nlohmann::json(nullptr)},
                               {"fit", c.ppl.fit},
                               {"noise", c.ppl.noise},
                               {"variance", c.ppl.variance}});
  }
  for (const auto& v : rep.verdicts) {
    j["verdicts"].push_back({{"factor", v.district},
                             {"median_max_loading", v.median_max_loading},
                             {"quantile_max_loading", v.quantile_max_loading},
                             {"verdict", v.kept ? "kept" : "pruned"}});
  }
  const auto report = a.out_dir / "selection.json", table = a.out_dir / "selection.csv";
  write_file_atomic(report, j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "candidate,ppl,verdicts\n";
  for (std::size_t i = 0; i < rep.candidates.size(); ++i) {
    const auto& c = rep.candidates[i];
    csv << c.candidate.label << ',' << (c.valid ? format_double(c.ppl.total()) : "NA") << ',';
    if (i == rep.winner) {
      std::string v;
      for (const auto& f : rep.verdicts) v += (v.empty() ? "" : ";") + f.district + "=" + (f.kept ? "kept" : "pruned");
      csv << v;
    }
    csv << '\n';
  }
  write_file_atomic(table, csv.str());

  man.set_seed(a.config.sampler.seed);
  man.config() = run_config_json(a.config);
  man.config()["subsample"] = {{"days", a.subsample.days}, {"districts", a.subsample.districts},
                               {"seed", a.subsample.seed}};
  for (const auto& p : {a.panel, a.calendar, a.adjacency, a.candidates}) man.add_input(p);
  man.add_output(report);
  man.add_output(table);
  man.write(a.out_dir / "manifest.json");
  log << "winner: " << rep.candidates[rep.winner].candidate.label << '\n';
  return ok;
}

// ---------------------------------------------------------------------------
// forecast

struct ForecastArgs {
  std::filesystem::path store, future_calendar, out_dir;
  std::optional<std::filesystem::path> truth;  // panel CSV over the horizon
  std::size_t horizon = 1;
  std::uint64_t seed = 1;
  ForecastOptions options;
};

inline int cmd_forecast(const ForecastArgs& a, std::ostream& log = std::cout) {
  namespace fs = std::filesystem;
  RunManifest man("forecast");
  const DrawStore store = load_store(a.store);
  const DayCalendar future = read_calendar_csv(a.future_calendar);
  if (future.types.size() < a.horizon) throw ValidationError("future calendar shorter than the horizon");
  Rng rng(derive_seed(a.seed, "forecast"));
  const auto res = forecast(store, future.types, a.horizon, rng, a.options);

  // Original district order is restored by the forecaster.
  std::vector<std::string> ids(store.layout().n);
  for (std::size_t s = 0; s < ids.size(); ++s) {
    ids[store.meta().permutation.empty() ? s : store.meta().permutation[s]] = store.meta().district_ids[s];
  }
  fs::create_directories(a.out_dir);
  std::ostringstream os;
  os.precision(17);
  os << "district,day,grid_point,mean,lo,hi\n";
  for (std::size_t s = 0; s < ids.size(); ++s) {
    for (std::size_t h = 0; h < a.horizon; ++h) {
      for (std::size_t k = 0; k < store.layout().k; ++k) {
        os << ids[s] << ',' << future.day_ids[h] << ',' << store.meta().grid[k] << ',' << res.mean(s, h, k) << ','
           << res.lower(s, h, k) << ',' << res.upper(s, h, k) << '\n';
      }
    }
  }
  const auto out = a.out_dir / "forecast.csv";
  write_file_atomic(out, os.str());
  man.add_output(out);

  if (a.truth) {
    const FunctionalPanel t = read_panel_csv(*a.truth);
    Cube truth(ids.size(), a.horizon, store.layout().k);
    for (std::size_t s = 0; s < ids.size(); ++s) {
      auto si = std::find(t.district_ids.begin(), t.district_ids.end(), ids[s]);
      if (si == t.district_ids.end()) throw ValidationError("truth panel lacks district " + ids[s]);
      for (std::size_t h = 0; h < a.horizon; ++h) {
        auto di = std::find(t.day_ids.begin(), t.day_ids.end(), future.day_ids[h]);
        if (di == t.day_ids.end()) throw ValidationError("truth panel lacks day " + future.day_ids[h]);
        if (t.points() != store.layout().k) throw ValidationError("truth grid does not match the store");
        truth.curve(s, h) = t.values.curve(static_cast<std::size_t>(si - t.district_ids.begin()),
                                           static_cast<std::size_t>(di - t.day_ids.begin()));
      }
    }
    const auto sr = srmse(res.mean, truth);
    std::ostringstream ms;
    ms.precision(17);
    ms << "district,srmse\n";
    for (std::size_t s = 0; s < ids.size(); ++s) ms << ids[s] << ',' << sr(static_cast<Eigen::Index>(s)) << '\n';
    ms << "ALL_rmse," << rmse(res.mean, truth) << '\n';
    ms << "ALL_coverage," << coverage(res.lower, res.upper, truth) << '\n';
    const auto mpath = a.out_dir / "metrics.csv";
    write_file_atomic(mpath, ms.str());
    man.add_input(*a.truth);
    man.add_output(mpath);
  }
  man.set_seed(a.seed);
  man.config() = {{"horizon", a.horizon}, {"level", a.options.level}, {"max_draws", a.options.max_draws}};
  man.add_input(a.store);
  man.add_input(a.future_calendar);
  man.write(a.out_dir / "manifest.json");
  log << "wrote " << out.string() << '\n';
  return ok;
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnoseArgs {
  std::filesystem::path store, out;
  DiagnosticsOptions options;
};

inline int cmd_diagnose(const DiagnoseArgs& a, std::ostream& log = std::cout) {
  RunManifest man("diagnose");
  const DrawStore store = load_store(a.store);
  const auto rep = diagnose(store, a.options);
  std::ostringstream os;
  os.precision(10);
  os << "parameter,rhat,ess\n";
  for (const auto& p : rep.params) os << p.param.name << ',' << p.rhat << ',' << p.ess << '\n';
  write_file_atomic(a.out, os.str());
  man.set_seed(a.options.seed);
  man.config() = {{"threshold", a.options.threshold}, {"split", a.options.split},
                  {"random_entries", a.options.random_entries}};
  man.add_input(a.store);
  man.add_output(a.out);
  auto mpath = a.out;
  mpath += ".manifest.json";
  man.write(mpath);
  log << "max R-hat " << rep.max_rhat << ", mean ESS " << rep.mean_ess << (rep.pass ? " (pass)" : " (FAIL)") << '\n';
  return rep.pass ? ok : diagnostics_failed;
}

// ---------------------------------------------------------------------------
// Table 1 scenarios

struct Evaluation {
  double rmse = 0.0, coverage = 0.0;
};

// Fits the factor model to a simulated panel (drivers 1..M as factors) and scores
// the latent-curve medians and 95% bands against the truth.
inline Evaluation evaluate_ffm(const SimResult& sim, const Hyperparams& hyper, SamplerConfig config,
                               std::size_t num_factors = 5) {
  const std::size_t total = config.n_chains * config.n_draws;
  config.latent_stride = std::max<std::size_t>(1, total / 1000);
  const Calendar cal = build_calendar(sim.day_types, config.extension);
  const DrawStore store = run_chains(sim.panel, cal, sim.graph, hyper, num_factors, config);
  if (!store.complete()) {
    for (const auto& c : store.chains()) {
      if (!c.complete) throw NumericalError(c.error);
    }
  }
  const auto sum = summarize_latent(store);
  return {rmse(sum.median, sim.truth.latent), coverage(sum.lower, sum.upper, sim.truth.latent)};
}

inline Evaluation evaluate_udlm(const SimResult& sim, std::uint64_t seed, const UdlmOptions& opt = {}) {
  const auto fit = udlm_panel(sim.panel, 1, seed, opt);
  return {rmse(fit.state.median, sim.truth.latent), coverage(fit.state.lower, fit.state.upper, sim.truth.latent)};
}

struct Table1Row {
  std::string method, snr;
  std::size_t n = 0, t = 0;
  double rmse = 0.0, cp = 0.0;
};

struct Table1Args {
  std::string scale = "desk";  // smoke | desk | paper
  std::size_t seeds = 3;
  std::uint64_t seed = 1;
  std::size_t threads = 0;
  std::filesystem::path out;
};

struct Table1Plan {
  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  SamplerConfig sampler;
  UdlmOptions udlm;
};

inline Table1Plan table1_plan(const std::string& scale) {
  Table1Plan p;
  if (scale == "smoke") {
    p.sizes = {{8, 12}};
    p.sampler.n_chains = 2;
    p.sampler.n_burnin = 60;
    p.sampler.n_draws = 40;
    p.udlm.burnin = 100;
    p.udlm.draws = 100;
  } else if (scale == "desk") {
    p.sizes = {{20, 50}};
    p.sampler.n_burnin = 3000;
    p.sampler.n_draws = 2000;
  } else if (scale == "paper") {
    p.sizes = {{20, 50}, {50, 90}};
    p.sampler.n_burnin = 15000;
    p.sampler.n_draws = 5000;
  } else {
    throw ValidationError("unknown table1 scale '" + scale + "' (smoke, desk or paper)");
  }
  return p;
}

inline std::vector<Table1Row> run_table1(const Table1Args& a, std::ostream& log = std::cout) {
  auto plan = table1_plan(a.scale);
  if (a.seeds == 0) throw ValidationError("table1 needs at least one seed");
  plan.sampler.threads = a.threads;
  std::vector<Table1Row> rows;
  for (Snr snr : {Snr::low, Snr::high}) {
    for (auto [n, t] : plan.sizes) {
      Table1Row ffm{"FFM", snr == Snr::high ? "high" : "low", n, t}, ns{"NSFFM", ffm.snr, n, t},
          ud{"UDLM", ffm.snr, n, t};
      for (std::size_t r = 0; r < a.seeds; ++r) {
        SimConfig sc;
        sc.n = n;
        sc.t = t;
        sc.snr = snr;
        sc.seed = derive_seed(a.seed, "table1-" + ffm.snr + "-" + std::to_string(n) + "-" + std::to_string(r));
        const auto sim = generate(sc);
        auto cfg = plan.sampler;
        cfg.seed = sc.seed;
        Hyperparams h;
        const auto e1 = evaluate_ffm(sim, h, cfg);
        h.loading_prior = LoadingPrior::nonsparse;
        const auto e2 = evaluate_ffm(sim, h, cfg);
        const auto e3 = evaluate_udlm(sim, sc.seed, plan.udlm);
        ffm.rmse += e1.rmse;
        ffm.cp += e1.coverage;
        ns.rmse += e2.rmse;
        ns.cp += e2.coverage;
        ud.rmse += e3.rmse;
        ud.cp += e3.coverage;
        log << ffm.snr << " (" << n << "," << t << ") seed " << r << ": FFM " << e1.rmse << " NSFFM " << e2.rmse
            << " UDLM " << e3.rmse << '\n';
      }
      for (auto* row : {&ffm, &ns, &ud}) {
        row->rmse /= static_cast<double>(a.seeds);
        row->cp /= static_cast<double>(a.seeds);
        rows.push_back(*row);
      }
    }
  }
  return rows;
}

inline std::string table1_csv(const std::vector<Table1Row>& rows) {
  std::ostringstream os;
  os.precision(6);
  os << "method,snr,N,T,RMSE,CP\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.snr << ',' << r.n << ',' << r.t << ',' << r.rmse << ',' << 100.0 * r.cp << '\n';
  }
  return os.str();
}

inline int cmd_table1(const Table1Args& a, std::ostream& log = std::cout) {
  RunManifest man("table1");
  const auto rows = run_table1(a, log);
  write_file_atomic(a.out, table1_csv(rows));
  man.set_seed(a.seed);
  man.config() = {{"scale", a.scale}, {"seeds", a.seeds}};
  man.add_output(a.out);
  auto mpath = a.out;
  mpath += ".manifest.json";
  man.write(mpath);
  log << "wrote " << a.out.string() << '\n';
  return ok;
}

}  // namespace stfm::cli

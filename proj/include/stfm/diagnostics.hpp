#pragma once

// Convergence diagnostics: potential scale reduction and effective sample size.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "stfm/errors.hpp"
#include "stfm/random.hpp"
#include "stfm/store.hpp"

namespace stfm {

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double var_of(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace detail

// Classic PSRF: sqrt(V / W) with V = (n-1)/n W + (m+1)/(m n) B.
// Returns 1 when every chain is the same constant and +inf when chains are
// individually constant but disagree. With split = true each chain is halved
// first (a trailing odd draw is dropped).
inline double gelman_rubin(const std::vector<std::vector<double>>& chains, bool split = false) {
  if (chains.size() < 2) throw ValidationError("gelman_rubin needs at least two chains");
  const std::size_t len = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != len) throw ValidationError("gelman_rubin: chains differ in length");
  }
  std::vector<std::vector<double>> parts;
  if (split) {
    const std::size_t half = len / 2;
    for (const auto& c : chains) {
      parts.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
      parts.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(half),
                         c.begin() + static_cast<std::ptrdiff_t>(2 * half));
    }
  } else {
    parts = chains;
  }
  const std::size_t n = parts.front().size();
  if (n < 2) throw ValidationError("gelman_rubin needs at least two draws per chain");
  const auto m = static_cast<double>(parts.size());
  const auto nd = static_cast<double>(n);

  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : parts) {
    const double mu = detail::mean_of(c);
    means.push_back(mu);
    w += detail::var_of(c, mu);
  }
  w /= m;
  const double b = nd * detail::var_of(means, detail::mean_of(means));
  if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double v = (nd - 1.0) / nd * w + (m + 1.0) / (m * nd) * b;
  return std::sqrt(v / w);
}

// n / (1 + 2 sum rho_k) with Geyer's initial positive sequence: lag pairs
// rho_{2j} + rho_{2j+1} are summed while positive. Clipped to (0, n]; a
// constant chain has ESS n.
inline double effective_sample_size(const std::vector<double>& chain) {
  const std::size_t n = chain.size();
  if (n == 0) throw ValidationError("effective_sample_size of an empty chain");
  if (n < 4) return static_cast<double>(n);
  const double mu = detail::mean_of(chain);
  std::vector<double> c(chain.size());
  for (std::size_t i = 0; i < n; ++i) c[i] = chain[i] - mu;
  auto acov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += c[i] * c[i + lag];
    return s / static_cast<double>(n);
  };
  const double c0 = acov(0);
  if (!(c0 > 0.0)) return static_cast<double>(n);
  double tau = -1.0;  // -rho_0 + 2 sum of pair sums
  for (std::size_t lag = 0; lag + 1 < n; lag += 2) {
    const double pair = (acov(lag) + acov(lag + 1)) / c0;
    if (!(pair > 0.0)) break;
    tau += 2.0 * pair;
  }
  const double ess = static_cast<double>(n) / std::max(tau, 1.0 / static_cast<double>(n));
  return std::min(ess, static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Store-level report

struct MonitoredParam {
  std::string name;
  std::size_t slot = 0;  // offset inside a parameter record
};

struct ParamDiagnostic {
  MonitoredParam param;
  double rhat = 1.0;
  double ess = 0.0;  // summed over chains
};

struct DiagnosticsOptions {
  double threshold = 1.1;
  bool split = false;
  std::size_t random_entries = 10;
  std::uint64_t seed = 1;
};

struct DiagnosticsReport {
  std::vector<ParamDiagnostic> params;
  double threshold = 1.1;
  bool pass = true;
  double max_rhat = 1.0;
  double mean_ess = 0.0;
};

// All gamma, psi, upsilon^2 and every e^2, plus seeded random entries of the
// free loadings, the day-off effects and the last-day factors.
inline std::vector<MonitoredParam> monitored_params(const DrawLayout& l, std::size_t random_entries = 10,
                                                    std::uint64_t seed = 1) {
  std::vector<MonitoredParam> out;
  for (std::size_t m = 0; m < l.m; ++m) out.push_back({"gamma[" + std::to_string(m) + "]", l.ar_coef() + m});
  out.push_back({"psi", l.spatial_dep()});
  out.push_back({"upsilon2", l.global_scale()});
  for (std::size_t s = 0; s < l.n; ++s) out.push_back({"e2[" + std::to_string(s) + "]", l.noise_var() + s});

  Rng rng(derive_seed(seed, "monitor"));
  auto pick = [&](std::vector<MonitoredParam> pool) {
    std::shuffle(pool.begin(), pool.end(), rng);
    if (pool.size() > random_entries) pool.resize(random_entries);
    std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.slot < b.slot; });
    out.insert(out.end(), pool.begin(), pool.end());
  };
  std::vector<MonitoredParam> b, mu, x;
  for (std::size_t c = 0; c < l.m; ++c) {
    for (std::size_t j = c + 1; j < l.n; ++j) {
      b.push_back({"B[" + std::to_string(j) + "," + std::to_string(c) + "]", l.loading() + c * l.n + j});
    }
    for (std::size_t k = 0; k < l.k; ++k) {
      const std::string tag = "[" + std::to_string(k) + "," + std::to_string(c) + "]";
      mu.push_back({"mu" + tag, l.dayoff() + c * l.k + k});
      x.push_back({"x_last" + tag, l.last_factors() + c * l.k + k});
    }
  }
  pick(std::move(b));
  pick(std::move(mu));
  pick(std::move(x));
  return out;
}

inline DiagnosticsReport diagnose(const DrawStore& store, const DiagnosticsOptions& opt = {}) {
  if (store.num_chains() < 2) throw ValidationError("diagnostics need at least two chains");
  std::size_t len = std::numeric_limits<std::size_t>::max();
  for (const auto& c : store.chains()) len = std::min(len, c.n_params);
  if (len < 4) throw ValidationError("diagnostics need at least four draws per chain");

  DiagnosticsReport rep;
  rep.threshold = opt.threshold;
  double ess_sum = 0.0;
  for (const auto& p : monitored_params(store.layout(), opt.random_entries, opt.seed)) {
    std::vector<std::vector<double>> chains;
    double ess = 0.0;
    for (std::size_t c = 0; c < store.num_chains(); ++c) {
      auto tr = store.trace(c, p.slot);
      tr.resize(len);
      ess += effective_sample_size(tr);
      chains.push_back(std::move(tr));
    }
    ParamDiagnostic d{p, gelman_rubin(chains, opt.split), ess};
    rep.max_rhat = std::max(rep.max_rhat, d.rhat);
    if (!(d.rhat < opt.threshold)) rep.pass = false;
    ess_sum += ess;
    rep.params.push_back(std::move(d));
  }
  rep.mean_ess = rep.params.empty() ? 0.0 : ess_sum / static_cast<double>(rep.params.size());
  return rep;
}

}  // namespace stfm

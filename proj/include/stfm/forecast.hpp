#pragma once

// Posterior-predictive forecasts from stored draws, error metrics and the
// univariate local-level baseline.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "stfm/domain.hpp"
#include "stfm/errors.hpp"
#include "stfm/kernel.hpp"
#include "stfm/random.hpp"
#include "stfm/store.hpp"

namespace stfm {

// ---------------------------------------------------------------------------
// Metrics

inline double rmse(std::span<const double> estimate, std::span<const double> truth) {
  if (estimate.size() != truth.size()) throw ValidationError("rmse: size mismatch");
  if (truth.empty()) throw ValidationError("rmse: empty input");
  double ss = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) ss += (estimate[i] - truth[i]) * (estimate[i] - truth[i]);
  return std::sqrt(ss / static_cast<double>(truth.size()));
}

inline double rmse(const Cube& estimate, const Cube& truth) { return rmse(estimate.data(), truth.data()); }

// Share of points strictly inside (lower, upper).
inline double coverage(std::span<const double> lower, std::span<const double> upper,
                       std::span<const double> truth) {
  if (lower.size() != truth.size() || upper.size() != truth.size()) {
    throw ValidationError("coverage: size mismatch");
  }
  if (truth.empty()) throw ValidationError("coverage: empty input");
  std::size_t in = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) in += lower[i] < truth[i] && truth[i] < upper[i];
  return static_cast<double>(in) / static_cast<double>(truth.size());
}

inline double coverage(const Cube& lower, const Cube& upper, const Cube& truth) {
  return coverage(lower.data(), upper.data(), truth.data());
}

// Per district: sqrt(sum ||yhat - y||^2) / sqrt(sum ||y||^2) over days and points.
inline Eigen::VectorXd srmse(const Cube& forecast_mean, const Cube& truth) {
  if (forecast_mean.rows() != truth.rows() || forecast_mean.cols() != truth.cols() ||
      forecast_mean.depth() != truth.depth()) {
    throw ValidationError("srmse: shape mismatch");
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(truth.rows()));
  for (std::size_t s = 0; s < truth.rows(); ++s) {
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < truth.cols(); ++t) {
      num += (forecast_mean.curve(s, t) - truth.curve(s, t)).squaredNorm();
      den += truth.curve(s, t).squaredNorm();
    }
    if (!(den > 0.0)) throw DomainError("srmse: truth is identically zero for a district");
    out(static_cast<Eigen::Index>(s)) = std::sqrt(num / den);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise summaries over draws

struct PointSummary {
  double mean = 0.0, median = 0.0, lower = 0.0, upper = 0.0;
};

// Equal-tailed interval at `level` from the empirical quantiles (linear
// interpolation between order statistics). Reorders v.
inline PointSummary summarize_draws(std::vector<double>& v, double level) {
  if (v.empty()) throw ValidationError("summary of an empty sample");
  PointSummary s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  const double tail = (1.0 - level) / 2.0;
  s.median = q(0.5);
  s.lower = q(tail);
  s.upper = q(1.0 - tail);
  return s;
}

// Posterior medians and equal-tailed bands of the latent curves z in original
// district order and scale.
struct LatentSummary {
  Cube median, lower, upper;
};

inline LatentSummary summarize_latent(const DrawStore& store, double level = 0.95) {
  const auto& l = store.layout();
  const std::size_t n_rec = store.total_latent();
  if (n_rec == 0) throw ValidationError("store keeps no latent draws");
  LatentSummary out{Cube(l.n, l.t, l.k), Cube(l.n, l.t, l.k), Cube(l.n, l.t, l.k)};
  const auto& perm = store.meta().permutation;
  const auto& scale = store.meta().scale;
  std::vector<double> v(n_rec);
  for (std::size_t s = 0; s < l.n; ++s) {
    const std::size_t orig = perm.empty() ? s : perm[s];
    const double sc = scale.size() ? scale(static_cast<Eigen::Index>(s)) : 1.0;
    for (std::size_t t = 0; t < l.t; ++t) {
      for (std::size_t k = 0; k < l.k; ++k) {
        std::size_t r = 0;
        for (std::size_t c = 0; c < store.num_chains(); ++c) {
          for (std::size_t i = 0; i < store.chains()[c].n_latent; ++i) {
            v[r++] = store.latent_at(store.latent_record(c, i), s, t, k);
          }
        }
        const auto p = summarize_draws(v, level);
        out.median(orig, t, k) = p.median * sc;
        out.lower(orig, t, k) = p.lower * sc;
        out.upper(orig, t, k) = p.upper * sc;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model forecasts

struct ForecastOptions {
  double level = 0.95;
  std::size_t max_draws = 1000;  // evenly spaced subset of stored draws
  bool keep_trajectories = false;
};

struct ForecastResult {
  Cube mean, lower, upper;  // N x H x K, original district order and scale
  double level = 0.95;
  std::vector<Cube> trajectories;
};

// Indices (chain, record) of at most max_draws evenly spaced stored draws.
inline std::vector<std::pair<std::size_t, std::size_t>> forecast_draws(const DrawStore& store,
                                                                       std::size_t max_draws) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t c = 0; c < store.num_chains(); ++c) {
    for (std::size_t r = 0; r < store.chains()[c].n_params; ++r) all.emplace_back(c, r);
  }
  if (max_draws == 0 || all.size() <= max_draws) return all;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < max_draws; ++i) out.push_back(all[i * all.size() / max_draws]);
  return out;
}

// Propagates each draw H days past the training window:
//   x_{T+h} = G x_{T+h-1} + D mu + D' mu' + D'' mu'' + N(0, Lambda),
//   y = (B (x) I) x + GP(0, eta^2 R(phi)) + N(0, e^2),
// then rescales by the stored normalization and restores district order.
// future_days lists the day types of the H days after training.
inline ForecastResult forecast(const DrawStore& store, const std::vector<DayType>& future_days, std::size_t horizon,
                               Rng& rng, const ForecastOptions& opt = {}) {
  if (horizon == 0) throw ValidationError("forecast horizon must be at least 1");
  if (future_days.size() < horizon) throw ValidationError("future calendar shorter than the horizon");
  if (store.total_draws() == 0) throw ValidationError("forecast: empty store");
  if (!(opt.level > 0.0 && opt.level < 1.0)) throw ValidationError("forecast level must be in (0, 1)");
  const auto& l = store.layout();
  const auto& meta = store.meta();
  const auto n = static_cast<Eigen::Index>(l.n), m = static_cast<Eigen::Index>(l.m),
             k = static_cast<Eigen::Index>(l.k);
  const auto H = horizon;

  std::vector<DayType> span = meta.day_types;
  if (span.empty()) span.assign(l.t, DayType::working);
  span.insert(span.end(), future_days.begin(), future_days.begin() + static_cast<std::ptrdiff_t>(H));
  const Calendar full = build_calendar(span, meta.config.extension);
  const Calendar cal = full.slice(span.size() - H, H);

  const auto picks = forecast_draws(store, opt.max_draws);
  const std::size_t width = l.n * H * l.k;
  std::vector<double> draws(picks.size() * width);

  for (std::size_t d = 0; d < picks.size(); ++d) {
    const ParamDraw p = store.param_draw(picks[d].first, picks[d].second);
    std::vector<Eigen::MatrixXd> gp_chol(l.n);
    for (Eigen::Index s = 0; s < n; ++s) {
      auto& L = gp_chol[static_cast<std::size_t>(s)];
      if (p.gp_scale(s) > 0.0) {
        L = SpdFactor(correlation_matrix(meta.grid, p.gp_range(s))).lower() * std::sqrt(p.gp_scale(s));
      } else {
        L = Eigen::MatrixXd::Zero(k, k);
      }
    }
    Eigen::MatrixXd x = p.last_factors;  // K x M
    Eigen::VectorXd eps(k);
    double* out = draws.data() + d * width;
    for (std::size_t h = 0; h < H; ++h) {
      const auto hi = static_cast<Eigen::Index>(h);
      for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i < k; ++i) eps(i) = std_normal(rng);
        Eigen::VectorXd next = p.ar_coef(j) * x.col(j) + std::sqrt(p.evolution_var(j)) * eps;
        if (cal.dayoff(hi) != 0.0) next += cal.dayoff(hi) * p.dayoff_effect.col(j);
        if (cal.pre_dayoff(hi) != 0.0) next += cal.pre_dayoff(hi) * p.pre_dayoff_effect.col(j);
        if (cal.pre_working(hi) != 0.0) next += cal.pre_working(hi) * p.pre_working_effect.col(j);
        x.col(j) = next;
      }
      const Eigen::MatrixXd signal = x * p.loading.transpose();  // K x N
      for (Eigen::Index s = 0; s < n; ++s) {
        for (Eigen::Index i = 0; i < k; ++i) eps(i) = std_normal(rng);
        Eigen::VectorXd y = signal.col(s) + gp_chol[static_cast<std::size_t>(s)] * eps;
        const double e = std::sqrt(p.noise_var(s));
        for (Eigen::Index i = 0; i < k; ++i) y(i) += e * std_normal(rng);
        const auto su = static_cast<std::size_t>(s);
        const std::size_t orig = meta.permutation.empty() ? su : meta.permutation[su];
        const double sc = meta.scale.size() ? meta.scale(s) : 1.0;
        for (Eigen::Index i = 0; i < k; ++i) {
          out[(orig * H + h) * l.k + static_cast<std::size_t>(i)] = y(i) * sc;
        }
      }
    }
  }

  ForecastResult res{Cube(l.n, H, l.k), Cube(l.n, H, l.k), Cube(l.n, H, l.k), opt.level, {}};
  std::vector<double> v(picks.size());
  for (std::size_t i = 0; i < width; ++i) {
    for (std::size_t d = 0; d < picks.size(); ++d) v[d] = draws[d * width + i];
    const auto sum = summarize_draws(v, opt.level);
    res.mean.data()[i] = sum.mean;
    res.lower.data()[i] = sum.lower;
    res.upper.data()[i] = sum.upper;
  }
  if (opt.keep_trajectories) {
    for (std::size_t d = 0; d < picks.size(); ++d) {
      Cube c(l.n, H, l.k);
      std::copy_n(draws.data() + d * width, width, c.data().begin());
      res.trajectories.push_back(std::move(c));
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Univariate local-level baseline
//   y_t = mu_t + v_t, mu_t = mu_{t-1} + w_t, v ~ N(0, V), w ~ N(0, W),
//   mu_0 ~ N(m0, c0), V, W ~ IG(a, b).

struct KalmanOutput {
  std::vector<double> filtered_mean, filtered_var;  // m_t, C_t for t = 1..T
  std::vector<double> prior_mean, prior_var;        // a_t, R_t
};

inline KalmanOutput kalman_filter(std::span<const double> y, double v, double w, double m0 = 0.0, double c0 = 1.0) {
  KalmanOutput out;
  double m = m0, c = c0;
  for (double obs : y) {
    const double a = m, r = c + w;
    const double q = r + v;
    const double gain = r / q;
    m = a + gain * (obs - a);
    c = r - gain * r;
    out.prior_mean.push_back(a);
    out.prior_var.push_back(r);
    out.filtered_mean.push_back(m);
    out.filtered_var.push_back(c);
  }
  return out;
}

// Forward filter, backward sample: returns mu_0..mu_T.
inline std::vector<double> ffbs(std::span<const double> y, double v, double w, double m0, double c0, Rng& rng) {
  const auto f = kalman_filter(y, v, w, m0, c0);
  const std::size_t T = y.size();
  std::vector<double> mu(T + 1);
  mu[T] = f.filtered_mean[T - 1] + std::sqrt(f.filtered_var[T - 1]) * std_normal(rng);
  for (std::size_t t = T; t-- > 0;) {
    const double m = t == 0 ? m0 : f.filtered_mean[t - 1];
    const double c = t == 0 ? c0 : f.filtered_var[t - 1];
    const double r = f.prior_var[t];
    const double gain = c / r;
    const double mean = m + gain * (mu[t + 1] - m);
    const double var = std::max(c - gain * c, 0.0);
    mu[t] = mean + std::sqrt(var) * std_normal(rng);
  }
  return mu;
}

struct UdlmOptions {
  std::size_t burnin = 1000;
  std::size_t draws = 1000;
  double shape = 0.5, rate = 0.5;  // IG prior on V and W
  double m0 = 0.0, c0 = 1.0;
  double level = 0.95;
};

struct UdlmResult {
  std::vector<double> state_mean, state_median, state_lower, state_upper;  // mu_1..mu_T
  std::vector<double> mean, lower, upper;                                  // y_{T+1..T+H}
  double noise_var_mean = 0.0, level_var_mean = 0.0;
};

inline UdlmResult udlm_fit_forecast(std::span<const double> series, std::size_t horizon, Rng& rng,
                                    const UdlmOptions& opt = {}) {
  const std::size_t T = series.size();
  if (T < 2) throw ValidationError("UDLM needs at least two observations");
  if (opt.draws == 0) throw ValidationError("UDLM needs at least one draw");
  double v = 1.0, w = 1.0;
  std::vector<std::vector<double>> states(T, std::vector<double>(opt.draws));
  std::vector<std::vector<double>> ahead(horizon, std::vector<double>(opt.draws));
  UdlmResult res;
  for (std::size_t it = 0; it < opt.burnin + opt.draws; ++it) {
    const auto mu = ffbs(series, v, w, opt.m0, opt.c0, rng);
    double sv = 0.0, sw = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      sv += (series[t] - mu[t + 1]) * (series[t] - mu[t + 1]);
      sw += (mu[t + 1] - mu[t]) * (mu[t + 1] - mu[t]);
    }
    const double half_t = 0.5 * static_cast<double>(T);
    v = inv_gamma_draw(opt.shape + half_t, opt.rate + 0.5 * sv, rng);
    w = inv_gamma_draw(opt.shape + half_t, opt.rate + 0.5 * sw, rng);
    if (it < opt.burnin) continue;
    const std::size_t d = it - opt.burnin;
    for (std::size_t t = 0; t < T; ++t) states[t][d] = mu[t + 1];
    double level = mu[T];
    for (std::size_t h = 0; h < horizon; ++h) {
      level += std::sqrt(w) * std_normal(rng);
      ahead[h][d] = level + std::sqrt(v) * std_normal(rng);
    }
    res.noise_var_mean += v;
    res.level_var_mean += w;
  }
  res.noise_var_mean /= static_cast<double>(opt.draws);
  res.level_var_mean /= static_cast<double>(opt.draws);
  for (auto& s : states) {
    const auto p = summarize_draws(s, opt.level);
    res.state_mean.push_back(p.mean);
    res.state_median.push_back(p.median);
    res.state_lower.push_back(p.lower);
    res.state_upper.push_back(p.upper);
  }
  for (auto& a : ahead) {
    const auto p = summarize_draws(a, opt.level);
    res.mean.push_back(p.mean);
    res.lower.push_back(p.lower);
    res.upper.push_back(p.upper);
  }
  return res;
}

// Fits the local-level model to every (district, grid point) series of a panel.
// Returns latent-state summaries (N x T x K) and forecasts (N x H x K).
struct UdlmPanelResult {
  LatentSummary state;
  Cube state_mean;
  ForecastResult forecast;
};

inline UdlmPanelResult udlm_panel(const FunctionalPanel& panel, std::size_t horizon, std::uint64_t seed,
                                  const UdlmOptions& opt = {}) {
  const std::size_t n = panel.districts(), T = panel.days(), K = panel.points();
  UdlmPanelResult out;
  out.state = {Cube(n, T, K), Cube(n, T, K), Cube(n, T, K)};
  out.state_mean = Cube(n, T, K);
  out.forecast = {Cube(n, horizon, K), Cube(n, horizon, K), Cube(n, horizon, K), opt.level, {}};
  std::vector<double> series(T);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t t = 0; t < T; ++t) series[t] = panel.values(s, t, k);
      Rng rng(derive_seed(seed, "udlm-" + std::to_string(s) + "-" + std::to_string(k)));
      const auto r = udlm_fit_forecast(series, horizon, rng, opt);
      for (std::size_t t = 0; t < T; ++t) {
        out.state.median(s, t, k) = r.state_median[t];
        out.state.lower(s, t, k) = r.state_lower[t];
        out.state.upper(s, t, k) = r.state_upper[t];
        out.state_mean(s, t, k) = r.state_mean[t];
      }
      for (std::size_t h = 0; h < horizon; ++h) {
        out.forecast.mean(s, h, k) = r.mean[h];
        out.forecast.lower(s, h, k) = r.lower[h];
        out.forecast.upper(s, h, k) = r.upper[h];
      }
    }
  }
  return out;
}

}  // namespace stfm

#pragma once

// Shared test oracles: KS statistics, analytic CDFs and a forward simulator
// that draws data (and optionally parameters) from the model itself.

#include <boost/math/distributions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stfm/domain.hpp"
#include "stfm/kernel.hpp"
#include "stfm/random.hpp"
#include "stfm/store.hpp"

namespace stfm::testing {

// sup |F_n - F| for a sample against a continuous CDF.
inline double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const auto n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

inline double ks_uniform(const std::vector<double>& u) {
  return ks_statistic(u, [](double v) { return std::clamp(v, 0.0, 1.0); });
}

// CDF of the inverse gamma with density ~ v^{-a-1} exp(-b / v).
inline double inv_gamma_cdf(double v, double shape, double rate) {
  if (v <= 0.0) return 0.0;
  return boost::math::gamma_q(shape, rate / v);
}

inline double beta_cdf(double x, double a, double b) {
  return boost::math::cdf(boost::math::beta_distribution<double>(a, b), std::clamp(x, 0.0, 1.0));
}

// Half-Cauchy(0, 1) CDF.
inline double half_cauchy_cdf(double x) { return x <= 0.0 ? 0.0 : 2.0 / M_PI * std::atan(x); }

inline FunctionalPanel blank_panel(std::size_t n, std::size_t t, std::size_t k) {
  FunctionalPanel p;
  p.values = Cube(n, t, k);
  p.grid = MeasurementGrid::hourly(k);
  for (std::size_t i = 0; i < n; ++i) p.district_ids.push_back(std::to_string(i + 1));
  for (std::size_t i = 0; i < t; ++i) p.day_ids.push_back(std::to_string(i + 1));
  return p;
}

// Draws x, z and y from the observation and evolution equations given the
// parameters stored in `s` (its latent/factor cubes are overwritten).
inline void simulate_from_params(ModelState& s, const Calendar& cal, const MeasurementGrid& grid,
                                 double initial_factor_var, Cube& y, Rng& rng) {
  const std::size_t n = s.loading.districts(), m = s.loading.factors(), t_len = cal.days(),
                    k = grid.size();
  const auto K = static_cast<Eigen::Index>(k);
  s.factors = Cube(m, t_len, k);
  s.latent = Cube(n, t_len, k);
  y = Cube(n, t_len, k);
  for (std::size_t f = 0; f < m; ++f) {
    const auto fi = static_cast<Eigen::Index>(f);
    for (std::size_t t = 0; t < t_len; ++t) {
      Eigen::VectorXd x(K);
      for (Eigen::Index j = 0; j < K; ++j) {
        x(j) = std_normal(rng) * std::sqrt(t == 0 ? initial_factor_var : s.evolution_var(fi));
      }
      if (t > 0) {
        const auto ti = static_cast<Eigen::Index>(t);
        x += s.ar_coef(fi) * s.factors.curve(f, t - 1);
        x += cal.dayoff(ti) * s.dayoff_effect.col(fi) + cal.pre_dayoff(ti) * s.pre_dayoff_effect.col(fi) +
             cal.pre_working(ti) * s.pre_working_effect.col(fi);
      }
      s.factors.curve(f, t) = x;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const SpdFactor gp(s.gp_scale(ii) * correlation_matrix(grid, s.gp_range(ii)));
    for (std::size_t t = 0; t < t_len; ++t) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(K);
      for (std::size_t f = 0; f < m; ++f) mean += s.loading(i, f) * s.factors.curve(f, t);
      s.latent.curve(i, t) = mvn_sample(mean, gp, MvnMode::covariance, rng);
      for (Eigen::Index j = 0; j < K; ++j) {
        y.curve(i, t)(j) = s.latent.curve(i, t)(j) + std::sqrt(s.noise_var(ii)) * std_normal(rng);
      }
    }
  }
}

// Draws every parameter from its prior (horseshoe loadings, CAR columns).
inline ModelState draw_prior_params(std::size_t n, std::size_t m, std::size_t t, std::size_t k,
                                    const AdjacencyGraph& graph, const Hyperparams& hyper_in, Rng& rng) {
  const Hyperparams h = hyper_in.resolved(k);
  const auto N = static_cast<Eigen::Index>(n), M = static_cast<Eigen::Index>(m),
             K = static_cast<Eigen::Index>(k);
  const MeasurementGrid grid = MeasurementGrid::hourly(k);
  ModelState s;
  s.latent = Cube(n, t, k);
  s.factors = Cube(m, t, k);
  s.loading = FactorLoading(n, m);
  s.ar_coef.resize(M);
  s.evolution_var.resize(M);
  s.local_scale.resize(M);
  s.local_aux.resize(M);
  for (Eigen::Index f = 0; f < M; ++f) {
    s.ar_coef(f) = truncated_normal_draw(h.m_gamma, h.sigma_gamma, -1.0, 1.0, rng);
    s.evolution_var(f) = inv_gamma_draw(h.n_lambda / 2.0, h.n_lambda * h.s_lambda / 2.0, rng);
  }
  s.noise_var.resize(N);
  s.gp_scale.resize(N);
  s.gp_range.resize(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    s.noise_var(i) = inv_gamma_draw(h.n_e / 2.0, h.n_e * h.s_e / 2.0, rng);
    s.gp_scale(i) = inv_gamma_draw(h.n_eta / 2.0, h.n_eta * h.s_eta / 2.0, rng);
    s.gp_range(i) = inv_gamma_draw(2.0, h.beta_phi, rng);
  }
  const SpdFactor effect_cov(h.eta_prime * correlation_matrix(grid, h.phi_prime));
  s.dayoff_effect.resize(K, M);
  s.pre_dayoff_effect = Eigen::MatrixXd::Zero(K, M);
  s.pre_working_effect = Eigen::MatrixXd::Zero(K, M);
  for (Eigen::Index f = 0; f < M; ++f) {
    s.dayoff_effect.col(f) = mvn_sample(Eigen::VectorXd::Zero(K), effect_cov, MvnMode::covariance, rng);
  }
  if (h.loading_prior == LoadingPrior::horseshoe) {
    s.global_aux = inv_gamma_draw(0.5, 1.0, rng);
    s.global_scale = inv_gamma_draw(0.5, 1.0 / s.global_aux, rng);
    for (Eigen::Index f = 0; f < M; ++f) {
      s.local_aux(f) = inv_gamma_draw(0.5, 1.0, rng);
      s.local_scale(f) = inv_gamma_draw(0.5, 1.0 / s.local_aux(f), rng);
    }
  } else {
    s.global_scale = 1.0;
    s.global_aux = 1.0;
    s.local_aux.setOnes();
    s.local_scale.setConstant(inv_gamma_draw(h.nonsparse_shape, h.nonsparse_rate, rng));
  }
  s.spatial_dep = beta_draw(h.alpha_psi, h.beta_psi, rng);
  for (std::size_t c = 0; c < m; ++c) {
    if (c + 1 >= n) continue;
    const double scale = h.loading_prior == LoadingPrior::horseshoe
                             ? s.global_scale * s.local_scale(static_cast<Eigen::Index>(c))
                             : s.local_scale(static_cast<Eigen::Index>(c));
    const auto q = car_precision(graph, c, s.spatial_dep);
    const Eigen::MatrixXd prec = q.q / scale;
    s.loading.set_free_column(
        c, mvn_sample(Eigen::VectorXd::Zero(prec.rows()), prec, MvnMode::precision, rng));
  }
  return s;
}

// Store filled record by record: fill(chain, draw, params, latent) writes one
// parameter record and (when keep_latent) one latent record.
using RecordFill = std::function<void(std::size_t, std::size_t, double*, double*)>;

inline DrawStore synthetic_store(const DrawLayout& l, std::size_t chains, std::size_t draws, const RecordFill& fill,
                                 bool keep_latent = true) {
  StoreMeta meta;
  meta.grid = MeasurementGrid::hourly(l.k);
  for (std::size_t i = 0; i < l.n; ++i) meta.district_ids.push_back(std::to_string(i + 1));
  for (std::size_t i = 0; i < l.t; ++i) meta.day_ids.push_back(std::to_string(i + 1));
  meta.day_types.assign(l.t, DayType::working);
  DrawStore store(l, meta);
  for (std::size_t c = 0; c < chains; ++c) {
    ChainDraws ch;
    ch.params.assign(draws * l.size(), 0.0);
    if (keep_latent) ch.latent.assign(draws * l.latent_size(), 0.0);
    for (std::size_t d = 0; d < draws; ++d) {
      fill(c, d, ch.params.data() + d * l.size(), keep_latent ? ch.latent.data() + d * l.latent_size() : nullptr);
    }
    ch.n_params = draws;
    ch.n_latent = keep_latent ? draws : 0;
    store.chains().push_back(std::move(ch));
  }
  return store;
}

}  // namespace stfm::testing

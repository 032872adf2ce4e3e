#pragma once

// Synthetic panels from the factor-influence data-generating process:
// districts 1 and 2 drive 3 and 4 (weight 2/3), 3 and 4 spread to districts
// 6..N through band-correlated random weights, 5 stands alone; factors follow
// AR(0.8) curves and every curve carries RBF-GP residuals plus white noise at a
// fixed signal-to-noise ratio.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stfm/domain.hpp"
#include "stfm/kernel.hpp"
#include "stfm/random.hpp"

namespace stfm {

enum class Snr { high, low };

inline double noise_ratio(Snr snr) { return snr == Snr::high ? 0.2 : 0.5; }

struct SimConfig {
  std::size_t n = 20;
  std::size_t t = 50;
  std::size_t k = 24;
  std::size_t m = 5;
  Snr snr = Snr::high;
  std::uint64_t seed = 1;
  // Inserts an extra district after the five drivers whose curve follows its own
  // AR factor and influences nobody.
  bool superfluous_factor = false;
  // Day types; empty means all working days.
  std::vector<DayType> day_types;
  // Constant added to every factor on pre-day-off transitions (D' dummy).
  double pre_dayoff_effect = 0.0;

  void validate() const {
    if (m != 5) throw ValidationError("the generator has exactly 5 driving factors");
    if (n < (superfluous_factor ? 7u : 6u)) throw ValidationError("simulation needs N >= 6 (7 with the extra factor)");
    if (t < 2) throw ValidationError("simulation needs T >= 2");
    if (k < 2) throw ValidationError("simulation needs K >= 2");
    if (!day_types.empty() && day_types.size() != t) throw ValidationError("day_types length must equal T");
  }
};

struct SimTruth {
  Cube latent;   // z: N x T x K
  Cube factors;  // x: (5 or 6) x T x K
  Eigen::VectorXd weight1, weight2;  // mixing weights of districts after the drivers
  Eigen::VectorXd noise_sd;          // e_s
};

struct SimResult {
  FunctionalPanel panel;
  SimTruth truth;
  AdjacencyGraph graph;
  std::vector<DayType> day_types;
};

// Fit-time adjacency: every mixed district is adjacent to districts 3 and 4 and
// to its index neighbours among the mixed districts. first_mixed is 0-based
// (5 normally, 6 with the extra factor district).
inline AdjacencyGraph influence_graph(std::size_t n, std::size_t first_mixed = 5) {
  AdjacencyGraph g(n);
  for (std::size_t j = first_mixed; j < n; ++j) {
    g.add_edge(2, j);
    g.add_edge(3, j);
    if (j > first_mixed) g.add_edge(j - 1, j);
  }
  return g;
}

// Band covariance: 1 on the diagonal, 1/2 on the first off-diagonals.
inline Eigen::MatrixXd band_covariance(std::size_t n) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i + 1 < c.rows(); ++i) {
    c(i, i + 1) = 0.5;
    c(i + 1, i) = 0.5;
  }
  return c;
}

inline SimResult generate(const SimConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "simulate"));
  const std::size_t n = cfg.n, t_len = cfg.t, k = cfg.k;
  const std::size_t n_fac = cfg.superfluous_factor ? 6 : 5;
  const std::size_t first_mixed = n_fac;
  const auto K = static_cast<Eigen::Index>(k);
  const MeasurementGrid grid = MeasurementGrid::hourly(k);

  const SpdFactor init_cov(25.0 * correlation_matrix(grid, 4.0));
  const SpdFactor resid_cov(0.25 * correlation_matrix(grid, 1.0));
  auto gp_draw = [&](const SpdFactor& f) {
    return mvn_sample(Eigen::VectorXd::Zero(K), f, MvnMode::covariance, rng);
  };

  std::vector<DayType> days = cfg.day_types;
  if (days.empty()) days.assign(t_len, DayType::working);
  const Calendar cal = build_calendar(days, Extension::pre_dayoff);

  SimTruth truth;
  truth.factors = Cube(n_fac, t_len, k);
  for (std::size_t m = 0; m < n_fac; ++m) truth.factors.curve(m, 0) = gp_draw(init_cov);
  for (std::size_t t = 1; t < t_len; ++t) {
    const double d = cal.pre_dayoff(static_cast<Eigen::Index>(t));
    for (std::size_t m = 0; m < n_fac; ++m) {
      Eigen::VectorXd x = 0.8 * truth.factors.curve(m, t - 1);
      for (Eigen::Index i = 0; i < K; ++i) x(i) += std_normal(rng);
      if (d != 0.0) x.array() += d * cfg.pre_dayoff_effect;
      truth.factors.curve(m, t) = x;
    }
  }

  const std::size_t n_mixed = n - first_mixed;
  const SpdFactor band(band_covariance(n_mixed));
  const auto zeros = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_mixed));
  truth.weight1 = mvn_sample(zeros, band, MvnMode::covariance, rng);
  truth.weight2 = mvn_sample(zeros, band, MvnMode::covariance, rng);

  truth.latent = Cube(n, t_len, k);
  for (std::size_t t = 0; t < t_len; ++t) {
    auto x = [&](std::size_t m) { return truth.factors.curve(m, t); };
    truth.latent.curve(0, t) = x(0) + gp_draw(resid_cov);
    truth.latent.curve(1, t) = x(1) + gp_draw(resid_cov);
    truth.latent.curve(2, t) = 2.0 / 3.0 * x(0) + x(2) + gp_draw(resid_cov);
    truth.latent.curve(3, t) = 2.0 / 3.0 * x(1) + x(3) + gp_draw(resid_cov);
    truth.latent.curve(4, t) = x(4) + gp_draw(resid_cov);
    if (cfg.superfluous_factor) truth.latent.curve(5, t) = x(5) + gp_draw(resid_cov);
    for (std::size_t j = 0; j < n_mixed; ++j) {
      const auto ji = static_cast<Eigen::Index>(j);
      truth.latent.curve(first_mixed + j, t) = truth.weight1(ji) * truth.latent.curve(2, t) +
                                               truth.weight2(ji) * truth.latent.curve(3, t) +
                                               gp_draw(resid_cov);
    }
  }

  SimResult out;
  out.panel.grid = grid;
  out.panel.values = truth.latent;
  truth.noise_sd.resize(static_cast<Eigen::Index>(n));
  const double r = noise_ratio(cfg.snr);
  for (std::size_t s = 0; s < n; ++s) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
      sum += truth.latent.curve(s, t).sum();
      sq += truth.latent.curve(s, t).squaredNorm();
    }
    const double cnt = static_cast<double>(t_len * k);
    const double mean = sum / cnt;
    const double sd = std::sqrt(std::max(sq / cnt - mean * mean, 0.0));
    const double e = r * sd;
    truth.noise_sd(static_cast<Eigen::Index>(s)) = e;
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t kk = 0; kk < k; ++kk) out.panel.values(s, t, kk) += e * std_normal(rng);
    }
  }
  for (std::size_t s = 0; s < n; ++s) out.panel.district_ids.push_back(std::to_string(s + 1));
  for (std::size_t t = 0; t < t_len; ++t) out.panel.day_ids.push_back(std::to_string(t + 1));
  out.truth = std::move(truth);
  out.graph = influence_graph(n, first_mixed);
  out.day_types = days;
  return out;
}

// Mon-Fri working, Sat/Sun off, starting on the given weekday (0 = Monday).
inline std::vector<DayType> weekly_calendar(std::size_t days, std::size_t first_weekday = 0) {
  std::vector<DayType> out(days);
  for (std::size_t d = 0; d < days; ++d) {
    out[d] = ((first_weekday + d) % 7) >= 5 ? DayType::dayoff : DayType::working;
  }
  return out;
}

}  // namespace stfm

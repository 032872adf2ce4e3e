#pragma once

// Metropolis-within-Gibbs sampler for the functional factor model
//
//   y_ts = z_ts + eps,             eps ~ N(0, e_s^2 I)
//   z_t  = (B (x) I_K) x_t + nu_t,  nu_t ~ N(0, blockdiag(eta_s^2 R(phi_s)))
//   x_t  = G x_{t-1} + D_t mu + D'_t mu' + D''_t mu'' + w_t,  w_t ~ N(0, Lambda)
//
// with a CAR-horseshoe prior on the free part of every loading column.
// One sweep updates, in order: z_t, x_t, gamma, e^2, lambda^2, (eta^2, phi),
// mu (mu', mu''), B columns, theta^2, zeta, upsilon^2, nu, psi.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "stfm/domain.hpp"
#include "stfm/errors.hpp"
#include "stfm/kernel.hpp"
#include "stfm/random.hpp"
#include "stfm/store.hpp"

namespace stfm {

struct GaussianConditional {
  Eigen::MatrixXd precision;
  Eigen::VectorXd mean;
};

struct InvGammaParams {
  double shape = 1.0;
  double rate = 1.0;
};

enum class EffectKind { dayoff, pre_dayoff, pre_working };

// Raised when a block of the sweep fails numerically.
class SweepError : public NumericalError {
 public:
  SweepError(const std::string& block, std::size_t sweep, const std::string& what)
      : NumericalError("sweep " + std::to_string(sweep) + ", block " + block + ": " + what),
        block_(block) {}
  const std::string& block() const noexcept { return block_; }

 private:
  std::string block_;
};

// Per-district factorization of the unit-scale correlation matrix R(phi_s).
struct CorrelationCache {
  double range = -1.0;
  SpdFactor factor;
  Eigen::MatrixXd inverse;
  double log_det = 0.0;
};

inline CorrelationCache make_correlation_cache(const MeasurementGrid& grid, double range) {
  CorrelationCache c;
  c.range = range;
  c.factor = SpdFactor(correlation_matrix(grid, range));
  c.inverse = c.factor.inverse();
  c.log_det = c.factor.log_det();
  return c;
}

struct MhCounter {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  double rate() const { return proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0; }
};

class GibbsSampler {
 public:
  GibbsSampler(const FunctionalPanel& data, const Calendar& calendar, const AdjacencyGraph& graph,
               const Hyperparams& hyper, std::size_t num_factors)
      : data_(data), calendar_(calendar), graph_(graph),
        hyper_(hyper.resolved(data.points())), m_(num_factors) {
    data_.validate();
    hyper_.validate();
    n_ = data_.districts();
    t_ = data_.days();
    k_ = data_.points();
    if (calendar_.days() != t_) throw ValidationError("calendar length does not match panel days");
    if (graph_.size() != n_) throw ValidationError("graph size does not match panel districts");
    if (m_ == 0 || m_ > n_) throw ValidationError("factor count must be in [1, N]");
    effect_prior_ = SpdFactor(hyper_.eta_prime * correlation_matrix(data_.grid, hyper_.phi_prime));
    effect_prior_precision_ = effect_prior_.inverse();
    for (std::size_t c = 0; c < m_; ++c) weights_.push_back(graph_.normalized_weights(c + 1));
    step_phi_.assign(n_, 0.3);
    phi_counter_.assign(n_, {});
  }

  std::size_t districts() const noexcept { return n_; }
  std::size_t days() const noexcept { return t_; }
  std::size_t points() const noexcept { return k_; }
  std::size_t num_factors() const noexcept { return m_; }
  const Hyperparams& hyper() const noexcept { return hyper_; }
  const FunctionalPanel& data() const noexcept { return data_; }
  const Calendar& calendar() const noexcept { return calendar_; }
  Extension extension() const noexcept { return calendar_.extension; }

  void set_step_sizes(double phi_step, double psi_step) {
    step_phi_.assign(n_, phi_step);
    step_psi_ = psi_step;
  }
  double psi_step() const noexcept { return step_psi_; }
  const std::vector<double>& phi_steps() const noexcept { return step_phi_; }
  const MhCounter& psi_counter() const noexcept { return psi_counter_; }

  // Replaces the observed data (same dimensions); used by joint-distribution tests.
  void set_observations(const Cube& y) {
    if (y.rows() != n_ || y.cols() != t_ || y.depth() != k_) {
      throw ValidationError("set_observations: dimension mismatch");
    }
    data_.values = y;
  }

  // Starting point: z = y, factors = their districts' curves, free loadings
  // 0, gamma = m_gamma, variances = dispersal, phi = prior mean, psi = 0.5.
  ModelState initial_state(double dispersal = 1.0) const {
    ModelState s;
    s.latent = data_.values;
    s.factors = Cube(m_, t_, k_);
    for (std::size_t m = 0; m < m_; ++m) {
      for (std::size_t t = 0; t < t_; ++t) s.factors.curve(m, t) = data_.values.curve(m, t);
    }
    s.loading = FactorLoading(n_, m_);
    const auto M = static_cast<Eigen::Index>(m_), N = static_cast<Eigen::Index>(n_),
               K = static_cast<Eigen::Index>(k_);
    s.ar_coef = Eigen::VectorXd::Constant(M, std::clamp(hyper_.m_gamma, -0.99, 0.99));
    s.dayoff_effect = Eigen::MatrixXd::Zero(K, M);
    s.pre_dayoff_effect = Eigen::MatrixXd::Zero(K, M);
    s.pre_working_effect = Eigen::MatrixXd::Zero(K, M);
    s.noise_var = Eigen::VectorXd::Constant(N, dispersal);
    s.evolution_var = Eigen::VectorXd::Constant(M, dispersal);
    s.gp_scale = Eigen::VectorXd::Constant(N, dispersal);
    s.gp_range = Eigen::VectorXd::Constant(N, hyper_.beta_phi);  // IG(2, beta) mean
    s.local_scale = Eigen::VectorXd::Constant(M, dispersal);
    s.local_aux = Eigen::VectorXd::Constant(M, dispersal);
    s.global_scale = hyper_.loading_prior == LoadingPrior::horseshoe ? dispersal : 1.0;
    s.global_aux = s.global_scale;
    if (hyper_.loading_prior == LoadingPrior::nonsparse) s.local_aux.setOnes();
    s.spatial_dep = 0.5;
    return s;
  }

  // ---- full sweep --------------------------------------------------------

  // ext_rng feeds only the extension effects (mu', mu'') so that enabling an
  // extension whose dummies are all zero leaves every other draw unchanged.
  void sweep(ModelState& s, Rng& rng, Rng& ext_rng) {
    ++sweep_index_;
    run_block("latent", [&] { update_latent(s, rng); });
    run_block("factors", [&] { update_factors(s, rng); });
    run_block("ar_coef", [&] {
      for (std::size_t m = 0; m < m_; ++m) s.ar_coef(idx(m)) = sample_ar_coef(m, s, rng);
    });
    run_block("noise_var", [&] {
      for (std::size_t i = 0; i < n_; ++i) s.noise_var(idx(i)) = sample_noise_var(i, s, rng);
    });
    run_block("evolution_var", [&] {
      for (std::size_t m = 0; m < m_; ++m) s.evolution_var(idx(m)) = sample_evolution_var(m, s, rng);
    });
    run_block("gp", [&] {
      for (std::size_t i = 0; i < n_; ++i) sample_gp_params(i, s, rng);
    });
    run_block("effects", [&] {
      for (std::size_t m = 0; m < m_; ++m) {
        s.dayoff_effect.col(idx(m)) = sample_effect(EffectKind::dayoff, m, s, rng);
      }
      if (extension_level(extension()) >= 1) {
        for (std::size_t m = 0; m < m_; ++m) {
          s.pre_dayoff_effect.col(idx(m)) = sample_effect(EffectKind::pre_dayoff, m, s, ext_rng);
        }
      }
      if (extension_level(extension()) >= 2) {
        for (std::size_t m = 0; m < m_; ++m) {
          s.pre_working_effect.col(idx(m)) = sample_effect(EffectKind::pre_working, m, s, ext_rng);
        }
      }
    });
    run_block("loading", [&] {
      for (std::size_t c = 0; c < m_; ++c) {
        if (c + 1 < n_) s.loading.set_free_column(c, sample_loading_column(c, s, rng));
      }
    });
    run_block("shrinkage", [&] { sample_shrinkage(s, rng); });
    run_block("spatial_dep", [&] { s.spatial_dep = sample_spatial_dep(s, rng); });
  }

  // Moves every MH step size toward a 30-45% acceptance rate and resets counters.
  void adapt_steps() {
    auto tune = [](double& step, MhCounter& c) {
      if (c.proposed < 10) return;
      const double r = c.rate();
      if (r < 0.30) step *= 0.8;
      if (r > 0.45) step *= 1.25;
      step = std::clamp(step, 1e-3, 5.0);
      c = {};
    };
    for (std::size_t i = 0; i < n_; ++i) tune(step_phi_[i], phi_counter_[i]);
    tune(step_psi_, psi_counter_);
  }

  // ---- latent curves z ---------------------------------------------------

  // N(m, P^{-1}) for z_ts with P = I/e^2 + R~_s^{-1}.
  GaussianConditional latent_conditional(std::size_t t, std::size_t i, const ModelState& s) {
    const auto& cache = correlation(i, s);
    const double e2 = s.noise_var(idx(i)), eta2 = s.gp_scale(idx(i));
    GaussianConditional g;
    g.precision = cache.inverse / eta2;
    g.precision.diagonal().array() += 1.0 / e2;
    const Eigen::VectorXd prior_mean = loading_mean(t, i, s);
    const Eigen::VectorXd rhs = data_.values.curve(i, t) / e2 + cache.inverse * prior_mean / eta2;
    g.mean = SpdFactor(g.precision).solve(rhs);
    return g;
  }

  // Draws z_t for all districts (length N*K, district-major).
  Eigen::VectorXd sample_latent(std::size_t t, const ModelState& s, Rng& rng) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(n_ * k_));
    for (std::size_t i = 0; i < n_; ++i) {
      const auto g = latent_conditional(t, i, s);
      out.segment(idx(i * k_), idx(k_)) = mvn_sample(g.mean, g.precision, MvnMode::precision, rng);
    }
    return out;
  }

  void update_latent(ModelState& s, Rng& rng) {
    const auto K = idx(k_), T = idx(t_);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto& cache = correlation(i, s);
      const double e2 = s.noise_var(idx(i)), eta2 = s.gp_scale(idx(i));
      Eigen::MatrixXd prec = cache.inverse / eta2;
      prec.diagonal().array() += 1.0 / e2;
      const SpdFactor f(prec);
      Eigen::MatrixXd rhs = data_.values.slab(i) / e2;
      rhs.noalias() += (cache.inverse / eta2) * loading_mean_slab(i, s);
      Eigen::MatrixXd eps(K, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index k = 0; k < K; ++k) eps(k, t) = std_normal(rng);
      }
      Eigen::MatrixXd z = f.solve(rhs);
      z += f.llt().matrixU().solve(eps);
      s.latent.slab(i) = z;
    }
  }

  // ---- factor curves x ---------------------------------------------------

  // (B (x) I)' blockdiag(R~^{-1}) (B (x) I), MK x MK.
  Eigen::MatrixXd loading_precision(const ModelState& s) {
    const auto K = idx(k_);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(idx(m_ * k_), idx(m_ * k_));
    const auto& b = s.loading.values();
    for (std::size_t i = 0; i < n_; ++i) {
      const Eigen::MatrixXd rinv = correlation(i, s).inverse / s.gp_scale(idx(i));
      for (std::size_t p = 0; p < m_; ++p) {
        const double bp = b(idx(i), idx(p));
        if (bp == 0.0) continue;
        for (std::size_t q = 0; q <= p; ++q) {
          const double bq = b(idx(i), idx(q));
          if (bq == 0.0) continue;
          a.block(idx(p * k_), idx(q * k_), K, K) += (bp * bq) * rinv;
        }
      }
    }
    for (std::size_t p = 0; p < m_; ++p) {
      for (std::size_t q = 0; q < p; ++q) {
        a.block(idx(q * k_), idx(p * k_), K, K) = a.block(idx(p * k_), idx(q * k_), K, K).transpose();
      }
    }
    return a;
  }

  GaussianConditional factor_conditional(std::size_t t, const ModelState& s) {
    GaussianConditional g;
    g.precision = loading_precision(s);
    add_evolution_precision(g.precision, t, s);
    g.mean = SpdFactor(g.precision).solve(factor_rhs(t, s, scaled_latent(t, s)));
    return g;
  }

  Eigen::VectorXd sample_factors(std::size_t t, const ModelState& s, Rng& rng) {
    const auto g = factor_conditional(t, s);
    return mvn_sample(g.mean, g.precision, MvnMode::precision, rng);
  }

  void update_factors(ModelState& s, Rng& rng) {
    const Eigen::MatrixXd base = loading_precision(s);
    // Precision depends on t only through the boundary terms.
    std::optional<SpdFactor> first, interior, last;
    auto factor_for = [&](std::size_t t) -> const SpdFactor& {
      std::optional<SpdFactor>& slot = (t == 0) ? first : (t + 1 == t_ ? last : interior);
      if (!slot) {
        Eigen::MatrixXd p = base;
        add_evolution_precision(p, t, s);
        slot.emplace(p);
      }
      return *slot;
    };
    const auto MK = idx(m_ * k_);
    // sum_i b_i. (x) R~_i^{-1} z_ti for every t, as an MK x T matrix.
    Eigen::MatrixXd data_term = Eigen::MatrixXd::Zero(MK, idx(t_));
    for (std::size_t i = 0; i < n_; ++i) {
      const Eigen::MatrixXd u = (correlation(i, s).inverse * s.latent.slab(i)) / s.gp_scale(idx(i));
      for (std::size_t m = 0; m < m_; ++m) {
        const double b = s.loading(i, m);
        if (b != 0.0) data_term.middleRows(idx(m * k_), idx(k_)) += b * u;
      }
    }
    for (std::size_t t = 0; t < t_; ++t) {
      const SpdFactor& f = factor_for(t);
      const Eigen::VectorXd rhs = data_term.col(idx(t)) + evolution_rhs(t, s);
      Eigen::VectorXd eps(MK);
      for (Eigen::Index j = 0; j < MK; ++j) eps(j) = std_normal(rng);
      const Eigen::VectorXd x = f.solve(rhs) + f.llt().matrixU().solve(eps);
      for (std::size_t m = 0; m < m_; ++m) s.factors.curve(m, t) = x.segment(idx(m * k_), idx(k_));
    }
  }

  // ---- AR coefficients gamma -----------------------------------------------

  // Untruncated normal parameters (mean, variance) of gamma_m's conditional.
  std::pair<double, double> ar_coef_moments(std::size_t m, const ModelState& s) const {
    const double l2 = s.evolution_var(idx(m));
    double num = 0.0, den = 0.0;
    for (std::size_t t = 1; t < t_; ++t) {
      const auto prev = s.factors.curve(m, t - 1);
      const Eigen::VectorXd cur = s.factors.curve(m, t) - drift(t, m, s);
      num += cur.dot(prev) / l2;
      den += prev.squaredNorm() / l2;
    }
    const double sg2 = hyper_.sigma_gamma * hyper_.sigma_gamma;
    const double var = 1.0 / (den + 1.0 / sg2);
    return {var * (num + hyper_.m_gamma / sg2), var};
  }

  double sample_ar_coef(std::size_t m, const ModelState& s, Rng& rng) const {
    const auto [mean, var] = ar_coef_moments(m, s);
    return truncated_normal_draw(mean, std::sqrt(var), -1.0, 1.0, rng);
  }

  // ---- variances -----------------------------------------------------------

  InvGammaParams noise_var_conditional(std::size_t i, const ModelState& s) const {
    double ss = 0.0;
    for (std::size_t t = 0; t < t_; ++t) {
      ss += (data_.values.curve(i, t) - s.latent.curve(i, t)).squaredNorm();
    }
    return {(hyper_.n_e + static_cast<double>(t_ * k_)) / 2.0, (hyper_.n_e * hyper_.s_e + ss) / 2.0};
  }

  double sample_noise_var(std::size_t i, const ModelState& s, Rng& rng) const {
    const auto p = noise_var_conditional(i, s);
    return inv_gamma_draw(p.shape, p.rate, rng);
  }

  InvGammaParams evolution_var_conditional(std::size_t m, const ModelState& s) const {
    double ss = 0.0;
    const double g = s.ar_coef(idx(m));
    for (std::size_t t = 1; t < t_; ++t) {
      ss += (s.factors.curve(m, t) - g * s.factors.curve(m, t - 1) - drift(t, m, s)).squaredNorm();
    }
    return {(hyper_.n_lambda + static_cast<double>((t_ - 1) * k_)) / 2.0,
            (hyper_.n_lambda * hyper_.s_lambda + ss) / 2.0};
  }

  double sample_evolution_var(std::size_t m, const ModelState& s, Rng& rng) const {
    const auto p = evolution_var_conditional(m, s);
    return inv_gamma_draw(p.shape, p.rate, rng);
  }

  // ---- GP scale eta^2 and range phi -----------------------------------------

  // sum_t r_ts' R(phi)^{-1} r_ts with r_ts = z_ts - (b_s. (x) I) x_t.
  double gp_quadratic(std::size_t i, const ModelState& s, const CorrelationCache& cache) const {
    const Eigen::MatrixXd r = s.latent.slab(i) - loading_mean_slab(i, s);
    return cache.factor.llt().matrixL().solve(r).squaredNorm();
  }

  InvGammaParams gp_scale_conditional(std::size_t i, const ModelState& s) {
    const double q = gp_quadratic(i, s, correlation(i, s));
    return {(hyper_.n_eta + static_cast<double>(t_ * k_)) / 2.0, (hyper_.n_eta * hyper_.s_eta + q) / 2.0};
  }

  // Log density of log(phi) given residuals (up to a constant), including the
  // IG(2, beta) prior and the log-scale Jacobian. `days` is the number of days
  // whose residuals enter the likelihood (quad must cover the same days).
  double gp_range_log_target(double range, double eta2, double quad, double log_det_r,
                             std::size_t days) const {
    const double lp = -3.0 * std::log(range) - hyper_.beta_phi / range + std::log(range);
    return lp - 0.5 * static_cast<double>(days) * log_det_r - 0.5 * quad / eta2;
  }

  // Gibbs step for eta^2 followed by a random-walk MH step on log(phi).
  void sample_gp_params(std::size_t i, ModelState& s, Rng& rng) {
    const auto p = gp_scale_conditional(i, s);
    s.gp_scale(idx(i)) = inv_gamma_draw(p.shape, p.rate, rng);
    gp_range_step(i, s, t_, rng);
  }

  // Random-walk MH step on log(phi_i); days = 0 drops the likelihood and
  // targets the prior alone.
  void gp_range_step(std::size_t i, ModelState& s, std::size_t days, Rng& rng) {
    const double eta2 = s.gp_scale(idx(i));
    auto& cur = correlation(i, s);
    const double cur_range = s.gp_range(idx(i));
    const double prop_range = std::exp(std::log(cur_range) + step_phi_[i] * std_normal(rng));
    const double log_u = std::log(uniform_open(rng));
    ++phi_counter_[i].proposed;
    if (!(prop_range > 0.0) || !std::isfinite(prop_range)) return;
    std::optional<CorrelationCache> prop;
    try {
      prop = make_correlation_cache(data_.grid, prop_range);
    } catch (const NumericalError&) {
      return;  // proposal auto-rejected
    }
    const bool lik = days > 0;
    const double cur_t =
        gp_range_log_target(cur_range, eta2, lik ? gp_quadratic(i, s, cur) : 0.0, cur.log_det, days);
    const double prop_t =
        gp_range_log_target(prop_range, eta2, lik ? gp_quadratic(i, s, *prop) : 0.0, prop->log_det, days);
    if (log_u < prop_t - cur_t) {
      s.gp_range(idx(i)) = prop_range;
      corr_[i] = std::move(*prop);
      ++phi_counter_[i].accepted;
    }
  }

  // ---- calendar effects mu, mu', mu'' ----------------------------------------

  GaussianConditional effect_conditional(EffectKind kind, std::size_t m, const ModelState& s) const {
    const Eigen::VectorXd& dummy = dummies(kind);
    const double l2 = s.evolution_var(idx(m));
    const double g = s.ar_coef(idx(m));
    double info = 0.0;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(idx(k_));
    for (std::size_t t = 1; t < t_; ++t) {
      const double d = dummy(idx(t));
      if (d == 0.0) continue;
      Eigen::VectorXd r = s.factors.curve(m, t) - g * s.factors.curve(m, t - 1);
      for (EffectKind other : {EffectKind::dayoff, EffectKind::pre_dayoff, EffectKind::pre_working}) {
        if (other == kind) continue;
        const double od = dummies(other)(idx(t));
        if (od != 0.0) r -= od * effect(other, s).col(idx(m));
      }
      info += d * d / l2;
      rhs += d * r / l2;
    }
    GaussianConditional out;
    out.precision = Eigen::MatrixXd::Identity(idx(k_), idx(k_)) * info;
    if (hyper_.dayoff_prior == DayoffPrior::gp) out.precision += effect_prior_precision_;
    if (info == 0.0 && hyper_.dayoff_prior == DayoffPrior::flat) {
      out.mean = effect(kind, s).col(idx(m));
      return out;
    }
    out.mean = SpdFactor(out.precision).solve(rhs);
    return out;
  }

  Eigen::VectorXd sample_effect(EffectKind kind, std::size_t m, const ModelState& s, Rng& rng) const {
    const auto g = effect_conditional(kind, m, s);
    if (g.precision.isZero(0.0)) return g.mean;  // flat prior without information
    return mvn_sample(g.mean, g.precision, MvnMode::precision, rng);
  }

  // ---- loading columns --------------------------------------------------------

  // Prior variance multiplier of column c: upsilon^2 theta_c^2 (horseshoe) or
  // the shared theta^2 (non-sparse prior).
  double column_prior_scale(std::size_t c, const ModelState& s) const {
    if (hyper_.loading_prior == LoadingPrior::horseshoe) return s.global_scale * s.local_scale(idx(c));
    return s.local_scale(idx(c));
  }

  Eigen::MatrixXd car_matrix(std::size_t c, double psi) const {
    const Eigen::MatrixXd& w = weights_.at(c);
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(w.rows(), w.cols()) - psi * w;
    return a * a.transpose();
  }

  GaussianConditional loading_conditional(std::size_t c, const ModelState& s) {
    const std::size_t first = c + 1;
    const auto len = idx(n_ - first);
    GaussianConditional g;
    g.precision = car_matrix(c, s.spatial_dep) / column_prior_scale(c, s);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(len);
    const auto& b = s.loading.values();
    const auto xc = s.factors.slab(c);
    for (std::size_t j = first; j < n_; ++j) {
      // Partial residual: z_j minus every other factor's contribution.
      Eigen::MatrixXd partial = s.latent.slab(j);
      for (std::size_t i = 0; i < m_; ++i) {
        if (i != c && b(idx(j), idx(i)) != 0.0) partial -= b(idx(j), idx(i)) * s.factors.slab(i);
      }
      const Eigen::MatrixXd rx = (correlation(j, s).inverse * xc) / s.gp_scale(idx(j));
      g.precision(idx(j - first), idx(j - first)) += rx.cwiseProduct(xc).sum();
      rhs(idx(j - first)) = rx.cwiseProduct(partial).sum();
    }
    g.mean = SpdFactor(g.precision).solve(rhs);
    return g;
  }

  Eigen::VectorXd sample_loading_column(std::size_t c, const ModelState& s, Rng& rng) {
    const auto g = loading_conditional(c, s);
    return mvn_sample(g.mean, g.precision, MvnMode::precision, rng);
  }

  // ---- shrinkage scales ---------------------------------------------------------

  double column_quadratic(std::size_t c, const ModelState& s) const {
    const Eigen::VectorXd b = s.loading.free_column(c);
    if (b.size() == 0) return 0.0;
    return b.dot(car_matrix(c, s.spatial_dep) * b);
  }

  std::size_t free_count(std::size_t c) const { return n_ - c - 1; }

  InvGammaParams local_scale_conditional(std::size_t c, const ModelState& s) const {
    return {(static_cast<double>(free_count(c)) + 1.0) / 2.0,
            column_quadratic(c, s) / (2.0 * s.global_scale) + 1.0 / s.local_aux(idx(c))};
  }
  static InvGammaParams local_aux_conditional(double local_scale) {
    return {1.0, 1.0 / local_scale + 1.0};
  }
  InvGammaParams global_scale_conditional(const ModelState& s) const {
    double shape = 1.0, rate = 1.0 / s.global_aux;
    for (std::size_t c = 0; c < m_; ++c) {
      shape += static_cast<double>(free_count(c));
      rate += column_quadratic(c, s) / (2.0 * s.local_scale(idx(c)));
    }
    return {shape / 2.0, rate};
  }
  static InvGammaParams global_aux_conditional(double global_scale) {
    return {1.0, 1.0 / global_scale + 1.0};
  }
  InvGammaParams nonsparse_scale_conditional(const ModelState& s) const {
    double shape = hyper_.nonsparse_shape, rate = hyper_.nonsparse_rate;
    for (std::size_t c = 0; c < m_; ++c) {
      shape += static_cast<double>(free_count(c)) / 2.0;
      rate += column_quadratic(c, s) / 2.0;
    }
    return {shape, rate};
  }

  void sample_shrinkage(ModelState& s, Rng& rng) const {
    if (hyper_.loading_prior == LoadingPrior::nonsparse) {
      const auto p = nonsparse_scale_conditional(s);
      s.local_scale.setConstant(inv_gamma_draw(p.shape, p.rate, rng));
      return;
    }
    for (std::size_t c = 0; c < m_; ++c) {
      const auto p = local_scale_conditional(c, s);
      s.local_scale(idx(c)) = inv_gamma_draw(p.shape, p.rate, rng);
    }
    for (std::size_t c = 0; c < m_; ++c) {
      const auto p = local_aux_conditional(s.local_scale(idx(c)));
      s.local_aux(idx(c)) = inv_gamma_draw(p.shape, p.rate, rng);
    }
    const auto g = global_scale_conditional(s);
    s.global_scale = inv_gamma_draw(g.shape, g.rate, rng);
    const auto a = global_aux_conditional(s.global_scale);
    s.global_aux = inv_gamma_draw(a.shape, a.rate, rng);
  }

  // ---- spatial dependence psi ----------------------------------------------------

  // Log density of logit(psi): Beta prior, CAR column densities and the
  // logit Jacobian psi (1 - psi).
  double spatial_dep_log_target(double psi, const ModelState& s, std::size_t columns) const {
    double lt = hyper_.alpha_psi * std::log(psi) + hyper_.beta_psi * std::log1p(-psi);
    for (std::size_t c = 0; c < columns; ++c) {
      if (free_count(c) == 0) continue;
      const Eigen::MatrixXd q = car_matrix(c, psi);
      const Eigen::VectorXd b = s.loading.free_column(c);
      lt += 0.5 * SpdFactor(q).log_det() - b.dot(q * b) / (2.0 * column_prior_scale(c, s));
    }
    return lt;
  }

  // Log MH acceptance ratio for moving psi from `from` to `to` (before the min with 0).
  double spatial_dep_log_ratio(double from, double to, const ModelState& s) const {
    return spatial_dep_log_target(to, s, m_) - spatial_dep_log_target(from, s, m_);
  }

  double sample_spatial_dep(const ModelState& s, Rng& rng) { return spatial_dep_step(s, m_, rng); }

  // MH step on logit(psi) using only the first `columns` loading columns.
  double spatial_dep_step(const ModelState& s, std::size_t columns, Rng& rng) {
    const double psi = s.spatial_dep;
    const double z = std::log(psi) - std::log1p(-psi) + step_psi_ * std_normal(rng);
    const double prop = 1.0 / (1.0 + std::exp(-z));
    const double log_u = std::log(uniform_open(rng));
    ++psi_counter_.proposed;
    if (!(prop > 0.0 && prop < 1.0)) return psi;
    const double ratio = spatial_dep_log_target(prop, s, columns) - spatial_dep_log_target(psi, s, columns);
    if (log_u < ratio) {
      ++psi_counter_.accepted;
      return prop;
    }
    return psi;
  }

  // ---- helpers shared with the forecaster and tests ------------------------------

  // (b_i. (x) I) x_t
  Eigen::VectorXd loading_mean(std::size_t t, std::size_t i, const ModelState& s) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(idx(k_));
    for (std::size_t m = 0; m < m_; ++m) {
      const double b = s.loading(i, m);
      if (b != 0.0) f += b * s.factors.curve(m, t);
    }
    return f;
  }

  // (b_i. (x) I) x_t for all t as a K x T matrix.
  Eigen::MatrixXd loading_mean_slab(std::size_t i, const ModelState& s) const {
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(idx(k_), idx(t_));
    for (std::size_t m = 0; m < m_; ++m) {
      const double b = s.loading(i, m);
      if (b != 0.0) f += b * s.factors.slab(m);
    }
    return f;
  }

  Eigen::VectorXd residual(std::size_t t, std::size_t i, const ModelState& s) const {
    return s.latent.curve(i, t) - loading_mean(t, i, s);
  }

  // D_t mu_m + D'_t mu'_m + D''_t mu''_m
  Eigen::VectorXd drift(std::size_t t, std::size_t m, const ModelState& s) const {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(idx(k_));
    const auto ti = idx(t), mi = idx(m);
    if (calendar_.dayoff(ti) != 0.0) d += calendar_.dayoff(ti) * s.dayoff_effect.col(mi);
    if (calendar_.pre_dayoff(ti) != 0.0) d += calendar_.pre_dayoff(ti) * s.pre_dayoff_effect.col(mi);
    if (calendar_.pre_working(ti) != 0.0) d += calendar_.pre_working(ti) * s.pre_working_effect.col(mi);
    return d;
  }

  const CorrelationCache& correlation(std::size_t i, const ModelState& s) {
    if (corr_.size() != n_) corr_.assign(n_, {});
    const double r = s.gp_range(idx(i));
    if (corr_[i].range != r) corr_[i] = make_correlation_cache(data_.grid, r);
    return corr_[i];
  }

 private:
  static Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

  template <typename F>
  void run_block(const char* name, F&& f) {
    try {
      f();
    } catch (const SweepError&) {
      throw;
    } catch (const std::exception& e) {
      throw SweepError(name, sweep_index_, e.what());
    }
  }

  const Eigen::VectorXd& dummies(EffectKind kind) const {
    switch (kind) {
      case EffectKind::dayoff: return calendar_.dayoff;
      case EffectKind::pre_dayoff: return calendar_.pre_dayoff;
      case EffectKind::pre_working: return calendar_.pre_working;
    }
    return calendar_.dayoff;
  }

  static const Eigen::MatrixXd& effect(EffectKind kind, const ModelState& s) {
    switch (kind) {
      case EffectKind::dayoff: return s.dayoff_effect;
      case EffectKind::pre_dayoff: return s.pre_dayoff_effect;
      case EffectKind::pre_working: return s.pre_working_effect;
    }
    return s.dayoff_effect;
  }

  // R~_i^{-1} z_ti for all i at day t.
  std::vector<Eigen::VectorXd> scaled_latent(std::size_t t, const ModelState& s) {
    std::vector<Eigen::VectorXd> u(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      u[i] = correlation(i, s).inverse * s.latent.curve(i, t) / s.gp_scale(idx(i));
    }
    return u;
  }

  void add_evolution_precision(Eigen::MatrixXd& p, std::size_t t, const ModelState& s) const {
    for (std::size_t m = 0; m < m_; ++m) {
      const double l2 = s.evolution_var(idx(m)), g = s.ar_coef(idx(m));
      double d = t == 0 ? 1.0 / hyper_.initial_factor_var : 1.0 / l2;
      if (t + 1 < t_) d += g * g / l2;
      p.diagonal().segment(idx(m * k_), idx(k_)).array() += d;
    }
  }

  Eigen::VectorXd factor_rhs(std::size_t t, const ModelState& s, const std::vector<Eigen::VectorXd>& u) const {
    const auto K = idx(k_);
    Eigen::VectorXd rhs = evolution_rhs(t, s);
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t m = 0; m < m_; ++m) {
        const double b = s.loading(i, m);
        if (b != 0.0) rhs.segment(idx(m * k_), K) += b * u[i];
      }
    }
    return rhs;
  }

  // Prior contribution of the neighbouring days to the x_t conditional mean.
  Eigen::VectorXd evolution_rhs(std::size_t t, const ModelState& s) const {
    const auto K = idx(k_);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(idx(m_ * k_));
    for (std::size_t m = 0; m < m_; ++m) {
      const double l2 = s.evolution_var(idx(m)), g = s.ar_coef(idx(m));
      auto seg = rhs.segment(idx(m * k_), K);
      if (t > 0) seg += (g * s.factors.curve(m, t - 1) + drift(t, m, s)) / l2;
      if (t + 1 < t_) seg += g * (s.factors.curve(m, t + 1) - drift(t + 1, m, s)) / l2;
    }
    return rhs;
  }

  FunctionalPanel data_;
  const Calendar& calendar_;
  const AdjacencyGraph& graph_;
  Hyperparams hyper_;
  std::size_t m_, n_ = 0, t_ = 0, k_ = 0;
  SpdFactor effect_prior_;
  Eigen::MatrixXd effect_prior_precision_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<CorrelationCache> corr_;
  std::vector<double> step_phi_;
  std::vector<MhCounter> phi_counter_;
  double step_psi_ = 0.3;
  MhCounter psi_counter_;
  std::size_t sweep_index_ = 0;
};

// One sweep from a fresh sampler; prefer GibbsSampler::sweep in loops so the
// correlation factorizations are reused.
inline ModelState gibbs_sweep(ModelState state, const FunctionalPanel& data, const Calendar& calendar,
                              const AdjacencyGraph& graph, const Hyperparams& hyper, Rng& rng, Rng& ext_rng) {
  GibbsSampler sampler(data, calendar, graph, hyper, state.num_factors());
  sampler.sweep(state, rng, ext_rng);
  return state;
}

// ---------------------------------------------------------------------------
// Chains

inline constexpr double kChainDispersal[4] = {0.5, 1.0, 2.0, 4.0};

struct ChainSeeds {
  std::uint64_t main;
  std::uint64_t extension;
};

inline ChainSeeds chain_seeds(std::uint64_t master, std::size_t chain) {
  const std::string name = "chain-" + std::to_string(chain);
  return {derive_seed(master, name), derive_seed(master, name + "-ext")};
}

inline void run_one_chain(const FunctionalPanel& data, const Calendar& calendar, const AdjacencyGraph& graph,
                          const Hyperparams& hyper, std::size_t num_factors, const SamplerConfig& config,
                          const DrawLayout& layout, std::size_t chain, ChainDraws& out) {
  try {
    GibbsSampler sampler(data, calendar, graph, hyper, num_factors);
    sampler.set_step_sizes(config.mh_step_phi, config.mh_step_psi);
    ModelState state = sampler.initial_state(kChainDispersal[chain % 4]);
    const auto seeds = chain_seeds(config.seed, chain);
    Rng rng(seeds.main), ext_rng(seeds.extension);
    for (std::size_t it = 0; it < config.n_burnin; ++it) {
      sampler.sweep(state, rng, ext_rng);
      if (config.adapt && (it + 1) % 50 == 0) sampler.adapt_steps();
    }
    out.params.reserve(config.n_draws * layout.size());
    for (std::size_t d = 0; d < config.n_draws; ++d) {
      for (std::size_t th = 0; th < config.thin; ++th) sampler.sweep(state, rng, ext_rng);
      const auto rec = pack_params(layout, state);
      out.params.insert(out.params.end(), rec.begin(), rec.end());
      ++out.n_params;
      if (config.latent_stride > 0 && d % config.latent_stride == 0) {
        out.latent.insert(out.latent.end(), state.latent.data().begin(), state.latent.data().end());
        ++out.n_latent;
      }
    }
  } catch (const std::exception& e) {
    out.complete = false;
    out.error = "chain " + std::to_string(chain) + ": " + e.what();
  }
}

// Runs config.n_chains independent chains (in parallel, bounded by
// config.threads) and collects their post-burn-in draws. Inputs must already be
// in model order (factor districts first).
inline DrawStore run_chains(const FunctionalPanel& data, const Calendar& calendar, const AdjacencyGraph& graph,
                            const Hyperparams& hyper, std::size_t num_factors, const SamplerConfig& config,
                            StoreMeta meta = {}) {
  config.validate();
  if (calendar.extension != config.extension) {
    throw ValidationError("calendar extension does not match sampler config");
  }
  const DrawLayout layout{data.districts(), num_factors, data.days(), data.points()};
  meta.config = config;
  meta.hyper = hyper.resolved(data.points());
  if (meta.permutation.empty()) {
    for (std::size_t i = 0; i < data.districts(); ++i) meta.permutation.push_back(i);
  }
  if (meta.scale.size() == 0) meta.scale = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(data.districts()));
  if (meta.district_ids.empty()) meta.district_ids = data.district_ids;
  if (meta.day_ids.empty()) meta.day_ids = data.day_ids;
  meta.grid = data.grid;
  meta.day_types = calendar.day_type;
  DrawStore store(layout, std::move(meta));
  store.chains().resize(config.n_chains);

  const std::size_t workers = std::max<std::size_t>(
      1, std::min(config.n_chains, config.threads ? config.threads : config.n_chains));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < config.n_chains; c = next++) {
      run_one_chain(data, calendar, graph, hyper, num_factors, config, layout, c, store.chains()[c]);
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return store;
}

}  // namespace stfm

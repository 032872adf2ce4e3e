#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <vector>

#include "stfm/sampler.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace stfm;
using namespace stfm::testing;

namespace {

void expect_states_equal(const ModelState& a, const ModelState& b) {
  const DrawLayout l{a.districts(), a.num_factors(), a.days(), a.points()};
  EXPECT_EQ(pack_params(l, a), pack_params(l, b));
  EXPECT_EQ(a.latent, b.latent);
  EXPECT_EQ(a.factors, b.factors);
}

}  // namespace

// ---------------------------------------------------------------------------
// Sweep-level contracts

TEST(GibbsSweep, BitReproducible) {
  auto p = make_problem(5, 8, 3, 1);
  GibbsSampler g1(p.data, p.cal, p.graph, p.hyper, 2), g2(p.data, p.cal, p.graph, p.hyper, 2);
  Rng init(2);
  const ModelState s0 = random_state(g1, init);
  ModelState a = s0, b = s0;
  Rng r1(7), e1(8), r2(7), e2(8);
  for (int i = 0; i < 5; ++i) {
    g1.sweep(a, r1, e1);
    g2.sweep(b, r2, e2);
  }
  expect_states_equal(a, b);
  Rng r3(7), e3(8);
  const ModelState c = gibbs_sweep(s0, p.data, p.cal, p.graph, p.hyper, r3, e3);
  Rng r4(7), e4(8);
  ModelState d = s0;
  GibbsSampler(p.data, p.cal, p.graph, p.hyper, 2).sweep(d, r4, e4);
  expect_states_equal(c, d);
}

TEST(GibbsSweep, StructuralInvariantsOverManySweeps) {
  auto p = make_problem(4, 10, 3, 3);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  ModelState s = g.initial_state();
  const Eigen::MatrixXd top = s.loading.values().topRows(2);
  Rng rng(11), ext(12);
  for (int it = 0; it < 10000; ++it) {
    g.sweep(s, rng, ext);
    ASSERT_TRUE(s.loading.structure_intact()) << it;
    ASSERT_EQ(s.loading.values()(0, 0), 1.0);
    ASSERT_EQ(s.loading.values()(0, 1), 0.0);
    ASSERT_EQ(s.loading.values()(1, 1), 1.0);
    ASSERT_TRUE((s.ar_coef.array().abs() < 1.0).all()) << it;
    ASSERT_GT(s.spatial_dep, 0.0);
    ASSERT_LT(s.spatial_dep, 1.0);
    ASSERT_TRUE(s.invariants_hold()) << it;
    ASSERT_TRUE(s.pre_dayoff_effect.isZero(0.0));
    ASSERT_TRUE(s.pre_working_effect.isZero(0.0));
  }
  EXPECT_EQ(s.loading.values().topRows(2).triangularView<Eigen::StrictlyUpper>().toDenseMatrix(),
            top.triangularView<Eigen::StrictlyUpper>().toDenseMatrix());
}

TEST(GibbsSweep, ExtensionsWithZeroDummiesLeaveBaseDrawsUnchanged) {
  auto base = make_problem(5, 9, 3, 4, Extension::none, false);
  auto one = base;
  one.cal = build_calendar(base.cal.day_type, Extension::pre_dayoff);
  auto two = base;
  two.cal = build_calendar(base.cal.day_type, Extension::pre_working);
  ASSERT_TRUE(two.cal.all_dummies_zero());
  GibbsSampler g0(base.data, base.cal, base.graph, base.hyper, 2);
  GibbsSampler g1(one.data, one.cal, one.graph, one.hyper, 2);
  GibbsSampler g2(two.data, two.cal, two.graph, two.hyper, 2);
  ModelState a = g0.initial_state(), b = a, c = a;
  Rng ra(5), ea(6), rb(5), eb(6), rc(5), ec(6);
  for (int it = 0; it < 30; ++it) {
    g0.sweep(a, ra, ea);
    g1.sweep(b, rb, eb);
    g2.sweep(c, rc, ec);
  }
  for (ModelState* s : {&b, &c}) {
    EXPECT_EQ(a.latent, s->latent);
    EXPECT_EQ(a.factors, s->factors);
    EXPECT_EQ(a.loading.values(), s->loading.values());
    EXPECT_EQ(a.dayoff_effect, s->dayoff_effect);
    EXPECT_EQ(a.noise_var, s->noise_var);
    EXPECT_EQ(a.gp_range, s->gp_range);
    EXPECT_EQ(a.spatial_dep, s->spatial_dep);
  }
  EXPECT_TRUE(a.pre_dayoff_effect.isZero(0.0));
  EXPECT_FALSE(b.pre_dayoff_effect.isZero(0.0));  // drawn from its prior
  EXPECT_TRUE(b.pre_working_effect.isZero(0.0));
}

TEST(GibbsSweep, FailureNamesBlockAndSweep) {
  auto p = make_problem(4, 5, 3, 5);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  ModelState s = g.initial_state();
  Rng rng(1), ext(2);
  g.sweep(s, rng, ext);
  s.noise_var(1) = -1.0;
  try {
    g.sweep(s, rng, ext);
    FAIL() << "expected SweepError";
  } catch (const SweepError& e) {
    EXPECT_EQ(e.block(), "latent");
    EXPECT_NE(std::string(e.what()).find("sweep 2"), std::string::npos);
  }
}

TEST(GibbsSweep, ConstructorValidation) {
  auto p = make_problem(4, 5, 3, 5);
  EXPECT_THROW(GibbsSampler(p.data, p.cal, p.graph, p.hyper, 0), ValidationError);
  EXPECT_THROW(GibbsSampler(p.data, p.cal, p.graph, p.hyper, 5), ValidationError);
  const AdjacencyGraph small(3);
  EXPECT_THROW(GibbsSampler(p.data, p.cal, small, p.hyper, 2), ValidationError);
  const Calendar short_cal = build_calendar(std::vector<DayType>(4, DayType::working), Extension::none);
  EXPECT_THROW(GibbsSampler(p.data, short_cal, p.graph, p.hyper, 2), ValidationError);
}

// Replays one complete sweep for N = M = 1, T = 2 with a scalar hand-coded
// implementation of every conditional. K = 2 with R = I (phi tiny) makes the
// two grid points independent scalar problems.
TEST(GibbsSweep, ScalarReferenceImplementation) {
  auto p = make_problem(1, 2, 2, 9, Extension::none, false);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  ModelState s = g.initial_state();
  Rng init(10);
  for (double& v : s.latent.data()) v = std_normal(init);
  for (double& v : s.factors.data()) v = std_normal(init);
  s.noise_var(0) = 0.7;
  s.evolution_var(0) = 0.4;
  s.gp_scale(0) = 0.5;
  s.gp_range(0) = 1e-3;
  s.ar_coef(0) = 0.6;
  s.local_scale(0) = 1.3;
  s.local_aux(0) = 0.8;
  s.global_scale = 0.9;
  s.global_aux = 1.1;
  s.spatial_dep = 0.5;

  // scalar oracle on a copy of the RNG
  const auto& y = p.data.values;
  Rng r(99);
  double z[2][2], x[2][2];
  for (int t = 0; t < 2; ++t)
    for (int k = 0; k < 2; ++k) {
      z[t][k] = s.latent(0, t, k);
      x[t][k] = s.factors(0, t, k);
    }
  double e2 = 0.7, l2 = 0.4, eta2 = 0.5, phi = 1e-3, gam = 0.6;
  double theta2 = 1.3, zeta = 0.8, ups2 = 0.9, nu = 1.1, psi = 0.5;
  {
    const double prec = 1.0 / eta2 + 1.0 / e2;
    double eps[2][2];
    for (int t = 0; t < 2; ++t)
      for (int k = 0; k < 2; ++k) eps[t][k] = std_normal(r);
    for (int t = 0; t < 2; ++t)
      for (int k = 0; k < 2; ++k)
        z[t][k] = (y(0, t, k) / e2 + x[t][k] / eta2) / prec + eps[t][k] / std::sqrt(prec);
  }
  for (int t = 0; t < 2; ++t) {
    const double prec = 1.0 / eta2 + (t == 0 ? 1.0 / 100.0 + gam * gam / l2 : 1.0 / l2);
    double eps[2];
    for (double& e : eps) e = std_normal(r);
    for (int k = 0; k < 2; ++k) {
      const double rhs = z[t][k] / eta2 + (t == 0 ? gam * x[1][k] / l2 : gam * x[0][k] / l2);
      x[t][k] = rhs / prec + eps[k] / std::sqrt(prec);
    }
  }
  {
    double num = 0.0, den = 0.0;
    for (int k = 0; k < 2; ++k) {
      num += x[1][k] * x[0][k] / l2;
      den += x[0][k] * x[0][k] / l2;
    }
    const double var = 1.0 / (den + 1.0);
    gam = truncated_normal_draw(var * (num + 0.95), std::sqrt(var), -1.0, 1.0, r);
  }
  {
    double ss = 0.0;
    for (int t = 0; t < 2; ++t)
      for (int k = 0; k < 2; ++k) ss += (y(0, t, k) - z[t][k]) * (y(0, t, k) - z[t][k]);
    e2 = inv_gamma_draw(2.5, (1.0 + ss) / 2.0, r);
  }
  {
    double ss = 0.0;
    for (int k = 0; k < 2; ++k) ss += (x[1][k] - gam * x[0][k]) * (x[1][k] - gam * x[0][k]);
    l2 = inv_gamma_draw(1.5, (1.0 + ss) / 2.0, r);
  }
  const double beta_phi = 1.0 / (-2.0 * std::log(0.05));
  {
    double res[2][2], quad = 0.0;
    for (int t = 0; t < 2; ++t)
      for (int k = 0; k < 2; ++k) {
        res[t][k] = z[t][k] - x[t][k];
        quad += res[t][k] * res[t][k];
      }
    eta2 = inv_gamma_draw(2.5, (1.0 + quad) / 2.0, r);
    const double prop = std::exp(std::log(phi) + 0.3 * std_normal(r));
    const double log_u = std::log(uniform_open(r));
    auto target = [&](double ph) {
      const double rho = std::exp(-1.0 / ph);
      double q = 0.0;
      for (int t = 0; t < 2; ++t)
        q += (res[t][0] * res[t][0] - 2.0 * rho * res[t][0] * res[t][1] + res[t][1] * res[t][1]) / (1.0 - rho * rho);
      return -2.0 * std::log(ph) - beta_phi / ph - std::log(1.0 - rho * rho) - q / (2.0 * eta2);
    };
    if (log_u < target(prop) - target(phi)) phi = prop;
  }
  double mu[2];
  {
    const double rho = std::exp(-1.0 / beta_phi);
    const double a = 1.0 / (1.0 - rho * rho), b = -rho / (1.0 - rho * rho);
    const double l11 = std::sqrt(a), l21 = b / l11, l22 = std::sqrt(a - l21 * l21);
    const double e0 = std_normal(r), e1 = std_normal(r);
    mu[1] = e1 / l22;
    mu[0] = (e0 - l21 * mu[1]) / l11;
  }
  theta2 = inv_gamma_draw(0.5, 1.0 / zeta, r);
  zeta = inv_gamma_draw(1.0, 1.0 / theta2 + 1.0, r);
  ups2 = inv_gamma_draw(0.5, 1.0 / nu, r);
  nu = inv_gamma_draw(1.0, 1.0 / ups2 + 1.0, r);
  {
    const double zz = std::log(psi) - std::log1p(-psi) + 0.3 * std_normal(r);
    const double prop = 1.0 / (1.0 + std::exp(-zz));
    const double log_u = std::log(uniform_open(r));
    const double ratio = 18.0 * std::log(prop / psi) + 2.0 * std::log((1.0 - prop) / (1.0 - psi));
    if (log_u < ratio) psi = prop;
  }

  Rng rs(99), ext(1);
  g.sweep(s, rs, ext);
  const double tol = 1e-10;
  for (int t = 0; t < 2; ++t)
    for (int k = 0; k < 2; ++k) {
      EXPECT_NEAR(s.latent(0, t, k), z[t][k], tol);
      EXPECT_NEAR(s.factors(0, t, k), x[t][k], tol);
    }
  EXPECT_NEAR(s.ar_coef(0), gam, tol);
  EXPECT_NEAR(s.noise_var(0), e2, tol);
  EXPECT_NEAR(s.evolution_var(0), l2, tol);
  EXPECT_NEAR(s.gp_scale(0), eta2, tol);
  EXPECT_NEAR(s.gp_range(0), phi, tol);
  EXPECT_NEAR(s.dayoff_effect(0, 0), mu[0], tol);
  EXPECT_NEAR(s.dayoff_effect(1, 0), mu[1], tol);
  EXPECT_NEAR(s.local_scale(0), theta2, tol);
  EXPECT_NEAR(s.local_aux(0), zeta, tol);
  EXPECT_NEAR(s.global_scale, ups2, tol);
  EXPECT_NEAR(s.global_aux, nu, tol);
  EXPECT_NEAR(s.spatial_dep, psi, tol);
}

// ---------------------------------------------------------------------------
// Latent curves z

TEST(LatentConditional, NoDataLimitReturnsPriorMean) {
  auto p = make_problem(4, 5, 3, 6);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(1);
  ModelState s = random_state(g, rng);
  s.noise_var.setConstant(1e12);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto c = g.latent_conditional(2, i, s);
    EXPECT_LT((c.mean - g.loading_mean(2, i, s)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(LatentConditional, UnitCovariancesAverage) {
  auto p = make_problem(3, 4, 3, 7);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  Rng rng(2);
  ModelState s = random_state(g, rng);
  s.noise_var.setOnes();
  s.gp_scale.setOnes();
  s.gp_range.setConstant(1e-3);  // R = I exactly on a unit grid
  for (std::size_t i = 0; i < 3; ++i) {
    const auto c = g.latent_conditional(1, i, s);
    const Eigen::VectorXd expect = (p.data.values.curve(i, 1) + g.loading_mean(1, i, s)) / 2.0;
    EXPECT_LT((c.mean - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LatentConditional, ZeroNoiseKeepsData) {
  auto p = make_problem(4, 5, 3, 8);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(3);
  ModelState s = random_state(g, rng);
  s.noise_var.setConstant(1e-9);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t i = 0; i < 4; ++i) {
      const auto c = g.latent_conditional(t, i, s);
      EXPECT_LT((c.mean - p.data.values.curve(i, t)).cwiseAbs().maxCoeff(), 1e-3);
    }
}

TEST(LatentConditional, PrecisionAssemblyMatchesDenseOracle) {
  auto p = make_problem(4, 5, 4, 9);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(4);
  const ModelState s = random_state(g, rng);
  const Eigen::Index K = 4, NK = 16;
  const std::size_t t = 3;
  Eigen::MatrixXd e_inv = Eigen::MatrixXd::Zero(NK, NK);
  for (Eigen::Index i = 0; i < 4; ++i) e_inv.block(i * K, i * K, K, K) = Eigen::MatrixXd::Identity(K, K) / s.noise_var(i);
  const Eigen::MatrixXd omega = gp_precision_oracle(s, 4);
  const Eigen::MatrixXd cov = (e_inv + omega).inverse();
  const Eigen::MatrixXd bk = kron_identity(s.loading.values(), K);
  const Eigen::VectorXd mean =
      cov * (e_inv * stack_day(p.data.values, t) + omega * bk * stack_day(s.factors, t));
  for (std::size_t i = 0; i < 4; ++i) {
    const auto c = g.latent_conditional(t, i, s);
    const auto b = static_cast<Eigen::Index>(i) * K;
    const Eigen::MatrixXd ident = c.precision * cov.block(b, b, K, K);
    EXPECT_LT((ident - Eigen::MatrixXd::Identity(K, K)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((c.mean - mean.segment(b, K)).cwiseAbs().maxCoeff(), 1e-8);
    // off-diagonal blocks of the dense covariance vanish
    for (Eigen::Index j = 0; j < 4; ++j)
      if (j != static_cast<Eigen::Index>(i)) EXPECT_LT(cov.block(b, j * K, K, K).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LatentConditional, BlockUpdateMatchesConditionalMoments) {
  auto p = make_problem(2, 3, 3, 10);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  Rng rng(5);
  ModelState s = random_state(g, rng);
  const auto c = g.latent_conditional(2, 1, s);
  const Eigen::MatrixXd cov = c.precision.inverse();
  const int n = 40000;
  Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
  Rng draw(6);
  for (int it = 0; it < n; ++it) {
    g.update_latent(s, draw);
    const Eigen::Vector3d v = s.latent.curve(1, 2);
    sum += v;
    sq += (v - c.mean).array().square().matrix();
  }
  for (Eigen::Index k = 0; k < 3; ++k) {
    EXPECT_LT(std::abs(sum(k) / n - c.mean(k)), 4.0 * std::sqrt(cov(k, k) / n));
    EXPECT_NEAR(sq(k) / n, cov(k, k), 4.0 * cov(k, k) * std::sqrt(2.0 / n));
  }
}

// ---------------------------------------------------------------------------
// Factor curves x

TEST(FactorConditional, MatchesDenseKroneckerOracle) {
  auto p = make_problem(5, 9, 3, 11, Extension::pre_working);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(7);
  const ModelState s = random_state(g, rng);
  for (std::size_t t : {0u, 4u, 5u, 6u, 8u}) {
    const auto c = g.factor_conditional(t, s);
    const auto o = factor_oracle(s, p.cal, t, 3, p.hyper.initial_factor_var);
    EXPECT_LT((c.precision - o.precision).cwiseAbs().maxCoeff(), 1e-8) << t;
    EXPECT_LT((c.mean - o.mean).cwiseAbs().maxCoeff(), 1e-8) << t;
    const Eigen::MatrixXd ident = c.precision * o.precision.inverse();
    EXPECT_LT((ident - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(FactorConditional, NoPersistenceIsRegression) {
  auto p = make_problem(5, 6, 3, 12, Extension::none, false);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(8);
  ModelState s = random_state(g, rng);
  s.ar_coef.setZero();
  s.dayoff_effect.setZero();
  const Eigen::Index K = 3;
  const Eigen::MatrixXd bk = kron_identity(s.loading.values(), K);
  const Eigen::MatrixXd omega = gp_precision_oracle(s, 3);
  const Eigen::MatrixXd lam_inv = kron_identity(s.evolution_var.cwiseInverse().asDiagonal().toDenseMatrix(), K);
  const Eigen::MatrixXd p_reg = bk.transpose() * omega * bk + lam_inv;
  const Eigen::VectorXd m_reg = p_reg.ldlt().solve(bk.transpose() * omega * stack_day(s.latent, 3));
  const auto c = g.factor_conditional(3, s);
  EXPECT_LT((c.mean - m_reg).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FactorConditional, IdentityLoadingLimit) {
  auto p = make_problem(2, 5, 3, 13, Extension::none, false);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(9);
  ModelState s = random_state(g, rng);
  s.loading.set(1, 0, 0.0);
  s.gp_scale.setConstant(1e-9);
  s.gp_range.setConstant(1e-3);
  for (std::size_t t = 0; t < 5; ++t) {
    const auto c = g.factor_conditional(t, s);
    EXPECT_LT((c.mean - stack_day(s.latent, t)).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(FactorConditional, LastDayIsLessCertain) {
  auto p = make_problem(4, 6, 3, 14);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(10);
  const ModelState s = random_state(g, rng);
  const Eigen::MatrixXd cov_mid = g.factor_conditional(3, s).precision.inverse();
  const Eigen::MatrixXd cov_last = g.factor_conditional(5, s).precision.inverse();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov_last - cov_mid);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}

TEST(FactorConditional, BlockUpdateMatchesConditionalMoments) {
  auto p = make_problem(3, 1, 2, 15, Extension::none, false);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(11);
  ModelState s = random_state(g, rng);
  const auto c = g.factor_conditional(0, s);
  const Eigen::MatrixXd cov = c.precision.inverse();
  const int n = 40000;
  Eigen::Vector4d sum = Eigen::Vector4d::Zero();
  Rng draw(12);
  for (int it = 0; it < n; ++it) {
    g.update_factors(s, draw);
    sum += stack_day(s.factors, 0);
  }
  for (Eigen::Index j = 0; j < 4; ++j) EXPECT_LT(std::abs(sum(j) / n - c.mean(j)), 4.0 * std::sqrt(cov(j, j) / n));
}

// ---------------------------------------------------------------------------
// AR coefficients

TEST(ArCoef, MomentsMatchWeightedAverage) {
  auto p = make_problem(4, 9, 3, 16, Extension::pre_dayoff);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(13);
  const ModelState s = random_state(g, rng);
  for (std::size_t m = 0; m < 2; ++m) {
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t t = 1; t < 9; ++t) {
      const Eigen::VectorXd d = drift_oracle(s, p.cal, t).segment(static_cast<Eigen::Index>(m * 3), 3);
      for (std::size_t k = 0; k < 3; ++k) {
        sxy += (s.factors(m, t, k) - d(static_cast<Eigen::Index>(k))) * s.factors(m, t - 1, k);
        sxx += s.factors(m, t - 1, k) * s.factors(m, t - 1, k);
      }
    }
    const double l2 = s.evolution_var(static_cast<Eigen::Index>(m));
    // precision-weighted average of the least-squares slope and the prior mean
    const double w_data = sxx / l2, w_prior = 1.0;
    const double expect_mean = (w_data * (sxy / sxx) + w_prior * 0.95) / (w_data + w_prior);
    const auto [mean, var] = g.ar_coef_moments(m, s);
    EXPECT_NEAR(mean, expect_mean, 1e-10);
    EXPECT_NEAR(var, 1.0 / (w_data + w_prior), 1e-10);
  }
}

TEST(ArCoef, SingleDayFallsBackToPrior) {
  auto p = make_problem(3, 1, 2, 17, Extension::none, false);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  const ModelState s = g.initial_state();
  const auto [mean, var] = g.ar_coef_moments(0, s);
  EXPECT_DOUBLE_EQ(mean, 0.95);
  EXPECT_DOUBLE_EQ(var, 1.0);
  Rng rng(1);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double v = g.sample_ar_coef(0, s, rng);
    ASSERT_GT(v, -1.0);
    ASSERT_LT(v, 1.0);
    sum += v;
  }
  // mean of N(0.95, 1) truncated to (-1, 1)
  const double a = (-1.0 - 0.95), b = (1.0 - 0.95);
  auto pdf = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
  const double z = normal_sf(a) - normal_sf(b);
  EXPECT_NEAR(sum / 20000, 0.95 + (pdf(a) - pdf(b)) / z, 0.01);
}

TEST(ArCoef, ConcentratesOnExactAutoregression) {
  auto p = make_problem(3, 12, 3, 18, Extension::none, false);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  Rng rng(14);
  ModelState s = random_state(g, rng);
  for (std::size_t t = 1; t < 12; ++t) s.factors.curve(0, t) = 0.8 * s.factors.curve(0, t - 1);
  s.evolution_var(0) = 1e-8;
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(g.sample_ar_coef(0, s, rng), 0.8, 1e-3);
}

// ---------------------------------------------------------------------------
// Conjugate variance conditionals

TEST(NoiseVar, ZeroResidualAndFormula) {
  auto p = make_problem(3, 4, 3, 19);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  ModelState s = g.initial_state();  // z = y
  auto c = g.noise_var_conditional(1, s);
  EXPECT_DOUBLE_EQ(c.shape, (1.0 + 12.0) / 2.0);
  EXPECT_DOUBLE_EQ(c.rate, 0.5);
  Rng rng(15);
  double r = 0.0;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t k = 0; k < 3; ++k) {
      s.latent(1, t, k) += std_normal(rng);
      r += std::pow(p.data.values(1, t, k) - s.latent(1, t, k), 2);
    }
  c = g.noise_var_conditional(1, s);
  EXPECT_NEAR(c.rate, (1.0 + r) / 2.0, 1e-12);
}

TEST(NoiseVar, DrawsMatchInverseGamma) {
  auto p = make_problem(3, 4, 3, 20);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  Rng rng(16);
  const ModelState s = random_state(g, rng);
  double r = 0.0;
  for (std::size_t t = 0; t < 4; ++t) r += (p.data.values.curve(2, t) - s.latent.curve(2, t)).squaredNorm();
  const double shape = 6.5, rate = (1.0 + r) / 2.0;
  std::vector<double> draws(100000);
  double sum = 0.0;
  for (double& d : draws) sum += (d = g.sample_noise_var(2, s, rng));
  EXPECT_LT(ks_statistic(draws, [&](double v) { return inv_gamma_cdf(v, shape, rate); }), 0.01);
  EXPECT_NEAR(sum / 100000, rate / (shape - 1.0), 0.01 * rate / (shape - 1.0));
}

TEST(EvolutionVar, ZeroResidualFormulaAndDraws) {
  auto p = make_problem(3, 8, 3, 21, Extension::pre_working);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(17);
  ModelState s = random_state(g, rng);
  for (std::size_t t = 1; t < 8; ++t) {
    s.factors.curve(1, t) = s.ar_coef(1) * s.factors.curve(1, t - 1) + drift_oracle(s, p.cal, t).segment(3, 3);
  }
  auto c = g.evolution_var_conditional(1, s);
  EXPECT_DOUBLE_EQ(c.shape, (1.0 + 7.0 * 3.0) / 2.0);
  EXPECT_NEAR(c.rate, 0.5, 1e-12);

  const ModelState s2 = random_state(g, rng);
  double r = 0.0;
  for (std::size_t t = 1; t < 8; ++t) {
    r += (s2.factors.curve(0, t) - s2.ar_coef(0) * s2.factors.curve(0, t - 1) -
          drift_oracle(s2, p.cal, t).segment(0, 3)).squaredNorm();
  }
  c = g.evolution_var_conditional(0, s2);
  EXPECT_NEAR(c.rate, (1.0 + r) / 2.0, 1e-10);
  std::vector<double> draws(100000);
  for (double& d : draws) d = g.sample_evolution_var(0, s2, rng);
  EXPECT_LT(ks_statistic(draws, [&](double v) { return inv_gamma_cdf(v, 11.0, (1.0 + r) / 2.0); }), 0.01);
}

TEST(GpScale, ConditionalAndDraws) {
  auto p = make_problem(4, 5, 3, 22);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(18);
  const ModelState s0 = random_state(g, rng);
  const std::size_t i = 3;
  const Eigen::MatrixXd rinv = rbf_oracle(3, s0.gp_range(3)).inverse();
  double q = 0.0;
  for (std::size_t t = 0; t < 5; ++t) {
    const Eigen::VectorXd r = s0.latent.curve(i, t) - g.loading_mean(t, i, s0);
    q += r.dot(rinv * r);
  }
  const double shape = (1.0 + 15.0) / 2.0, rate = (1.0 + q) / 2.0;
  const auto c = g.gp_scale_conditional(i, s0);
  EXPECT_DOUBLE_EQ(c.shape, shape);
  EXPECT_NEAR(c.rate, rate, 1e-9);
  std::vector<double> draws(100000);
  for (double& d : draws) {
    ModelState s = s0;
    g.sample_gp_params(i, s, rng);
    d = s.gp_scale(static_cast<Eigen::Index>(i));
  }
  EXPECT_LT(ks_statistic(draws, [&](double v) { return inv_gamma_cdf(v, shape, rate); }), 0.01);
}

TEST(GpScale, IdentityCorrelationReducesToNoiseForm) {
  auto p = make_problem(2, 4, 3, 23);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  Rng rng(19);
  ModelState s = random_state(g, rng);
  s.gp_range.setConstant(1e-3);
  double ss = 0.0;
  for (std::size_t t = 0; t < 4; ++t) ss += (s.latent.curve(1, t) - g.loading_mean(t, 1, s)).squaredNorm();
  const auto c = g.gp_scale_conditional(1, s);
  EXPECT_NEAR(c.rate, (1.0 + ss) / 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(c.shape, (1.0 + 12.0) / 2.0);
}

// ---------------------------------------------------------------------------
// GP range phi (MH)

TEST(GpRange, SelfProposalAlwaysAccepted) {
  auto p = make_problem(3, 4, 3, 24);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  const double a = g.gp_range_log_target(2.0, 0.7, 3.1, -0.4, 4);
  EXPECT_EQ(a - a, 0.0);
}

TEST(GpRange, LogTargetMatchesDirectDensityRatio) {
  auto p = make_problem(3, 4, 3, 25);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  Rng rng(20);
  const ModelState s = random_state(g, rng);
  const std::size_t i = 2;
  const double eta2 = s.gp_scale(2), beta = g.hyper().beta_phi;
  auto oracle = [&](double phi) {
    const Eigen::MatrixXd cov = eta2 * rbf_oracle(3, phi);
    const Eigen::MatrixXd inv = cov.inverse();
    double ll = 0.0;
    for (std::size_t t = 0; t < 4; ++t) {
      const Eigen::VectorXd r = s.latent.curve(i, t) - g.loading_mean(t, i, s);
      ll += -0.5 * std::log(cov.determinant()) - 0.5 * r.dot(inv * r);
    }
    // IG(2, beta) density plus the log-scale Jacobian
    return ll + 2.0 * std::log(beta) - std::lgamma(2.0) - 3.0 * std::log(phi) - beta / phi + std::log(phi);
  };
  auto target = [&](double phi) {
    const auto cache = make_correlation_cache(p.data.grid, phi);
    return g.gp_range_log_target(phi, eta2, g.gp_quadratic(i, s, cache), cache.log_det, 4);
  };
  EXPECT_NEAR(target(1.3) - target(3.7), oracle(1.3) - oracle(3.7), 1e-8);
}

TEST(GpRange, PriorRecoveryWithoutLikelihood) {
  auto p = make_problem(2, 3, 6, 26);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  g.set_step_sizes(2.0, 0.3);
  ModelState s = g.initial_state();
  Rng rng(21);
  const double beta = g.hyper().beta_phi;
  for (int i = 0; i < 1000; ++i) g.gp_range_step(0, s, 0, rng);
  std::vector<double> draws(100000);
  for (double& d : draws) {
    g.gp_range_step(0, s, 0, rng);
    d = s.gp_range(0);
  }
  EXPECT_LT(ks_statistic(draws, [&](double v) { return inv_gamma_cdf(v, 2.0, beta); }), 0.02);
}

// ---------------------------------------------------------------------------
// Calendar effects

TEST(Effects, NoTransitionsGivesPrior) {
  auto p = make_problem(3, 6, 4, 27, Extension::none, false);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(22);
  const ModelState s = random_state(g, rng);
  const auto c = g.effect_conditional(EffectKind::dayoff, 1, s);
  const Hyperparams h = p.hyper.resolved(4);
  const Eigen::MatrixXd prior_prec = (h.eta_prime * rbf_oracle(4, h.phi_prime)).inverse();
  EXPECT_LT((c.precision - prior_prec).cwiseAbs().maxCoeff() / prior_prec.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(c.mean.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Effects, SharpEvolutionRecoversJump) {
  std::vector<DayType> days(8, DayType::working);
  days[3] = DayType::dayoff;
  auto p = make_problem(3, 8, 3, 28, Extension::none, false);
  p.cal = build_calendar(days, Extension::none);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  Rng rng(23);
  ModelState s = random_state(g, rng);
  const Eigen::Vector3d jump(1.5, -0.5, 2.0);
  const double gm = s.ar_coef(0);
  for (std::size_t t = 1; t < 8; ++t) {
    s.factors.curve(0, t) = gm * s.factors.curve(0, t - 1) + p.cal.dayoff(static_cast<Eigen::Index>(t)) * jump;
  }
  s.evolution_var(0) = 1e-10;
  const auto c = g.effect_conditional(EffectKind::dayoff, 0, s);
  EXPECT_LT((c.mean - jump).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Effects, DenseOracleAllKinds) {
  auto p = make_problem(3, 15, 3, 29, Extension::pre_working);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(24);
  const ModelState s = random_state(g, rng);
  const Hyperparams h = p.hyper.resolved(3);
  const Eigen::MatrixXd prior_prec = (h.eta_prime * rbf_oracle(3, h.phi_prime)).inverse();
  const EffectKind kinds[] = {EffectKind::dayoff, EffectKind::pre_dayoff, EffectKind::pre_working};
  const Eigen::VectorXd* dummies[] = {&p.cal.dayoff, &p.cal.pre_dayoff, &p.cal.pre_working};
  const Eigen::MatrixXd* effects[] = {&s.dayoff_effect, &s.pre_dayoff_effect, &s.pre_working_effect};
  for (int kind = 0; kind < 3; ++kind) {
    for (std::size_t m = 0; m < 2; ++m) {
      const auto mi = static_cast<Eigen::Index>(m);
      double info = 0.0;
      Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
      for (std::size_t t = 1; t < 15; ++t) {
        const auto ti = static_cast<Eigen::Index>(t);
        Eigen::Vector3d r = s.factors.curve(m, t) - s.ar_coef(mi) * s.factors.curve(m, t - 1);
        for (int o = 0; o < 3; ++o)
          if (o != kind) r -= (*dummies[o])(ti) * effects[o]->col(mi);
        const double d = (*dummies[kind])(ti);
        info += d * d / s.evolution_var(mi);
        rhs += d * r / s.evolution_var(mi);
      }
      const Eigen::MatrixXd prec = prior_prec + info * Eigen::MatrixXd::Identity(3, 3);
      const Eigen::VectorXd mean = prec.inverse() * rhs;
      const auto c = g.effect_conditional(kinds[kind], m, s);
      EXPECT_LT((c.precision - prec).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_LT((c.mean - mean).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_LT((c.precision * prec.inverse() - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(Effects, FlatPriorWithoutTransitionsKeepsValue) {
  auto p = make_problem(3, 6, 3, 30, Extension::none, false);
  p.hyper.dayoff_prior = DayoffPrior::flat;
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  Rng rng(25);
  const ModelState s = random_state(g, rng);
  const auto v = g.sample_effect(EffectKind::dayoff, 0, s, rng);
  EXPECT_EQ(v, Eigen::VectorXd(s.dayoff_effect.col(0)));
}

// ---------------------------------------------------------------------------
// Loading columns

TEST(LoadingColumn, NoFactorSignalGivesPrior) {
  auto p = make_problem(6, 5, 3, 31);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(26);
  ModelState s = random_state(g, rng);
  for (std::size_t t = 0; t < 5; ++t) s.factors.curve(0, t).setZero();
  const auto c = g.loading_conditional(0, s);
  const Eigen::MatrixXd prior = car_precision(p.graph, 0, s.spatial_dep).q / (s.global_scale * s.local_scale(0));
  EXPECT_LT((c.precision - prior).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(c.mean.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LoadingColumn, TotalShrinkage) {
  auto p = make_problem(6, 5, 3, 32);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(27);
  ModelState s = random_state(g, rng);
  s.global_scale = 1e-12;
  for (int i = 0; i < 50; ++i) EXPECT_LT(g.sample_loading_column(1, s, rng).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(LoadingColumn, NoiselessLeastSquaresLimit) {
  auto p = make_problem(2, 200, 2, 33, Extension::none, false);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  Rng rng(28);
  ModelState s = random_state(g, rng);
  s.gp_range.setConstant(1e-3);
  s.gp_scale.setConstant(1e-6);
  for (std::size_t t = 0; t < 200; ++t) s.latent.curve(1, t) = 1.7 * s.factors.curve(0, t);
  const auto c = g.loading_conditional(0, s);
  EXPECT_NEAR(c.mean(0), 1.7, 1e-6);
}

TEST(LoadingColumn, MatchesDenseRegressionOracle) {
  auto p = make_problem(6, 5, 3, 34);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 3);
  Rng rng(29);
  const ModelState s = random_state(g, rng);
  const Eigen::Index K = 3, T = 5;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    const Eigen::Index nf = 6 - ci - 1;
    // stacked regression ztilde = X b + nu over all days and free districts
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(nf * K * T, nf);
    Eigen::VectorXd zt(nf * K * T);
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(nf * K * T, nf * K * T);
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index j = 0; j < nf; ++j) {
        const auto dj = static_cast<std::size_t>(ci + 1 + j);
        const Eigen::Index row = (t * nf + j) * K;
        x.block(row, j, K, 1) = s.factors.curve(c, static_cast<std::size_t>(t));
        Eigen::VectorXd partial = s.latent.curve(dj, static_cast<std::size_t>(t));
        for (std::size_t o = 0; o < 3; ++o)
          if (o != c) partial -= s.loading(dj, o) * s.factors.curve(o, static_cast<std::size_t>(t));
        zt.segment(row, K) = partial;
        const auto dji = static_cast<Eigen::Index>(dj);
        omega.block(row, row, K, K) = (s.gp_scale(dji) * rbf_oracle(3, s.gp_range(dji))).inverse();
      }
    }
    const Eigen::MatrixXd prior = car_precision(p.graph, c, s.spatial_dep).q / (s.global_scale * s.local_scale(ci));
    const Eigen::MatrixXd prec = x.transpose() * omega * x + prior;
    const Eigen::VectorXd mean = prec.inverse() * (x.transpose() * omega * zt);
    const auto cond = g.loading_conditional(c, s);
    EXPECT_LT((cond.precision - prec).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((cond.mean - mean).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((cond.precision * prec.inverse() - Eigen::MatrixXd::Identity(nf, nf)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

// ---------------------------------------------------------------------------
// Shrinkage scales

TEST(Shrinkage, ZeroColumnConditional) {
  auto p = make_problem(6, 4, 3, 35);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(30);
  ModelState s = random_state(g, rng);
  s.loading.set_free_column(1, Eigen::VectorXd::Zero(4));
  const auto c = g.local_scale_conditional(1, s);
  EXPECT_DOUBLE_EQ(c.shape, (4.0 + 1.0) / 2.0);
  EXPECT_DOUBLE_EQ(c.rate, 1.0 / s.local_aux(1));
  const auto z = GibbsSampler::local_aux_conditional(2.5);
  EXPECT_DOUBLE_EQ(z.shape, 1.0);
  EXPECT_DOUBLE_EQ(z.rate, 1.0 / 2.5 + 1.0);
}

// Probability integral transform of each sequential draw under its analytic
// conditional, given the values drawn before it in the same update.
TEST(Shrinkage, HorseshoeDrawsMatchConditionals) {
  auto p = make_problem(6, 4, 3, 36);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(31);
  const ModelState s0 = random_state(g, rng);
  double q[2];
  for (std::size_t c = 0; c < 2; ++c) {
    const Eigen::VectorXd b = s0.loading.free_column(c);
    q[c] = b.dot(car_precision(p.graph, c, s0.spatial_dep).q * b);
  }
  std::vector<double> u_theta(100000), u_zeta(100000), u_ups(100000), u_nu(100000);
  for (std::size_t it = 0; it < 100000; ++it) {
    ModelState s = s0;
    g.sample_shrinkage(s, rng);
    const double th0 = s.local_scale(0), th1 = s.local_scale(1);
    u_theta[it] = inv_gamma_cdf(th1, (4.0 + 1.0) / 2.0, q[1] / (2.0 * s0.global_scale) + 1.0 / s0.local_aux(1));
    u_zeta[it] = inv_gamma_cdf(s.local_aux(0), 1.0, 1.0 / th0 + 1.0);
    u_ups[it] = inv_gamma_cdf(s.global_scale, (1.0 + 5.0 + 4.0) / 2.0,
                              1.0 / s0.global_aux + q[0] / (2.0 * th0) + q[1] / (2.0 * th1));
    u_nu[it] = inv_gamma_cdf(s.global_aux, 1.0, 1.0 / s.global_scale + 1.0);
  }
  EXPECT_LT(ks_uniform(u_theta), 0.01);
  EXPECT_LT(ks_uniform(u_zeta), 0.01);
  EXPECT_LT(ks_uniform(u_ups), 0.01);
  EXPECT_LT(ks_uniform(u_nu), 0.01);
}

TEST(Shrinkage, NonsparseSharedScale) {
  auto p = make_problem(6, 4, 3, 37);
  p.hyper.loading_prior = LoadingPrior::nonsparse;
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  Rng rng(32);
  const ModelState s0 = random_state(g, rng);
  double q = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    const Eigen::VectorXd b = s0.loading.free_column(c);
    q += b.dot(car_precision(p.graph, c, s0.spatial_dep).q * b);
  }
  const double shape = 0.1 + 9.0 / 2.0, rate = 0.1 + q / 2.0;
  std::vector<double> draws(100000);
  for (double& d : draws) {
    ModelState s = s0;
    g.sample_shrinkage(s, rng);
    ASSERT_EQ(s.local_scale(0), s.local_scale(1));
    d = s.local_scale(0);
  }
  EXPECT_LT(ks_statistic(draws, [&](double v) { return inv_gamma_cdf(v, shape, rate); }), 0.01);
}

TEST(Shrinkage, HalfCauchyPriorRecovery) {
  // N = M = 1: the single column has no free entries, so the scales see only their prior.
  auto p = make_problem(1, 3, 2, 38);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 1);
  ModelState s = g.initial_state();
  Rng rng(33);
  std::vector<double> theta(1000000), ups(1000000);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    g.sample_shrinkage(s, rng);
    theta[i] = std::sqrt(s.local_scale(0));
    ups[i] = std::sqrt(s.global_scale);
  }
  EXPECT_LT(ks_statistic(theta, half_cauchy_cdf), 0.01);
  EXPECT_LT(ks_statistic(ups, half_cauchy_cdf), 0.01);
}

// ---------------------------------------------------------------------------
// Spatial dependence psi (MH)

TEST(SpatialDep, SelfProposalAndDirectRatio) {
  auto p = make_problem(7, 4, 3, 39);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 3);
  Rng rng(34);
  const ModelState s = random_state(g, rng);
  EXPECT_EQ(g.spatial_dep_log_ratio(0.4, 0.4, s), 0.0);
  auto oracle = [&](double psi) {
    double lt = std::log(boost::math::pdf(boost::math::beta_distribution<double>(18.0, 2.0), psi)) +
                std::log(psi * (1.0 - psi));
    for (std::size_t c = 0; c < 3; ++c) {
      const Eigen::MatrixXd q = car_precision(p.graph, c, psi).q;
      const Eigen::VectorXd b = s.loading.free_column(c);
      const double var = s.global_scale * s.local_scale(static_cast<Eigen::Index>(c));
      lt += 0.5 * std::log(q.determinant()) - b.dot(q * b) / (2.0 * var);
    }
    return lt;
  };
  EXPECT_NEAR(g.spatial_dep_log_ratio(0.35, 0.82, s), oracle(0.82) - oracle(0.35), 1e-10);
  EXPECT_NEAR(g.spatial_dep_log_ratio(0.9, 0.1, s), oracle(0.1) - oracle(0.9), 1e-10);
}

TEST(SpatialDep, PriorRecoveryWithoutColumns) {
  auto p = make_problem(5, 3, 3, 40);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  g.set_step_sizes(0.3, 1.5);
  ModelState s = g.initial_state();
  Rng rng(35);
  for (int i = 0; i < 1000; ++i) s.spatial_dep = g.spatial_dep_step(s, 0, rng);
  std::vector<double> draws(100000);
  double sum = 0.0;
  for (double& d : draws) {
    s.spatial_dep = g.spatial_dep_step(s, 0, rng);
    ASSERT_GT(s.spatial_dep, 0.0);
    ASSERT_LT(s.spatial_dep, 1.0);
    sum += (d = s.spatial_dep);
  }
  EXPECT_NEAR(sum / 100000, 0.9, 0.01);
  EXPECT_LT(ks_statistic(draws, [](double v) { return beta_cdf(v, 18.0, 2.0); }), 0.02);
}

TEST(SpatialDep, AdaptationMovesStepTowardTarget) {
  auto p = make_problem(5, 3, 3, 41);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, 2);
  g.set_step_sizes(0.3, 5.0);  // far too wide: most proposals land in the tails
  ModelState s = g.initial_state();
  Rng rng(36);
  for (int i = 0; i < 50; ++i) s.spatial_dep = g.spatial_dep_step(s, 0, rng);
  ASSERT_LT(g.psi_counter().rate(), 0.30);
  g.adapt_steps();
  EXPECT_DOUBLE_EQ(g.psi_step(), 4.0);
  EXPECT_EQ(g.psi_counter().proposed, 0u);
}

// ---------------------------------------------------------------------------
// Chains

TEST(RunChains, DeterministicAcrossThreadCounts) {
  auto p = make_problem(5, 6, 3, 42);
  SamplerConfig cfg;
  cfg.n_burnin = 20;
  cfg.n_draws = 10;
  cfg.n_chains = 3;
  cfg.latent_stride = 3;
  cfg.threads = 1;
  const auto a = run_chains(p.data, p.cal, p.graph, p.hyper, 2, cfg);
  cfg.threads = 3;
  const auto b = run_chains(p.data, p.cal, p.graph, p.hyper, 2, cfg);
  ASSERT_EQ(a.num_chains(), 3u);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(a.chains()[c].params, b.chains()[c].params);
    EXPECT_EQ(a.chains()[c].latent, b.chains()[c].latent);
    EXPECT_EQ(a.chains()[c].n_latent, 4u);
  }
  EXPECT_NE(a.chains()[0].params, a.chains()[1].params);
  cfg.seed = 2;
  const auto c = run_chains(p.data, p.cal, p.graph, p.hyper, 2, cfg);
  EXPECT_NE(a.chains()[0].params, c.chains()[0].params);
}

TEST(RunChains, ThinningAndExtensionMismatch) {
  auto p = make_problem(4, 5, 3, 43);
  SamplerConfig cfg;
  cfg.n_burnin = 0;
  cfg.n_draws = 3;
  cfg.n_chains = 1;
  cfg.thin = 2;
  const auto thin = run_chains(p.data, p.cal, p.graph, p.hyper, 2, cfg);
  cfg.thin = 1;
  cfg.n_draws = 6;
  const auto full = run_chains(p.data, p.cal, p.graph, p.hyper, 2, cfg);
  const std::size_t w = thin.layout().size();
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_TRUE(std::equal(thin.chains()[0].params.begin() + static_cast<std::ptrdiff_t>(d * w),
                           thin.chains()[0].params.begin() + static_cast<std::ptrdiff_t>((d + 1) * w),
                           full.chains()[0].params.begin() + static_cast<std::ptrdiff_t>((2 * d + 1) * w)));
  }
  cfg.extension = Extension::pre_dayoff;
  EXPECT_THROW(run_chains(p.data, p.cal, p.graph, p.hyper, 2, cfg), ValidationError);
}

// Data drawn from the model itself; the posterior should cover the truth.
TEST(RunChains, TinyProblemCalibration) {
  const std::size_t n = 4, m = 2, t_len = 10, k = 3;
  auto p = make_problem(n, t_len, k, 44);
  GibbsSampler g(p.data, p.cal, p.graph, p.hyper, m);
  ModelState truth = g.initial_state();
  truth.loading.set(2, 0, 0.8);
  truth.loading.set(3, 0, -0.5);
  truth.loading.set(2, 1, 0.4);
  truth.loading.set(3, 1, 1.1);
  truth.ar_coef << 0.7, 0.5;
  truth.noise_var.setConstant(0.3);
  truth.evolution_var << 1.0, 0.8;
  truth.gp_scale.setConstant(0.4);
  truth.gp_range.setConstant(2.0);
  truth.dayoff_effect.setConstant(0.5);
  Rng rng(45);
  Cube y;
  simulate_from_params(truth, p.cal, p.data.grid, 4.0, y, rng);
  p.data.values = y;

  SamplerConfig cfg;
  cfg.n_burnin = 1500;
  cfg.n_draws = 1500;
  cfg.n_chains = 2;
  cfg.latent_stride = 1;
  const auto store = run_chains(p.data, p.cal, p.graph, p.hyper, m, cfg);
  ASSERT_TRUE(store.complete());
  const std::size_t coords = n * t_len * k;
  std::vector<double> sum(coords, 0.0), sq(coords, 0.0);
  std::size_t draws = 0;
  for (std::size_t c = 0; c < store.num_chains(); ++c) {
    for (std::size_t i = 0; i < store.chains()[c].n_latent; ++i) {
      const double* rec = store.latent_record(c, i);
      for (std::size_t j = 0; j < coords; ++j) {
        sum[j] += rec[j];
        sq[j] += rec[j] * rec[j];
      }
      ++draws;
    }
  }
  std::size_t covered = 0;
  for (std::size_t j = 0; j < coords; ++j) {
    const double mean = sum[j] / static_cast<double>(draws);
    const double sd = std::sqrt(std::max(sq[j] / static_cast<double>(draws) - mean * mean, 0.0));
    if (std::abs(mean - truth.latent.data()[j]) <= 3.0 * sd) ++covered;
  }
  EXPECT_GE(static_cast<double>(covered) / static_cast<double>(coords), 0.95);
}

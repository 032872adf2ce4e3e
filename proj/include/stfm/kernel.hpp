#pragma once

// Correlation kernels, Gram matrices and the dense SPD linear algebra used by
// every conditional in the sampler.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <sstream>
#include <utility>
#include <vector>

#include "stfm/errors.hpp"
#include "stfm/random.hpp"

namespace stfm {

// Ordered measurement locations within one curve (hours within a day).
class MeasurementGrid {
 public:
  MeasurementGrid() = default;

  explicit MeasurementGrid(std::vector<double> points) : points_(std::move(points)) {
    if (points_.size() < 2) throw ValidationError("measurement grid needs at least 2 points");
    for (std::size_t i = 1; i < points_.size(); ++i) {
      if (!(points_[i] > points_[i - 1])) {
        throw ValidationError("measurement grid must be strictly increasing");
      }
    }
  }

  // Grid 1, 2, ..., k.
  static MeasurementGrid hourly(std::size_t k) {
    std::vector<double> p(k);
    for (std::size_t i = 0; i < k; ++i) p[i] = static_cast<double>(i + 1);
    return MeasurementGrid(std::move(p));
  }

  std::size_t size() const noexcept { return points_.size(); }
  double operator[](std::size_t i) const { return points_[i]; }
  const std::vector<double>& points() const noexcept { return points_; }

  bool operator==(const MeasurementGrid&) const = default;

 private:
  std::vector<double> points_;
};

// exp(-d^2 / range); range is in squared grid units.
inline double rbf_kernel(double distance, double range) {
  if (!(range > 0.0)) throw DomainError("rbf_kernel: range must be positive");
  return std::exp(-distance * distance / range);
}

using CorrelationFn = std::function<double(double, double)>;

struct GramMatrix {
  Eigen::MatrixXd values;
  double scale = 1.0;  // marginal variance
  double range = 1.0;
};

// Cholesky factor of an SPD matrix with the jitter ladder: on failure add
// 1e-10 * mean(diag) to the diagonal, escalating by x10 up to 1e-4 * mean(diag).
class SpdFactor {
 public:
  SpdFactor() = default;

  explicit SpdFactor(const Eigen::MatrixXd& a) { factorize(a); }

  Eigen::Index dim() const noexcept { return llt_.rows(); }
  double jitter() const noexcept { return jitter_; }
  const Eigen::LLT<Eigen::MatrixXd>& llt() const noexcept { return llt_; }
  Eigen::MatrixXd lower() const { return llt_.matrixL(); }

  template <typename Rhs>
  auto solve(const Eigen::MatrixBase<Rhs>& rhs) const {
    if (rhs.rows() != dim()) throw ValidationError("SpdFactor::solve: dimension mismatch");
    return llt_.solve(rhs);
  }

  Eigen::MatrixXd inverse() const {
    return llt_.solve(Eigen::MatrixXd::Identity(dim(), dim()));
  }

  double log_det() const {
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  // v' A^{-1} v
  double quad_inverse(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    return llt_.matrixL().solve(v).squaredNorm();
  }

 private:
  void factorize(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols() || a.rows() == 0) {
      throw ValidationError("SpdFactor: matrix must be square and non-empty");
    }
    if (!a.allFinite()) throw NumericalError("SpdFactor: non-finite matrix entries");
    if (try_factor(a)) return;
    const double mean_diag = a.diagonal().mean();
    const double base = mean_diag > 0.0 ? mean_diag : 1.0;
    double attempted = 0.0;
    for (double rel = 1e-10; rel <= 1e-4 * (1.0 + 1e-9); rel *= 10.0) {
      attempted = rel * base;
      Eigen::MatrixXd b = a;
      b.diagonal().array() += attempted;
      if (try_factor(b)) {
        jitter_ = attempted;
        return;
      }
    }
    std::ostringstream msg;
    msg << "Cholesky factorization failed after jitter " << attempted;
    throw NumericalError(msg.str(), attempted);
  }

  bool try_factor(const Eigen::MatrixXd& a) {
    llt_.compute(a);
    if (llt_.info() != Eigen::Success) return false;
    const auto d = llt_.matrixLLT().diagonal();
    return d.allFinite() && (d.array() > 0.0).all();
  }

  Eigen::LLT<Eigen::MatrixXd> llt_;
  double jitter_ = 0.0;
};

inline Eigen::MatrixXd correlation_matrix(const MeasurementGrid& grid, double range,
                                          const CorrelationFn& kernel = rbf_kernel) {
  const auto k = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd r(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    r(i, i) = kernel(0.0, range);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = kernel(std::abs(grid[i] - grid[j]), range);
      r(i, j) = v;
      r(j, i) = v;
    }
  }
  return r;
}

// Gram matrix scale * kernel(|t_i - t_j|, range); throws NumericalError when
// the matrix cannot be factorized even after the jitter ladder.
inline GramMatrix build_gram(const MeasurementGrid& grid, double scale, double range,
                             const CorrelationFn& kernel = rbf_kernel) {
  if (!(scale > 0.0)) throw DomainError("build_gram: scale must be positive");
  if (!(range > 0.0)) throw DomainError("build_gram: range must be positive");
  GramMatrix g{scale * correlation_matrix(grid, range, kernel), scale, range};
  SpdFactor check(g.values);
  return g;
}

template <typename Rhs>
Eigen::MatrixXd chol_solve(const GramMatrix& g, const Eigen::MatrixBase<Rhs>& rhs) {
  return SpdFactor(g.values).solve(rhs);
}

inline double log_det(const GramMatrix& g) { return SpdFactor(g.values).log_det(); }

enum class MvnMode { covariance, precision };

// Draw from N(mean, S) (covariance mode) or N(mean, P^{-1}) (precision mode)
// given the Cholesky factor of S or P.
inline Eigen::VectorXd mvn_sample(const Eigen::Ref<const Eigen::VectorXd>& mean,
                                  const SpdFactor& factor, MvnMode mode, Rng& rng) {
  if (mean.size() != factor.dim()) throw ValidationError("mvn_sample: dimension mismatch");
  Eigen::VectorXd eps(mean.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = std_normal(rng);
  if (mode == MvnMode::covariance) return mean + factor.llt().matrixL() * eps;
  return mean + factor.llt().matrixU().solve(eps);
}

inline Eigen::VectorXd mvn_sample(const Eigen::Ref<const Eigen::VectorXd>& mean,
                                  const Eigen::MatrixXd& matrix, MvnMode mode, Rng& rng) {
  return mvn_sample(mean, SpdFactor(matrix), mode, rng);
}

}  // namespace stfm

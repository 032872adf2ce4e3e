#pragma once

// Data model: functional panels, calendars, adjacency, CAR precision, the
// structured loading matrix, hyperparameters and the sampler state.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "stfm/errors.hpp"
#include "stfm/kernel.hpp"

namespace stfm {

// Dense (rows x cols x K) array of curves; each (row, col) curve is a
// contiguous K-vector.
class Cube {
 public:
  Cube() = default;
  Cube(std::size_t rows, std::size_t cols, std::size_t k, double fill = 0.0)
      : rows_(rows), cols_(cols), k_(k), data_(rows * cols * k, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t depth() const noexcept { return k_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c, std::size_t k) {
    return data_[(r * cols_ + c) * k_ + k];
  }
  double operator()(std::size_t r, std::size_t c, std::size_t k) const {
    return data_[(r * cols_ + c) * k_ + k];
  }

  Eigen::Map<Eigen::VectorXd> curve(std::size_t r, std::size_t c) {
    return {data_.data() + (r * cols_ + c) * k_, static_cast<Eigen::Index>(k_)};
  }
  Eigen::Map<const Eigen::VectorXd> curve(std::size_t r, std::size_t c) const {
    return {data_.data() + (r * cols_ + c) * k_, static_cast<Eigen::Index>(k_)};
  }

  // All curves of one row as a K x cols matrix (column c = curve(r, c)).
  Eigen::Map<Eigen::MatrixXd> slab(std::size_t r) {
    return {data_.data() + r * cols_ * k_, static_cast<Eigen::Index>(k_), static_cast<Eigen::Index>(cols_)};
  }
  Eigen::Map<const Eigen::MatrixXd> slab(std::size_t r) const {
    return {data_.data() + r * cols_ * k_, static_cast<Eigen::Index>(k_), static_cast<Eigen::Index>(cols_)};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool operator==(const Cube&) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0, k_ = 0;
  std::vector<double> data_;
};

// Observed curves y_{ts}: values(district, day, grid point).
struct FunctionalPanel {
  Cube values;
  MeasurementGrid grid;
  std::vector<std::string> district_ids;
  std::vector<std::string> day_ids;

  std::size_t districts() const noexcept { return values.rows(); }
  std::size_t days() const noexcept { return values.cols(); }
  std::size_t points() const noexcept { return values.depth(); }

  void validate() const {
    if (values.depth() != grid.size()) throw ValidationError("panel depth does not match grid size");
    if (district_ids.size() != values.rows()) throw ValidationError("district id count mismatch");
    if (day_ids.size() != values.cols()) throw ValidationError("day id count mismatch");
    for (double v : values.data()) {
      if (!std::isfinite(v)) throw ValidationError("panel contains non-finite values");
    }
  }
};

// ---------------------------------------------------------------------------
// Calendar

enum class DayType { working, dayoff };
enum class Extension { none, pre_dayoff, pre_working };  // original, I, II

inline int extension_level(Extension e) { return static_cast<int>(e); }

// Transition dummies over a day sequence: entry t is +1 when day t enters the
// indicator set, -1 when it leaves it, 0 otherwise (first day always 0).
struct Calendar {
  std::vector<DayType> day_type;
  Extension extension = Extension::none;
  Eigen::VectorXd dayoff;       // D
  Eigen::VectorXd pre_dayoff;   // D' (zero unless extension >= I)
  Eigen::VectorXd pre_working;  // D'' (zero unless extension == II)

  std::size_t days() const noexcept { return day_type.size(); }

  // Days [begin, begin + len) with the dummies computed on the full span.
  Calendar slice(std::size_t begin, std::size_t len) const {
    if (begin + len > days()) throw ValidationError("calendar slice out of range");
    Calendar c;
    c.extension = extension;
    c.day_type.assign(day_type.begin() + begin, day_type.begin() + begin + len);
    const auto b = static_cast<Eigen::Index>(begin), n = static_cast<Eigen::Index>(len);
    c.dayoff = dayoff.segment(b, n);
    c.pre_dayoff = pre_dayoff.segment(b, n);
    c.pre_working = pre_working.segment(b, n);
    return c;
  }

  bool all_dummies_zero() const {
    return dayoff.isZero(0.0) && pre_dayoff.isZero(0.0) && pre_working.isZero(0.0);
  }
};

namespace detail {

inline Eigen::VectorXd transition_dummy(const std::vector<bool>& member) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(member.size()));
  for (std::size_t t = 1; t < member.size(); ++t) {
    if (member[t] && !member[t - 1]) d(static_cast<Eigen::Index>(t)) = 1.0;
    if (!member[t] && member[t - 1]) d(static_cast<Eigen::Index>(t)) = -1.0;
  }
  return d;
}

}  // namespace detail

inline Calendar build_calendar(const std::vector<DayType>& day_types, Extension extension) {
  if (day_types.empty()) throw ValidationError("build_calendar: empty day sequence");
  const std::size_t n = day_types.size();
  std::vector<bool> off(n), pre_off(n, false), pre_work(n, false);
  for (std::size_t t = 0; t < n; ++t) off[t] = day_types[t] == DayType::dayoff;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    pre_off[t] = !off[t] && off[t + 1];
    pre_work[t] = off[t] && !off[t + 1];
  }
  Calendar c;
  c.day_type = day_types;
  c.extension = extension;
  c.dayoff = detail::transition_dummy(off);
  const auto zero = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  c.pre_dayoff = extension_level(extension) >= 1 ? detail::transition_dummy(pre_off) : zero;
  c.pre_working = extension_level(extension) >= 2 ? detail::transition_dummy(pre_work) : zero;
  return c;
}

// ---------------------------------------------------------------------------
// Spatial structure

class AdjacencyGraph {
 public:
  AdjacencyGraph() = default;
  explicit AdjacencyGraph(std::size_t n) : adj_(n) {}

  AdjacencyGraph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges)
      : adj_(n) {
    for (auto [a, b] : edges) add_edge(a, b);
  }

  void add_edge(std::size_t a, std::size_t b) {
    if (a >= adj_.size() || b >= adj_.size()) throw ValidationError("edge endpoint out of range");
    if (a == b) throw ValidationError("self-edges are not allowed");
    adj_[a].insert(b);
    adj_[b].insert(a);
  }

  std::size_t size() const noexcept { return adj_.size(); }
  const std::set<std::size_t>& neighbors(std::size_t i) const { return adj_.at(i); }
  bool adjacent(std::size_t a, std::size_t b) const { return adj_.at(a).count(b) > 0; }

  std::vector<std::pair<std::size_t, std::size_t>> edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t a = 0; a < adj_.size(); ++a) {
      for (std::size_t b : adj_[a]) {
        if (a < b) out.emplace_back(a, b);
      }
    }
    return out;
  }

  // Row-normalized weights of the subgraph induced on districts
  // [first, n); isolated rows stay zero.
  Eigen::MatrixXd normalized_weights(std::size_t first = 0) const {
    const std::size_t n = adj_.size();
    const auto m = static_cast<Eigen::Index>(first < n ? n - first : 0);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
    for (std::size_t i = first; i < n; ++i) {
      std::size_t degree = 0;
      for (std::size_t j : adj_[i]) degree += j >= first ? 1 : 0;
      if (degree == 0) continue;
      for (std::size_t j : adj_[i]) {
        if (j >= first) {
          w(static_cast<Eigen::Index>(i - first), static_cast<Eigen::Index>(j - first)) =
              1.0 / static_cast<double>(degree);
        }
      }
    }
    return w;
  }

  AdjacencyGraph permuted(const std::vector<std::size_t>& new_to_old) const {
    std::vector<std::size_t> old_to_new(new_to_old.size());
    for (std::size_t i = 0; i < new_to_old.size(); ++i) old_to_new[new_to_old[i]] = i;
    AdjacencyGraph g(adj_.size());
    for (auto [a, b] : edges()) g.add_edge(old_to_new[a], old_to_new[b]);
    return g;
  }

  AdjacencyGraph induced(const std::vector<std::size_t>& keep) const {
    std::map<std::size_t, std::size_t> pos;
    for (std::size_t i = 0; i < keep.size(); ++i) pos[keep[i]] = i;
    AdjacencyGraph g(keep.size());
    for (auto [a, b] : edges()) {
      auto ia = pos.find(a), ib = pos.find(b);
      if (ia != pos.end() && ib != pos.end()) g.add_edge(ia->second, ib->second);
    }
    return g;
  }

  bool operator==(const AdjacencyGraph&) const = default;

 private:
  std::vector<std::set<std::size_t>> adj_;
};

struct CarPrecision {
  Eigen::MatrixXd q;
  double spatial_dep = 0.0;
};

// Q = (I - psi W)(I - psi W)' over districts column+1 .. N-1 (0-based), with W
// the row-normalized induced subgraph.
inline CarPrecision car_precision(const AdjacencyGraph& graph, std::size_t column,
                                  double spatial_dep) {
  if (!(spatial_dep >= 0.0 && spatial_dep < 1.0)) {
    throw DomainError("car_precision: spatial dependence must lie in [0, 1)");
  }
  if (column >= graph.size()) throw ValidationError("car_precision: column out of range");
  const Eigen::MatrixXd w = graph.normalized_weights(column + 1);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(w.rows(), w.cols()) - spatial_dep * w;
  return {a * a.transpose(), spatial_dep};
}

// ---------------------------------------------------------------------------
// Loading matrix with unit diagonal and zero upper triangle in the top block.

class FactorLoading {
 public:
  FactorLoading() = default;
  FactorLoading(std::size_t districts, std::size_t factors)
      : values_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(districts),
                                      static_cast<Eigen::Index>(factors))) {
    if (factors > districts) throw ValidationError("more factors than districts");
    for (std::size_t i = 0; i < factors; ++i) values_(i, i) = 1.0;
  }

  std::size_t districts() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  std::size_t factors() const noexcept { return static_cast<std::size_t>(values_.cols()); }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }

  static bool is_free(std::size_t row, std::size_t col) noexcept { return row > col; }

  // Free part of column c: rows c+1 .. N-1.
  Eigen::VectorXd free_column(std::size_t c) const {
    const auto n = values_.rows() - static_cast<Eigen::Index>(c) - 1;
    return values_.col(static_cast<Eigen::Index>(c)).tail(n);
  }

  void set_free_column(std::size_t c, const Eigen::Ref<const Eigen::VectorXd>& v) {
    const auto n = values_.rows() - static_cast<Eigen::Index>(c) - 1;
    if (v.size() != n) throw ValidationError("set_free_column: length mismatch");
    values_.col(static_cast<Eigen::Index>(c)).tail(n) = v;
  }

  void set(std::size_t row, std::size_t col, double v) {
    if (!is_free(row, col)) throw ValidationError("attempt to overwrite a structural loading");
    values_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)) = v;
  }

  bool structure_intact() const {
    for (Eigen::Index j = 0; j < values_.cols(); ++j) {
      for (Eigen::Index i = 0; i <= j && i < values_.rows(); ++i) {
        if (values_(i, j) != (i == j ? 1.0 : 0.0)) return false;
      }
    }
    return true;
  }

 private:
  Eigen::MatrixXd values_;
};

// ---------------------------------------------------------------------------
// Hyperparameters

enum class LoadingPrior { horseshoe, nonsparse };
enum class DayoffPrior { gp, flat };

struct Hyperparams {
  double n_e = 1.0, s_e = 1.0;
  double n_lambda = 1.0, s_lambda = 1.0;
  double n_eta = 1.0, s_eta = 1.0;
  double m_gamma = 0.95, sigma_gamma = 1.0;
  double alpha_psi = 18.0, beta_psi = 2.0;
  double eta_prime = 1.0;
  double phi_prime = 0.0;  // 0 -> beta_phi
  double beta_phi = 0.0;   // 0 -> (K-1) / (-2 log 0.05)
  double initial_factor_var = 100.0;  // prior variance of the first day's factors
  double nonsparse_shape = 0.1, nonsparse_rate = 0.1;
  LoadingPrior loading_prior = LoadingPrior::horseshoe;
  DayoffPrior dayoff_prior = DayoffPrior::gp;

  static double default_beta_phi(std::size_t k) {
    return static_cast<double>(k - 1) / (-2.0 * std::log(0.05));
  }

  // Fills grid-dependent defaults.
  Hyperparams resolved(std::size_t k) const {
    Hyperparams h = *this;
    if (h.beta_phi <= 0.0) h.beta_phi = default_beta_phi(k);
    if (h.phi_prime <= 0.0) h.phi_prime = h.beta_phi;
    return h;
  }

  void validate() const {
    for (double v : {n_e, s_e, n_lambda, s_lambda, n_eta, s_eta, sigma_gamma, alpha_psi, beta_psi,
                     eta_prime, initial_factor_var, nonsparse_shape, nonsparse_rate}) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("hyperparameters must be positive");
    }
    if (!std::isfinite(m_gamma)) throw ValidationError("m_gamma must be finite");
    if (phi_prime < 0.0 || beta_phi < 0.0) throw ValidationError("hyperparameters must be positive");
  }
};

// ---------------------------------------------------------------------------
// One complete parameter configuration of the model.

struct ModelState {
  Cube latent;   // z: N x T x K
  Cube factors;  // x: M x T x K
  FactorLoading loading;
  Eigen::VectorXd ar_coef;          // gamma, M
  Eigen::MatrixXd dayoff_effect;    // mu, K x M
  Eigen::MatrixXd pre_dayoff_effect;   // mu'
  Eigen::MatrixXd pre_working_effect;  // mu''
  Eigen::VectorXd noise_var;        // e^2, N
  Eigen::VectorXd evolution_var;    // lambda^2, M
  Eigen::VectorXd gp_scale;         // eta^2, N
  Eigen::VectorXd gp_range;         // phi, N
  Eigen::VectorXd local_scale;      // theta^2, M
  Eigen::VectorXd local_aux;        // zeta, M
  double global_scale = 1.0;        // upsilon^2
  double global_aux = 1.0;          // nu
  double spatial_dep = 0.5;         // psi

  std::size_t districts() const noexcept { return latent.rows(); }
  std::size_t days() const noexcept { return latent.cols(); }
  std::size_t points() const noexcept { return latent.depth(); }
  std::size_t num_factors() const noexcept { return factors.rows(); }

  bool invariants_hold() const {
    if (!loading.structure_intact()) return false;
    if ((ar_coef.array().abs() >= 1.0).any()) return false;
    if (!(spatial_dep > 0.0 && spatial_dep < 1.0)) return false;
    for (const Eigen::VectorXd* v : {&noise_var, &evolution_var, &gp_scale, &gp_range,
                                     &local_scale, &local_aux}) {
      if (!(v->array() > 0.0).all()) return false;
    }
    return global_scale > 0.0 && global_aux > 0.0;
  }
};

// ---------------------------------------------------------------------------
// Normalization and reordering

struct NormalizedPanel {
  FunctionalPanel panel;
  Eigen::VectorXd scale;  // per-district divisor
};

// Divides every district by its root-mean-square over (day, grid point).
inline NormalizedPanel normalize_panel(const FunctionalPanel& panel) {
  const std::size_t n = panel.districts(), t = panel.days(), k = panel.points();
  NormalizedPanel out{panel, Eigen::VectorXd(static_cast<Eigen::Index>(n))};
  for (std::size_t s = 0; s < n; ++s) {
    double ss = 0.0;
    for (std::size_t d = 0; d < t; ++d) ss += panel.values.curve(s, d).squaredNorm();
    const double rms = std::sqrt(ss / static_cast<double>(k) / static_cast<double>(t));
    if (!(rms > 0.0)) {
      throw ValidationError("normalize_panel: district " + panel.district_ids[s] + " is all zero");
    }
    out.scale(static_cast<Eigen::Index>(s)) = rms;
    for (std::size_t d = 0; d < t; ++d) out.panel.values.curve(s, d) /= rms;
  }
  return out;
}

inline FunctionalPanel denormalize_panel(const FunctionalPanel& panel, const Eigen::VectorXd& scale) {
  FunctionalPanel out = panel;
  for (std::size_t s = 0; s < panel.districts(); ++s) {
    for (std::size_t d = 0; d < panel.days(); ++d) {
      out.values.curve(s, d) *= scale(static_cast<Eigen::Index>(s));
    }
  }
  return out;
}

// Rows of a panel (districts) selected/permuted by new_to_old.
inline FunctionalPanel select_districts(const FunctionalPanel& panel,
                                        const std::vector<std::size_t>& new_to_old) {
  FunctionalPanel out;
  out.grid = panel.grid;
  out.day_ids = panel.day_ids;
  out.values = Cube(new_to_old.size(), panel.days(), panel.points());
  for (std::size_t i = 0; i < new_to_old.size(); ++i) {
    out.district_ids.push_back(panel.district_ids.at(new_to_old[i]));
    for (std::size_t d = 0; d < panel.days(); ++d) {
      out.values.curve(i, d) = panel.values.curve(new_to_old[i], d);
    }
  }
  return out;
}

inline FunctionalPanel select_days(const FunctionalPanel& panel, std::size_t begin, std::size_t len) {
  if (begin + len > panel.days()) throw ValidationError("select_days: range out of bounds");
  FunctionalPanel out;
  out.grid = panel.grid;
  out.district_ids = panel.district_ids;
  out.day_ids.assign(panel.day_ids.begin() + begin, panel.day_ids.begin() + begin + len);
  out.values = Cube(panel.districts(), len, panel.points());
  for (std::size_t s = 0; s < panel.districts(); ++s) {
    for (std::size_t d = 0; d < len; ++d) out.values.curve(s, d) = panel.values.curve(s, begin + d);
  }
  return out;
}

struct ReorderedData {
  FunctionalPanel panel;
  AdjacencyGraph graph;
  std::vector<std::size_t> permutation;  // new index -> original index
};

// Moves the chosen factor districts to the front, in the given order; the rest
// keep their relative order.
inline ReorderedData reorder_for_factors(const FunctionalPanel& panel, const AdjacencyGraph& graph,
                                         const std::vector<std::string>& factor_districts) {
  const std::size_t n = panel.districts();
  if (graph.size() != n) throw ValidationError("graph and panel disagree on district count");
  if (factor_districts.empty()) throw ValidationError("at least one factor district is required");
  if (factor_districts.size() >= n) throw ValidationError("factor count must be below district count");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index[panel.district_ids[i]] = i;
  std::vector<std::size_t> perm;
  std::vector<bool> used(n, false);
  for (const auto& id : factor_districts) {
    auto it = index.find(id);
    if (it == index.end()) throw ValidationError("unknown factor district: " + id);
    if (used[it->second]) throw ValidationError("duplicate factor district: " + id);
    used[it->second] = true;
    perm.push_back(it->second);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!used[i]) perm.push_back(i);
  }
  return {select_districts(panel, perm), graph.permuted(perm), perm};
}

}  // namespace stfm

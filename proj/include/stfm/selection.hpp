#pragma once

// Posterior predictive loss over candidate factor sets and shrinkage-based
// pruning inside the chosen set.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "stfm/domain.hpp"
#include "stfm/errors.hpp"
#include "stfm/random.hpp"
#include "stfm/sampler.hpp"
#include "stfm/store.hpp"

namespace stfm {

struct PplTerms {
  double fit = 0.0;       // sum ||y - E[z]||^2
  double noise = 0.0;     // T K sum E[e^2]
  double variance = 0.0;  // sum tr Cov(z)
  double total() const { return fit + noise + variance; }
};

// Draw averages over every chain; covariances use the 1/n convention. data must
// be in the store's model order and scale.
inline PplTerms compute_ppl_terms(const DrawStore& store, const FunctionalPanel& data) {
  const auto& l = store.layout();
  if (data.districts() != l.n || data.days() != l.t || data.points() != l.k) {
    throw ValidationError("compute_ppl: data dimensions do not match the store");
  }
  const std::size_t n_lat = store.total_latent(), n_par = store.total_draws();
  if (n_lat == 0 || n_par == 0) throw ValidationError("compute_ppl: store has no latent draws");

  const std::size_t width = l.latent_size();
  std::vector<double> mean(width, 0.0), second(width, 0.0);
  for (std::size_t c = 0; c < store.num_chains(); ++c) {
    for (std::size_t r = 0; r < store.chains()[c].n_latent; ++r) {
      const double* rec = store.latent_record(c, r);
      for (std::size_t i = 0; i < width; ++i) {
        mean[i] += rec[i];
        second[i] += rec[i] * rec[i];
      }
    }
  }
  PplTerms out;
  const double inv = 1.0 / static_cast<double>(n_lat);
  // Variance pass against the mean keeps cancellation small.
  for (std::size_t i = 0; i < width; ++i) mean[i] *= inv;
  std::vector<double> var(width, 0.0);
  for (std::size_t c = 0; c < store.num_chains(); ++c) {
    for (std::size_t r = 0; r < store.chains()[c].n_latent; ++r) {
      const double* rec = store.latent_record(c, r);
      for (std::size_t i = 0; i < width; ++i) {
        const double d = rec[i] - mean[i];
        var[i] += d * d;
      }
    }
  }
  for (std::size_t s = 0; s < l.n; ++s) {
    for (std::size_t t = 0; t < l.t; ++t) {
      for (std::size_t k = 0; k < l.k; ++k) {
        const std::size_t i = (s * l.t + t) * l.k + k;
        const double d = data.values(s, t, k) - mean[i];
        out.fit += d * d;
        out.variance += var[i] * inv;
      }
    }
  }
  double e2 = 0.0;
  for (std::size_t c = 0; c < store.num_chains(); ++c) {
    for (std::size_t r = 0; r < store.chains()[c].n_params; ++r) {
      const double* rec = store.param_record(c, r);
      for (std::size_t s = 0; s < l.n; ++s) e2 += rec[l.noise_var() + s];
    }
  }
  out.noise = static_cast<double>(l.t * l.k) * e2 / static_cast<double>(n_par);
  return out;
}

inline double compute_ppl(const DrawStore& store, const FunctionalPanel& data) {
  return compute_ppl_terms(store, data).total();
}

// ---------------------------------------------------------------------------
// Pruning

struct ThresholdRule {
  double quantile = 0.75;
  double threshold = 0.05;
};

struct FactorVerdict {
  std::size_t factor = 0;
  std::string district;
  double median_max_loading = 0.0;
  double quantile_max_loading = 0.0;  // statistic compared with the threshold
  bool kept = true;
};

// Empirical quantile with linear interpolation between order statistics.
inline double empirical_quantile(std::vector<double> v, double p) {
  if (v.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Factor s is pruned when the rule's quantile of max_j |b_js| over its free
// entries falls below the threshold.
inline std::vector<FactorVerdict> prune_by_shrinkage(const DrawStore& store, const ThresholdRule& rule = {}) {
  const auto& l = store.layout();
  std::vector<FactorVerdict> out;
  for (std::size_t c = 0; c < l.m; ++c) {
    std::vector<double> stat;
    for (std::size_t ch = 0; ch < store.num_chains(); ++ch) {
      for (std::size_t r = 0; r < store.chains()[ch].n_params; ++r) {
        const double* rec = store.param_record(ch, r);
        double mx = 0.0;
        for (std::size_t j = c + 1; j < l.n; ++j) mx = std::max(mx, std::abs(rec[l.loading() + c * l.n + j]));
        stat.push_back(mx);
      }
    }
    FactorVerdict v;
    v.factor = c;
    if (c < store.meta().district_ids.size()) v.district = store.meta().district_ids[c];
    if (!stat.empty()) {
      v.median_max_loading = empirical_quantile(stat, 0.5);
      v.quantile_max_loading = empirical_quantile(stat, rule.quantile);
    }
    v.kept = v.quantile_max_loading >= rule.threshold;
    out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Candidate selection

struct CandidateSet {
  std::vector<std::string> factor_districts;
  std::string label;

  void validate() const {
    if (factor_districts.empty()) throw ValidationError("candidate '" + label + "' has no factor districts");
    std::set<std::string> seen(factor_districts.begin(), factor_districts.end());
    if (seen.size() != factor_districts.size()) {
      throw ValidationError("candidate '" + label + "' repeats a district");
    }
  }
};

struct Subsample {
  std::size_t days = 0;       // first `days` days; 0 keeps all
  std::size_t districts = 0;  // 0 keeps all
  std::uint64_t seed = 1;
};

struct CandidateResult {
  CandidateSet candidate;
  bool valid = false;
  std::string error;
  PplTerms ppl;
};

struct SelectionReport {
  std::vector<CandidateResult> candidates;
  std::size_t winner = 0;
  std::vector<FactorVerdict> verdicts;  // for the winner only
  std::vector<std::string> subsample_districts;
};

// District subset: every candidate's factor districts plus a seeded uniform draw
// from the rest, reported in original panel order.
inline std::vector<std::size_t> subsample_districts(const FunctionalPanel& data,
                                                    const std::vector<CandidateSet>& candidates,
                                                    std::size_t count, std::uint64_t seed) {
  const std::size_t n = data.districts();
  std::vector<bool> chosen(n, false);
  std::size_t have = 0;
  for (const auto& c : candidates) {
    for (const auto& id : c.factor_districts) {
      auto it = std::find(data.district_ids.begin(), data.district_ids.end(), id);
      if (it == data.district_ids.end()) throw ValidationError("unknown factor district: " + id);
      const auto i = static_cast<std::size_t>(it - data.district_ids.begin());
      if (!chosen[i]) {
        chosen[i] = true;
        ++have;
      }
    }
  }
  if (count == 0 || count >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  if (count < have) throw ValidationError("subsample smaller than the union of candidate districts");
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i) {
    if (!chosen[i]) rest.push_back(i);
  }
  Rng rng(derive_seed(seed, "subsample"));
  std::shuffle(rest.begin(), rest.end(), rng);
  for (std::size_t i = 0; i < count - have; ++i) chosen[rest[i]] = true;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (chosen[i]) out.push_back(i);
  }
  return out;
}

// Fits every candidate on the subsample, scores it by PPL and prunes the
// winner's factors. Ties go to fewer factors, then to input order.
inline SelectionReport select_factors(const FunctionalPanel& data, const std::vector<DayType>& day_types,
                                      const AdjacencyGraph& graph, const std::vector<CandidateSet>& candidates,
                                      const Hyperparams& hyper, SamplerConfig config, const Subsample& sub = {},
                                      const ThresholdRule& rule = {}) {
  if (candidates.empty()) throw ValidationError("select_factors: no candidates");
  for (const auto& c : candidates) c.validate();
  if (sub.days > data.days()) throw ValidationError("subsample days exceed the panel");
  if (sub.districts > data.districts()) throw ValidationError("subsample districts exceed the panel");
  if (day_types.size() != data.days()) throw ValidationError("calendar length does not match the panel");
  if (config.latent_stride == 0) config.latent_stride = 1;

  const auto keep = subsample_districts(data, candidates, sub.districts, sub.seed);
  const std::size_t days = sub.days ? sub.days : data.days();
  const FunctionalPanel sub_panel = select_days(select_districts(data, keep), 0, days);
  const AdjacencyGraph sub_graph = graph.induced(keep);
  const std::vector<DayType> sub_days(day_types.begin(), day_types.begin() + static_cast<std::ptrdiff_t>(days));
  const Calendar calendar = build_calendar(sub_days, config.extension);

  SelectionReport report;
  report.subsample_districts = sub_panel.district_ids;
  std::vector<DrawStore> stores;
  for (const auto& cand : candidates) {
    CandidateResult res;
    res.candidate = cand;
    DrawStore store;
    try {
      const auto re = reorder_for_factors(sub_panel, sub_graph, cand.factor_districts);
      StoreMeta meta;
      meta.permutation = re.permutation;
      store = run_chains(re.panel, calendar, re.graph, hyper, cand.factor_districts.size(), config, meta);
      if (!store.complete()) {
        for (const auto& ch : store.chains()) {
          if (!ch.complete) throw NumericalError(ch.error);
        }
      }
      res.ppl = compute_ppl_terms(store, re.panel);
      res.valid = std::isfinite(res.ppl.total());
      if (!res.valid) res.error = "non-finite PPL";
    } catch (const std::exception& e) {
      res.valid = false;
      res.error = e.what();
    }
    report.candidates.push_back(std::move(res));
    stores.push_back(std::move(store));
  }

  bool any = false;
  for (std::size_t i = 0; i < report.candidates.size(); ++i) {
    const auto& c = report.candidates[i];
    if (!c.valid) continue;
    if (!any) {
      report.winner = i;
      any = true;
      continue;
    }
    const auto& w = report.candidates[report.winner];
    const double a = c.ppl.total(), b = w.ppl.total();
    if (a < b || (a == b && c.candidate.factor_districts.size() < w.candidate.factor_districts.size())) {
      report.winner = i;
    }
  }
  if (!any) throw NumericalError("select_factors: every candidate fit failed");
  report.verdicts = prune_by_shrinkage(stores[report.winner], rule);
  return report;
}

}  // namespace stfm

#pragma once

// Ordered collections of post-burn-in draws and their on-disk format.
//
// A store directory holds
//   meta                 JSON: sampler config, hyperparameters, permutation,
//                        normalization scales, ids, grid, training calendar
//   chain_<i>.bin        parameter draws of chain i
//   chain_<i>_traj.bin   latent-curve draws of chain i (only when kept)
//
// Binary layout (little-endian): 5 magic bytes "STFF1", then seven uint64
// fields {kind, N, M, T, K, records, values_per_record}, then
// records * values_per_record float64 values, record-major. kind is 0 for
// parameter records and 1 for latent-curve records.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stfm/domain.hpp"
#include "stfm/errors.hpp"

namespace stfm {

struct SamplerConfig {
  std::size_t n_burnin = 15000;
  std::size_t n_draws = 5000;
  std::size_t n_chains = 4;
  std::size_t thin = 1;
  std::uint64_t seed = 1;
  double mh_step_phi = 0.3;
  double mh_step_psi = 0.3;
  Extension extension = Extension::none;
  bool adapt = true;
  // Keep latent curves z for every k-th stored draw; 0 keeps none.
  std::size_t latent_stride = 0;
  std::size_t threads = 0;  // 0: one per chain

  void validate() const {
    if (n_chains == 0) throw ValidationError("n_chains must be positive");
    if (thin == 0) throw ValidationError("thin must be positive");
    if (!(mh_step_phi > 0.0) || !(mh_step_psi > 0.0)) {
      throw ValidationError("MH step sizes must be positive");
    }
  }
};

// Flat per-draw parameter vector layout.
struct DrawLayout {
  std::size_t n = 0, m = 0, t = 0, k = 0;

  std::size_t loading() const { return 0; }
  std::size_t ar_coef() const { return loading() + n * m; }
  std::size_t dayoff() const { return ar_coef() + m; }
  std::size_t pre_dayoff() const { return dayoff() + k * m; }
  std::size_t pre_working() const { return pre_dayoff() + k * m; }
  std::size_t noise_var() const { return pre_working() + k * m; }
  std::size_t evolution_var() const { return noise_var() + n; }
  std::size_t gp_scale() const { return evolution_var() + m; }
  std::size_t gp_range() const { return gp_scale() + n; }
  std::size_t local_scale() const { return gp_range() + n; }
  std::size_t local_aux() const { return local_scale() + m; }
  std::size_t global_scale() const { return local_aux() + m; }
  std::size_t global_aux() const { return global_scale() + 1; }
  std::size_t spatial_dep() const { return global_aux() + 1; }
  std::size_t last_factors() const { return spatial_dep() + 1; }
  std::size_t size() const { return last_factors() + m * k; }

  std::size_t latent_size() const { return n * t * k; }
};

// Parameters of one draw needed downstream (everything except trajectories).
struct ParamDraw {
  Eigen::MatrixXd loading;  // N x M
  Eigen::VectorXd ar_coef;
  Eigen::MatrixXd dayoff_effect, pre_dayoff_effect, pre_working_effect;  // K x M
  Eigen::VectorXd noise_var, evolution_var, gp_scale, gp_range, local_scale, local_aux;
  double global_scale = 1.0, global_aux = 1.0, spatial_dep = 0.5;
  Eigen::MatrixXd last_factors;  // K x M
};

inline std::vector<double> pack_params(const DrawLayout& l, const ModelState& s) {
  std::vector<double> v(l.size());
  auto put = [&](std::size_t off, const auto& mat) {
    for (Eigen::Index i = 0; i < mat.size(); ++i) v[off + static_cast<std::size_t>(i)] = mat.data()[i];
  };
  put(l.loading(), s.loading.values());
  put(l.ar_coef(), s.ar_coef);
  put(l.dayoff(), s.dayoff_effect);
  put(l.pre_dayoff(), s.pre_dayoff_effect);
  put(l.pre_working(), s.pre_working_effect);
  put(l.noise_var(), s.noise_var);
  put(l.evolution_var(), s.evolution_var);
  put(l.gp_scale(), s.gp_scale);
  put(l.gp_range(), s.gp_range);
  put(l.local_scale(), s.local_scale);
  put(l.local_aux(), s.local_aux);
  v[l.global_scale()] = s.global_scale;
  v[l.global_aux()] = s.global_aux;
  v[l.spatial_dep()] = s.spatial_dep;
  for (std::size_t m = 0; m < l.m; ++m) {
    for (std::size_t k = 0; k < l.k; ++k) v[l.last_factors() + m * l.k + k] = s.factors(m, l.t - 1, k);
  }
  return v;
}

inline ParamDraw unpack_params(const DrawLayout& l, const double* v) {
  using Eigen::Index;
  auto mat = [&](std::size_t off, std::size_t r, std::size_t c) {
    return Eigen::Map<const Eigen::MatrixXd>(v + off, static_cast<Index>(r), static_cast<Index>(c)).eval();
  };
  auto vec = [&](std::size_t off, std::size_t r) {
    return Eigen::Map<const Eigen::VectorXd>(v + off, static_cast<Index>(r)).eval();
  };
  ParamDraw p;
  p.loading = mat(l.loading(), l.n, l.m);
  p.ar_coef = vec(l.ar_coef(), l.m);
  p.dayoff_effect = mat(l.dayoff(), l.k, l.m);
  p.pre_dayoff_effect = mat(l.pre_dayoff(), l.k, l.m);
  p.pre_working_effect = mat(l.pre_working(), l.k, l.m);
  p.noise_var = vec(l.noise_var(), l.n);
  p.evolution_var = vec(l.evolution_var(), l.m);
  p.gp_scale = vec(l.gp_scale(), l.n);
  p.gp_range = vec(l.gp_range(), l.n);
  p.local_scale = vec(l.local_scale(), l.m);
  p.local_aux = vec(l.local_aux(), l.m);
  p.global_scale = v[l.global_scale()];
  p.global_aux = v[l.global_aux()];
  p.spatial_dep = v[l.spatial_dep()];
  p.last_factors = mat(l.last_factors(), l.k, l.m);
  return p;
}

struct ChainDraws {
  std::vector<double> params;  // records x layout.size()
  std::vector<double> latent;  // latent records x layout.latent_size()
  std::size_t n_params = 0;
  std::size_t n_latent = 0;
  bool complete = true;
  std::string error;
};

struct StoreMeta {
  SamplerConfig config;
  Hyperparams hyper;
  std::vector<std::size_t> permutation;  // model index -> original index
  Eigen::VectorXd scale;                 // per model-ordered district
  std::vector<std::string> district_ids; // model order
  std::vector<std::string> day_ids;
  MeasurementGrid grid;
  std::vector<DayType> day_types;        // training calendar
};

class DrawStore {
 public:
  DrawStore() = default;
  DrawStore(DrawLayout layout, StoreMeta meta) : layout_(layout), meta_(std::move(meta)) {}

  const DrawLayout& layout() const noexcept { return layout_; }
  const StoreMeta& meta() const noexcept { return meta_; }
  StoreMeta& meta() noexcept { return meta_; }
  std::vector<ChainDraws>& chains() noexcept { return chains_; }
  const std::vector<ChainDraws>& chains() const noexcept { return chains_; }

  std::size_t num_chains() const noexcept { return chains_.size(); }
  std::size_t total_draws() const {
    std::size_t n = 0;
    for (const auto& c : chains_) n += c.n_params;
    return n;
  }
  std::size_t total_latent() const {
    std::size_t n = 0;
    for (const auto& c : chains_) n += c.n_latent;
    return n;
  }
  bool complete() const {
    for (const auto& c : chains_) {
      if (!c.complete) return false;
    }
    return true;
  }

  const double* param_record(std::size_t chain, std::size_t i) const {
    return chains_.at(chain).params.data() + i * layout_.size();
  }
  ParamDraw param_draw(std::size_t chain, std::size_t i) const {
    return unpack_params(layout_, param_record(chain, i));
  }
  const double* latent_record(std::size_t chain, std::size_t i) const {
    return chains_.at(chain).latent.data() + i * layout_.latent_size();
  }
  // z(s, t, k) inside one latent record.
  double latent_at(const double* rec, std::size_t s, std::size_t t, std::size_t k) const {
    return rec[(s * layout_.t + t) * layout_.k + k];
  }

  // Scalar trace of one parameter slot for one chain.
  std::vector<double> trace(std::size_t chain, std::size_t slot) const {
    const auto& c = chains_.at(chain);
    std::vector<double> out(c.n_params);
    for (std::size_t i = 0; i < c.n_params; ++i) out[i] = c.params[i * layout_.size() + slot];
    return out;
  }

 private:
  DrawLayout layout_;
  StoreMeta meta_;
  std::vector<ChainDraws> chains_;
};

// ---------------------------------------------------------------------------
// JSON for metadata

inline std::string to_string(Extension e) {
  switch (e) {
    case Extension::none: return "none";
    case Extension::pre_dayoff: return "I";
    case Extension::pre_working: return "II";
  }
  return "none";
}

inline Extension parse_extension(const std::string& s) {
  if (s == "none" || s == "original") return Extension::none;
  if (s == "I" || s == "1") return Extension::pre_dayoff;
  if (s == "II" || s == "2") return Extension::pre_working;
  throw ValidationError("unknown extension '" + s + "' (expected none, I or II)");
}

inline nlohmann::json hyper_to_json(const Hyperparams& h) {
  return {{"n_e", h.n_e}, {"s_e", h.s_e}, {"n_lambda", h.n_lambda}, {"s_lambda", h.s_lambda},
          {"n_eta", h.n_eta}, {"s_eta", h.s_eta}, {"m_gamma", h.m_gamma},
          {"sigma_gamma", h.sigma_gamma}, {"alpha_psi", h.alpha_psi}, {"beta_psi", h.beta_psi},
          {"eta_prime", h.eta_prime}, {"phi_prime", h.phi_prime}, {"beta_phi", h.beta_phi},
          {"initial_factor_var", h.initial_factor_var},
          {"nonsparse_shape", h.nonsparse_shape}, {"nonsparse_rate", h.nonsparse_rate},
          {"loading_prior", h.loading_prior == LoadingPrior::horseshoe ? "horseshoe" : "nonsparse"},
          {"dayoff_prior", h.dayoff_prior == DayoffPrior::gp ? "gp" : "flat"}};
}

inline Hyperparams hyper_from_json(const nlohmann::json& j) {
  Hyperparams h;
  h.n_e = j.at("n_e");
  h.s_e = j.at("s_e");
  h.n_lambda = j.at("n_lambda");
  h.s_lambda = j.at("s_lambda");
  h.n_eta = j.at("n_eta");
  h.s_eta = j.at("s_eta");
  h.m_gamma = j.at("m_gamma");
  h.sigma_gamma = j.at("sigma_gamma");
  h.alpha_psi = j.at("alpha_psi");
  h.beta_psi = j.at("beta_psi");
  h.eta_prime = j.at("eta_prime");
  h.phi_prime = j.at("phi_prime");
  h.beta_phi = j.at("beta_phi");
  h.initial_factor_var = j.at("initial_factor_var");
  h.nonsparse_shape = j.at("nonsparse_shape");
  h.nonsparse_rate = j.at("nonsparse_rate");
  h.loading_prior = j.at("loading_prior") == "horseshoe" ? LoadingPrior::horseshoe : LoadingPrior::nonsparse;
  h.dayoff_prior = j.at("dayoff_prior") == "gp" ? DayoffPrior::gp : DayoffPrior::flat;
  return h;
}

inline nlohmann::json config_to_json(const SamplerConfig& c) {
  return {{"n_burnin", c.n_burnin}, {"n_draws", c.n_draws}, {"n_chains", c.n_chains},
          {"thin", c.thin}, {"seed", c.seed}, {"mh_step_phi", c.mh_step_phi},
          {"mh_step_psi", c.mh_step_psi}, {"extension", to_string(c.extension)},
          {"adapt", c.adapt}, {"latent_stride", c.latent_stride}};
}

inline SamplerConfig config_from_json(const nlohmann::json& j) {
  SamplerConfig c;
  c.n_burnin = j.at("n_burnin");
  c.n_draws = j.at("n_draws");
  c.n_chains = j.at("n_chains");
  c.thin = j.at("thin");
  c.seed = j.at("seed");
  c.mh_step_phi = j.at("mh_step_phi");
  c.mh_step_psi = j.at("mh_step_psi");
  c.extension = parse_extension(j.at("extension"));
  c.adapt = j.at("adapt");
  c.latent_stride = j.at("latent_stride");
  return c;
}

// ---------------------------------------------------------------------------
// Binary arrays

namespace detail {

inline constexpr std::array<char, 5> kStoreMagic{'S', 'T', 'F', 'F', '1'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

struct ArrayHeader {
  std::uint64_t kind = 0, n = 0, m = 0, t = 0, k = 0, records = 0, width = 0;
};

inline void write_array(const std::filesystem::path& path, const ArrayHeader& h,
                        const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
  out.write(kStoreMagic.data(), kStoreMagic.size());
  for (std::uint64_t f : {h.kind, h.n, h.m, h.t, h.k, h.records, h.width}) {
    const auto le = to_little(f);
    out.write(reinterpret_cast<const char*>(&le), sizeof(le));
  }
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      const auto le = to_little(v);
      out.write(reinterpret_cast<const char*>(&le), sizeof(le));
    }
  }
  if (!out) throw ValidationError("write failed: " + path.string());
}

inline std::vector<double> read_array(const std::filesystem::path& path, ArrayHeader& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::array<char, 5> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kStoreMagic) throw ValidationError(path.string() + ": bad magic bytes");
  std::array<std::uint64_t, 7> f{};
  for (auto& v : f) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    v = to_little(v);
  }
  if (!in) throw ValidationError(path.string() + ": truncated header");
  h = {f[0], f[1], f[2], f[3], f[4], f[5], f[6]};
  std::vector<double> values(h.records * h.width);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw ValidationError(path.string() + ": truncated data");
  for (double& v : values) v = to_little(v);
  return values;
}

}  // namespace detail

inline void save_store(const DrawStore& store, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto& l = store.layout();
  const auto& meta = store.meta();
  nlohmann::json j;
  j["format"] = "STFF1";
  j["dims"] = {{"N", l.n}, {"M", l.m}, {"T", l.t}, {"K", l.k}};
  j["config"] = config_to_json(meta.config);
  j["hyper"] = hyper_to_json(meta.hyper);
  j["permutation"] = meta.permutation;
  j["scale"] = std::vector<double>(meta.scale.data(), meta.scale.data() + meta.scale.size());
  j["district_ids"] = meta.district_ids;
  j["day_ids"] = meta.day_ids;
  j["grid"] = meta.grid.points();
  std::vector<std::string> days;
  for (auto d : meta.day_types) days.push_back(d == DayType::working ? "working" : "dayoff");
  j["day_types"] = days;
  nlohmann::json chains = nlohmann::json::array();
  for (std::size_t c = 0; c < store.num_chains(); ++c) {
    const auto& ch = store.chains()[c];
    chains.push_back({{"draws", ch.n_params}, {"latent_draws", ch.n_latent},
                      {"complete", ch.complete}, {"error", ch.error}});
    detail::write_array(dir / ("chain_" + std::to_string(c) + ".bin"),
                        {0, l.n, l.m, l.t, l.k, ch.n_params, l.size()}, ch.params);
    if (ch.n_latent > 0) {
      detail::write_array(dir / ("chain_" + std::to_string(c) + "_traj.bin"),
                          {1, l.n, l.m, l.t, l.k, ch.n_latent, l.latent_size()}, ch.latent);
    }
  }
  j["chains"] = chains;
  const fs::path tmp = dir / "meta.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw ValidationError("cannot write store metadata");
  }
  fs::rename(tmp, dir / "meta");
}

inline DrawStore load_store(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta");
  if (!in) throw ValidationError("no store metadata in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed store metadata: ") + e.what());
  }
  DrawLayout l{j["dims"]["N"], j["dims"]["M"], j["dims"]["T"], j["dims"]["K"]};
  StoreMeta meta;
  meta.config = config_from_json(j.at("config"));
  meta.hyper = hyper_from_json(j.at("hyper"));
  meta.permutation = j.at("permutation").get<std::vector<std::size_t>>();
  const auto scale = j.at("scale").get<std::vector<double>>();
  meta.scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  meta.district_ids = j.at("district_ids").get<std::vector<std::string>>();
  meta.day_ids = j.at("day_ids").get<std::vector<std::string>>();
  meta.grid = MeasurementGrid(j.at("grid").get<std::vector<double>>());
  for (const auto& d : j.at("day_types")) {
    meta.day_types.push_back(d == "working" ? DayType::working : DayType::dayoff);
  }
  DrawStore store(l, std::move(meta));
  std::size_t c = 0;
  for (const auto& cj : j.at("chains")) {
    ChainDraws ch;
    ch.complete = cj.at("complete");
    ch.error = cj.at("error");
    detail::ArrayHeader h;
    ch.params = detail::read_array(dir / ("chain_" + std::to_string(c) + ".bin"), h);
    if (h.kind != 0 || h.n != l.n || h.m != l.m || h.t != l.t || h.k != l.k || h.width != l.size()) {
      throw ValidationError("chain file header does not match store metadata");
    }
    ch.n_params = h.records;
    if (cj.at("latent_draws").get<std::size_t>() > 0) {
      ch.latent = detail::read_array(dir / ("chain_" + std::to_string(c) + "_traj.bin"), h);
      if (h.kind != 1 || h.width != l.latent_size()) {
        throw ValidationError("latent file header does not match store metadata");
      }
      ch.n_latent = h.records;
    }
    store.chains().push_back(std::move(ch));
    ++c;
  }
  return store;
}

}  // namespace stfm

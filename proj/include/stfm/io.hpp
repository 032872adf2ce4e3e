#pragma once

// Text formats: long-format panel CSV, calendar CSV, adjacency edge lists and
// flat key=value configuration files.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stfm/domain.hpp"
#include "stfm/errors.hpp"
#include "stfm/store.hpp"

namespace stfm {

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : ValidationError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline double parse_double(const std::string& s, const std::string& file, std::size_t line) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) throw ParseError(file, line, "not a number: '" + s + "'");
  return v;
}

struct CsvRows {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;
};

inline CsvRows read_csv(const std::filesystem::path& path, const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  const std::string file = path.string();
  CsvRows out;
  std::string line;
  std::size_t no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++no;
    if (no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto cells = split_csv(line);
    if (!have_header) {
      if (cells != header) {
        std::string want;
        for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
        throw ParseError(file, no, "expected header '" + want + "'");
      }
      have_header = true;
      continue;
    }
    if (cells.size() != header.size()) {
      throw ParseError(file, no, "expected " + std::to_string(header.size()) + " fields, found " +
                                     std::to_string(cells.size()));
    }
    out.rows.push_back(std::move(cells));
    out.lines.push_back(no);
  }
  if (!have_header) throw ParseError(file, no, "missing header");
  return out;
}

}  // namespace detail

// Writes `content` to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << content;
    if (!out) throw ValidationError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Panel: day,district,grid_point,value

inline std::string panel_to_csv(const FunctionalPanel& p) {
  std::ostringstream os;
  os.precision(17);
  os << "day,district,grid_point,value\n";
  for (std::size_t t = 0; t < p.days(); ++t) {
    for (std::size_t s = 0; s < p.districts(); ++s) {
      for (std::size_t k = 0; k < p.points(); ++k) {
        os << p.day_ids[t] << ',' << p.district_ids[s] << ',' << p.grid[k] << ',' << p.values(s, t, k) << '\n';
      }
    }
  }
  return os.str();
}

inline void write_panel_csv(const std::filesystem::path& path, const FunctionalPanel& p) {
  write_file_atomic(path, panel_to_csv(p));
}

// Days and districts keep their order of first appearance; grid points are
// sorted. Every (day, district, grid point) must appear exactly once.
inline FunctionalPanel read_panel_csv(const std::filesystem::path& path) {
  const auto csv = detail::read_csv(path, {"day", "district", "grid_point", "value"});
  const std::string file = path.string();
  if (csv.rows.empty()) throw ParseError(file, 1, "panel has no rows");
  std::map<std::string, std::size_t> day_idx, dist_idx;
  std::vector<std::string> days, dists;
  std::vector<double> grid;
  struct Cell {
    std::size_t day, dist;
    double tau, value;
    std::size_t line;
  };
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const auto line = csv.lines[r];
    if (row[0].empty() || row[1].empty()) throw ParseError(file, line, "empty day or district id");
    auto [di, dnew] = day_idx.try_emplace(row[0], days.size());
    if (dnew) days.push_back(row[0]);
    auto [si, snew] = dist_idx.try_emplace(row[1], dists.size());
    if (snew) dists.push_back(row[1]);
    const double tau = detail::parse_double(row[2], file, line);
    const double v = detail::parse_double(row[3], file, line);
    if (!std::isfinite(v)) throw ParseError(file, line, "non-finite value");
    if (std::find(grid.begin(), grid.end(), tau) == grid.end()) grid.push_back(tau);
    cells.push_back({di->second, si->second, tau, v, line});
  }
  std::sort(grid.begin(), grid.end());
  FunctionalPanel p;
  p.grid = MeasurementGrid(grid);
  p.district_ids = dists;
  p.day_ids = days;
  p.values = Cube(dists.size(), days.size(), grid.size());
  std::vector<bool> seen(p.values.size(), false);
  for (const auto& c : cells) {
    const auto k = static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), c.tau) - grid.begin());
    const std::size_t flat = (c.dist * days.size() + c.day) * grid.size() + k;
    if (seen[flat]) throw ParseError(file, c.line, "duplicate (day, district, grid_point)");
    seen[flat] = true;
    p.values(c.dist, c.day, k) = c.value;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ValidationError(file + ": panel is incomplete (" + std::to_string(cells.size()) + " of " +
                          std::to_string(seen.size()) + " cells present)");
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Calendar: day,type

struct DayCalendar {
  std::vector<std::string> day_ids;
  std::vector<DayType> types;
};

inline void write_calendar_csv(const std::filesystem::path& path, const std::vector<std::string>& day_ids,
                               const std::vector<DayType>& types) {
  if (day_ids.size() != types.size()) throw ValidationError("calendar ids and types differ in length");
  std::ostringstream os;
  os << "day,type\n";
  for (std::size_t i = 0; i < types.size(); ++i) {
    os << day_ids[i] << ',' << (types[i] == DayType::working ? "working" : "dayoff") << '\n';
  }
  write_file_atomic(path, os.str());
}

inline DayCalendar read_calendar_csv(const std::filesystem::path& path) {
  const auto csv = detail::read_csv(path, {"day", "type"});
  DayCalendar c;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    if (row[1] == "working") {
      c.types.push_back(DayType::working);
    } else if (row[1] == "dayoff") {
      c.types.push_back(DayType::dayoff);
    } else {
      throw ParseError(path.string(), csv.lines[r], "day type must be 'working' or 'dayoff'");
    }
    c.day_ids.push_back(row[0]);
  }
  return c;
}

// Day types aligned to panel days (every panel day must be listed).
inline std::vector<DayType> align_calendar(const DayCalendar& cal, const std::vector<std::string>& day_ids) {
  std::map<std::string, DayType> by_id;
  for (std::size_t i = 0; i < cal.day_ids.size(); ++i) by_id[cal.day_ids[i]] = cal.types[i];
  std::vector<DayType> out;
  for (const auto& d : day_ids) {
    auto it = by_id.find(d);
    if (it == by_id.end()) throw ValidationError("calendar has no entry for day " + d);
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adjacency: district_a,district_b

inline void write_adjacency_csv(const std::filesystem::path& path, const AdjacencyGraph& g,
                                const std::vector<std::string>& ids) {
  std::ostringstream os;
  os << "district_a,district_b\n";
  for (auto [a, b] : g.edges()) os << ids.at(a) << ',' << ids.at(b) << '\n';
  write_file_atomic(path, os.str());
}

inline AdjacencyGraph read_adjacency_csv(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  const auto csv = detail::read_csv(path, {"district_a", "district_b"});
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
  AdjacencyGraph g(ids.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    auto a = index.find(row[0]), b = index.find(row[1]);
    if (a == index.end() || b == index.end()) {
      throw ParseError(path.string(), csv.lines[r], "unknown district in edge " + row[0] + "," + row[1]);
    }
    if (a->second == b->second) throw ParseError(path.string(), csv.lines[r], "self-edge " + row[0]);
    g.add_edge(a->second, b->second);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Flat key=value configuration

struct RunConfig {
  Hyperparams hyper;
  SamplerConfig sampler;
  double prune_quantile = 0.75;
  double prune_threshold = 0.05;
};

inline void apply_config_value(RunConfig& c, const std::string& key, const std::string& value,
                               const std::string& file = "config", std::size_t line = 0) {
  auto num = [&] { return detail::parse_double(value, file, line); };
  auto count = [&] {
    const double v = num();
    if (v < 0 || v != std::floor(v)) throw ParseError(file, line, key + " must be a non-negative integer");
    return static_cast<std::size_t>(v);
  };
  auto flag = [&] {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ParseError(file, line, key + " must be true or false");
  };
  const std::map<std::string, double*> reals{
      {"n_e", &c.hyper.n_e}, {"s_e", &c.hyper.s_e}, {"n_lambda", &c.hyper.n_lambda},
      {"s_lambda", &c.hyper.s_lambda}, {"n_eta", &c.hyper.n_eta}, {"s_eta", &c.hyper.s_eta},
      {"m_gamma", &c.hyper.m_gamma}, {"sigma_gamma", &c.hyper.sigma_gamma}, {"alpha_psi", &c.hyper.alpha_psi},
      {"beta_psi", &c.hyper.beta_psi}, {"eta_prime", &c.hyper.eta_prime}, {"phi_prime", &c.hyper.phi_prime},
      {"beta_phi", &c.hyper.beta_phi}, {"initial_factor_var", &c.hyper.initial_factor_var},
      {"nonsparse_shape", &c.hyper.nonsparse_shape}, {"nonsparse_rate", &c.hyper.nonsparse_rate},
      {"mh_step_phi", &c.sampler.mh_step_phi}, {"mh_step_psi", &c.sampler.mh_step_psi},
      {"prune_quantile", &c.prune_quantile}, {"prune_threshold", &c.prune_threshold}};
  const std::map<std::string, std::size_t*> counts{
      {"n_burnin", &c.sampler.n_burnin}, {"n_draws", &c.sampler.n_draws}, {"n_chains", &c.sampler.n_chains},
      {"thin", &c.sampler.thin}, {"latent_stride", &c.sampler.latent_stride}, {"threads", &c.sampler.threads}};
  if (auto it = reals.find(key); it != reals.end()) {
    *it->second = num();
  } else if (auto jt = counts.find(key); jt != counts.end()) {
    *jt->second = count();
  } else if (key == "seed") {
    c.sampler.seed = static_cast<std::uint64_t>(count());
  } else if (key == "extension") {
    c.sampler.extension = parse_extension(value);
  } else if (key == "adapt") {
    c.sampler.adapt = flag();
  } else if (key == "loading_prior") {
    if (value == "horseshoe") {
      c.hyper.loading_prior = LoadingPrior::horseshoe;
    } else if (value == "nonsparse") {
      c.hyper.loading_prior = LoadingPrior::nonsparse;
    } else {
      throw ParseError(file, line, "loading_prior must be horseshoe or nonsparse");
    }
  } else if (key == "dayoff_prior") {
    if (value == "gp") {
      c.hyper.dayoff_prior = DayoffPrior::gp;
    } else if (value == "flat") {
      c.hyper.dayoff_prior = DayoffPrior::flat;
    } else {
      throw ParseError(file, line, "dayoff_prior must be gp or flat");
    }
  } else {
    throw ParseError(file, line, "unknown config key '" + key + "'");
  }
}

inline RunConfig parse_config(std::istream& in, const std::string& file = "config", RunConfig base = {}) {
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(file, no, "expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError(file, no, "expected key = value");
    apply_config_value(base, key, value, file, no);
  }
  base.hyper.validate();
  base.sampler.validate();
  return base;
}

inline RunConfig read_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return parse_config(in, path.string(), std::move(base));
}

}  // namespace stfm

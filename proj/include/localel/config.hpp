#ifndef LOCALEL_CONFIG_HPP
#define LOCALEL_CONFIG_HPP

#include <algorithm>
#include <cerrno>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "localel/el_local.hpp"
#include "localel/error.hpp"
#include "localel/experiments.hpp"

namespace localel {

/// Plot-data settings used by `plotdata`.
struct PlotConfig {
  double profile_min = 1.5;
  double profile_max = 2.5;
  std::size_t profile_points = 201;
  std::size_t density_grid = 512;
  std::optional<double> density_bandwidth;  // nullopt = rule of thumb

  bool operator==(const PlotConfig&) const = default;
};

struct RunConfig {
  Experiment experiment = Experiment::Linear;
  LinearDGPConfig linear;
  CKLSConfig ckls;
  std::string custom_data;  // CSV with header y,x,z
  std::vector<MethodSpec> methods;
  std::size_t reps = 500;
  std::uint64_t seed = 1;
  LocalConfig local;
  SolverOptions solver;
  std::string output_dir = "out";
  PlotConfig plot;

  bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct ConfigKey {
  std::string name;      // section.key
  std::string expected;  // human-readable type
  std::function<void(RunConfig&, const std::string&)> set;  // throws std::invalid_argument
  std::function<std::string(const RunConfig&)> get;
};

inline double parse_real(const std::string& s) {
  const char* b = s.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(b, &end);
  if (end == b || *end != '\0' || errno == ERANGE) throw std::invalid_argument(s);
  return v;
}

template <class T>
T parse_integer(const std::string& s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw std::invalid_argument(s);
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument(s);
}

inline std::vector<MethodSpec> parse_methods(const std::string& s) {
  std::vector<MethodSpec> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(MethodSpec::parse(item));
    } catch (const Error&) {
      throw std::invalid_argument(item);
    }
  }
  return out;
}

template <class Get>
ConfigKey real_key(std::string name, Get field) {
  return {std::move(name), "a real number",
          [field](RunConfig& c, const std::string& v) { field(c) = parse_real(v); },
          [field](const RunConfig& c) { return format_double(field(const_cast<RunConfig&>(c))); }};
}

template <class T, class Get>
ConfigKey int_key(std::string name, Get field) {
  return {std::move(name), std::is_signed_v<T> ? "an integer" : "a non-negative integer",
          [field](RunConfig& c, const std::string& v) { field(c) = parse_integer<T>(v); },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <class Get>
ConfigKey bool_key(std::string name, Get field) {
  return {std::move(name), "true or false",
          [field](RunConfig& c, const std::string& v) { field(c) = parse_bool(v); },
          [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class Get>
ConfigKey string_key(std::string name, Get field) {
  return {std::move(name), "a string", [field](RunConfig& c, const std::string& v) { field(c) = v; },
          [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); }};
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back({"run.experiment", "one of linear, ckls, custom",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "linear") c.experiment = Experiment::Linear;
                   else if (v == "ckls") c.experiment = Experiment::Ckls;
                   else if (v == "custom") c.experiment = Experiment::Custom;
                   else throw std::invalid_argument(v);
                 },
                 [](const RunConfig& c) { return to_string(c.experiment); }});
    k.push_back({"run.methods", "a comma-separated list of ls, iv, gmm, el, local-el(ls|iv|el)",
                 [](RunConfig& c, const std::string& v) { c.methods = parse_methods(v); },
                 [](const RunConfig& c) {
                   std::string s;
                   for (const auto& m : c.methods) s += (s.empty() ? "" : ", ") + m.label();
                   return s;
                 }});
    k.push_back(int_key<std::size_t>("run.reps", [](RunConfig& c) -> std::size_t& { return c.reps; }));
    k.push_back(int_key<std::uint64_t>("run.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    k.push_back(string_key("run.output_dir", [](RunConfig& c) -> std::string& { return c.output_dir; }));

    k.push_back(int_key<std::size_t>("linear.n", [](RunConfig& c) -> std::size_t& { return c.linear.n; }));
    k.push_back(real_key("linear.theta0", [](RunConfig& c) -> double& { return c.linear.theta0; }));
    k.push_back(real_key("linear.pi", [](RunConfig& c) -> double& { return c.linear.pi; }));
    k.push_back(real_key("linear.R", [](RunConfig& c) -> double& { return c.linear.R; }));
    k.push_back(real_key("linear.c", [](RunConfig& c) -> double& { return c.linear.c; }));
    k.push_back(real_key("linear.L", [](RunConfig& c) -> double& { return c.linear.L; }));
    k.push_back(real_key("linear.z_mean", [](RunConfig& c) -> double& { return c.linear.z_mean; }));
    k.push_back(real_key("linear.z_noise_sd", [](RunConfig& c) -> double& { return c.linear.z_noise_sd; }));

    k.push_back(int_key<std::size_t>("ckls.T", [](RunConfig& c) -> std::size_t& { return c.ckls.T; }));
    k.push_back(real_key("ckls.alpha", [](RunConfig& c) -> double& { return c.ckls.alpha; }));
    k.push_back(real_key("ckls.beta", [](RunConfig& c) -> double& { return c.ckls.beta; }));
    k.push_back(real_key("ckls.gamma", [](RunConfig& c) -> double& { return c.ckls.gamma; }));
    k.push_back(real_key("ckls.sigma", [](RunConfig& c) -> double& { return c.ckls.sigma; }));
    k.push_back(real_key("ckls.r0", [](RunConfig& c) -> double& { return c.ckls.r0; }));
    k.push_back(real_key("ckls.dt", [](RunConfig& c) -> double& { return c.ckls.dt; }));
    k.push_back(real_key("ckls.c", [](RunConfig& c) -> double& { return c.ckls.c; }));
    k.push_back(real_key("ckls.L", [](RunConfig& c) -> double& { return c.ckls.L; }));
    k.push_back(bool_key("ckls.zero_shocks", [](RunConfig& c) -> bool& { return c.ckls.zero_shocks; }));

    k.push_back(string_key("custom.data", [](RunConfig& c) -> std::string& { return c.custom_data; }));

    k.push_back(real_key("local.delta_scale", [](RunConfig& c) -> double& { return c.local.delta_scale; }));
    k.push_back(real_key("local.delta_power", [](RunConfig& c) -> double& { return c.local.delta_power; }));
    k.push_back(real_key("local.direction_step", [](RunConfig& c) -> double& { return c.local.direction_step; }));
    k.push_back(real_key("local.sparsify_c", [](RunConfig& c) -> double& { return c.local.sparsify_c; }));
    k.push_back(real_key("local.tau_tol", [](RunConfig& c) -> double& { return c.local.tau_tol; }));
    k.push_back(int_key<int>("local.max_iter", [](RunConfig& c) -> int& { return c.local.max_iter; }));
    k.push_back({"local.hessian_mode", "definition or directional",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "definition") c.local.hessian_mode = HessianMode::Definition;
                   else if (v == "directional") c.local.hessian_mode = HessianMode::Directional;
                   else throw std::invalid_argument(v);
                 },
                 [](const RunConfig& c) {
                   return std::string(c.local.hessian_mode == HessianMode::Definition ? "definition" : "directional");
                 }});
    k.push_back(bool_key("local.bisection_direction", [](RunConfig& c) -> bool& { return c.local.bisection_direction; }));
    k.push_back(real_key("local.ridge", [](RunConfig& c) -> double& { return c.local.ridge; }));

    k.push_back(real_key("solver.tol", [](RunConfig& c) -> double& { return c.solver.tol; }));
    k.push_back(int_key<int>("solver.max_iter", [](RunConfig& c) -> int& { return c.solver.max_iter; }));
    k.push_back(real_key("solver.backtrack", [](RunConfig& c) -> double& { return c.solver.backtrack; }));
    k.push_back(real_key("solver.boundary_fraction", [](RunConfig& c) -> double& { return c.solver.boundary_fraction; }));

    k.push_back(real_key("plot.profile_min", [](RunConfig& c) -> double& { return c.plot.profile_min; }));
    k.push_back(real_key("plot.profile_max", [](RunConfig& c) -> double& { return c.plot.profile_max; }));
    k.push_back(int_key<std::size_t>("plot.profile_points", [](RunConfig& c) -> std::size_t& { return c.plot.profile_points; }));
    k.push_back(int_key<std::size_t>("plot.density_grid", [](RunConfig& c) -> std::size_t& { return c.plot.density_grid; }));
    k.push_back({"plot.density_bandwidth", "auto or a positive real",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "auto") c.plot.density_bandwidth.reset();
                   else c.plot.density_bandwidth = parse_real(v);
                 },
                 [](const RunConfig& c) {
                   return c.plot.density_bandwidth ? format_double(*c.plot.density_bandwidth) : std::string("auto");
                 }});
    return k;
  }();
  return keys;
}

inline const ConfigKey& find_key(const std::string& name, const std::string& where) {
  const auto& keys = config_keys();
  for (const auto& k : keys)
    if (k.name == name) return k;
  const ConfigKey* nearest = &keys.front();
  std::size_t best = edit_distance(name, nearest->name);
  for (const auto& k : keys) {
    const std::size_t dist = edit_distance(name, k.name);
    if (dist < best) {
      best = dist;
      nearest = &k;
    }
  }
  throw Error(ErrorKind::UnknownKey, where + ": unknown key '" + name + "'; nearest valid key is '" + nearest->name + "'");
}

inline void assign(RunConfig& cfg, const std::string& name, const std::string& value, const std::string& where) {
  const ConfigKey& key = find_key(name, where);
  try {
    key.set(cfg, value);
  } catch (const std::invalid_argument&) {
    throw Error(ErrorKind::TypeMismatch, where + ": key '" + name + "' expects " + key.expected + ", got '" + value + "'");
  } catch (const std::out_of_range&) {
    throw Error(ErrorKind::TypeMismatch, where + ": key '" + name + "' value '" + value + "' is out of range");
  }
}

}  // namespace detail

/// Parses `[section]` headers and `key = value` lines; `#` starts a comment.
/// Overrides have the form section.key=value and are applied after the file.
inline RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {},
                                   const std::string& source = "config") {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorKind::TypeMismatch, where + ": malformed section header '" + line + "'");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::TypeMismatch, where + ": expected key = value, got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    detail::assign(cfg, section.empty() ? key : section + "." + key, value, where);
  }
  for (std::size_t i = 0; i < overrides.size(); ++i) {
    const auto eq = overrides[i].find('=');
    const std::string where = "override #" + std::to_string(i + 1);
    if (eq == std::string::npos) throw Error(ErrorKind::TypeMismatch, where + ": expected section.key=value");
    detail::assign(cfg, detail::trim(overrides[i].substr(0, eq)), detail::trim(overrides[i].substr(eq + 1)), where);
  }
  return cfg;
}

inline RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), overrides, path);
}

/// Every key with its resolved value, grouped by section.
inline std::string serialize(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& k : detail::config_keys()) {
    const auto dot = k.name.find('.');
    const std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      out += (out.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += k.name.substr(dot + 1) + " = " + k.get(cfg) + "\n";
  }
  return out;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(serialize(cfg))));
  return buf;
}

/// Reads a y,x,z CSV (header required) into a linear sample.
inline Sample read_linear_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open data file " + path);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "y,x,z")
    throw Error(ErrorKind::Io, path + ": expected header 'y,x,z'");
  std::vector<double> data;
  for (int lineno = 2; std::getline(in, line); ++lineno) {
    if (detail::trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int cols = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        data.push_back(detail::parse_real(detail::trim(cell)));
      } catch (const std::invalid_argument&) {
        throw Error(ErrorKind::TypeMismatch, path + ":" + std::to_string(lineno) + ": not a number '" + cell + "'");
      }
      ++cols;
    }
    if (cols != 3) throw Error(ErrorKind::Io, path + ":" + std::to_string(lineno) + ": expected 3 columns");
  }
  const std::size_t n = data.size() / 3;
  return Sample(n, 3, std::move(data));
}

/// Resolves a RunConfig into the runner's configuration (loads custom data).
inline McConfig to_mc_config(const RunConfig& rc) {
  McConfig mc;
  mc.experiment = rc.experiment;
  mc.linear = rc.linear;
  mc.ckls = rc.ckls;
  mc.methods = rc.methods;
  mc.reps = rc.reps;
  mc.seed = rc.seed;
  mc.local = rc.local;
  mc.solver = rc.solver;
  if (rc.experiment == Experiment::Custom) {
    if (rc.custom_data.empty()) throw Error(ErrorKind::InvalidArgument, "custom experiment needs custom.data");
    if (rc.reps != 1) throw Error(ErrorKind::InvalidArgument, "custom experiment has a single fixed sample; set run.reps = 1");
    mc.custom_data = read_linear_csv(rc.custom_data);
  }
  mc.validate();
  return mc;
}

}  // namespace localel

#endif  // LOCALEL_CONFIG_HPP

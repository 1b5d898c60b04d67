#ifndef LOCALEL_COMMANDS_HPP
#define LOCALEL_COMMANDS_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "localel/config.hpp"
#include "localel/experiments.hpp"

namespace localel {

namespace fs = std::filesystem;

namespace detail {

inline std::string num(double v) { return format_double(v); }

/// Files written by one command. Unless commit() is reached, the destructor
/// deletes them so a failed command leaves no partial outputs.
class OutputSet {
 public:
  OutputSet(fs::path dir, std::string hash) : dir_(std::move(dir)), hash_(std::move(hash)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw Error(ErrorKind::Io, "cannot create output directory " + dir_.string());
  }
  OutputSet(const OutputSet&) = delete;
  OutputSet& operator=(const OutputSet&) = delete;
  ~OutputSet() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : written_) fs::remove(p, ec);
  }

  /// header plus rows; each row is already comma-joined.
  void write_csv(const std::string& name, const std::string& header, const std::vector<std::string>& rows) {
    std::string body = header + "\n";
    for (const auto& r : rows) body += r + "\n";
    write_file(name, body);
    entries_.push_back({{"file", name}, {"rows", rows.size()}, {"config_hash", hash_}});
  }

  void write_file(const std::string& name, const std::string& body) {
    const fs::path p = dir_ / name;
    written_.push_back(p);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << body;
    out.close();
    if (!out) throw Error(ErrorKind::Io, "cannot write " + p.string());
  }

  const nlohmann::ordered_json& entries() const { return entries_; }
  const fs::path& dir() const { return dir_; }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  std::string hash_;
  std::vector<fs::path> written_;
  nlohmann::ordered_json entries_ = nlohmann::ordered_json::array();
  bool committed_ = false;
};

inline nlohmann::ordered_json config_json(const RunConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& k : config_keys()) {
    const auto dot = k.name.find('.');
    j[k.name.substr(0, dot)][k.name.substr(dot + 1)] = k.get(cfg);
  }
  return j;
}

inline nlohmann::ordered_json manifest_head(const std::string& command, const RunConfig& cfg) {
  nlohmann::ordered_json m;
  m["command"] = command;
  m["seed"] = cfg.seed;
  m["config_hash"] = config_hash(cfg);
  m["config"] = config_json(cfg);
  return m;
}

inline void finish(OutputSet& out, nlohmann::ordered_json manifest, const std::string& name) {
  manifest["outputs"] = out.entries();
  out.write_file(name, manifest.dump(2) + "\n");
  out.commit();
}

inline std::string metrics_line(const MetricsRow& r) {
  return r.method + "," + num(r.mean) + "," + num(r.median) + "," + num(r.mse) + "," + num(r.rmse) + "," + num(r.iqr) +
         "," + num(r.mad) + "," + std::to_string(r.reps_used);
}

/// Lower-case alphanumerics; everything else becomes '_' (local-el(ls) -> local-el_ls).
inline std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-';
    if (keep) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (!out.empty() && out.back() != '_') out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

}  // namespace detail

inline constexpr const char* kMetricsHeader = "method,mean,median,mse,rmse,iqr,mad,reps_used";

/// Monte Carlo study: metrics.csv, estimates.csv (and metrics_by_param.csv
/// for multi-parameter models) plus run_manifest.json in out_dir.
inline McResult cmd_run(const RunConfig& cfg, const fs::path& out_dir, std::size_t workers = 1) {
  const McConfig mc = to_mc_config(cfg);
  const McResult res = run_mc(mc, workers);

  detail::OutputSet out(out_dir, config_hash(cfg));
  std::vector<std::string> rows;
  for (const auto& r : res.metrics) rows.push_back(detail::metrics_line(r));
  out.write_csv("metrics.csv", kMetricsHeader, rows);
  if (!res.breakdown.empty()) {
    rows.clear();
    for (const auto& r : res.breakdown) rows.push_back(detail::metrics_line(r));
    out.write_csv("metrics_by_param.csv", kMetricsHeader, rows);
  }
  rows.clear();
  rows.reserve(res.estimates.size());
  for (const auto& e : res.estimates)
    rows.push_back(std::to_string(e.replication) + "," + e.method + "," + std::to_string(e.param_index) + "," +
                   detail::num(e.estimate));
  out.write_csv("estimates.csv", "replication,method,param_index,estimate", rows);

  auto manifest = detail::manifest_head("run", cfg);
  manifest["parameters"] = mc.param_names();
  manifest["failures"] = res.failures;
  manifest["local_not_converged"] = res.local_not_converged;
  manifest["first_error"] = res.first_error;
  detail::finish(out, std::move(manifest), "run_manifest.json");
  return res;
}

/// Local EL iteration trace on the first replication of the configured seed,
/// for the first local-el method listed.
inline LocalFit cmd_trace(const RunConfig& cfg, const fs::path& out_dir) {
  const McConfig mc = to_mc_config(cfg);
  const MethodSpec* method = nullptr;
  for (const auto& m : mc.methods)
    if (m.kind == MethodKind::LocalEL) {
      method = &m;
      break;
    }
  if (!method) throw Error(ErrorKind::InvalidArgument, "trace needs a local-el method in run.methods");

  const MomentModel model = experiment_model(mc);
  const Sample sample = replication_sample(mc, 0);
  ReplicationRunner runner(mc, model, sample);
  const MethodOutcome outcome = runner.run(*method);
  if (!runner.last_fit()) throw Error(ErrorKind::InvalidArgument, "trace could not start: " + outcome.error);
  const LocalFit& fit = *runner.last_fit();

  const auto names = mc.param_names();
  std::string header = "iter,lambda_norm,tau_norm";
  if (names.size() == 1) header += ",estimate";
  else
    for (const auto& n : names) header += ",estimate_" + n;
  std::vector<std::string> rows;
  for (const auto& t : fit.trace) {
    std::string r = std::to_string(t.iteration) + "," + detail::num(t.lambda_norm) + "," + detail::num(t.tau_norm);
    for (double v : t.estimate) r += "," + detail::num(v);
    rows.push_back(std::move(r));
  }

  detail::OutputSet out(out_dir, config_hash(cfg));
  out.write_csv("trace.csv", header, rows);
  auto manifest = detail::manifest_head("trace", cfg);
  manifest["method"] = method->label();
  manifest["replication"] = 0;
  manifest["converged"] = fit.converged;
  manifest["iterations"] = fit.trace.size();
  manifest["selected_iteration"] = fit.selected_iteration;
  manifest["theta_star"] = fit.theta_star;
  manifest["estimate"] = fit.T;
  manifest["failure"] = fit.failure;
  detail::finish(out, std::move(manifest), "trace_manifest.json");
  return fit;
}

enum class PlotKind { QQ, Density, Profile };

inline PlotKind parse_plot_kind(const std::string& s) {
  if (s == "qq") return PlotKind::QQ;
  if (s == "density") return PlotKind::Density;
  if (s == "profile") return PlotKind::Profile;
  throw Error(ErrorKind::InvalidArgument, "plot kind must be qq, density or profile, got '" + s + "'");
}

namespace detail {

/// method -> param_index -> estimates, in file order.
inline std::map<std::string, std::map<std::size_t, Vector>> read_estimates(const fs::path& path) {
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorKind::MissingEstimates,
                path.string() + " not found; run `localel run` with the same --config and --out first");
  std::string line;
  if (!std::getline(in, line) || trim(line) != "replication,method,param_index,estimate")
    throw Error(ErrorKind::MissingEstimates, path.string() + " has an unexpected header; regenerate it with `localel run`");
  std::map<std::string, std::map<std::size_t, Vector>> out;
  for (int lineno = 2; std::getline(in, line); ++lineno) {
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) throw Error(ErrorKind::Io, path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
    try {
      out[cells[1]][parse_integer<std::size_t>(cells[2])].push_back(parse_real(cells[3]));
    } catch (const std::invalid_argument&) {
      throw Error(ErrorKind::TypeMismatch, path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
  }
  if (out.empty()) throw Error(ErrorKind::MissingEstimates, path.string() + " has no estimates; rerun `localel run`");
  return out;
}

}  // namespace detail

/// Plot data from out_dir/estimates.csv (qq, density) or from a freshly
/// generated sample (profile). Returns the files written.
inline std::vector<std::string> cmd_plotdata(const RunConfig& cfg, PlotKind kind, const fs::path& out_dir) {
  detail::OutputSet out(out_dir, config_hash(cfg));
  std::vector<std::string> files;
  auto manifest = detail::manifest_head("plotdata", cfg);

  if (kind == PlotKind::Profile) {
    const McConfig mc = to_mc_config(cfg);
    if (!mc.linear_family()) throw Error(ErrorKind::InvalidArgument, "profile needs a scalar-parameter experiment");
    const std::size_t m = cfg.plot.profile_points;
    if (m < 2 || !(cfg.plot.profile_max > cfg.plot.profile_min))
      throw Error(ErrorKind::InvalidArgument, "profile grid needs profile_max > profile_min and at least 2 points");
    Vector grid(m);
    for (std::size_t i = 0; i < m; ++i)
      grid[i] = cfg.plot.profile_min +
                (cfg.plot.profile_max - cfg.plot.profile_min) * static_cast<double>(i) / static_cast<double>(m - 1);

    const MomentModel model = experiment_model(mc);
    std::vector<std::vector<ProfilePoint>> curves;
    std::string header = "theta";
    if (mc.experiment == Experiment::Custom) {
      curves.push_back(emit_likelihood_profile(model, *mc.custom_data, grid, mc.solver));
      header += ",data";
    } else {
      // Same seed and replication with the contamination switched off.
      McConfig clean = mc;
      clean.linear.c = 0.0;
      curves.push_back(emit_likelihood_profile(model, replication_sample(clean, 0), grid, mc.solver));
      curves.push_back(emit_likelihood_profile(model, replication_sample(mc, 0), grid, mc.solver));
      header += ",clean,contaminated";
    }
    std::vector<std::string> rows;
    for (std::size_t i = 0; i < m; ++i) {
      std::string r = detail::num(grid[i]);
      for (const auto& c : curves) r += "," + detail::num(c[i].value);
      rows.push_back(std::move(r));
    }
    out.write_csv("profile.csv", header, rows);
    files.push_back("profile.csv");
  } else {
    const auto est = detail::read_estimates(out_dir / "estimates.csv");
    const std::vector<std::string> names = to_mc_config(cfg).param_names();
    const std::string prefix = kind == PlotKind::QQ ? "qq_" : "density_";
    for (const auto& [method, by_param] : est) {
      for (const auto& [j, values] : by_param) {
        std::string name = prefix + detail::sanitize(method);
        if (by_param.size() > 1 || names.size() > 1) name += "_" + (j < names.size() ? names[j] : std::to_string(j));
        name += ".csv";
        std::vector<std::string> rows;
        if (kind == PlotKind::QQ) {
          for (const auto& p : emit_qq(values)) rows.push_back(detail::num(p.theoretical) + "," + detail::num(p.empirical));
          out.write_csv(name, "theoretical,empirical", rows);
        } else {
          for (const auto& p : emit_density(values, cfg.plot.density_grid, cfg.plot.density_bandwidth))
            rows.push_back(detail::num(p.x) + "," + detail::num(p.density));
          out.write_csv(name, "x,density", rows);
        }
        files.push_back(name);
      }
    }
  }
  const std::string kind_name = kind == PlotKind::QQ ? "qq" : kind == PlotKind::Density ? "density" : "profile";
  manifest["kind"] = kind_name;
  detail::finish(out, std::move(manifest), "plotdata_" + kind_name + "_manifest.json");
  return files;
}

}  // namespace localel

#endif  // LOCALEL_COMMANDS_HPP

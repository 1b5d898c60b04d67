#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "localel/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::string> sets;
  std::string kind;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "configuration file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "output directory (default: run.output_dir)");
  sub->add_option("--seed", c.seed, "override run.seed");
  sub->add_option("--reps", c.reps, "override run.reps");
  sub->add_option("--workers", c.workers, "worker threads for the Monte Carlo loop")->check(CLI::PositiveNumber);
  sub->add_option("--set", c.sets, "section.key=value override (repeatable)")->take_all();
}

localel::RunConfig resolve(const Common& c) {
  std::vector<std::string> overrides = c.sets;
  if (c.seed) overrides.push_back("run.seed=" + std::to_string(*c.seed));
  if (c.reps) overrides.push_back("run.reps=" + std::to_string(*c.reps));
  return localel::parse_config(c.config, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Empirical likelihood and local one-step estimation experiments"};
  app.require_subcommand(1);
  Common c;
  CLI::App* run = app.add_subcommand("run", "Monte Carlo study: metrics.csv and estimates.csv");
  CLI::App* trace = app.add_subcommand("trace", "local EL iteration trace on one sample: trace.csv");
  CLI::App* plot = app.add_subcommand("plotdata", "QQ, density or likelihood-profile data");
  for (CLI::App* s : {run, trace, plot}) add_common(s, c);
  plot->add_option("--kind", c.kind, "qq, density or profile")->required()->check(CLI::IsMember({"qq", "density", "profile"}));
  CLI11_PARSE(app, argc, argv);

  try {
    const localel::RunConfig cfg = resolve(c);
    const std::filesystem::path out = c.out.empty() ? cfg.output_dir : c.out;
    if (run->parsed()) {
      const localel::McResult res = localel::cmd_run(cfg, out, c.workers);
      for (const auto& m : res.metrics)
        std::printf("%-14s mse %.6g  rmse %.6g  reps %zu\n", m.method.c_str(), m.mse, m.rmse, m.reps_used);
      for (const auto& [method, n] : res.failures)
        if (n) std::fprintf(stderr, "%s failed in %zu replications (first: %s)\n", method.c_str(), n,
                            res.first_error.at(method).c_str());
    } else if (trace->parsed()) {
      const localel::LocalFit fit = localel::cmd_trace(cfg, out);
      std::printf("%zu iterations, converged=%s\n", fit.trace.size(), fit.converged ? "true" : "false");
    } else {
      for (const auto& f : localel::cmd_plotdata(cfg, localel::parse_plot_kind(c.kind), out))
        std::printf("%s\n", (out / f).string().c_str());
    }
  } catch (const localel::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}

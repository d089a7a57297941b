// Command-line front end: `cmr estimate` and `cmr simulate`.
//
// Exit codes: 0 success, 1 unexpected error, 2 configuration error,
// 3 data error, 4 estimation failure (any requested method failed).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmr/errors.hpp"
#include "cmr/io.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitEstimation = 4;

// Flag values collected before they are merged over the config file.
struct Flags {
  std::string config;
  std::optional<std::string> input, exposure, outcome, covariates, methods, weight_treatment, family, marginal_family,
      weight_covariates, outcome_covariates, susceptibility_covariates, output, design, misspec, figure, histogram;
  bool heaping = false;
  std::optional<std::int64_t> eta;
  std::optional<std::vector<double>> truncation;
  std::optional<double> ci_level;
  std::optional<std::uint64_t> seed;
  std::optional<long> n;
  std::optional<int> reps;
  std::optional<unsigned> threads;
};

nlohmann::json overrides(const Flags& f, const std::string& command) {
  nlohmann::json j = nlohmann::json::object();
  j["command"] = command;
  const auto put = [&](const char* key, const auto& v) {
    if (v) j[key] = *v;
  };
  put("input", f.input);
  put("exposure", f.exposure);
  put("outcome", f.outcome);
  put("covariates", f.covariates);
  put("methods", f.methods);
  put("weight_treatment", f.weight_treatment);
  put("family", f.family);
  put("marginal_family", f.marginal_family);
  put("weight_covariates", f.weight_covariates);
  put("outcome_covariates", f.outcome_covariates);
  put("susceptibility_covariates", f.susceptibility_covariates);
  put("output", f.output);
  put("misspec", f.misspec);
  put("figure", f.figure);
  put("histogram", f.histogram);
  put("truncation", f.truncation);
  put("ci_level", f.ci_level);
  put("seed", f.seed);
  put("n", f.n);
  put("reps", f.reps);
  put("threads", f.threads);
  if (f.design) j["design"] = *f.design;
  if (f.heaping || f.eta) {
    j["heaping"] = nlohmann::json::object();
    if (f.heaping) j["heaping"]["enabled"] = true;
    if (f.eta) j["heaping"]["eta"] = *f.eta;
  }
  return j;
}

cmr::RunConfig resolve(const Flags& f, const std::string& command) {
  cmr::RunConfig base;
  if (!f.config.empty()) base = cmr::load_config(f.config, base);
  nlohmann::json j = overrides(f, command);
  // In simulate, --heaping selects the heaped-outcome design.
  if (command == "simulate" && f.heaping && !f.design) j["design"] = "heaping";
  cmr::RunConfig c = cmr::parse_config(j, base);
  c.validate();
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw cmr::ConfigError("cannot write '" + path + "'");
  out << text;
}

int estimate(const cmr::RunConfig& c) {
  const cmr::Dataset data = cmr::ingest_csv(c.input, c.columns);
  const cmr::EstimateRun run = cmr::run_estimate(c, data);
  const std::string text = run.report.dump(2) + "\n";
  if (c.output.empty())
    std::cout << text;
  else
    write_text(c.output, text);
  return run.all_ok ? 0 : kExitEstimation;
}

int simulate(const cmr::RunConfig& c) {
  const auto studies = cmr::run_simulate(c, [](const std::string& line) { std::cerr << line << std::endl; });
  if (c.output.empty()) {
    cmr::write_metrics_csv(std::cout, studies);
  } else {
    std::ofstream out(c.output);
    if (!out) throw cmr::ConfigError("cannot write '" + c.output + "'");
    cmr::write_metrics_csv(out, studies);
  }
  if (!c.figure.empty()) write_text(c.figure, cmr::metrics_svg(studies));
  if (!c.histogram.empty()) {
    cmr::HeapingOptions opts;
    if (c.eta) opts.eta = *c.eta;
    const cmr::SimData sim = cmr::gen_heaping(c.n, cmr::replication_seed(c.seed, 0), opts);
    write_text(c.histogram, cmr::heaping_histogram_svg(sim.y_true, sim.data.outcome));
  }
  return 0;
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  app->add_option("--methods", f.methods, "comma-separated: IPTW,PG,DR,IPTW_heap,PG_heap,DR_heap");
  app->add_option("--weight-treatment", f.weight_treatment, "comma-separated: fixed,estimated");
  app->add_option("--family", f.family, "poisson, nb, zip, zinb (estimate also accepts auto)");
  app->add_flag("--heaping", f.heaping, "model (or simulate) heaped reporting");
  app->add_option("--eta", f.eta, "heaping grid width");
  app->add_option("--ci-level", f.ci_level, "Wald interval level (default 0.95)");
  app->add_option("--truncation", f.truncation, "weight truncation percentiles lo hi, e.g. 0.01 0.99")
      ->expected(2);
  app->add_option("--output", f.output, "output path (default stdout)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal mean ratio estimation for count outcomes", "cmr"};
  app.set_version_flag("--version", cmr::kVersion);
  app.require_subcommand(1);

  Flags f;
  CLI::App* est = app.add_subcommand("estimate", "estimate the CMR from a CSV file");
  add_common(est, f);
  est->add_option("--input", f.input, "input CSV");
  est->add_option("--exposure", f.exposure, "exposure column (default A)");
  est->add_option("--outcome", f.outcome, "outcome column (default Y)");
  est->add_option("--covariates", f.covariates, "comma-separated columns to load (default all others)");
  est->add_option("--weight-covariates", f.weight_covariates, "propensity model terms (default all covariates)");
  est->add_option("--outcome-covariates", f.outcome_covariates, "outcome model terms (default all covariates)");
  est->add_option("--susceptibility-covariates", f.susceptibility_covariates, "zero-inflation terms");
  est->add_option("--marginal-family", f.marginal_family, "family of the heaped marginal model (default nb)");

  CLI::App* sim = app.add_subcommand("simulate", "run a Monte Carlo study and write metrics CSV");
  add_common(sim, f);
  sim->add_option("--design", f.design, "partners or heaping");
  sim->add_option("--misspec", f.misspec, "comma-separated: none,MW,MO,MB");
  sim->add_option("--seed", f.seed, "master seed");
  sim->add_option("--n", f.n, "sample size per replication");
  sim->add_option("--reps", f.reps, "number of replications");
  sim->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  sim->add_option("--figure", f.figure, "bias / coverage SVG path");
  sim->add_option("--histogram", f.histogram, "true vs reported count histogram SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  const std::string command = est->parsed() ? "estimate" : "simulate";
  try {
    const cmr::RunConfig c = resolve(f, command);
    return command == "estimate" ? estimate(c) : simulate(c);
  } catch (const cmr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const cmr::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const cmr::EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << '\n';
    return kExitEstimation;
  } catch (const cmr::FitInfeasible& e) {
    std::cerr << "estimation error: " << e.what() << '\n';
    return kExitEstimation;
  } catch (const cmr::DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

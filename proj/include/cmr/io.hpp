#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cmr/analysis.hpp"
#include "cmr/dataset.hpp"
#include "cmr/simulate.hpp"

namespace cmr {

inline constexpr const char* kVersion = "0.1.0";

/// Which CSV columns hold the exposure, the outcome and the covariates.
/// An empty covariate list loads every other column.
struct CsvColumns {
  std::string exposure = "A";
  std::string outcome = "Y";
  std::vector<std::string> covariates;
};

/// Reads a headered CSV. Rows are numbered from 1 after the header in
/// diagnostics. Throws DataError on an empty file, unknown columns, missing
/// or malformed fields, a non-binary exposure or a negative / non-integer
/// outcome.
Dataset read_csv(std::istream& in, const CsvColumns& columns = {});
Dataset ingest_csv(const std::string& path, const CsvColumns& columns = {});

/// Writes exposure, outcome and covariates (then `extra` columns) with
/// round-trip precision.
void write_csv(std::ostream& out, const Dataset& data,
               const std::vector<std::pair<std::string, Eigen::VectorXd>>& extra = {});

/// Run configuration shared by the config file and the command line.
/// Defaults: ci_level 0.95, weight treatment estimated, heaping off.
struct RunConfig {
  std::string command = "estimate";
  // estimate
  std::string input;
  CsvColumns columns;
  std::vector<Method> methods{Method::IPTW, Method::PG, Method::DR};
  std::vector<WeightTreatment> weight_treatments{WeightTreatment::Estimated};
  std::string family = "poisson";  ///< a family name or "auto"
  Family marginal_family = Family::NegBin;
  std::vector<std::string> weight_covariates;
  std::vector<std::string> outcome_covariates;
  std::vector<std::string> susceptibility_covariates;
  bool heaping = false;
  std::optional<std::int64_t> eta;
  std::optional<std::pair<double, double>> truncation;
  double ci_level = 0.95;
  std::string output;  ///< report / metrics path; empty = stdout
  // simulate
  std::uint64_t seed = 20240601;
  SimDesign design = SimDesign::Partners;
  std::vector<Family> sim_families{Family::Poisson};
  std::vector<Misspec> misspecs{Misspec::None};
  Eigen::Index n = 800;
  int reps = 2000;
  unsigned threads = 0;
  bool methods_given = false;
  std::string figure;     ///< bias / coverage SVG path
  std::string histogram;  ///< true vs heaped histogram SVG path

  /// Checks cross-field rules; throws ConfigError.
  void validate() const;
};

/// Applies a JSON config object on top of `base`; unknown keys are rejected.
RunConfig parse_config(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});
nlohmann::json config_to_json(const RunConfig& config);

AnalysisSpec analysis_spec(const RunConfig& config, Family outcome_family);

/// Result of `run_estimate`: the JSON report and whether every method ran.
struct EstimateRun {
  nlohmann::json report;
  bool all_ok = true;
};

/// Fits everything the config asks for on `data` and assembles the report.
/// Empty weight / outcome covariate lists mean every covariate column.
EstimateRun run_estimate(const RunConfig& config, const Dataset& data);

/// Runs one study per (family, misspec) in the config.
std::vector<StudyResult> run_simulate(const RunConfig& config,
                                      const std::function<void(const std::string&)>& log = {});

/// Bias and coverage panels, one per metric, rows grouped by scenario.
std::string metrics_svg(const std::vector<StudyResult>& studies,
                        const std::vector<std::string>& metrics = {"bias_pct", "coverage_pct"});
/// Side-by-side frequency bars of true and reported counts.
std::string heaping_histogram_svg(const CountVector& true_counts, const CountVector& reported);

}  // namespace cmr

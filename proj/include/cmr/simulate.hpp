#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cmr/analysis.hpp"
#include "cmr/dataset.hpp"
#include "cmr/model_core.hpp"

namespace cmr {

/// The two data-generating designs: a confounded count outcome with four
/// possible families ("partners"), and a Poisson outcome reported with
/// rounding to a grid ("heaping").
enum class SimDesign { Partners, Heaping };
enum class Misspec { None, MW, MO, MB };
enum class ModelRole { Weight, Outcome };

std::string_view design_name(SimDesign d) noexcept;
SimDesign parse_design(std::string_view s);
std::string_view misspec_name(Misspec m) noexcept;
Misspec parse_misspec(std::string_view s);
ModelRole parse_role(std::string_view s);

inline constexpr double kPartnersLogCmr = 0.5;
inline constexpr double kHeapingLogCmr = 0.25;

/// A generated sample together with what is normally unobserved.
struct SimData {
  Dataset data;
  CountVector y0, y1;  ///< potential outcomes (true counts)
  CountVector y_true;  ///< realized true count; differs from data.outcome only under heaping
  Eigen::VectorXd exact_report;  ///< Delta (heaping design), else empty
  double true_cmr = 0.0;
};

struct PartnersOptions {
  /// Forces nu = 0 in the zero-inflated families.
  bool no_zero_inflation = false;
};

struct HeapingOptions {
  std::int64_t eta = 10;
  double pi = 0.4;
};

SimData gen_partners(Eigen::Index n, Family family, std::uint64_t seed, const PartnersOptions& options = {});
SimData gen_heaping(Eigen::Index n, std::uint64_t seed, const HeapingOptions& options = {});

/// Covariate design of the weight or outcome model under a misspecification regime.
DesignSpec apply_misspec(SimDesign design, Family family, Misspec misspec, ModelRole role);

struct SimScenario {
  SimDesign design = SimDesign::Partners;
  Family family = Family::Poisson;
  Eigen::Index n = 800;
  int reps = 2000;
  Misspec misspec = Misspec::None;
  std::uint64_t base_seed = 20240601;
  /// Empty means the default rows for the design and regime.
  std::vector<MethodRequest> requests;
  HeapingOptions heaping;
  double ci_level = 0.95;
  unsigned threads = 0;  ///< 0 = hardware concurrency
};

std::vector<MethodRequest> default_requests(SimDesign design, Misspec misspec);

/// AnalysisSpec the harness applies to every replication of `scenario`.
AnalysisSpec scenario_analysis(const SimScenario& scenario);

/// Random stream seed of replication r.
std::uint64_t replication_seed(std::uint64_t base_seed, int r) noexcept;
SimData generate(const SimScenario& scenario, int r);

struct SimMetrics {
  MethodRequest request;
  double bias_pct = 0.0;
  double mse = 0.0;  ///< median estimated standard error
  std::optional<double> ese;  ///< SD of point estimates; absent for one replication
  std::optional<double> ser;  ///< mse / ese
  double coverage_pct = 0.0;
  double nonconv_pct = 0.0;
  int reps_used = 0;
};

/// Per-replication estimates of one (method, treatment) row.
struct ReplicationEstimates {
  MethodRequest request;
  std::vector<std::optional<CmrEstimate>> estimates;  ///< indexed by replication; nullopt = failed
};

SimMetrics compute_metrics(const ReplicationEstimates& reps, double true_cmr);

struct StudyResult {
  SimScenario scenario;
  double true_cmr = 0.0;
  std::vector<ReplicationEstimates> replications;
  std::vector<SimMetrics> metrics;
};

/// Runs every replication (in parallel, results merged by index) and
/// summarizes each requested row. Failures count as non-convergence.
StudyResult run_study(const SimScenario& scenario, const std::function<void(int done, int total)>& progress = {});

void write_metrics_csv(std::ostream& os, const std::vector<StudyResult>& studies);

}  // namespace cmr

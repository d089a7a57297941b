#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmr/dataset.hpp"
#include "cmr/estimators.hpp"
#include "cmr/inference.hpp"
#include "cmr/mle.hpp"

namespace cmr {

struct MethodRequest {
  Method method = Method::IPTW;
  WeightTreatment treatment = WeightTreatment::Estimated;

  friend bool operator==(const MethodRequest&, const MethodRequest&) = default;
};

/// Everything needed to run a set of estimators on one dataset.
struct AnalysisSpec {
  std::vector<MethodRequest> requests;
  Family outcome_family = Family::Poisson;
  /// Family of the heaped marginal model behind IPTW_heap.
  Family marginal_family = Family::NegBin;
  DesignSpec weight_design;
  DesignSpec outcome_design;
  std::optional<HeapingModel> heaping;
  double ci_level = 0.95;
  std::optional<std::pair<double, double>> truncation;
  OptimizerOptions optimizer;
};

struct MethodResult {
  MethodRequest request;
  bool ok = false;
  CmrEstimate estimate;
  std::string error;
};

/// Diagnostics of one fitted nuisance model.
struct ModelSummary {
  std::string role;
  std::string family;
  FitResult fit;
  std::optional<double> aic;
};

struct AnalysisResult {
  std::vector<MethodResult> methods;
  std::vector<ModelSummary> models;

  const MethodResult* find(Method m, WeightTreatment t) const;
};

/// Fits the nuisance models the requests need (each once), runs the
/// estimators and attaches sandwich SEs and Wald intervals. A failing method
/// yields a record with `ok == false`; other methods still run.
AnalysisResult run_analysis(const Dataset& data, const AnalysisSpec& spec);

/// Expands methods x treatments; PG variants get the n/a treatment once.
std::vector<MethodRequest> expand_requests(const std::vector<Method>& methods,
                                           const std::vector<WeightTreatment>& treatments);

struct FamilyComparison {
  Family best = Family::Poisson;
  std::vector<std::pair<Family, FitResult>> fits;
  std::vector<std::optional<double>> aic;
};

/// Fits all four families with `design` and picks the smallest AIC among
/// converged fits. Throws EstimationError if none converged.
FamilyComparison compare_families(const Dataset& data, const DesignSpec& design, const OptimizerOptions& options = {});

}  // namespace cmr

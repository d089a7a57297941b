#pragma once

#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cmr/dataset.hpp"
#include "cmr/mle.hpp"

namespace cmr {

enum class Method { IPTW, PG, DR, IPTW_heap, PG_heap, DR_heap };
enum class WeightTreatment { Fixed, Estimated, NotApplicable };

std::string_view method_name(Method m) noexcept;
Method parse_method(std::string_view s);
std::string_view weight_treatment_name(WeightTreatment w) noexcept;
WeightTreatment parse_weight_treatment(std::string_view s);
constexpr bool is_heaped(Method m) noexcept {
  return m == Method::IPTW_heap || m == Method::PG_heap || m == Method::DR_heap;
}

/// Name of the signed-weight covariate added to heaped doubly robust outcome models.
inline constexpr std::string_view kSignedWeightColumn = "r_hat";

/// Fitted propensity model and the derived inverse-probability weights.
///
/// `weight_bounds`, when set, clips W to [lo, hi]; the same bounds are
/// applied by `weights_at` so estimated-weight stacks stay consistent.
struct PropensityFit {
  FitResult fit;
  Eigen::MatrixXd design;
  Eigen::VectorXd exposure;
  Eigen::VectorXd e;
  Eigen::VectorXd W;
  Eigen::VectorXd r_hat;
  std::optional<std::pair<double, double>> weight_bounds;
  std::vector<std::string> warnings;

  /// W_i(alpha) = A_i / e_i + (1 - A_i) / (1 - e_i) at another coefficient vector.
  Eigen::VectorXd weights_at(const Eigen::VectorXd& alpha) const;
  bool estimated() const noexcept { return design.cols() > 0; }
};

/// Fits logit(e) = L alpha. `truncate_percentiles` = (lo, hi) clips the
/// weights to those empirical quantiles; off by default.
PropensityFit fit_propensity(const Dataset& data, const DesignSpec& covariates,
                             std::optional<std::pair<double, double>> truncate_percentiles = std::nullopt,
                             const OptimizerOptions& options = {});

/// Propensity scores treated as known constants.
PropensityFit known_propensity(const Dataset& data, const Eigen::VectorXd& e);

Eigen::VectorXd iptw_weights(const Eigen::VectorXd& exposure, const Eigen::VectorXd& e);

/// Fitted outcome model plus the design matrices with exposure set to 1 and 0.
struct OutcomeFit {
  CountModel model;
  FitResult fit;
  DesignSpec spec;
  DesignMatrices exposed;
  DesignMatrices unexposed;
};

OutcomeFit fit_outcome(const Dataset& data, Family family, const DesignSpec& design,
                       std::optional<HeapingModel> heaping = std::nullopt,
                       const std::optional<Eigen::VectorXd>& weights = std::nullopt,
                       const OptimizerOptions& options = {});

/// Wraps an externally produced parameter vector as an outcome fit.
OutcomeFit outcome_from_estimates(const Dataset& data, Family family, const DesignSpec& design,
                                  const Eigen::VectorXd& estimates, std::optional<HeapingModel> heaping = std::nullopt);

struct CmrEstimate {
  double lambda1 = 0.0;
  double lambda0 = 0.0;
  double cmr = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  Method method = Method::IPTW;
  WeightTreatment weight_treatment = WeightTreatment::NotApplicable;
  std::vector<std::string> warnings;
};

/// Ratio of Hajek-weighted arm means. The standard error is left unset;
/// see inference.hpp.
CmrEstimate cmr_iptw(const Dataset& data, const PropensityFit& prop);

/// Parametric g-formula: mean predicted counts with exposure set to 1 and 0.
CmrEstimate cmr_pg(const OutcomeFit& outcome);

/// Augmented IPW estimator of both counterfactual means.
CmrEstimate cmr_dr(const Dataset& data, const PropensityFit& prop, const OutcomeFit& outcome);

/// Weighted heaped-likelihood fit of log E(Y^a) = delta0 + delta1 a.
OutcomeFit fit_marginal_heaped(const Dataset& data, const PropensityFit& prop, Family family,
                               const HeapingModel& heap, const OptimizerOptions& options = {});
CmrEstimate cmr_iptw_heap(const OutcomeFit& marginal);
CmrEstimate cmr_iptw_heap(const Dataset& data, const PropensityFit& prop, Family family, const HeapingModel& heap);

CmrEstimate cmr_pg_heap(const OutcomeFit& heaped_outcome);
CmrEstimate cmr_pg_heap(const Dataset& data, Family family, const DesignSpec& design, const HeapingModel& heap);

/// `design` with the signed weight r_hat = A W - (1 - A) W appended to the
/// count part as a fixed covariate.
DesignSpec with_signed_weight(const DesignSpec& design, const Eigen::VectorXd& r_hat);

/// Signed weight a subject would carry at exposure level `a`: 1 / e for a = 1,
/// -1 / (1 - e) for a = 0, clipped to `bounds` in absolute value.
Eigen::VectorXd counterfactual_signed_weight(const Eigen::VectorXd& e, int a,
                                             const std::optional<std::pair<double, double>>& bounds = std::nullopt);

/// Heaped outcome fit on (L, A, r_hat). The counterfactual designs carry the
/// signed weight at the counterfactual exposure, so predictions at A = a use
/// r = 1 / e or -1 / (1 - e) rather than the observed r_hat.
OutcomeFit fit_dr_heap_outcome(const Dataset& data, const PropensityFit& prop, Family family,
                               const DesignSpec& design, const HeapingModel& heap, const OptimizerOptions& options = {});
CmrEstimate cmr_dr_heap(const OutcomeFit& augmented_outcome);
CmrEstimate cmr_dr_heap(const Dataset& data, const PropensityFit& prop, Family family, const DesignSpec& design,
                        const HeapingModel& heap);

}  // namespace cmr

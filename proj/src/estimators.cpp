#include "cmr/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "cmr/errors.hpp"

namespace cmr {

std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::IPTW: return "IPTW";
    case Method::PG: return "PG";
    case Method::DR: return "DR";
    case Method::IPTW_heap: return "IPTW_heap";
    case Method::PG_heap: return "PG_heap";
    case Method::DR_heap: return "DR_heap";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  for (Method m : {Method::IPTW, Method::PG, Method::DR, Method::IPTW_heap, Method::PG_heap, Method::DR_heap}) {
    if (s == method_name(m)) return m;
  }
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

std::string_view weight_treatment_name(WeightTreatment w) noexcept {
  switch (w) {
    case WeightTreatment::Fixed: return "fixed";
    case WeightTreatment::Estimated: return "estimated";
    case WeightTreatment::NotApplicable: return "n/a";
  }
  return "?";
}

WeightTreatment parse_weight_treatment(std::string_view s) {
  if (s == "fixed") return WeightTreatment::Fixed;
  if (s == "estimated") return WeightTreatment::Estimated;
  if (s == "n/a") return WeightTreatment::NotApplicable;
  throw ConfigError("unknown weight treatment '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Propensity

namespace {

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void finish_propensity(PropensityFit& prop) {
  prop.W = iptw_weights(prop.exposure, prop.e);
  if (prop.weight_bounds) prop.W = prop.W.cwiseMax(prop.weight_bounds->first).cwiseMin(prop.weight_bounds->second);
  prop.r_hat = (2.0 * prop.exposure.array() - 1.0) * prop.W.array();
  if ((prop.e.array() < 1e-6).any() || (prop.e.array() > 1.0 - 1e-6).any())
    prop.warnings.push_back("extreme propensity scores (< 1e-6 or > 1 - 1e-6) produce very large weights");
}

}  // namespace

Eigen::VectorXd iptw_weights(const Eigen::VectorXd& exposure, const Eigen::VectorXd& e) {
  return (exposure.array() / e.array() + (1.0 - exposure.array()) / (1.0 - e.array())).matrix();
}

Eigen::VectorXd PropensityFit::weights_at(const Eigen::VectorXd& alpha) const {
  if (!estimated()) throw EstimationError("propensity scores were supplied as known; there are no coefficients");
  const Eigen::VectorXd lp = design * alpha;
  const Eigen::VectorXd ei = lp.unaryExpr([](double v) { return expit(v); });
  Eigen::VectorXd w = iptw_weights(exposure, ei);
  if (weight_bounds) w = w.cwiseMax(weight_bounds->first).cwiseMin(weight_bounds->second);
  return w;
}

PropensityFit fit_propensity(const Dataset& data, const DesignSpec& covariates,
                             std::optional<std::pair<double, double>> truncate_percentiles,
                             const OptimizerOptions& options) {
  PropensityFit prop;
  std::vector<std::string> names;
  prop.design = propensity_design(data, covariates, &names);
  prop.exposure = data.exposure;
  LogisticModel model(prop.design, data.exposure);
  prop.fit = fit_logistic(model, options);
  prop.fit.names = std::move(names);
  if (!prop.fit.converged) throw EstimationError("propensity model did not converge: " + prop.fit.message);
  prop.e = model.fitted(prop.fit.estimates);
  if (truncate_percentiles) {
    const auto [lo, hi] = *truncate_percentiles;
    if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) throw ConfigError("truncation percentiles must satisfy 0 <= lo < hi <= 1");
    const Eigen::VectorXd raw = iptw_weights(prop.exposure, prop.e);
    std::vector<double> v(raw.data(), raw.data() + raw.size());
    prop.weight_bounds = std::make_pair(quantile(v, lo), quantile(v, hi));
  }
  finish_propensity(prop);
  return prop;
}

PropensityFit known_propensity(const Dataset& data, const Eigen::VectorXd& e) {
  if (e.size() != data.size()) throw DataError("propensity vector has the wrong length");
  if (!((e.array() > 0.0).all() && (e.array() < 1.0).all()))
    throw DomainError("propensity scores must lie strictly inside (0, 1)");
  PropensityFit prop;
  prop.exposure = data.exposure;
  prop.e = e;
  prop.fit.converged = true;
  finish_propensity(prop);
  return prop;
}

// ---------------------------------------------------------------------------
// Outcome fits

OutcomeFit fit_outcome(const Dataset& data, Family family, const DesignSpec& design, std::optional<HeapingModel> heaping,
                       const std::optional<Eigen::VectorXd>& weights, const OptimizerOptions& options) {
  const bool zi = is_zero_inflated(family);
  CountModel model(family, build_design(data, design, zi), data.outcome, heaping, weights.value_or(Eigen::VectorXd{}));
  FitResult fit = fit_model(model, options);
  return OutcomeFit{std::move(model), std::move(fit), design, build_design(data, design, zi, 1.0),
                    build_design(data, design, zi, 0.0)};
}

OutcomeFit outcome_from_estimates(const Dataset& data, Family family, const DesignSpec& design,
                                  const Eigen::VectorXd& estimates, std::optional<HeapingModel> heaping) {
  const bool zi = is_zero_inflated(family);
  CountModel model(family, build_design(data, design, zi), data.outcome, heaping);
  if (estimates.size() != model.n_params()) throw EstimationError("estimate vector does not match the model layout");
  FitResult fit;
  fit.estimates = estimates;
  fit.names = model.parameter_names();
  fit.loglik = model.loglik(estimates);
  fit.converged = true;
  fit.gradient_norm = model.gradient(estimates).lpNorm<Eigen::Infinity>();
  return OutcomeFit{std::move(model), std::move(fit), design, build_design(data, design, zi, 1.0),
                    build_design(data, design, zi, 0.0)};
}

// ---------------------------------------------------------------------------
// Estimators

namespace {

CmrEstimate ratio_estimate(double lambda1, double lambda0, Method method, WeightTreatment wt) {
  if (!(lambda0 > 0.0) || !(lambda1 >= 0.0) || !std::isfinite(lambda1) || !std::isfinite(lambda0))
    throw EstimationError("counterfactual mean estimates are not positive and finite");
  CmrEstimate est;
  est.lambda1 = lambda1;
  est.lambda0 = lambda0;
  est.cmr = lambda1 / lambda0;
  est.method = method;
  est.weight_treatment = wt;
  return est;
}

void require_converged(const FitResult& fit, std::string_view role) {
  if (!fit.converged)
    throw EstimationError(std::string(role) + " model did not converge" + (fit.message.empty() ? "" : ": " + fit.message));
}

void require_both_arms(const Dataset& data) {
  const double treated = data.exposure.sum();
  if (treated < 1.0 || treated > static_cast<double>(data.size()) - 1.0)
    throw EstimationError("both exposure arms must be non-empty");
}

}  // namespace

CmrEstimate cmr_iptw(const Dataset& data, const PropensityFit& prop) {
  require_both_arms(data);
  if (prop.W.size() != data.size()) throw EstimationError("propensity fit does not match the dataset");
  const Eigen::ArrayXd a = data.exposure.array();
  const Eigen::ArrayXd y = data.outcome_values().array();
  const Eigen::ArrayXd w = prop.W.array();
  const double lambda1 = (w * y * a).sum() / (w * a).sum();
  const double lambda0 = (w * y * (1.0 - a)).sum() / (w * (1.0 - a)).sum();
  auto est = ratio_estimate(lambda1, lambda0, Method::IPTW,
                            prop.estimated() ? WeightTreatment::Estimated : WeightTreatment::Fixed);
  est.warnings = prop.warnings;
  return est;
}

CmrEstimate cmr_pg(const OutcomeFit& outcome) {
  require_converged(outcome.fit, "outcome");
  const double lambda1 = outcome.model.conditional_means(outcome.fit.estimates, outcome.exposed).mean();
  const double lambda0 = outcome.model.conditional_means(outcome.fit.estimates, outcome.unexposed).mean();
  auto est = ratio_estimate(lambda1, lambda0, Method::PG, WeightTreatment::NotApplicable);
  est.warnings = outcome.fit.warnings;
  return est;
}

CmrEstimate cmr_dr(const Dataset& data, const PropensityFit& prop, const OutcomeFit& outcome) {
  require_both_arms(data);
  require_converged(outcome.fit, "outcome");
  const Eigen::ArrayXd a = data.exposure.array();
  const Eigen::ArrayXd y = data.outcome_values().array();
  const Eigen::ArrayXd e = prop.e.array();
  const Eigen::ArrayXd m1 = outcome.model.conditional_means(outcome.fit.estimates, outcome.exposed).array();
  const Eigen::ArrayXd m0 = outcome.model.conditional_means(outcome.fit.estimates, outcome.unexposed).array();
  const double lambda1 = ((a * y - (a - e) * m1) / e).mean();
  const double lambda0 = (((1.0 - a) * y + (a - e) * m0) / (1.0 - e)).mean();
  auto est = ratio_estimate(lambda1, lambda0, Method::DR,
                            prop.estimated() ? WeightTreatment::Estimated : WeightTreatment::Fixed);
  est.warnings = prop.warnings;
  est.warnings.insert(est.warnings.end(), outcome.fit.warnings.begin(), outcome.fit.warnings.end());
  return est;
}

OutcomeFit fit_marginal_heaped(const Dataset& data, const PropensityFit& prop, Family family, const HeapingModel& heap,
                               const OptimizerOptions& options) {
  if (is_zero_inflated(family))
    throw EstimationError("the marginal heaped model supports Poisson and NB only");
  DesignSpec marginal;
  marginal.include_exposure = true;
  return fit_outcome(data, family, marginal, heap, prop.W, options);
}

CmrEstimate cmr_iptw_heap(const OutcomeFit& marginal) {
  require_converged(marginal.fit, "weighted heaped marginal");
  const auto& d = marginal.fit.estimates;
  const Eigen::Index n_mean = marginal.model.layout().n_mean;
  if (n_mean != 2) throw EstimationError("marginal model must be log-mean = delta0 + delta1 A");
  auto est = ratio_estimate(std::exp(d(0) + d(1)), std::exp(d(0)), Method::IPTW_heap, WeightTreatment::Estimated);
  est.cmr = std::exp(d(1));
  est.warnings = marginal.fit.warnings;
  return est;
}

CmrEstimate cmr_iptw_heap(const Dataset& data, const PropensityFit& prop, Family family, const HeapingModel& heap) {
  return cmr_iptw_heap(fit_marginal_heaped(data, prop, family, heap));
}

CmrEstimate cmr_pg_heap(const OutcomeFit& heaped_outcome) {
  if (!heaped_outcome.model.heaping()) throw EstimationError("cmr_pg_heap needs a heaped outcome model");
  auto est = cmr_pg(heaped_outcome);
  est.method = Method::PG_heap;
  return est;
}

CmrEstimate cmr_pg_heap(const Dataset& data, Family family, const DesignSpec& design, const HeapingModel& heap) {
  return cmr_pg_heap(fit_outcome(data, family, design, heap));
}

DesignSpec with_signed_weight(const DesignSpec& design, const Eigen::VectorXd& r_hat) {
  DesignSpec out = design;
  const std::string name(kSignedWeightColumn);
  if (std::find(out.mean_covariates.begin(), out.mean_covariates.end(), name) == out.mean_covariates.end())
    out.mean_covariates.push_back(name);
  out.extra_columns[name] = r_hat;
  return out;
}

Eigen::VectorXd counterfactual_signed_weight(const Eigen::VectorXd& e, int a,
                                             const std::optional<std::pair<double, double>>& bounds) {
  Eigen::VectorXd w = a == 1 ? Eigen::VectorXd(e.cwiseInverse()) : Eigen::VectorXd((1.0 - e.array()).inverse());
  if (bounds) w = w.cwiseMax(bounds->first).cwiseMin(bounds->second);
  return a == 1 ? w : -w;
}

OutcomeFit fit_dr_heap_outcome(const Dataset& data, const PropensityFit& prop, Family family, const DesignSpec& design,
                               const HeapingModel& heap, const OptimizerOptions& options) {
  OutcomeFit out = fit_outcome(data, family, with_signed_weight(design, prop.r_hat), heap, std::nullopt, options);
  const auto& names = out.exposed.mean_names;
  const auto col = std::find(names.begin(), names.end(), std::string(kSignedWeightColumn)) - names.begin();
  out.exposed.mean.col(col) = counterfactual_signed_weight(prop.e, 1, prop.weight_bounds);
  out.unexposed.mean.col(col) = counterfactual_signed_weight(prop.e, 0, prop.weight_bounds);
  return out;
}

CmrEstimate cmr_dr_heap(const OutcomeFit& augmented_outcome) {
  if (!augmented_outcome.model.heaping()) throw EstimationError("cmr_dr_heap needs a heaped outcome model");
  if (!augmented_outcome.spec.extra_columns.contains(std::string(kSignedWeightColumn)))
    throw EstimationError("cmr_dr_heap needs an outcome model that includes r_hat");
  auto est = cmr_pg(augmented_outcome);
  est.method = Method::DR_heap;
  est.weight_treatment = WeightTreatment::Estimated;
  return est;
}

CmrEstimate cmr_dr_heap(const Dataset& data, const PropensityFit& prop, Family family, const DesignSpec& design,
                        const HeapingModel& heap) {
  return cmr_dr_heap(fit_dr_heap_outcome(data, prop, family, design, heap));
}

}  // namespace cmr

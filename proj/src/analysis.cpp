#include "cmr/analysis.hpp"

#include <algorithm>
#include <exception>
#include <limits>
#include <memory>

#include "cmr/errors.hpp"

namespace cmr {

const MethodResult* AnalysisResult::find(Method m, WeightTreatment t) const {
  for (const auto& r : methods)
    if (r.request.method == m && r.request.treatment == t) return &r;
  return nullptr;
}

std::vector<MethodRequest> expand_requests(const std::vector<Method>& methods,
                                           const std::vector<WeightTreatment>& treatments) {
  std::vector<MethodRequest> out;
  for (Method m : methods) {
    if (m == Method::PG || m == Method::PG_heap) {
      out.push_back({m, WeightTreatment::NotApplicable});
      continue;
    }
    for (WeightTreatment t : treatments) {
      if (t == WeightTreatment::NotApplicable) continue;
      out.push_back({m, t});
    }
  }
  return out;
}

namespace {

// A nuisance fit computed at most once, remembering why it failed.
template <class T>
struct Lazy {
  std::unique_ptr<T> value;
  std::string error;
  bool attempted = false;

  template <class F>
  const T& get(F&& make) {
    if (!attempted) {
      attempted = true;
      try {
        value = std::make_unique<T>(make());
      } catch (const std::exception& e) {
        error = e.what();
      }
    }
    if (!value) throw EstimationError(error);
    return *value;
  }
};

ModelSummary summarize(std::string role, Family family, const FitResult& fit, bool heaped) {
  ModelSummary s{std::move(role), std::string(family_name(family)) + (heaped ? "+heaping" : ""), fit, std::nullopt};
  if (fit.converged) s.aic = aic(fit);
  return s;
}

void check_outcome(const OutcomeFit& o, const char* role) {
  if (!o.fit.converged)
    throw EstimationError(std::string(role) + " model did not converge" + (o.fit.message.empty() ? "" : ": " + o.fit.message));
}

}  // namespace

AnalysisResult run_analysis(const Dataset& data, const AnalysisSpec& spec) {
  data.validate();
  if (!(spec.ci_level > 0.0 && spec.ci_level < 1.0)) throw ConfigError("ci_level must lie in (0, 1)");
  const bool any_heaped = std::any_of(spec.requests.begin(), spec.requests.end(),
                                      [](const MethodRequest& r) { return is_heaped(r.method); });
  if (any_heaped && !spec.heaping) throw ConfigError("heaped methods need a heaping block");

  const auto& opt = spec.optimizer;
  Lazy<PropensityFit> prop;
  Lazy<OutcomeFit> outcome, heaped_outcome, dr_heap_outcome, marginal;

  const auto get_prop = [&]() -> const PropensityFit& {
    return prop.get([&] { return fit_propensity(data, spec.weight_design, spec.truncation, opt); });
  };
  const auto get_outcome = [&]() -> const OutcomeFit& {
    const auto& o = outcome.get([&] { return fit_outcome(data, spec.outcome_family, spec.outcome_design, std::nullopt, std::nullopt, opt); });
    check_outcome(o, "outcome");
    return o;
  };
  const auto get_heaped = [&]() -> const OutcomeFit& {
    const auto& o = heaped_outcome.get(
        [&] { return fit_outcome(data, spec.outcome_family, spec.outcome_design, spec.heaping, std::nullopt, opt); });
    check_outcome(o, "heaped outcome");
    return o;
  };
  const auto get_dr_heap = [&]() -> const OutcomeFit& {
    const auto& p = get_prop();
    const auto& o = dr_heap_outcome.get(
        [&] { return fit_dr_heap_outcome(data, p, spec.outcome_family, spec.outcome_design, *spec.heaping, opt); });
    check_outcome(o, "signed-weight heaped outcome");
    return o;
  };
  const auto get_marginal = [&]() -> const OutcomeFit& {
    const auto& p = get_prop();
    const auto& o = marginal.get([&] { return fit_marginal_heaped(data, p, spec.marginal_family, *spec.heaping, opt); });
    check_outcome(o, "weighted heaped marginal");
    return o;
  };

  AnalysisResult result;
  for (const MethodRequest& req : spec.requests) {
    MethodResult mr;
    mr.request = req;
    try {
      const bool weighted = req.method != Method::PG && req.method != Method::PG_heap;
      if (weighted && req.treatment == WeightTreatment::NotApplicable)
        throw ConfigError(std::string(method_name(req.method)) + " needs a fixed or estimated weight treatment");
      if (!weighted && req.treatment != WeightTreatment::NotApplicable)
        throw ConfigError(std::string(method_name(req.method)) + " uses no weights; its treatment must be n/a");

      CmrEstimate est;
      StackInputs in{&data, nullptr, nullptr};
      switch (req.method) {
        case Method::IPTW:
          in.propensity = &get_prop();
          est = cmr_iptw(data, *in.propensity);
          break;
        case Method::PG:
          in.outcome = &get_outcome();
          est = cmr_pg(*in.outcome);
          break;
        case Method::DR:
          in.propensity = &get_prop();
          in.outcome = &get_outcome();
          est = cmr_dr(data, *in.propensity, *in.outcome);
          break;
        case Method::IPTW_heap:
          in.propensity = &get_prop();
          in.outcome = &get_marginal();
          est = cmr_iptw_heap(*in.outcome);
          break;
        case Method::PG_heap:
          in.outcome = &get_heaped();
          est = cmr_pg_heap(*in.outcome);
          break;
        case Method::DR_heap:
          in.propensity = &get_prop();
          in.outcome = &get_dr_heap();
          est = cmr_dr_heap(*in.outcome);
          break;
      }
      est.weight_treatment = req.treatment;
      const EEStack stack = build_stack(est, req.treatment, in);
      mr.estimate = with_inference(std::move(est), stack, spec.ci_level);
      mr.ok = true;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      mr.error = e.what();
    }
    result.methods.push_back(std::move(mr));
  }

  if (prop.value && prop.value->estimated())
    result.models.push_back(ModelSummary{"propensity", "logistic", prop.value->fit,
                                         prop.value->fit.converged ? std::optional(aic(prop.value->fit)) : std::nullopt});
  if (outcome.value) result.models.push_back(summarize("outcome", spec.outcome_family, outcome.value->fit, false));
  if (heaped_outcome.value)
    result.models.push_back(summarize("outcome_heaped", spec.outcome_family, heaped_outcome.value->fit, true));
  if (dr_heap_outcome.value)
    result.models.push_back(summarize("outcome_signed_weight", spec.outcome_family, dr_heap_outcome.value->fit, true));
  if (marginal.value) result.models.push_back(summarize("marginal_heaped", spec.marginal_family, marginal.value->fit, true));
  return result;
}

FamilyComparison compare_families(const Dataset& data, const DesignSpec& design, const OptimizerOptions& options) {
  FamilyComparison out;
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (Family f : {Family::Poisson, Family::NegBin, Family::ZIP, Family::ZINB}) {
    FitResult fit;
    try {
      fit = fit_count(data, f, design, std::nullopt, options);
    } catch (const EstimationError& e) {
      fit.message = e.what();
    }
    std::optional<double> value;
    if (fit.converged) value = aic(fit);
    if (value && *value < best) {
      best = *value;
      out.best = f;
      found = true;
    }
    out.fits.emplace_back(f, std::move(fit));
    out.aic.push_back(value);
  }
  if (!found) throw EstimationError("no outcome family converged");
  return out;
}

}  // namespace cmr

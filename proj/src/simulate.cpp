#include "cmr/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "cmr/errors.hpp"

namespace cmr {

std::string_view design_name(SimDesign d) noexcept { return d == SimDesign::Partners ? "partners" : "heaping"; }

SimDesign parse_design(std::string_view s) {
  if (s == "partners") return SimDesign::Partners;
  if (s == "heaping") return SimDesign::Heaping;
  throw ConfigError("unknown scenario design '" + std::string(s) + "' (expected partners or heaping)");
}

std::string_view misspec_name(Misspec m) noexcept {
  switch (m) {
    case Misspec::None: return "none";
    case Misspec::MW: return "MW";
    case Misspec::MO: return "MO";
    case Misspec::MB: return "MB";
  }
  return "?";
}

Misspec parse_misspec(std::string_view s) {
  for (Misspec m : {Misspec::None, Misspec::MW, Misspec::MO, Misspec::MB})
    if (s == misspec_name(m)) return m;
  throw ConfigError("unknown misspecification '" + std::string(s) + "' (expected none, MW, MO or MB)");
}

ModelRole parse_role(std::string_view s) {
  if (s == "weight") return ModelRole::Weight;
  if (s == "outcome") return ModelRole::Outcome;
  throw ConfigError("unknown model role '" + std::string(s) + "' (expected weight or outcome)");
}

// ---------------------------------------------------------------------------
// Data generation

namespace {

using Engine = std::mt19937_64;

double unif(Engine& g, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(g); }
bool bern(Engine& g, double p) { return unif(g, 0.0, 1.0) < p; }
std::int64_t poisson(Engine& g, double mu) { return std::poisson_distribution<std::int64_t>(mu)(g); }

}  // namespace

std::uint64_t replication_seed(std::uint64_t base_seed, int r) noexcept {
  // splitmix64 finalizer so neighbouring seeds start far apart.
  std::uint64_t z = base_seed + static_cast<std::uint64_t>(r) + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SimData gen_partners(Eigen::Index n, Family family, std::uint64_t seed, const PartnersOptions& options) {
  if (n <= 0) throw DomainError("sample size must be positive");
  Engine g(seed);
  constexpr double theta = 0.5;
  const double size = 1.0 / theta;
  std::gamma_distribution<double> frailty(size, 1.0 / size);

  SimData out;
  Dataset& d = out.data;
  d.covariate_names = {"L1", "L2", "L3"};
  d.covariates.resize(n, 3);
  d.exposure.resize(n);
  d.outcome.resize(n);
  out.y0.resize(n);
  out.y1.resize(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    const double l1 = unif(g, 20.0, 40.0);
    const double e1 = unif(g, -1.0, 1.0);
    const double l2 = bern(g, expit(-(l1 - 0.5) / 100.0 + e1)) ? 1.0 : 0.0;
    const double e2 = unif(g, -0.5, 0.5);
    const double l3 = bern(g, expit(-3.0 - (l1 - 0.5) / 100.0 + 1.2 * l2 + e2)) ? 1.0 : 0.0;
    const double a = bern(g, expit(-0.5 - l1 / 100.0 + 0.5 * l2 + 0.5 * l3)) ? 1.0 : 0.0;

    // The susceptibility draw is made for every family so that the zero-
    // inflated families with nu = 0 consume the same stream as their parents.
    const double nu = options.no_zero_inflation ? 0.0 : expit(-2.5 + l1 / 100.0 - 0.3 * l2 - 2.0 * l3);
    const double u = unif(g, 0.0, 1.0);
    const bool susceptible = !is_zero_inflated(family) || u >= nu;

    std::int64_t y[2];
    for (int level = 0; level < 2; ++level) {
      double mu = std::exp(-1.0 - 0.005 * l1 + 0.7 * l2 + 3.5 * l3 + 0.5 * level);
      if (has_dispersion(family)) mu *= frailty(g);
      const std::int64_t count = poisson(g, mu);
      y[level] = susceptible ? count : 0;
    }
    d.covariates.row(i) << l1, l2, l3;
    d.exposure(i) = a;
    out.y0(i) = y[0];
    out.y1(i) = y[1];
    d.outcome(i) = a == 1.0 ? y[1] : y[0];
  }
  out.y_true = d.outcome;
  out.true_cmr = std::exp(kPartnersLogCmr);
  return out;
}

SimData gen_heaping(Eigen::Index n, std::uint64_t seed, const HeapingOptions& options) {
  if (n <= 0) throw DomainError("sample size must be positive");
  validate(HeapingSpec{options.eta, options.pi});
  Engine g(seed);
  std::gamma_distribution<double> gamma(5.0, 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  SimData out;
  Dataset& d = out.data;
  d.covariate_names = {"L4", "L5"};
  d.covariates.resize(n, 2);
  d.exposure.resize(n);
  d.outcome.resize(n);
  out.y0.resize(n);
  out.y1.resize(n);
  out.y_true.resize(n);
  out.exact_report.resize(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    const double l4 = std::log(gamma(g));
    const double l5 = expit(-3.0 + l4 + 2.0 * normal(g));
    const double a = bern(g, 1.0 - expit(-0.8 + 0.65 * l4)) ? 1.0 : 0.0;
    const std::int64_t y0 = poisson(g, std::exp(-0.9 + l4));
    const std::int64_t y1 = poisson(g, std::exp(-0.9 + l4 + 0.25));
    const bool exact = bern(g, options.pi);
    const std::int64_t y = a == 1.0 ? y1 : y0;
    d.covariates.row(i) << l4, l5;
    d.exposure(i) = a;
    out.y0(i) = y0;
    out.y1(i) = y1;
    out.y_true(i) = y;
    out.exact_report(i) = exact ? 1.0 : 0.0;
    d.outcome(i) = exact ? y : round_to_grid(y, options.eta);
  }
  out.true_cmr = std::exp(kHeapingLogCmr);
  return out;
}

DesignSpec apply_misspec(SimDesign design, Family family, Misspec misspec, ModelRole role) {
  const bool wrong = misspec == Misspec::MB || (role == ModelRole::Weight ? misspec == Misspec::MW : misspec == Misspec::MO);
  DesignSpec spec;
  if (design == SimDesign::Partners) {
    spec.mean_covariates = wrong ? std::vector<std::string>{"L1", "L3"} : std::vector<std::string>{"L1", "L2", "L3"};
    if (role == ModelRole::Outcome && is_zero_inflated(family)) spec.susceptibility_covariates = spec.mean_covariates;
  } else {
    spec.mean_covariates = {wrong ? "L5" : "L4"};
  }
  spec.include_exposure = role == ModelRole::Outcome;
  return spec;
}

std::vector<MethodRequest> default_requests(SimDesign design, Misspec misspec) {
  using M = Method;
  using T = WeightTreatment;
  const bool heap = design == SimDesign::Heaping;
  const M iptw = heap ? M::IPTW_heap : M::IPTW;
  const M pg = heap ? M::PG_heap : M::PG;
  const M dr = heap ? M::DR_heap : M::DR;
  switch (misspec) {
    case Misspec::None: {
      std::vector<MethodRequest> out;
      if (heap) out = {{M::IPTW, T::Fixed}, {M::IPTW, T::Estimated}, {M::PG, T::NotApplicable}, {M::DR, T::Estimated}};
      const std::vector<MethodRequest> main{{iptw, T::Fixed}, {iptw, T::Estimated}, {pg, T::NotApplicable}, {dr, T::Estimated}};
      out.insert(out.end(), main.begin(), main.end());
      return out;
    }
    case Misspec::MW: return {{iptw, T::Fixed}, {iptw, T::Estimated}, {dr, T::Estimated}};
    case Misspec::MO: return {{pg, T::NotApplicable}, {dr, T::Estimated}};
    case Misspec::MB: return {{dr, T::Estimated}};
  }
  return {};
}

AnalysisSpec scenario_analysis(const SimScenario& scenario) {
  AnalysisSpec spec;
  spec.requests = scenario.requests.empty() ? default_requests(scenario.design, scenario.misspec) : scenario.requests;
  const Family outcome_family = scenario.design == SimDesign::Partners ? scenario.family : Family::Poisson;
  spec.outcome_family = outcome_family;
  spec.marginal_family = Family::NegBin;
  spec.weight_design = apply_misspec(scenario.design, outcome_family, scenario.misspec, ModelRole::Weight);
  spec.outcome_design = apply_misspec(scenario.design, outcome_family, scenario.misspec, ModelRole::Outcome);
  if (scenario.design == SimDesign::Heaping) spec.heaping = HeapingModel{scenario.heaping.eta, std::nullopt};
  spec.ci_level = scenario.ci_level;
  return spec;
}

SimData generate(const SimScenario& scenario, int r) {
  const std::uint64_t seed = replication_seed(scenario.base_seed, r);
  return scenario.design == SimDesign::Partners ? gen_partners(scenario.n, scenario.family, seed)
                                                : gen_heaping(scenario.n, seed, scenario.heaping);
}

// ---------------------------------------------------------------------------
// Study loop and metrics

SimMetrics compute_metrics(const ReplicationEstimates& reps, double true_cmr) {
  SimMetrics m;
  m.request = reps.request;
  std::vector<double> cmr, se;
  int covered = 0;
  for (const auto& e : reps.estimates) {
    if (!e || !std::isfinite(e->cmr) || !std::isfinite(e->se)) continue;
    cmr.push_back(e->cmr);
    se.push_back(e->se);
    if (e->ci_low <= true_cmr && true_cmr <= e->ci_high) ++covered;
  }
  const auto total = static_cast<double>(reps.estimates.size());
  m.reps_used = static_cast<int>(cmr.size());
  m.nonconv_pct = total > 0 ? 100.0 * (total - m.reps_used) / total : 0.0;
  if (cmr.empty()) {
    m.bias_pct = m.mse = m.coverage_pct = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  const double k = static_cast<double>(cmr.size());
  const double mean = std::accumulate(cmr.begin(), cmr.end(), 0.0) / k;
  m.bias_pct = 100.0 * (mean - true_cmr) / true_cmr;
  std::sort(se.begin(), se.end());
  const std::size_t mid = se.size() / 2;
  m.mse = se.size() % 2 ? se[mid] : 0.5 * (se[mid - 1] + se[mid]);
  m.coverage_pct = 100.0 * covered / k;
  if (cmr.size() > 1) {
    double ss = 0.0;
    for (double c : cmr) ss += (c - mean) * (c - mean);
    m.ese = std::sqrt(ss / (k - 1.0));
    m.ser = m.mse / *m.ese;
  }
  return m;
}

StudyResult run_study(const SimScenario& scenario, const std::function<void(int, int)>& progress) {
  if (scenario.n <= 0) throw ConfigError("n must be positive");
  if (scenario.reps <= 0) throw ConfigError("reps must be positive");
  const AnalysisSpec spec = scenario_analysis(scenario);

  StudyResult out;
  out.scenario = scenario;
  out.scenario.requests = spec.requests;
  out.true_cmr = std::exp(scenario.design == SimDesign::Partners ? kPartnersLogCmr : kHeapingLogCmr);
  for (const auto& req : spec.requests)
    out.replications.push_back({req, std::vector<std::optional<CmrEstimate>>(static_cast<std::size_t>(scenario.reps))});

  std::atomic<int> next{0};
  std::atomic<int> done{0};
  std::mutex mutex;
  std::exception_ptr config_error;
  const auto worker = [&] {
    for (int r = next++; r < scenario.reps; r = next++) {
      std::vector<MethodResult> results;
      try {
        const SimData sim = generate(scenario, r);
        results = run_analysis(sim.data, spec).methods;
      } catch (const ConfigError&) {
        std::lock_guard lock(mutex);
        if (!config_error) config_error = std::current_exception();
      } catch (const std::exception&) {
        // A replication whose data cannot be analysed counts against every row.
      }
      for (const auto& res : results) {
        for (auto& row : out.replications) {
          if (row.request == res.request && res.ok) row.estimates[static_cast<std::size_t>(r)] = res.estimate;
        }
      }
      const int d = ++done;
      if (progress) {
        std::lock_guard lock(mutex);
        progress(d, scenario.reps);
      }
    }
  };

  unsigned threads = scenario.threads ? scenario.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(scenario.reps));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  if (config_error) std::rethrow_exception(config_error);
  for (const auto& row : out.replications) out.metrics.push_back(compute_metrics(row, out.true_cmr));
  return out;
}

void write_metrics_csv(std::ostream& os, const std::vector<StudyResult>& studies) {
  os << "scenario,family,misspec,method,weight_treatment,bias_pct,mse,ese,ser,coverage_pct,nonconv_pct,reps_used\n";
  char buf[64];
  const auto num = [&](std::optional<double> v) -> std::string {
    if (!v || !std::isfinite(*v)) return "";
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return buf;
  };
  for (const auto& s : studies) {
    const std::string family =
        s.scenario.design == SimDesign::Partners ? std::string(family_name(s.scenario.family)) : "poisson";
    for (const auto& m : s.metrics) {
      os << design_name(s.scenario.design) << ',' << family << ',' << misspec_name(s.scenario.misspec) << ','
         << method_name(m.request.method) << ',' << weight_treatment_name(m.request.treatment) << ','
         << num(m.bias_pct) << ',' << num(m.mse) << ',' << num(m.ese) << ',' << num(m.ser) << ','
         << num(m.coverage_pct) << ',' << num(m.nonconv_pct) << ',' << m.reps_used << '\n';
    }
  }
}

}  // namespace cmr

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cmr/errors.hpp"
#include "cmr/simulate.hpp"

using namespace cmr;

namespace {

double ratio_of_means(const CountVector& y1, const CountVector& y0) {
  return y1.cast<double>().mean() / y0.cast<double>().mean();
}

bool same(const std::optional<double>& a, const std::optional<double>& b) {
  return a.has_value() == b.has_value() && (!a || *a == *b);
}

}  // namespace

TEST_CASE("generation is a pure function of the seed") {
  for (Family f : {Family::Poisson, Family::NegBin, Family::ZIP, Family::ZINB}) {
    const SimData a = gen_partners(300, f, 42), b = gen_partners(300, f, 42), c = gen_partners(300, f, 43);
    CHECK(a.data.outcome == b.data.outcome);
    CHECK(a.data.covariates == b.data.covariates);
    CHECK(a.data.exposure == b.data.exposure);
    CHECK(a.data.outcome != c.data.outcome);
  }
  const SimData h1 = gen_heaping(300, 5), h2 = gen_heaping(300, 5);
  CHECK(h1.data.outcome == h2.data.outcome);
  CHECK(replication_seed(20240601, 0) != replication_seed(20240601, 1));
  SimScenario s;
  CHECK(generate(s, 3).data.outcome == gen_partners(800, Family::Poisson, replication_seed(s.base_seed, 3)).data.outcome);
}

TEST_CASE("zero-inflated generators without zero inflation reduce to their parents") {
  const PartnersOptions none{.no_zero_inflation = true};
  CHECK(gen_partners(500, Family::ZIP, 7, none).data.outcome == gen_partners(500, Family::Poisson, 7).data.outcome);
  CHECK(gen_partners(500, Family::ZINB, 7, none).data.outcome == gen_partners(500, Family::NegBin, 7).data.outcome);
}

TEST_CASE("large-sample potential outcomes recover the true ratio") {
  for (Family f : {Family::Poisson, Family::NegBin, Family::ZIP, Family::ZINB}) {
    CAPTURE(family_name(f));
    const SimData sim = gen_partners(400000, f, 11);
    CHECK(sim.true_cmr == doctest::Approx(std::exp(0.5)).epsilon(1e-15));
    CHECK(std::abs(std::log(ratio_of_means(sim.y1, sim.y0)) - 0.5) < 0.02);
    const CountVector observed = (sim.data.exposure.array() == 1.0).select(sim.y1, sim.y0);
    CHECK(observed == sim.data.outcome);
  }
  const SimData h = gen_heaping(400000, 12);
  CHECK(std::abs(std::log(ratio_of_means(h.y1, h.y0)) - 0.25) < 0.01);
}

TEST_CASE("heaping reports rounded counts off the exact branch") {
  const SimData sim = gen_heaping(20000, 13);
  REQUIRE(sim.exact_report.size() == 20000);
  int on_grid_reported = 0, on_grid_true = 0;
  for (Eigen::Index i = 0; i < 20000; ++i) {
    if (sim.exact_report(i) == 1.0) {
      CHECK(sim.data.outcome(i) == sim.y_true(i));
    } else {
      CHECK(sim.data.outcome(i) == round_to_grid(sim.y_true(i), 10));
      CHECK(sim.data.outcome(i) % 10 == 0);
    }
    on_grid_reported += sim.data.outcome(i) % 10 == 0 && sim.data.outcome(i) > 0;
    on_grid_true += sim.y_true(i) % 10 == 0 && sim.y_true(i) > 0;
  }
  CHECK(on_grid_reported > 3 * on_grid_true);
  CHECK(std::abs(sim.exact_report.mean() - 0.4) < 0.02);

  const SimData exact = gen_heaping(2000, 13, HeapingOptions{10, 1.0});
  CHECK(exact.data.outcome == exact.y_true);
  CHECK_THROWS_AS(gen_heaping(10, 1, HeapingOptions{0, 0.4}), DomainError);
}

TEST_CASE("misspecification regimes drop the right covariates") {
  using enum ModelRole;
  CHECK(apply_misspec(SimDesign::Partners, Family::Poisson, Misspec::MW, Weight).mean_covariates ==
        std::vector<std::string>{"L1", "L3"});
  CHECK(apply_misspec(SimDesign::Partners, Family::Poisson, Misspec::MW, Outcome).mean_covariates ==
        std::vector<std::string>{"L1", "L2", "L3"});
  CHECK(apply_misspec(SimDesign::Partners, Family::Poisson, Misspec::None, Weight).mean_covariates ==
        std::vector<std::string>{"L1", "L2", "L3"});
  const DesignSpec zo = apply_misspec(SimDesign::Partners, Family::ZIP, Misspec::MB, Outcome);
  CHECK(zo.mean_covariates == std::vector<std::string>{"L1", "L3"});
  CHECK(zo.susceptibility_covariates == std::vector<std::string>{"L1", "L3"});
  CHECK(zo.include_exposure);
  const DesignSpec ho = apply_misspec(SimDesign::Heaping, Family::Poisson, Misspec::MO, Outcome);
  CHECK(ho.mean_covariates == std::vector<std::string>{"L5"});
  CHECK(ho.include_exposure);
  const DesignSpec hw = apply_misspec(SimDesign::Heaping, Family::Poisson, Misspec::MO, Weight);
  CHECK(hw.mean_covariates == std::vector<std::string>{"L4"});
  CHECK_FALSE(hw.include_exposure);
  CHECK(parse_misspec("MB") == Misspec::MB);
  CHECK_THROWS_AS(parse_misspec("XX"), ConfigError);
}

TEST_CASE("default rows follow the design and regime") {
  CHECK(default_requests(SimDesign::Partners, Misspec::None).size() == 4);
  CHECK(default_requests(SimDesign::Partners, Misspec::MW).size() == 3);
  CHECK(default_requests(SimDesign::Partners, Misspec::MO).size() == 2);
  CHECK(default_requests(SimDesign::Partners, Misspec::MB).size() == 1);
  const auto heap = default_requests(SimDesign::Heaping, Misspec::None);
  REQUIRE(heap.size() == 8);
  CHECK(heap[0].method == Method::IPTW);
  CHECK(heap[7].method == Method::DR_heap);
}

TEST_CASE("metrics by hand") {
  ReplicationEstimates reps;
  reps.request = {Method::PG, WeightTreatment::NotApplicable};
  const auto est = [](double cmr, double se, double lo, double hi) {
    CmrEstimate e;
    e.cmr = cmr;
    e.se = se;
    e.ci_low = lo;
    e.ci_high = hi;
    return e;
  };
  reps.estimates = {est(1.0, 0.1, 0.8, 1.15), est(1.4, 0.3, 1.1, 1.7), std::nullopt, est(1.3, 0.2, 0.9, 1.7)};
  const SimMetrics m = compute_metrics(reps, 1.2);
  CHECK(m.reps_used == 3);
  CHECK(m.nonconv_pct == doctest::Approx(25.0));
  const double mean = (1.0 + 1.4 + 1.3) / 3.0;
  CHECK(m.bias_pct == doctest::Approx(100.0 * (mean - 1.2) / 1.2).epsilon(1e-12));
  CHECK(m.mse == doctest::Approx(0.2));
  REQUIRE(m.ese);
  const double ss = (1.0 - mean) * (1.0 - mean) + (1.4 - mean) * (1.4 - mean) + (1.3 - mean) * (1.3 - mean);
  CHECK(*m.ese == doctest::Approx(std::sqrt(ss / 2.0)));
  CHECK(*m.ser == doctest::Approx(0.2 / *m.ese));
  CHECK(m.coverage_pct == doctest::Approx(200.0 / 3.0));

  reps.estimates = {est(1.1, 0.25, 0.7, 1.5)};
  const SimMetrics one = compute_metrics(reps, 1.2);
  CHECK_FALSE(one.ese);
  CHECK_FALSE(one.ser);
  CHECK(one.mse == 0.25);
  CHECK(one.coverage_pct == 100.0);
}

TEST_CASE("study results do not depend on the thread count") {
  SimScenario s;
  s.n = 400;
  s.reps = 12;
  s.threads = 1;
  const StudyResult a = run_study(s);
  s.threads = 3;
  const StudyResult b = run_study(s);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t k = 0; k < a.metrics.size(); ++k) {
    const SimMetrics &x = a.metrics[k], &y = b.metrics[k];
    CHECK(x.request == y.request);
    CHECK(x.bias_pct == y.bias_pct);
    CHECK(x.mse == y.mse);
    CHECK(same(x.ese, y.ese));
    CHECK(same(x.ser, y.ser));
    CHECK(x.coverage_pct == y.coverage_pct);
    CHECK(x.reps_used == y.reps_used);
  }
  std::ostringstream csv_a, csv_b;
  write_metrics_csv(csv_a, {a});
  write_metrics_csv(csv_b, {b});
  CHECK(csv_a.str() == csv_b.str());
  CHECK(csv_a.str().rfind("scenario,family,misspec,method,weight_treatment,", 0) == 0);
}

TEST_CASE("zero-inflated fits rarely fail") {
  for (Family f : {Family::ZIP, Family::ZINB}) {
    CAPTURE(family_name(f));
    SimScenario s;
    s.family = f;
    s.reps = 60;
    const StudyResult res = run_study(s);
    for (const SimMetrics& m : res.metrics) {
      CHECK(m.nonconv_pct >= 0.0);
      CHECK(m.nonconv_pct <= 5.0);
    }
  }
}

TEST_CASE("study arguments are validated") {
  SimScenario s;
  s.reps = 0;
  CHECK_THROWS_AS(run_study(s), ConfigError);
  s.reps = 1;
  s.n = 0;
  CHECK_THROWS_AS(run_study(s), ConfigError);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "cmr/analysis.hpp"
#include "cmr/errors.hpp"
#include "cmr/inference.hpp"
#include "cmr/simulate.hpp"
#include "support.hpp"

using namespace cmr;
using cmr::test::make_dataset;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double sd(const std::vector<double>& v) {
  double mean = 0.0, ss = 0.0;
  for (double x : v) mean += x / static_cast<double>(v.size());
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

Eigen::Index index_of(const EEStack& s, const std::string& name) {
  const auto it = std::find(s.names.begin(), s.names.end(), name);
  REQUIRE(it != s.names.end());
  return static_cast<Eigen::Index>(it - s.names.begin());
}

AnalysisSpec partners_spec(std::vector<MethodRequest> requests) {
  SimScenario s;
  s.requests = std::move(requests);
  return scenario_analysis(s);
}

}  // namespace

TEST_CASE("sample-mean sandwich equals the population variance") {
  std::mt19937_64 rng(1);
  std::poisson_distribution<int> pois(4.0);
  Eigen::VectorXd y(200);
  for (auto& v : y) v = pois(rng);
  EEStack stack;
  stack.names = {"mu"};
  stack.theta_hat = Eigen::VectorXd::Constant(1, y.mean());
  stack.psi = [&](const Eigen::VectorXd& t) { return Eigen::MatrixXd((y.array() - t(0)).matrix()); };
  stack.target = TargetKind::LogRatioCoefficient;
  const SandwichResult s = sandwich(stack);
  const double closed = (y.array() - y.mean()).square().mean();
  CHECK(std::abs(s.V(0, 0) - closed) < 1e-10 * closed);
  CHECK(std::abs(s.A(0, 0) - 1.0) < 1e-6);  // analytic bread is 1
  CHECK(s.covariance(0, 0) == doctest::Approx(closed / 200.0).epsilon(1e-10));
  CHECK(stack.residual().lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("logistic-score sandwich matches an independent information computation") {
  const Dataset d = cmr::test::confounded_poisson(20, 2);
  DesignSpec w;
  w.mean_covariates = {"L"};
  const PropensityFit prop = fit_propensity(d, w);
  const LogisticModel model(prop.design, d.exposure);
  EEStack stack;
  stack.theta_hat = prop.fit.estimates;
  stack.psi = [&](const Eigen::VectorXd& a) { return model.scores(a); };
  stack.target = TargetKind::LogRatioCoefficient;
  const SandwichResult s = sandwich(stack);

  Eigen::Matrix2d info = Eigen::Matrix2d::Zero(), meat = Eigen::Matrix2d::Zero();
  for (Eigen::Index i = 0; i < 20; ++i) {
    const Eigen::Vector2d x(1.0, d.covariate("L")(i));
    const double e = 1.0 / (1.0 + std::exp(-x.dot(prop.fit.estimates)));
    info += e * (1 - e) * x * x.transpose() / 20.0;
    meat += (d.exposure(i) - e) * (d.exposure(i) - e) * x * x.transpose() / 20.0;
  }
  const Eigen::Matrix2d v = info.inverse() * meat * info.inverse();
  CHECK((s.A - info).lpNorm<Eigen::Infinity>() < 1e-6 * info.lpNorm<Eigen::Infinity>());
  CHECK((s.B - meat).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((s.V - v).lpNorm<Eigen::Infinity>() < 1e-5 * v.lpNorm<Eigen::Infinity>());
}

TEST_CASE("numeric Jacobian of a linear map is exact to rounding") {
  Eigen::Matrix3d m;
  m << 1, 2, 3, -4, 5, 6, 7, -8, 9.5;
  const Eigen::MatrixXd j =
      numeric_jacobian([&](const Eigen::VectorXd& x) { return Eigen::VectorXd(m * x); }, Eigen::Vector3d(0.3, -2, 7));
  CHECK((j - m).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("delta-method ratio SE") {
  CHECK(delta_ratio_se(1.0, 1.0, Eigen::Vector2d(0.3, 0.5).asDiagonal()) == doctest::Approx(std::sqrt(0.8)));
  CHECK(delta_ratio_se(2.0, 1.0, Eigen::Matrix2d::Identity()) == doctest::Approx(std::sqrt(5.0)));
  CHECK_THROWS_AS(delta_ratio_se(1.0, 0.0, Eigen::Matrix2d::Identity()), DomainError);

  // parametric-simulation oracle with correlated components
  const double l1 = 3.0, l0 = 2.0, n = 1e5;
  Eigen::Matrix2d v;
  v << 4.0, 1.5, 1.5, 2.0;
  const Eigen::Matrix2d cov = v / n;
  const Eigen::Matrix2d chol = cov.llt().matrixL();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  std::vector<double> ratios;
  for (int k = 0; k < 200000; ++k) {
    const Eigen::Vector2d draw = Eigen::Vector2d(l1, l0) + chol * Eigen::Vector2d(z(rng), z(rng));
    ratios.push_back(draw(0) / draw(1));
  }
  CHECK(delta_ratio_se(l1, l0, cov) == doctest::Approx(sd(ratios)).epsilon(0.01));
}

TEST_CASE("Wald intervals") {
  const auto [lo, hi] = wald_ci(1.27, 0.2964);
  CHECK(lo == doctest::Approx(0.689).epsilon(1e-3));
  CHECK(hi == doctest::Approx(1.851).epsilon(1e-3));
  const auto [a, b] = wald_ci(1.3, 0.0);
  CHECK(a == 1.3);
  CHECK(b == 1.3);
  const auto [u, w] = wald_ci(0.0, 1.0, 0.95);
  CHECK(u == doctest::Approx(-1.959963984540054).epsilon(1e-12));
  CHECK(w == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == 0.0);
  CHECK(normal_quantile(0.995) == doctest::Approx(2.5758293035489).epsilon(1e-12));
  CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902404).epsilon(1e-10));
  CHECK_THROWS_AS(wald_ci(1.0, -0.1), DomainError);
}

TEST_CASE("fixed-weight IPTW stack reproduces the estimator") {
  const Dataset d = make_dataset({1, 1, 0, 0}, {2, 4, 1, 3});
  const PropensityFit prop = known_propensity(d, Eigen::VectorXd::Constant(4, 0.5));
  const CmrEstimate est = cmr_iptw(d, prop);
  const EEStack stack = build_stack(est, WeightTreatment::Fixed, StackInputs{&d, &prop, nullptr});
  const Eigen::VectorXd solved = solve_stack(stack, Eigen::Vector2d(1.0, 1.0));
  CHECK(std::abs(solved(0) - est.lambda1) < 1e-9);
  CHECK(std::abs(solved(1) - est.lambda0) < 1e-9);
  CHECK(stack.target_value() == doctest::Approx(1.5));
}

TEST_CASE("every estimator zeroes its own stack") {
  const SimData sim = generate(SimScenario{}, 0);
  const Dataset& d = sim.data;
  DesignSpec w;
  w.mean_covariates = {"L1", "L2", "L3"};
  DesignSpec o = w;
  const PropensityFit prop = fit_propensity(d, w);
  const OutcomeFit out = fit_outcome(d, Family::Poisson, o);
  const double n = static_cast<double>(d.size());
  const StackInputs in{&d, &prop, &out};
  for (auto [est, t] : {std::pair{cmr_iptw(d, prop), WeightTreatment::Estimated},
                        std::pair{cmr_iptw(d, prop), WeightTreatment::Fixed},
                        std::pair{cmr_pg(out), WeightTreatment::NotApplicable},
                        std::pair{cmr_dr(d, prop, out), WeightTreatment::Estimated}}) {
    const EEStack stack = build_stack(est, t, in);
    CHECK(stack.residual().lpNorm<Eigen::Infinity>() < 1e-5 * n);
    CHECK(stack.target_value() == doctest::Approx(est.cmr).epsilon(1e-12));
  }

  const SimData hs = generate(SimScenario{.design = SimDesign::Heaping}, 0);
  DesignSpec hw;
  hw.mean_covariates = {"L4"};
  const PropensityFit hprop = fit_propensity(hs.data, hw);
  const HeapingModel heap{10, std::nullopt};
  const OutcomeFit marginal = fit_marginal_heaped(hs.data, hprop, Family::NegBin, heap);
  const OutcomeFit pg_heap = fit_outcome(hs.data, Family::Poisson, hw, heap);
  const OutcomeFit dr_heap = fit_dr_heap_outcome(hs.data, hprop, Family::Poisson, hw, heap);
  const double hn = static_cast<double>(hs.data.size());
  {
    const EEStack s = build_stack(cmr_iptw_heap(marginal), WeightTreatment::Estimated, {&hs.data, &hprop, &marginal});
    CHECK(s.residual().lpNorm<Eigen::Infinity>() < 1e-5 * hn);
  }
  {
    const EEStack s = build_stack(cmr_pg_heap(pg_heap), WeightTreatment::NotApplicable, {&hs.data, nullptr, &pg_heap});
    CHECK(s.residual().lpNorm<Eigen::Infinity>() < 1e-5 * hn);
  }
  {
    const EEStack s = build_stack(cmr_dr_heap(dr_heap), WeightTreatment::Estimated, {&hs.data, &hprop, &dr_heap});
    CHECK(s.residual().lpNorm<Eigen::Infinity>() < 1e-5 * hn);
  }
}

TEST_CASE("DR sandwich on eight rows matches a dense hand computation") {
  const Dataset d = make_dataset({1, 1, 1, 0, 1, 0, 0, 0}, {3, 5, 4, 2, 6, 1, 2, 3}, {{"x", {1, 1, 1, 1, 0, 0, 0, 0}}});
  Eigen::VectorXd e(8);
  e << 0.8, 0.8, 0.8, 0.8, 0.2, 0.2, 0.2, 0.2;
  DesignSpec s;
  s.mean_covariates = {"x", "A:x"};
  const PropensityFit prop = known_propensity(d, e);
  const OutcomeFit out = fit_outcome(d, Family::Poisson, s);
  const CmrEstimate est = cmr_dr(d, prop, out);
  const EEStack stack = build_stack(est, WeightTreatment::Fixed, {&d, &prop, &out});
  const SandwichResult sw = sandwich(stack);

  // parameters (gamma_0, gamma_x, gamma_Ax, gamma_A, lambda1, lambda0)
  const Eigen::VectorXd g = out.fit.estimates;
  Eigen::MatrixXd psi(8, 6), dpsi = Eigen::MatrixXd::Zero(6, 6);
  for (int i = 0; i < 8; ++i) {
    const double a = d.exposure(i), y = static_cast<double>(d.outcome(i)), x = d.covariate("x")(i);
    const Eigen::Vector4d xi(1, x, a * x, a), x1(1, x, x, 1), x0(1, x, 0, 0);
    const double mu = std::exp(xi.dot(g)), m1 = std::exp(x1.dot(g)), m0 = std::exp(x0.dot(g));
    psi.row(i).head<4>() = (y - mu) * xi.transpose();
    psi(i, 4) = (a * y - (a - e(i)) * m1) / e(i) - est.lambda1;
    psi(i, 5) = ((1 - a) * y + (a - e(i)) * m0) / (1 - e(i)) - est.lambda0;
    dpsi.block<4, 4>(0, 0) -= mu * xi * xi.transpose() / 8.0;
    dpsi.block<1, 4>(4, 0) -= ((a - e(i)) / e(i) * m1 * x1).transpose() / 8.0;
    dpsi.block<1, 4>(5, 0) += ((a - e(i)) / (1 - e(i)) * m0 * x0).transpose() / 8.0;
  }
  dpsi(4, 4) = -1.0;
  dpsi(5, 5) = -1.0;
  const Eigen::MatrixXd a_hand = -dpsi;
  const Eigen::MatrixXd b_hand = psi.transpose() * psi / 8.0;
  const Eigen::MatrixXd a_inv = a_hand.inverse();
  const Eigen::MatrixXd v_hand = a_inv * b_hand * a_inv.transpose();

  const Eigen::Index l1 = index_of(stack, "lambda1");
  REQUIRE(index_of(stack, "lambda0") == l1 + 1);
  CHECK((sw.V.block<2, 2>(l1, l1) - v_hand.block<2, 2>(4, 4)).lpNorm<Eigen::Infinity>() <
        1e-6 * v_hand.block<2, 2>(4, 4).lpNorm<Eigen::Infinity>());
}

TEST_CASE("singular bread") {
  Eigen::VectorXd y(50);
  for (Eigen::Index i = 0; i < 50; ++i) y(i) = static_cast<double>(i % 7);
  EEStack stack;
  stack.names = {"lambda1", "lambda0", "idle"};
  stack.theta_hat = Eigen::Vector3d(y.mean(), 1.0, 0.0);
  stack.psi = [&](const Eigen::VectorXd& t) {
    Eigen::MatrixXd m(50, 3);
    m.col(0) = (y.array() - t(0)).matrix();
    m.col(1) = Eigen::VectorXd::Constant(50, 1.0 - t(1));
    m.col(2).setZero();  // a parameter no equation depends on
    return m;
  };
  CHECK_THROWS_AS(sandwich(stack), SingularBreadError);
  const SandwichResult s = sandwich(stack, SingularBread::FixNuisance);
  REQUIRE(s.held_fixed.size() == 1);
  CHECK(s.held_fixed[0] == "idle");
  CHECK(s.V(2, 2) == 0.0);
  CHECK(s.V(0, 0) == doctest::Approx((y.array() - y.mean()).square().mean()).epsilon(1e-9));
}

TEST_CASE("fixed weights give larger IPTW standard errors than estimated weights") {
  const AnalysisSpec spec = partners_spec({{Method::IPTW, WeightTreatment::Fixed}, {Method::IPTW, WeightTreatment::Estimated}});
  SimScenario scenario;
  std::vector<double> fixed, estimated;
  int ordered = 0;
  const int reps = 500;
  for (int r = 0; r < reps; ++r) {
    const AnalysisResult res = run_analysis(generate(scenario, r).data, spec);
    const auto* f = res.find(Method::IPTW, WeightTreatment::Fixed);
    const auto* e = res.find(Method::IPTW, WeightTreatment::Estimated);
    REQUIRE(f);
    REQUIRE(e);
    REQUIRE(f->ok);
    REQUIRE(e->ok);
    fixed.push_back(f->estimate.se);
    estimated.push_back(e->estimate.se);
    if (f->estimate.se >= e->estimate.se) ++ordered;
  }
  CHECK(median(fixed) > median(estimated));
  CHECK(ordered >= static_cast<int>(0.95 * reps));
}

TEST_CASE("sandwich SE agrees with the nonparametric bootstrap") {
  const Dataset d = generate(SimScenario{}, 7).data;
  const AnalysisSpec spec = partners_spec({{Method::IPTW, WeightTreatment::Estimated},
                                           {Method::PG, WeightTreatment::NotApplicable},
                                           {Method::DR, WeightTreatment::Estimated}});
  const AnalysisResult full = run_analysis(d, spec);
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<Eigen::Index> pick(0, d.size() - 1);
  std::vector<std::vector<double>> boot(spec.requests.size());
  for (int b = 0; b < 500; ++b) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(d.size()));
    for (auto& i : idx) i = pick(rng);
    AnalysisSpec point = spec;
    const AnalysisResult res = run_analysis(d.rows(idx), point);
    for (std::size_t k = 0; k < res.methods.size(); ++k)
      if (res.methods[k].ok) boot[k].push_back(res.methods[k].estimate.cmr);
  }
  for (std::size_t k = 0; k < full.methods.size(); ++k) {
    CAPTURE(method_name(full.methods[k].request.method));
    REQUIRE(full.methods[k].ok);
    CHECK(boot[k].size() >= 490);
    const double ratio = full.methods[k].estimate.se / sd(boot[k]);
    CHECK(ratio > 0.85);
    CHECK(ratio < 1.15);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cmr/model_core.hpp"

using namespace cmr;

namespace {

// Independent NB mass with size r and success probability p.
double nb_reference(double mu, double theta, int y) {
  const double r = 1.0 / theta;
  const double p = r / (r + mu);
  double coef = 1.0;  // Gamma(y + r) / (Gamma(r) y!) as a running product
  for (int j = 0; j < y; ++j) coef *= (r + j) / (j + 1);
  return coef * std::pow(p, r) * std::pow(1.0 - p, y);
}

double poisson_reference(double mu, int y) {
  double f = std::exp(-mu);
  for (int j = 1; j <= y; ++j) f *= mu / j;
  return f;
}

// Smallest multiple of `eta` above mu + k sd.
std::int64_t tail_bound(Family f, const CountParams<double>& p, std::int64_t eta = 10, double k = 20.0) {
  const double top = p.mu + k * std::sqrt(variance(f, p));
  return (static_cast<std::int64_t>(top) / eta + 1) * eta;
}

struct Case {
  Family family;
  CountParams<double> p;
};

const std::vector<Case> kGrid{
    {Family::Poisson, {0.3, 0.0, 0.0}}, {Family::Poisson, {4.0, 0.0, 0.0}}, {Family::Poisson, {37.5, 0.0, 0.0}},
    {Family::NegBin, {2.0, 0.0, 0.5}},  {Family::NegBin, {12.0, 0.0, 0.5}}, {Family::NegBin, {0.7, 0.0, 0.05}},
    {Family::ZIP, {2.0, 0.3, 0.0}},     {Family::ZIP, {15.0, 0.6, 0.0}},    {Family::ZINB, {8.0, 0.25, 0.5}},
    {Family::ZINB, {3.0, 0.1, 0.3}},
};

// Strong overdispersion: the geometric-like tail outlives 20 sd, so these are
// normalized over a wider window.
const std::vector<Case> kHeavy{
    {Family::NegBin, {12.0, 0.0, 1.5}},
    {Family::ZINB, {3.0, 0.1, 2.0}},
};

}  // namespace

TEST_CASE("pmf closed forms") {
  CHECK(pmf(Family::Poisson, CountParams<double>{1.0, 0.0, 0.0}, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(pmf(Family::ZIP, CountParams<double>{2.0, 0.3, 0.0}, 0) ==
        doctest::Approx(0.3 + 0.7 * std::exp(-2.0)).epsilon(1e-14));
  // size 2, prob 1/2: Gamma(5) / (Gamma(2) 3!) 2^-5 = 1/8
  CHECK(nb_reference(2.0, 0.5, 3) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(pmf(Family::NegBin, CountParams<double>{2.0, 0.0, 0.5}, 3) == doctest::Approx(0.125).epsilon(1e-13));
}

TEST_CASE("pmf agrees with series references away from the simple cases") {
  for (int y : {0, 1, 5, 17, 40}) {
    CHECK(pmf(Family::Poisson, CountParams<double>{9.3, 0.0, 0.0}, y) ==
          doctest::Approx(poisson_reference(9.3, y)).epsilon(1e-12));
    CHECK(pmf(Family::NegBin, CountParams<double>{6.0, 0.0, 0.8}, y) ==
          doctest::Approx(nb_reference(6.0, 0.8, y)).epsilon(1e-12));
    const double zinb = (y == 0 ? 0.2 : 0.0) + 0.8 * nb_reference(6.0, 0.8, y);
    CHECK(pmf(Family::ZINB, CountParams<double>{6.0, 0.2, 0.8}, y) == doctest::Approx(zinb).epsilon(1e-12));
  }
}

TEST_CASE("log-space evaluation survives large counts") {
  const double lp = log_pmf(Family::Poisson, CountParams<double>{2.0, 0.0, 0.0}, 400);
  CHECK(std::isfinite(lp));
  CHECK(lp == doctest::Approx(400 * std::log(2.0) - 2.0 - std::lgamma(401.0)).epsilon(1e-12));
}

TEST_CASE("conditional means") {
  CHECK(conditional_mean(Family::Poisson, CountParams<double>{3.0, 0.0, 0.0}) == 3.0);
  CHECK(conditional_mean(Family::ZIP, CountParams<double>{4.0, 0.5, 0.0}) == 2.0);
  CHECK(conditional_mean(Family::ZINB, CountParams<double>{8.0, 0.25, 0.5}) == 6.0);
  for (const auto& c : kGrid)
    CHECK(conditional_mean(c.family, c.p) == (is_zero_inflated(c.family) ? (1.0 - c.p.nu) * c.p.mu : c.p.mu));
}

TEST_CASE("tail mass beyond the truncation bound is negligible") {
  for (const auto& c : kGrid) {
    const std::int64_t ymax = tail_bound(c.family, c.p);
    double total = 0.0;
    for (std::int64_t y = 0; y <= ymax; ++y) total += pmf(c.family, c.p, y);
    CHECK(std::abs(1.0 - total) < 1e-10);
  }
  for (const auto& c : kHeavy) {
    const std::int64_t ymax = tail_bound(c.family, c.p, 10, 60.0);
    double total = 0.0;
    for (std::int64_t y = 0; y <= ymax; ++y) total += pmf(c.family, c.p, y);
    CHECK(std::abs(1.0 - total) < 1e-10);
  }
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(pmf(Family::Poisson, CountParams<double>{-1.0, 0.0, 0.0}, 0), DomainError);
  CHECK_THROWS_AS(pmf(Family::ZIP, CountParams<double>{1.0, 1.5, 0.0}, 0), DomainError);
  CHECK_THROWS_AS(pmf(Family::NegBin, CountParams<double>{1.0, 0.0, -0.1}, 0), DomainError);
  CHECK(pmf(Family::Poisson, CountParams<double>{1.0, 0.0, 0.0}, -1) == 0.0);
}

TEST_CASE("rounding to the grid") {
  static_assert(round_to_grid(23, 10) == 20);
  static_assert(round_to_grid(15, 10) == 20);
  static_assert(round_to_grid(20, 1) == 20);
  CHECK(round_to_grid(4, 10) == 0);
  CHECK(round_to_grid(5, 10) == 10);
  CHECK(round_to_grid(2, 5) == 0);
  CHECK(round_to_grid(3, 5) == 5);
  CHECK_THROWS_AS(round_to_grid(3, 0), DomainError);
}

TEST_CASE("grid preimages partition the counts") {
  for (std::int64_t eta : {1, 2, 5, 10, 7}) {
    std::vector<int> hits(200, 0);
    for (std::int64_t yh = 0; yh < 260; ++yh) {
      const Preimage pre = grid_preimage(yh, eta);
      for (std::int64_t y = pre.lo; y <= pre.hi; ++y) {
        CHECK(round_to_grid(y, eta) == yh);
        if (y < 200) ++hits[static_cast<std::size_t>(y)];
      }
    }
    for (int h : hits) CHECK(h == 1);
  }
  CHECK(grid_preimage(0, 10).lo == 0);
  CHECK(grid_preimage(0, 10).hi == 4);
  CHECK(grid_preimage(20, 10).lo == 15);
  CHECK(grid_preimage(20, 10).hi == 24);
  CHECK(grid_preimage(13, 10).empty());
}

TEST_CASE("heaped mass limits") {
  for (const auto& c : kGrid) {
    for (std::int64_t k = 0; k < 60; ++k) {
      const double f = pmf(c.family, c.p, k);
      CHECK(std::abs(heaped_mass(k, c.family, c.p, HeapingSpec{10, 1.0}) - f) <= 1e-14);
      CHECK(std::abs(heaped_mass(k, c.family, c.p, HeapingSpec{1, 0.4}) - f) <= 1e-14);
    }
  }
}

TEST_CASE("heaped mass at zero by preimage enumeration") {
  const CountParams<double> p{2.0, 0.0, 0.0};
  double round = 0.0;
  for (int y = 0; y <= 4; ++y) round += poisson_reference(2.0, y);
  const double expected = 0.4 * poisson_reference(2.0, 0) + 0.6 * round;
  CHECK(heaped_mass(0, Family::Poisson, p, HeapingSpec{10, 0.4}) == doctest::Approx(expected).epsilon(1e-14));
  // off-grid values can only be exact reports
  CHECK(heaped_mass(7, Family::Poisson, p, HeapingSpec{10, 0.4}) ==
        doctest::Approx(0.4 * poisson_reference(2.0, 7)).epsilon(1e-14));
}

TEST_CASE("heaped mass conserves total probability") {
  for (const auto& c : kGrid) {
    for (double pi : {0.0, 0.4, 0.9}) {
      for (std::int64_t eta : {5, 10}) {
        const std::int64_t ymax = tail_bound(c.family, c.p, eta) + eta;
        double total = 0.0;
        for (std::int64_t yh = 0; yh <= ymax; ++yh) total += heaped_mass(yh, c.family, c.p, HeapingSpec{eta, pi});
        CHECK(std::abs(1.0 - total) < 1e-10);
      }
    }
  }
  for (const auto& c : kHeavy) {
    const std::int64_t ymax = tail_bound(c.family, c.p, 10, 60.0) + 10;
    double total = 0.0;
    for (std::int64_t yh = 0; yh <= ymax; ++yh) total += heaped_mass(yh, c.family, c.p, HeapingSpec{10, 0.4});
    CHECK(std::abs(1.0 - total) < 1e-10);
  }
}

TEST_CASE("heaped log-likelihood") {
  const CountParams<double> p{2.0, 0.0, 0.0};
  const HeapingSpec exact{10, 1.0};
  const std::vector<std::int64_t> one{3};
  const std::vector<CountParams<double>> one_p{p};
  CHECK(heaped_loglik<double>(one, one_p, Family::Poisson, exact) ==
        doctest::Approx(log_pmf(Family::Poisson, p, 3)).epsilon(1e-15));

  const HeapingSpec heap{10, 0.4};
  const std::vector<std::int64_t> two{10, 10};
  const std::vector<CountParams<double>> two_p{p, p};
  const std::vector<std::int64_t> single{10};
  CHECK(heaped_loglik<double>(two, two_p, Family::Poisson, heap) ==
        doctest::Approx(2.0 * heaped_loglik<double>(single, one_p, Family::Poisson, heap)).epsilon(1e-15));

  // direct summation over the preimages by hand
  const std::vector<std::int64_t> y{0, 2, 10, 3, 0};
  const std::vector<CountParams<double>> ps(5, p);
  double oracle = 0.0;
  for (std::int64_t v : y) {
    double mass = 0.4 * poisson_reference(2.0, static_cast<int>(v));
    if (v % 10 == 0) {
      const int lo = v == 0 ? 0 : static_cast<int>(v) - 5;
      for (int k = lo; k <= static_cast<int>(v) + 4; ++k) mass += 0.6 * poisson_reference(2.0, k);
    }
    oracle += std::log(mass);
  }
  CHECK(heaped_loglik<double>(y, ps, Family::Poisson, heap) == doctest::Approx(oracle).epsilon(1e-13));

  // an off-grid report cannot occur when every count is rounded
  const std::vector<std::int64_t> bad{3};
  CHECK_THROWS_AS(heaped_loglik<double>(bad, one_p, Family::Poisson, HeapingSpec{10, 0.0}), FitInfeasible);
}

TEST_CASE("link-scale gradient of the log mass") {
  for (const auto& c : kGrid) {
    for (std::int64_t y : {0, 1, 4, 10, 20}) {
      const auto g = log_heaped_mass_gradient(y, c.family, c.p, HeapingSpec{10, 0.4});
      const double h = 1e-6;
      auto shifted = [&](double dmu, double dnu, double dth, double dpi) {
        CountParams<double> q = c.p;
        q.mu = c.p.mu * std::exp(dmu);
        if (is_zero_inflated(c.family)) {
          const double z = std::log(c.p.nu / (1 - c.p.nu)) + dnu;
          q.nu = 1.0 / (1.0 + std::exp(-z));
        }
        if (has_dispersion(c.family)) q.theta = c.p.theta * std::exp(dth);
        const double zp = std::log(0.4 / 0.6) + dpi;
        return log_heaped_mass_gradient(y, c.family, q, HeapingSpec{10, 1.0 / (1.0 + std::exp(-zp))}).log_mass;
      };
      CHECK(g.d_log_mu == doctest::Approx((shifted(h, 0, 0, 0) - shifted(-h, 0, 0, 0)) / (2 * h)).epsilon(1e-6));
      CHECK(g.d_logit_pi == doctest::Approx((shifted(0, 0, 0, h) - shifted(0, 0, 0, -h)) / (2 * h)).epsilon(1e-6));
      if (is_zero_inflated(c.family))
        CHECK(g.d_logit_nu == doctest::Approx((shifted(0, h, 0, 0) - shifted(0, -h, 0, 0)) / (2 * h)).epsilon(1e-6));
      if (has_dispersion(c.family))
        CHECK(g.d_log_theta == doctest::Approx((shifted(0, 0, h, 0) - shifted(0, 0, -h, 0)) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("templated on the scalar type") {
  const CountParams<long double> p{2.0L, 0.0L, 0.5L};
  CHECK(static_cast<double>(pmf(Family::NegBin, p, 3)) == doctest::Approx(0.125).epsilon(1e-15));
  const CountParams<float> q{1.0f, 0.0f, 0.0f};
  CHECK(pmf(Family::Poisson, q, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
}

#pragma once

// Small helpers shared by the unit tests.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cmr/dataset.hpp"
#include "cmr/model_core.hpp"

namespace cmr::test {

inline Dataset make_dataset(const std::vector<double>& a, const std::vector<std::int64_t>& y,
                            const std::vector<std::pair<std::string, std::vector<double>>>& covariates = {}) {
  Dataset d;
  const auto n = static_cast<Eigen::Index>(a.size());
  d.exposure = Eigen::Map<const Eigen::VectorXd>(a.data(), n);
  d.outcome = Eigen::Map<const CountVector>(y.data(), n);
  d.covariates.resize(n, static_cast<Eigen::Index>(covariates.size()));
  for (std::size_t j = 0; j < covariates.size(); ++j) {
    d.covariate_names.push_back(covariates[j].first);
    d.covariates.col(static_cast<Eigen::Index>(j)) =
        Eigen::Map<const Eigen::VectorXd>(covariates[j].second.data(), n);
  }
  d.validate();
  return d;
}

/// Confounded Poisson data: L ~ N(0, 1), logit e = 0.3 L, log mu = 0.2 + 0.5 A + 0.4 L.
inline Dataset confounded_poisson(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<double> a, l;
  std::vector<std::int64_t> y;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double li = z(rng);
    const double e = 1.0 / (1.0 + std::exp(-0.3 * li));
    const double ai = std::bernoulli_distribution(e)(rng) ? 1.0 : 0.0;
    y.push_back(std::poisson_distribution<std::int64_t>(std::exp(0.2 + 0.5 * ai + 0.4 * li))(rng));
    a.push_back(ai);
    l.push_back(li);
  }
  return make_dataset(a, y, {{"L", l}});
}

/// Well-identified counts of any family: log mu = 1 + 0.5 A + 0.4 L, NB
/// dispersion 0.5, structural zeros with logit nu = -1 + 0.5 L.
inline Dataset confounded_counts(Eigen::Index n, Family family, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::gamma_distribution<double> frailty(2.0, 0.5);
  std::vector<double> a, l;
  std::vector<std::int64_t> y;
  const bool zi = family == Family::ZIP || family == Family::ZINB;
  const bool nb = family == Family::NegBin || family == Family::ZINB;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double li = z(rng);
    const double ai = std::bernoulli_distribution(1.0 / (1.0 + std::exp(-0.3 * li)))(rng) ? 1.0 : 0.0;
    double mu = std::exp(1.0 + 0.5 * ai + 0.4 * li);
    if (nb) mu *= frailty(rng);
    std::int64_t yi = std::poisson_distribution<std::int64_t>(mu)(rng);
    if (zi && std::bernoulli_distribution(1.0 / (1.0 + std::exp(1.0 - 0.5 * li)))(rng)) yi = 0;
    y.push_back(yi);
    a.push_back(ai);
    l.push_back(li);
  }
  return make_dataset(a, y, {{"L", l}});
}

}  // namespace cmr::test

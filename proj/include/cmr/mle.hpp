#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cmr/dataset.hpp"
#include "cmr/model_core.hpp"
#include "cmr/optimizer.hpp"

namespace cmr {

/// Outcome of a maximum-likelihood fit. `estimates` are on the optimizer's
/// unconstrained scale (dispersion as log theta, exact-report probability as
/// logit pi); the natural-scale values are mirrored in `dispersion` and `pi`.
struct FitResult {
  Eigen::VectorXd estimates;
  std::vector<std::string> names;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::string message;
  std::vector<std::string> warnings;
  std::optional<double> dispersion;
  std::optional<double> pi;

  Eigen::Index n_params() const noexcept { return estimates.size(); }
};

/// Bernoulli likelihood with logit link, optionally weighted.
class LogisticModel {
 public:
  LogisticModel(Eigen::MatrixXd x, Eigen::VectorXd a);

  const Eigen::MatrixXd& design() const noexcept { return x_; }
  const Eigen::VectorXd& response() const noexcept { return a_; }
  Eigen::Index n_params() const noexcept { return x_.cols(); }

  Eigen::VectorXd fitted(const Eigen::VectorXd& alpha) const;
  double loglik(const Eigen::VectorXd& alpha) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& alpha) const;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& alpha) const;
  /// Per-observation scores, n x p.
  Eigen::MatrixXd scores(const Eigen::VectorXd& alpha) const;

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd a_;
};

/// Heaping block of a count model: the grid width is known; the exact-report
/// probability is estimated unless `fixed_pi` pins it.
struct HeapingModel {
  std::int64_t eta = 1;
  std::optional<double> fixed_pi;
};

/// Count-outcome likelihood for one of the four families, optionally with the
/// heaped-report mixture and per-row weights.
///
/// Parameter layout: mean-part coefficients, susceptibility-part coefficients
/// (zero-inflated families), log theta (NB/ZINB), logit pi (heaped, unless
/// pinned).
class CountModel {
 public:
  struct Layout {
    Eigen::Index n_mean = 0;
    Eigen::Index zero_begin = 0;
    Eigen::Index n_zero = 0;
    std::optional<Eigen::Index> log_theta;
    std::optional<Eigen::Index> logit_pi;
    Eigen::Index size = 0;
  };

  CountModel(Family family, DesignMatrices design, CountVector y, std::optional<HeapingModel> heaping = std::nullopt,
             Eigen::VectorXd weights = {});

  Family family() const noexcept { return family_; }
  const std::optional<HeapingModel>& heaping() const noexcept { return heaping_; }
  const DesignMatrices& design() const noexcept { return design_; }
  const CountVector& outcome() const noexcept { return y_; }
  const Eigen::VectorXd& weights() const noexcept { return w_; }
  const Layout& layout() const noexcept { return layout_; }
  Eigen::Index n_params() const noexcept { return layout_.size; }
  Eigen::Index n_obs() const noexcept { return y_.size(); }
  std::vector<std::string> parameter_names() const;

  /// Same likelihood on another design (same column layout).
  CountModel with_design(DesignMatrices design) const;
  /// Same design and weights under another family / heaping block.
  CountModel with_family(Family family, std::optional<HeapingModel> heaping) const;

  CountParams<double> row_params(const Eigen::VectorXd& theta, const DesignMatrices& x, Eigen::Index i) const;
  double pi(const Eigen::VectorXd& theta) const;

  /// Weighted log-likelihood; -inf where parameters leave the domain.
  double loglik(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd row_loglik(const Eigen::VectorXd& theta) const;
  /// Weighted score.
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const;
  /// Unweighted per-observation scores, n x p.
  Eigen::MatrixXd scores(const Eigen::VectorXd& theta) const;
  /// Closed-form Hessian where available (plain Poisson), else nullopt.
  std::optional<Eigen::MatrixXd> analytic_hessian(const Eigen::VectorXd& theta) const;

  /// E(Y | row) of the true (un-heaped) count for every row of `x`.
  Eigen::VectorXd conditional_means(const Eigen::VectorXd& theta, const DesignMatrices& x) const;

 private:
  std::vector<LogMassGradient<double>> evaluate(const Eigen::VectorXd& theta, bool with_gradient) const;

  Family family_;
  DesignMatrices design_;
  CountVector y_;
  std::optional<HeapingModel> heaping_;
  Eigen::VectorXd w_;
  Layout layout_;
};

FitResult fit_logistic(const LogisticModel& model, const OptimizerOptions& options = {});
/// Propensity model logit Pr(A = 1 | L) on intercept + `covariates.mean_covariates`.
FitResult fit_logistic(const Dataset& data, const DesignSpec& covariates, const OptimizerOptions& options = {});

/// Fits `model` from data-driven starting values (see fit_count / fit_heaped).
FitResult fit_model(const CountModel& model, const OptimizerOptions& options = {});
/// Fits `model` from an explicit start.
FitResult fit_model(const CountModel& model, const Eigen::VectorXd& start, const OptimizerOptions& options = {});

FitResult fit_count(const Dataset& data, Family family, const DesignSpec& design,
                    const std::optional<Eigen::VectorXd>& weights = std::nullopt, const OptimizerOptions& options = {});
FitResult fit_heaped(const Dataset& data, Family family, const DesignSpec& design, const HeapingModel& heap,
                     const std::optional<Eigen::VectorXd>& weights = std::nullopt,
                     const OptimizerOptions& options = {});

/// 2k - 2 loglik, with k the number of free parameters unless given.
double aic(const FitResult& fit, std::optional<Eigen::Index> k = std::nullopt);

double expit(double x) noexcept;
double logit(double p) noexcept;

}  // namespace cmr

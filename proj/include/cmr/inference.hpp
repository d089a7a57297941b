#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cmr/dataset.hpp"
#include "cmr/estimators.hpp"

namespace cmr {

/// Which function of the stacked parameters is the reported CMR.
enum class TargetKind {
  MeanRatio,            ///< theta[t] / theta[t + 1]  (lambda1 / lambda0)
  LogRatioCoefficient,  ///< exp(theta[t])            (delta1 of a log-linear marginal model)
};

/// A stacked M-estimator: per-observation estimating functions psi(O_i; theta)
/// whose column sums vanish at `theta_hat`.
struct EEStack {
  std::vector<std::string> names;
  Eigen::VectorXd theta_hat;
  /// Returns the n x p matrix whose row i is psi(O_i; theta).
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> psi;
  TargetKind target = TargetKind::MeanRatio;
  Eigen::Index target_index = 0;

  Eigen::Index size() const noexcept { return theta_hat.size(); }
  /// Sum over observations of psi at `theta`.
  Eigen::VectorXd residual(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd residual() const { return residual(theta_hat); }
  double target_value() const;
};

struct SandwichResult {
  Eigen::MatrixXd A;           ///< bread, n^-1 sum of -d psi / d theta
  Eigen::MatrixXd B;           ///< meat, n^-1 sum of psi psi^T
  Eigen::MatrixXd V;           ///< A^-1 B A^-T
  Eigen::MatrixXd covariance;  ///< V / n
  double se_cmr = 0.0;
  /// Parameters held at their estimates to make the bread invertible (see
  /// SingularBread::FixNuisance); their rows and columns of V are zero.
  std::vector<std::string> held_fixed;
};

/// What to do when the bread's condition number exceeds 1e10.
enum class SingularBread {
  Throw,
  /// Repeatedly hold fixed the non-target parameter that loads most on the
  /// near-null direction (typically a susceptibility coefficient diverging
  /// under quasi-separation) until the rest is well conditioned. Throws if
  /// the target block itself is involved.
  FixNuisance,
};

/// Central-difference Jacobian of f at x, step cbrt(eps) (1 + |x_j|).
Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x);

/// Empirical sandwich at `theta` (defaults to the stack's solution).
/// Throws SingularBreadError when the bread's condition number exceeds 1e10.
SandwichResult sandwich(const EEStack& stack, SingularBread policy = SingularBread::Throw);
SandwichResult sandwich(const EEStack& stack, const Eigen::VectorXd& theta, SingularBread policy = SingularBread::Throw);

/// sqrt(g V g^T), g = (1 / lambda0, -lambda1 / lambda0^2).
double delta_ratio_se(double lambda1, double lambda0, const Eigen::Matrix2d& cov);

/// Standard normal quantile.
double normal_quantile(double p);

/// estimate -/+ z se, symmetric on the CMR scale.
std::pair<double, double> wald_ci(double estimate, double se, double level = 0.95);

/// Newton solve of sum_i psi(O_i; theta) = 0 from `start`, numeric Jacobian.
Eigen::VectorXd solve_stack(const EEStack& stack, Eigen::VectorXd start, int max_iterations = 100, double tol = 1e-10);

/// The fitted components a stack is assembled from. Pointers may be null
/// for components a method does not use.
struct StackInputs {
  const Dataset* data = nullptr;
  const PropensityFit* propensity = nullptr;
  const OutcomeFit* outcome = nullptr;
};

/// Estimating-equation stack for `estimate.method` under `treatment`.
/// Fixed treatment holds the weights (or the signed-weight covariate) at their
/// fitted values; estimated treatment stacks the logistic scores on top.
EEStack build_stack(const CmrEstimate& estimate, WeightTreatment treatment, const StackInputs& inputs);

/// Fills se / ci_low / ci_high from the stack's sandwich, holding diverged
/// nuisance parameters fixed (with a warning) if the bread is singular.
CmrEstimate with_inference(CmrEstimate estimate, const EEStack& stack, double level = 0.95);

}  // namespace cmr

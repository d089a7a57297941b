#pragma once

#include <functional>
#include <string>

#include <Eigen/Core>

namespace cmr {

struct OptimizerOptions {
  int max_iterations = 500;
  double rel_loglik_tol = 1e-9;
  double gradient_tol = 1e-5;
  /// Largest coordinate move of a single Newton step.
  double max_step = 5.0;
};

/// A smooth objective to maximize. When `hessian` is empty it is formed by
/// forward differences of `gradient`.
struct Objective {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hessian;
};

struct OptimizerResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

/// Levenberg-damped Newton ascent with backtracking line search.
///
/// Converges when the relative change of the objective falls below
/// `rel_loglik_tol` and the gradient max-norm falls below `gradient_tol`.
/// A stalled search whose gradient is below `gradient_tol * (1 + |value|)`
/// is also reported as converged.
OptimizerResult maximize(const Objective& objective, Eigen::VectorXd start, const OptimizerOptions& options = {});

/// Forward-difference Jacobian of `gradient` at `x`, symmetrized.
Eigen::MatrixXd numeric_hessian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& gradient,
                                const Eigen::VectorXd& x, const Eigen::VectorXd& g0);

}  // namespace cmr

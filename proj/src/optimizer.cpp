#include "cmr/optimizer.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

namespace cmr {

Eigen::MatrixXd numeric_hessian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& gradient,
                                const Eigen::VectorXd& x, const Eigen::VectorXd& g0) {
  const Eigen::Index p = x.size();
  const double root_eps = std::sqrt(std::numeric_limits<double>::epsilon());
  Eigen::MatrixXd h(p, p);
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < p; ++j) {
    const double step = root_eps * (1.0 + std::abs(x(j)));
    xp(j) = x(j) + step;
    h.col(j) = (gradient(xp) - g0) / step;
    xp(j) = x(j);
  }
  return 0.5 * (h + h.transpose());
}

OptimizerResult maximize(const Objective& objective, Eigen::VectorXd start, const OptimizerOptions& options) {
  OptimizerResult res;
  res.x = std::move(start);
  res.value = objective.value(res.x);
  if (!std::isfinite(res.value)) {
    res.message = "objective is not finite at the starting point";
    return res;
  }
  res.gradient = objective.gradient(res.x);

  double last_change = std::numeric_limits<double>::infinity();
  double damping = 0.0;
  for (int it = 0; it < options.max_iterations; ++it) {
    res.iterations = it;
    if (!res.gradient.allFinite()) {
      res.message = "non-finite gradient";
      return res;
    }
    const double gmax = res.gradient.lpNorm<Eigen::Infinity>();
    if (gmax < options.gradient_tol && last_change < options.rel_loglik_tol) {
      res.converged = true;
      return res;
    }

    const Eigen::MatrixXd hess =
        objective.hessian ? objective.hessian(res.x) : numeric_hessian(objective.gradient, res.x, res.gradient);
    const Eigen::MatrixXd curvature = -0.5 * (hess + hess.transpose());
    double scale = curvature.diagonal().cwiseAbs().maxCoeff();
    if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;

    bool accepted = false;
    double mu = damping;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      Eigen::MatrixXd m = curvature;
      m.diagonal().array() += mu * scale;
      Eigen::LLT<Eigen::MatrixXd> llt(m);
      if (llt.info() != Eigen::Success || !curvature.allFinite()) {
        mu = mu == 0.0 ? 1e-8 : mu * 10.0;
        continue;
      }
      Eigen::VectorXd dir = llt.solve(res.gradient);
      const double dmax = dir.lpNorm<Eigen::Infinity>();
      if (!std::isfinite(dmax)) {
        mu = mu == 0.0 ? 1e-8 : mu * 10.0;
        continue;
      }
      if (dmax > options.max_step) dir *= options.max_step / dmax;
      const double slope = res.gradient.dot(dir);
      // Near the optimum the predicted gain drops below the rounding noise of
      // the objective; a step that loses no more than that noise is accepted.
      const double noise = 1e-12 * (1.0 + std::abs(res.value));
      const double slack = slope < noise ? noise : 0.0;
      double t = 1.0;
      for (int ls = 0; ls < 30; ++ls) {
        const Eigen::VectorXd trial = res.x + t * dir;
        const double value = objective.value(trial);
        if (std::isfinite(value) && value >= res.value + 1e-4 * t * slope - slack) {
          last_change = std::abs(value - res.value) / (1.0 + std::abs(res.value));
          res.x = trial;
          res.value = value;
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) mu = mu == 0.0 ? 1e-8 : mu * 10.0;
    }

    if (!accepted) {
      if (gmax < options.gradient_tol * (1.0 + std::abs(res.value))) {
        res.converged = true;
        res.message = "stalled within relative gradient tolerance";
      } else {
        res.message = "line search failed to improve the objective";
      }
      return res;
    }
    damping = mu < 1e-7 ? 0.0 : mu / 10.0;
    res.gradient = objective.gradient(res.x);
  }
  res.iterations = options.max_iterations;
  res.message = "maximum iterations reached";
  return res;
}

}  // namespace cmr

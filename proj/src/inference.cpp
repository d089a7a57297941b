#include "cmr/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "cmr/errors.hpp"

namespace cmr {

Eigen::VectorXd EEStack::residual(const Eigen::VectorXd& theta) const {
  return psi(theta).colwise().sum().transpose();
}

double EEStack::target_value() const {
  if (target == TargetKind::MeanRatio) return theta_hat(target_index) / theta_hat(target_index + 1);
  return std::exp(theta_hat(target_index));
}

Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x) {
  const double h0 = std::cbrt(std::numeric_limits<double>::epsilon());
  const Eigen::Index p = x.size();
  Eigen::MatrixXd jac;
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < p; ++j) {
    const double h = h0 * (1.0 + std::abs(x(j)));
    xp(j) = x(j) + h;
    const Eigen::VectorXd up = f(xp);
    xp(j) = x(j) - h;
    const Eigen::VectorXd down = f(xp);
    xp(j) = x(j);
    if (j == 0) jac.resize(up.size(), p);
    jac.col(j) = (up - down) / (2.0 * h);
  }
  return jac;
}

SandwichResult sandwich(const EEStack& stack, SingularBread policy) { return sandwich(stack, stack.theta_hat, policy); }

namespace {

struct Conditioning {
  double cond;
  Eigen::VectorXd null_dir;
};

Conditioning conditioning(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const Eigen::Index last = sv.size() - 1;
  return {sv(last) > 0.0 ? sv(0) / sv(last) : std::numeric_limits<double>::infinity(), svd.matrixV().col(last)};
}

std::string parameter_name(const EEStack& stack, Eigen::Index j) {
  const auto k = static_cast<std::size_t>(j);
  return k < stack.names.size() ? stack.names[k] : "theta[" + std::to_string(j) + "]";
}

}  // namespace

SandwichResult sandwich(const EEStack& stack, const Eigen::VectorXd& theta, SingularBread policy) {
  const Eigen::MatrixXd psi = stack.psi(theta);
  const auto n = static_cast<double>(psi.rows());
  const Eigen::Index p = theta.size();
  if (psi.cols() != p) throw EstimationError("estimating-function dimension differs from parameter dimension");
  if (!psi.allFinite()) throw EstimationError("estimating functions are not finite at the solution");

  SandwichResult out;
  out.B = psi.transpose() * psi / n;
  out.A = -numeric_jacobian(
      [&](const Eigen::VectorXd& t) { return Eigen::VectorXd(stack.psi(t).colwise().mean().transpose()); }, theta);

  const Eigen::Index t = stack.target_index;
  const Eigen::Index t_end = t + (stack.target == TargetKind::MeanRatio ? 2 : 1);
  std::vector<Eigen::Index> keep(static_cast<std::size_t>(p));
  std::iota(keep.begin(), keep.end(), Eigen::Index{0});

  for (;;) {
    const auto k = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXd a(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j) a(i, j) = out.A(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]);
    const Conditioning c = conditioning(a);
    if (c.cond <= 1e10) break;

    // Parameter loading most on the near-null direction.
    Eigen::Index worst = 0;
    c.null_dir.cwiseAbs().maxCoeff(&worst);
    const Eigen::Index worst_param = keep[static_cast<std::size_t>(worst)];
    const bool in_target = worst_param >= t && worst_param < t_end;
    if (policy == SingularBread::Throw || in_target || k <= t_end - t) {
      std::ostringstream msg;
      msg << "bread matrix is singular (condition number " << c.cond << "); near-null direction involves:";
      for (Eigen::Index j = 0; j < k; ++j)
        if (std::abs(c.null_dir(j)) > 0.2) msg << ' ' << parameter_name(stack, keep[static_cast<std::size_t>(j)]);
      throw SingularBreadError(msg.str());
    }
    out.held_fixed.push_back(parameter_name(stack, worst_param));
    keep.erase(keep.begin() + worst);
  }

  const auto k = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd a(k, k), b(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      a(i, j) = out.A(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]);
      b(i, j) = out.B(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]);
    }
  }
  const Eigen::MatrixXd a_inv = a.partialPivLu().inverse();
  Eigen::MatrixXd v = a_inv * b * a_inv.transpose();
  v = 0.5 * (v + v.transpose());
  out.V = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) out.V(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]) = v(i, j);
  out.covariance = out.V / n;

  if (stack.target == TargetKind::MeanRatio) {
    out.se_cmr = delta_ratio_se(theta(t), theta(t + 1), out.covariance.block<2, 2>(t, t));
  } else {
    out.se_cmr = std::exp(theta(t)) * std::sqrt(std::max(0.0, out.covariance(t, t)));
  }
  return out;
}

double delta_ratio_se(double lambda1, double lambda0, const Eigen::Matrix2d& cov) {
  if (!(lambda0 > 0.0)) throw DomainError("delta_ratio_se: lambda0 must be positive");
  const Eigen::Vector2d g(1.0 / lambda0, -lambda1 / (lambda0 * lambda0));
  return std::sqrt(std::max(0.0, g.dot(cov * g)));
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw DomainError("normal_quantile: p must lie in [0, 1]");
  }
  // Acklam's rational approximation, then Halley steps against erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  for (int i = 0; i < 2; ++i) {
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

std::pair<double, double> wald_ci(double estimate, double se, double level) {
  if (!(se >= 0.0)) throw DomainError("wald_ci: se must be non-negative");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("wald_ci: level must lie in (0, 1)");
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  return {estimate - z * se, estimate + z * se};
}

Eigen::VectorXd solve_stack(const EEStack& stack, Eigen::VectorXd start, int max_iterations, double tol) {
  const auto mean_psi = [&](const Eigen::VectorXd& t) {
    return Eigen::VectorXd(stack.psi(t).colwise().mean().transpose());
  };
  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::VectorXd r = mean_psi(start);
    if (r.lpNorm<Eigen::Infinity>() < tol) return start;
    const Eigen::MatrixXd jac = numeric_jacobian(mean_psi, start);
    start -= jac.colPivHouseholderQr().solve(r);
  }
  if (mean_psi(start).lpNorm<Eigen::Infinity>() >= tol) throw EstimationError("estimating equations did not converge");
  return start;
}

// ---------------------------------------------------------------------------
// Stacks

namespace {

std::vector<std::string> prefixed(const std::string& prefix, const std::vector<std::string>& names, Eigen::Index count) {
  std::vector<std::string> out;
  for (Eigen::Index j = 0; j < count; ++j) {
    const auto k = static_cast<std::size_t>(j);
    out.push_back(prefix + (k < names.size() ? names[k] : "x" + std::to_string(j)));
  }
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw EstimationError(what);
}

struct Blocks {
  Eigen::Index q = 0;  // propensity
  Eigen::Index p = 0;  // outcome / marginal
};

// Outcome model with the signed-weight column rebuilt from e(alpha): the
// observed r_hat in the fitted design, the counterfactual values in the
// prediction designs.
struct SignedWeightDesigns {
  const OutcomeFit* fit;
  Eigen::Index column;
  std::optional<std::pair<double, double>> bounds;

  CountModel model(const Eigen::VectorXd& r_hat) const {
    DesignMatrices d = fit->model.design();
    d.mean.col(column) = r_hat;
    return fit->model.with_design(std::move(d));
  }
  DesignMatrices counterfactual(const DesignMatrices& base, const Eigen::VectorXd& e, int a) const {
    DesignMatrices d = base;
    d.mean.col(column) = counterfactual_signed_weight(e, a, bounds);
    return d;
  }
};

std::optional<Eigen::Index> signed_weight_column(const OutcomeFit& fit) {
  const auto& names = fit.model.design().mean_names;
  const auto it = std::find(names.begin(), names.end(), std::string(kSignedWeightColumn));
  if (it == names.end()) return std::nullopt;
  return static_cast<Eigen::Index>(it - names.begin());
}

}  // namespace

EEStack build_stack(const CmrEstimate& estimate, WeightTreatment treatment, const StackInputs& inputs) {
  const Method method = estimate.method;
  const bool uses_weights = method != Method::PG && method != Method::PG_heap;
  const bool estimated = uses_weights && treatment == WeightTreatment::Estimated;
  const bool uses_outcome = method != Method::IPTW;

  require(inputs.data != nullptr, "build_stack: dataset missing");
  const Dataset& data = *inputs.data;
  const Eigen::Index n = data.size();
  if (uses_weights) {
    require(inputs.propensity != nullptr, "build_stack: propensity fit missing");
    require(inputs.propensity->e.size() == n, "build_stack: propensity fit does not match the dataset");
    if (estimated) require(inputs.propensity->estimated(), "build_stack: estimated weights need a fitted propensity model");
  }
  if (uses_outcome) {
    require(inputs.outcome != nullptr, "build_stack: outcome fit missing");
    require(inputs.outcome->model.n_obs() == n, "build_stack: outcome fit does not match the dataset");
    require(inputs.outcome->fit.converged, "build_stack: outcome fit did not converge");
  }
  if (method == Method::IPTW_heap || method == Method::PG_heap || method == Method::DR_heap)
    require(inputs.outcome->model.heaping().has_value(), "build_stack: heaped method needs a heaped outcome model");

  const PropensityFit* prop = inputs.propensity;
  const OutcomeFit* out = inputs.outcome;
  const Eigen::VectorXd a = data.exposure;
  const Eigen::VectorXd y = data.outcome_values();

  EEStack stack;
  Blocks b;
  if (estimated) {
    b.q = prop->design.cols();
    auto nm = prefixed("ps:", prop->fit.names, b.q);
    stack.names.insert(stack.names.end(), nm.begin(), nm.end());
  }
  if (uses_outcome) {
    b.p = out->model.n_params();
    auto nm = prefixed(method == Method::IPTW_heap ? "msm:" : "outcome:", out->model.parameter_names(), b.p);
    stack.names.insert(stack.names.end(), nm.begin(), nm.end());
  }

  Eigen::VectorXd theta(b.q + b.p + (method == Method::IPTW_heap ? 0 : 2));
  if (estimated) theta.head(b.q) = prop->fit.estimates;
  if (uses_outcome) theta.segment(b.q, b.p) = out->fit.estimates;
  if (method == Method::IPTW_heap) {
    stack.target = TargetKind::LogRatioCoefficient;
    require(out->model.layout().n_mean == 2, "build_stack: marginal model must be delta0 + delta1 A");
    stack.target_index = b.q + 1;
  } else {
    stack.names.push_back("lambda1");
    stack.names.push_back("lambda0");
    theta(b.q + b.p) = estimate.lambda1;
    theta(b.q + b.p + 1) = estimate.lambda0;
    stack.target_index = b.q + b.p;
  }
  stack.theta_hat = theta;

  // Logistic scores, and e(alpha) / W(alpha) at the current alpha.
  const Eigen::MatrixXd ps_design = estimated ? prop->design : Eigen::MatrixXd();
  const auto prop_at = [=](const Eigen::VectorXd& t, Eigen::MatrixXd& psi, Eigen::VectorXd& e, Eigen::VectorXd& w) {
    if (!estimated) {
      e = prop->e;
      w = prop->W;
      return;
    }
    const Eigen::VectorXd alpha = t.head(b.q);
    const Eigen::VectorXd lp = ps_design * alpha;
    e = lp.unaryExpr([](double v) { return expit(v); });
    w = prop->weights_at(alpha);
    psi.leftCols(b.q) = ps_design.array().colwise() * (a - e).array();
  };

  switch (method) {
    case Method::IPTW:
      stack.psi = [=](const Eigen::VectorXd& t) {
        Eigen::MatrixXd psi(n, t.size());
        Eigen::VectorXd e, w;
        prop_at(t, psi, e, w);
        const double l1 = t(b.q), l0 = t(b.q + 1);
        psi.col(b.q) = (w.array() * a.array() * (y.array() - l1)).matrix();
        psi.col(b.q + 1) = (w.array() * (1.0 - a.array()) * (y.array() - l0)).matrix();
        return psi;
      };
      break;

    case Method::PG:
    case Method::PG_heap:
      stack.psi = [=](const Eigen::VectorXd& t) {
        Eigen::MatrixXd psi(n, t.size());
        const Eigen::VectorXd gamma = t.head(b.p);
        psi.leftCols(b.p) = out->model.scores(gamma);
        psi.col(b.p) = out->model.conditional_means(gamma, out->exposed).array() - t(b.p);
        psi.col(b.p + 1) = out->model.conditional_means(gamma, out->unexposed).array() - t(b.p + 1);
        return psi;
      };
      break;

    case Method::DR:
      stack.psi = [=](const Eigen::VectorXd& t) {
        Eigen::MatrixXd psi(n, t.size());
        Eigen::VectorXd e, w;
        prop_at(t, psi, e, w);
        const Eigen::VectorXd gamma = t.segment(b.q, b.p);
        psi.middleCols(b.q, b.p) = out->model.scores(gamma);
        const Eigen::ArrayXd m1 = out->model.conditional_means(gamma, out->exposed).array();
        const Eigen::ArrayXd m0 = out->model.conditional_means(gamma, out->unexposed).array();
        const Eigen::ArrayXd ea = e.array(), aa = a.array(), ya = y.array();
        psi.col(b.q + b.p) = ((aa * ya - (aa - ea) * m1) / ea - t(b.q + b.p)).matrix();
        psi.col(b.q + b.p + 1) = (((1.0 - aa) * ya + (aa - ea) * m0) / (1.0 - ea) - t(b.q + b.p + 1)).matrix();
        return psi;
      };
      break;

    case Method::IPTW_heap:
      stack.psi = [=](const Eigen::VectorXd& t) {
        Eigen::MatrixXd psi(n, t.size());
        Eigen::VectorXd e, w;
        prop_at(t, psi, e, w);
        psi.middleCols(b.q, b.p) = out->model.scores(t.segment(b.q, b.p)).array().colwise() * w.array();
        return psi;
      };
      break;

    case Method::DR_heap: {
      const auto column = signed_weight_column(*out);
      require(column.has_value(), "build_stack: DR_heap outcome model lacks the signed-weight covariate");
      const SignedWeightDesigns sw{out, *column, prop->weight_bounds};
      stack.psi = [=](const Eigen::VectorXd& t) {
        Eigen::MatrixXd psi(n, t.size());
        Eigen::VectorXd e, w;
        prop_at(t, psi, e, w);
        const Eigen::VectorXd gamma = t.segment(b.q, b.p);
        // With fixed weights the fitted designs already hold r_hat(alpha_hat).
        const CountModel model = estimated ? sw.model(((2.0 * a.array() - 1.0) * w.array()).matrix()) : out->model;
        const DesignMatrices x1 = estimated ? sw.counterfactual(out->exposed, e, 1) : out->exposed;
        const DesignMatrices x0 = estimated ? sw.counterfactual(out->unexposed, e, 0) : out->unexposed;
        psi.middleCols(b.q, b.p) = model.scores(gamma);
        psi.col(b.q + b.p) = model.conditional_means(gamma, x1).array() - t(b.q + b.p);
        psi.col(b.q + b.p + 1) = model.conditional_means(gamma, x0).array() - t(b.q + b.p + 1);
        return psi;
      };
      break;
    }
  }
  return stack;
}

CmrEstimate with_inference(CmrEstimate estimate, const EEStack& stack, double level) {
  const SandwichResult s = sandwich(stack, SingularBread::FixNuisance);
  if (!s.held_fixed.empty()) {
    std::string w = "singular bread: held fixed at their estimates for the variance:";
    for (const auto& name : s.held_fixed) w += " " + name;
    estimate.warnings.push_back(std::move(w));
  }
  estimate.se = s.se_cmr;
  std::tie(estimate.ci_low, estimate.ci_high) = wald_ci(estimate.cmr, estimate.se, level);
  return estimate;
}

}  // namespace cmr

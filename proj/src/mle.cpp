#include "cmr/mle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cmr/errors.hpp"

namespace cmr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double expit(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) noexcept { return std::log(p / (1.0 - p)); }

// ---------------------------------------------------------------------------
// LogisticModel

LogisticModel::LogisticModel(Eigen::MatrixXd x, Eigen::VectorXd a) : x_(std::move(x)), a_(std::move(a)) {
  if (x_.rows() != a_.size()) throw DataError("logistic model: design and response lengths differ");
}

Eigen::VectorXd LogisticModel::fitted(const Eigen::VectorXd& alpha) const {
  const Eigen::VectorXd lp = x_ * alpha;
  return lp.unaryExpr([](double v) { return expit(v); });
}

double LogisticModel::loglik(const Eigen::VectorXd& alpha) const {
  const Eigen::VectorXd lp = x_ * alpha;
  double total = 0.0;
  for (Eigen::Index i = 0; i < lp.size(); ++i) total += a_(i) * lp(i) - softplus(lp(i));
  return total;
}

Eigen::VectorXd LogisticModel::gradient(const Eigen::VectorXd& alpha) const {
  return x_.transpose() * (a_ - fitted(alpha));
}

Eigen::MatrixXd LogisticModel::hessian(const Eigen::VectorXd& alpha) const {
  const Eigen::VectorXd e = fitted(alpha);
  const Eigen::VectorXd v = e.array() * (1.0 - e.array());
  return -(x_.transpose() * v.asDiagonal() * x_);
}

Eigen::MatrixXd LogisticModel::scores(const Eigen::VectorXd& alpha) const {
  const Eigen::VectorXd r = a_ - fitted(alpha);
  return x_.array().colwise() * r.array();
}

FitResult fit_logistic(const LogisticModel& model, const OptimizerOptions& options) {
  FitResult out;
  const Eigen::VectorXd& a = model.response();
  const double share = a.mean();
  out.estimates = Eigen::VectorXd::Zero(model.n_params());
  if (share <= 0.0 || share >= 1.0) {
    out.message = "exposure takes a single value: complete separation, the propensity model has no finite MLE";
    return out;
  }
  if (column_rank(model.design()) < model.n_params()) {
    out.message = "propensity design matrix is rank deficient";
    return out;
  }
  Eigen::VectorXd start = Eigen::VectorXd::Zero(model.n_params());
  start(0) = logit(share);
  Objective obj{[&](const Eigen::VectorXd& t) { return model.loglik(t); },
                [&](const Eigen::VectorXd& t) { return model.gradient(t); },
                [&](const Eigen::VectorXd& t) { return model.hessian(t); }};
  const auto res = maximize(obj, start, options);
  out.estimates = res.x;
  out.loglik = res.value;
  out.converged = res.converged;
  out.iterations = res.iterations;
  out.gradient_norm = res.gradient.size() ? res.gradient.lpNorm<Eigen::Infinity>() : 0.0;
  out.message = res.message;
  if (out.converged) {
    const double max_lp = (model.design() * res.x).cwiseAbs().maxCoeff();
    if (max_lp > 30.0) {
      out.converged = false;
      out.message = "fitted propensities reach 0 or 1: (quasi-)complete separation";
    }
  }
  return out;
}

FitResult fit_logistic(const Dataset& data, const DesignSpec& covariates, const OptimizerOptions& options) {
  std::vector<std::string> names;
  LogisticModel model(propensity_design(data, covariates, &names), data.exposure);
  auto fit = fit_logistic(model, options);
  fit.names = std::move(names);
  return fit;
}

// ---------------------------------------------------------------------------
// CountModel

CountModel::CountModel(Family family, DesignMatrices design, CountVector y, std::optional<HeapingModel> heaping,
                       Eigen::VectorXd weights)
    : family_(family), design_(std::move(design)), y_(std::move(y)), heaping_(std::move(heaping)), w_(std::move(weights)) {
  const Eigen::Index n = y_.size();
  if (design_.mean.rows() != n) throw DataError("count model: design and outcome lengths differ");
  if (w_.size() == 0) w_ = Eigen::VectorXd::Ones(n);
  if (w_.size() != n) throw DataError("count model: weight length differs from outcome length");
  if (!(w_.array() > 0.0).all() || !w_.allFinite()) throw DataError("count model: weights must be positive and finite");
  if (heaping_) {
    if (heaping_->eta < 1) throw DomainError("heaping grid width must be >= 1");
    if (heaping_->fixed_pi && !(*heaping_->fixed_pi >= 0.0 && *heaping_->fixed_pi <= 1.0))
      throw DomainError("exact-report probability must lie in [0, 1]");
  }
  if (!is_zero_inflated(family_)) design_.zero.resize(n, 0);
  if (is_zero_inflated(family_) && design_.zero.cols() == 0) throw DataError("zero-inflated model needs a susceptibility design");

  layout_.n_mean = design_.mean.cols();
  layout_.zero_begin = layout_.n_mean;
  layout_.n_zero = design_.zero.cols();
  Eigen::Index next = layout_.n_mean + layout_.n_zero;
  if (has_dispersion(family_)) layout_.log_theta = next++;
  if (heaping_ && !heaping_->fixed_pi) layout_.logit_pi = next++;
  layout_.size = next;
}

std::vector<std::string> CountModel::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& n : design_.mean_names) names.push_back("mean:" + n);
  if (design_.mean_names.empty())
    for (Eigen::Index j = 0; j < layout_.n_mean; ++j) names.push_back("mean:x" + std::to_string(j));
  for (const auto& n : design_.zero_names) names.push_back("zero:" + n);
  if (design_.zero_names.empty())
    for (Eigen::Index j = 0; j < layout_.n_zero; ++j) names.push_back("zero:x" + std::to_string(j));
  if (layout_.log_theta) names.push_back("log_theta");
  if (layout_.logit_pi) names.push_back("logit_pi");
  return names;
}

CountModel CountModel::with_design(DesignMatrices design) const {
  return CountModel(family_, std::move(design), y_, heaping_, w_);
}

CountModel CountModel::with_family(Family family, std::optional<HeapingModel> heaping) const {
  DesignMatrices d = design_;
  if (!is_zero_inflated(family)) {
    d.zero.resize(y_.size(), 0);
    d.zero_names.clear();
  }
  return CountModel(family, std::move(d), y_, std::move(heaping), w_);
}

double CountModel::pi(const Eigen::VectorXd& theta) const {
  if (!heaping_) return 1.0;
  if (heaping_->fixed_pi) return *heaping_->fixed_pi;
  return expit(theta(*layout_.logit_pi));
}

CountParams<double> CountModel::row_params(const Eigen::VectorXd& theta, const DesignMatrices& x, Eigen::Index i) const {
  CountParams<double> p;
  p.mu = std::exp(x.mean.row(i).dot(theta.head(layout_.n_mean)));
  if (layout_.n_zero > 0) p.nu = expit(x.zero.row(i).dot(theta.segment(layout_.zero_begin, layout_.n_zero)));
  if (layout_.log_theta) p.theta = std::exp(theta(*layout_.log_theta));
  return p;
}

std::vector<LogMassGradient<double>> CountModel::evaluate(const Eigen::VectorXd& theta, bool with_gradient) const {
  const Eigen::Index n = y_.size();
  std::vector<LogMassGradient<double>> out(static_cast<std::size_t>(n));
  const Eigen::VectorXd log_mu = design_.mean * theta.head(layout_.n_mean);
  Eigen::VectorXd zero_lp;
  if (layout_.n_zero > 0) zero_lp = design_.zero * theta.segment(layout_.zero_begin, layout_.n_zero);
  const double disp = layout_.log_theta ? std::exp(theta(*layout_.log_theta)) : 0.0;
  const HeapingSpec heap{heaping_ ? heaping_->eta : 1, pi(theta)};
  for (Eigen::Index i = 0; i < n; ++i) {
    CountParams<double> p{std::exp(log_mu(i)), layout_.n_zero > 0 ? expit(zero_lp(i)) : 0.0, disp};
    auto& o = out[static_cast<std::size_t>(i)];
    if (heaping_) {
      o = log_heaped_mass_gradient(y_(i), family_, p, heap);
    } else if (with_gradient) {
      o = log_pmf_gradient(family_, p, y_(i));
    } else {
      o.log_mass = log_pmf(family_, p, y_(i));
    }
  }
  return out;
}

Eigen::VectorXd CountModel::row_loglik(const Eigen::VectorXd& theta) const {
  const auto rows = evaluate(theta, false);
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = rows[i].log_mass;
  return out;
}

double CountModel::loglik(const Eigen::VectorXd& theta) const {
  try {
    const auto rows = evaluate(theta, false);
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].log_mass == kNegInf) return kNegInf;
      total += w_(static_cast<Eigen::Index>(i)) * rows[i].log_mass;
    }
    return std::isfinite(total) ? total : kNegInf;
  } catch (const DomainError&) {
    return kNegInf;
  }
}

Eigen::MatrixXd CountModel::scores(const Eigen::VectorXd& theta) const {
  const Eigen::Index n = y_.size();
  Eigen::MatrixXd s(n, layout_.size);
  std::vector<LogMassGradient<double>> rows;
  try {
    rows = evaluate(theta, true);
  } catch (const DomainError&) {
    s.setConstant(std::numeric_limits<double>::quiet_NaN());
    return s;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    s.row(i).head(layout_.n_mean) = design_.mean.row(i) * r.d_log_mu;
    if (layout_.n_zero > 0) s.row(i).segment(layout_.zero_begin, layout_.n_zero) = design_.zero.row(i) * r.d_logit_nu;
    if (layout_.log_theta) s(i, *layout_.log_theta) = r.d_log_theta;
    if (layout_.logit_pi) s(i, *layout_.logit_pi) = r.d_logit_pi;
  }
  return s;
}

Eigen::VectorXd CountModel::gradient(const Eigen::VectorXd& theta) const {
  return scores(theta).transpose() * w_;
}

std::optional<Eigen::MatrixXd> CountModel::analytic_hessian(const Eigen::VectorXd& theta) const {
  if (family_ != Family::Poisson || heaping_) return std::nullopt;
  const Eigen::VectorXd mu = (design_.mean * theta.head(layout_.n_mean)).array().exp();
  const Eigen::VectorXd v = mu.cwiseProduct(w_);
  return Eigen::MatrixXd(-(design_.mean.transpose() * v.asDiagonal() * design_.mean));
}

Eigen::VectorXd CountModel::conditional_means(const Eigen::VectorXd& theta, const DesignMatrices& x) const {
  Eigen::VectorXd mu = (x.mean * theta.head(layout_.n_mean)).array().exp();
  if (layout_.n_zero > 0) {
    const Eigen::VectorXd lp = x.zero * theta.segment(layout_.zero_begin, layout_.n_zero);
    for (Eigen::Index i = 0; i < mu.size(); ++i) mu(i) *= 1.0 - expit(lp(i));
  }
  return mu;
}

// ---------------------------------------------------------------------------
// Fitting

FitResult fit_model(const CountModel& model, const Eigen::VectorXd& start, const OptimizerOptions& options) {
  FitResult out;
  out.names = model.parameter_names();
  out.estimates = start;
  const auto& layout = model.layout();
  if (column_rank(model.design().mean) < layout.n_mean ||
      (layout.n_zero > 0 && column_rank(model.design().zero) < layout.n_zero)) {
    out.message = "outcome design matrix is rank deficient";
    return out;
  }

  Objective obj;
  obj.value = [&](const Eigen::VectorXd& t) { return model.loglik(t); };
  obj.gradient = [&](const Eigen::VectorXd& t) { return model.gradient(t); };
  if (model.family() == Family::Poisson && !model.heaping())
    obj.hessian = [&](const Eigen::VectorXd& t) { return *model.analytic_hessian(t); };

  const auto res = maximize(obj, start, options);
  out.estimates = res.x;
  out.loglik = res.value;
  out.converged = res.converged;
  out.iterations = res.iterations;
  out.gradient_norm = res.gradient.size() ? res.gradient.lpNorm<Eigen::Infinity>() : 0.0;
  out.message = res.message;
  if (layout.log_theta) out.dispersion = std::exp(res.x(*layout.log_theta));
  if (model.heaping()) {
    out.pi = model.pi(res.x);
    if (model.heaping()->eta == 1 && !model.heaping()->fixed_pi)
      out.warnings.push_back("exact-report probability is not identified when eta = 1");
    else if (layout.logit_pi && (*out.pi < 1e-6 || *out.pi > 1.0 - 1e-6))
      out.warnings.push_back("exact-report probability estimate is on the boundary");
  }
  return out;
}

namespace {

Eigen::VectorXd poisson_start(const CountModel& model) {
  Eigen::VectorXd start = Eigen::VectorXd::Zero(model.layout().n_mean);
  const Eigen::VectorXd y = model.outcome().cast<double>();
  const double mean = y.dot(model.weights()) / model.weights().sum();
  start(0) = std::log(mean + 0.5);
  return start;
}

// Method-of-moments dispersion from a Poisson fit, clipped to a sane range.
double moment_dispersion(const CountModel& model, const Eigen::VectorXd& mean_coef) {
  const Eigen::VectorXd mu = (model.design().mean * mean_coef).array().exp();
  const Eigen::VectorXd y = model.outcome().cast<double>();
  const Eigen::VectorXd& w = model.weights();
  const double num = (w.array() * ((y - mu).array().square() - mu.array())).sum();
  const double den = (w.array() * mu.array().square()).sum();
  return std::clamp(den > 0.0 ? num / den : 0.5, 0.05, 10.0);
}

}  // namespace

FitResult fit_model(const CountModel& model, const OptimizerOptions& options) {
  const auto& layout = model.layout();
  const Family family = model.family();

  // Heaped models start from the naive fit that ignores heaping.
  if (model.heaping()) {
    const FitResult naive = fit_model(model.with_family(family, std::nullopt), options);
    Eigen::VectorXd start(layout.size);
    start.head(naive.estimates.size()) = naive.estimates;
    if (layout.logit_pi) start(*layout.logit_pi) = 0.0;
    return fit_model(model, start, options);
  }

  if (family == Family::Poisson) return fit_model(model, poisson_start(model), options);

  // NB starts from the Poisson fit; ZIP/ZINB start the count part at the
  // Poisson/NB fit and the susceptibility intercept at the excess-zero share.
  const Family count_family = has_dispersion(family) ? Family::NegBin : Family::Poisson;
  Eigen::VectorXd count_coef;
  if (count_family == Family::NegBin) {
    const CountModel poisson = model.with_family(Family::Poisson, std::nullopt);
    const FitResult pfit = fit_model(poisson, options);
    Eigen::VectorXd nb_start(layout.n_mean + 1);
    nb_start.head(layout.n_mean) = pfit.estimates;
    nb_start(layout.n_mean) = std::log(moment_dispersion(model, pfit.estimates));
    if (family == Family::NegBin) return fit_model(model, nb_start, options);
    count_coef = fit_model(model.with_family(Family::NegBin, std::nullopt), nb_start, options).estimates;
  } else {
    count_coef = fit_model(model.with_family(Family::Poisson, std::nullopt), options).estimates;
  }

  Eigen::VectorXd start = Eigen::VectorXd::Zero(layout.size);
  start.head(layout.n_mean) = count_coef.head(layout.n_mean);
  if (layout.log_theta) start(*layout.log_theta) = count_coef(layout.n_mean);
  const CountModel count_model = model.with_family(count_family, std::nullopt);
  const Eigen::VectorXd& w = model.weights();
  double observed_zero = 0.0;
  double expected_zero = 0.0;
  for (Eigen::Index i = 0; i < model.n_obs(); ++i) {
    if (model.outcome()(i) == 0) observed_zero += w(i);
    auto p = count_model.row_params(count_coef, count_model.design(), i);
    expected_zero += w(i) * pmf(count_family, p, 0);
  }
  const double excess = std::max(0.01, (observed_zero - expected_zero) / w.sum());
  start(layout.zero_begin) = logit(std::min(excess, 0.99));
  return fit_model(model, start, options);
}

FitResult fit_count(const Dataset& data, Family family, const DesignSpec& design,
                    const std::optional<Eigen::VectorXd>& weights, const OptimizerOptions& options) {
  CountModel model(family, build_design(data, design, is_zero_inflated(family)), data.outcome, std::nullopt,
                   weights.value_or(Eigen::VectorXd{}));
  return fit_model(model, options);
}

FitResult fit_heaped(const Dataset& data, Family family, const DesignSpec& design, const HeapingModel& heap,
                     const std::optional<Eigen::VectorXd>& weights, const OptimizerOptions& options) {
  CountModel model(family, build_design(data, design, is_zero_inflated(family)), data.outcome, heap,
                   weights.value_or(Eigen::VectorXd{}));
  return fit_model(model, options);
}

double aic(const FitResult& fit, std::optional<Eigen::Index> k) {
  if (!fit.converged) throw EstimationError("AIC requested for a fit that did not converge");
  return 2.0 * static_cast<double>(k.value_or(fit.n_params())) - 2.0 * fit.loglik;
}

}  // namespace cmr

#pragma once

// Count-outcome mass functions, conditional means and the heaped-report
// mixture likelihood. Everything here is a pure function of its arguments and
// is templated on the scalar type.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include "cmr/errors.hpp"

namespace cmr {

enum class Family { Poisson, NegBin, ZIP, ZINB };

constexpr bool is_zero_inflated(Family f) noexcept {
  return f == Family::ZIP || f == Family::ZINB;
}

constexpr bool has_dispersion(Family f) noexcept {
  return f == Family::NegBin || f == Family::ZINB;
}

inline std::string_view family_name(Family f) noexcept {
  switch (f) {
    case Family::Poisson: return "poisson";
    case Family::NegBin: return "nb";
    case Family::ZIP: return "zip";
    case Family::ZINB: return "zinb";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  if (s == "poisson") return Family::Poisson;
  if (s == "nb" || s == "negbin") return Family::NegBin;
  if (s == "zip") return Family::ZIP;
  if (s == "zinb") return Family::ZINB;
  throw DomainError("unknown count family '" + std::string(s) + "'");
}

/// Parameters of a single count distribution.
///
/// `mu` is the mean of the count component (for ZIP/ZINB the mean within the
/// susceptible sub-population), `nu` the probability of structural zero and
/// `theta` the dispersion, with Var = mu + mu^2 theta for the negative binomial.
template <typename Scalar = double>
struct CountParams {
  Scalar mu{1};
  Scalar nu{0};
  Scalar theta{0};
};

/// Rounding-to-grid report model: with probability `pi` the exact count is
/// reported, otherwise the count rounded to the nearest multiple of `eta`.
struct HeapingSpec {
  std::int64_t eta = 1;
  double pi = 1.0;
};

/// Log mass together with its derivatives with respect to the link-scale
/// parameters log(mu), logit(nu), log(theta) and logit(pi).
template <typename Scalar = double>
struct LogMassGradient {
  Scalar log_mass{0};
  Scalar d_log_mu{0};
  Scalar d_logit_nu{0};
  Scalar d_log_theta{0};
  Scalar d_logit_pi{0};
};

namespace detail {

template <typename Scalar>
Scalar log_gamma(Scalar x) {
#if defined(__GLIBC__)
  int sign = 0;
  if constexpr (std::is_same_v<Scalar, double>) {
    return ::lgamma_r(x, &sign);
  } else if constexpr (std::is_same_v<Scalar, long double>) {
    return ::lgammal_r(x, &sign);
  } else if constexpr (std::is_same_v<Scalar, float>) {
    return ::lgammaf_r(x, &sign);
  }
#endif
  using std::lgamma;
  return lgamma(x);
}

// log Gamma(k + y) - log Gamma(k), exact product form for small y.
template <typename Scalar>
Scalar log_rising(Scalar k, std::int64_t y) {
  using std::log;
  if (y <= 32) {
    Scalar acc{0};
    for (std::int64_t j = 0; j < y; ++j) acc += log(k + Scalar(j));
    return acc;
  }
  return log_gamma(k + Scalar(y)) - log_gamma(k);
}

// digamma(k + y) - digamma(k).
template <typename Scalar>
Scalar digamma_rising(Scalar k, std::int64_t y) {
  if (y <= 32) {
    Scalar acc{0};
    for (std::int64_t j = 0; j < y; ++j) acc += Scalar(1) / (k + Scalar(j));
    return acc;
  }
  return Eigen::numext::digamma(k + Scalar(y)) - Eigen::numext::digamma(k);
}

template <typename Scalar>
Scalar log_factorial(std::int64_t y) {
  return log_gamma(Scalar(y) + Scalar(1));
}

// Count kernel (Poisson, or NB when theta > 0) with mean mu.
template <bool WithGradient, typename Scalar>
LogMassGradient<Scalar> kernel(Scalar mu, Scalar theta, std::int64_t y) {
  using std::log;
  using std::log1p;
  LogMassGradient<Scalar> out;
  const Scalar yy = Scalar(y);
  const Scalar log_mu = log(mu);
  if (theta == Scalar(0)) {
    out.log_mass = (y == 0 ? Scalar(0) : yy * log_mu) - mu - log_factorial<Scalar>(y);
    if constexpr (WithGradient) out.d_log_mu = yy - mu;
    return out;
  }
  const Scalar k = Scalar(1) / theta;
  const Scalar log_k_mu = log(k + mu);
  out.log_mass = log_rising(k, y) - log_factorial<Scalar>(y) - k * log1p(mu / k) +
                 (y == 0 ? Scalar(0) : yy * (log_mu - log_k_mu));
  if constexpr (WithGradient) {
    out.d_log_mu = k * (yy - mu) / (k + mu);
    const Scalar d_k = digamma_rising(k, y) - log1p(mu / k) + (mu - yy) / (k + mu);
    out.d_log_theta = -k * d_k;
  }
  return out;
}

template <bool WithGradient, typename Scalar>
LogMassGradient<Scalar> log_pmf_impl(Family family, const CountParams<Scalar>& p,
                                     std::int64_t y) {
  using std::exp;
  using std::log;
  using std::log1p;
  LogMassGradient<Scalar> out;
  if (y < 0) {
    out.log_mass = -std::numeric_limits<Scalar>::infinity();
    return out;
  }
  const Scalar theta = has_dispersion(family) ? p.theta : Scalar(0);
  const auto g = kernel<WithGradient>(p.mu, theta, y);
  if (!is_zero_inflated(family) || p.nu == Scalar(0)) {
    out = g;
    if constexpr (WithGradient) {
      // logit(nu) derivative at nu = 0 is zero for y > 0 and (1 - g0) * 0 otherwise.
      out.d_logit_nu = Scalar(0);
    }
    return out;
  }
  const Scalar nu = p.nu;
  if (y > 0) {
    out.log_mass = log1p(-nu) + g.log_mass;
    if constexpr (WithGradient) {
      out.d_log_mu = g.d_log_mu;
      out.d_log_theta = g.d_log_theta;
      out.d_logit_nu = -nu;
    }
    return out;
  }
  // y == 0: mixture of the structural zero and the kernel zero.
  const Scalar a = log(nu);
  const Scalar b = log1p(-nu) + g.log_mass;
  const Scalar m = a > b ? a : b;
  out.log_mass = m + log(exp(a - m) + exp(b - m));
  if constexpr (WithGradient) {
    const Scalar w_kernel = exp(b - out.log_mass);
    const Scalar g0 = exp(g.log_mass);
    out.d_log_mu = w_kernel * g.d_log_mu;
    out.d_log_theta = w_kernel * g.d_log_theta;
    out.d_logit_nu = nu * (Scalar(1) - nu) * (Scalar(1) - g0) / exp(out.log_mass);
  }
  return out;
}

}  // namespace detail

template <typename Scalar>
void validate(Family family, const CountParams<Scalar>& p) {
  using std::isfinite;
  if (!(p.mu > Scalar(0)) || !isfinite(p.mu)) throw DomainError("count mean must be positive and finite");
  if (is_zero_inflated(family)) {
    if (!(p.nu >= Scalar(0) && p.nu < Scalar(1))) throw DomainError("zero-inflation probability must lie in [0, 1)");
  } else if (p.nu != Scalar(0)) {
    throw DomainError("zero-inflation probability must be 0 for Poisson/NB");
  }
  if (has_dispersion(family)) {
    if (!(p.theta >= Scalar(0)) || !isfinite(p.theta)) throw DomainError("dispersion must be non-negative and finite");
  } else if (p.theta != Scalar(0)) {
    throw DomainError("dispersion must be 0 for Poisson/ZIP");
  }
}

inline void validate(const HeapingSpec& h) {
  if (h.eta < 1) throw DomainError("heaping grid width must be >= 1");
  if (!(h.pi >= 0.0 && h.pi <= 1.0)) throw DomainError("exact-report probability must lie in [0, 1]");
}

template <typename Scalar>
Scalar log_pmf(Family family, const CountParams<Scalar>& p, std::int64_t y) {
  validate(family, p);
  return detail::log_pmf_impl<false>(family, p, y).log_mass;
}

template <typename Scalar>
Scalar pmf(Family family, const CountParams<Scalar>& p, std::int64_t y) {
  using std::exp;
  return exp(log_pmf(family, p, y));
}

/// Log pmf with derivatives on the link scales; the d_logit_pi slot is zero.
template <typename Scalar>
LogMassGradient<Scalar> log_pmf_gradient(Family family, const CountParams<Scalar>& p, std::int64_t y) {
  validate(family, p);
  return detail::log_pmf_impl<true>(family, p, y);
}

template <typename Scalar>
Scalar conditional_mean(Family family, const CountParams<Scalar>& p) {
  validate(family, p);
  return is_zero_inflated(family) ? (Scalar(1) - p.nu) * p.mu : p.mu;
}

template <typename Scalar>
Scalar variance(Family family, const CountParams<Scalar>& p) {
  validate(family, p);
  const Scalar theta = has_dispersion(family) ? p.theta : Scalar(0);
  const Scalar kernel_var = p.mu + p.mu * p.mu * theta;
  if (!is_zero_inflated(family)) return kernel_var;
  // Var = E[Var | S] + Var(E[Y | S]) with S the susceptibility indicator.
  return (Scalar(1) - p.nu) * kernel_var + p.nu * (Scalar(1) - p.nu) * p.mu * p.mu;
}

/// Nearest multiple of `eta`; exact midpoints round away from zero.
constexpr std::int64_t round_to_grid(std::int64_t y, std::int64_t eta) {
  if (eta < 1) throw DomainError("heaping grid width must be >= 1");
  if (y < 0) return -round_to_grid(-y, eta);
  return ((2 * y + eta) / (2 * eta)) * eta;
}

/// Closed integer range {y >= 0 : round_to_grid(y, eta) == y_h}; empty when
/// y_h is not a grid multiple.
struct Preimage {
  std::int64_t lo = 0;
  std::int64_t hi = -1;
  constexpr bool empty() const noexcept { return hi < lo; }
  constexpr std::int64_t size() const noexcept { return empty() ? 0 : hi - lo + 1; }
};

constexpr Preimage grid_preimage(std::int64_t y_h, std::int64_t eta) {
  if (eta < 1) throw DomainError("heaping grid width must be >= 1");
  if (y_h < 0 || y_h % eta != 0) return {};
  const std::int64_t lo = y_h - eta / 2;
  return {lo < 0 ? 0 : lo, y_h + (eta + 1) / 2 - 1};
}

/// log of  pi f(y_h) + (1 - pi) sum_{y : h(y) = y_h} f(y)  with derivatives.
template <typename Scalar>
LogMassGradient<Scalar> log_heaped_mass_gradient(std::int64_t y_h, Family family, const CountParams<Scalar>& p,
                                                 const HeapingSpec& heap) {
  using std::exp;
  using std::log;
  using std::log1p;
  validate(family, p);
  validate(heap);
  const Scalar pi = Scalar(heap.pi);
  const Preimage pre = grid_preimage(y_h, heap.eta);
  constexpr Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();

  LogMassGradient<Scalar> exact;
  exact.log_mass = neg_inf;
  if (pi > Scalar(0) && y_h >= 0) exact = detail::log_pmf_impl<true>(family, p, y_h);
  const Scalar log_exact = pi > Scalar(0) ? log(pi) + exact.log_mass : neg_inf;

  // The rounded branch: pre.size() <= eta terms, combined in log space.
  Scalar log_round = neg_inf;
  Scalar round_mu{0}, round_nu{0}, round_theta{0};
  if (pi < Scalar(1) && !pre.empty()) {
    // Streaming log-sum-exp: s = sum exp(f - m), accumulators scaled alike.
    Scalar m = neg_inf;
    Scalar s{0};
    for (std::int64_t y = pre.lo; y <= pre.hi; ++y) {
      const auto f = y == y_h && pi > Scalar(0) ? exact : detail::log_pmf_impl<true>(family, p, y);
      if (f.log_mass == neg_inf) continue;
      if (f.log_mass > m) {
        const Scalar r = m == neg_inf ? Scalar(0) : exp(m - f.log_mass);
        s *= r;
        round_mu *= r;
        round_nu *= r;
        round_theta *= r;
        m = f.log_mass;
      }
      const Scalar w = exp(f.log_mass - m);
      s += w;
      round_mu += w * f.d_log_mu;
      round_nu += w * f.d_logit_nu;
      round_theta += w * f.d_log_theta;
    }
    if (m != neg_inf) {
      round_mu /= s;
      round_nu /= s;
      round_theta /= s;
      log_round = log1p(-pi) + m + log(s);
    }
  }

  LogMassGradient<Scalar> out;
  const Scalar top = log_exact > log_round ? log_exact : log_round;
  if (top == neg_inf) {
    out.log_mass = neg_inf;
    return out;
  }
  const Scalar we = exp(log_exact - top);
  const Scalar wr = exp(log_round - top);
  out.log_mass = top + log(we + wr);
  const Scalar w_exact = we / (we + wr);
  const Scalar w_round = Scalar(1) - w_exact;
  out.d_log_mu = w_exact * exact.d_log_mu + w_round * round_mu;
  out.d_logit_nu = w_exact * exact.d_logit_nu + w_round * round_nu;
  out.d_log_theta = w_exact * exact.d_log_theta + w_round * round_theta;
  out.d_logit_pi = (Scalar(1) - pi) * w_exact - pi * w_round;
  return out;
}

template <typename Scalar>
Scalar heaped_mass(std::int64_t y_h, Family family, const CountParams<Scalar>& p, const HeapingSpec& heap) {
  using std::exp;
  return exp(log_heaped_mass_gradient(y_h, family, p, heap).log_mass);
}

/// Sum of log heaped masses over observations; `params[i]` belongs to `y_h[i]`.
/// Throws FitInfeasible naming the first observation with zero mass.
template <typename Scalar>
Scalar heaped_loglik(std::span<const std::int64_t> y_h, std::span<const CountParams<Scalar>> params, Family family,
                     const HeapingSpec& heap) {
  if (y_h.size() != params.size()) throw DomainError("heaped_loglik: outcome and parameter lengths differ");
  Scalar total{0};
  for (std::size_t i = 0; i < y_h.size(); ++i) {
    const Scalar li = log_heaped_mass_gradient(y_h[i], family, params[i], heap).log_mass;
    if (li == -std::numeric_limits<Scalar>::infinity()) {
      throw FitInfeasible("observation " + std::to_string(i) + " (y=" + std::to_string(y_h[i]) +
                              ") has zero probability under the heaping model",
                          static_cast<long>(i));
    }
    total += li;
  }
  return total;
}

}  // namespace cmr

#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <boost/math/tools/roots.hpp>

#include "covariance.hpp"
#include "stransform.hpp"

namespace corrgcv {

// Solved fixed point and derived quantities at one (q, lambda).
struct Solution {
  double lambda = 0.0;
  double q = 0.0;
  double kappa = 0.0;
  double kappa_t = 0.0;
  double S = 0.0;
  double S_t = 0.0;
  double df1 = 0.0;
  double df2 = 0.0;
  double dft1 = 0.0;
  double dft2 = 0.0;
  double gamma = 0.0;
  double dkappa = std::numeric_limits<double>::quiet_NaN();
  double dkappa_t = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  bool ridgeless = false;
  int iterations = 0;
  std::string method;
};

struct SolverOptions {
  double damping = 0.5;
  double tol = 1e-12;
  int max_iterations = 10000;
  int picard_budget = 2000;
};

// Procedure: dual_df2
// df2_K(kappa_t) at x = df1_K(kappa_t): exact from the spectrum when attached, otherwise
// x^2 (S + (1-x) S') / (S + x (1-x) S').
inline double dual_df2(const STransform& sk, double x, double kappa_t) {
  if (sk.has_spectrum()) return df2(*sk.spectrum, kappa_t);
  if (x >= 1.0) return 1.0;
  const double s = sk(x);
  const double ds = sk.derivative(x);
  return x * x * (s + (1.0 - x) * ds) / (s + x * (1.0 - x) * ds);
}

// Procedure: ridgeless_kappa
// Unique kappa > 0 with q df1(kappa) = 1 (overparameterized ridgeless limit).
inline double ridgeless_kappa(const Vec& sigma, double q) {
  if (!(q > 1.0)) throw DomainError("ridgeless_kappa: requires q > 1");
  return df1_inverse(sigma, 1.0 / q);
}

inline double ridgeless_kappa(const SpectralCovariance& c, double q) { return ridgeless_kappa(c.eigenvalues, q); }

namespace detail {

inline void finish_solution(Solution& s, const Vec& sigma, const STransform& sk) {
  s.df1 = df1(sigma, s.kappa);
  s.df2 = df2(sigma, s.kappa);
  s.dft1 = s.q * s.df1;
  s.kappa_t = s.lambda / (s.kappa * s.dft1);
  s.S = s.kappa / s.lambda;
  s.S_t = s.kappa_t / s.lambda;
  s.dft2 = dual_df2(sk, s.dft1, s.kappa_t);
  s.gamma = (s.df2 / s.df1) * (s.dft2 / s.dft1);
  if (s.gamma < 1.0) {
    s.dkappa = s.S * (1.0 - s.dft2 / s.dft1) / (1.0 - s.gamma);
    s.dkappa_t = s.S_t * (1.0 - s.df2 / s.df1) / (1.0 - s.gamma);
  }
}

inline Solution solve_ridgeless(const Vec& sigma, const STransform& sk, double q) {
  Solution s;
  s.q = q;
  s.lambda = 0.0;
  s.ridgeless = true;
  s.converged = true;
  s.method = "ridgeless";
  if (q > 1.0) {
    s.kappa = ridgeless_kappa(sigma, q);
    s.df1 = df1(sigma, s.kappa);
    s.df2 = df2(sigma, s.kappa);
    s.dft1 = 1.0;
    s.kappa_t = 0.0;
    s.dft2 = 1.0;
    s.S = std::numeric_limits<double>::infinity();
    s.S_t = sk(1.0);
  } else if (q < 1.0) {
    s.kappa = 0.0;
    s.df1 = 1.0;
    s.df2 = 1.0;
    s.dft1 = q;
    s.S = sk(q) / (1.0 - q);
    s.kappa_t = (1.0 - q) / (q * sk(q));
    s.S_t = std::numeric_limits<double>::infinity();
    s.dft2 = dual_df2(sk, q, s.kappa_t);
  } else {
    throw DomainError("solve: ridgeless limit at the interpolation threshold q = 1");
  }
  s.gamma = (s.df2 / s.df1) * (s.dft2 / s.dft1);
  return s;
}

}  // namespace detail

// Procedure: solve
// kappa = lambda S_K(q df1(kappa)) / (1 - q df1(kappa)) by damped Picard iteration with bisection
// fallback; the converged root is polished by bisection on a tight bracket.
inline Solution solve(const Vec& sigma, const STransform& sk, double q, double lambda, SolverOptions opt = {}) {
  if (!(q > 0.0)) throw DomainError("solve: q must be > 0");
  if (!(lambda >= 0.0)) throw DomainError("solve: lambda must be >= 0");
  if (sigma.size() == 0 || !(sigma.minCoeff() > 0.0)) throw DomainError("solve: spectrum must be positive");
  if (lambda < 1e-12 * sigma.mean()) return detail::solve_ridgeless(sigma, sk, q);

  const double xcap = std::min(1.0, sk.hi);
  auto xof = [&](double k) { return q * df1(sigma, k); };
  auto g = [&](double k) {
    const double x = xof(k);
    return lambda * sk(x) / (1.0 - x);
  };
  auto f = [&](double k) { return k - g(k); };

  // kappa >= lambda since S_K >= 1; below the pole when q df1 would reach xcap
  double lo = lambda;
  if (xof(lo) >= xcap) {
    double kp = df1_inverse(sigma, std::nextafter(xcap, 0.0) / q);
    while (xof(kp) >= xcap) kp = std::nextafter(kp, std::numeric_limits<double>::infinity());
    lo = std::max(lo, kp);
  }

  Solution s;
  s.q = q;
  s.lambda = lambda;

  double k = lo;
  double g0 = g(lo);
  if (std::isfinite(g0)) k = g0;
  bool picard_ok = false;
  int it = 0;
  for (; it < std::min(opt.picard_budget, opt.max_iterations); ++it) {
    if (!(k > lo) || !std::isfinite(k)) break;
    double gk;
    try {
      gk = g(k);
    } catch (const DomainError&) {
      break;
    }
    const double kn = (1.0 - opt.damping) * k + opt.damping * gk;
    if (!std::isfinite(kn) || !(kn > lo)) break;
    if (std::abs(kn - k) <= opt.tol * kn) {
      k = kn;
      picard_ok = true;
      ++it;
      break;
    }
    k = kn;
  }
  s.iterations = it;

  auto tol = [](double a, double b) { return std::abs(a - b) <= 4.0 * std::numeric_limits<double>::epsilon() * std::min(a, b); };
  auto safe_f = [&](double kk) {
    if (!(kk > lo)) return -std::numeric_limits<double>::infinity();
    return f(kk);
  };

  double a = lo, b = 0.0;
  bool bracketed = false;
  if (picard_ok) {
    const double da = k * (1.0 - 1e-9), db = k * (1.0 + 1e-9);
    if (da > lo && safe_f(da) < 0.0 && safe_f(db) > 0.0) {
      a = da;
      b = db;
      bracketed = true;
      s.method = "picard";
    }
  }
  if (!bracketed) {
    s.method = picard_ok ? "picard+bisection" : "bisection";
    a = lo;
    b = std::max(2.0 * lo, lambda);
    if (std::isfinite(g0) && g0 > lo) b = std::max(b, g0 * (1.0 + 1e-12));
    int guard = 0;
    while (!(safe_f(b) > 0.0)) {
      b *= 2.0;
      if (++guard > 2000) throw SolverError("solve: failed to bracket kappa", f(b));
    }
  }
  std::uintmax_t iters = static_cast<std::uintmax_t>(opt.max_iterations);
  auto r = boost::math::tools::bisect(safe_f, a, b, tol, iters);
  s.iterations += static_cast<int>(iters);
  s.kappa = 0.5 * (r.first + r.second);
  const double resid = std::abs(f(s.kappa)) / s.kappa;
  if (!std::isfinite(resid) || s.iterations >= opt.max_iterations + opt.picard_budget)
    throw SolverError("solve: did not converge", resid);
  s.converged = true;
  detail::finish_solution(s, sigma, sk);
  return s;
}

inline Solution solve(const SpectralCovariance& c, const STransform& sk, double q, double lambda,
                      SolverOptions opt = {}) {
  return solve(c.eigenvalues, sk, q, lambda, opt);
}

// Procedure: solve_kappa_tilde
// Dual ridge from the duality relation.
inline double solve_kappa_tilde(const Solution& s) {
  if (!(s.lambda > 0.0)) return s.kappa_t;
  return s.lambda / (s.kappa * s.q * s.df1);
}

// Procedure: gamma
inline double gamma(const Solution& s) { return s.gamma; }

// Procedure: dkappa_dlambda
inline double dkappa_dlambda(const Solution& s) {
  if (!(s.gamma < 1.0)) throw SingularFactor("dkappa_dlambda: gamma >= 1");
  if (s.ridgeless) throw DomainError("dkappa_dlambda: undefined in the ridgeless branch");
  return s.S * (1.0 - s.dft2 / s.dft1) / (1.0 - s.gamma);
}

// Procedure: dkappa_tilde_dlambda
inline double dkappa_tilde_dlambda(const Solution& s) {
  if (!(s.gamma < 1.0)) throw SingularFactor("dkappa_tilde_dlambda: gamma >= 1");
  if (s.ridgeless) throw DomainError("dkappa_tilde_dlambda: undefined in the ridgeless branch");
  return s.S_t * (1.0 - s.df2 / s.df1) / (1.0 - s.gamma);
}

// Finite-difference derivative oracle for kappa(lambda), kappa_t(lambda).
struct DerivativeCheck {
  double fd_kappa = 0.0;
  double an_kappa = 0.0;
  double fd_kappa_t = 0.0;
  double an_kappa_t = 0.0;
  double rel_kappa = 0.0;
  double rel_kappa_t = 0.0;
};

// Procedure: check_derivatives
// Richardson-extrapolated centered differences with step h = max(1e-7, 1e-5 lambda), capped at lambda/2.
inline DerivativeCheck check_derivatives(const Vec& sigma, const STransform& sk, double q, double lambda) {
  const Solution s0 = solve(sigma, sk, q, lambda);
  const double h = std::min(std::max(1e-7, 1e-5 * lambda), 0.5 * lambda);
  DerivativeCheck d;
  d.fd_kappa = richardson_derivative([&](double l) { return solve(sigma, sk, q, l).kappa; }, lambda, h);
  d.fd_kappa_t = richardson_derivative([&](double l) { return solve(sigma, sk, q, l).kappa_t; }, lambda, h);
  d.an_kappa = dkappa_dlambda(s0);
  d.an_kappa_t = dkappa_tilde_dlambda(s0);
  d.rel_kappa = std::abs(d.fd_kappa - d.an_kappa) / std::abs(d.an_kappa);
  d.rel_kappa_t = std::abs(d.fd_kappa_t - d.an_kappa_t) / std::abs(d.an_kappa_t);
  return d;
}

// Residuals of the fixed point and the duality/derivative identities.
struct IdentityReport {
  double fixed_point = 0.0;
  double duality = 0.0;
  double duality2 = 0.0;
  double delta_df = 0.0;
  double dft1_equiv = 0.0;
  double max() const { return std::max({fixed_point, duality, duality2, delta_df, dft1_equiv}); }
};

namespace detail {
inline double rel_diff(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}
}  // namespace detail

// Procedure: verify_identities
// Recomputes df1 from the stored kappa so that a perturbed solution is detected. df2_hat is the
// empirical df2 of Sigma_hat at lambda; when absent its deterministic equivalent is used.
inline IdentityReport verify_identities(const Solution& s, const Vec& sigma, const STransform& sk,
                                        std::optional<double> df2_hat = std::nullopt) {
  IdentityReport r;
  const double d1 = df1(sigma, s.kappa);
  const double d2 = df2(sigma, s.kappa);
  const double x = s.q * d1;
  if (s.ridgeless) {
    r.dft1_equiv = detail::rel_diff(s.dft1, x);
    if (s.q > 1.0) {
      r.fixed_point = std::abs(x - 1.0);
    } else {
      r.fixed_point = detail::rel_diff(s.kappa_t, (1.0 - s.q) / (s.q * sk(s.q)));
      r.duality = detail::rel_diff(s.S * s.kappa_t * s.dft1, 1.0);  // lim lambda S S_t = 1/dft1
    }
    return r;
  }
  r.fixed_point = detail::rel_diff(s.kappa, s.lambda * sk(x) / (1.0 - x));
  r.duality = detail::rel_diff(s.kappa * s.kappa_t / s.lambda, 1.0 / x);
  r.dft1_equiv = detail::rel_diff(s.dft1, x);
  if (s.gamma < 1.0) {
    const double dlk = s.lambda * dkappa_dlambda(s) / s.kappa;
    const double dlkt = s.lambda * dkappa_tilde_dlambda(s) / s.kappa_t;
    const double d2hat = df2_hat ? *df2_hat : d1 - (d1 - d2) * dlk;
    r.duality2 = detail::rel_diff(dlk + dlkt, 1.0 + (d1 - d2hat) / d1);
    r.delta_df = detail::rel_diff(s.q * (d2 - d1), (dlkt / dlk) * (s.dft2 - s.dft1));
  }
  return r;
}

}  // end of namespace corrgcv ------------------------------------------------

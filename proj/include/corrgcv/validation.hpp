#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "covariance.hpp"
#include "experiments.hpp"
#include "random.hpp"
#include "risk_theory.hpp"
#include "selfconsistent.hpp"
#include "stransform.hpp"

namespace corrgcv {

// One invariant check: pass when residual <= tolerance.
struct Check {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string detail;
};

inline Check make_check(std::string name, double residual, double tol, std::string detail = "") {
  Check c;
  c.name = std::move(name);
  c.residual = residual;
  c.tolerance = tol;
  c.pass = std::isfinite(residual) && residual <= tol;
  c.detail = std::move(detail);
  return c;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

// ---------------------------------------------------------------------------
// Randomized identity suite
// ---------------------------------------------------------------------------

struct IdentitySuiteResult {
  int instances = 0;
  double max_identity = 0.0;    // duality, dft1 = q df1, duality2, delta_df, fixed point
  double max_derivative = 0.0;  // analytic vs Richardson, kappa and kappa_t
  std::string worst_identity;
  std::string worst_derivative;
  double seconds = 0.0;
};

// Procedure: identity_suite
// Random (kernel family, Sigma, q, lambda) instances; kernels alternate between closed-form and spectrum S.
inline IdentitySuiteResult identity_suite(int instances, std::uint64_t seed, Index spectrum_T = 256) {
  const auto t0 = std::chrono::steady_clock::now();
  const RandomStream rs{seed, 0};
  std::uint64_t u = 0;
  auto unif = [&] { return rs.uniform(u++); };
  auto logu = [&](double a, double b) { return std::exp(std::log(a) + unif() * (std::log(b) - std::log(a))); };

  std::map<std::string, STransform> cache;
  IdentitySuiteResult r;
  r.instances = instances;
  for (int i = 0; i < instances; ++i) {
    const int fam = static_cast<int>(unif() * 6.0);
    std::ostringstream desc;
    STransform sk;
    switch (fam) {
      case 0:
        sk = s_identity();
        desc << "identity";
        break;
      case 1: {
        const double xi = logu(0.05, 200.0);
        sk = s_exponential(xi);
        desc << "exponential(analytic) xi=" << xi;
        break;
      }
      case 2: {
        const double b = 0.95 * unif();
        sk = s_nearest_neighbor(b);
        desc << "nearest_neighbor(analytic) b=" << b;
        break;
      }
      case 3: {
        static const double xis[] = {0.5, 5.0, 50.0};
        const double xi = xis[static_cast<int>(unif() * 3.0)];
        const std::string key = "exp" + std::to_string(xi);
        if (!cache.count(key)) cache[key] = s_for_kernel(CorrelationKernel::exponential(xi, spectrum_T), SSource::spectrum);
        sk = cache[key];
        desc << "exponential(spectrum T=" << spectrum_T << ") xi=" << xi;
        break;
      }
      case 4: {
        static const double chis[] = {0.3, 0.5, 1.0, 2.0};
        const double chi = chis[static_cast<int>(unif() * 4.0)];
        const std::string key = "pow" + std::to_string(chi);
        if (!cache.count(key)) cache[key] = s_for_kernel(CorrelationKernel::power_law(chi, spectrum_T), SSource::spectrum);
        sk = cache[key];
        desc << "power_law(spectrum T=" << spectrum_T << ") chi=" << chi;
        break;
      }
      default: {
        static const double bs[] = {0.2, 0.6, 0.9};
        const double b = bs[static_cast<int>(unif() * 3.0)];
        const std::string key = "nn" + std::to_string(b);
        if (!cache.count(key))
          cache[key] = s_for_kernel(CorrelationKernel::nearest_neighbor(b, spectrum_T), SSource::spectrum);
        sk = cache[key];
        desc << "nearest_neighbor(spectrum T=" << spectrum_T << ") b=" << b;
        break;
      }
    }
    const Index n = 20 + static_cast<Index>(unif() * 280.0);
    const bool iso = unif() < 0.3;
    const double alpha = 0.5 + 2.0 * unif();
    const SpectralCovariance cov = iso ? isotropic_covariance(Vec::Ones(n)) : powerlaw_covariance(alpha, 1.0, n);
    const double q = logu(0.1, 10.0);
    const double lambda = logu(1e-4, 10.0);
    desc << ", N=" << n << (iso ? " iso" : " alpha=") << (iso ? "" : std::to_string(alpha)) << ", q=" << q
         << ", lambda=" << lambda;
    const Solution s = solve(cov, sk, q, lambda);
    const IdentityReport ir = verify_identities(s, cov.eigenvalues, sk);
    if (ir.max() > r.max_identity) {
      r.max_identity = ir.max();
      r.worst_identity = desc.str();
    }
    const DerivativeCheck dc = check_derivatives(cov.eigenvalues, sk, q, lambda);
    const double dm = std::max(dc.rel_kappa, dc.rel_kappa_t);
    if (!(dm <= r.max_derivative)) {
      r.max_derivative = dm;
      r.worst_derivative = desc.str();
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// S-transform endpoints
// ---------------------------------------------------------------------------

struct EndpointResult {
  std::string kernel;
  Index T = 0;
  double s_small = 0.0;          // S(1e-8)
  double s_one = 0.0;            // analytic S(1)
  double inv_trace = 0.0;        // (1/T) Tr K^-1 from a dense inverse
  double err_small = 0.0;        // |S(1e-8) - 1|
  double err_one = 0.0;          // relative
  Index T_empirical = 0;
  double err_empirical = 0.0;    // max relative |analytic - empirical| on df in [0.05, 0.95]
};

// Procedure: dense_inverse_trace
// (1/T) Tr K^-1 via a Cholesky factorization and a dense inverse.
inline double dense_inverse_trace(const CorrelationKernel& k) {
  const DenseSPD km = build_kernel_matrix(k);
  Eigen::LLT<Mat> llt(km.matrix());
  if (llt.info() != Eigen::Success) throw NotPSD("dense_inverse_trace: K not positive definite");
  const Mat inv = llt.solve(Mat::Identity(k.T, k.T));
  return inv.trace() / static_cast<double>(k.T);
}

// Procedure: endpoint_check
inline EndpointResult endpoint_check(const CorrelationKernel& k, Index T_empirical = 0) {
  EndpointResult e;
  e.kernel = std::string(family_name(k.family)) + " " + k.params_string();
  e.T = k.T;
  const STransform sa = s_for_kernel(k, SSource::analytic);
  e.s_small = sa(1e-8);
  e.s_one = sa(1.0);
  e.inv_trace = dense_inverse_trace(k);
  e.err_small = std::abs(e.s_small - 1.0);
  e.err_one = rel_err(e.s_one, e.inv_trace);
  e.T_empirical = T_empirical > 0 ? T_empirical : k.T;
  const STransform se = s_empirical(kernel_spectrum(k.resized(e.T_empirical)));
  for (double df : linspace(0.05, 0.95, 19)) e.err_empirical = std::max(e.err_empirical, rel_err(sa(df), se(df)));
  return e;
}

// ---------------------------------------------------------------------------
// Toeplitz minimum eigenvalue
// ---------------------------------------------------------------------------

struct ToeplitzMinResult {
  double chi = 0.0;
  Index T = 0;
  double predicted = 0.0;
  double observed = 0.0;
  double rel = 0.0;
};

// Procedure: toeplitz_min_check
inline ToeplitzMinResult toeplitz_min_check(double chi, Index T) {
  ToeplitzMinResult r;
  r.chi = chi;
  r.T = T;
  r.predicted = powerlaw_symbol_min(chi);
  r.observed = build_kernel_matrix(CorrelationKernel::power_law(chi, T)).eigenvalues()[0];
  r.rel = rel_err(r.observed, r.predicted);
  return r;
}

// ---------------------------------------------------------------------------
// Ordering bounds and detector checks
// ---------------------------------------------------------------------------

struct OrderingResult {
  int instances = 0;
  int kappa_violations = 0;     // kappa_c < kappa_u
  int kappa_t_violations = 0;   // kappa_t_c > kappa_t_u
  int s_violations = 0;         // S_K < 1
  int mismatch_violations = 0;  // df2_{K,I} > (1/T Tr K^-1) dft2
  int bracket_violations = 0;   // bracket - (1-rho) outside (0, rho]
};

// Procedure: ordering_suite
inline OrderingResult ordering_suite(int instances, std::uint64_t seed, Index T = 128) {
  const RandomStream rs{seed, 1};
  std::uint64_t u = 0;
  auto unif = [&] { return rs.uniform(u++); };
  auto logu = [&](double a, double b) { return std::exp(std::log(a) + unif() * (std::log(b) - std::log(a))); };
  OrderingResult r;
  r.instances = instances;
  const STransform sid = s_identity();
  for (int i = 0; i < instances; ++i) {
    const double xi = logu(0.1, 100.0);
    const CorrelationKernel k = CorrelationKernel::exponential(xi, T);
    const Vec kspec = kernel_spectrum(k);
    const STransform sk = s_empirical(kspec);
    const Index n = static_cast<Index>(std::llround(logu(0.2, 4.0) * static_cast<double>(T)));
    const SpectralCovariance cov = powerlaw_covariance(0.5 + 1.5 * unif(), 1.0, std::max<Index>(n, 2));
    const double q = static_cast<double>(cov.dim()) / static_cast<double>(T);
    const double lambda = logu(1e-3, 1.0);
    const Solution sc = solve(cov, sk, q, lambda);
    const Solution su = solve(cov, sid, q, lambda);
    if (sc.kappa < su.kappa * (1.0 - 1e-12)) ++r.kappa_violations;
    if (sc.kappa_t > su.kappa_t * (1.0 + 1e-12)) ++r.kappa_t_violations;
    for (double df : linspace(0.01, 1.0, 12))
      if (sk(df) < 1.0 - 1e-12) ++r.s_violations;
    const MismatchTraces mt = mismatch_traces_identity(kspec, sc.kappa_t);
    if (mt.df2_kkp > inverse_trace_normalized(kspec) * sc.dft2 * (1.0 + 1e-12)) ++r.mismatch_violations;
    const DenseSPD km = build_kernel_matrix(k);
    const CorrelatedTestSpec spec = make_correlated_test_spec(k, km, 1 + static_cast<Index>(unif() * 20.0));
    const RiskReport base = risk_matched(sc, cov, 0.25);
    const CorrelatedTestResult ct = risk_correlated_test(sc, km, spec, base);
    if (!(ct.extra > 0.0 && ct.extra <= spec.rho * (1.0 + 1e-12))) ++r.bracket_violations;
  }
  return r;
}

// Procedure: perturbed_duality_residual
// Duality residual of a solution whose kappa is scaled by (1 + eps).
inline double perturbed_duality_residual(const Vec& sigma, const STransform& sk, double q, double lambda,
                                         double eps) {
  Solution s = solve(sigma, sk, q, lambda);
  s.kappa *= 1.0 + eps;
  return verify_identities(s, sigma, sk).duality;
}

// ---------------------------------------------------------------------------
// Validation driver
// ---------------------------------------------------------------------------

struct ValidationReport {
  std::string level;
  std::vector<Check> checks;
  double seconds = 0.0;
  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

// Procedure: run_validation
// fast: T=1024 endpoints (tolerance scaled by 4096/T) and Toeplitz checks; full: T=4096. Exponential xi=100
// compares against the empirical S at T=8192 (fast) or T=32768 (full). Both run the identity suite, ordering bounds, the detector and N=T=500 trace tests.
inline ValidationReport run_validation(const std::string& level, std::uint64_t seed, int workers = 1) {
  if (level != "fast" && level != "full") throw ConfigError("validate: level must be fast or full");
  const auto t0 = std::chrono::steady_clock::now();
  const bool full = level == "full";
  ValidationReport rep;
  rep.level = level;
  auto add = [&](Check c) { rep.checks.push_back(std::move(c)); };

  const IdentitySuiteResult id = identity_suite(1000, seed);
  add(make_check("identity_suite.identities", id.max_identity, 1e-8, id.worst_identity));
  add(make_check("identity_suite.derivatives", id.max_derivative, 1e-6, id.worst_derivative));
  add(make_check("identity_suite.seconds", id.seconds, 60.0));

  const Index T = full ? 4096 : 1024;
  const double tol = 1e-3 * 4096.0 / static_cast<double>(T);
  std::vector<CorrelationKernel> kernels;
  for (double xi : {0.1, 1.0, 10.0, 100.0}) kernels.push_back(CorrelationKernel::exponential(xi, T));
  for (double b : {0.1, 0.5, 0.95}) kernels.push_back(CorrelationKernel::nearest_neighbor(b, T));
  for (const auto& k : kernels) {
    const bool long_memory = k.family == KernelFamily::exponential && k.param >= 100.0;
    const EndpointResult e = endpoint_check(k, long_memory ? (full ? 32768 : 8192) : T);
    const std::string nm = "endpoint." + std::string(family_name(k.family)) + "(" + k.params_string() + ")";
    add(make_check(nm + ".s_small", e.err_small, 1e-4));
    add(make_check(nm + ".s_one", e.err_one, tol, "T=" + std::to_string(e.T)));
    add(make_check(nm + ".empirical", e.err_empirical, full ? 1e-3 : tol, "T=" + std::to_string(e.T_empirical)));
  }

  for (double chi : {0.3, 0.5, 1.0, 2.0}) {
    const ToeplitzMinResult t = toeplitz_min_check(chi, T);
    std::ostringstream os;
    os << "toeplitz_min.chi=" << chi;
    add(make_check(os.str(), t.rel, 1e-2, "T=" + std::to_string(T)));
  }
  add(make_check("toeplitz_min.eta1_exact", std::abs(powerlaw_symbol_min(1.0) - (std::log(4.0) - 1.0)), 1e-6));

  const OrderingResult o = ordering_suite(100, seed);
  add(make_check("ordering.kappa", o.kappa_violations, 0.0, "violations of 100"));
  add(make_check("ordering.kappa_t", o.kappa_t_violations, 0.0, "violations of 100"));
  add(make_check("ordering.s_at_least_one", o.s_violations, 0.0, "violations"));
  add(make_check("ordering.mismatch_bound", o.mismatch_violations, 0.0, "violations of 100"));
  add(make_check("ordering.correlated_test_bracket", o.bracket_violations, 0.0, "violations of 100"));

  {
    const double r = perturbed_duality_residual(Vec::Ones(100), s_exponential(100.0), 0.5, 1e-2, 0.01);
    Check c = make_check("detector.kappa_perturbed_1pct", r, 1e-8, "residual must exceed tolerance");
    c.pass = std::isfinite(r) && r > 1e-8;
    add(c);
  }

  const Index nt = 500;
  for (double xi : {0.0, 100.0}) {
    const CorrelationKernel k = xi == 0.0 ? CorrelationKernel::identity(nt) : CorrelationKernel::exponential(xi, nt);
    const TraceTestReport tr =
        trace_test_two_point(Vec::Ones(nt), k, Vec::Ones(nt), build_kernel_matrix(k), 0.1, 10, seed, workers);
    const std::string nm = "trace." + std::string(family_name(k.family)) + "(" + k.params_string() + ")";
    add(make_check(nm + ".one_point", tr.resid1, 0.03, "N=T=500, 10 seeds"));
    add(make_check(nm + ".two_point", tr.resid2, 0.03, "N=T=500, 10 seeds"));
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // end of namespace corrgcv ------------------------------------------------

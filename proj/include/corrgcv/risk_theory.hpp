#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "covariance.hpp"
#include "selfconsistent.hpp"
#include "stransform.hpp"

namespace corrgcv {

// Risk decomposition for one configuration.
struct RiskReport {
  double bias_sq = 0.0;
  double var_X = 0.0;
  double var_Xeps = 0.0;
  double R_g = 0.0;
  double R_out = 0.0;
  double R_in = 0.0;
  double sigma_eps_sq = 0.0;
  bool divergent = false;
};

namespace detail {

inline RiskReport divergent_report(double sigma2) {
  RiskReport r;
  const double inf = std::numeric_limits<double>::infinity();
  r.bias_sq = inf;
  r.var_X = inf;
  r.var_Xeps = sigma2 > 0.0 ? inf : 0.0;
  r.R_g = inf;
  r.R_out = inf;
  r.R_in = std::numeric_limits<double>::quiet_NaN();
  r.sigma_eps_sq = sigma2;
  r.divergent = true;
  return r;
}

// sum_k w_k^2 l_k / (l_k + kappa)^2
inline double teacher_quadratic(const SpectralCovariance& c, double kappa) {
  const auto l = c.eigenvalues.array();
  return (c.teacher.array().square() * l / (l + kappa).square()).sum();
}

// sum_k w_k^2 l_k (at kappa = 0 the signal term kappa^2 B vanishes)
inline double signal_term(const SpectralCovariance& c, double kappa) {
  if (kappa == 0.0) return 0.0;
  return kappa * kappa * teacher_quadratic(c, kappa);
}

// (dft1 - dft2) / (S dft1), the inverse CorrGCV factor; lambda -> 0 limits handled.
inline double inverse_corrgcv(const Solution& s) {
  if (s.ridgeless) {
    if (s.q > 1.0) return 0.0;
    return (s.dft1 - s.dft2) / (s.S * s.dft1);
  }
  return (s.dft1 - s.dft2) / (s.S * s.dft1);
}

}  // namespace detail

// Procedure: risk_uncorrelated
// K = identity: gamma = q df2, R_in = R_out / S^2.
inline RiskReport risk_uncorrelated(const Solution& s, const SpectralCovariance& c, double sigma2) {
  const double g = s.q * s.df2;
  if (!(g < 1.0)) return detail::divergent_report(sigma2);
  RiskReport r;
  const double sig = detail::signal_term(c, s.kappa);
  r.bias_sq = sig;
  r.var_X = sig * g / (1.0 - g);
  r.var_Xeps = g / (1.0 - g) * sigma2;
  r.R_g = r.bias_sq + r.var_X + r.var_Xeps;
  r.sigma_eps_sq = sigma2;
  r.R_out = r.R_g + sigma2;
  r.R_in = s.ridgeless ? (s.q > 1.0 ? 0.0 : r.R_out / (s.S * s.S)) : r.R_out / (s.S * s.S);
  return r;
}

// Procedure: risk_matched
// K' = K: R_g = kappa^2 B / (1-gamma) + gamma sigma^2 / (1-gamma);
// R_in = (dft1 - dft2)/(S dft1) (kappa^2 B + sigma^2) / (1-gamma).
inline RiskReport risk_matched(const Solution& s, const SpectralCovariance& c, double sigma2) {
  const double g = s.gamma;
  if (!(g < 1.0)) return detail::divergent_report(sigma2);
  RiskReport r;
  const double sig = detail::signal_term(c, s.kappa);
  r.bias_sq = sig;
  r.var_X = sig * g / (1.0 - g);
  r.var_Xeps = g / (1.0 - g) * sigma2;
  r.R_g = r.bias_sq + r.var_X + r.var_Xeps;
  r.sigma_eps_sq = sigma2;
  r.R_out = r.R_g + sigma2;
  r.R_in = detail::inverse_corrgcv(s) * (sig + sigma2) / (1.0 - g);
  return r;
}

// Procedure: corrgcv_factor
// S dft1 / (dft1 - dft2).
inline double corrgcv_factor(const Solution& s) {
  if (!(s.dft1 > s.dft2)) throw SingularFactor("corrgcv_factor: dft1 <= dft2");
  return s.S * s.dft1 / (s.dft1 - s.dft2);
}

// Traces of the noise correlation K' against the K resolvent at kappa_t.
struct MismatchTraces {
  double tr_kp_resolvent = 0.0;  // (1/T) Tr K' (K + kappa_t)^-1
  double df2_kkp = 0.0;          // (1/T) Tr K K' (K + kappa_t)^-2
};

// Procedure: mismatch_traces
inline MismatchTraces mismatch_traces(const DenseSPD& k, const DenseSPD& kp, double kappa_t) {
  if (k.order() != kp.order()) throw DimensionMismatch("mismatch_traces: K and K' differ in order");
  const Mat& u = k.eigenvectors();
  const Vec& w = k.full_eigenvalues();
  const Vec d = (u.transpose() * kp.matrix() * u).diagonal();
  MismatchTraces m;
  const double t = static_cast<double>(w.size());
  m.tr_kp_resolvent = (d.array() / (w.array() + kappa_t)).sum() / t;
  m.df2_kkp = (w.array() * d.array() / (w.array() + kappa_t).square()).sum() / t;
  return m;
}

// Procedure: mismatch_traces_identity
// K' = identity: only the K spectrum is needed.
inline MismatchTraces mismatch_traces_identity(const Vec& k_spectrum, double kappa_t) {
  MismatchTraces m;
  const double t = static_cast<double>(k_spectrum.size());
  m.tr_kp_resolvent = (1.0 / (k_spectrum.array() + kappa_t)).sum() / t;
  m.df2_kkp = (k_spectrum.array() / (k_spectrum.array() + kappa_t).square()).sum() / t;
  return m;
}

// Test covariance Sigma' in Sigma's eigenbasis: diagonal (co-diagonal) or dense.
struct SigmaPrime {
  std::optional<Vec> diag;
  std::optional<Mat> dense;

  static SigmaPrime same(const SpectralCovariance& c) { return {c.eigenvalues, std::nullopt}; }
  static SigmaPrime codiagonal(Vec d) { return {std::move(d), std::nullopt}; }
  static SigmaPrime full(Mat m) { return {std::nullopt, std::move(m)}; }

  Vec diagonal() const { return diag ? *diag : Vec(dense->diagonal()); }
};

// Out-of-distribution multipliers.
struct OODQuantities {
  double df2_SSp = 0.0;
  double df2_KKp = 0.0;
  double gamma_SSp = 0.0;
  double gamma_SSpKKp = 0.0;
};

// Procedure: ood_quantities
inline OODQuantities ood_quantities(const Solution& s, const SpectralCovariance& c, const SigmaPrime& sp,
                                    double df2_kkp) {
  const Vec spd = sp.diagonal();
  if (spd.size() != c.dim()) throw DimensionMismatch("risk_ood: Sigma' dimension differs from Sigma");
  OODQuantities o;
  const auto l = c.eigenvalues.array();
  o.df2_SSp = (l * spd.array() / (l + s.kappa).square()).sum() / static_cast<double>(c.dim());
  o.df2_KKp = df2_kkp;
  o.gamma_SSp = o.df2_SSp * s.dft2 / (s.df1 * s.dft1);
  o.gamma_SSpKKp = o.df2_SSp * df2_kkp / (s.df1 * s.dft1);
  return o;
}

// Procedure: train_error_mismatched
// Signal: (dft1-dft2)/(S dft1) kappa^2 B/(1-gamma);
// noise: sigma^2 kappa_t [(1/T) Tr K'(K+kappa_t)^-1 - (df1-df2)/df1 df2_KK'/(1-gamma)].
inline double train_error_mismatched(const Solution& s, const SpectralCovariance& c, const MismatchTraces& m,
                                     double sigma2) {
  if (!(s.gamma < 1.0)) return std::numeric_limits<double>::quiet_NaN();
  const double sig = detail::signal_term(c, s.kappa);
  const double signal = detail::inverse_corrgcv(s) * sig / (1.0 - s.gamma);
  const double noise =
      sigma2 * s.kappa_t * (m.tr_kp_resolvent - (s.df1 - s.df2) / s.df1 * m.df2_kkp / (1.0 - s.gamma));
  return signal + noise;
}

// Procedure: risk_ood
// Bias^2 = kappa^2 w (S+k)^-1 S' (S+k)^-1 w; Var_X = kappa^2 gamma_SS'/(1-gamma) w S (S+k)^-2 w;
// Var_Xeps = gamma_SS'KK'/(1-gamma) sigma^2; R_in from the mismatched train error.
inline RiskReport risk_ood(const Solution& s, const SpectralCovariance& c, const SigmaPrime& sp,
                           const MismatchTraces& m, double sigma2) {
  if (!(s.gamma < 1.0)) return detail::divergent_report(sigma2);
  const OODQuantities o = ood_quantities(s, c, sp, m.df2_kkp);
  const Vec wt = (c.teacher.array() / (c.eigenvalues.array() + s.kappa)).matrix();
  const double k2 = s.kappa * s.kappa;
  double bq;
  if (sp.dense) {
    if (sp.dense->rows() != c.dim() || sp.dense->cols() != c.dim())
      throw DimensionMismatch("risk_ood: dense Sigma' has wrong shape");
    bq = wt.dot(*sp.dense * wt);
  } else {
    bq = (wt.array().square() * sp.diag->array()).sum();
  }
  RiskReport r;
  r.bias_sq = s.kappa == 0.0 ? 0.0 : k2 * bq;
  r.var_X = detail::signal_term(c, s.kappa) * o.gamma_SSp / (1.0 - s.gamma);
  r.var_Xeps = o.gamma_SSpKKp / (1.0 - s.gamma) * sigma2;
  r.R_g = r.bias_sq + r.var_X + r.var_Xeps;
  r.sigma_eps_sq = sigma2;
  r.R_out = r.R_g + sigma2;
  r.R_in = train_error_mismatched(s, c, m, sigma2);
  return r;
}

// Matched traces (K' = K) from the solution itself.
inline MismatchTraces matched_traces(const Solution& s) {
  MismatchTraces m;
  m.tr_kp_resolvent = s.dft1;
  m.df2_kkp = s.dft2;
  return m;
}

// ---------------------------------------------------------------------------
// Correlated test point
// ---------------------------------------------------------------------------

// Test-train correlations of a held-out point.
struct CorrelatedTestSpec {
  Vec k;
  Vec alpha;
  double rho = 0.0;
  Index tau = 0;
};

// Procedure: make_correlated_test_spec
// Stationary kernel, horizon tau >= 1: k_t = autocorrelation at lag T + tau - t (t = 1..T).
inline CorrelatedTestSpec make_correlated_test_spec(const CorrelationKernel& kern, const DenseSPD& kmat, Index tau) {
  if (tau < 1) throw DomainError("correlated test: tau must be >= 1");
  const Index t = kmat.order();
  CorrelatedTestSpec c;
  c.tau = tau;
  c.k.resize(t);
  for (Index i = 0; i < t; ++i) c.k[i] = kern.autocorrelation(t + tau - (i + 1));
  const Mat& u = kmat.eigenvectors();
  const Vec& w = kmat.full_eigenvalues();
  c.alpha = u * ((u.transpose() * c.k).array() / w.array()).matrix();
  c.rho = c.k.dot(c.alpha);
  if (!(c.rho < 1.0)) throw DomainError("correlated test: rho >= 1");
  return c;
}

// Procedure: make_correlated_test_spec
// Arbitrary correlation vector k.
inline CorrelatedTestSpec make_correlated_test_spec(const Vec& k, const DenseSPD& kmat) {
  if (k.size() != kmat.order()) throw DimensionMismatch("correlated test: k has wrong length");
  CorrelatedTestSpec c;
  c.k = k;
  const Mat& u = kmat.eigenvectors();
  const Vec& w = kmat.full_eigenvalues();
  c.alpha = u * ((u.transpose() * k).array() / w.array()).matrix();
  c.rho = k.dot(c.alpha);
  if (!(c.rho < 1.0)) throw DomainError("correlated test: rho >= 1");
  return c;
}

struct CorrelatedTestResult {
  RiskReport report;
  double bracket = 1.0;   // 1 - rho + kappa_t^2 alpha^T K (K+kappa_t)^-2 alpha
  double approx = 0.0;    // (1 - rho) R_out
  double extra = 0.0;     // bracket - (1 - rho), in (0, rho]
};

// Procedure: risk_correlated_test
// R_out^k = R_out [1 - rho + kappa_t^2 alpha^T K (K + kappa_t)^-2 alpha]; R_in unchanged.
inline CorrelatedTestResult risk_correlated_test(const Solution& s, const DenseSPD& kmat,
                                                 const CorrelatedTestSpec& spec, const RiskReport& base) {
  if (!(spec.rho < 1.0)) throw DomainError("risk_correlated_test: rho >= 1");
  if (spec.alpha.size() != kmat.order()) throw DimensionMismatch("risk_correlated_test: alpha has wrong length");
  CorrelatedTestResult out;
  if (spec.rho == 0.0 && spec.alpha.squaredNorm() == 0.0) {
    out.report = base;
    out.bracket = 1.0;
    out.approx = base.R_out;
    return out;
  }
  const Mat& u = kmat.eigenvectors();
  const Vec& w = kmat.full_eigenvalues();
  const Vec a = u.transpose() * spec.alpha;
  const double kt = s.kappa_t;
  const double extra = (a.array().square() * w.array() * (kt * kt) / (w.array() + kt).square()).sum();
  out.extra = extra;
  out.bracket = 1.0 - spec.rho + extra;
  RiskReport r = base;
  const double sigma2 = base.sigma_eps_sq;
  r.bias_sq = base.bias_sq * out.bracket;
  r.var_X = base.var_X * out.bracket;
  r.sigma_eps_sq = (1.0 - spec.rho) * sigma2;
  r.R_out = base.R_out * out.bracket;
  r.var_Xeps = r.R_out - r.sigma_eps_sq - r.bias_sq - r.var_X;
  r.R_g = r.bias_sq + r.var_X + r.var_Xeps;
  out.report = r;
  out.approx = (1.0 - spec.rho) * base.R_out;
  return out;
}

// ---------------------------------------------------------------------------
// Estimator asymptotics, scaling, double descent
// ---------------------------------------------------------------------------

struct EstimatorFactors {
  double gcv1 = 0.0;
  double gcv2 = 0.0;
  double carmack = 0.0;
  double corrgcv = 0.0;
};

// Procedure: estimator_asymptotics
// GCV1 = 1/(1-dft1)^2, GCV2 = S^2, Carmack = (1-gamma)^2 CorrGCV^2, CorrGCV = S dft1/(dft1-dft2).
inline EstimatorFactors estimator_asymptotics(const Solution& s) {
  EstimatorFactors f;
  if (!(s.dft1 < 1.0)) throw SingularFactor("estimator_asymptotics: dft1 >= 1");
  f.gcv1 = 1.0 / ((1.0 - s.dft1) * (1.0 - s.dft1));
  f.gcv2 = s.S * s.S;
  f.corrgcv = corrgcv_factor(s);
  f.carmack = (1.0 - s.gamma) * (1.0 - s.gamma) * f.corrgcv * f.corrgcv;
  return f;
}

// Procedure: scaling_prediction
// Exponent of R_out ~ T^e: e = -2 min(alpha, ell) min(r, 1); ell = +inf for ridgeless.
inline double scaling_prediction(double alpha, double r, double ell = std::numeric_limits<double>::infinity()) {
  if (!(alpha > 0.0) || !(r > 0.0) || ell < 0.0) throw DomainError("scaling_prediction: invalid exponents");
  return -2.0 * std::min(alpha, ell) * std::min(r, 1.0);
}

struct DoubleDescentRow {
  double q = 0.0;
  Index T = 0;
  double kappa_corr = 0.0;
  double kappa_uncorr = 0.0;
  double gamma_corr = 0.0;
  double gamma_uncorr = 0.0;
  double Rg_matched = 0.0;
  double Rg_uncorr = 0.0;
  double Rg_mismatched = 0.0;        // K' = identity
  double noise_matched = 0.0;        // Var_Xeps with K' = K
  double noise_mismatched = 0.0;     // Var_Xeps with K' = identity
  double inv_trace = 0.0;            // (1/T) Tr K^-1
};

// Procedure: double_descent_diagnostics
// For each q, T = round(N/q) and the exact finite-T spectrum of the kernel family.
inline std::vector<DoubleDescentRow> double_descent_diagnostics(const SpectralCovariance& c,
                                                                const CorrelationKernel& kern, double lambda,
                                                                double sigma2, const std::vector<double>& qgrid) {
  std::vector<DoubleDescentRow> rows;
  const STransform sid = s_identity();
  for (double q : qgrid) {
    DoubleDescentRow row;
    row.q = q;
    row.T = std::max<Index>(1, static_cast<Index>(std::llround(static_cast<double>(c.dim()) / q)));
    const CorrelationKernel kk = kern.resized(row.T);
    const Vec kspec = kernel_spectrum(kk);
    const STransform sk = s_empirical(kspec);
    const Solution sc = solve(c, sk, q, lambda);
    const Solution su = solve(c, sid, q, lambda);
    row.kappa_corr = sc.kappa;
    row.kappa_uncorr = su.kappa;
    row.gamma_corr = sc.gamma;
    row.gamma_uncorr = su.gamma;
    const RiskReport rm = risk_matched(sc, c, sigma2);
    row.Rg_matched = rm.R_g;
    row.noise_matched = rm.var_Xeps;
    row.Rg_uncorr = risk_uncorrelated(su, c, sigma2).R_g;
    const MismatchTraces mt = mismatch_traces_identity(kspec, sc.kappa_t);
    const RiskReport ro = risk_ood(sc, c, SigmaPrime::same(c), mt, sigma2);
    row.Rg_mismatched = ro.R_g;
    row.noise_mismatched = ro.var_Xeps;
    row.inv_trace = inverse_trace_normalized(kspec);
    rows.push_back(row);
  }
  return rows;
}

}  // end of namespace corrgcv ------------------------------------------------

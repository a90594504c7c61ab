#pragma once

#include <cmath>
#include <string>

#include "covariance.hpp"
#include "stransform.hpp"

namespace corrgcv {

struct RidgeFit {
  Vec w;
  double R_in = 0.0;
  bool dual = false;
};

// Procedure: fit_ridge
// w = (X^T X/T + lambda)^-1 X^T y / T; N x N primal when N <= T, T x T dual otherwise.
inline RidgeFit fit_ridge(const Mat& X, const Vec& y, double lambda, int force = 0) {
  const Index t = X.rows(), n = X.cols();
  if (y.size() != t) throw DimensionMismatch("fit_ridge: y length differs from rows of X");
  if (t == 0 || n == 0) throw DimensionMismatch("fit_ridge: empty design");
  if (lambda < 0.0) throw DomainError("fit_ridge: lambda < 0");
  const double td = static_cast<double>(t);
  RidgeFit f;
  f.dual = force == 0 ? n > t : force > 0;
  if (!f.dual) {
    Mat a = X.transpose() * X;
    a.diagonal().array() += td * lambda;
    Eigen::LLT<Mat> llt(a);
    if (llt.info() != Eigen::Success) throw SingularFactor("fit_ridge: singular primal system");
    f.w = llt.solve(X.transpose() * y);
  } else {
    Mat g = X * X.transpose();
    g.diagonal().array() += td * lambda;
    Eigen::LLT<Mat> llt(g);
    if (llt.info() != Eigen::Success) throw SingularFactor("fit_ridge: singular dual system");
    f.w = X.transpose() * llt.solve(y);
  }
  if (!f.w.allFinite()) throw SingularFactor("fit_ridge: non-finite solution");
  f.R_in = (y - X * f.w).squaredNorm() / td;
  return f;
}

// Everything the data-driven estimators see.
struct EstimatorInputs {
  Vec shared_spectrum;  // the min(N,T) common eigenvalues of X^T X/T and X X^T/T (descending)
  Index N = 0;
  Index T = 0;
  double lambda = 0.0;
  double R_in = 0.0;
  STransform sk;

  double q() const { return static_cast<double>(N) / static_cast<double>(T); }
  // df1 of the empirical covariance; zero modes contribute nothing at lambda > 0.
  double df1_sigma(double l) const { return df1(shared_spectrum, l, N); }
  double df2_sigma(double l) const { return df2(shared_spectrum, l, N); }
  double df1_gram(double l) const { return df1(shared_spectrum, l, T); }
  // Positive part of the shared spectrum (gram recovery needs it).
  Vec nonzero_spectrum(double rel = 1e-12) const {
    const double cut = rel * (shared_spectrum.size() ? shared_spectrum.maxCoeff() : 0.0);
    Index k = 0;
    while (k < shared_spectrum.size() && shared_spectrum[k] > cut) ++k;
    return shared_spectrum.head(k);
  }
};

// Procedure: shared_spectrum
// Eigenvalues of the smaller of X^T X/T and X X^T/T, descending and clamped at 0.
inline Vec shared_spectrum(const Mat& X) {
  const double td = static_cast<double>(X.rows());
  const Mat g = X.cols() <= X.rows() ? Mat(X.transpose() * X / td) : Mat(X * X.transpose() / td);
  Vec w = linalg::sym_eig(g).reverse();
  return w.cwiseMax(0.0);
}

// Procedure: make_estimator_inputs
inline EstimatorInputs make_estimator_inputs(const Mat& X, double R_in, double lambda, STransform sk) {
  if (!(lambda > 0.0)) throw DomainError("estimators: lambda must be > 0");
  EstimatorInputs in;
  in.shared_spectrum = shared_spectrum(X);
  in.N = X.cols();
  in.T = X.rows();
  in.lambda = lambda;
  in.R_in = R_in;
  in.sk = std::move(sk);
  return in;
}

// Procedure: gram_s_transform
// Population S_K recovered from the data and smoothed by interpolation over (0, 0.95 min(1, q, rank/T)).
inline STransform gram_s_transform(const EstimatorInputs& in, InterpMethod method = InterpMethod::poly5,
                                   std::size_t points = 40) {
  const Vec nz = in.nonzero_spectrum();
  const STransform raw = s_from_gram(nz, in.T, in.q());
  const double top = 0.95 * raw.hi;
  const SSamples samples = sample_s(raw, linspace(0.02 * top, top, points));
  STransform s = interpolate_s(samples, method);
  s.description = "interpolated " + raw.description;
  return s;
}

// Intermediates of the CorrGCV chain.
struct CorrGCVResult {
  double estimate = 0.0;
  double factor = 0.0;
  double df1 = 0.0;
  double df2 = 0.0;
  double dft1 = 0.0;
  double dft2 = 0.0;
  double kappa = 0.0;
  double kappa_t = 0.0;
  double S = 0.0;
  double dlogkappa = 0.0;    // d log kappa / d lambda
  double dlogkappa_t = 0.0;  // d log kappa_t / d lambda
};

namespace detail {

struct ChainPoint {
  double x, kappa, kappa_t;
};

// kappa = l S_K(x)/(1-x) and kappa_t = l/(kappa x), x = q df1_Sigma_hat(l).
inline ChainPoint chain_at(const EstimatorInputs& in, double l) {
  const double x = in.q() * in.df1_sigma(l);
  if (!(x < 1.0)) throw EstimatorDomain("estimate_corrgcv: q df1 >= 1 at this lambda");
  if (!(x > 0.0)) throw EstimatorDomain("estimate_corrgcv: q df1 = 0 at this lambda");
  double sv;
  try {
    sv = in.sk(x);
  } catch (const DomainError& e) {
    throw EstimatorDomain(std::string("estimate_corrgcv: ") + e.what());
  }
  const double kappa = l * sv / (1.0 - x);
  return {x, kappa, l / (kappa * x)};
}

}  // namespace detail

// Procedure: estimate_corrgcv
// df2 = df1 + d_l df1 / d_l log kappa; dft2 = q df1 - q (df1 - df2) (d_l log kappa)/(d_l log kappa_t);
// estimate = R_in S dft1/(dft1 - dft2).
inline CorrGCVResult estimate_corrgcv(const EstimatorInputs& in) {
  const double l = in.lambda;
  if (!(l > 0.0)) throw DomainError("estimate_corrgcv: lambda must be > 0");
  const detail::ChainPoint p = detail::chain_at(in, l);
  CorrGCVResult r;
  r.df1 = in.df1_sigma(l);
  r.kappa = p.kappa;
  r.kappa_t = p.kappa_t;
  r.S = p.kappa / l;
  r.dft1 = p.x;
  const double h = 1e-5 * l;
  r.dlogkappa = richardson_derivative([&](double u) { return std::log(detail::chain_at(in, u).kappa); }, l, h);
  r.dlogkappa_t =
      richardson_derivative([&](double u) { return std::log(detail::chain_at(in, u).kappa_t); }, l, h);
  const double ddf1 = df1_derivative(in.shared_spectrum, l, in.N);
  r.df2 = r.df1 + ddf1 / r.dlogkappa;
  r.dft2 = in.q() * r.df1 - in.q() * (r.df1 - r.df2) * r.dlogkappa / r.dlogkappa_t;
  if (!(r.dft1 > r.dft2)) throw SingularFactor("estimate_corrgcv: dft1 <= dft2");
  r.factor = r.S * r.dft1 / (r.dft1 - r.dft2);
  r.estimate = in.R_in * r.factor;
  return r;
}

// Procedure: estimate_gcv1
// R_in / (1 - df1_Khat(lambda))^2.
inline double estimate_gcv1(const EstimatorInputs& in) {
  const double d = in.df1_gram(in.lambda);
  if (!(d < 1.0)) throw SingularFactor("estimate_gcv1: df1 of the Gram matrix equals 1");
  return in.R_in / ((1.0 - d) * (1.0 - d));
}

// Procedure: estimate_gcv2_altman
// R_in S^2 with S = kappa/lambda from the empirical chain.
inline double estimate_gcv2_altman(const EstimatorInputs& in) {
  const detail::ChainPoint p = detail::chain_at(in, in.lambda);
  const double s = p.kappa / in.lambda;
  return in.R_in * s * s;
}

struct CarmackResult {
  double estimate = 0.0;
  double G = 0.0;
  double tr_HK = 0.0;   // (1/T) Tr H K
  double tr_HKH = 0.0;  // (1/T) Tr H K H^T
};

// Procedure: estimate_carmack
// G = 1/[1 - (1/T) Tr(2 H K - H K H^T)]^2, H = X (X^T X + T lambda)^-1 X^T; estimate = G R_in.
inline CarmackResult estimate_carmack(const Mat& X, double R_in, double lambda, const DenseSPD& k_assumed) {
  const Index t = X.rows(), n = X.cols();
  if (k_assumed.order() != t) throw DimensionMismatch("estimate_carmack: K order differs from T");
  if (!(lambda > 0.0)) throw DomainError("estimate_carmack: lambda must be > 0");
  const double td = static_cast<double>(t);
  const Mat& K = k_assumed.matrix();
  CarmackResult c;
  if (n <= t) {
    Mat g = X.transpose() * X;
    Mat a = g;
    a.diagonal().array() += td * lambda;
    Eigen::LLT<Mat> llt(a);
    if (llt.info() != Eigen::Success) throw SingularFactor("estimate_carmack: singular system");
    const Mat m = X.transpose() * K * X;
    const Mat am = llt.solve(m);   // A M
    const Mat ag = llt.solve(g);   // A G
    c.tr_HK = am.trace() / td;
    c.tr_HKH = (am * ag).trace() / td;
  } else {
    Mat kh = X * X.transpose();
    Mat a = kh;
    a.diagonal().array() += td * lambda;
    Eigen::LLT<Mat> llt(a);
    if (llt.info() != Eigen::Success) throw SingularFactor("estimate_carmack: singular system");
    const Mat h = llt.solve(kh);  // symmetric smoothing matrix
    const Mat hk = h * K;
    c.tr_HK = hk.trace() / td;
    c.tr_HKH = (hk * h).trace() / td;
  }
  const double d = 1.0 - (2.0 * c.tr_HK - c.tr_HKH);
  if (d == 0.0) throw SingularFactor("estimate_carmack: vanishing denominator");
  c.G = 1.0 / (d * d);
  c.estimate = c.G * R_in;
  return c;
}

}  // end of namespace corrgcv ------------------------------------------------

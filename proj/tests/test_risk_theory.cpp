#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "corrgcv/covariance.hpp"
#include "corrgcv/estimators.hpp"
#include "corrgcv/experiments.hpp"
#include "corrgcv/risk_theory.hpp"
#include "corrgcv/selfconsistent.hpp"

using namespace corrgcv;

namespace {

void expect_closure(const RiskReport& r) {
  EXPECT_NEAR((r.bias_sq + r.var_X + r.var_Xeps) / r.R_g, 1.0, 1e-12);
  EXPECT_NEAR(r.R_out, r.R_g + r.sigma_eps_sq, 1e-12 * r.R_out);
}

void expect_same(const RiskReport& a, const RiskReport& b, double tol) {
  EXPECT_NEAR(a.bias_sq, b.bias_sq, tol * std::abs(b.bias_sq));
  EXPECT_NEAR(a.var_X, b.var_X, tol * std::abs(b.var_X));
  EXPECT_NEAR(a.var_Xeps, b.var_Xeps, tol * std::abs(b.var_Xeps));
  EXPECT_NEAR(a.R_g, b.R_g, tol * std::abs(b.R_g));
  EXPECT_NEAR(a.R_out, b.R_out, tol * std::abs(b.R_out));
  EXPECT_NEAR(a.R_in, b.R_in, tol * std::abs(b.R_in));
}

}  // namespace

TEST(RiskUncorrelated, TrainTestRatioIsSSquared) {
  const SpectralCovariance c = powerlaw_covariance(1.3, 0.7, 200);
  for (double q : {0.4, 2.5})
    for (double l : {1e-3, 0.3}) {
      const Solution s = solve(c, s_identity(), q, l);
      const RiskReport r = risk_uncorrelated(s, c, 0.25);
      EXPECT_NEAR(r.R_out * (l * l) / (s.kappa * s.kappa) / r.R_in, 1.0, 1e-12);
      expect_closure(r);
    }
}

TEST(RiskUncorrelated, NoiselessUnderparameterizedRecovery) {
  const SpectralCovariance c = powerlaw_covariance(1.0, 1.0, 50);
  const RiskReport r = risk_uncorrelated(solve(c, s_identity(), 0.5, 1e-10), c, 0.0);
  EXPECT_LT(r.R_g, 1e-12);
}

TEST(RiskUncorrelated, MatchesMonteCarlo) {
  const Index n = 500, t = 1000;
  const SpectralCovariance cov = isotropic_covariance(Vec::Ones(n));
  const DataModel m = make_data_model(cov, CorrelationKernel::identity(t), CorrelationKernel::identity(t), 1.0, true);
  std::vector<double> rg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset d = generate_dataset(m, seed, 0);
    const RidgeFit f = fit_ridge(d.X, d.y, 1.0);
    rg.push_back(generalization_error(d.w, f.w, cov));
  }
  const MeanSE ms = mean_se(rg);
  const RiskReport th = risk_uncorrelated(solve(cov, s_identity(), 0.5, 1.0), cov, 1.0);
  EXPECT_LT(std::abs(ms.mean - th.R_g), 3.0 * ms.se) << ms.mean << " vs " << th.R_g;
}

TEST(RiskMatched, IdentityKernelReducesToUncorrelated) {
  const SpectralCovariance c = powerlaw_covariance(1.5, 0.5, 300);
  for (double q : {0.5, 3.0}) {
    const Solution s = solve(c, s_identity(), q, 0.05);
    expect_same(risk_matched(s, c, 0.3), risk_uncorrelated(s, c, 0.3), 1e-12);
  }
}

TEST(RiskMatched, NoiselessHasNoNoiseVariance) {
  const SpectralCovariance c = powerlaw_covariance(1.5, 0.5, 100);
  const RiskReport r = risk_matched(solve(c, s_exponential(100.0), 1.0, 1e-2), c, 0.0);
  EXPECT_EQ(r.var_Xeps, 0.0);
  expect_closure(r);
}

TEST(RiskMatched, CorrGCVFactorIsExact) {
  const SpectralCovariance c = powerlaw_covariance(1.2, 0.8, 250);
  for (const STransform& sk : {s_exponential(30.0), s_nearest_neighbor(0.6), s_identity()})
    for (double q : {0.3, 1.0, 4.0})
      for (double l : {1e-3, 1e-1}) {
        const Solution s = solve(c, sk, q, l);
        const RiskReport r = risk_matched(s, c, 0.4);
        EXPECT_NEAR(corrgcv_factor(s) * r.R_in / r.R_out, 1.0, 1e-10) << sk.description << " q=" << q;
        expect_closure(r);
      }
}

TEST(RiskMatched, DivergentAtInterpolationPeak) {
  const Vec one = Vec::Ones(20);
  Solution s = solve(one, s_identity(), 2.0, 1e-3);
  s.gamma = 1.0;
  const RiskReport r = risk_matched(s, make_covariance(one, one), 0.1);
  EXPECT_TRUE(r.divergent);
  EXPECT_TRUE(std::isinf(r.R_out));
}

TEST(CorrGCVFactor, IdentityKernelIsSSquared) {
  const Solution s = solve(powerlaw_covariance(1.0, 1.0, 100).eigenvalues, s_identity(), 0.7, 0.2);
  EXPECT_NEAR(corrgcv_factor(s) / (s.S * s.S), 1.0, 1e-12);
  EXPECT_NEAR(s.S, 1.0 / (1.0 - s.q * s.df1), 1e-12);
}

TEST(CorrGCVFactor, OrderingStrongCorrelation) {
  const Solution s = solve(Vec::Ones(100), s_exponential(100.0), 1.0, 1e-3);
  const EstimatorFactors f = estimator_asymptotics(s);
  EXPECT_LT(f.gcv1, f.corrgcv);
  EXPECT_LT(f.corrgcv, f.gcv2);
}

TEST(CorrGCVFactor, LargeRidgeNoFitting) {
  const Solution s = solve(Vec::Ones(50), s_exponential(10.0), 2.0, 1e8);
  EXPECT_NEAR(corrgcv_factor(s), 1.0, 1e-6);
}

TEST(RiskOOD, SameDistributionReducesToMatched) {
  const SpectralCovariance c = powerlaw_covariance(1.5, 0.5, 200);
  const Solution s = solve(c, s_exponential(20.0), 1.5, 1e-2);
  const RiskReport ood = risk_ood(s, c, SigmaPrime::same(c), matched_traces(s), 0.5);
  expect_same(ood, risk_matched(s, c, 0.5), 1e-12);
  const OODQuantities o = ood_quantities(s, c, SigmaPrime::same(c), s.dft2);
  EXPECT_NEAR(o.df2_SSp, s.df2, 1e-14);
  EXPECT_NEAR(o.gamma_SSp, s.gamma, 1e-14);
  EXPECT_NEAR(o.gamma_SSpKKp, s.gamma, 1e-14);
}

TEST(RiskOOD, DenseAndCodiagonalAgree) {
  const SpectralCovariance c = powerlaw_covariance(1.5, 0.5, 30);
  const Solution s = solve(c, s_exponential(5.0), 0.8, 1e-2);
  const Vec d = Vec::LinSpaced(30, 0.5, 2.0);
  const RiskReport a = risk_ood(s, c, SigmaPrime::codiagonal(d), matched_traces(s), 0.2);
  const RiskReport b = risk_ood(s, c, SigmaPrime::full(Mat(d.asDiagonal())), matched_traces(s), 0.2);
  expect_same(a, b, 1e-12);
}

TEST(RiskOOD, DoubledTestCovariance) {
  const SpectralCovariance c = powerlaw_covariance(1.5, 0.5, 200);
  const Solution s = solve(c, s_exponential(100.0), 1.2, 1e-2);
  const RiskReport base = risk_matched(s, c, 0.0);
  const RiskReport two = risk_ood(s, c, SigmaPrime::codiagonal(2.0 * c.eigenvalues), matched_traces(s), 0.0);
  EXPECT_NEAR(two.bias_sq / base.bias_sq, 2.0, 1e-12);
  EXPECT_NEAR(two.var_X / base.var_X, 2.0, 1e-12);
}

TEST(RiskOOD, MismatchedNoiseEqualsMatchedWhenKPrimeIsK) {
  const Index t = 200;
  const DenseSPD k = build_kernel_matrix(CorrelationKernel::exponential(10.0, t));
  const SpectralCovariance c = powerlaw_covariance(1.5, 0.5, 100);
  const STransform sk = s_empirical(k.spectrum_desc());
  const Solution s = solve(c, sk, 0.5, 1e-2);
  const MismatchTraces m = mismatch_traces(k, k, s.kappa_t);
  EXPECT_NEAR(m.tr_kp_resolvent / s.dft1, 1.0, 1e-10);
  EXPECT_NEAR(m.df2_kkp / s.dft2, 1.0, 1e-10);
  EXPECT_NEAR(train_error_mismatched(s, c, m, 0.3) / risk_matched(s, c, 0.3).R_in, 1.0, 1e-10);
}

TEST(RiskOOD, NoiselessTrainErrorIsSignalOnly) {
  const Index t = 100;
  const Vec kspec = kernel_spectrum(CorrelationKernel::exponential(10.0, t));
  const SpectralCovariance c = powerlaw_covariance(1.5, 0.5, 50);
  const Solution s = solve(c, s_empirical(kspec), 0.5, 1e-2);
  const MismatchTraces mt = mismatch_traces_identity(kspec, s.kappa_t);
  EXPECT_NEAR(train_error_mismatched(s, c, mt, 0.0) / risk_matched(s, c, 0.0).R_in, 1.0, 1e-12);
}

TEST(RiskOOD, MismatchBound) {
  const Vec kspec = kernel_spectrum(CorrelationKernel::exponential(100.0, 500));
  const double itr = inverse_trace_normalized(kspec);
  for (double kt : {1e-3, 0.1, 1.0, 10.0}) {
    const double lhs = mismatch_traces_identity(kspec, kt).df2_kkp;
    EXPECT_LE(lhs, itr * df2(kspec, kt) * (1.0 + 1e-12)) << kt;
  }
  EXPECT_NEAR(mismatch_traces_identity(kspec, 0.0).df2_kkp / (itr * df2(kspec, 0.0)), 1.0, 1e-10);
}

TEST(CorrelatedTest, ZeroCorrelationReturnsBase) {
  const Index t = 50;
  const DenseSPD k = build_kernel_matrix(CorrelationKernel::exponential(5.0, t));
  const SpectralCovariance c = powerlaw_covariance(1.5, 0.5, 100);
  const Solution s = solve(c, s_empirical(k.spectrum_desc()), 2.0, 1e-2);
  const RiskReport base = risk_matched(s, c, 0.25);
  const CorrelatedTestResult r = risk_correlated_test(s, k, make_correlated_test_spec(Vec::Zero(t), k), base);
  EXPECT_EQ(r.report.R_out, base.R_out);
  EXPECT_EQ(r.report.R_g, base.R_g);
  EXPECT_EQ(r.report.R_in, base.R_in);
  EXPECT_EQ(r.bracket, 1.0);
}

TEST(CorrelatedTest, SuppressionAndBracketBounds) {
  const Index t = 100;
  const CorrelationKernel kern = CorrelationKernel::exponential(100.0, t);
  const DenseSPD k = build_kernel_matrix(kern);
  const SpectralCovariance c = isotropic_covariance(Vec::Ones(100));
  const Solution s = solve(c, s_empirical(k.spectrum_desc()), 1.0, 1e-2);
  const RiskReport base = risk_matched(s, c, 0.25);
  for (Index tau : {1, 5, 20, 100}) {
    const CorrelatedTestSpec spec = make_correlated_test_spec(kern, k, tau);
    EXPECT_NEAR(spec.k[t - 1], std::exp(-static_cast<double>(tau) / 100.0), 1e-15);
    const CorrelatedTestResult r = risk_correlated_test(s, k, spec, base);
    EXPECT_GT(r.extra, 0.0);
    EXPECT_LE(r.extra, spec.rho);
    EXPECT_GT(r.bracket, 1.0 - spec.rho);
    EXPECT_LE(r.bracket, 1.0);
    EXPECT_LT(r.report.R_g, base.R_g);
    EXPECT_EQ(r.report.R_in, base.R_in);
    expect_closure(r.report);
    EXPECT_NEAR(r.approx, (1.0 - spec.rho) * base.R_out, 1e-14);
  }
}

TEST(CorrelatedTest, DegenerateSpecRejected) {
  const DenseSPD k = build_kernel_matrix(CorrelationKernel::exponential(2.0, 10));
  Vec col = k.matrix().col(3);
  EXPECT_THROW(make_correlated_test_spec(col, k), DomainError);
  EXPECT_THROW(make_correlated_test_spec(CorrelationKernel::exponential(2.0, 10), k, 0), DomainError);
}

TEST(EstimatorAsymptotics, IdentityKernelFactors) {
  const SpectralCovariance c = powerlaw_covariance(1.5, 0.5, 300);
  for (double q : {0.3, 0.8})
    for (double l : {1e-3, 0.1}) {
      const Solution s = solve(c, s_identity(), q, l);
      const EstimatorFactors f = estimator_asymptotics(s);
      const double s2 = s.S * s.S;
      EXPECT_NEAR(f.gcv1 / s2, 1.0, 1e-12);
      EXPECT_NEAR(f.gcv2 / s2, 1.0, 1e-12);
      EXPECT_NEAR(f.corrgcv / s2, 1.0, 1e-12);
      EXPECT_NEAR(f.carmack, (1.0 - s.gamma) * (1.0 - s.gamma) * f.corrgcv * f.corrgcv, 1e-12 * f.carmack);
    }
  // Carmack reaches S^2 in the underparameterized ridgeless limit, where gamma = q dft1 = q.
  const Solution s = solve(c, s_identity(), 0.5, 1e-12 * c.eigenvalues.mean());
  EXPECT_NEAR(estimator_asymptotics(s).carmack / (s.S * s.S), 1.0, 1e-8);
}

TEST(EstimatorAsymptotics, WeakCorrelationAllAgree) {
  const Solution s = solve(Vec::Ones(100), s_exponential(1e-2), 0.1, 1e-2);
  const EstimatorFactors f = estimator_asymptotics(s);
  for (double v : {f.gcv1, f.gcv2, f.carmack}) EXPECT_NEAR(v / f.corrgcv, 1.0, 1e-2);
}

TEST(EstimatorAsymptotics, CarmackConsistency) {
  const Solution s = solve(powerlaw_covariance(1.1, 1.0, 100), s_exponential(50.0), 2.0, 1e-2);
  const EstimatorFactors f = estimator_asymptotics(s);
  EXPECT_NEAR(f.carmack, (1.0 - s.gamma) * (1.0 - s.gamma) * corrgcv_factor(s) * corrgcv_factor(s),
              1e-12 * f.carmack);
}

TEST(ScalingPrediction, Exponents) {
  EXPECT_DOUBLE_EQ(scaling_prediction(1.8, 1.0), -3.6);
  EXPECT_DOUBLE_EQ(scaling_prediction(1.0, 2.0), -2.0);
  EXPECT_DOUBLE_EQ(scaling_prediction(1.0, 0.5, 0.4), -0.4);
  EXPECT_THROW(scaling_prediction(0.0, 1.0), DomainError);
}

TEST(DoubleDescent, IdentityKernelColumnsCoincide) {
  const SpectralCovariance c = isotropic_covariance(Vec::Ones(60));
  for (const auto& r : double_descent_diagnostics(c, CorrelationKernel::identity(60), 0.1, 0.5, {0.5, 1.0, 2.0})) {
    EXPECT_NEAR(r.kappa_corr / r.kappa_uncorr, 1.0, 1e-12);
    EXPECT_NEAR(r.gamma_corr / r.gamma_uncorr, 1.0, 1e-12);
    EXPECT_NEAR(r.Rg_matched / r.Rg_uncorr, 1.0, 1e-12);
  }
}

TEST(DoubleDescent, CorrelationsMollifyPeak) {
  const SpectralCovariance c = isotropic_covariance(Vec::Ones(100));
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(std::pow(10.0, -1.0 + 0.1 * i));
  double peak_c = 0.0, peak_u = 0.0;
  for (const auto& r : double_descent_diagnostics(c, CorrelationKernel::exponential(100.0, 100), 0.1, 1.0, grid)) {
    EXPECT_GE(r.kappa_corr, r.kappa_uncorr * (1.0 - 1e-12));
    if (r.q > 0.5 && r.q < 2.0) EXPECT_LE(r.gamma_corr, r.gamma_uncorr);
    peak_c = std::max(peak_c, r.Rg_matched);
    peak_u = std::max(peak_u, r.Rg_uncorr);
  }
  EXPECT_LT(peak_c, peak_u);
}

TEST(DoubleDescent, RidgelessMismatchedNoiseRatio) {
  const SpectralCovariance c = isotropic_covariance(Vec::Ones(200));
  for (const auto& r :
       double_descent_diagnostics(c, CorrelationKernel::exponential(100.0, 100), 0.0, 1.0, {2.0, 4.0})) {
    EXPECT_GT(r.inv_trace, 1.0);
    EXPECT_NEAR(r.noise_mismatched / r.noise_matched / r.inv_trace, 1.0, 1e-6) << "q=" << r.q;
  }
}

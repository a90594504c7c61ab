#include <cmath>

#include <gtest/gtest.h>

#include "corrgcv/covariance.hpp"
#include "corrgcv/selfconsistent.hpp"
#include "corrgcv/stransform.hpp"

using namespace corrgcv;

namespace {

Vec two_modes() {
  Vec s(2);
  s << 1.0, 3.0;
  return s;
}

}  // namespace

TEST(Solve, QuadraticIdentityCase) {
  // Sigma = I, S = 1: kappa^2 + (1 - q - lambda) kappa - lambda = 0.
  const Solution s = solve(Vec::Ones(50), s_identity(), 0.5, 1.0);
  EXPECT_TRUE(s.converged);
  EXPECT_NEAR(s.kappa, 1.280776406404415, 1e-10);
  for (double q : {0.3, 1.0, 3.0})
    for (double l : {1e-3, 0.1, 2.0}) {
      const double b = 1.0 - q - l;
      const double k = 0.5 * (-b + std::sqrt(b * b + 4.0 * l));
      EXPECT_NEAR(solve(Vec::Ones(10), s_identity(), q, l).kappa / k, 1.0, 1e-10) << q << " " << l;
    }
}

TEST(Solve, RidgelessOverparameterized) {
  EXPECT_NEAR(solve(Vec::Ones(20), s_identity(), 2.0, 0.0).kappa, 1.0, 1e-10);
  EXPECT_NEAR(solve(Vec::Ones(20), s_identity(), 4.0, 0.0).kappa, 3.0, 1e-10);
  EXPECT_NEAR(solve(two_modes(), s_identity(), 2.0, 0.0).kappa, std::sqrt(3.0), 1e-10);
  EXPECT_NEAR(ridgeless_kappa(two_modes(), 2.0), std::sqrt(3.0), 1e-10);
  EXPECT_THROW(ridgeless_kappa(two_modes(), 0.5), DomainError);
}

TEST(Solve, RidgelessApproachedContinuously) {
  const Solution r = solve(two_modes(), s_exponential(5.0), 2.0, 0.0);
  const Solution s = solve(two_modes(), s_exponential(5.0), 2.0, 1e-9);
  EXPECT_TRUE(r.ridgeless);
  EXPECT_NEAR(s.kappa / r.kappa, 1.0, 1e-6);
}

TEST(Solve, UnderparameterizedRidgeless) {
  const Solution r = solve(Vec::Ones(10), s_identity(), 0.5, 0.0);
  EXPECT_EQ(r.kappa, 0.0);
  EXPECT_NEAR(r.kappa_t, 1.0, 1e-12);  // (1 - q) / (q S(q))
  EXPECT_THROW(solve(Vec::Ones(10), s_identity(), 1.0, 0.0), DomainError);
}

TEST(Solve, DualRidgeForIdentityKernel) {
  // K = I: kappa_t = (1 - x) / x with x = q df1(kappa).
  for (double q : {0.5, 2.0})
    for (double l : {1e-2, 1.0}) {
      const Solution s = solve(two_modes(), s_identity(), q, l);
      const double x = q * df1(two_modes(), s.kappa);
      EXPECT_NEAR(s.kappa_t, (1.0 - x) / x, 1e-10);
      EXPECT_NEAR(solve_kappa_tilde(s), s.kappa_t, 1e-14);
    }
}

TEST(Solve, GammaForIdentityKernel) {
  const Solution s = solve(two_modes(), s_identity(), 1.5, 0.2);
  EXPECT_NEAR(gamma(s), s.q * s.df2, 1e-12);
  EXPECT_NEAR(s.dft2, s.dft1 * s.dft1, 1e-14);
}

TEST(Solve, KappaIncreasesWithLambda) {
  const STransform sk = s_exponential(10.0);
  double prev = 0.0;
  for (double l : {1e-4, 1e-3, 1e-2, 0.1, 1.0}) {
    const double k = solve(powerlaw_covariance(1.5, 0.5, 200), sk, 2.0, l).kappa;
    EXPECT_GT(k, prev);
    EXPECT_GE(k, l);
    prev = k;
  }
}

TEST(Solve, CorrelationsReduceGamma) {
  const Vec sigma = Vec::Ones(100);
  const Solution corr = solve(sigma, s_exponential(100.0), 1.0, 1e-3);
  const Solution iid = solve(sigma, s_identity(), 1.0, 1e-3);
  EXPECT_LT(corr.gamma, iid.gamma);
  EXPECT_GT(corr.kappa, iid.kappa);
}

TEST(Solve, RejectsBadInputs) {
  EXPECT_THROW(solve(two_modes(), s_identity(), 0.0, 1.0), DomainError);
  EXPECT_THROW(solve(two_modes(), s_identity(), 1.0, -1.0), DomainError);
  Vec bad(2);
  bad << 1.0, 0.0;
  EXPECT_THROW(solve(bad, s_identity(), 1.0, 1.0), DomainError);
}

TEST(Derivatives, ClosedFormMatchesFiniteDifferences) {
  const SpectralCovariance c = powerlaw_covariance(1.5, 0.5, 300);
  for (const STransform& sk : {s_identity(), s_exponential(20.0), s_nearest_neighbor(0.8)})
    for (double q : {0.5, 2.0})
      for (double l : {1e-3, 0.1}) {
        const DerivativeCheck d = check_derivatives(c.eigenvalues, sk, q, l);
        EXPECT_LT(d.rel_kappa, 1e-6) << sk.description << " q=" << q << " l=" << l;
        EXPECT_LT(d.rel_kappa_t, 1e-6) << sk.description << " q=" << q << " l=" << l;
      }
}

TEST(Derivatives, EmpiricalSTransform) {
  const STransform sk = s_empirical(kernel_spectrum(CorrelationKernel::power_law(0.5, 256)));
  const DerivativeCheck d = check_derivatives(Vec::LinSpaced(40, 0.1, 2.0), sk, 1.3, 0.05);
  EXPECT_LT(d.rel_kappa, 1e-6);
  EXPECT_LT(d.rel_kappa_t, 1e-6);
}

TEST(Identities, HoldAtSolution) {
  const SpectralCovariance c = powerlaw_covariance(1.2, 1.0, 500);
  for (const STransform& sk : {s_exponential(3.0), s_empirical(kernel_spectrum(CorrelationKernel::exponential(3.0, 128)))})
    for (double q : {0.25, 4.0}) {
      const Solution s = solve(c, sk, q, 1e-2);
      EXPECT_LT(verify_identities(s, c.eigenvalues, sk).max(), 1e-8) << sk.description << " q=" << q;
    }
}

TEST(Identities, PerturbedKappaDetected) {
  const Vec sigma = Vec::Ones(100);
  Solution s = solve(sigma, s_exponential(100.0), 0.5, 1e-2);
  s.kappa *= 1.01;
  EXPECT_GT(verify_identities(s, sigma, s_exponential(100.0)).max(), 1e-8);
}

TEST(Identities, RidgelessBranch) {
  const Solution over = solve(two_modes(), s_exponential(2.0), 3.0, 0.0);
  EXPECT_LT(verify_identities(over, two_modes(), s_exponential(2.0)).max(), 1e-10);
  const Solution under = solve(two_modes(), s_exponential(2.0), 0.4, 0.0);
  EXPECT_LT(verify_identities(under, two_modes(), s_exponential(2.0)).max(), 1e-10);
}

TEST(DualDf2, SRouteMatchesSpectrum) {
  // dft2 from S and S' agrees with the exact df2 of the kernel spectrum.
  const Vec spec = kernel_spectrum(CorrelationKernel::exponential(4.0, 512));
  STransform sk = s_empirical(spec);
  const double kt = 0.3;
  const double x = df1(spec, kt);
  const double exact = dual_df2(sk, x, kt);
  sk.spectrum.reset();
  EXPECT_NEAR(dual_df2(sk, x, kt) / exact, 1.0, 1e-6);
}

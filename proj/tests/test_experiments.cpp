#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "corrgcv/experiments.hpp"

using namespace corrgcv;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.N = 20;
  c.kernel = CorrelationKernel::exponential(5.0, 1);
  c.T_grid = {40};
  c.lambda_grid = {0.1};
  c.sigma_eps = 0.3;
  c.tau_grid = {1, 5};
  c.seeds = 1;
  c.test_reps = 10;
  return c;
}

int count_source(const SweepResult& r, const std::string& src) {
  int n = 0;
  for (const auto& row : r.rows) n += row.source == src;
  return n;
}

}  // namespace

TEST(GenerateDataset, NoiselessTargets) {
  const Index t = 30;
  const CorrelationKernel k = CorrelationKernel::exponential(4.0, t);
  const DataModel m = make_data_model(powerlaw_covariance(1.2, 1.0, 15), k, k, 0.0, true);
  const Dataset d = generate_dataset(m, 1, 2);
  EXPECT_EQ(d.eps.norm(), 0.0);
  EXPECT_EQ((d.y - d.X * d.w).norm(), 0.0);
  EXPECT_NEAR(d.w.norm(), 1.0, 1e-14);
}

TEST(GenerateDataset, TargetsAreExactlyLinearPlusNoise) {
  const Index t = 30;
  const CorrelationKernel k = CorrelationKernel::nearest_neighbor(0.5, t);
  const DataModel m = make_data_model(isotropic_covariance(Vec::Ones(8)), k, CorrelationKernel::identity(t), 0.7, true);
  const Dataset d = generate_dataset(m, 3, 0);
  EXPECT_EQ((d.y - (d.X * d.w + d.eps)).norm(), 0.0);
  EXPECT_GT(d.eps.norm(), 0.0);
}

TEST(GenerateDataset, WhiteColumnsHaveIdentityCovariance) {
  const Index t = 5000, n = 10;
  const DataModel m = make_data_model(isotropic_covariance(Vec::Ones(n)), CorrelationKernel::identity(t),
                                      CorrelationKernel::identity(t), 0.0, false);
  const Dataset d = generate_dataset(m, 8, 0);
  const Mat c = d.X.transpose() * d.X / static_cast<double>(t);
  EXPECT_LT((c - Mat::Identity(n, n)).cwiseAbs().maxCoeff(), 5.0 / std::sqrt(static_cast<double>(t)));
}

TEST(GenerateDataset, ExponentialLagOneAutocovariance) {
  const Index t = 5000, n = 20;
  const CorrelationKernel k = CorrelationKernel::exponential(10.0, t);
  const DataModel m = make_data_model(isotropic_covariance(Vec::Ones(n)), k, k, 0.0, false);
  const Dataset d = generate_dataset(m, 9, 0);
  std::vector<double> lag1;
  for (Index j = 0; j < n; ++j)
    lag1.push_back(d.X.col(j).head(t - 1).dot(d.X.col(j).tail(t - 1)) / static_cast<double>(t - 1));
  const MeanSE ms = mean_se(lag1);
  EXPECT_LT(std::abs(ms.mean - std::exp(-0.1)), 3.0 * ms.se) << ms.mean << " +- " << ms.se;
}

TEST(GenerateDataset, ReproducibleAndStreamKeyed) {
  const Index t = 25;
  const CorrelationKernel k = CorrelationKernel::exponential(3.0, t);
  const DataModel m = make_data_model(isotropic_covariance(Vec::Ones(6)), k, k, 0.5, true);
  const Dataset a = generate_dataset(m, 4, 7);
  const Dataset other = generate_dataset(m, 4, 8);
  const Dataset b = generate_dataset(m, 4, 7);
  EXPECT_EQ((a.X - b.X).norm(), 0.0);
  EXPECT_EQ((a.y - b.y).norm(), 0.0);
  EXPECT_EQ((a.w - b.w).norm(), 0.0);
  EXPECT_GT((a.X - other.X).norm(), 0.0);
}

TEST(EmpiricalRisks, TrivialFits) {
  const SpectralCovariance cov = powerlaw_covariance(1.5, 0.5, 12);
  const DataModel m = make_data_model(cov, CorrelationKernel::identity(20), CorrelationKernel::identity(20), 0.4, false);
  const Dataset d = generate_dataset(m, 1, 0);
  const RiskReport exact = empirical_risks(d, d.w, cov, 0.16);
  EXPECT_EQ(exact.R_g, 0.0);
  EXPECT_DOUBLE_EQ(exact.R_out, 0.16);
  EXPECT_NEAR(exact.R_in, d.eps.squaredNorm() / 20.0, 1e-15);
  const RiskReport zero = empirical_risks(d, Vec::Zero(12), cov, 0.16);
  EXPECT_NEAR(zero.R_g, (d.w.array().square() * cov.eigenvalues.array()).sum(), 1e-15);
}

TEST(VarianceDecomposition, SumsToTotal) {
  const Index t = 60;
  const CorrelationKernel k = CorrelationKernel::exponential(10.0, t);
  const DataModel m = make_data_model(isotropic_covariance(Vec::Ones(30)), k, k, 0.5, true);
  const Decomposition dec = variance_decomposition(m, 1e-2, 5, 3, 100);
  EXPECT_NEAR(dec.bias_sq + dec.var_X + dec.var_Xeps, dec.total, 1e-12 * dec.total);
  EXPECT_GT(dec.var_Xeps, 0.0);
  EXPECT_THROW(variance_decomposition(m, 1e-2, 1, 3, 100), DomainError);
}

TEST(VarianceDecomposition, NoiselessHasNoNoiseVariance) {
  const Index t = 40;
  const CorrelationKernel k = CorrelationKernel::exponential(10.0, t);
  const DataModel m = make_data_model(isotropic_covariance(Vec::Ones(20)), k, k, 0.0, true);
  EXPECT_EQ(variance_decomposition(m, 1e-2, 4, 5, 0).var_Xeps, 0.0);
}

TEST(CorrelatedTestSampling, ZeroCorrelationIsUnconditionalRisk) {
  const Index t = 30;
  const SpectralCovariance cov = isotropic_covariance(Vec::Ones(10));
  const DenseSPD k = build_kernel_matrix(CorrelationKernel::exponential(5.0, t));
  const DataModel m = make_data_model(cov, CorrelationKernel::exponential(5.0, t), CorrelationKernel::exponential(5.0, t),
                                      0.5, true);
  const Dataset d = generate_dataset(m, 2, 0);
  const Vec w_hat = fit_ridge(d.X, d.y, 0.1).w;
  const CorrelatedTestSpec spec = make_correlated_test_spec(Vec::Zero(t), k);
  const CorrelatedTestSample s = sample_correlated_test(d, w_hat, spec, cov, 0.25, 20000, 0);
  const double r_out = empirical_risks(d, w_hat, cov, 0.25).R_out;
  EXPECT_NEAR(s.conditional, r_out, 1e-14);
  EXPECT_NEAR(s.sampled / r_out, 1.0, 0.05);
}

TEST(CorrelatedTestSampling, ShortHorizonIsOptimisticAndSampledMatchesConditional) {
  const Index t = 60;
  const CorrelationKernel kern = CorrelationKernel::exponential(100.0, t);
  const SpectralCovariance cov = isotropic_covariance(Vec::Ones(20));
  const DataModel m = make_data_model(cov, kern, kern, 0.5, true);
  const Dataset d = generate_dataset(m, 5, 0);
  const Vec w_hat = fit_ridge(d.X, d.y, 1e-2).w;
  double prev = 0.0;
  for (Index tau : {1, 10, 60}) {
    const CorrelatedTestSpec spec = make_correlated_test_spec(kern, m.K, tau);
    const CorrelatedTestSample s = sample_correlated_test(d, w_hat, spec, cov, 0.25, 20000, tau);
    EXPECT_NEAR(s.sampled / s.conditional, 1.0, 0.05) << tau;
    EXPECT_GE(1.0 - spec.rho, prev);
    prev = 1.0 - spec.rho;
  }
  EXPECT_THROW(sample_correlated_test(d, w_hat, make_correlated_test_spec(kern, m.K, 1), cov, 0.25, 0, 0),
               DomainError);
}

TEST(TraceTest, LargeRidgePerturbativeRegime) {
  const Index n = 100, t = 100;
  const TraceTestReport r = trace_test_two_point(Vec::Ones(n), CorrelationKernel::exponential(10.0, t),
                                                 Vec::Ones(n), DenseSPD(Mat::Identity(t, t)), 100.0, 2, 1);
  EXPECT_LT(r.resid1, 1e-3);
  EXPECT_LT(r.resid2, 3e-2);
}

TEST(TraceTest, WorkerCountDoesNotChangeResult) {
  const Index n = 40, t = 50;
  const CorrelationKernel k = CorrelationKernel::exponential(5.0, t);
  const DenseSPD kp = build_kernel_matrix(k);
  const TraceTestReport a = trace_test_two_point(Vec::LinSpaced(n, 0.5, 1.5), k, Vec::Ones(n), kp, 0.1, 4, 3, 1);
  const TraceTestReport b = trace_test_two_point(Vec::LinSpaced(n, 0.5, 1.5), k, Vec::Ones(n), kp, 0.1, 4, 3, 3);
  EXPECT_EQ(a.lhs1, b.lhs1);
  EXPECT_EQ(a.lhs2, b.lhs2);
}

TEST(RunSweep, OnePointOneSeedRowCounts) {
  const ExperimentConfig cfg = small_config();
  const SweepResult r = run_sweep(cfg);
  EXPECT_EQ(r.failures, 0);
  EXPECT_EQ(count_source(r, "theory"), 1);
  EXPECT_EQ(count_source(r, "empirical"), 1);
  for (const char* e : {"corrgcv", "gcv1", "gcv2", "carmack"}) EXPECT_EQ(count_source(r, e), 1) << e;
  EXPECT_EQ(count_source(r, "empirical_corr_test"), 2);
  EXPECT_EQ(count_source(r, "theory_corr_test"), 2);
  EXPECT_EQ(count_source(r, "bias2"), 0);
  for (const auto& row : r.rows) EXPECT_EQ(row.status, "ok") << row.source;
}

TEST(RunSweep, IndependentOfWorkerCount) {
  ExperimentConfig cfg = small_config();
  cfg.seeds = 4;
  cfg.ensemble = 2;
  cfg.T_grid = {30, 50};
  cfg.workers = 1;
  const SweepResult a = run_sweep(cfg);
  cfg.workers = 3;
  const SweepResult b = run_sweep(cfg);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(csv_line(a.rows[i]), csv_line(b.rows[i]));
  EXPECT_EQ(count_source(a, "bias2"), 2);
}

TEST(RunSweep, FailingPointRecordedAndSweepContinues) {
  ExperimentConfig cfg = small_config();
  cfg.kernel = CorrelationKernel::explicit_matrix(build_kernel_matrix(CorrelationKernel::exponential(2.0, 40)).matrix());
  cfg.tau_grid.clear();
  cfg.T_grid = {30, 40};
  const SweepResult r = run_sweep(cfg);
  EXPECT_EQ(r.failures, 1);
  ASSERT_FALSE(r.rows.empty());
  EXPECT_EQ(r.rows.front().T, 30);
  EXPECT_EQ(r.rows.front().status.rfind("error:", 0), 0u);
  EXPECT_EQ(count_source(r, "empirical"), 1);
}

TEST(RunSweep, CsvLineMatchesHeader) {
  SweepRow row;
  row.family = "exponential";
  row.kernel_params = "xi=5";
  row.source = "theory";
  row.status = "error: a, b";
  const std::string line = csv_line(row);
  EXPECT_NE(line.find("\"error: a, b\""), std::string::npos);
  EXPECT_EQ(std::string(csv_header()).find("family,kernel_params,N,T"), 0u);
}

TEST(ExperimentConfigTest, ValidationErrors) {
  ExperimentConfig c = small_config();
  c.seeds = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.lambda_grid = {0.0};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.ensemble = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.estimators = {"loocv"};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.T_grid = {1};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ExperimentConfigTest, QGridResolvesToT) {
  ExperimentConfig c = small_config();
  c.N = 100;
  c.T_grid.clear();
  c.q_grid = {0.5, 1.0, 3.0};
  EXPECT_EQ(c.resolved_T(), (std::vector<Index>{200, 100, 33}));
}

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "covariance.hpp"
#include "estimators.hpp"
#include "random.hpp"
#include "risk_theory.hpp"
#include "selfconsistent.hpp"
#include "stransform.hpp"

namespace corrgcv {

// ---------------------------------------------------------------------------
// Parallel helper
// ---------------------------------------------------------------------------

// Procedure: parallel_for
// Runs f(i) for i in [0, n) on up to `workers` threads; the first exception is rethrown.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& f) {
  const std::size_t nw = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (nw <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex m;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(m);
        if (!err) err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nw);
  for (std::size_t w = 0; w < nw; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

inline int default_workers() {
  const unsigned h = std::thread::hardware_concurrency();
  return h == 0 ? 1 : static_cast<int>(h);
}

// ---------------------------------------------------------------------------
// Data model and generation
// ---------------------------------------------------------------------------

// Everything needed to draw datasets at one (N, T): Sigma spectrum, K, K' and their cached square roots.
struct DataModel {
  SpectralCovariance cov;
  CorrelationKernel kernel;
  CorrelationKernel noise_kernel;
  double sigma_eps = 0.0;
  bool random_teacher = false;
  DenseSPD K;
  DenseSPD Kp;
  std::optional<Mat> K_half;   // empty for the identity kernel
  std::optional<Mat> Kp_half;  // empty for the identity kernel

  Index N() const { return cov.dim(); }
  Index T() const { return kernel.T; }
  bool matched() const { return same_kernel(kernel, noise_kernel); }

  static bool same_kernel(const CorrelationKernel& a, const CorrelationKernel& b) {
    if (a.family != b.family || a.T != b.T) return false;
    if (a.family == KernelFamily::explicit_matrix) return a.matrix == b.matrix;
    return a.param == b.param;
  }
};

// Procedure: make_data_model
// K and K' may be passed prebuilt so their cached decompositions are shared.
inline DataModel make_data_model(const SpectralCovariance& cov, const CorrelationKernel& kernel,
                                 const CorrelationKernel& noise_kernel, double sigma_eps, bool random_teacher,
                                 std::optional<DenseSPD> K = std::nullopt, std::optional<DenseSPD> Kp = std::nullopt) {
  kernel.validate();
  noise_kernel.validate();
  if (kernel.T != noise_kernel.T) throw DimensionMismatch("data model: K and K' differ in order");
  if (sigma_eps < 0.0) throw DomainError("data model: sigma_eps < 0");
  DataModel m;
  m.cov = cov;
  m.kernel = kernel;
  m.noise_kernel = noise_kernel;
  m.sigma_eps = sigma_eps;
  m.random_teacher = random_teacher;
  m.K = K ? *K : build_kernel_matrix(kernel);
  if (kernel.family != KernelFamily::identity) m.K_half = psd_sqrt(m.K).matrix();
  if (m.matched()) {
    m.Kp = m.K;
    m.Kp_half = m.K_half;
  } else {
    m.Kp = Kp ? *Kp : build_kernel_matrix(noise_kernel);
    if (noise_kernel.family != KernelFamily::identity) m.Kp_half = psd_sqrt(m.Kp).matrix();
  }
  return m;
}

// One realized dataset; features are expressed in the eigenbasis of Sigma.
struct Dataset {
  Mat X;
  Vec y;
  Vec eps;
  Vec w;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

enum Substream : std::uint64_t { sub_design = 0, sub_noise = 1, sub_teacher = 2, sub_test = 3 };

// Procedure: draw_teacher
// Uniform on the unit sphere from the teacher substream.
inline Vec draw_teacher(Index n, std::uint64_t seed, std::uint64_t stream) {
  const RandomStream rs = RandomStream{seed, stream}.substream(sub_teacher);
  Vec w(n);
  rs.fill_normal(w.data(), static_cast<std::uint64_t>(n));
  return w / w.norm();
}

// Procedure: generate_dataset
// X = K^1/2 Z Sigma^1/2, eps = sigma_eps K'^1/2 g, y = X w + eps; teacher is fixed, drawn, or given.
inline Dataset generate_dataset(const DataModel& m, std::uint64_t seed, std::uint64_t stream,
                                const std::optional<Vec>& teacher = std::nullopt) {
  const Index t = m.T(), n = m.N();
  const RandomStream rs{seed, stream};
  Dataset d;
  d.seed = seed;
  d.stream = stream;
  Mat z(t, n);
  rs.substream(sub_design).fill_normal(z.data(), static_cast<std::uint64_t>(t * n));
  d.X = m.K_half ? Mat(*m.K_half * z) : std::move(z);
  d.X *= m.cov.eigenvalues.cwiseSqrt().asDiagonal();
  if (m.sigma_eps > 0.0) {
    Vec g(t);
    rs.substream(sub_noise).fill_normal(g.data(), static_cast<std::uint64_t>(t));
    d.eps = m.sigma_eps * (m.Kp_half ? Vec(*m.Kp_half * g) : g);
  } else {
    d.eps = Vec::Zero(t);
  }
  if (teacher) {
    if (teacher->size() != n) throw DimensionMismatch("generate_dataset: teacher length differs from N");
    d.w = *teacher;
  } else {
    d.w = m.random_teacher ? draw_teacher(n, seed, stream) : m.cov.teacher;
  }
  d.y = d.X * d.w + d.eps;
  return d;
}

// Procedure: generalization_error
// (w - w_hat)^T Sigma (w - w_hat) in the eigenbasis.
inline double generalization_error(const Vec& w, const Vec& w_hat, const SpectralCovariance& cov) {
  return ((w - w_hat).array().square() * cov.eigenvalues.array()).sum();
}

// Procedure: empirical_risks
inline RiskReport empirical_risks(const Dataset& d, const Vec& w_hat, const SpectralCovariance& cov,
                                  double sigma2) {
  RiskReport r;
  r.R_in = (d.y - d.X * w_hat).squaredNorm() / static_cast<double>(d.X.rows());
  r.R_g = generalization_error(d.w, w_hat, cov);
  r.R_out = r.R_g + sigma2;
  r.sigma_eps_sq = sigma2;
  return r;
}

// ---------------------------------------------------------------------------
// Bias-variance decomposition
// ---------------------------------------------------------------------------

struct Decomposition {
  double bias_sq = 0.0;
  double var_X = 0.0;
  double var_Xeps = 0.0;
  double total = 0.0;  // mean R_g of the noisy fits
};

// Procedure: variance_decomposition
// E datasets sharing one teacher; Bias2 is the unbiased estimate (E R_g(mean) - mean R_g)/(E-1) over
// noiseless fits, Var_X = mean noiseless R_g - Bias2, Var_Xeps = mean noisy R_g - mean noiseless R_g.
inline Decomposition variance_decomposition(const DataModel& m, double lambda, int E, std::uint64_t seed,
                                            std::uint64_t stream_base) {
  if (E < 2) throw DomainError("variance_decomposition: ensemble size must be >= 2");
  const Vec w = m.random_teacher ? draw_teacher(m.N(), seed, stream_base) : m.cov.teacher;
  Vec mean0 = Vec::Zero(m.N());
  double a = 0.0, c = 0.0;
  for (int e = 0; e < E; ++e) {
    const Dataset d = generate_dataset(m, seed, stream_base + static_cast<std::uint64_t>(e), w);
    const Vec w0 = fit_ridge(d.X, d.y - d.eps, lambda).w;
    const Vec wn = fit_ridge(d.X, d.y, lambda).w;
    mean0 += w0;
    a += generalization_error(w, w0, m.cov);
    c += generalization_error(w, wn, m.cov);
  }
  const double ed = static_cast<double>(E);
  mean0 /= ed;
  a /= ed;
  c /= ed;
  Decomposition r;
  r.bias_sq = (ed * generalization_error(w, mean0, m.cov) - a) / (ed - 1.0);
  r.var_X = a - r.bias_sq;
  r.var_Xeps = c - a;
  r.total = c;
  return r;
}

// ---------------------------------------------------------------------------
// Correlated test point
// ---------------------------------------------------------------------------

struct CorrelatedTestSample {
  double sampled = 0.0;      // mean squared error over the drawn test pairs
  double conditional = 0.0;  // exact conditional expectation given the dataset
};

// Procedure: sample_correlated_test
// x | X ~ N(X^T alpha, (1-rho) Sigma), eps_test | eps ~ N(alpha^T eps, (1-rho) sigma^2).
inline CorrelatedTestSample sample_correlated_test(const Dataset& d, const Vec& w_hat, const CorrelatedTestSpec& spec,
                                                   const SpectralCovariance& cov, double sigma2, int reps,
                                                   std::uint64_t stream_offset = 0) {
  if (!(spec.rho < 1.0)) throw DomainError("sample_correlated_test: rho >= 1");
  if (spec.alpha.size() != d.X.rows()) throw DimensionMismatch("sample_correlated_test: alpha has wrong length");
  if (reps < 1) throw DomainError("sample_correlated_test: reps must be >= 1");
  const Index n = d.X.cols();
  const Vec diff = d.w - w_hat;
  const Vec mean_x = d.X.transpose() * spec.alpha;
  const double mean_e = spec.alpha.dot(d.eps);
  const double c = std::sqrt(1.0 - spec.rho);
  const Vec sd = cov.eigenvalues.cwiseSqrt() * c;
  const double sd_e = std::sqrt(sigma2) * c;
  const double mu = mean_x.dot(diff) + mean_e;
  CorrelatedTestSample out;
  out.conditional = mu * mu + (1.0 - spec.rho) * (generalization_error(diff, Vec::Zero(n), cov) + sigma2);
  const RandomStream rs = RandomStream{d.seed, d.stream}.substream(sub_test);
  const std::uint64_t per = static_cast<std::uint64_t>(n + 1);
  const std::uint64_t base = (stream_offset * static_cast<std::uint64_t>(reps)) * per;
  Vec g(n + 1);
  double acc = 0.0;
  for (int r = 0; r < reps; ++r) {
    rs.fill_normal(g.data(), per, base + static_cast<std::uint64_t>(r) * per);
    const double err = mu + (sd.array() * g.head(n).array() * diff.array()).sum() + sd_e * g[n];
    acc += err * err;
  }
  out.sampled = acc / static_cast<double>(reps);
  return out;
}

// ---------------------------------------------------------------------------
// Two-point trace tests
// ---------------------------------------------------------------------------

struct TraceTestReport {
  double lhs1 = 0.0, rhs1 = 0.0, resid1 = 0.0, se1 = 0.0;
  double lhs2 = 0.0, rhs2 = 0.0, resid2 = 0.0, se2 = 0.0;
  int seeds = 0;
};

// Procedure: trace_test_two_point
// (1/N) Tr[(S_hat+l)^-1 S' (S_hat+l)^-1] vs (1/N) sum S^2 [s'/(s+k)^2 + s gamma_SS'/((s+k)^2 (1-gamma))],
// (1/T^2) Tr[S' (S_hat+l)^-1 X^T K' X (S_hat+l)^-1] vs gamma_SS'KK'/(1-gamma).
// Sigma and Sigma' are co-diagonal; K' is dense.
inline TraceTestReport trace_test_two_point(const Vec& sigma, const CorrelationKernel& kernel, const Vec& sigma_p,
                                            const DenseSPD& kp, double lambda, int seeds, std::uint64_t seed,
                                            int workers = 1) {
  const Index n = sigma.size(), t = kernel.T;
  if (sigma_p.size() != n) throw DimensionMismatch("trace_test: Sigma' dimension differs");
  if (kp.order() != t) throw DimensionMismatch("trace_test: K' order differs from T");
  if (seeds < 1) throw DomainError("trace_test: seeds must be >= 1");
  const SpectralCovariance cov = make_covariance(sigma, Vec::Ones(n));
  // Undo make_covariance's ordering for Sigma' so it stays co-diagonal.
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return sigma[a] > sigma[b]; });
  Vec spd(n);
  for (Index k = 0; k < n; ++k) spd[k] = sigma_p[order[static_cast<std::size_t>(k)]];

  const DataModel m = make_data_model(cov, kernel, CorrelationKernel::identity(t), 0.0, false);
  const Vec kspec = m.K.spectrum_desc();
  const STransform sk = s_empirical(kspec);
  const double q = static_cast<double>(n) / static_cast<double>(t);
  const Solution s = solve(cov, sk, q, lambda);
  const MismatchTraces mt = mismatch_traces(m.K, kp, s.kappa_t);
  const OODQuantities o = ood_quantities(s, cov, SigmaPrime::codiagonal(spd), mt.df2_kkp);

  TraceTestReport r;
  r.seeds = seeds;
  const auto l = cov.eigenvalues.array();
  const double S = s.S;
  r.rhs1 = (S * S * (spd.array() / (l + s.kappa).square() +
                     l / (l + s.kappa).square() * o.gamma_SSp / (1.0 - s.gamma)))
               .sum() /
           static_cast<double>(n);
  r.rhs2 = o.gamma_SSpKKp / (1.0 - s.gamma);

  std::vector<double> v1(static_cast<std::size_t>(seeds)), v2(static_cast<std::size_t>(seeds));
  const double td = static_cast<double>(t);
  parallel_for(static_cast<std::size_t>(seeds), workers, [&](std::size_t i) {
    const Dataset d = generate_dataset(m, seed, static_cast<std::uint64_t>(i));
    Mat a = d.X.transpose() * d.X / td;
    a.diagonal().array() += lambda;
    Eigen::LLT<Mat> llt(a);
    const Mat rinv = llt.solve(Mat::Identity(n, n));            // (S_hat + l)^-1
    const Mat b = rinv * spd.asDiagonal() * rinv;               // R S' R
    v1[i] = b.trace() / static_cast<double>(n);
    const Mat xkx = d.X.transpose() * kp.matrix() * d.X;        // X^T K' X
    v2[i] = (b.cwiseProduct(xkx)).sum() / (td * td);            // Tr[S' R X^T K' X R] / T^2
  });
  auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
    const double nn = static_cast<double>(v.size());
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= nn;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    se = v.size() > 1 ? std::sqrt(ss / (nn - 1.0) / nn) : 0.0;
  };
  mean_se(v1, r.lhs1, r.se1);
  mean_se(v2, r.lhs2, r.se2);
  r.resid1 = std::abs(r.lhs1 - r.rhs1) / std::abs(r.rhs1);
  r.resid2 = std::abs(r.lhs2 - r.rhs2) / std::abs(r.rhs2);
  return r;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct CovarianceSpec {
  enum class Type { identity, power_law } type = Type::identity;
  double alpha = 1.0;
  double r = 1.0;
};

enum class EstimatorS { analytic, spectrum, gram };

struct ExperimentConfig {
  CovarianceSpec covariance;
  Index N = 100;
  CorrelationKernel kernel;                       // T is taken from the grid
  std::optional<CorrelationKernel> noise_kernel;  // defaults to the feature kernel
  std::vector<Index> T_grid;
  std::vector<double> q_grid;  // alternative to T_grid: T = round(N/q)
  std::vector<double> lambda_grid;
  double sigma_eps = 0.5;
  std::vector<Index> tau_grid;
  int seeds = 10;
  std::uint64_t seed = 1;
  int ensemble = 0;  // >= 2 enables the bias-variance rows
  int test_reps = 100;
  bool random_teacher = true;
  SSource theory_s = SSource::spectrum;
  EstimatorS estimator_s = EstimatorS::spectrum;
  std::vector<std::string> estimators{"corrgcv", "gcv1", "gcv2", "carmack"};
  int workers = 1;

  // T values of the grid, from q_grid when given.
  std::vector<Index> resolved_T() const {
    if (q_grid.empty()) return T_grid;
    std::vector<Index> t;
    for (double q : q_grid)
      t.push_back(std::max<Index>(1, static_cast<Index>(std::llround(static_cast<double>(N) / q))));
    return t;
  }

  void validate() const {
    if (N < 1) throw ConfigError("N must be >= 1");
    if (T_grid.empty() && q_grid.empty()) throw ConfigError("T grid and q grid are both empty");
    for (double q : q_grid)
      if (!(q > 0.0)) throw ConfigError("q grid entries must be > 0");
    if (lambda_grid.empty()) throw ConfigError("lambda grid is empty");
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
    if (ensemble == 1 || ensemble < 0) throw ConfigError("ensemble must be 0 or >= 2");
    if (sigma_eps < 0.0) throw ConfigError("sigma_eps must be >= 0");
    for (Index t : resolved_T())
      if (t < 2) throw ConfigError("T grid entries must be >= 2");
    for (double l : lambda_grid)
      if (!(l > 0.0)) throw ConfigError("lambda grid entries must be > 0");
    for (Index tau : tau_grid)
      if (tau < 1) throw ConfigError("tau grid entries must be >= 1");
    for (const auto& e : estimators)
      if (e != "corrgcv" && e != "gcv1" && e != "gcv2" && e != "carmack")
        throw ConfigError("unknown estimator '" + e + "'");
  }
};

struct SweepRow {
  std::string family;
  std::string kernel_params;
  Index N = 0;
  Index T = 0;
  double q = 0.0;
  double lambda = 0.0;
  double sigma_eps = 0.0;
  Index tau = 0;
  std::string source;
  double value = 0.0;
  double stderr_ = 0.0;
  std::string status = "ok";
};

inline const char* csv_header() {
  return "family,kernel_params,N,T,q,lambda,sigma_eps,tau,source,value,stderr,status";
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) {
    if (c == '"') o += '"';
    o += c;
  }
  return o + "\"";
}

inline std::string csv_line(const SweepRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%lld,%.17g,%.17g,%.17g,%lld,", static_cast<long long>(r.N),
                static_cast<long long>(r.T), r.q, r.lambda, r.sigma_eps, static_cast<long long>(r.tau));
  std::string line = csv_escape(r.family) + "," + csv_escape(r.kernel_params) + "," + buf + csv_escape(r.source);
  std::snprintf(buf, sizeof buf, ",%.17g,%.17g,", r.value, r.stderr_);
  return line + buf + csv_escape(r.status);
}

inline SpectralCovariance build_covariance(const CovarianceSpec& c, Index n) {
  if (c.type == CovarianceSpec::Type::power_law) return powerlaw_covariance(c.alpha, c.r, n);
  return isotropic_covariance(Vec::Ones(n));
}

inline std::string kernel_label(const ExperimentConfig& cfg) {
  std::string p = cfg.kernel.params_string();
  const bool same = cfg.noise_kernel && cfg.noise_kernel->family == cfg.kernel.family &&
                    cfg.noise_kernel->param == cfg.kernel.param && cfg.noise_kernel->matrix == cfg.kernel.matrix;
  if (cfg.noise_kernel && !same)
    p += "|noise=" + std::string(family_name(cfg.noise_kernel->family)) + ":" + cfg.noise_kernel->params_string();
  return p;
}

// Mean and standard error.
struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
  int n = 0;
};

inline MeanSE mean_se(const std::vector<double>& v) {
  MeanSE r;
  r.n = static_cast<int>(v.size());
  if (v.empty()) return r;
  double s = 0.0;
  for (double x : v) s += x;
  r.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return r;
}

// Per-seed measurements at one grid point.
struct SeedResult {
  double R_out = 0.0, R_in = 0.0;
  std::map<std::string, double> estimates;
  std::map<std::string, std::string> estimator_errors;
  std::vector<double> corr_test;  // one entry per tau
  std::optional<Decomposition> decomposition;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  int failures = 0;
};

// Kernel matrices, S-transform and correlated-test specs shared by every lambda at one T.
struct PointContext {
  CorrelationKernel k, kp;
  DenseSPD K, Kp;
  bool matched = true;
  STransform sk_theory;
  std::vector<CorrelatedTestSpec> tests;
};

// Procedure: make_point_context
inline PointContext make_point_context(const ExperimentConfig& cfg, Index T) {
  PointContext c;
  auto at = [T](const CorrelationKernel& k) {
    if (k.family != KernelFamily::explicit_matrix) return k.resized(T);
    if (k.T != T) throw DimensionMismatch("explicit kernel order differs from T");
    return k;
  };
  c.k = at(cfg.kernel);
  c.kp = cfg.noise_kernel ? at(*cfg.noise_kernel) : c.k;
  c.k.validate();
  c.kp.validate();
  c.matched = DataModel::same_kernel(c.k, c.kp);
  c.K = build_kernel_matrix(c.k);
  c.Kp = c.matched ? c.K : build_kernel_matrix(c.kp);
  c.sk_theory = s_for_kernel(c.k, cfg.theory_s);
  for (Index tau : cfg.tau_grid) c.tests.push_back(make_correlated_test_spec(c.k, c.K, tau));
  return c;
}

inline SweepRow make_row(const SweepRow& proto, const std::string& src, double v, double se, Index tau = 0,
                         std::string st = "ok") {
  SweepRow r = proto;
  r.source = src;
  r.value = v;
  r.stderr_ = se;
  r.tau = tau;
  r.status = std::move(st);
  return r;
}

// Procedure: theory_point_rows
// Omniscient rows at one (T, lambda): risks, decomposition, estimator factors, correlated-test risks.
inline std::vector<SweepRow> theory_point_rows(const SpectralCovariance& cov, const PointContext& c, double sigma2,
                                               const SweepRow& proto) {
  std::vector<SweepRow> rows;
  const Solution s = solve(cov, c.sk_theory, proto.q, proto.lambda);
  RiskReport rep;
  if (c.matched) {
    rep = risk_matched(s, cov, sigma2);
  } else {
    const MismatchTraces mt = c.kp.family == KernelFamily::identity
                                  ? mismatch_traces_identity(c.K.spectrum_desc(), s.kappa_t)
                                  : mismatch_traces(c.K, c.Kp, s.kappa_t);
    rep = risk_ood(s, cov, SigmaPrime::same(cov), mt, sigma2);
  }
  const std::string st = rep.divergent ? "divergent" : "ok";
  rows.push_back(make_row(proto, "theory", rep.R_out, 0.0, 0, st));
  rows.push_back(make_row(proto, "theory_r_in", rep.R_in, 0.0, 0, st));
  rows.push_back(make_row(proto, "theory_bias2", rep.bias_sq, 0.0, 0, st));
  rows.push_back(make_row(proto, "theory_var_x", rep.var_X, 0.0, 0, st));
  rows.push_back(make_row(proto, "theory_var_xeps", rep.var_Xeps, 0.0, 0, st));
  rows.push_back(make_row(proto, "theory_kappa", s.kappa, 0.0));
  rows.push_back(make_row(proto, "theory_gamma", s.gamma, 0.0));
  if (c.matched && !s.ridgeless && !rep.divergent) {
    try {
      const EstimatorFactors f = estimator_asymptotics(s);
      rows.push_back(make_row(proto, "theory_corrgcv_factor", f.corrgcv, 0.0));
      rows.push_back(make_row(proto, "theory_gcv1_factor", f.gcv1, 0.0));
      rows.push_back(make_row(proto, "theory_gcv2_factor", f.gcv2, 0.0));
      rows.push_back(make_row(proto, "theory_carmack_factor", f.carmack, 0.0));
    } catch (const SingularFactor& e) {
      rows.push_back(make_row(proto, "theory_corrgcv_factor", std::nan(""), 0.0, 0, std::string("error: ") + e.what()));
    }
  }
  if (!rep.divergent) {
    for (const auto& spec : c.tests) {
      const CorrelatedTestResult ct = risk_correlated_test(s, c.K, spec, rep);
      rows.push_back(make_row(proto, "theory_corr_test", ct.report.R_out, 0.0, spec.tau));
      rows.push_back(make_row(proto, "theory_corr_test_approx", ct.approx, 0.0, spec.tau));
    }
  }
  return rows;
}

inline SweepRow point_proto(const ExperimentConfig& cfg, Index T, double lambda) {
  SweepRow proto;
  proto.family = family_name(cfg.kernel.family);
  proto.kernel_params = kernel_label(cfg);
  proto.N = cfg.N;
  proto.T = T;
  proto.q = static_cast<double>(cfg.N) / static_cast<double>(T);
  proto.lambda = lambda;
  proto.sigma_eps = cfg.sigma_eps;
  return proto;
}

// Procedure: run_theory
// Theory rows only, over the T (or q) grid and the lambda grid.
inline SweepResult run_theory(const ExperimentConfig& cfg, const std::function<void(const SweepRow&)>& sink = {}) {
  cfg.validate();
  SweepResult out;
  const SpectralCovariance cov = build_covariance(cfg.covariance, cfg.N);
  const double sigma2 = cfg.sigma_eps * cfg.sigma_eps;
  auto emit = [&](SweepRow r) {
    if (sink) sink(r);
    out.rows.push_back(std::move(r));
  };
  for (Index T : cfg.resolved_T()) {
    std::optional<PointContext> ctx;
    std::string setup_error;
    try {
      ctx = make_point_context(cfg, T);
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    for (double lambda : cfg.lambda_grid) {
      const SweepRow proto = point_proto(cfg, T, lambda);
      if (!ctx) {
        ++out.failures;
        emit(make_row(proto, "theory", std::nan(""), std::nan(""), 0, "error: " + setup_error));
        continue;
      }
      try {
        for (auto& r : theory_point_rows(cov, *ctx, sigma2, proto)) emit(std::move(r));
      } catch (const std::exception& e) {
        ++out.failures;
        emit(make_row(proto, "theory", std::nan(""), std::nan(""), 0, std::string("error: ") + e.what()));
      }
    }
  }
  return out;
}

// Procedure: run_sweep
// Theory, estimator and empirical rows per (T, lambda) grid point, emitted in grid order through `sink`.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const std::function<void(const SweepRow&)>& sink = {}) {
  cfg.validate();
  SweepResult out;
  const SpectralCovariance cov = build_covariance(cfg.covariance, cfg.N);
  const double sigma2 = cfg.sigma_eps * cfg.sigma_eps;
  auto emit = [&](SweepRow r) {
    if (sink) sink(r);
    out.rows.push_back(std::move(r));
  };

  for (Index T : cfg.resolved_T()) {
    std::optional<PointContext> ctx;
    std::optional<DataModel> model;
    std::optional<STransform> sk_est;  // empty: recovered from each dataset's Gram spectrum
    std::string setup_error;
    try {
      ctx = make_point_context(cfg, T);
      model = make_data_model(cov, ctx->k, ctx->kp, cfg.sigma_eps, cfg.random_teacher, ctx->K, ctx->Kp);
      if (cfg.estimator_s == EstimatorS::analytic) sk_est = s_for_kernel(ctx->k, SSource::analytic);
      if (cfg.estimator_s == EstimatorS::spectrum) sk_est = s_for_kernel(ctx->k, SSource::spectrum);
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    const std::vector<CorrelatedTestSpec> tests = ctx ? ctx->tests : std::vector<CorrelatedTestSpec>{};

    for (double lambda : cfg.lambda_grid) {
      const SweepRow proto = point_proto(cfg, T, lambda);
      auto row = [&](const std::string& src, double v, double se, Index tau = 0, std::string st = "ok") {
        return make_row(proto, src, v, se, tau, std::move(st));
      };
      if (!setup_error.empty()) {
        ++out.failures;
        emit(row("theory", std::nan(""), std::nan(""), 0, "error: " + setup_error));
        continue;
      }

      // Theory.
      try {
        for (auto& r : theory_point_rows(cov, *ctx, sigma2, proto)) emit(std::move(r));
      } catch (const std::exception& e) {
        ++out.failures;
        emit(row("theory", std::nan(""), std::nan(""), 0, std::string("error: ") + e.what()));
      }

      // Monte Carlo.
      std::vector<SeedResult> res(static_cast<std::size_t>(cfg.seeds));
      std::string mc_error;
      try {
        parallel_for(res.size(), cfg.workers, [&](std::size_t i) {
          SeedResult& sr = res[i];
          const std::uint64_t stream = static_cast<std::uint64_t>(i);
          const Dataset d = generate_dataset(*model, cfg.seed, stream);
          const RidgeFit fit = fit_ridge(d.X, d.y, lambda);
          const RiskReport emp = empirical_risks(d, fit.w, cov, sigma2);
          sr.R_out = emp.R_out;
          sr.R_in = emp.R_in;
          EstimatorInputs in = make_estimator_inputs(d.X, fit.R_in, lambda, sk_est ? *sk_est : STransform{});
          std::string sk_error;
          if (!sk_est) {
            try {
              in.sk = gram_s_transform(in);
            } catch (const std::exception& e) {
              sk_error = e.what();
            }
          }
          for (const auto& name : cfg.estimators) {
            try {
              if (name == "gcv1") {
                sr.estimates[name] = estimate_gcv1(in);
              } else if (name == "carmack") {
                sr.estimates[name] = estimate_carmack(d.X, fit.R_in, lambda, model->K).estimate;
              } else if (!sk_error.empty()) {
                sr.estimator_errors[name] = sk_error;
              } else {
                sr.estimates[name] =
                    name == "corrgcv" ? estimate_corrgcv(in).estimate : estimate_gcv2_altman(in);
              }
            } catch (const std::exception& e) {
              sr.estimator_errors[name] = e.what();
            }
          }
          for (std::size_t j = 0; j < tests.size(); ++j)
            sr.corr_test.push_back(
                sample_correlated_test(d, fit.w, tests[j], cov, sigma2, cfg.test_reps, j).sampled);
          if (cfg.ensemble >= 2) {
            const std::uint64_t base = (std::uint64_t{1} << 40) + stream * static_cast<std::uint64_t>(cfg.ensemble);
            sr.decomposition = variance_decomposition(*model, lambda, cfg.ensemble, cfg.seed, base);
          }
        });
      } catch (const std::exception& e) {
        mc_error = e.what();
      }
      if (!mc_error.empty()) {
        ++out.failures;
        emit(row("empirical", std::nan(""), std::nan(""), 0, "error: " + mc_error));
        continue;
      }
      auto collect = [&](auto get) {
        std::vector<double> v;
        v.reserve(res.size());
        for (const auto& sr : res) v.push_back(get(sr));
        return mean_se(v);
      };
      const MeanSE ro = collect([](const SeedResult& s) { return s.R_out; });
      const MeanSE ri = collect([](const SeedResult& s) { return s.R_in; });
      emit(row("empirical", ro.mean, ro.se));
      emit(row("empirical_r_in", ri.mean, ri.se));
      for (const auto& name : cfg.estimators) {
        std::vector<double> v;
        std::string err;
        for (const auto& sr : res) {
          auto it = sr.estimates.find(name);
          if (it != sr.estimates.end()) v.push_back(it->second);
          else if (err.empty()) err = sr.estimator_errors.at(name);
        }
        const MeanSE m = mean_se(v);
        if (!err.empty()) ++out.failures;
        emit(row(name, v.empty() ? std::nan("") : m.mean, v.empty() ? std::nan("") : m.se, 0,
                 err.empty() ? "ok" : "error: " + err + " (" + std::to_string(res.size() - v.size()) + " seeds)"));
      }
      for (std::size_t j = 0; j < tests.size(); ++j) {
        const MeanSE m = collect([j](const SeedResult& s) { return s.corr_test[j]; });
        emit(row("empirical_corr_test", m.mean, m.se, tests[j].tau));
      }
      if (cfg.ensemble >= 2) {
        const MeanSE b = collect([](const SeedResult& s) { return s.decomposition->bias_sq; });
        const MeanSE vx = collect([](const SeedResult& s) { return s.decomposition->var_X; });
        const MeanSE ve = collect([](const SeedResult& s) { return s.decomposition->var_Xeps; });
        emit(row("bias2", b.mean, b.se));
        emit(row("var_x", vx.mean, vx.se));
        emit(row("var_xeps", ve.mean, ve.se));
      }
    }
  }
  return out;
}

}  // end of namespace corrgcv ------------------------------------------------

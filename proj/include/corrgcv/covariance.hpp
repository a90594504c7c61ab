#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "linalg.hpp"

namespace corrgcv {

// ---------------------------------------------------------------------------
// SpectralCovariance
// ---------------------------------------------------------------------------

// Feature covariance as a descending spectrum plus teacher components in its eigenbasis.
struct SpectralCovariance {
  Vec eigenvalues;
  Vec teacher;
  std::optional<double> alpha;
  std::optional<double> r;

  Index dim() const { return eigenvalues.size(); }
};

// Procedure: make_covariance
// Sorts the spectrum descending (permuting the teacher alongside) and rescales the teacher to unit norm.
inline SpectralCovariance make_covariance(const Vec& eigenvalues, const Vec& teacher) {
  const Index n = eigenvalues.size();
  if (n == 0) throw DomainError("covariance: empty spectrum");
  if (teacher.size() != n) throw DimensionMismatch("covariance: teacher length differs from spectrum");
  for (Index k = 0; k < n; ++k) {
    if (!(eigenvalues[k] > 0.0) || !std::isfinite(eigenvalues[k]))
      throw DomainError("covariance: eigenvalues must be positive and finite");
  }
  const double norm = teacher.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw DomainError("covariance: teacher has zero norm");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return eigenvalues[a] > eigenvalues[b]; });
  SpectralCovariance c;
  c.eigenvalues.resize(n);
  c.teacher.resize(n);
  for (Index k = 0; k < n; ++k) {
    c.eigenvalues[k] = eigenvalues[order[static_cast<std::size_t>(k)]];
    c.teacher[k] = teacher[order[static_cast<std::size_t>(k)]] / norm;
  }
  return c;
}

// Procedure: isotropic_covariance
inline SpectralCovariance isotropic_covariance(const Vec& teacher) {
  return make_covariance(Vec::Ones(teacher.size()), teacher);
}

// Procedure: powerlaw_covariance
// eigenvalue_k = k^-alpha, teacher_k proportional to k^((alpha - 2 alpha r - 1)/2), unit norm.
inline SpectralCovariance powerlaw_covariance(double alpha, double r, Index n) {
  if (!(alpha > 0.0) || !(r > 0.0)) throw DomainError("powerlaw_covariance: alpha and r must be positive");
  if (n < 1) throw DomainError("powerlaw_covariance: N must be >= 1");
  Vec ev(n), w(n);
  const double wexp = 0.5 * (alpha - 2.0 * alpha * r - 1.0);
  for (Index k = 0; k < n; ++k) {
    const double kk = static_cast<double>(k + 1);
    ev[k] = std::pow(kk, -alpha);
    w[k] = std::pow(kk, wexp);
  }
  SpectralCovariance c;
  c.eigenvalues = std::move(ev);
  c.teacher = w / w.norm();
  c.alpha = alpha;
  c.r = r;
  return c;
}

// ---------------------------------------------------------------------------
// Degrees of freedom
// ---------------------------------------------------------------------------

namespace detail {
inline void check_ridge(const Vec& spectrum, double lambda, const char* who) {
  if (lambda < 0.0 || std::isnan(lambda)) throw DomainError(std::string(who) + ": lambda < 0");
  if (lambda == 0.0 && spectrum.size() > 0 && spectrum.minCoeff() <= 0.0)
    throw DomainError(std::string(who) + ": lambda = 0 requires a strictly positive spectrum");
}
inline double norm_dim(const Vec& spectrum, Index dim) {
  const Index d = dim < 0 ? spectrum.size() : dim;
  if (d < spectrum.size() || d == 0) throw DimensionMismatch("df: dimension smaller than spectrum");
  return static_cast<double>(d);
}
}  // namespace detail

// Procedure: df1
// (1/dim) sum_k l_k/(l_k+lambda); dim defaults to the spectrum length (extra zero modes contribute 0).
inline double df1(const Vec& spectrum, double lambda, Index dim = -1) {
  detail::check_ridge(spectrum, lambda, "df1");
  const double d = detail::norm_dim(spectrum, dim);
  return (spectrum.array() / (spectrum.array() + lambda)).sum() / d;
}

// Procedure: df2
inline double df2(const Vec& spectrum, double lambda, Index dim = -1) {
  detail::check_ridge(spectrum, lambda, "df2");
  const double d = detail::norm_dim(spectrum, dim);
  return (spectrum.array() / (spectrum.array() + lambda)).square().sum() / d;
}

// Procedure: df1_derivative
// d df1 / d lambda = -(1/dim) sum_k l_k/(l_k+lambda)^2.
inline double df1_derivative(const Vec& spectrum, double lambda, Index dim = -1) {
  detail::check_ridge(spectrum, lambda, "df1_derivative");
  const double d = detail::norm_dim(spectrum, dim);
  return -(spectrum.array() / (spectrum.array() + lambda).square()).sum() / d;
}

// ---------------------------------------------------------------------------
// DenseSPD
// ---------------------------------------------------------------------------

// Symmetric matrix with a lazily computed, shared spectral decomposition.
class DenseSPD {
 public:
  DenseSPD() : a_(std::make_shared<const Mat>()), cache_(std::make_shared<Cache>()) {}

  explicit DenseSPD(Mat a) : cache_(std::make_shared<Cache>()) {
    if (a.rows() != a.cols()) throw DimensionMismatch("DenseSPD: matrix not square");
    const double scale = std::max(a.norm(), 1e-300);
    const double asym = (a - a.transpose()).norm();
    if (!(asym <= 1e-12 * scale)) throw DomainError("DenseSPD: matrix not symmetric to 1e-12");
    Mat s = 0.5 * (a + a.transpose());
    a_ = std::make_shared<const Mat>(std::move(s));
  }

  // Constructs from a known decomposition a = v diag(w) v^T (w ascending).
  static DenseSPD from_spectrum(Vec w, Mat v) {
    DenseSPD d(v * w.asDiagonal() * v.transpose());
    std::call_once(d.cache_->full_once, [&] {
      d.cache_->w_full = std::move(w);
      d.cache_->v = std::move(v);
    });
    return d;
  }

  Index order() const { return a_->rows(); }
  const Mat& matrix() const { return *a_; }

  // Ascending eigenvalues; uses the full decomposition when it already exists.
  const Vec& eigenvalues() const {
    if (cache_->full_ready()) return cache_->w_full;
    std::call_once(cache_->values_once, [&] { cache_->w_values = linalg::sym_eig(*a_); });
    return cache_->w_values;
  }

  const Vec& full_eigenvalues() const {
    ensure_full();
    return cache_->w_full;
  }

  const Mat& eigenvectors() const {
    ensure_full();
    return cache_->v;
  }

  // Spectrum in descending order.
  Vec spectrum_desc() const { return eigenvalues().reverse(); }

 private:
  struct Cache {
    std::once_flag full_once;
    std::once_flag values_once;
    std::atomic<bool> full{false};
    Vec w_full;
    Vec w_values;
    Mat v;
    bool full_ready() const { return full.load(std::memory_order_acquire); }
  };

  void ensure_full() const {
    std::call_once(cache_->full_once, [&] { cache_->w_full = linalg::sym_eig(*a_, &cache_->v); });
    cache_->full.store(true, std::memory_order_release);
  }

  std::shared_ptr<const Mat> a_;
  std::shared_ptr<Cache> cache_;
};

// Procedure: df_cross
// (1/N) Tr[A B (A+lambda)^-2] with A diagonal (spectrum a) and B given by its diagonal in the same basis.
inline double df_cross(const Vec& a, const Vec& b_diag, double lambda) {
  if (a.size() != b_diag.size()) throw DimensionMismatch("df_cross: dimension mismatch");
  if (!(lambda > 0.0)) throw DomainError("df_cross: lambda must be positive");
  return (a.array() * b_diag.array() / (a.array() + lambda).square()).sum() / static_cast<double>(a.size());
}

// Procedure: df_cross
// Dense A and B: evaluated in the eigenbasis of A.
inline double df_cross(const DenseSPD& a, const DenseSPD& b, double lambda) {
  if (a.order() != b.order()) throw DimensionMismatch("df_cross: dimension mismatch");
  const Mat& u = a.eigenvectors();
  const Vec bd = (u.transpose() * b.matrix() * u).diagonal();
  return df_cross(a.full_eigenvalues(), bd, lambda);
}

// Procedure: df_cross
// A diagonal (spectrum a) and dense B expressed in A's eigenbasis.
inline double df_cross(const Vec& a, const DenseSPD& b, double lambda) {
  if (a.size() != b.order()) throw DimensionMismatch("df_cross: dimension mismatch");
  return df_cross(a, Vec(b.matrix().diagonal()), lambda);
}

// ---------------------------------------------------------------------------
// Correlation kernels
// ---------------------------------------------------------------------------

enum class KernelFamily { identity, exponential, nearest_neighbor, power_law, explicit_matrix };

inline const char* family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::identity: return "identity";
    case KernelFamily::exponential: return "exponential";
    case KernelFamily::nearest_neighbor: return "nearest_neighbor";
    case KernelFamily::power_law: return "power_law";
    case KernelFamily::explicit_matrix: return "explicit";
  }
  return "unknown";
}

// Sample-sample correlation family, realized as a unit-diagonal Toeplitz (or explicit) matrix of order T.
struct CorrelationKernel {
  KernelFamily family = KernelFamily::identity;
  double param = 0.0;
  Index T = 1;
  std::shared_ptr<const Mat> matrix;

  static CorrelationKernel identity(Index t) { return {KernelFamily::identity, 0.0, t, nullptr}; }
  static CorrelationKernel exponential(double xi, Index t) { return {KernelFamily::exponential, xi, t, nullptr}; }
  static CorrelationKernel nearest_neighbor(double b, Index t) {
    return {KernelFamily::nearest_neighbor, b, t, nullptr};
  }
  static CorrelationKernel power_law(double chi, Index t) { return {KernelFamily::power_law, chi, t, nullptr}; }
  static CorrelationKernel explicit_matrix(Mat m) {
    const Index t = m.rows();
    return {KernelFamily::explicit_matrix, 0.0, t, std::make_shared<const Mat>(std::move(m))};
  }

  // Same family and parameter at a different size.
  CorrelationKernel resized(Index t) const {
    if (family == KernelFamily::explicit_matrix) throw InvalidKernel("explicit kernel cannot be resized");
    CorrelationKernel k = *this;
    k.T = t;
    return k;
  }

  bool stationary() const { return family != KernelFamily::explicit_matrix; }

  void validate() const {
    if (T < 1) throw InvalidKernel("kernel: T must be >= 1");
    switch (family) {
      case KernelFamily::identity: break;
      case KernelFamily::exponential:
        if (!(param > 0.0) || !std::isfinite(param)) throw InvalidKernel("exponential kernel: xi must be > 0");
        break;
      case KernelFamily::nearest_neighbor:
        if (!(param >= 0.0 && param < 1.0)) throw InvalidKernel("nearest_neighbor kernel: b must lie in [0,1)");
        break;
      case KernelFamily::power_law:
        if (!(param > 0.0) || !std::isfinite(param)) throw InvalidKernel("power_law kernel: chi must be > 0");
        break;
      case KernelFamily::explicit_matrix:
        if (!matrix || matrix->rows() != T || matrix->cols() != T)
          throw InvalidKernel("explicit kernel: matrix missing or wrong size");
        break;
    }
  }

  // Autocorrelation at a non-negative lag (stationary families).
  double autocorrelation(Index lag) const {
    if (lag < 0) lag = -lag;
    switch (family) {
      case KernelFamily::identity: return lag == 0 ? 1.0 : 0.0;
      case KernelFamily::exponential: return std::exp(-static_cast<double>(lag) / param);
      case KernelFamily::nearest_neighbor: return lag == 0 ? 1.0 : (lag == 1 ? 0.5 * param : 0.0);
      case KernelFamily::power_law: return std::pow(1.0 + static_cast<double>(lag), -param);
      case KernelFamily::explicit_matrix: break;
    }
    throw InvalidKernel("autocorrelation: explicit kernels are not stationary");
  }

  std::string params_string() const {
    std::ostringstream os;
    os.precision(12);
    switch (family) {
      case KernelFamily::identity: os << "-"; break;
      case KernelFamily::exponential: os << "xi=" << param; break;
      case KernelFamily::nearest_neighbor: os << "b=" << param; break;
      case KernelFamily::power_law: os << "chi=" << param; break;
      case KernelFamily::explicit_matrix: os << "T=" << T; break;
    }
    return os.str();
  }
};

// Procedure: build_kernel_matrix
inline DenseSPD build_kernel_matrix(const CorrelationKernel& k) {
  k.validate();
  if (k.family == KernelFamily::explicit_matrix) {
    DenseSPD d(*k.matrix);
    for (Index t = 0; t < k.T; ++t) {
      if (std::abs(d.matrix()(t, t) - 1.0) > 1e-12) throw InvalidKernel("explicit kernel: diagonal must be 1");
    }
    return d;
  }
  if (k.family == KernelFamily::identity) return DenseSPD(Mat::Identity(k.T, k.T));
  Vec acf(k.T);
  for (Index l = 0; l < k.T; ++l) acf[l] = k.autocorrelation(l);
  Mat m(k.T, k.T);
  for (Index j = 0; j < k.T; ++j)
    for (Index i = 0; i < k.T; ++i) m(i, j) = acf[std::abs(i - j)];
  return DenseSPD(std::move(m));
}

// Procedure: exponential_inverse_tridiagonal
// K^-1 of the exponential (AR(1)) Toeplitz kernel: returns (diagonal, off-diagonal).
inline std::pair<Vec, Vec> exponential_inverse_tridiagonal(double xi, Index t) {
  const double rho = std::exp(-1.0 / xi);
  const double c = 1.0 / (-std::expm1(-2.0 / xi));  // 1/(1 - rho^2)
  Vec d = Vec::Constant(t, (1.0 + rho * rho) * c);
  Vec e = Vec::Constant(std::max<Index>(t - 1, 0), -rho * c);
  d[0] = c;
  d[t - 1] = c;
  if (t == 1) d[0] = 1.0;
  return {d, e};
}

// Procedure: kernel_spectrum
// Exact finite-T spectrum, descending: closed form (identity, nearest-neighbor), tridiagonal inverse
// (exponential), dense eigensolve otherwise.
inline Vec kernel_spectrum(const CorrelationKernel& k) {
  k.validate();
  const Index t = k.T;
  switch (k.family) {
    case KernelFamily::identity: return Vec::Ones(t);
    case KernelFamily::nearest_neighbor: {
      Vec ev(t);
      const double pi = std::acos(-1.0);
      for (Index i = 0; i < t; ++i)
        ev[i] = 1.0 + k.param * std::cos(pi * static_cast<double>(i + 1) / static_cast<double>(t + 1));
      return ev;
    }
    case KernelFamily::exponential: {
      if (t == 1) return Vec::Ones(1);
      auto [d, e] = exponential_inverse_tridiagonal(k.param, t);
      Vec inv = linalg::tridiag_eigvals(std::move(d), std::move(e));  // ascending eigenvalues of K^-1
      return inv.cwiseInverse();                                      // descending eigenvalues of K
    }
    default: return build_kernel_matrix(k).spectrum_desc();
  }
}

// Procedure: inverse_trace_normalized
// (1/T) Tr K^-1 from a spectrum.
inline double inverse_trace_normalized(const Vec& spectrum) {
  return spectrum.cwiseInverse().mean();
}

// Procedure: psd_sqrt
// Principal square root via the spectral decomposition; eigenvalues in (-1e-10 |A|, 0) are clamped.
inline DenseSPD psd_sqrt(const DenseSPD& a) {
  const Vec& w = a.full_eigenvalues();
  const Mat& v = a.eigenvectors();
  if (w.size() == 0) return DenseSPD();
  const double scale = std::max(std::abs(w.maxCoeff()), std::abs(w.minCoeff()));
  Vec s(w.size());
  for (Index i = 0; i < w.size(); ++i) {
    if (w[i] < -1e-10 * scale) throw NotPSD("psd_sqrt: negative eigenvalue " + std::to_string(w[i]));
    s[i] = std::sqrt(std::max(w[i], 0.0));
  }
  return DenseSPD::from_spectrum(s, v);
}

// Procedure: weighted_loss_transform
// (M^1/2 K M^1/2, M^1/2 K' M^1/2).
inline std::pair<DenseSPD, DenseSPD> weighted_loss_transform(const DenseSPD& k, const DenseSPD& kp,
                                                             const DenseSPD& m) {
  if (k.order() != kp.order() || k.order() != m.order())
    throw DimensionMismatch("weighted_loss_transform: dimension mismatch");
  const Vec& w = m.full_eigenvalues();
  if (w.size() > 0 && !(w.minCoeff() > 0.0)) throw NotPSD("weighted_loss_transform: M must be SPD");
  const DenseSPD root = psd_sqrt(m);
  const Mat& r = root.matrix();
  return {DenseSPD(r * k.matrix() * r), DenseSPD(r * kp.matrix() * r)};
}

// ---------------------------------------------------------------------------
// Power-law Toeplitz symbol
// ---------------------------------------------------------------------------

// Procedure: dirichlet_eta
// Alternating series sum_{n>=1} (-1)^(n-1) n^-s accelerated by the Borwein form of the Euler transform.
inline double dirichlet_eta(double s, int terms = 64) {
  if (!(s > 0.0)) throw DomainError("dirichlet_eta: s must be > 0");
  const int n = terms;
  // d_k = n sum_{i=0}^k (n+i-1)! 4^i / ((n-i)! (2i)!), built by the term ratio.
  std::vector<double> d(static_cast<std::size_t>(n + 1));
  double term = 1.0 / static_cast<double>(n);  // i = 0: (n-1)!/n! = 1/n
  double acc = term;
  d[0] = static_cast<double>(n) * acc;
  for (int i = 1; i <= n; ++i) {
    term *= 4.0 * static_cast<double>(n + i - 1) * static_cast<double>(n - i + 1) /
            (static_cast<double>(2 * i) * static_cast<double>(2 * i - 1));
    acc += term;
    d[static_cast<std::size_t>(i)] = static_cast<double>(n) * acc;
  }
  const double dn = d[static_cast<std::size_t>(n)];
  double sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    sum += sign * (d[static_cast<std::size_t>(k)] - dn) / std::pow(static_cast<double>(k + 1), s);
  }
  return -sum / dn;
}

// Procedure: powerlaw_symbol_min
// Minimum of the power-law Toeplitz symbol: 2 eta(chi) - 1.
inline double powerlaw_symbol_min(double chi) {
  if (!(chi > 0.0)) throw DomainError("powerlaw_symbol_min: chi must be > 0");
  return 2.0 * dirichlet_eta(chi) - 1.0;
}

}  // end of namespace corrgcv ------------------------------------------------

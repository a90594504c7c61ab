#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

// Boost 1.74 pchip calls isnan unqualified.
namespace boost::math::interpolators {
using std::isnan;
}
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/tools/roots.hpp>

#include "covariance.hpp"

namespace corrgcv {

enum class SProvenance { analytic, empirical, interpolated };

// Procedure: richardson_derivative
// Centered difference with step h and one Richardson level: (4 D(h/2) - D(h)) / 3.
template <typename F>
double richardson_derivative(F&& f, double x, double h) {
  const double d1 = (f(x + h) - f(x - h)) / (2.0 * h);
  const double h2 = 0.5 * h;
  const double d2 = (f(x + h2) - f(x - h2)) / (2.0 * h2);
  return (4.0 * d2 - d1) / 3.0;
}

// S-transform S_A(df) = (1 - df) / (df * df^-1_A(df)) as a function object.
struct STransform {
  std::function<double(double)> eval;
  std::function<double(double)> deriv;
  SProvenance provenance = SProvenance::analytic;
  std::string description;
  double lo = 0.0;  // exclusive
  double hi = 1.0;  // inclusive
  std::shared_ptr<const Vec> spectrum;

  double operator()(double df) const {
    if (!(df > lo && df <= hi)) {
      std::ostringstream os;
      os << description << ": df=" << df << " outside (" << lo << ", " << hi << "]";
      throw DomainError(os.str());
    }
    return eval(df);
  }

  double derivative(double df) const {
    if (deriv) return deriv(df);
    double h = 1e-5 * std::min(df, 1.0 - df);
    if (!(h > 0.0)) h = 1e-7;
    if (df + h > hi) {
      const double hb = std::min(1e-5 * df, 0.25 * (df - lo));
      return (3.0 * (*this)(df) - 4.0 * (*this)(df - hb) + (*this)(df - 2.0 * hb)) / (2.0 * hb);
    }
    return richardson_derivative([this](double x) { return (*this)(x); }, df, h);
  }

  bool has_spectrum() const { return static_cast<bool>(spectrum); }
};

// Procedure: s_identity
inline STransform s_identity() {
  STransform s;
  s.eval = [](double) { return 1.0; };
  s.deriv = [](double) { return 0.0; };
  s.description = "analytic(identity)";
  return s;
}

// Procedure: s_wishart_factor
// 1/(1 - q df), valid for q df < 1.
inline STransform s_wishart_factor(double q) {
  if (!(q > 0.0)) throw DomainError("s_wishart_factor: q must be > 0");
  STransform s;
  s.eval = [q](double df) {
    const double x = q * df;
    if (x >= 1.0) throw DomainError("s_wishart_factor: pole at q*df >= 1");
    return 1.0 / (1.0 - x);
  };
  s.deriv = [q](double df) {
    const double x = 1.0 - q * df;
    if (x <= 0.0) throw DomainError("s_wishart_factor: pole at q*df >= 1");
    return q / (x * x);
  };
  s.description = "analytic(wishart q=" + std::to_string(q) + ")";
  s.hi = std::min(1.0, std::nextafter(1.0 / q, 0.0));
  return s;
}

// Procedure: s_exponential
// (b df + sqrt(1 + (b^2-1) df^2)) / (1 + df) with b = coth(1/xi).
inline STransform s_exponential(double xi) {
  if (!(xi > 0.0)) throw InvalidKernel("s_exponential: xi must be > 0");
  const double x = 1.0 / xi;
  const double b = 1.0 / std::tanh(x);
  const double sh = std::sinh(x);
  const double c = std::isfinite(sh) ? 1.0 / (sh * sh) : 0.0;  // b^2 - 1
  STransform s;
  s.eval = [b, c](double df) { return (b * df + std::sqrt(1.0 + c * df * df)) / (1.0 + df); };
  s.deriv = [b, c](double df) {
    const double r = std::sqrt(1.0 + c * df * df);
    const double num = (b + c * df / r) * (1.0 + df) - (b * df + r);
    return num / ((1.0 + df) * (1.0 + df));
  };
  std::ostringstream os;
  os.precision(12);
  os << "analytic(exponential xi=" << xi << ")";
  s.description = os.str();
  return s;
}

// Procedure: s_nearest_neighbor
// (2 - df) / ((1 - df) + sqrt(1 - b^2 df (2 - df))).
inline STransform s_nearest_neighbor(double b) {
  if (!(b >= 0.0 && b < 1.0)) throw InvalidKernel("s_nearest_neighbor: b must lie in [0,1)");
  const double b2 = b * b;
  STransform s;
  s.eval = [b2](double df) { return (2.0 - df) / ((1.0 - df) + std::sqrt(1.0 - b2 * df * (2.0 - df))); };
  s.deriv = [b2](double df) {
    const double r = std::sqrt(1.0 - b2 * df * (2.0 - df));
    const double den = (1.0 - df) + r;
    const double dden = -1.0 - b2 * (1.0 - df) / r;
    return (-den - (2.0 - df) * dden) / (den * den);
  };
  std::ostringstream os;
  os.precision(12);
  os << "analytic(nearest_neighbor b=" << b << ")";
  s.description = os.str();
  return s;
}

// Procedure: df1_inverse
// Solves df1(spectrum, l; dim) = x for l > 0 by bisection in log l. The initial bracket spans
// [1e-14, 1e14] times the spectral scale and is widened geometrically when it does not bracket.
inline double df1_inverse(const Vec& spectrum, double x, Index dim = -1) {
  if (spectrum.size() == 0) throw DomainError("df1_inverse: empty spectrum");
  const double d = dim < 0 ? static_cast<double>(spectrum.size()) : static_cast<double>(dim);
  const double xmax = static_cast<double>(spectrum.size()) / d;
  if (!(x > 0.0 && x < xmax)) throw DomainError("df1_inverse: target outside (0, rank/dim)");
  const double lmax = spectrum.maxCoeff();
  double lo = std::log(1e-14 * lmax), hi = std::log(1e14 * lmax);
  auto f = [&](double u) { return df1(spectrum, std::exp(u), dim) - x; };
  while (f(lo) < 0.0) {
    lo -= 10.0 * std::log(10.0);
    if (lo < -700.0) throw DomainError("df1_inverse: no lower bracket");
  }
  while (f(hi) > 0.0) {
    hi += 10.0 * std::log(10.0);
    if (hi > 700.0) throw DomainError("df1_inverse: no upper bracket");
  }
  std::uintmax_t iters = 400;
  auto tol = [](double a, double b) { return std::abs(a - b) <= 0x1p-50 * std::max(1.0, std::abs(a)); };
  auto r = boost::math::tools::bisect(f, lo, hi, tol, iters);
  return std::exp(0.5 * (r.first + r.second));
}

namespace detail {

// S and dS/dx from a spectrum with the (q - x) Gram prefactor (q <= 0 disables it).
inline double s_from_spectrum(const Vec& spec, Index dim, double q, double x) {
  const double l = df1_inverse(spec, x, dim);
  const double pre = q > 0.0 ? (q - x) : 1.0;
  return pre * (1.0 - x) / (x * l);
}

inline double ds_from_spectrum(const Vec& spec, Index dim, double q, double x) {
  const double l = df1_inverse(spec, x, dim);
  const double pre = q > 0.0 ? (q - x) : 1.0;
  const double s = pre * (1.0 - x) / (x * l);
  const double dl = 1.0 / df1_derivative(spec, l, dim);
  double dlog = -1.0 / (1.0 - x) - 1.0 / x - dl / l;
  if (q > 0.0) dlog -= 1.0 / (q - x);
  return s * dlog;
}

}  // namespace detail

// Procedure: s_empirical
// S-transform of an empirical spectrum by bisection inversion of df1; df = 1 uses mean(1/l).
inline STransform s_empirical(const Vec& spectrum) {
  if (spectrum.size() == 0) throw DomainError("s_empirical: empty spectrum");
  if (!(spectrum.minCoeff() > 0.0)) throw DomainError("s_empirical: spectrum must be positive");
  auto spec = std::make_shared<const Vec>(spectrum);
  const double inv_mean = spectrum.cwiseInverse().mean();
  STransform s;
  s.eval = [spec, inv_mean](double x) {
    if (x >= 1.0) return inv_mean;
    return detail::s_from_spectrum(*spec, -1, 0.0, x);
  };
  s.deriv = [spec](double x) {
    if (x >= 1.0) x = 1.0 - 1e-9;
    return detail::ds_from_spectrum(*spec, -1, 0.0, x);
  };
  s.provenance = SProvenance::empirical;
  s.description = "empirical(spectrum n=" + std::to_string(spectrum.size()) + ")";
  s.spectrum = spec;
  return s;
}

// Procedure: s_from_gram
// Population S_K recovered from the nonzero Gram spectrum (K_hat = X X^T / T of order T):
// S_K(x) = (q - x)(1 - x) / (x df^-1_{K_hat}(x)), for 0 < x < min(1, q).
inline STransform s_from_gram(const Vec& gram_nonzero, Index T, double q) {
  if (gram_nonzero.size() == 0 || !(gram_nonzero.minCoeff() > 0.0))
    throw DomainError("s_from_gram: need a positive nonzero Gram spectrum");
  if (gram_nonzero.size() > T) throw DimensionMismatch("s_from_gram: more eigenvalues than T");
  if (!(q > 0.0)) throw DomainError("s_from_gram: q must be > 0");
  auto spec = std::make_shared<const Vec>(gram_nonzero);
  STransform s;
  const double top = std::min({1.0, q, static_cast<double>(gram_nonzero.size()) / static_cast<double>(T)});
  s.eval = [spec, T, q, top](double x) {
    if (x >= top) throw DomainError("s_from_gram: df >= min(1, q)");
    return detail::s_from_spectrum(*spec, T, q, x);
  };
  s.deriv = [spec, T, q, top](double x) {
    if (x >= top) throw DomainError("s_from_gram: df >= min(1, q)");
    return detail::ds_from_spectrum(*spec, T, q, x);
  };
  s.provenance = SProvenance::empirical;
  s.description = "gram(T=" + std::to_string(T) + ")";
  s.hi = std::nextafter(top, 0.0);
  return s;
}

// ---------------------------------------------------------------------------
// Interpolation
// ---------------------------------------------------------------------------

enum class InterpMethod { poly5, pchip };

using SSamples = std::vector<std::pair<double, double>>;

// Procedure: interpolate_s
// Degree-5 least-squares polynomial (default) or monotone piecewise cubic through (df, S) samples.
inline STransform interpolate_s(const SSamples& samples, InterpMethod method = InterpMethod::poly5) {
  if (samples.size() < 6) throw DomainError("interpolate_s: need at least 6 samples");
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].first > samples[i - 1].first))
      throw DomainError("interpolate_s: df grid must be strictly increasing");
  }
  const double x0 = samples.front().first, x1 = samples.back().first;
  STransform s;
  s.provenance = SProvenance::interpolated;
  if (method == InterpMethod::poly5) {
    const double c = 0.5 * (x0 + x1), h = 0.5 * (x1 - x0);
    const Index m = static_cast<Index>(samples.size());
    Mat a(m, 6);
    Vec y(m);
    for (Index i = 0; i < m; ++i) {
      const double t = (samples[static_cast<std::size_t>(i)].first - c) / h;
      double p = 1.0;
      for (int j = 0; j < 6; ++j) {
        a(i, j) = p;
        p *= t;
      }
      y[i] = samples[static_cast<std::size_t>(i)].second;
    }
    Vec coef = a.colPivHouseholderQr().solve(y);
    auto co = std::make_shared<const Vec>(coef);
    s.eval = [co, c, h](double x) {
      const double t = (x - c) / h;
      double v = 0.0;
      for (int j = 5; j >= 0; --j) v = v * t + (*co)[j];
      return v;
    };
    s.deriv = [co, c, h](double x) {
      const double t = (x - c) / h;
      double v = 0.0;
      for (int j = 5; j >= 1; --j) v = v * t + j * (*co)[j];
      return v / h;
    };
    s.description = "interpolated(poly5)";
  } else {
    std::vector<double> xs, ys;
    for (auto& p : samples) {
      xs.push_back(p.first);
      ys.push_back(p.second);
    }
    auto ip = std::make_shared<boost::math::interpolators::pchip<std::vector<double>>>(std::move(xs), std::move(ys));
    const double y0 = samples.front().second, y1 = samples.back().second;
    s.eval = [ip, x0, x1, y0, y1](double x) {
      if (x < x0) return y0 + ip->prime(x0) * (x - x0);
      if (x > x1) return y1 + ip->prime(x1) * (x - x1);
      return (*ip)(x);
    };
    s.deriv = [ip, x0, x1](double x) { return ip->prime(std::clamp(x, x0, x1)); };
    s.description = "interpolated(pchip)";
  }
  return s;
}

// Procedure: sample_s
inline SSamples sample_s(const STransform& s, const std::vector<double>& grid) {
  SSamples out;
  out.reserve(grid.size());
  for (double x : grid) out.emplace_back(x, s(x));
  return out;
}

// Procedure: linspace
inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

// Procedure: write_s_table
inline void write_s_table(const std::string& path, const SSamples& samples) {
  std::ofstream os(path);
  if (!os) throw Error("write_s_table: cannot open " + path);
  os.precision(17);
  os << "df,S\n";
  for (auto& [x, y] : samples) os << x << ',' << y << '\n';
}

// Procedure: read_s_table
inline SSamples read_s_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("read_s_table: cannot open " + path);
  SSamples out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && (line.find_first_not_of("0123456789.eE+-, \t") != std::string::npos)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error("read_s_table: line " + std::to_string(lineno) + " lacks a comma");
    try {
      out.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw Error("read_s_table: unparsable line " + std::to_string(lineno));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kernel dispatch
// ---------------------------------------------------------------------------

enum class SSource { analytic, spectrum };

// Procedure: s_for_kernel
// analytic: closed form where one exists (power-law and explicit fall back to the spectrum);
// spectrum: s_empirical on the exact finite-T spectrum.
inline STransform s_for_kernel(const CorrelationKernel& k, SSource src) {
  k.validate();
  if (src == SSource::analytic) {
    switch (k.family) {
      case KernelFamily::identity: return s_identity();
      case KernelFamily::exponential: return s_exponential(k.param);
      case KernelFamily::nearest_neighbor: return s_nearest_neighbor(k.param);
      default: break;
    }
  }
  STransform s = s_empirical(kernel_spectrum(k));
  s.description = std::string("spectrum(") + family_name(k.family) + " " + k.params_string() +
                  " T=" + std::to_string(k.T) + ")";
  return s;
}

}  // end of namespace corrgcv ------------------------------------------------

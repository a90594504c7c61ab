#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "experiments.hpp"

namespace corrgcv {

struct EstimateSettings {
  Index T = 0;                                             // 0: first grid value
  double lambda = std::numeric_limits<double>::quiet_NaN();  // NaN: first grid value
  std::uint64_t stream = 0;
  std::string data_path;  // CSV with columns x_1..x_N, y; empty: generate
};

struct ValidateSettings {
  std::string level = "fast";
};

// Fully resolved run configuration.
struct RunConfig {
  std::string name = "run";
  ExperimentConfig experiment;
  EstimateSettings estimate;
  ValidateSettings validate;
  std::string kernel_file;  // explicit kernel source, kept for the manifest
};

namespace detail {

inline std::string where(const YAML::Node& n, const std::string& field) {
  std::ostringstream os;
  const YAML::Mark m = n.Mark();
  if (m.line >= 0) os << "line " << (m.line + 1) << ", ";
  os << "field '" << field << "'";
  return os.str();
}

[[noreturn]] inline void fail(const YAML::Node& n, const std::string& field, const std::string& msg) {
  throw ConfigError(where(n, field) + ": " + msg);
}

template <typename T>
T scalar(const YAML::Node& n, const std::string& field) {
  if (!n.IsScalar()) fail(n, field, "expected a scalar");
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    fail(n, field, "cannot parse '" + n.Scalar() + "'");
  }
}

inline void check_keys(const YAML::Node& n, const std::string& field, const std::set<std::string>& allowed) {
  if (!n.IsMap()) fail(n, field, "expected a mapping");
  for (const auto& kv : n) {
    const std::string k = kv.first.as<std::string>();
    if (!allowed.count(k)) fail(kv.first, field.empty() ? k : field + "." + k, "unknown key");
  }
}

// Scalar, list, or {logspace|linspace: [a, b, n]} / {range: [a, b]}.
inline std::vector<double> real_grid(const YAML::Node& n, const std::string& field) {
  std::vector<double> out;
  if (n.IsScalar()) {
    out.push_back(scalar<double>(n, field));
  } else if (n.IsSequence()) {
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(scalar<double>(n[i], field + "[" + std::to_string(i) + "]"));
  } else if (n.IsMap()) {
    check_keys(n, field, {"logspace", "linspace", "range"});
    if (n.size() != 1) fail(n, field, "expected exactly one of logspace, linspace, range");
    const std::string kind = n.begin()->first.as<std::string>();
    const YAML::Node a = n.begin()->second;
    const std::string f = field + "." + kind;
    if (!a.IsSequence()) fail(a, f, "expected a list");
    if (kind == "range") {
      if (a.size() != 2 && a.size() != 3) fail(a, f, "expected [start, stop] or [start, stop, step]");
      const double lo = scalar<double>(a[0], f), hi = scalar<double>(a[1], f);
      const double step = a.size() == 3 ? scalar<double>(a[2], f) : 1.0;
      if (!(step > 0.0)) fail(a, f, "step must be > 0");
      for (double v = lo; v <= hi + 1e-9 * step; v += step) out.push_back(v);
    } else {
      if (a.size() != 3) fail(a, f, "expected [start, stop, count]");
      const double lo = scalar<double>(a[0], f), hi = scalar<double>(a[1], f);
      const int cnt = scalar<int>(a[2], f);
      if (cnt < 1) fail(a, f, "count must be >= 1");
      if (kind == "logspace" && !(lo > 0.0 && hi > 0.0)) fail(a, f, "logspace endpoints must be > 0");
      for (int i = 0; i < cnt; ++i) {
        const double t = cnt == 1 ? 0.0 : static_cast<double>(i) / (cnt - 1);
        out.push_back(kind == "logspace" ? std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)))
                                         : lo + t * (hi - lo));
      }
    }
  } else {
    fail(n, field, "expected a number, list, or grid mapping");
  }
  if (out.empty()) fail(n, field, "grid is empty");
  return out;
}

// Integer grid: values are rounded and consecutive duplicates dropped.
inline std::vector<Index> int_grid(const YAML::Node& n, const std::string& field) {
  std::vector<Index> out;
  for (double v : real_grid(n, field)) {
    if (!std::isfinite(v)) fail(n, field, "non-finite value");
    const Index r = static_cast<Index>(std::llround(v));
    if (out.empty() || out.back() != r) out.push_back(r);
  }
  return out;
}

inline Mat read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> r;
    std::stringstream ss(line);
    std::string cell;
    bool header = false;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        r.push_back(std::stod(cell, &pos));
      } catch (const std::exception&) {
        header = true;
        break;
      }
    }
    if (header) {
      if (rows.empty()) continue;
      throw ConfigError(path + ": line " + std::to_string(lineno) + ": non-numeric cell");
    }
    if (!rows.empty() && r.size() != rows.front().size())
      throw ConfigError(path + ": line " + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ConfigError(path + ": no data rows");
  Mat m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

inline CorrelationKernel parse_kernel(const YAML::Node& n, const std::string& field, const std::string& base_dir,
                                      std::string* file_out) {
  if (n.IsScalar()) {
    const std::string fam = n.Scalar();
    if (fam == "identity") return CorrelationKernel::identity(1);
    fail(n, field, "only 'identity' may be given without parameters");
  }
  check_keys(n, field, {"family", "xi", "b", "chi", "file"});
  if (!n["family"]) fail(n, field + ".family", "missing");
  const std::string fam = scalar<std::string>(n["family"], field + ".family");
  auto need = [&](const char* key) {
    if (!n[key]) fail(n, field + "." + key, std::string("required for family '") + fam + "'");
    return scalar<double>(n[key], field + "." + key);
  };
  CorrelationKernel k;
  if (fam == "identity") {
    k = CorrelationKernel::identity(1);
  } else if (fam == "exponential") {
    k = CorrelationKernel::exponential(need("xi"), 1);
  } else if (fam == "nearest_neighbor") {
    k = CorrelationKernel::nearest_neighbor(need("b"), 1);
  } else if (fam == "power_law") {
    k = CorrelationKernel::power_law(need("chi"), 1);
  } else if (fam == "explicit") {
    if (!n["file"]) fail(n, field + ".file", "required for family 'explicit'");
    std::string path = scalar<std::string>(n["file"], field + ".file");
    if (!path.empty() && path[0] != '/' && !base_dir.empty()) path = base_dir + "/" + path;
    if (file_out) *file_out = path;
    k = CorrelationKernel::explicit_matrix(read_matrix_csv(path));
  } else {
    fail(n["family"], field + ".family",
         "unknown family '" + fam + "' (identity, exponential, nearest_neighbor, power_law, explicit)");
  }
  try {
    k.validate();
  } catch (const std::exception& e) {
    fail(n, field, e.what());
  }
  return k;
}

}  // namespace detail

// Procedure: parse_config
inline RunConfig parse_config(const YAML::Node& root, const std::string& base_dir = "") {
  using namespace detail;
  if (!root || root.IsNull()) throw ConfigError("config is empty");
  check_keys(root, "",
             {"name", "covariance", "N", "kernel", "noise_kernel", "T", "q", "lambda", "sigma_eps", "tau", "seeds",
              "seed", "ensemble", "test_reps", "random_teacher", "theory_s", "estimator_s", "estimators", "workers",
              "estimate", "validate"});
  RunConfig rc;
  ExperimentConfig& c = rc.experiment;
  if (root["name"]) rc.name = scalar<std::string>(root["name"], "name");
  if (const YAML::Node cv = root["covariance"]) {
    if (cv.IsScalar()) {
      const std::string t = cv.Scalar();
      if (t != "identity") fail(cv, "covariance", "expected 'identity' or a mapping with type");
    } else {
      check_keys(cv, "covariance", {"type", "alpha", "r"});
      const std::string t = cv["type"] ? scalar<std::string>(cv["type"], "covariance.type") : "identity";
      if (t == "identity") {
        c.covariance.type = CovarianceSpec::Type::identity;
      } else if (t == "power_law") {
        c.covariance.type = CovarianceSpec::Type::power_law;
        if (!cv["alpha"]) fail(cv, "covariance.alpha", "required for power_law");
        if (!cv["r"]) fail(cv, "covariance.r", "required for power_law");
        c.covariance.alpha = scalar<double>(cv["alpha"], "covariance.alpha");
        c.covariance.r = scalar<double>(cv["r"], "covariance.r");
        if (!(c.covariance.alpha > 0.0)) fail(cv["alpha"], "covariance.alpha", "must be > 0");
        if (!(c.covariance.r > 0.0)) fail(cv["r"], "covariance.r", "must be > 0");
      } else {
        fail(cv["type"], "covariance.type", "unknown type '" + t + "' (identity, power_law)");
      }
    }
  }
  if (root["N"]) {
    c.N = scalar<Index>(root["N"], "N");
    if (c.N < 1) fail(root["N"], "N", "must be >= 1");
  }
  c.kernel = root["kernel"] ? parse_kernel(root["kernel"], "kernel", base_dir, &rc.kernel_file)
                            : CorrelationKernel::identity(1);
  if (root["noise_kernel"]) c.noise_kernel = parse_kernel(root["noise_kernel"], "noise_kernel", base_dir, nullptr);
  if (root["T"]) {
    c.T_grid = int_grid(root["T"], "T");
    for (Index t : c.T_grid)
      if (t < 2) fail(root["T"], "T", "entries must be >= 2");
  }
  if (root["q"]) {
    c.q_grid = real_grid(root["q"], "q");
    for (double q : c.q_grid)
      if (!(q > 0.0)) fail(root["q"], "q", "entries must be > 0");
  }
  if (c.T_grid.empty() && c.q_grid.empty()) {
    if (c.kernel.family == KernelFamily::explicit_matrix) c.T_grid = {c.kernel.T};
    else throw ConfigError("field 'T': missing (give T or q)");
  }
  if (!c.T_grid.empty() && !c.q_grid.empty()) fail(root["q"], "q", "give either T or q, not both");
  if (c.kernel.family == KernelFamily::explicit_matrix)
    for (Index t : c.resolved_T())
      if (t != c.kernel.T) fail(root["kernel"], "kernel.file", "explicit kernel order differs from the T grid");
  if (root["lambda"]) {
    c.lambda_grid = real_grid(root["lambda"], "lambda");
    for (double l : c.lambda_grid)
      if (!(l > 0.0)) fail(root["lambda"], "lambda", "entries must be > 0");
  } else {
    throw ConfigError("field 'lambda': missing");
  }
  if (root["sigma_eps"]) {
    c.sigma_eps = scalar<double>(root["sigma_eps"], "sigma_eps");
    if (!(c.sigma_eps >= 0.0)) fail(root["sigma_eps"], "sigma_eps", "must be >= 0");
  }
  if (root["tau"]) {
    c.tau_grid = int_grid(root["tau"], "tau");
    for (Index t : c.tau_grid)
      if (t < 1) fail(root["tau"], "tau", "entries must be >= 1");
    if (!c.kernel.stationary()) fail(root["tau"], "tau", "requires a stationary kernel");
  }
  if (root["seeds"]) {
    c.seeds = scalar<int>(root["seeds"], "seeds");
    if (c.seeds < 1) fail(root["seeds"], "seeds", "must be >= 1");
  }
  if (root["seed"]) c.seed = scalar<std::uint64_t>(root["seed"], "seed");
  if (root["ensemble"]) {
    c.ensemble = scalar<int>(root["ensemble"], "ensemble");
    if (c.ensemble < 0 || c.ensemble == 1) fail(root["ensemble"], "ensemble", "must be 0 (off) or >= 2");
  }
  if (root["test_reps"]) {
    c.test_reps = scalar<int>(root["test_reps"], "test_reps");
    if (c.test_reps < 1) fail(root["test_reps"], "test_reps", "must be >= 1");
  }
  if (root["random_teacher"]) c.random_teacher = scalar<bool>(root["random_teacher"], "random_teacher");
  if (root["theory_s"]) {
    const std::string s = scalar<std::string>(root["theory_s"], "theory_s");
    if (s == "analytic") c.theory_s = SSource::analytic;
    else if (s == "spectrum") c.theory_s = SSource::spectrum;
    else fail(root["theory_s"], "theory_s", "expected analytic or spectrum");
  }
  if (root["estimator_s"]) {
    const std::string s = scalar<std::string>(root["estimator_s"], "estimator_s");
    if (s == "analytic") c.estimator_s = EstimatorS::analytic;
    else if (s == "spectrum") c.estimator_s = EstimatorS::spectrum;
    else if (s == "gram") c.estimator_s = EstimatorS::gram;
    else fail(root["estimator_s"], "estimator_s", "expected analytic, spectrum or gram");
  }
  if (const YAML::Node e = root["estimators"]) {
    if (!e.IsSequence()) fail(e, "estimators", "expected a list");
    c.estimators.clear();
    for (std::size_t i = 0; i < e.size(); ++i) {
      const std::string f = "estimators[" + std::to_string(i) + "]";
      const std::string nm = scalar<std::string>(e[i], f);
      if (nm != "corrgcv" && nm != "gcv1" && nm != "gcv2" && nm != "carmack")
        fail(e[i], f, "unknown estimator '" + nm + "' (corrgcv, gcv1, gcv2, carmack)");
      c.estimators.push_back(nm);
    }
  }
  if (root["workers"]) {
    c.workers = scalar<int>(root["workers"], "workers");
    if (c.workers < 1) fail(root["workers"], "workers", "must be >= 1");
  } else {
    c.workers = default_workers();
  }
  if (const YAML::Node e = root["estimate"]) {
    check_keys(e, "estimate", {"T", "lambda", "stream", "data"});
    if (e["T"]) rc.estimate.T = scalar<Index>(e["T"], "estimate.T");
    if (e["lambda"]) {
      rc.estimate.lambda = scalar<double>(e["lambda"], "estimate.lambda");
      if (!(rc.estimate.lambda > 0.0)) fail(e["lambda"], "estimate.lambda", "must be > 0");
    }
    if (e["stream"]) rc.estimate.stream = scalar<std::uint64_t>(e["stream"], "estimate.stream");
    if (e["data"]) {
      std::string p = scalar<std::string>(e["data"], "estimate.data");
      if (!p.empty() && p[0] != '/' && !base_dir.empty()) p = base_dir + "/" + p;
      rc.estimate.data_path = p;
    }
  }
  if (const YAML::Node v = root["validate"]) {
    check_keys(v, "validate", {"level"});
    if (v["level"]) {
      rc.validate.level = scalar<std::string>(v["level"], "validate.level");
      if (rc.validate.level != "fast" && rc.validate.level != "full")
        fail(v["level"], "validate.level", "expected fast or full");
    }
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return rc;
}

// Procedure: load_config
inline RunConfig load_config(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot open config '" + path + "'");
  } catch (const YAML::ParserException& e) {
    throw ConfigError(path + ": line " + std::to_string(e.mark.line + 1) + ", column " +
                      std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
  const auto slash = path.find_last_of('/');
  return parse_config(root, slash == std::string::npos ? std::string() : path.substr(0, slash));
}

inline const char* covariance_name(const CovarianceSpec& c) {
  return c.type == CovarianceSpec::Type::power_law ? "power_law" : "identity";
}

inline YAML::Node kernel_yaml(const CorrelationKernel& k, const std::string& file) {
  YAML::Node n;
  switch (k.family) {
    case KernelFamily::identity: n["family"] = "identity"; break;
    case KernelFamily::exponential: n["family"] = "exponential"; n["xi"] = k.param; break;
    case KernelFamily::nearest_neighbor: n["family"] = "nearest_neighbor"; n["b"] = k.param; break;
    case KernelFamily::power_law: n["family"] = "power_law"; n["chi"] = k.param; break;
    case KernelFamily::explicit_matrix: n["family"] = "explicit"; n["file"] = file; break;
  }
  return n;
}

// Procedure: resolved_yaml
// Canonical dump of every resolved setting (grids expanded), used for manifests and hashing.
// The worker count is left out: outputs do not depend on it.
inline std::string resolved_yaml(const RunConfig& rc) {
  const ExperimentConfig& c = rc.experiment;
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  YAML::Node n;
  n["name"] = rc.name;
  n["covariance"]["type"] = covariance_name(c.covariance);
  if (c.covariance.type == CovarianceSpec::Type::power_law) {
    n["covariance"]["alpha"] = c.covariance.alpha;
    n["covariance"]["r"] = c.covariance.r;
  }
  n["N"] = static_cast<long long>(c.N);
  n["kernel"] = kernel_yaml(c.kernel, rc.kernel_file);
  if (c.noise_kernel) n["noise_kernel"] = kernel_yaml(*c.noise_kernel, "");
  for (Index t : c.T_grid) n["T"].push_back(static_cast<long long>(t));
  for (double q : c.q_grid) n["q"].push_back(q);
  for (double l : c.lambda_grid) n["lambda"].push_back(l);
  n["sigma_eps"] = c.sigma_eps;
  for (Index t : c.tau_grid) n["tau"].push_back(static_cast<long long>(t));
  n["seeds"] = c.seeds;
  n["seed"] = static_cast<unsigned long long>(c.seed);
  n["ensemble"] = c.ensemble;
  n["test_reps"] = c.test_reps;
  n["random_teacher"] = c.random_teacher;
  n["theory_s"] = c.theory_s == SSource::analytic ? "analytic" : "spectrum";
  n["estimator_s"] = c.estimator_s == EstimatorS::analytic ? "analytic"
                     : c.estimator_s == EstimatorS::gram   ? "gram"
                                                           : "spectrum";
  for (const auto& e : c.estimators) n["estimators"].push_back(e);
  n["estimate"]["T"] = static_cast<long long>(rc.estimate.T);
  if (std::isfinite(rc.estimate.lambda)) n["estimate"]["lambda"] = rc.estimate.lambda;
  n["estimate"]["stream"] = static_cast<unsigned long long>(rc.estimate.stream);
  if (!rc.estimate.data_path.empty()) n["estimate"]["data"] = rc.estimate.data_path;
  n["validate"]["level"] = rc.validate.level;
  out << n;
  return out.c_str();
}

}  // end of namespace corrgcv ------------------------------------------------

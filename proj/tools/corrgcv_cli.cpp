#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>
#include <openssl/evp.h>
#include <openssl/opensslv.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "corrgcv/config.hpp"
#include "corrgcv/estimators.hpp"
#include "corrgcv/experiments.hpp"
#include "corrgcv/io.hpp"
#include "corrgcv/validation.hpp"
#include "corrgcv/version.hpp"

namespace fs = std::filesystem;
using namespace corrgcv;

namespace {

enum Exit { exit_ok = 0, exit_invalid = 1, exit_partial = 2 };

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  std::string level;
  std::string data;
};

// Procedure: sha256_hex
std::string sha256_hex(const std::string& s) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(s.data(), s.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

Json versions() {
  std::ostringstream eigen, boost;
  eigen << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION;
  boost << BOOST_VERSION / 100000 << "." << BOOST_VERSION / 100 % 1000 << "." << BOOST_VERSION % 100;
  return Json{{"corrgcv", version},
              {"eigen", eigen.str()},
              {"boost", boost.str()},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"spdlog", std::to_string(SPDLOG_VER_MAJOR) + "." + std::to_string(SPDLOG_VER_MINOR) + "." +
                             std::to_string(SPDLOG_VER_PATCH)},
              {"openssl", OPENSSL_VERSION_TEXT},
              {"compiler", __VERSION__}};
}

// Worker count: flag > CORRGCV_WORKERS > config > default.
int resolve_workers(const Options& o, std::optional<int> from_config) {
  if (o.workers) {
    if (*o.workers < 1) throw ConfigError("--workers must be >= 1");
    return *o.workers;
  }
  if (const char* env = std::getenv("CORRGCV_WORKERS")) {
    try {
      std::size_t pos = 0;
      const int w = std::stoi(env, &pos);
      if (pos != std::string(env).size() || w < 1) throw std::invalid_argument("range");
      return w;
    } catch (const std::exception&) {
      throw ConfigError(std::string("CORRGCV_WORKERS: expected a positive integer, got '") + env + "'");
    }
  }
  return from_config ? *from_config : default_workers();
}

// Loads the config and applies --seed and the worker precedence.
RunConfig load_run_config(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  RunConfig rc = load_config(o.config);
  std::optional<int> cfg_workers;
  {
    const YAML::Node root = YAML::LoadFile(o.config);
    if (root["workers"]) cfg_workers = rc.experiment.workers;
  }
  rc.experiment.workers = resolve_workers(o, cfg_workers);
  if (o.seed) rc.experiment.seed = *o.seed;
  return rc;
}

fs::path prepare_out(const Options& o) {
  const fs::path dir(o.out);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& p, const Json& j) {
  std::ofstream out(p, std::ios::out | std::ios::trunc);
  if (!out) throw Error("cannot open '" + p.string() + "' for writing");
  out << j.dump(2) << '\n';
}

// Procedure: write_manifest
void write_manifest(const fs::path& path, const std::string& sub, const Options& o, const RunConfig* rc,
                    const std::vector<fs::path>& outputs, double seconds, const std::string& started, Json seeds,
                    int exit_code) {
  Json m;
  m["subcommand"] = sub;
  m["config_path"] = o.config.empty() ? Json(nullptr) : Json(fs::absolute(o.config).string());
  const std::string resolved = rc ? resolved_yaml(*rc) : std::string("validate:\n  level: ") + o.level + "\n";
  m["config_sha256"] = sha256_hex(resolved);
  Json outs = Json::array();
  for (const auto& p : outputs) outs.push_back(fs::absolute(p).string());
  m["outputs"] = outs;
  m["started_utc"] = started;
  m["wall_clock_seconds"] = seconds;
  m["workers"] = rc ? rc->experiment.workers : resolve_workers(o, std::nullopt);
  m["seeds"] = std::move(seeds);
  m["exit_code"] = exit_code;
  m["versions"] = versions();
  m["resolved_config"] = resolved;
  write_json(path, m);
}

Json sweep_seeds(const ExperimentConfig& c) {
  return Json{{"seed", c.seed}, {"count", c.seeds}, {"streams", "0.." + std::to_string(c.seeds - 1)},
              {"ensemble", c.ensemble}};
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Procedure: cmd_theory
int cmd_theory(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  const RunConfig rc = load_run_config(o);
  const fs::path dir = prepare_out(o);
  const fs::path csv = dir / (rc.name + "_theory.csv");
  spdlog::info("theory: {} -> {}", o.config, csv.string());
  CsvWriter w(csv.string());
  const SweepResult r = run_theory(rc.experiment, [&](const SweepRow& row) { w.write(row); });
  const int code = r.failures > 0 ? exit_partial : exit_ok;
  if (r.failures > 0) spdlog::warn("theory: {} grid points failed", r.failures);
  write_manifest(dir / (rc.name + "_theory.manifest.json"), "theory", o, &rc, {csv}, elapsed(t0), started,
                 Json{{"seed", nullptr}}, code);
  spdlog::info("theory: {} rows in {:.2f} s", r.rows.size(), elapsed(t0));
  return code;
}

// Procedure: cmd_simulate
int cmd_simulate(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  const RunConfig rc = load_run_config(o);
  const fs::path dir = prepare_out(o);
  const fs::path csv = dir / (rc.name + "_simulate.csv");
  spdlog::info("simulate: {} -> {} ({} workers)", o.config, csv.string(), rc.experiment.workers);
  CsvWriter w(csv.string());
  const SweepResult r = run_sweep(rc.experiment, [&](const SweepRow& row) { w.write(row); });
  const int code = r.failures > 0 ? exit_partial : exit_ok;
  if (r.failures > 0) spdlog::warn("simulate: {} grid points or estimators failed", r.failures);
  write_manifest(dir / (rc.name + "_simulate.manifest.json"), "simulate", o, &rc, {csv}, elapsed(t0), started,
                 sweep_seeds(rc.experiment), code);
  spdlog::info("simulate: {} rows in {:.2f} s", r.rows.size(), elapsed(t0));
  return code;
}

// Procedure: cmd_estimate
int cmd_estimate(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  RunConfig rc = load_run_config(o);
  if (!o.data.empty()) rc.estimate.data_path = o.data;
  const ExperimentConfig& cfg = rc.experiment;
  const double lambda = std::isfinite(rc.estimate.lambda) ? rc.estimate.lambda : cfg.lambda_grid.front();
  const double sigma2 = cfg.sigma_eps * cfg.sigma_eps;

  Json j;
  Mat X;
  Vec y;
  std::optional<Dataset> generated;
  std::optional<SpectralCovariance> cov;
  Index T = 0;
  if (!rc.estimate.data_path.empty()) {
    const Mat m = detail::read_matrix_csv(rc.estimate.data_path);
    if (m.rows() < 2) throw ConfigError(rc.estimate.data_path + ": need at least 2 samples (rows), got " +
                                        std::to_string(m.rows()));
    if (m.cols() < 2) throw ConfigError(rc.estimate.data_path + ": need feature columns and a final y column");
    X = m.leftCols(m.cols() - 1);
    y = m.col(m.cols() - 1);
    T = X.rows();
    j["data"] = Json{{"source", "file"}, {"path", rc.estimate.data_path}};
  } else {
    T = rc.estimate.T > 0 ? rc.estimate.T : cfg.resolved_T().front();
    if (T < 2) throw ConfigError("field 'estimate.T': must be >= 2");
  }
  const PointContext ctx = make_point_context(cfg, T);
  if (rc.estimate.data_path.empty()) {
    cov = build_covariance(cfg.covariance, cfg.N);
    const DataModel model = make_data_model(*cov, ctx.k, ctx.kp, cfg.sigma_eps, cfg.random_teacher, ctx.K, ctx.Kp);
    generated = generate_dataset(model, cfg.seed, rc.estimate.stream);
    X = generated->X;
    y = generated->y;
    j["data"] = Json{{"source", "generated"}, {"seed", cfg.seed}, {"stream", rc.estimate.stream}};
  }
  const Index N = X.cols();
  j["N"] = N;
  j["T"] = T;
  j["q"] = static_cast<double>(N) / static_cast<double>(T);
  j["lambda"] = lambda;
  j["kernel"] = std::string(family_name(ctx.k.family)) + " " + ctx.k.params_string();

  const RidgeFit fit = fit_ridge(X, y, lambda);
  j["R_in"] = num(fit.R_in);
  EstimatorInputs in = make_estimator_inputs(X, fit.R_in, lambda, STransform{});
  std::string s_error;
  try {
    switch (cfg.estimator_s) {
      case EstimatorS::analytic: in.sk = s_for_kernel(ctx.k, SSource::analytic); break;
      case EstimatorS::spectrum: in.sk = s_for_kernel(ctx.k, SSource::spectrum); break;
      case EstimatorS::gram: in.sk = gram_s_transform(in); break;
    }
    j["s_transform"] = in.sk.description;
  } catch (const std::exception& e) {
    s_error = e.what();
    j["s_transform"] = Json{{"error", s_error}};
  }

  int failed = 0;
  Json est;
  for (const auto& name : cfg.estimators) {
    try {
      if (name == "gcv1") {
        est[name] = Json{{"estimate", num(estimate_gcv1(in))}, {"df1_gram", num(in.df1_gram(lambda))}};
      } else if (name == "carmack") {
        est[name] = to_json(estimate_carmack(X, fit.R_in, lambda, ctx.K));
      } else if (!s_error.empty()) {
        throw EstimatorDomain("S_K unavailable: " + s_error);
      } else if (name == "corrgcv") {
        est[name] = to_json(estimate_corrgcv(in));
      } else {
        est[name] = Json{{"estimate", num(estimate_gcv2_altman(in))}};
      }
    } catch (const std::exception& e) {
      ++failed;
      est[name] = Json{{"error", e.what()}};
      spdlog::warn("estimate: {}: {}", name, e.what());
    }
  }
  j["estimators"] = est;

  if (generated) {
    const RiskReport emp = empirical_risks(*generated, fit.w, *cov, sigma2);
    j["empirical"] = Json{{"R_g", num(emp.R_g)}, {"R_out", num(emp.R_out)}, {"R_in", num(emp.R_in)}};
    try {
      const Solution s = solve(*cov, ctx.sk_theory, static_cast<double>(N) / static_cast<double>(T), lambda);
      Json th = to_json(s);
      if (ctx.matched) th["risk"] = to_json(risk_matched(s, *cov, sigma2));
      j["theory"] = th;
    } catch (const std::exception& e) {
      j["theory"] = Json{{"error", e.what()}};
    }
  }

  const fs::path dir = prepare_out(o);
  const fs::path out = dir / (rc.name + "_estimate.json");
  write_json(out, j);
  const int code = failed > 0 ? exit_partial : exit_ok;
  write_manifest(dir / (rc.name + "_estimate.manifest.json"), "estimate", o, &rc, {out}, elapsed(t0), started,
                 Json{{"seed", cfg.seed}, {"stream", rc.estimate.stream}}, code);
  spdlog::info("estimate: wrote {} in {:.2f} s", out.string(), elapsed(t0));
  return code;
}

// Procedure: cmd_validate
int cmd_validate(Options o) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  std::optional<RunConfig> rc;
  std::uint64_t seed = 1;
  int workers = resolve_workers(o, std::nullopt);
  if (!o.config.empty()) {
    rc = load_run_config(o);
    if (o.level.empty()) o.level = rc->validate.level;
    seed = rc->experiment.seed;
    workers = rc->experiment.workers;
  } else if (o.seed) {
    seed = *o.seed;
  }
  if (o.level.empty()) o.level = "fast";
  if (o.level != "fast" && o.level != "full") throw ConfigError("--level must be fast or full");
  spdlog::info("validate: level {}", o.level);
  const ValidationReport r = run_validation(o.level, seed, workers);
  for (const auto& c : r.checks) {
    if (c.pass) spdlog::info("  PASS {} residual={:.3e} tol={:.1e}", c.name, c.residual, c.tolerance);
    else spdlog::error("  FAIL {} residual={:.3e} tol={:.1e} {}", c.name, c.residual, c.tolerance, c.detail);
  }
  const fs::path dir = prepare_out(o);
  const fs::path out = dir / ("validate_" + o.level + ".json");
  Json j = to_json(r);
  j["seed"] = seed;
  write_json(out, j);
  const int code = r.pass() ? exit_ok : exit_invalid;
  write_manifest(dir / ("validate_" + o.level + ".manifest.json"), "validate", o, rc ? &*rc : nullptr, {out},
                 elapsed(t0), started, Json{{"seed", seed}}, code);
  spdlog::info("validate: {} in {:.1f} s", r.pass() ? "all checks passed" : "FAILED", r.seconds);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("corrgcv"));
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");

  CLI::App app{"Ridge regression under correlated samples: theory, simulation, estimators, validation"};
  app.set_version_flag("--version", version);
  app.require_subcommand(1);
  Options o;
  std::int64_t workers = 0;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* s, bool config_required) {
    auto* c = s->add_option("--config", o.config, "YAML run configuration");
    if (config_required) c->required()->check(CLI::ExistingFile);
    else c->check(CLI::ExistingFile);
    s->add_option("--out", o.out, "output directory")->capture_default_str();
    s->add_option("--workers", workers, "worker threads (overrides CORRGCV_WORKERS and the config)")
        ->check(CLI::PositiveNumber);
    s->add_option("--seed", seed, "base random seed (overrides the config)");
  };
  CLI::App* theory = app.add_subcommand("theory", "omniscient risk curves over the config grids");
  common(theory, true);
  CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo sweep with theory and estimator rows");
  common(simulate, true);
  CLI::App* estimate = app.add_subcommand("estimate", "all estimators on one generated or loaded dataset");
  common(estimate, true);
  estimate->add_option("--data", o.data, "CSV with feature columns followed by y")->check(CLI::ExistingFile);
  CLI::App* validate = app.add_subcommand("validate", "invariant suite with pass/fail per check");
  common(validate, false);
  validate->add_option("--level", o.level, "fast or full")->check(CLI::IsMember({"fast", "full"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? exit_ok : exit_invalid;
  }
  for (CLI::App* s : {theory, simulate, estimate, validate}) {
    if (!s->parsed()) continue;
    if (s->count("--workers")) o.workers = static_cast<int>(workers);
    if (s->count("--seed")) o.seed = seed;
  }

  try {
    if (theory->parsed()) return cmd_theory(o);
    if (simulate->parsed()) return cmd_simulate(o);
    if (estimate->parsed()) return cmd_estimate(o);
    return cmd_validate(o);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return exit_invalid;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return exit_invalid;
  }
}

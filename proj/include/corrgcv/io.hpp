#pragma once

#include <cmath>
#include <fstream>
#include <mutex>
#include <string>

#include "json.hpp"

#include "estimators.hpp"
#include "experiments.hpp"
#include "risk_theory.hpp"
#include "selfconsistent.hpp"
#include "validation.hpp"

namespace corrgcv {

using Json = nlohmann::ordered_json;

// Non-finite doubles become strings so the output stays valid JSON.
inline Json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline Json to_json(const Solution& s) {
  return Json{{"lambda", num(s.lambda)}, {"q", num(s.q)},         {"kappa", num(s.kappa)},
              {"kappa_t", num(s.kappa_t)}, {"S", num(s.S)},       {"S_t", num(s.S_t)},
              {"df1", num(s.df1)},         {"df2", num(s.df2)},   {"dft1", num(s.dft1)},
              {"dft2", num(s.dft2)},       {"gamma", num(s.gamma)}, {"dkappa", num(s.dkappa)},
              {"dkappa_t", num(s.dkappa_t)}, {"converged", s.converged}, {"ridgeless", s.ridgeless},
              {"iterations", s.iterations}, {"method", s.method}};
}

inline Json to_json(const RiskReport& r) {
  return Json{{"bias_sq", num(r.bias_sq)}, {"var_X", num(r.var_X)}, {"var_Xeps", num(r.var_Xeps)},
              {"R_g", num(r.R_g)},         {"R_out", num(r.R_out)}, {"R_in", num(r.R_in)},
              {"sigma_eps_sq", num(r.sigma_eps_sq)}, {"divergent", r.divergent}};
}

inline Json to_json(const CorrGCVResult& r) {
  return Json{{"estimate", num(r.estimate)}, {"factor", num(r.factor)},   {"df1", num(r.df1)},
              {"df2", num(r.df2)},           {"dft1", num(r.dft1)},       {"dft2", num(r.dft2)},
              {"kappa", num(r.kappa)},       {"kappa_t", num(r.kappa_t)}, {"S", num(r.S)},
              {"dlogkappa_dlambda", num(r.dlogkappa)}, {"dlogkappa_t_dlambda", num(r.dlogkappa_t)}};
}

inline Json to_json(const CarmackResult& r) {
  return Json{{"estimate", num(r.estimate)}, {"G", num(r.G)}, {"tr_HK", num(r.tr_HK)}, {"tr_HKH", num(r.tr_HKH)}};
}

inline Json to_json(const IdentityReport& r) {
  return Json{{"fixed_point", num(r.fixed_point)}, {"duality", num(r.duality)}, {"duality2", num(r.duality2)},
              {"delta_df", num(r.delta_df)},       {"dft1_equiv", num(r.dft1_equiv)}};
}

inline Json to_json(const TraceTestReport& r) {
  return Json{{"lhs1", num(r.lhs1)}, {"rhs1", num(r.rhs1)}, {"resid1", num(r.resid1)}, {"se1", num(r.se1)},
              {"lhs2", num(r.lhs2)}, {"rhs2", num(r.rhs2)}, {"resid2", num(r.resid2)}, {"se2", num(r.se2)},
              {"seeds", r.seeds}};
}

inline Json to_json(const Check& c) {
  return Json{{"name", c.name}, {"residual", num(c.residual)}, {"tolerance", num(c.tolerance)},
              {"pass", c.pass}, {"detail", c.detail}};
}

inline Json to_json(const ValidationReport& r) {
  Json checks = Json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  return Json{{"level", r.level}, {"pass", r.pass()}, {"seconds", num(r.seconds)}, {"checks", checks}};
}

// Row-atomic CSV sink: each row is written whole and flushed.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::out | std::ios::trunc) {
    if (!out_) throw Error("cannot open '" + path + "' for writing");
    out_ << csv_header() << '\n';
    out_.flush();
  }

  void write(const SweepRow& r) {
    const std::string line = csv_line(r) + '\n';
    std::lock_guard<std::mutex> lk(m_);
    out_ << line;
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::mutex m_;
};

}  // end of namespace corrgcv ------------------------------------------------

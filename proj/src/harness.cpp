#include "avgsim/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "avgsim/errors.hpp"
#include "avgsim/kernels.hpp"
#include "avgsim/parallel.hpp"

namespace avgsim {
namespace {

using Clock = std::chrono::steady_clock;
using ojson = nlohmann::ordered_json;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct PathOutcome {
  double value = 0.0;
  bool failed = false;
};

// mean and stderr of the surviving paths
EpsRow summarize(double eps, const std::vector<PathOutcome>& outcomes) {
  EpsRow row;
  row.eps = eps;
  double sum = 0.0;
  for (const auto& o : outcomes) {
    if (o.failed) {
      ++row.failed_paths;
    } else {
      sum += o.value;
      ++row.used_paths;
    }
  }
  if (row.used_paths > 0) {
    row.strong_error = sum / static_cast<double>(row.used_paths);
    double ss = 0.0;
    for (const auto& o : outcomes) {
      if (!o.failed) ss += (o.value - row.strong_error) * (o.value - row.strong_error);
    }
    if (row.used_paths > 1) {
      row.stderr_ = std::sqrt(ss / static_cast<double>(row.used_paths - 1) / static_cast<double>(row.used_paths));
    }
  }
  row.conditional = row.failed_paths > 0;
  row.valid = row.used_paths > 0 &&
              static_cast<double>(row.failed_paths) <= 0.05 * static_cast<double>(outcomes.size());
  return row;
}

template <class Fn>
std::vector<PathOutcome> run_paths(std::size_t n, Fn&& fn) {
  std::vector<PathOutcome> out(n);
  parallel_for(n, [&](std::size_t i) {
    try {
      out[i].value = fn(i);
    } catch (const StepFailure&) {
      out[i].failed = true;
    } catch (const DivergenceDetected&) {
      out[i].failed = true;
    }
  });
  return out;
}

void finish_convergence(ConvergenceReport& rep) {
  std::vector<double> eps, err;
  bool all_valid = true;
  for (const auto& r : rep.rows) {
    eps.push_back(r.eps);
    err.push_back(r.strong_error);
    if (!r.valid) {
      all_valid = false;
      rep.flags.push_back("eps " + format_double(r.eps) + ": " + std::to_string(r.failed_paths) +
                          " failed paths exceed 5%");
    } else if (r.conditional) {
      rep.flags.push_back("eps " + format_double(r.eps) + ": estimate conditional on " +
                          std::to_string(r.used_paths) + " surviving paths");
    }
  }
  rep.rate_fit = fit_rate(eps, err);
  if (rep.rate_fit.low_r2) rep.flags.push_back("rate fit r2 below 0.8");
  rep.bound_check = rep.rate_fit.slope >= 1.0 / 6.0 - rep.rate_fit.slope_stderr;
  bool mono = rep.rows.size() >= 2;
  for (std::size_t i = 0; i + 1 < rep.rows.size(); ++i) {
    const auto& a = rep.rows[i];
    const auto& b = rep.rows[i + 1];
    if (!(a.strong_error - b.strong_error > 2.0 * std::hypot(a.stderr_, b.stderr_))) mono = false;
  }
  rep.monotone_decreasing = mono;
  if (!mono) rep.flags.push_back("errors not significantly decreasing along the eps ladder");
  rep.inconclusive = !(mono && all_valid);
}

ojson plan_json(const ExperimentPlan& plan) {
  ojson j;
  j["system"] = to_string(plan.system.name);
  j["slow_dim"] = plan.spaces.slow_dim;
  j["fast_dim"] = plan.spaces.fast_dim;
  j["eps_list"] = plan.eps_list;
  j["mc_paths"] = plan.mc_paths;
  j["horizon"] = plan.horizon;
  j["moment_p"] = plan.moment_p;
  j["scheme"] = to_string(plan.integrator.scheme);
  j["step"] = plan.integrator.step;
  j["provider"] = to_string(plan.provider.mode);
  j["seed_base"] = plan.seed_base;
  return j;
}

ojson row_json(const EpsRow& r) {
  ojson j;
  j["eps"] = r.eps;
  j["strong_error"] = r.strong_error;
  j["stderr"] = r.stderr_;
  j["failed_paths"] = r.failed_paths;
  j["used_paths"] = r.used_paths;
  j["valid"] = r.valid;
  j["conditional"] = r.conditional;
  return j;
}

ojson fit_json(const RateFit& f) {
  ojson j;
  j["slope"] = f.slope;
  j["intercept"] = f.intercept;
  j["r2"] = f.r2;
  j["slope_stderr"] = f.slope_stderr;
  j["low_r2"] = f.low_r2;
  return j;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

GalerkinSpace SpacesConfig::slow() const { return make_space(slow_dim, slow_kind, slow_v_exponent, mass_shift); }
GalerkinSpace SpacesConfig::fast() const { return make_space(fast_dim, fast_kind, fast_v_exponent, mass_shift); }

void ExperimentPlan::validate() const {
  if (eps_list.empty()) throw InvalidArgument("plan: eps_list must be non-empty");
  for (double e : eps_list) {
    if (!(e > 0.0 && e <= 1.0)) throw InvalidArgument("plan: every eps must lie in (0, 1], got " + format_double(e));
  }
  for (std::size_t i = 0; i + 1 < eps_list.size(); ++i) {
    if (!(eps_list[i + 1] < eps_list[i])) throw InvalidArgument("plan: eps_list must be strictly decreasing");
  }
  if (mc_paths < 2) throw InvalidArgument("plan: mc_paths must be >= 2");
  if (!(horizon > 0.0)) throw InvalidArgument("plan: horizon must be > 0");
  if (!(moment_p >= 1.0)) throw InvalidArgument("plan: moment_p must be >= 1");
  if (spaces.slow_dim == 0 || spaces.fast_dim == 0) throw InvalidArgument("plan: dims must be >= 1");
  if (!(bohr_T > 0.0) || !(bohr_quad_step > 0.0) || bohr_anchors.empty()) {
    throw InvalidArgument("plan: Bohr window, step and anchors must be positive and non-empty");
  }
  for (double d : delta_list) {
    if (!(d > 0.0)) throw InvalidArgument("plan: delta values must be > 0");
  }
  if (!(khasminskii_eps > 0.0 && khasminskii_eps <= 1.0)) {
    throw InvalidArgument("plan: khasminskii_eps must lie in (0, 1]");
  }
  integrator.validate();
  TimeGrid(0.0, horizon, integrator.step);
}

State ExperimentPlan::x0() const {
  State s(spaces.slow_dim);
  for (std::size_t k = 0; k < s.dim(); ++k) s[k] = initial.x_amplitude / static_cast<double>(k + 1);
  return s;
}

State ExperimentPlan::y0() const {
  State s(spaces.fast_dim);
  for (std::size_t k = 0; k < s.dim(); ++k) s[k] = initial.y_amplitude / static_cast<double>(k + 1);
  return s;
}

RateFit fit_rate(const std::vector<double>& eps, const std::vector<double>& error) {
  if (eps.size() != error.size()) throw InvalidArgument("fit_rate: size mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (eps[i] > 0.0 && error[i] > 0.0) {
      lx.push_back(std::log(eps[i]));
      ly.push_back(std::log(error[i]));
    }
  }
  RateFit f;
  const auto n = lx.size();
  if (n < 2) {
    f.low_r2 = true;
    return f;
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw InvalidArgument("fit_rate: abscissae must not all coincide");
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - f.intercept - f.slope * lx[i];
    sse += r * r;
  }
  f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  f.slope_stderr = n > 2 ? std::sqrt(sse / static_cast<double>(n - 2) / sxx) : 0.0;
  f.low_r2 = f.r2 < 0.8;
  return f;
}

double strong_error(const PathSample& a, const PathSample& b, double p) {
  if (!a.has_slow() || !b.has_slow()) throw InvalidArgument("strong_error: both paths need a slow component");
  if (!(a.grid == b.grid) || a.slow.size() != b.slow.size()) throw InvalidArgument("strong_error: grids differ");
  if (!(p >= 1.0)) throw InvalidArgument("strong_error: p must be >= 1");
  double sup = 0.0;
  for (std::size_t i = 0; i < a.slow.size(); ++i) {
    if (a.slow[i].dim() != b.slow[i].dim()) throw InvalidArgument("strong_error: dims differ");
    sup = std::max(sup, kernels::squared_distance(a.slow[i].span(), b.slow[i].span()));
  }
  return std::pow(sup, p);
}

CoefficientBundle build_plan_system(const ExperimentPlan& plan) {
  return build_system(plan.system, plan.spaces.slow(), plan.spaces.fast());
}

ConvergenceReport run_convergence_T1(const ExperimentPlan& plan, const SlowDrift& avg_drift) {
  plan.validate();
  const auto start = Clock::now();
  const CoefficientBundle bundle = build_plan_system(plan);
  const TimeGrid grid(0.0, plan.horizon, plan.integrator.step);
  const State x0 = plan.x0(), y0 = plan.y0();
  ConvergenceReport rep;
  rep.theorem = "T1";
  for (double eps : plan.eps_list) {
    const auto t0 = Clock::now();
    auto outcomes = run_paths(plan.mc_paths, [&](std::size_t i) {
      const SeedRecord seeds{plan.seed_base + i};
      const PathSample xe = simulate_coupled(bundle, eps, x0, y0, grid, seeds, plan.integrator);
      const PathSample xb = simulate_averaged_eps(bundle, eps, x0, grid, avg_drift, seeds, plan.integrator);
      return strong_error(xe, xb, plan.moment_p);
    });
    rep.rows.push_back(summarize(eps, outcomes));
    rep.rows.back().wall_time = seconds_since(t0);
  }
  finish_convergence(rep);
  rep.total_wall_time = seconds_since(start);
  return rep;
}

ConvergenceReport run_convergence_T1(const ExperimentPlan& plan) {
  plan.validate();
  const CoefficientBundle bundle = build_plan_system(plan);
  const AveragedDriftProvider provider(bundle, plan.provider);
  return run_convergence_T1(plan, provider.as_slow_drift());
}

ConvergenceReport run_convergence_T2(const ExperimentPlan& plan) {
  plan.validate();
  const auto start = Clock::now();
  const CoefficientBundle bundle = build_plan_system(plan);
  if (plan.provider.mode != DriftMode::oracle_linear) {
    throw UnsupportedBundle("T2 runs need the oracle drift (linear fast equation, F affine in y)");
  }
  const AveragedDriftProvider provider(bundle, plan.provider);
  const LimitCoefficients limits =
      limit_coefficients(bundle, provider, plan.bohr_T, plan.bohr_anchors, plan.bohr_quad_step);
  const SlowDrift avg_drift = provider.as_slow_drift();
  const TimeGrid grid(0.0, plan.horizon, plan.integrator.step);
  const State x0 = plan.x0(), y0 = plan.y0();

  ConvergenceReport rep;
  rep.theorem = "T2";
  rep.limit_drift_diagonal = limit_drift_diagonal(provider, plan.bohr_T, plan.bohr_anchors, plan.bohr_quad_step);

  // the limit path does not depend on eps
  std::vector<PathSample> limit_paths(plan.mc_paths);
  std::vector<char> limit_failed(plan.mc_paths, 0);
  parallel_for(plan.mc_paths, [&](std::size_t i) {
    try {
      limit_paths[i] = simulate_averaged_limit(bundle, limits, x0, grid, SeedRecord{plan.seed_base + i},
                                               plan.integrator);
    } catch (const StepFailure&) {
      limit_failed[i] = 1;
    } catch (const DivergenceDetected&) {
      limit_failed[i] = 1;
    }
  });
  auto need_limit = [&](std::size_t i) -> const PathSample& {
    if (limit_failed[i]) throw DivergenceDetected("limit path failed", 0.0);
    return limit_paths[i];
  };

  for (double eps : plan.eps_list) {
    const auto t0 = Clock::now();
    std::vector<PathOutcome> inter(plan.mc_paths);
    auto outcomes = run_paths(plan.mc_paths, [&](std::size_t i) {
      const SeedRecord seeds{plan.seed_base + i};
      const PathSample& xl = need_limit(i);
      try {
        const PathSample xb = simulate_averaged_eps(bundle, eps, x0, grid, avg_drift, seeds, plan.integrator);
        inter[i].value = strong_error(xb, xl, plan.moment_p);
      } catch (const StepFailure&) {
        inter[i].failed = true;
      } catch (const DivergenceDetected&) {
        inter[i].failed = true;
      }
      const PathSample xe = simulate_coupled(bundle, eps, x0, y0, grid, seeds, plan.integrator);
      return strong_error(xe, xl, plan.moment_p);
    });
    for (std::size_t i = 0; i < plan.mc_paths; ++i) {
      if (outcomes[i].failed && limit_failed[i]) inter[i].failed = true;
    }
    rep.rows.push_back(summarize(eps, outcomes));
    rep.rows.back().wall_time = seconds_since(t0);
    rep.intermediate.push_back(summarize(eps, inter));
  }

  // discretization reference: the limit equation at h against h/2 on the same noise
  IntegratorConfig fine = plan.integrator;
  fine.step = plan.integrator.step / 2.0;
  const TimeGrid fine_grid(0.0, plan.horizon, fine.step);
  auto deltas = run_paths(plan.mc_paths, [&](std::size_t i) {
    const PathSample& coarse = need_limit(i);
    const PathSample f = simulate_averaged_limit(bundle, limits, x0, fine_grid, SeedRecord{plan.seed_base + i}, fine);
    double sup = 0.0;
    for (std::size_t k = 0; k < coarse.slow.size(); ++k) {
      sup = std::max(sup, kernels::squared_distance(coarse.slow[k].span(), f.slow[2 * k].span()));
    }
    return std::pow(sup, plan.moment_p);
  });
  rep.h_refinement_delta = summarize(0.0, deltas).strong_error;

  finish_convergence(rep);
  rep.total_wall_time = seconds_since(start);
  return rep;
}

KhasminskiiReport run_khasminskii_study(const ExperimentPlan& plan, const std::vector<double>& delta_list) {
  plan.validate();
  if (delta_list.size() < 2) throw InvalidArgument("khasminskii study: need at least two delta values");
  for (std::size_t i = 0; i + 1 < delta_list.size(); ++i) {
    if (!(delta_list[i + 1] < delta_list[i])) throw InvalidArgument("khasminskii study: delta_list must be strictly decreasing");
  }
  const auto start = Clock::now();
  const CoefficientBundle bundle = build_plan_system(plan);
  const TimeGrid grid(0.0, plan.horizon, plan.integrator.step);
  for (double d : delta_list) {
    if (!(d >= grid.step() * (1.0 - 1e-12))) {
      throw InvalidArgument("khasminskii study: delta " + format_double(d) + " is below the grid step");
    }
  }
  const State x0 = plan.x0(), y0 = plan.y0();
  const double eps = plan.khasminskii_eps;
  const std::size_t nd = delta_list.size();
  // per path: the coupled run once, then one auxiliary run per delta
  std::vector<std::vector<PathOutcome>> per_delta(nd, std::vector<PathOutcome>(plan.mc_paths));
  parallel_for(plan.mc_paths, [&](std::size_t i) {
    const SeedRecord seeds{plan.seed_base + i};
    PathSample coupled;
    try {
      coupled = simulate_coupled(bundle, eps, x0, y0, grid, seeds, plan.integrator);
    } catch (const StepFailure&) {
      for (auto& v : per_delta) v[i].failed = true;
      return;
    } catch (const DivergenceDetected&) {
      for (auto& v : per_delta) v[i].failed = true;
      return;
    }
    for (std::size_t d = 0; d < nd; ++d) {
      try {
        const KhasminskiiConfig kc{delta_list[d], DeltaRule::fixed};
        const PathSample aux = khasminskii_auxiliary(bundle, eps, coupled, y0, kc, seeds, plan.integrator);
        double integral = 0.0;
        double prev = kernels::squared_distance(coupled.fast[0].span(), aux.fast[0].span());
        for (std::size_t k = 1; k < grid.points(); ++k) {
          const double cur = kernels::squared_distance(coupled.fast[k].span(), aux.fast[k].span());
          integral += 0.5 * (prev + cur) * grid.step();
          prev = cur;
        }
        per_delta[d][i].value = integral;
      } catch (const DivergenceDetected&) {
        per_delta[d][i].failed = true;
      } catch (const StepFailure&) {
        per_delta[d][i].failed = true;
      }
    }
  });
  KhasminskiiReport rep;
  rep.eps = eps;
  std::vector<double> ds, es;
  for (std::size_t d = 0; d < nd; ++d) {
    const EpsRow r = summarize(delta_list[d], per_delta[d]);
    rep.rows.push_back({delta_list[d], r.strong_error, r.stderr_, r.failed_paths});
    ds.push_back(delta_list[d]);
    es.push_back(r.strong_error);
  }
  rep.fit = fit_rate(ds, es);
  rep.passed = rep.fit.slope >= 0.3 && rep.fit.slope <= 0.8;
  rep.total_wall_time = seconds_since(start);
  return rep;
}

StoppingDiagnostic stopping_diagnostic(const PathSample& path, const GalerkinSpace& space, double alpha, double beta,
                                       double R) {
  if (!path.has_slow()) throw InvalidArgument("stopping_diagnostic: slow path missing");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw InvalidArgument("stopping_diagnostic: exponents must be >= 0");
  if (!(R > 0.0)) throw InvalidArgument("stopping_diagnostic: R must be > 0");
  StoppingDiagnostic d;
  d.threshold_R = R;
  auto integrand = [&](const State& x) {
    const double v = 1.0 + std::pow(norm(space, x, NormKind::V), alpha);
    const double h = beta == 0.0 ? 1.0 : 1.0 + std::pow(norm(space, x, NormKind::H), beta);
    return v * h;
  };
  const TimeGrid& g = path.grid;
  d.times.reserve(g.points());
  d.functional_trace.reserve(g.points());
  double acc = 0.0;
  double prev = integrand(path.slow[0]);
  d.times.push_back(g.time(0));
  d.functional_trace.push_back(0.0);
  for (std::size_t i = 1; i < g.points(); ++i) {
    const double cur = integrand(path.slow[i]);
    acc += 0.5 * (prev + cur) * g.step();
    prev = cur;
    d.times.push_back(g.time(i));
    d.functional_trace.push_back(acc);
    if (!d.hit_time && acc >= R) d.hit_time = g.time(i);
  }
  return d;
}

std::string report_json(const ConvergenceReport& report, const ExperimentPlan& plan) {
  ojson j;
  j["spec_version"] = kReportSchemaVersion;
  j["kind"] = "convergence";
  j["theorem"] = report.theorem;
  j["plan"] = plan_json(plan);
  j["rows"] = ojson::array();
  for (const auto& r : report.rows) j["rows"].push_back(row_json(r));
  j["rate_fit"] = fit_json(report.rate_fit);
  j["bound_check"] = report.bound_check;
  j["monotone_decreasing"] = report.monotone_decreasing;
  j["inconclusive"] = report.inconclusive;
  j["flags"] = report.flags;
  if (!report.intermediate.empty()) {
    j["intermediate"] = ojson::array();
    for (const auto& r : report.intermediate) j["intermediate"].push_back(row_json(r));
  }
  if (report.h_refinement_delta) j["h_refinement_delta"] = *report.h_refinement_delta;
  if (!report.limit_drift_diagonal.empty()) j["limit_drift_diagonal"] = report.limit_drift_diagonal;
  return j.dump(2) + "\n";
}

std::string report_json(const KhasminskiiReport& report, const ExperimentPlan& plan) {
  ojson j;
  j["spec_version"] = kReportSchemaVersion;
  j["kind"] = "khasminskii";
  j["plan"] = plan_json(plan);
  j["eps"] = report.eps;
  j["rows"] = ojson::array();
  for (const auto& r : report.rows) {
    ojson row;
    row["delta"] = r.delta;
    row["error"] = r.error;
    row["stderr"] = r.stderr_;
    row["failed_paths"] = r.failed_paths;
    j["rows"].push_back(row);
  }
  j["fit"] = fit_json(report.fit);
  j["passed"] = report.passed;
  return j.dump(2) + "\n";
}

std::string report_csv(const ConvergenceReport& report) {
  std::ostringstream out;
  out << "eps,error,stderr,failures,wall_time\n";
  for (const auto& r : report.rows) {
    out << format_double(r.eps) << ',' << format_double(r.strong_error) << ',' << format_double(r.stderr_) << ','
        << r.failed_paths << ',' << format_double(r.wall_time) << '\n';
  }
  return out.str();
}

std::string report_csv(const KhasminskiiReport& report) {
  std::ostringstream out;
  out << "delta,error,stderr,failures\n";
  for (const auto& r : report.rows) {
    out << format_double(r.delta) << ',' << format_double(r.error) << ',' << format_double(r.stderr_) << ','
        << r.failed_paths << '\n';
  }
  return out.str();
}

std::string timing_json(const ConvergenceReport& report) {
  ojson j;
  j["total_seconds"] = report.total_wall_time;
  j["per_eps"] = ojson::array();
  for (const auto& r : report.rows) j["per_eps"].push_back({{"eps", r.eps}, {"seconds", r.wall_time}});
  return j.dump(2) + "\n";
}

std::string timing_json(const KhasminskiiReport& report) {
  ojson j;
  j["total_seconds"] = report.total_wall_time;
  return j.dump(2) + "\n";
}

}  // namespace avgsim

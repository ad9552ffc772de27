#include <algorithm>
#include <cmath>

#include "avgsim/coeffs.hpp"
#include "avgsim/errors.hpp"
#include "avgsim/kernels.hpp"
#include "avgsim/parallel.hpp"
#include "avgsim/random.hpp"

namespace avgsim {
namespace {

enum : std::uint64_t {
  kTagMonotone = 0xa2,
  kTagCoercive = 0xa3,
  kTagLipschitz = 0xa5,
  kTagStrong = 0xb2,
  kTagGrowth = 0xb4,
  kTagHemi = 0xa1,
};

double margin(double lhs, double rhs) {
  return (lhs - rhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)});
}

std::vector<double> draw(KeyedStream& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

std::vector<double> diff(std::span<const double> a, std::span<const double> b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

double hnorm(std::span<const double> v) { return std::sqrt(kernels::sum_squares(v)); }

// Runs fn(rng, t) per sample and folds the returned margins in index order.
template <class Fn>
CheckReport run_check(const std::string& name, const CheckOptions& opts, std::uint64_t tag, Fn fn) {
  if (opts.samples == 0) throw InvalidArgument(name + ": samples must be >= 1");
  std::vector<double> margins(opts.samples);
  parallel_for(opts.samples, [&](std::size_t i) {
    KeyedStream rng(derive_seed(opts.seed, tag, i));
    const double t = rng.uniform(-opts.time_range, opts.time_range);
    margins[i] = fn(rng, t);
  });
  CheckReport r;
  r.condition = name;
  r.samples = opts.samples;
  r.max_margin = -INFINITY;
  for (double m : margins) {
    r.max_margin = std::max(r.max_margin, m);
    if (!(m <= opts.tolerance)) ++r.violations;
  }
  r.passed = r.violations == 0;
  return r;
}

}  // namespace

double h_growth_factor(double r, double beta) { return beta == 0.0 ? 1.0 : 1.0 + std::pow(r, beta); }

MonotonicityEnvelope default_envelope(const CoefficientBundle& bundle) {
  const ConditionProfile prof = bundle.profile;
  const GalerkinSpace space = bundle.slow_space;
  return [prof, space](std::span<const double> u, std::span<const double> v) {
    auto half = [&](std::span<const double> w) {
      return 0.5 * prof.generic_C * (1.0 + std::pow(norm(space, w, NormKind::V), prof.alpha)) *
             h_growth_factor(norm(space, w, NormKind::H), prof.beta);
    };
    return half(v) + half(u);
  };
}

CheckReport check_local_monotonicity(const CoefficientBundle& bundle, const CheckOptions& opts) {
  return check_local_monotonicity(bundle, opts, default_envelope(bundle));
}

CheckReport check_local_monotonicity(const CoefficientBundle& bundle, const CheckOptions& opts,
                                     const MonotonicityEnvelope& envelope) {
  const std::size_t n = bundle.slow_dim();
  return run_check("local_monotonicity", opts, kTagMonotone, [&](KeyedStream& rng, double t) {
    const auto u = draw(rng, n, opts.state_scale);
    const auto v = draw(rng, n, opts.state_scale);
    std::vector<double> au(n), av(n);
    bundle.A(t, u, au);
    bundle.A(t, v, av);
    const auto d = diff(u, v);
    const double lhs = kernels::dot(diff(au, av), d);
    const double rhs = envelope(u, v) * kernels::sum_squares(d);
    return margin(lhs, rhs);
  });
}

CheckReport check_coercivity(const CoefficientBundle& bundle, const CheckOptions& opts) {
  const std::size_t n = bundle.slow_dim();
  const ConditionProfile& prof = bundle.profile;
  return run_check("coercivity", opts, kTagCoercive, [&](KeyedStream& rng, double t) {
    const auto v = draw(rng, n, opts.state_scale);
    std::vector<double> av(n);
    bundle.A(t, v, av);
    const double lhs = kernels::dot(av, v);
    const double rhs = prof.generic_C * kernels::sum_squares(v) -
                       prof.theta * std::pow(norm(bundle.slow_space, v, NormKind::V), prof.alpha) + prof.generic_C;
    return margin(lhs, rhs);
  });
}

CheckReport check_strong_monotonicity_fast(const CoefficientBundle& bundle, const CheckOptions& opts) {
  return check_strong_monotonicity_fast(bundle, opts, FastMonotonicitySampling{});
}

CheckReport check_strong_monotonicity_fast(const CoefficientBundle& bundle, const CheckOptions& opts,
                                           FastMonotonicitySampling sampling) {
  const std::size_t ns = bundle.slow_dim();
  const std::size_t nf = bundle.fast_dim();
  const std::size_t nq = bundle.fast_noise_modes;
  const ConditionProfile& prof = bundle.profile;
  return run_check("strong_monotonicity_fast", opts, kTagStrong, [&](KeyedStream& rng, double t) {
    const auto u1 = draw(rng, ns, opts.state_scale);
    auto v1 = draw(rng, ns, opts.state_scale);
    if (!sampling.vary_slow) v1 = u1;
    const auto u = draw(rng, nf, opts.state_scale);
    auto v = u;
    if (sampling.single_mode) {
      v[0] = u[0] - opts.state_scale * rng.normal();
    } else {
      v = draw(rng, nf, opts.state_scale);
    }
    std::vector<double> bu(nf), bv(nf), gu(nq), gv(nq);
    bundle.B(t, u1, u, bu);
    bundle.B(t, v1, v, bv);
    bundle.G2(t, u1, u, gu);
    bundle.G2(t, v1, v, gv);
    const auto d = diff(u, v);
    const double lhs = 2.0 * kernels::dot(diff(bu, bv), d) + kernels::squared_distance(gu, gv);
    const double rhs = -prof.gamma * kernels::sum_squares(d) + prof.generic_C * kernels::squared_distance(u1, v1);
    return margin(lhs, rhs);
  });
}

CheckReport check_lipschitz_F_G1(const CoefficientBundle& bundle, const CheckOptions& opts) {
  const std::size_t ns = bundle.slow_dim();
  const std::size_t nf = bundle.fast_dim();
  const std::size_t nq = bundle.slow_noise_modes;
  const ConditionProfile& prof = bundle.profile;
  const double cf = std::max(prof.lip_F, prof.generic_C);
  const double cg = std::max(prof.lip_G1, prof.generic_C);
  return run_check("lipschitz_F_G1", opts, kTagLipschitz, [&](KeyedStream& rng, double t) {
    const auto u1 = draw(rng, ns, opts.state_scale);
    const auto v1 = draw(rng, ns, opts.state_scale);
    const auto u2 = draw(rng, nf, opts.state_scale);
    const auto v2 = draw(rng, nf, opts.state_scale);
    std::vector<double> fu(ns), fv(ns), gu(nq), gv(nq);
    bundle.F(t, u1, u2, fu);
    bundle.F(t, v1, v2, fv);
    bundle.G1(t, u1, gu);
    bundle.G1(t, v1, gv);
    const double dx = std::sqrt(kernels::squared_distance(u1, v1));
    const double dy = std::sqrt(kernels::squared_distance(u2, v2));
    double m = margin(std::sqrt(kernels::squared_distance(fu, fv)), prof.lip_F * (dx + dy));
    m = std::max(m, margin(hnorm(fu), cf * (1.0 + hnorm(u1) + hnorm(u2))));
    m = std::max(m, margin(std::sqrt(kernels::squared_distance(gu, gv)), prof.lip_G1 * dx));
    m = std::max(m, margin(hnorm(gu), cg * (1.0 + hnorm(u1))));
    return m;
  });
}

CheckReport check_growth_fast(const CoefficientBundle& bundle, const CheckOptions& opts) {
  const std::size_t ns = bundle.slow_dim();
  const std::size_t nf = bundle.fast_dim();
  const std::size_t nq = bundle.fast_noise_modes;
  const ConditionProfile& prof = bundle.profile;
  const double C = prof.generic_C;
  return run_check("growth_fast", opts, kTagGrowth, [&](KeyedStream& rng, double t) {
    const auto u1 = draw(rng, ns, opts.state_scale);
    const auto v = draw(rng, nf, opts.state_scale);
    std::vector<double> bv(nf), gv(nq);
    bundle.B(t, u1, v, bv);
    bundle.G2(t, u1, v, gv);
    const double vn = norm(bundle.fast_space, v, NormKind::V);
    const double xn = hnorm(u1);
    const double b_rhs =
        C * (1.0 + std::pow(vn, prof.kappa - 1.0) + std::pow(xn, 2.0 * (prof.kappa - 1.0) / prof.kappa));
    double m = margin(norm(bundle.fast_space, bv, NormKind::V_star), b_rhs);
    m = std::max(m, margin(hnorm(gv), C * (1.0 + xn + std::pow(hnorm(v), prof.zeta))));
    return m;
  });
}

std::vector<CheckReport> check_all_conditions(const CoefficientBundle& bundle, const CheckOptions& opts) {
  return {check_local_monotonicity(bundle, opts), check_coercivity(bundle, opts),
          check_strong_monotonicity_fast(bundle, opts), check_lipschitz_F_G1(bundle, opts),
          check_growth_fast(bundle, opts)};
}

double hemicontinuity_max_jump(const CoefficientBundle& bundle, DriftKind which, std::size_t grid_points,
                               std::size_t samples, std::uint64_t seed) {
  if (grid_points < 2) throw InvalidArgument("hemicontinuity_max_jump: need >= 2 grid points");
  const std::size_t ns = bundle.slow_dim();
  const std::size_t nf = bundle.fast_dim();
  double worst = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    KeyedStream rng(derive_seed(seed, kTagHemi, i));
    const double t = rng.uniform(-10.0, 10.0);
    double prev = 0.0;
    if (which == DriftKind::slow) {
      const auto u = draw(rng, ns, 1.0), v = draw(rng, ns, 1.0), w = draw(rng, ns, 1.0);
      std::vector<double> z(ns), a(ns);
      for (std::size_t g = 0; g < grid_points; ++g) {
        const double lam = -1.0 + 2.0 * static_cast<double>(g) / static_cast<double>(grid_points - 1);
        for (std::size_t k = 0; k < ns; ++k) z[k] = u[k] + lam * v[k];
        bundle.A(t, z, a);
        const double val = kernels::dot(a, w);
        if (g > 0) worst = std::max(worst, std::abs(val - prev));
        prev = val;
      }
    } else {
      const auto u1 = draw(rng, ns, 1.0), v1 = draw(rng, ns, 1.0);
      const auto u = draw(rng, nf, 1.0), v = draw(rng, nf, 1.0), w = draw(rng, nf, 1.0);
      std::vector<double> z1(ns), z(nf), b(nf);
      for (std::size_t g = 0; g < grid_points; ++g) {
        const double lam = -1.0 + 2.0 * static_cast<double>(g) / static_cast<double>(grid_points - 1);
        for (std::size_t k = 0; k < ns; ++k) z1[k] = u1[k] + lam * v1[k];
        for (std::size_t k = 0; k < nf; ++k) z[k] = u[k] + lam * v[k];
        bundle.B(t, z1, z, b);
        const double val = kernels::dot(b, w);
        if (g > 0) worst = std::max(worst, std::abs(val - prev));
        prev = val;
      }
    }
  }
  return worst;
}

}  // namespace avgsim

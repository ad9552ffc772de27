#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "avgsim/errors.hpp"
#include "avgsim/integrate.hpp"
#include "avgsim/kernels.hpp"
#include "avgsim/random.hpp"

namespace avgsim {
namespace {

constexpr double kDivergenceThreshold = 1e12;

// Solves d o z + coef P(z^3) = rhs by damped Newton from the linear guess.
// The residual is measured after dividing by d so stiff modes do not dominate.
void implicit_cubic_solve(const SpectralTransform& tr, std::span<const double> d, double coef,
                          std::span<const double> rhs, std::span<double> z, const IntegratorConfig& cfg, double t) {
  const std::size_t n = d.size();
  std::vector<double> cube(n), r(n), trial(n), jac(n * n);
  double ref = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    z[k] = rhs[k] / d[k];
    ref = std::max(ref, std::abs(z[k]));
  }
  auto residual = [&](std::span<const double> v, std::span<double> out) {
    tr.project_cube(v, cube);
    double worst = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      out[k] = d[k] * v[k] + coef * cube[k] - rhs[k];
      worst = std::max(worst, std::abs(out[k]) / d[k]);
    }
    return worst;
  };
  double res = residual(z, r);
  Eigen::MatrixXd J(n, n);
  Eigen::VectorXd rv(n);
  for (int it = 0; it < cfg.newton_max_iter; ++it) {
    if (!std::isfinite(res)) break;
    if (res <= cfg.newton_tol * ref) return;
    tr.cube_jacobian(z, jac);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) J(i, j) = coef * jac[i * n + j];
      J(i, i) += d[i];
      rv(i) = r[i];
    }
    const Eigen::VectorXd delta = J.llt().solve(rv);
    double s = 1.0;
    double trial_res = INFINITY;
    for (int halving = 0; halving < 30; ++halving) {
      for (std::size_t k = 0; k < n; ++k) trial[k] = z[k] - s * delta(static_cast<Eigen::Index>(k));
      trial_res = residual(trial, r);
      if (trial_res < res) break;
      s *= 0.5;
    }
    std::copy(trial.begin(), trial.end(), z.begin());
    res = residual(z, r);
  }
  if (res <= cfg.newton_tol * ref) return;
  throw StepFailure("implicit step: Newton did not converge (scaled residual " + std::to_string(res) + ")", res,
                    cfg.newton_max_iter, t);
}

std::uint64_t fold(std::uint64_t h, std::span<const double> v) {
  for (double x : v) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(x));
  return h;
}

void require_eps(double eps, const char* who) {
  if (!(eps > 0.0 && eps <= 1.0)) {
    throw InvalidArgument(std::string(who) + ": eps must lie in (0, 1], got " + std::to_string(eps));
  }
}

void require_dim(const State& s, std::size_t dim, const char* who) {
  if (s.dim() != dim) {
    throw InvalidArgument(std::string(who) + ": state has dim " + std::to_string(s.dim()) + ", expected " +
                          std::to_string(dim));
  }
}

}  // namespace

std::string to_string(Scheme scheme) {
  return scheme == Scheme::tamed_euler ? "tamed_euler" : "semi_implicit_euler";
}

Scheme scheme_from_string(const std::string& name) {
  if (name == "semi_implicit_euler") return Scheme::semi_implicit_euler;
  if (name == "tamed_euler") return Scheme::tamed_euler;
  throw InvalidArgument("unknown scheme '" + name + "'");
}

void IntegratorConfig::validate() const {
  if (!(step > 0.0) || !std::isfinite(step)) throw InvalidArgument("integrator.step must be > 0");
  if (!(newton_tol > 0.0)) throw InvalidArgument("integrator.newton_tol must be > 0");
  if (newton_max_iter < 1) throw InvalidArgument("integrator.newton_max_iter must be >= 1");
  if (!(taming_power > 0.0)) throw InvalidArgument("integrator.taming_power must be > 0");
  if (!(fast_factor > 0.0)) throw InvalidArgument("integrator.fast_factor must be > 0");
  if (finest_level < 4 || finest_level > 28) throw InvalidArgument("integrator.finest_level must lie in [4, 28]");
}

NoisePair make_noise(const CoefficientBundle& bundle, const SeedRecord& seeds, const IntegratorConfig& cfg) {
  return {NoiseSource{seeds.seed, bundle.slow_noise_modes, seeds.slow_stream, cfg.finest_level},
          NoiseSource{seeds.seed, bundle.fast_noise_modes, seeds.fast_stream, cfg.finest_level}};
}

void check_divergence(std::span<const double> v, double t, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x) || std::abs(x) > kDivergenceThreshold) {
      throw DivergenceDetected(std::string(what) + ": state diverged at t=" + std::to_string(t), t);
    }
  }
}

FastStepper::FastStepper(const CoefficientBundle& bundle, const IntegratorConfig& cfg, double eps)
    : bundle_(bundle), cfg_(cfg), eps_(eps), inv_sqrt_eps_(1.0 / std::sqrt(eps)) {
  const std::size_t n = bundle.fast_dim();
  drift_.assign(n, 0.0);
  diff_.assign(n, 0.0);
  dw_.assign(n, 0.0);
  denom_.assign(n, 1.0);
  g_.assign(bundle.fast_noise_modes, 0.0);
  ones_.assign(n, 1.0);
}

std::size_t FastStepper::substeps(double h) const {
  const double hf = std::min(h, eps_ * cfg_.fast_factor);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(h / hf * (1.0 - 1e-12))));
}

void FastStepper::advance(double t0, double t1, std::span<const double> x, std::span<double> y, NoiseCursor& w2) {
  const std::size_t n = substeps(t1 - t0);
  if (n == 1) {
    substep(t0, t1, x, y, w2);
    return;
  }
  const double hf = (t1 - t0) / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double a = t0 + static_cast<double>(j) * hf;
    const double b = j + 1 == n ? t1 : t0 + static_cast<double>(j + 1) * hf;
    substep(a, b, x, y, w2);
  }
}

void FastStepper::substep(double t0, double t1, std::span<const double> x, std::span<double> y, NoiseCursor& w2) {
  const CoefficientBundle& b = bundle_;
  const std::size_t n = b.fast_dim();
  const std::size_t q = b.fast_noise_modes;
  const double tau = t0 / eps_;
  const double he = (t1 - t0) / eps_;
  w2.increment(t0, t1, std::span<double>(dw_).first(q));
  b.G2(tau, x, y, g_);
  for (std::size_t k = 0; k < q; ++k) diff_[k] = inv_sqrt_eps_ * g_[k];

  if (cfg_.scheme == Scheme::tamed_euler) {
    b.B(tau, x, y, drift_);
    const double scale = he / (1.0 + std::pow(he, cfg_.taming_power) * std::sqrt(kernels::sum_squares(drift_)));
    for (std::size_t k = 0; k < n; ++k) y[k] += scale * drift_[k] + diff_[k] * dw_[k];
  } else {
    const double p = b.phi(tau);
    const std::size_t shared = b.shared_modes();
    for (std::size_t k = 0; k < n; ++k) {
      drift_[k] = p * y[k] + (k < shared ? b.a_coupling * x[k] : 0.0);
      denom_[k] = 1.0 + he * b.fast_rates[k];
    }
    if (b.linear_fast()) {
      kernels::semi_implicit_update(y, drift_, he, diff_, dw_, denom_);
    } else {
      std::vector<double> rhs(y.begin(), y.end());
      kernels::semi_implicit_update(rhs, drift_, he, diff_, dw_, ones_);
      implicit_cubic_solve(*b.fast_transform(), denom_, he * b.fast_cubic, rhs, y, cfg_, t1);
    }
  }
  check_divergence(y, t1, "fast equation");
}

SlowStepper::SlowStepper(const CoefficientBundle& bundle, const IntegratorConfig& cfg) : bundle_(bundle), cfg_(cfg) {
  const std::size_t n = bundle.slow_dim();
  full_dw_.assign(n, 0.0);
  diff_.assign(n, 0.0);
  denom_.assign(n, 1.0);
  ones_.assign(n, 1.0);
  a_.assign(n, 0.0);
}

void SlowStepper::advance(double t, double h, double ell, std::span<const double> drift,
                          std::span<const double> loadings, std::span<const double> dw, std::span<double> x) {
  const CoefficientBundle& b = bundle_;
  const std::size_t n = b.slow_dim();
  std::copy(dw.begin(), dw.end(), full_dw_.begin());
  std::copy(loadings.begin(), loadings.end(), diff_.begin());

  if (cfg_.scheme == Scheme::tamed_euler) {
    b.A_scaled(ell, x, a_);
    for (std::size_t k = 0; k < n; ++k) a_[k] += drift[k];
    const double scale = h / (1.0 + std::pow(h, cfg_.taming_power) * std::sqrt(kernels::sum_squares(a_)));
    for (std::size_t k = 0; k < n; ++k) x[k] += scale * a_[k] + diff_[k] * full_dw_[k];
  } else {
    for (std::size_t k = 0; k < n; ++k) denom_[k] = 1.0 + h * ell * b.slow_rates[k];
    if (b.linear_slow()) {
      kernels::semi_implicit_update(x, drift, h, diff_, full_dw_, denom_);
    } else {
      std::vector<double> rhs(x.begin(), x.end());
      kernels::semi_implicit_update(rhs, drift, h, diff_, full_dw_, ones_);
      implicit_cubic_solve(*b.slow_transform(), denom_, h * b.slow_cubic, rhs, x, cfg_, t + h);
    }
  }
  check_divergence(x, t + h, "slow equation");
}

std::pair<State, State> step_coupled(const CoefficientBundle& bundle, double eps, const State& x, const State& y,
                                     double t, double h, const NoisePair& noise, const IntegratorConfig& cfg) {
  require_eps(eps, "step_coupled");
  require_dim(x, bundle.slow_dim(), "step_coupled");
  require_dim(y, bundle.fast_dim(), "step_coupled");
  if (!(h > 0.0)) throw InvalidArgument("step_coupled: h must be > 0");
  cfg.validate();
  NoiseCursor w1(noise.w1), w2(noise.w2);
  const double tau = t / eps;
  std::vector<double> f(bundle.slow_dim()), g(bundle.slow_noise_modes), dw(bundle.slow_noise_modes);
  bundle.F(tau, x.span(), y.span(), f);
  bundle.G1(tau, x.span(), g);
  w1.increment(t, t + h, dw);
  State xn = x, yn = y;
  SlowStepper(bundle, cfg).advance(t, h, bundle.ell1(tau), f, g, dw, xn.span());
  FastStepper(bundle, cfg, eps).advance(t, t + h, x.span(), yn.span(), w2);
  return {std::move(xn), std::move(yn)};
}

PathSample simulate_coupled(const CoefficientBundle& bundle, double eps, const State& x0, const State& y0,
                            const TimeGrid& grid, const SeedRecord& seeds, const IntegratorConfig& cfg) {
  require_eps(eps, "simulate_coupled");
  require_dim(x0, bundle.slow_dim(), "simulate_coupled");
  require_dim(y0, bundle.fast_dim(), "simulate_coupled");
  if (grid.t0() != 0.0) throw InvalidArgument("simulate_coupled: grid must start at t0 = 0");
  cfg.validate();
  const NoisePair noise = make_noise(bundle, seeds, cfg);
  NoiseCursor w1(noise.w1), w2(noise.w2);
  SlowStepper slow(bundle, cfg);
  FastStepper fast(bundle, cfg, eps);

  PathSample path;
  path.grid = grid;
  path.seeds = seeds;
  path.slow.reserve(grid.points());
  path.fast.reserve(grid.points());
  path.slow.push_back(x0);
  path.fast.push_back(y0);

  State x = x0, y = y0, xn = x0;
  std::vector<double> f(bundle.slow_dim()), g(bundle.slow_noise_modes), dw(bundle.slow_noise_modes);
  std::uint64_t checksum = 0;
  for (std::size_t i = 0; i + 1 < grid.points(); ++i) {
    const double t = grid.time(i);
    const double tn = grid.time(i + 1);
    const double tau = t / eps;
    bundle.F(tau, x.span(), y.span(), f);
    bundle.G1(tau, x.span(), g);
    w1.increment(t, tn, dw);
    checksum = fold(checksum, dw);
    if (cfg.log_w1) path.w1_log.insert(path.w1_log.end(), dw.begin(), dw.end());
    xn = x;
    slow.advance(t, tn - t, bundle.ell1(tau), f, g, dw, xn.span());
    fast.advance(t, tn, x.span(), y.span(), w2);
    x = xn;
    path.slow.push_back(x);
    path.fast.push_back(y);
  }
  path.w1_checksum = checksum;
  return path;
}

PathSample simulate_frozen(const CoefficientBundle& bundle, const State& x, double s, double t_end, const State& y,
                           double step, const SeedRecord& seeds, const IntegratorConfig& cfg) {
  require_dim(x, bundle.slow_dim(), "simulate_frozen");
  require_dim(y, bundle.fast_dim(), "simulate_frozen");
  if (!(s < t_end)) throw InvalidArgument("simulate_frozen: need s < t_end");
  cfg.validate();
  const TimeGrid grid(s, t_end, step);
  NoiseCursor w2(NoiseSource{seeds.seed, bundle.fast_noise_modes, seeds.fast_stream, cfg.finest_level});
  FastStepper fast(bundle, cfg, 1.0);
  PathSample path;
  path.grid = grid;
  path.seeds = seeds;
  path.fast.reserve(grid.points());
  path.fast.push_back(y);
  State v = y;
  for (std::size_t i = 0; i + 1 < grid.points(); ++i) {
    fast.advance(grid.time(i), grid.time(i + 1), x.span(), v.span(), w2);
    path.fast.push_back(v);
  }
  return path;
}

State advance_frozen(const CoefficientBundle& bundle, const State& x, double s, double t_end, const State& y,
                     double step, const NoiseSource& w2src, const IntegratorConfig& cfg) {
  require_dim(x, bundle.slow_dim(), "advance_frozen");
  require_dim(y, bundle.fast_dim(), "advance_frozen");
  if (s == t_end) return y;
  if (!(s < t_end)) throw InvalidArgument("advance_frozen: need s <= t_end");
  const TimeGrid grid(s, t_end, step);
  NoiseCursor w2(w2src);
  FastStepper fast(bundle, cfg, 1.0);
  State v = y;
  for (std::size_t i = 0; i + 1 < grid.points(); ++i) fast.advance(grid.time(i), grid.time(i + 1), x.span(), v.span(), w2);
  return v;
}

namespace {

// Shared loop of both averaged equations.
template <class Coeffs>
PathSample simulate_slow_only(const CoefficientBundle& bundle, const State& x0, const TimeGrid& grid,
                              const SeedRecord& seeds, const IntegratorConfig& cfg, Coeffs coeffs) {
  require_dim(x0, bundle.slow_dim(), "averaged equation");
  if (grid.t0() != 0.0) throw InvalidArgument("averaged equation: grid must start at t0 = 0");
  cfg.validate();
  NoiseCursor w1(make_noise(bundle, seeds, cfg).w1);
  SlowStepper slow(bundle, cfg);
  PathSample path;
  path.grid = grid;
  path.seeds = seeds;
  path.slow.reserve(grid.points());
  path.slow.push_back(x0);
  State x = x0;
  std::vector<double> f(bundle.slow_dim()), g(bundle.slow_noise_modes), dw(bundle.slow_noise_modes);
  std::uint64_t checksum = 0;
  for (std::size_t i = 0; i + 1 < grid.points(); ++i) {
    const double t = grid.time(i);
    const double tn = grid.time(i + 1);
    const double ell = coeffs(t, x.span(), std::span<double>(f), std::span<double>(g));
    w1.increment(t, tn, dw);
    checksum = fold(checksum, dw);
    if (cfg.log_w1) path.w1_log.insert(path.w1_log.end(), dw.begin(), dw.end());
    slow.advance(t, tn - t, ell, f, g, dw, x.span());
    path.slow.push_back(x);
  }
  path.w1_checksum = checksum;
  return path;
}

}  // namespace

PathSample simulate_averaged_eps(const CoefficientBundle& bundle, double eps, const State& x0, const TimeGrid& grid,
                                 const SlowDrift& avg_drift, const SeedRecord& seeds, const IntegratorConfig& cfg) {
  require_eps(eps, "simulate_averaged_eps");
  if (!avg_drift) throw InvalidArgument("simulate_averaged_eps: averaged drift is empty");
  return simulate_slow_only(bundle, x0, grid, seeds, cfg,
                            [&](double t, std::span<const double> x, std::span<double> f, std::span<double> g) {
                              const double tau = t / eps;
                              avg_drift(tau, x, f);
                              bundle.G1(tau, x, g);
                              return bundle.ell1(tau);
                            });
}

PathSample simulate_averaged_limit(const CoefficientBundle& bundle, const LimitCoefficients& limits, const State& x0,
                                   const TimeGrid& grid, const SeedRecord& seeds, const IntegratorConfig& cfg) {
  if (!limits.drift) throw InvalidArgument("simulate_averaged_limit: limit drift is empty");
  return simulate_slow_only(bundle, x0, grid, seeds, cfg,
                            [&](double, std::span<const double> x, std::span<double> f, std::span<double> g) {
                              limits.drift(0.0, x, f);
                              for (std::size_t k = 0; k < g.size(); ++k) {
                                g[k] = limits.ell2_bar * (bundle.g1_mult * x[k] + bundle.g1_add);
                              }
                              return limits.ell1_bar;
                            });
}

// ---------------------------------------------------------------------------
// Binary path files

namespace {

constexpr char kMagic[8] = {'A', 'V', 'G', 'P', 'A', 'T', 'H', '1'};

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

template <class T>
T get(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), sizeof(T))) throw InvalidArgument("path file: truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

}  // namespace

void write_path_binary(std::ostream& out, const PathSample& path) {
  const std::uint64_t sd = path.has_slow() ? path.slow.front().dim() : 0;
  const std::uint64_t fd = path.has_fast() ? path.fast.front().dim() : 0;
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, (path.has_slow() ? 1u : 0u) | (path.has_fast() ? 2u : 0u));
  put<std::uint64_t>(out, sd);
  put<std::uint64_t>(out, fd);
  put<std::uint64_t>(out, path.grid.points());
  put<double>(out, path.grid.t0());
  put<double>(out, path.grid.t_end());
  put<double>(out, path.grid.step());
  put<std::uint64_t>(out, path.seeds.seed);
  put<std::uint32_t>(out, path.seeds.slow_stream);
  put<std::uint32_t>(out, path.seeds.fast_stream);
  put<std::uint64_t>(out, path.w1_checksum);
  for (std::size_t i = 0; i < path.grid.points(); ++i) {
    if (path.has_slow()) {
      for (double v : path.slow[i].coeffs()) put<double>(out, v);
    }
    if (path.has_fast()) {
      for (double v : path.fast[i].coeffs()) put<double>(out, v);
    }
  }
}

PathSample read_path_binary(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw InvalidArgument("path file: bad magic");
  }
  if (get<std::uint32_t>(in) != 1) throw InvalidArgument("path file: unsupported version");
  const auto flags = get<std::uint32_t>(in);
  const auto sd = get<std::uint64_t>(in);
  const auto fd = get<std::uint64_t>(in);
  const auto points = get<std::uint64_t>(in);
  const double t0 = get<double>(in);
  const double t_end = get<double>(in);
  const double step = get<double>(in);
  PathSample path;
  path.grid = TimeGrid(t0, t_end, step);
  if (path.grid.points() != points) throw InvalidArgument("path file: point count does not match the grid");
  path.seeds.seed = get<std::uint64_t>(in);
  path.seeds.slow_stream = get<std::uint32_t>(in);
  path.seeds.fast_stream = get<std::uint32_t>(in);
  path.w1_checksum = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < points; ++i) {
    if (flags & 1u) {
      State s(sd);
      for (std::uint64_t k = 0; k < sd; ++k) s[k] = get<double>(in);
      path.slow.push_back(std::move(s));
    }
    if (flags & 2u) {
      State s(fd);
      for (std::uint64_t k = 0; k < fd; ++k) s[k] = get<double>(in);
      path.fast.push_back(std::move(s));
    }
  }
  return path;
}

}  // namespace avgsim

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "avgsim/average.hpp"
#include "avgsim/errors.hpp"
#include "avgsim/kernels.hpp"
#include "avgsim/parallel.hpp"
#include "avgsim/random.hpp"

namespace avgsim {
namespace {

constexpr std::uint64_t kTagNested = 0xa0;
constexpr std::size_t kOracleCacheLimit = std::size_t{1} << 20;
constexpr std::size_t kQuadBlocks = 64;

// 8-point Gauss-Legendre nodes and weights on [-1, 1].
constexpr std::array<double, 8> kGLx = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                        -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                        0.7966664774136267,  0.9602898564975363};
constexpr std::array<double, 8> kGLw = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                        0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                        0.2223810344533745, 0.1012285362903763};

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InvalidArgument("F-bar table: bad number '" + s + "'");
  }
  return v;
}

std::uint64_t key_hash(const DriftKey& k) {
  std::uint64_t h = splitmix64(static_cast<std::uint64_t>(k.t));
  for (auto v : k.x) h = splitmix64(h ^ static_cast<std::uint64_t>(v));
  return h;
}

// Trapezoid sums in fixed blocks so the result does not depend on the worker count.
std::vector<double> window_mean(const VectorSignal& f, double a, double T, double quad_step) {
  const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(T / quad_step - 1e-9)));
  const double h = T / static_cast<double>(n);
  const std::size_t blocks = std::min(kQuadBlocks, n + 1);
  std::vector<std::vector<double>> partial(blocks);
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t lo = (n + 1) * b / blocks;
    const std::size_t hi = (n + 1) * (b + 1) / blocks;
    std::vector<double> acc;
    for (std::size_t i = lo; i < hi; ++i) {
      const double t = i == n ? a + T : a + static_cast<double>(i) * h;
      const auto v = f(t);
      if (acc.empty()) acc.assign(v.size(), 0.0);
      const double w = (i == 0 || i == n) ? 0.5 : 1.0;
      for (std::size_t k = 0; k < v.size(); ++k) acc[k] += w * v[k];
    }
    partial[b] = std::move(acc);
  });
  std::vector<double> sum;
  for (const auto& p : partial) {
    if (p.empty()) continue;
    if (sum.empty()) sum.assign(p.size(), 0.0);
    for (std::size_t k = 0; k < p.size(); ++k) sum[k] += p[k];
  }
  for (double& v : sum) v *= h / T;
  return sum;
}

}  // namespace

std::string to_string(DriftMode mode) {
  switch (mode) {
    case DriftMode::oracle_linear:
      return "oracle_linear";
    case DriftMode::nested_mc:
      return "nested_mc";
    case DriftMode::tabulated:
      return "tabulated";
  }
  return "oracle_linear";
}

DriftMode drift_mode_from_string(const std::string& name) {
  if (name == "oracle_linear") return DriftMode::oracle_linear;
  if (name == "nested_mc") return DriftMode::nested_mc;
  if (name == "tabulated") return DriftMode::tabulated;
  throw InvalidArgument("unknown provider mode '" + name + "'");
}

AveragedDriftProvider::AveragedDriftProvider(const CoefficientBundle& bundle, ProviderOptions opts)
    : bundle_(bundle), opts_(std::move(opts)) {
  if (opts_.mode == DriftMode::nested_mc && opts_.ensemble_M < 100) {
    throw InvalidArgument("nested_mc provider needs ensemble_M >= 100");
  }
  if (opts_.mode == DriftMode::oracle_linear && bundle.f_y != 0.0) {
    if (!bundle.linear_fast()) throw UnsupportedBundle("oracle_linear needs a linear fast equation");
    for (std::size_t k = 0; k < bundle.shared_modes(); ++k) {
      if (!(bundle.fast_rates[k] - bundle.phi.sup() > 0.0)) {
        throw UnsupportedBundle("oracle_linear needs b_k > sup phi for every coupled mode");
      }
    }
  }
  if (!(opts_.t_quantum > 0.0) || !(opts_.x_quantum > 0.0)) throw InvalidArgument("cache quanta must be > 0");
}

double AveragedDriftProvider::oracle_mean_factor(std::size_t k, double t) const {
  const double b = bundle_.fast_rates[k];
  const double r = b - bundle_.phi.sup();
  double omega = 0.0;
  for (double w : bundle_.phi.frequencies()) omega = std::max(omega, w);
  const double U = 40.0 / r;
  const double width = 0.5 * std::min(1.0 / r, omega > 0.0 ? 1.0 / omega : INFINITY);
  const auto panels = static_cast<std::size_t>(std::ceil(U / width));
  const double hw = 0.5 * U / static_cast<double>(panels);
  double sum = 0.0;
  for (std::size_t p = 0; p < panels; ++p) {
    const double mid = (2.0 * static_cast<double>(p) + 1.0) * hw;
    double s = 0.0;
    for (std::size_t j = 0; j < kGLx.size(); ++j) {
      const double u = mid + hw * kGLx[j];
      s += kGLw[j] * std::exp(-b * u + bundle_.phi.integral(t - u, t));
    }
    sum += hw * s;
  }
  return sum;
}

DriftValue AveragedDriftProvider::compute_oracle(double t, std::span<const double> x) const {
  const std::size_t n = bundle_.slow_dim();
  const std::size_t shared = bundle_.shared_modes();
  const std::uint64_t tk = std::bit_cast<std::uint64_t>(t);
  std::vector<double> g;
  {
    std::lock_guard lock(mutex_);
    auto it = oracle_cache_.find(tk);
    if (it != oracle_cache_.end()) {
      g = it->second;
      ++hits_;
    }
  }
  if (g.empty()) {
    g.resize(shared);
    for (std::size_t k = 0; k < shared; ++k) g[k] = oracle_mean_factor(k, t);
    std::lock_guard lock(mutex_);
    ++misses_;
    if (oracle_cache_.size() >= kOracleCacheLimit) oracle_cache_.clear();
    oracle_cache_.emplace(tk, g);
  }
  DriftValue v{std::vector<double>(n), std::vector<double>(n, 0.0)};
  for (std::size_t k = 0; k < n; ++k) {
    v.drift[k] = bundle_.f_x * x[k] + (k < shared ? bundle_.f_y * bundle_.a_coupling * x[k] * g[k] : 0.0);
  }
  return v;
}

DriftKey AveragedDriftProvider::key(double t, std::span<const double> x) const {
  DriftKey k{std::llround(t / opts_.t_quantum), {}};
  k.x.reserve(x.size());
  for (double v : x) k.x.push_back(std::llround(v / opts_.x_quantum));
  return k;
}

double AveragedDriftProvider::key_time(const DriftKey& k) const { return static_cast<double>(k.t) * opts_.t_quantum; }

std::vector<double> AveragedDriftProvider::key_state(const DriftKey& k) const {
  std::vector<double> x(k.x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(k.x[i]) * opts_.x_quantum;
  return x;
}

DriftValue AveragedDriftProvider::compute_nested(const DriftKey& key) const {
  const double t = key_time(key);
  const State x(key_state(key));
  EnsembleOptions eo;
  eo.M = opts_.ensemble_M;
  eo.step = opts_.step;
  eo.seed = derive_seed(opts_.seed, kTagNested, key_hash(key));
  eo.integrator = opts_.integrator;
  eo.bias_tol = opts_.bias_tol;
  eo.S = opts_.pullback_S > 0.0 ? opts_.pullback_S
                                : std::max(opts_.step, required_pullback(bundle_, x, State(bundle_.fast_dim()), opts_.bias_tol));
  const MeasureEnsemble e = estimate_evolution_measure(bundle_, x, t, eo);
  const auto mean = e.mean();
  const auto var = e.variance();
  const std::size_t n = bundle_.slow_dim();
  const std::size_t shared = bundle_.shared_modes();
  DriftValue v{std::vector<double>(n), std::vector<double>(n, 0.0)};
  double worst = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    v.drift[k] = bundle_.f_x * x[k] + (k < shared ? bundle_.f_y * mean[k] : 0.0);
    if (k < shared) {
      v.stderr_[k] = std::abs(bundle_.f_y) * std::sqrt(var[k] / static_cast<double>(e.size()));
      worst = std::max(worst, v.stderr_[k]);
    }
  }
  if (worst > opts_.stderr_tol) {
    const double ratio = worst / opts_.stderr_tol;
    const auto need = static_cast<std::size_t>(std::ceil(static_cast<double>(opts_.ensemble_M) * ratio * ratio));
    throw EnsembleTooSmall("nested F-bar stderr " + shortest(worst) + " above tolerance " + shortest(opts_.stderr_tol) +
                               "; need M >= " + std::to_string(need),
                           need);
  }
  return v;
}

DriftValue AveragedDriftProvider::evaluate(double t, std::span<const double> x) const {
  if (x.size() != bundle_.slow_dim()) throw InvalidArgument("averaged_drift: x has the wrong dim");
  const std::size_t n = bundle_.slow_dim();
  if (bundle_.f_y == 0.0) {
    DriftValue v{std::vector<double>(n), std::vector<double>(n, 0.0)};
    std::vector<double> y0(bundle_.fast_dim(), 0.0);
    bundle_.F(t, x, y0, v.drift);
    return v;
  }
  if (opts_.mode == DriftMode::oracle_linear) return compute_oracle(t, x);

  const DriftKey k = key(t, x);
  {
    std::lock_guard lock(mutex_);
    auto it = table_.find(k);
    if (it != table_.end()) {
      ++hits_;
      return it->second;
    }
    ++misses_;
  }
  if (opts_.mode == DriftMode::tabulated) {
    throw InvalidArgument("tabulated F-bar does not cover the query at t=" + shortest(t));
  }
  DriftValue v = compute_nested(k);
  std::lock_guard lock(mutex_);
  table_.insert_or_assign(k, v);
  return v;
}

void AveragedDriftProvider::drift(double t, std::span<const double> x, std::span<double> out) const {
  const DriftValue v = evaluate(t, x);
  std::copy(v.drift.begin(), v.drift.end(), out.begin());
}

SlowDrift AveragedDriftProvider::as_slow_drift() const {
  return [this](double tau, std::span<const double> x, std::span<double> out) { drift(tau, x, out); };
}

void AveragedDriftProvider::tabulate(const std::vector<double>& times, const std::vector<State>& xs) {
  for (double t : times) {
    for (const auto& x : xs) {
      const DriftKey k = key(t, x.span());
      DriftValue v;
      if (opts_.mode == DriftMode::nested_mc) {
        v = compute_nested(k);
      } else if (opts_.mode == DriftMode::oracle_linear) {
        v = compute_oracle(key_time(k), key_state(k));
      } else {
        throw InvalidArgument("tabulate: a tabulated provider cannot compute new entries");
      }
      std::lock_guard lock(mutex_);
      table_.insert_or_assign(k, std::move(v));
    }
  }
}

void AveragedDriftProvider::export_table(std::ostream& out) const {
  std::lock_guard lock(mutex_);
  out << "# avgsim F-bar table v1\n";
  out << "# slow_dim " << bundle_.slow_dim() << " t_quantum " << shortest(opts_.t_quantum) << " x_quantum "
      << shortest(opts_.x_quantum) << "\n";
  for (const auto& [k, v] : table_) {
    out << k.t;
    for (auto xi : k.x) out << ' ' << xi;
    for (double d : v.drift) out << ' ' << shortest(d);
    for (double s : v.stderr_) out << ' ' << shortest(s);
    out << '\n';
  }
}

void AveragedDriftProvider::load_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "# avgsim F-bar table v1") throw InvalidArgument("F-bar table: bad header");
  if (!std::getline(in, line)) throw InvalidArgument("F-bar table: missing dims line");
  {
    std::istringstream hs(line);
    std::string hash, w1, w2, w3, tq, xq;
    std::size_t dim = 0;
    hs >> hash >> w1 >> dim >> w2 >> tq >> w3 >> xq;
    if (dim != bundle_.slow_dim()) throw InvalidArgument("F-bar table: slow_dim does not match the bundle");
    if (parse_double(tq) != opts_.t_quantum || parse_double(xq) != opts_.x_quantum) {
      throw InvalidArgument("F-bar table: quanta do not match the provider");
    }
  }
  const std::size_t n = bundle_.slow_dim();
  std::map<DriftKey, DriftValue> table;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string s; ls >> s;) tok.push_back(s);
    if (tok.size() != 1 + 3 * n) throw InvalidArgument("F-bar table: row has " + std::to_string(tok.size()) + " fields");
    DriftKey k{std::stoll(tok[0]), {}};
    for (std::size_t i = 0; i < n; ++i) k.x.push_back(std::stoll(tok[1 + i]));
    DriftValue v;
    for (std::size_t i = 0; i < n; ++i) v.drift.push_back(parse_double(tok[1 + n + i]));
    for (std::size_t i = 0; i < n; ++i) v.stderr_.push_back(parse_double(tok[1 + 2 * n + i]));
    table.insert_or_assign(std::move(k), std::move(v));
  }
  std::lock_guard lock(mutex_);
  table_ = std::move(table);
}

std::size_t AveragedDriftProvider::cache_hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}

std::size_t AveragedDriftProvider::cache_misses() const {
  std::lock_guard lock(mutex_);
  return misses_;
}

std::size_t AveragedDriftProvider::table_size() const {
  std::lock_guard lock(mutex_);
  return table_.size();
}

State averaged_drift(const AveragedDriftProvider& provider, double t, const State& x) {
  return State(provider.evaluate(t, x.span()).drift);
}

PathSample simulate_averaged_eps(const CoefficientBundle& bundle, double eps, const State& x0, const TimeGrid& grid,
                                 const AveragedDriftProvider& provider, const SeedRecord& seeds,
                                 const IntegratorConfig& cfg) {
  return simulate_averaged_eps(bundle, eps, x0, grid, provider.as_slow_drift(), seeds, cfg);
}

BohrMeanReport bohr_mean(const VectorSignal& f, double T, const std::vector<double>& anchors, double quad_step) {
  if (!(T > 0.0)) throw InvalidArgument("bohr_mean: T must be > 0");
  if (anchors.empty()) throw InvalidArgument("bohr_mean: anchors must be non-empty");
  if (!(quad_step > 0.0)) throw InvalidArgument("bohr_mean: quad_step must be > 0");
  BohrMeanReport r;
  r.window_T = T;
  r.anchors_probed = anchors.size();
  for (double a : anchors) r.window_means.push_back(window_mean(f, a, T, quad_step));
  const std::size_t n = r.window_means.front().size();
  r.value.assign(n, 0.0);
  for (const auto& w : r.window_means) {
    for (std::size_t k = 0; k < n; ++k) r.value[k] += w[k];
  }
  for (double& v : r.value) v /= static_cast<double>(anchors.size());
  for (const auto& w : r.window_means) {
    for (std::size_t k = 0; k < n; ++k) r.tail_estimate = std::max(r.tail_estimate, std::abs(w[k] - r.value[k]));
  }
  return r;
}

BohrMeanReport bohr_mean(const ScalarSignal& f, double T, const std::vector<double>& anchors, double quad_step) {
  return bohr_mean(VectorSignal([&f](double t) { return std::vector<double>{f(t)}; }), T, anchors, quad_step);
}

BohrMeanReport bohr_limit_drift(const AveragedDriftProvider& provider, const State& x, double T,
                                const std::vector<double>& anchors, double quad_step) {
  return bohr_mean(VectorSignal([&](double s) { return provider.evaluate(s, x.span()).drift; }), T, anchors,
                   quad_step);
}

std::vector<double> limit_drift_diagonal(const AveragedDriftProvider& provider, double T,
                                         const std::vector<double>& anchors, double quad_step) {
  if (provider.options().mode != DriftMode::oracle_linear) {
    throw UnsupportedBundle("limit drift diagonal needs the oracle provider (F-bar linear in x)");
  }
  const State ones(std::vector<double>(provider.bundle().slow_dim(), 1.0));
  return bohr_limit_drift(provider, ones, T, anchors, quad_step).value;
}

AsymptoticA asymptotic_A(const CoefficientBundle& bundle, const std::vector<State>& probes, double t_probe) {
  if (!bundle.ap) throw UnsupportedBundle("asymptotic_A: bundle has no almost-periodic metadata");
  AsymptoticA out;
  out.ell1_bar = bundle.ap->ell1_limit;
  const std::size_t n = bundle.slow_dim();
  std::vector<double> a(n), abar(n), d(n);
  for (const auto& x : probes) {
    bundle.A(t_probe, x.span(), a);
    out.apply(bundle, x.span(), abar);
    for (std::size_t k = 0; k < n; ++k) d[k] = a[k] - abar[k];
    out.residual = std::max(out.residual, norm(bundle.slow_space, d, NormKind::V_star));
  }
  return out;
}

TimeAveragedG1 time_avg_G1(const CoefficientBundle& bundle, const State& x, double T,
                           const std::vector<double>& anchors, double quad_step) {
  if (!bundle.ap) throw UnsupportedBundle("time_avg_G1: bundle has no almost-periodic metadata");
  if (!(T > 0.0)) throw InvalidArgument("time_avg_G1: T must be > 0");
  TimeAveragedG1 out;
  out.ell2_bar = bundle.ap->ell2_limit;
  const std::size_t q = bundle.slow_noise_modes;
  std::vector<double> gbar(q);
  for (std::size_t k = 0; k < q; ++k) gbar[k] = out.ell2_bar * (bundle.g1_mult * x[k] + bundle.g1_add);
  VectorSignal sq = [&](double s) {
    std::vector<double> g(q);
    bundle.G1(s, x.span(), g);
    return std::vector<double>{kernels::squared_distance(g, gbar)};
  };
  for (double a : anchors) out.deviation = std::max(out.deviation, window_mean(sq, a, T, quad_step)[0]);
  return out;
}

LimitCoefficients limit_coefficients(const CoefficientBundle& bundle, const AveragedDriftProvider& provider, double T,
                                     const std::vector<double>& anchors, double quad_step) {
  if (!bundle.ap) throw UnsupportedBundle("limit coefficients need almost-periodic metadata");
  LimitCoefficients lc;
  lc.ell1_bar = bundle.ap->ell1_limit;
  lc.ell2_bar = bundle.ap->ell2_limit;
  const std::vector<double> diag = limit_drift_diagonal(provider, T, anchors, quad_step);
  lc.drift = [diag](double, std::span<const double> x, std::span<double> out) {
    for (std::size_t k = 0; k < diag.size(); ++k) out[k] = diag[k] * x[k];
  };
  return lc;
}

std::string to_string(DeltaRule rule) { return rule == DeltaRule::fixed ? "fixed" : "eps_two_thirds"; }

DeltaRule delta_rule_from_string(const std::string& name) {
  if (name == "fixed") return DeltaRule::fixed;
  if (name == "eps_two_thirds") return DeltaRule::eps_two_thirds;
  throw InvalidArgument("unknown delta rule '" + name + "'");
}

double KhasminskiiConfig::effective_delta(double eps) const {
  const double d = rule == DeltaRule::eps_two_thirds ? std::cbrt(eps * eps) : delta;
  if (!(d > 0.0)) throw InvalidArgument("Khasminskii delta must be > 0");
  return d;
}

PathSample khasminskii_auxiliary(const CoefficientBundle& bundle, double eps, const PathSample& slow_path,
                                 const State& y0, const KhasminskiiConfig& kcfg, const SeedRecord& seeds,
                                 const IntegratorConfig& cfg) {
  if (!slow_path.has_slow()) throw InvalidArgument("khasminskii_auxiliary: slow path missing");
  if (y0.dim() != bundle.fast_dim()) throw InvalidArgument("khasminskii_auxiliary: y0 has the wrong dim");
  if (!(eps > 0.0 && eps <= 1.0)) throw InvalidArgument("khasminskii_auxiliary: eps must lie in (0, 1]");
  const TimeGrid& grid = slow_path.grid;
  const double h = grid.step();
  const double delta = kcfg.effective_delta(eps);
  if (delta < h * (1.0 - 1e-12)) {
    throw InvalidArgument("khasminskii_auxiliary: delta " + shortest(delta) + " is below the grid step " + shortest(h));
  }
  NoiseCursor w2(make_noise(bundle, seeds, cfg).w2);
  FastStepper fast(bundle, cfg, eps);
  PathSample out;
  out.grid = grid;
  out.seeds = seeds;
  out.fast.reserve(grid.points());
  out.fast.push_back(y0);
  State y = y0;
  for (std::size_t i = 0; i + 1 < grid.points(); ++i) {
    const double t = grid.time(i);
    const double block = std::floor((t - grid.t0() + 1e-9 * h) / delta) * delta;
    const auto j = std::min(i, static_cast<std::size_t>(std::floor(block / h + 1e-9)));
    fast.advance(t, grid.time(i + 1), slow_path.slow[j].span(), y.span(), w2);
    out.fast.push_back(y);
  }
  return out;
}

std::vector<double> translation_number_scan(const VectorSignal& f, double epsilon_ap, double tau_min, double tau_max,
                                            double tau_step, const std::vector<double>& probes) {
  if (!(tau_step > 0.0)) throw InvalidArgument("translation_number_scan: tau_step must be > 0");
  if (!(tau_max >= tau_min)) throw InvalidArgument("translation_number_scan: empty tau range");
  if (probes.empty()) throw InvalidArgument("translation_number_scan: probes must be non-empty");
  const auto count = static_cast<std::size_t>(std::floor((tau_max - tau_min) / tau_step + 1e-9)) + 1;
  std::vector<std::vector<double>> base(probes.size());
  for (std::size_t p = 0; p < probes.size(); ++p) base[p] = f(probes[p]);
  std::vector<char> ok(count, 0);
  parallel_for(count, [&](std::size_t i) {
    const double tau = tau_min + static_cast<double>(i) * tau_step;
    for (std::size_t p = 0; p < probes.size(); ++p) {
      if (std::sqrt(kernels::squared_distance(f(probes[p] + tau), base[p])) >= epsilon_ap) return;
    }
    ok[i] = 1;
  });
  std::vector<double> out;
  for (std::size_t i = 0; i < count; ++i) {
    if (ok[i]) out.push_back(tau_min + static_cast<double>(i) * tau_step);
  }
  return out;
}

std::vector<double> translation_number_scan(const ScalarSignal& f, double epsilon_ap, double tau_min, double tau_max,
                                            double tau_step, const std::vector<double>& probes) {
  return translation_number_scan(VectorSignal([&f](double t) { return std::vector<double>{f(t)}; }), epsilon_ap,
                                 tau_min, tau_max, tau_step, probes);
}

double max_translation_gap(const std::vector<double>& taus, double lo, double hi) {
  double prev = lo, gap = 0.0;
  for (double t : taus) {
    if (t < lo || t > hi) continue;
    gap = std::max(gap, t - prev);
    prev = t;
  }
  return std::max(gap, hi - prev);
}

ApDiagnosticReport measure_ap_diagnostic(const CoefficientBundle& bundle, const State& x,
                                         const std::vector<double>& taus, const std::vector<double>& anchors,
                                         const ApDiagnosticOptions& opts) {
  if (taus.empty() || anchors.empty()) throw InvalidArgument("measure_ap_diagnostic: taus and anchors must be non-empty");
  const State y0(bundle.fast_dim());
  EnsembleOptions eo;
  eo.M = opts.M;
  eo.step = opts.step;
  eo.bias_tol = opts.bias_tol;
  eo.integrator = opts.integrator;
  eo.S = opts.S > 0.0 ? opts.S : std::max(opts.step, required_pullback(bundle, x, y0, opts.bias_tol));
  const auto dict = make_dictionary(bundle.fast_dim(), opts.dictionary_size, opts.seed);

  ApDiagnosticReport r;
  r.taus = taus;
  r.anchors = anchors;
  r.distances.assign(taus.size(), std::vector<double>(anchors.size(), 0.0));
  const std::size_t na = anchors.size();
  for (std::size_t j = 0; j < na; ++j) {
    eo.seed = derive_seed(opts.seed, 1, j);
    const MeasureEnsemble base = estimate_evolution_measure(bundle, x, anchors[j], eo);
    eo.seed = derive_seed(opts.seed, 2, j);
    const MeasureEnsemble twin = estimate_evolution_measure(bundle, x, anchors[j], eo);
    r.noise_floor = std::max(r.noise_floor, dbl_distance(base.particles, twin.particles, dict));
    for (std::size_t i = 0; i < taus.size(); ++i) {
      eo.seed = derive_seed(opts.seed, 3, i * na + j);
      const MeasureEnsemble shifted = estimate_evolution_measure(bundle, x, anchors[j] + taus[i], eo);
      r.distances[i][j] = dbl_distance(shifted.particles, base.particles, dict);
      r.max_distance = std::max(r.max_distance, r.distances[i][j]);
    }
  }
  r.threshold = opts.epsilon_ap + 3.0 * r.noise_floor;
  r.passed = r.max_distance < r.threshold;
  return r;
}

}  // namespace avgsim

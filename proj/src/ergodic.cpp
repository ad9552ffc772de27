#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <istream>
#include <json.hpp>
#include <ostream>

#include "avgsim/ergodic.hpp"
#include "avgsim/errors.hpp"
#include "avgsim/kernels.hpp"
#include "avgsim/parallel.hpp"
#include "avgsim/random.hpp"

namespace avgsim {
namespace {

enum : std::uint64_t {
  kTagParticle = 0xe1,
  kTagMixA = 0xe2,
  kTagMixB = 0xe3,
  kTagSemigroup = 0xe4,
  kTagEvolutionA = 0xe5,
  kTagEvolutionB = 0xe6,
  kTagDictionary = 0xe7,
};

NoiseSource particle_noise(const CoefficientBundle& bundle, std::uint64_t seed, std::uint64_t tag, std::size_t i,
                           const IntegratorConfig& cfg) {
  return NoiseSource{derive_seed(seed, tag, i), bundle.fast_noise_modes, stream::W2, cfg.finest_level};
}

// Start of a pullback of at least S that ends exactly at t on the step lattice.
double pullback_start(double t, double S, double step, double* actual_S) {
  const double n = std::max(1.0, std::ceil(S / step - 1e-9));
  *actual_S = n * step;
  return t - n * step;
}

MeasureEnsemble build_ensemble(const CoefficientBundle& bundle, const State& x, double t, double S, double step,
                               std::size_t M, std::uint64_t seed, std::uint64_t tag, const State& y_start,
                               const IntegratorConfig& cfg) {
  MeasureEnsemble e;
  e.t_anchor = t;
  e.x_anchor = x;
  e.step = step;
  e.seed = seed;
  const double t0 = pullback_start(t, S, step, &e.pullback_horizon);
  e.particles.assign(M, State(bundle.fast_dim()));
  parallel_for(M, [&](std::size_t i) {
    e.particles[i] = advance_frozen(bundle, x, t0, t, y_start, step, particle_noise(bundle, seed, tag, i, cfg), cfg);
  });
  double sq = 0.0;
  for (const auto& p : e.particles) sq += kernels::sum_squares(p.span());
  e.second_moment = sq / static_cast<double>(M);
  e.moment_constant = e.second_moment / (1.0 + kernels::sum_squares(x.span()));
  e.bias_bound = pullback_bias_bound(bundle, x, y_start, e.pullback_horizon);
  return e;
}

double mean_of(const std::vector<State>& ps, const TestFunction& f, double* var) {
  std::vector<double> vals(ps.size());
  parallel_for(ps.size(), [&](std::size_t i) { vals[i] = f(ps[i].span()); });
  double s = 0.0;
  for (double v : vals) s += v;
  const double m = s / static_cast<double>(vals.size());
  if (var) {
    double ss = 0.0;
    for (double v : vals) ss += (v - m) * (v - m);
    *var = vals.size() > 1 ? ss / static_cast<double>(vals.size() - 1) : 0.0;
  }
  return m;
}

}  // namespace

std::vector<double> MeasureEnsemble::mean() const {
  std::vector<double> sum(dim(), 0.0), sumsq(dim(), 0.0);
  for (const auto& p : particles) kernels::accumulate_moments(p.span(), sum, sumsq);
  for (double& v : sum) v /= static_cast<double>(size());
  return sum;
}

std::vector<double> MeasureEnsemble::variance() const {
  std::vector<double> sum(dim(), 0.0), sumsq(dim(), 0.0);
  for (const auto& p : particles) kernels::accumulate_moments(p.span(), sum, sumsq);
  const double n = static_cast<double>(size());
  std::vector<double> var(dim(), 0.0);
  if (size() < 2) return var;
  for (std::size_t k = 0; k < dim(); ++k) {
    const double m = sum[k] / n;
    var[k] = std::max(0.0, (sumsq[k] - n * m * m) / (n - 1.0));
  }
  return var;
}

double pullback_bias_bound(const CoefficientBundle& bundle, const State& x, const State& y_start, double S) {
  const double scale = std::sqrt(kernels::sum_squares(y_start.span()) +
                                 bundle.profile.generic_C * (1.0 + kernels::sum_squares(x.span())));
  return std::exp(-0.5 * bundle.profile.gamma * S) * scale;
}

double required_pullback(const CoefficientBundle& bundle, const State& x, const State& y_start, double tol) {
  const double scale = pullback_bias_bound(bundle, x, y_start, 0.0);
  return std::max(0.0, 2.0 / bundle.profile.gamma * std::log(scale / tol));
}

MeasureEnsemble estimate_evolution_measure(const CoefficientBundle& bundle, const State& x, double t,
                                           const EnsembleOptions& opts) {
  if (opts.M < 1) throw InvalidArgument("estimate_evolution_measure: M must be >= 1");
  if (!(opts.S > 0.0)) throw InvalidArgument("estimate_evolution_measure: S must be > 0");
  if (x.dim() != bundle.slow_dim()) throw InvalidArgument("estimate_evolution_measure: x has the wrong dim");
  const State y0 = opts.y_start.value_or(State(bundle.fast_dim()));
  if (y0.dim() != bundle.fast_dim()) throw InvalidArgument("estimate_evolution_measure: y_start has the wrong dim");
  if (opts.bias_tol > 0.0 && pullback_bias_bound(bundle, x, y0, opts.S) > opts.bias_tol * (1.0 + 1e-9)) {
    const double need = required_pullback(bundle, x, y0, opts.bias_tol);
    throw PullbackTooShort("pullback horizon S=" + std::to_string(opts.S) + " leaves bias bound above " +
                               std::to_string(opts.bias_tol) + "; need S >= " + std::to_string(need),
                           need);
  }
  return build_ensemble(bundle, x, t, opts.S, opts.step, opts.M, opts.seed, kTagParticle, y0, opts.integrator);
}

MixingReport estimate_mixing_rate(const CoefficientBundle& bundle, const State& x, const State& y1, const State& y2,
                                  const MixingOptions& opts) {
  if (opts.replicas < 1) throw InvalidArgument("estimate_mixing_rate: replicas must be >= 1");
  if (opts.fit_points < 2) throw InvalidArgument("estimate_mixing_rate: fit_points must be >= 2");
  const TimeGrid grid(opts.s, opts.s + opts.horizon, opts.step);
  const std::size_t n = grid.intervals();
  const std::size_t P = std::min(opts.fit_points, n);
  std::vector<std::size_t> marks(P + 1);
  for (std::size_t k = 0; k <= P; ++k) marks[k] = static_cast<std::size_t>(std::llround(double(k) * double(n) / double(P)));

  MixingReport rep;
  if (bundle.linear_fast()) rep.theoretical_gamma = linear_fast_rate(bundle);
  for (std::size_t k = 0; k <= P; ++k) rep.times.push_back(grid.time(marks[k]) - opts.s);

  std::vector<std::vector<double>> per(opts.replicas, std::vector<double>(P + 1, 0.0));
  const IntegratorConfig& cfg = opts.integrator;
  parallel_for(opts.replicas, [&](std::size_t r) {
    NoiseCursor c1(particle_noise(bundle, opts.seed, kTagMixA, r, cfg));
    NoiseCursor c2(particle_noise(bundle, opts.seed, opts.synchronous ? kTagMixA : kTagMixB, r, cfg));
    FastStepper s1(bundle, cfg, 1.0), s2(bundle, cfg, 1.0);
    State a = y1, b = y2;
    std::size_t next = 0;
    for (std::size_t i = 0; i <= n; ++i) {
      if (next <= P && marks[next] == i) {
        per[r][next] = kernels::squared_distance(a.span(), b.span());
        ++next;
      }
      if (i == n) break;
      s1.advance(grid.time(i), grid.time(i + 1), x.span(), a.span(), c1);
      s2.advance(grid.time(i), grid.time(i + 1), x.span(), b.span(), c2);
    }
  });
  rep.mean_sq_distance.assign(P + 1, 0.0);
  for (const auto& row : per) {
    for (std::size_t k = 0; k <= P; ++k) rep.mean_sq_distance[k] += row[k];
  }
  for (double& v : rep.mean_sq_distance) v /= static_cast<double>(opts.replicas);
  rep.pairs_used = opts.replicas;

  // Fit window: leading run of strictly positive, finite, non-underflowed values.
  std::size_t end = 0;
  while (end <= P && std::isfinite(rep.mean_sq_distance[end]) && rep.mean_sq_distance[end] > 1e-250) ++end;
  rep.truncated_window = end <= P;
  if (end < 3) {
    rep.degenerate = true;
    rep.fitted_rate = 0.0;
    rep.fit_r2 = 0.0;
    rep.window_end = end == 0 ? 0.0 : rep.times[end - 1];
    return rep;
  }
  rep.window_end = rep.times[end - 1];
  double sx = 0, sy = 0;
  for (std::size_t k = 0; k < end; ++k) {
    sx += rep.times[k];
    sy += std::log(rep.mean_sq_distance[k]);
  }
  const double mx = sx / double(end), my = sy / double(end);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t k = 0; k < end; ++k) {
    const double dx = rep.times[k] - mx, dy = std::log(rep.mean_sq_distance[k]) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  rep.fitted_rate = sxy / sxx;
  rep.fit_r2 = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  return rep;
}

McEstimate semigroup_expectation(const CoefficientBundle& bundle, const State& x, double s, double t, const State& y,
                                 const TestFunction& phi, std::size_t M, double step, std::uint64_t seed,
                                 const IntegratorConfig& cfg) {
  if (!(t >= s)) throw InvalidArgument("semigroup_expectation: need t >= s");
  if (M < 2) throw InvalidArgument("semigroup_expectation: M must be >= 2");
  if (t == s) return {phi(y.span()), 0.0};
  std::vector<State> ends(M);
  parallel_for(M, [&](std::size_t i) {
    ends[i] = advance_frozen(bundle, x, s, t, y, step, particle_noise(bundle, seed, kTagSemigroup, i, cfg), cfg);
  });
  double var = 0.0;
  const double m = mean_of(ends, phi, &var);
  return {m, std::sqrt(var / static_cast<double>(M))};
}

EvolutionCheckReport check_evolution_property(const CoefficientBundle& bundle, const State& x, double s, double t,
                                              const std::vector<TestFunction>& test_fns,
                                              const EvolutionCheckOptions& opts) {
  if (!(t >= s)) throw InvalidArgument("check_evolution_property: need t >= s");
  if (opts.M < 2) throw InvalidArgument("check_evolution_property: M must be >= 2");
  const IntegratorConfig& cfg = opts.integrator;
  const State y0(bundle.fast_dim());
  const State& xb = opts.x_compare ? *opts.x_compare : x;

  // Ensemble A approximates mu_s^x; each particle keeps its own noise path past s.
  MeasureEnsemble a = build_ensemble(bundle, x, s, opts.S, opts.step, opts.M, opts.seed, kTagEvolutionA, y0, cfg);
  if (t > s) {
    parallel_for(opts.M, [&](std::size_t i) {
      a.particles[i] = advance_frozen(bundle, x, s, t, a.particles[i], opts.step,
                                      particle_noise(bundle, opts.seed, kTagEvolutionA, i, cfg), cfg);
    });
  }
  const bool same = t == s && !opts.x_compare;
  const MeasureEnsemble b =
      same ? a : build_ensemble(bundle, xb, t, opts.S, opts.step, opts.M, opts.seed, kTagEvolutionB, y0, cfg);

  EvolutionCheckReport rep;
  double zsum = 0.0;
  for (const auto& f : test_fns) {
    double va = 0.0, vb = 0.0;
    const double ma = mean_of(a.particles, f, &va);
    const double mb = mean_of(b.particles, f, &vb);
    const double d = ma - mb;
    const double se = std::sqrt(va / double(a.size()) + vb / double(b.size()));
    const double z = d == 0.0 ? 0.0 : (se > 0.0 ? d / se : INFINITY);
    rep.discrepancy.push_back(d);
    rep.z.push_back(z);
    rep.max_abs_z = std::max(rep.max_abs_z, std::abs(z));
    zsum += z;
  }
  rep.combined_z = test_fns.empty() ? 0.0 : zsum / std::sqrt(double(test_fns.size()));
  rep.passed = rep.max_abs_z < opts.z_threshold;
  return rep;
}

double DictionaryFunction::operator()(std::span<const double> y) const {
  const double an = std::sqrt(kernels::sum_squares(a));
  return std::tanh(kernels::dot(a, y) + b) / (an + 1.0);
}

std::vector<DictionaryFunction> make_dictionary(std::size_t dim, std::size_t size, std::uint64_t seed) {
  static constexpr double kScales[] = {0.5, 1.0, 2.0, 4.0};
  static constexpr double kOffsets[] = {-1.0, 0.0, 1.0};
  std::vector<DictionaryFunction> out;
  out.reserve(size);
  for (double sc : kScales) {
    for (double off : kOffsets) {
      for (std::size_t k = 0; k < dim; ++k) {
        if (out.size() == size) return out;
        DictionaryFunction f{std::vector<double>(dim, 0.0), off};
        f.a[k] = sc;
        out.push_back(std::move(f));
      }
    }
  }
  KeyedStream rng(derive_seed(seed, kTagDictionary, dim));
  while (out.size() < size) {
    DictionaryFunction f{std::vector<double>(dim), 0.0};
    for (double& v : f.a) v = rng.normal();
    const double target = rng.uniform(0.5, 4.0);
    const double n = std::sqrt(kernels::sum_squares(f.a));
    for (double& v : f.a) v *= target / n;
    f.b = rng.uniform(-1.0, 1.0);
    out.push_back(std::move(f));
  }
  return out;
}

double dbl_distance(const std::vector<State>& p1, const std::vector<State>& p2,
                    const std::vector<DictionaryFunction>& dictionary) {
  if (p1.empty() || p2.empty()) throw InvalidArgument("dbl_distance: empty ensemble");
  if (p1.front().dim() != p2.front().dim()) throw InvalidArgument("dbl_distance: ensembles live in different spaces");
  std::vector<double> gaps(dictionary.size());
  parallel_for(dictionary.size(), [&](std::size_t j) {
    const auto& f = dictionary[j];
    double s1 = 0.0, s2 = 0.0;
    for (const auto& p : p1) s1 += f(p.span());
    for (const auto& p : p2) s2 += f(p.span());
    gaps[j] = std::abs(s1 / double(p1.size()) - s2 / double(p2.size()));
  });
  double worst = 0.0;
  for (double g : gaps) worst = std::max(worst, g);
  return worst;
}

double dbl_distance(const MeasureEnsemble& e1, const MeasureEnsemble& e2, std::size_t dictionary_size,
                    std::uint64_t seed) {
  if (e1.dim() != e2.dim()) throw InvalidArgument("dbl_distance: ensembles live in different spaces");
  return dbl_distance(e1.particles, e2.particles, make_dictionary(e1.dim(), dictionary_size, seed));
}

void write_ensemble(std::ostream& out, const MeasureEnsemble& e) {
  nlohmann::ordered_json h;
  h["format"] = "avgsim-ensemble";
  h["version"] = 1;
  h["t_anchor"] = e.t_anchor;
  h["x_anchor"] = e.x_anchor.coeffs();
  h["S"] = e.pullback_horizon;
  h["step"] = e.step;
  h["M"] = e.size();
  h["dim"] = e.dim();
  h["seed"] = e.seed;
  h["bias_bound"] = e.bias_bound;
  h["second_moment"] = e.second_moment;
  h["moment_constant"] = e.moment_constant;
  out << h.dump() << '\n';
  for (const auto& p : e.particles) {
    for (double v : p.coeffs()) {
      auto bytes = std::bit_cast<std::array<char, 8>>(v);
      if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
      out.write(bytes.data(), 8);
    }
  }
}

MeasureEnsemble read_ensemble(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("ensemble file: missing header");
  const auto h = nlohmann::json::parse(line);
  if (h.value("format", "") != "avgsim-ensemble") throw InvalidArgument("ensemble file: bad header");
  MeasureEnsemble e;
  e.t_anchor = h.at("t_anchor").get<double>();
  e.x_anchor = State(h.at("x_anchor").get<std::vector<double>>());
  e.pullback_horizon = h.at("S").get<double>();
  e.step = h.at("step").get<double>();
  e.seed = h.at("seed").get<std::uint64_t>();
  e.bias_bound = h.at("bias_bound").get<double>();
  e.second_moment = h.at("second_moment").get<double>();
  e.moment_constant = h.at("moment_constant").get<double>();
  const auto M = h.at("M").get<std::size_t>();
  const auto dim = h.at("dim").get<std::size_t>();
  e.particles.assign(M, State(dim));
  for (auto& p : e.particles) {
    for (std::size_t k = 0; k < dim; ++k) {
      std::array<char, 8> bytes{};
      if (!in.read(bytes.data(), 8)) throw InvalidArgument("ensemble file: truncated particle block");
      if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
      p[k] = std::bit_cast<double>(bytes);
    }
  }
  return e;
}

}  // namespace avgsim

#include <cmath>
#include <string>

#include "avgsim/errors.hpp"
#include "avgsim/random.hpp"
#include "avgsim/spaces.hpp"

namespace avgsim {
namespace {

constexpr std::uint64_t kRootDepthTag = 0xffff;
constexpr double kScale = 0x1.0p40;

}  // namespace

NoiseCursor::NoiseCursor(const NoiseSource& src) : src_(src) {
  if (src.modes == 0) throw InvalidArgument("NoiseSource: modes must be >= 1");
  if (src.finest_level < 4 || src.finest_level > 28) {
    throw InvalidArgument("NoiseSource: finest_level must lie in [4, 28]");
  }
  depth_max_ = kTopLevel + src.finest_level;
  cells_per_second_ = std::ldexp(1.0, src.finest_level);
  seconds_per_cell_ = std::ldexp(1.0, -src.finest_level);
  cache_.resize(src.modes * 2);
}

std::int64_t NoiseCursor::quantized_side(std::size_t mode, int side, double position) {
  Descent& c = cache_[mode * 2 + static_cast<std::size_t>(side)];
  if (position == c.last_position) return c.last_value;
  const double p = position * cells_per_second_;  // position in finest cells
  if (!(p <= std::ldexp(1.0, depth_max_))) {
    throw InvalidArgument("NoiseSource: |t| beyond 2^24 s is outside the noise tree");
  }
  const auto idx = static_cast<std::int64_t>(std::floor(p));
  const double frac = p - static_cast<double>(idx);
  const bool on_node = frac == 0.0;

  // same value as hash_key({seed, stream, side, mode, depth, index})
  auto key = [&](std::uint64_t depth, std::uint64_t index) {
    const std::uint64_t h = splitmix64(c.prefix ^ splitmix64(depth));
    return splitmix64(h ^ splitmix64(index));
  };

  if (c.valid < 0) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (std::uint64_t part : {src_.seed, std::uint64_t{src_.stream_id}, static_cast<std::uint64_t>(side),
                               std::uint64_t{mode}}) {
      h = splitmix64(h ^ splitmix64(part));
    }
    c.prefix = h;
    c.lo[0] = 0;
    c.w_lo[0] = 0;
    const double top_sd = std::ldexp(1.0, kTopLevel / 2);
    c.w_hi[0] = std::llround(top_sd * keyed_normal(key(kRootDepthTag, 0)) * kScale);
    c.valid = 0;
  }

  auto length = [&](int d) { return std::int64_t{1} << (depth_max_ - d); };
  auto contains = [&](int d) {
    const std::int64_t lo = c.lo[d];
    const std::int64_t hi = lo + length(d);
    return idx >= lo && (idx < hi || (idx == hi && on_node));
  };

  int d = c.valid;
  while (d > 0 && !contains(d)) --d;
  c.valid = d;

  const std::int64_t value = [&]() -> std::int64_t {
    for (;;) {
      const std::int64_t lo = c.lo[d];
      const std::int64_t len = length(d);
      const std::int64_t hi = lo + len;
      if (on_node && idx == lo) return c.w_lo[d];
      if (on_node && idx == hi) return c.w_hi[d];
      const double len_seconds = static_cast<double>(len) * seconds_per_cell_;
      if (d == depth_max_) {
        const double sd = std::sqrt(frac * (1.0 - frac) * len_seconds);
        const double bridge = frac * static_cast<double>(c.w_hi[d] - c.w_lo[d]) +
                              sd * keyed_normal(key(static_cast<std::uint64_t>(d + 1), static_cast<std::uint64_t>(lo))) *
                                  kScale;
        return c.w_lo[d] + std::llround(bridge);
      }
      const std::int64_t mid = lo + len / 2;
      const double sd = 0.5 * std::sqrt(len_seconds);
      const std::int64_t w_mid =
          ((c.w_lo[d] + c.w_hi[d]) >> 1) +
          std::llround(sd * keyed_normal(key(static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(lo / len))) * kScale);
      if (on_node && idx == mid) return w_mid;
      if (idx < mid) {
        c.lo[d + 1] = lo;
        c.w_lo[d + 1] = c.w_lo[d];
        c.w_hi[d + 1] = w_mid;
      } else {
        c.lo[d + 1] = mid;
        c.w_lo[d + 1] = w_mid;
        c.w_hi[d + 1] = c.w_hi[d];
      }
      ++d;
      c.valid = d;
    }
  }();
  c.last_position = position;
  c.last_value = value;
  return value;
}

std::int64_t NoiseCursor::quantized(std::size_t mode, double t) {
  if (!std::isfinite(t)) throw InvalidArgument("NoiseSource: non-finite time");
  return t < 0.0 ? quantized_side(mode, 1, -t) : quantized_side(mode, 0, t);
}

double NoiseCursor::value(std::size_t mode, double t) {
  if (mode >= src_.modes) throw InvalidArgument("NoiseSource: mode out of range");
  return static_cast<double>(quantized(mode, t)) * kQuantum;
}

void NoiseCursor::increment(double s, double t, std::span<double> out) {
  if (!(s < t)) {
    throw InvalidArgument("wiener_increment: need s < t, got s=" + std::to_string(s) + " t=" + std::to_string(t));
  }
  if (out.size() != src_.modes) throw InvalidArgument("wiener_increment: output size != modes");
  for (std::size_t m = 0; m < src_.modes; ++m) {
    const std::int64_t ws = quantized(m, s);  // s first: it usually hits the last-query cache
    out[m] = static_cast<double>(quantized(m, t) - ws) * kQuantum;
  }
}

std::vector<double> NoiseCursor::increment(double s, double t) {
  std::vector<double> out(src_.modes);
  increment(s, t, out);
  return out;
}

std::vector<double> wiener_increment(const NoiseSource& src, double s, double t) {
  NoiseCursor cursor(src);
  return cursor.increment(s, t);
}

}  // namespace avgsim

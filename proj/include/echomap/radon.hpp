#pragma once

// Time-domain Radon beamforming map over (look direction, range).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <vector>

#include "echomap/common.hpp"
#include "echomap/io.hpp"

namespace echomap {

struct RadonMap {
  int theta_count = 0;
  int length = 0;
  std::vector<double> values;  // theta-major: values[t * length + n]
  std::vector<double> theta_grid;
  std::vector<double> range_grid;
  double pre_min = 0.0;
  double pre_max = 0.0;
  bool normalized = false;
  bool degenerate = false;  // normalization saw a constant map

  double at(int t, int n) const {
    return values[static_cast<std::size_t>(t) * static_cast<std::size_t>(length) + static_cast<std::size_t>(n)];
  }
};

struct RadonConfig {
  double fs = 16000.0;
  double c = 343.0;
  int theta_count = 360;
  int n_offset = 0;  // samples removed in front of the truncated RIRs
};

/// Range (meters) of map column n: the one-way distance whose round trip from
/// the colocated source lands on truncated sample n.
inline double radon_range(int n, const RadonConfig& cfg) {
  return (n + cfg.n_offset) * cfg.c / (2.0 * cfg.fs);
}

/// Linear-interpolated read; taps outside [0, size) contribute zero.
inline double lerp_read(std::span<const double> h, double index) {
  double fl = std::floor(index);
  double frac = index - fl;
  long long i0 = static_cast<long long>(fl);
  long long size = static_cast<long long>(h.size());
  double v = 0.0;
  if (i0 >= 0 && i0 < size) v += (1.0 - frac) * h[static_cast<std::size_t>(i0)];
  if (i0 + 1 >= 0 && i0 + 1 < size) v += frac * h[static_cast<std::size_t>(i0 + 1)];
  return v;
}

/// Delay-and-sum over the clipped RIRs toward q = r_n (cos th, sin th):
///   R(n, th) = sum_m rho_m * h_m(n - (fs/c)(r_n - rho_m)),   rho_m = |q - p_m|
/// Rows of the result are look directions th_t = 2*pi*t/Theta.
inline RadonMap radon_map(const std::vector<std::vector<double>>& clipped, std::span<const Vec2> mics,
                          const RadonConfig& cfg) {
  if (clipped.size() != mics.size()) throw Error("radon_map: RIR count does not match microphone count");
  if (cfg.theta_count < 1) throw Error("radon_map: need at least one look direction");
  if (clipped.empty()) throw Error("radon_map: no RIRs");
  const int len = static_cast<int>(clipped.front().size());
  for (const auto& h : clipped) {
    if (static_cast<int>(h.size()) != len) throw Error("radon_map: RIRs differ in length");
  }
  RadonMap map;
  map.theta_count = cfg.theta_count;
  map.length = len;
  map.values.assign(static_cast<std::size_t>(cfg.theta_count) * static_cast<std::size_t>(len), 0.0);
  for (int t = 0; t < cfg.theta_count; ++t) map.theta_grid.push_back(kTwoPi * t / cfg.theta_count);
  std::vector<double> ranges(static_cast<std::size_t>(len));
  for (int n = 0; n < len; ++n) ranges[static_cast<std::size_t>(n)] = radon_range(n, cfg);
  map.range_grid = ranges;

  const double k = cfg.fs / cfg.c;
  for (int t = 0; t < cfg.theta_count; ++t) {
    const double ct = std::cos(map.theta_grid[static_cast<std::size_t>(t)]);
    const double st = std::sin(map.theta_grid[static_cast<std::size_t>(t)]);
    double* row = map.values.data() + static_cast<std::size_t>(t) * static_cast<std::size_t>(len);
    for (std::size_t m = 0; m < mics.size(); ++m) {
      const auto& h = clipped[m];
      const Vec2 p = mics[m];
      for (int n = 0; n < len; ++n) {
        const double r = ranges[static_cast<std::size_t>(n)];
        const double dx = r * ct - p.x, dy = r * st - p.y;
        const double rho = std::sqrt(dx * dx + dy * dy);
        row[n] += rho * lerp_read(h, n - k * (r - rho));
      }
    }
  }
  map.pre_min = *std::min_element(map.values.begin(), map.values.end());
  map.pre_max = *std::max_element(map.values.begin(), map.values.end());
  return map;
}

/// Affine rescale to [-1, 1]. A constant map becomes all -1 and is flagged
/// degenerate.
inline RadonMap normalize_map(const RadonMap& in) {
  RadonMap out = in;
  if (in.values.empty()) throw Error("normalize_map: empty map");
  for (double v : in.values) {
    if (!std::isfinite(v)) throw Error("normalize_map: non-finite value");
  }
  const auto [lo_it, hi_it] = std::minmax_element(in.values.begin(), in.values.end());
  const double lo = *lo_it, hi = *hi_it;
  out.pre_min = lo;
  out.pre_max = hi;
  out.normalized = true;
  out.degenerate = !(hi > lo);
  if (out.degenerate) {
    std::fill(out.values.begin(), out.values.end(), -1.0);
    return out;
  }
  const double scale = 2.0 / (hi - lo);
  for (auto& v : out.values) v = std::clamp(scale * (v - lo) - 1.0, -1.0, 1.0);
  return out;
}

/// Writes `<path>` (Theta x L float32) and `<path>.txt` metadata.
inline void write_map(const RadonMap& map, const RadonConfig& cfg, const std::filesystem::path& path) {
  write_f32<double>(path, map.values);
  KeyValueRecord rec;
  rec.set("theta_count", std::to_string(map.theta_count));
  rec.set("length", std::to_string(map.length));
  rec.set("fs", format_double(cfg.fs));
  rec.set("c", format_double(cfg.c));
  rec.set("n_offset", std::to_string(cfg.n_offset));
  rec.set("pre_min", format_double(map.pre_min));
  rec.set("pre_max", format_double(map.pre_max));
  auto meta = path;
  meta += ".txt";
  write_text_file(meta, rec.to_string());
}

}  // namespace echomap

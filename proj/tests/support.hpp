#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <utility>
#include <vector>
#include <random>
#include <string>

#include <fftw3.h>

#include "echomap/acoustics.hpp"
#include "echomap/geometry.hpp"

namespace echomap::fixtures {

/// Dense band-limited reconstruction of a sampled echo: returns (peak position,
/// peak value) of sum_n h[n] sinc(t - n) on a 1/1000-sample grid within two
/// samples of `around`. A positive `window` limits the sum to samples that
/// close to `around`, for signals known to be zero elsewhere.
inline std::pair<double, double> sinc_peak(const std::vector<double>& h, double around, int window = -1) {
  std::size_t n0 = 0, n1 = h.size();
  if (window > 0) {
    n0 = static_cast<std::size_t>(std::max(0.0, std::floor(around) - window));
    n1 = std::min(h.size(), static_cast<std::size_t>(std::max(0.0, std::ceil(around) + window + 1)));
  }
  double best_t = around, best_v = -INFINITY;
  for (double t = around - 2.0; t <= around + 2.0; t += 1e-3) {
    // sin(pi (t - n)) = (-1)^n sin(pi t): one sine per grid point.
    const double st = std::sin(kPi * t);
    double v = 0.0;
    for (std::size_t n = n0; n < n1; ++n) {
      double x = t - static_cast<double>(n);
      v += h[n] * (std::abs(x) < 1e-12 ? 1.0 : (n % 2 ? -st : st) / (kPi * x));
    }
    if (v > best_v) {
      best_v = v;
      best_t = t;
    }
  }
  return {best_t, best_v};
}

/// 10 log10 of signal power over error power.
inline double snr_db(const std::vector<double>& clean, const std::vector<double>& noisy) {
  double ps = 0.0, pn = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    ps += clean[i] * clean[i];
    pn += (noisy[i] - clean[i]) * (noisy[i] - clean[i]);
  }
  return 10.0 * std::log10(ps / pn);
}

/// Periodogram of pink_noise summed over seeds 0..seeds-1, then the least
/// squares slope of dB against log10(frequency) on [f_lo, f_hi].
inline double pink_slope_db_per_decade(std::size_t n, double fs, std::uint64_t seeds, double f_lo, double f_hi) {
  std::vector<double> psd(n / 2 + 1, 0.0), buf(n);
  fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), buf.data(), out, FFTW_ESTIMATE);
  }
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    auto x = pink_noise(n, seed);
    std::copy(x.begin(), x.end(), buf.begin());
    fftw_execute(plan);
    for (std::size_t k = 0; k < psd.size(); ++k) psd[k] += out[k][0] * out[k][0] + out[k][1] * out[k][1];
  }
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(out);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0;
  for (std::size_t k = 1; k < psd.size(); ++k) {
    double f = static_cast<double>(k) * fs / static_cast<double>(n);
    if (f < f_lo || f > f_hi) continue;
    double lx = std::log10(f), ly = 10.0 * std::log10(psd[k]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++cnt;
  }
  return (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
}

/// Echo amplitude as the low-frequency gain of the rendered taps (their sum).
inline double tap_area(const std::vector<double>& h) { return std::accumulate(h.begin(), h.end(), 0.0); }

/// Fresh scratch directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("echomap-" + tag + "-" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline RoomSpec shoebox(double lx, double ly, double h, Vec3 device, double absorption = 0.0) {
  RoomSpec room;
  room.floor.vertices = {{{0, 0}, {lx, 0}, {lx, ly}, {0, ly}}};
  room.height_m = h;
  room.absorption.fill(absorption);
  room.device_center = device;
  return room;
}

/// Steep east wall: from (1, 0.3) the foot of the perpendicular onto the east
/// wall's line falls below the south corner, outside the wall segment.
inline RoomSpec occluded_east_room() {
  const double top = 4.0 + 3.0 * std::tan(deg2rad(20.0));
  RoomSpec room;
  room.floor.vertices = {{{0, 0}, {4, 0}, {top, 3}, {0, 3}}};
  room.height_m = 3.0;
  room.absorption.fill(0.2);
  room.device_center = {1.0, 0.3, 1.2};
  return room;
}

}  // namespace echomap::fixtures

#pragma once

// Image-source RIR synthesis for convex prism rooms, plus the measurement
// preprocessing chain: pink noise, direct-path removal, zero-clipping.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include "echomap/common.hpp"
#include "echomap/geometry.hpp"
#include "echomap/io.hpp"

namespace echomap {

struct ImageSource {
  Vec3 position;
  double gain = 1.0;
  int order = 0;
  std::vector<int> reflection_sequence;  // plane ids, first reflection first
};

struct RirSet {
  std::vector<std::vector<double>> signals;  // M x L_raw
  double fs = 16000.0;
  double c = 343.0;
  double array_radius_m = 0.05;
  std::vector<Vec2> mic_positions;  // device frame
};

struct AcousticsConfig {
  double fs = 16000.0;
  double c = 343.0;
  int max_order = 3;
  int length_raw = 0;
};

/// Half-width, in samples, of the windowed-sinc fractional delay kernel.
inline constexpr int kKernelHalfWidth = 8;

inline double reflection_coefficient(double absorption) { return std::sqrt(1.0 - absorption); }

inline Vec3 mirror(const RoomSpec& room, int plane, Vec3 p) {
  if (plane == kFloorId) return {p.x, p.y, -p.z};
  if (plane == kCeilingId) return {p.x, p.y, 2.0 * room.height_m - p.z};
  Vec2 n = room.floor.outward_normal(plane);
  double s = dot(p.xy() - room.floor.wall_start(plane), n);
  return {p.x - 2.0 * s * n.x, p.y - 2.0 * s * n.y, p.z};
}

inline Vec2 mirror2d(const FloorPolygon& floor, int wall, Vec2 p) {
  Vec2 n = floor.outward_normal(wall);
  double s = dot(p - floor.wall_start(wall), n);
  return p - (2.0 * s) * n;
}

inline bool inside_room(const RoomSpec& room, Vec3 p) {
  return room.floor.contains_strictly(p.xy()) && p.z > 0.0 && p.z < room.height_m;
}

/// Breadth-first mirror expansion across the six planes. Immediate
/// back-reflections are skipped and coincident images (1e-9 m) keep the first,
/// lowest-order representative.
inline std::vector<ImageSource> enumerate_images(const RoomSpec& room, Vec3 source, int max_order) {
  if (max_order < 0) throw Error("enumerate_images: negative order");
  if (!inside_room(room, source)) throw Error("enumerate_images: source outside the room");
  constexpr double kTol = 1e-9;
  using Key = std::tuple<long long, long long, long long>;
  std::map<Key, std::size_t> seen;
  auto key_of = [&](Vec3 p) {
    return Key{std::llround(p.x / kTol), std::llround(p.y / kTol), std::llround(p.z / kTol)};
  };
  auto find = [&](Vec3 p) -> bool {
    auto [kx, ky, kz] = key_of(p);
    for (long long dx = -1; dx <= 1; ++dx)
      for (long long dy = -1; dy <= 1; ++dy)
        for (long long dz = -1; dz <= 1; ++dz)
          if (seen.count(Key{kx + dx, ky + dy, kz + dz})) return true;
    return false;
  };

  std::vector<ImageSource> images;
  images.push_back({source, 1.0, 0, {}});
  seen.emplace(key_of(source), 0);
  std::size_t level_begin = 0;
  for (int order = 1; order <= max_order; ++order) {
    std::size_t level_end = images.size();
    for (std::size_t i = level_begin; i < level_end; ++i) {
      for (int plane = 0; plane < kSurfaces; ++plane) {
        const auto& parent = images[i];
        if (!parent.reflection_sequence.empty() && parent.reflection_sequence.back() == plane) continue;
        Vec3 p = mirror(room, plane, parent.position);
        if (find(p)) continue;
        ImageSource img;
        img.position = p;
        img.gain = parent.gain * reflection_coefficient(room.absorption[static_cast<std::size_t>(plane)]);
        img.order = order;
        img.reflection_sequence = parent.reflection_sequence;
        img.reflection_sequence.push_back(plane);
        seen.emplace(key_of(p), images.size());
        images.push_back(std::move(img));
      }
    }
    level_begin = level_end;
  }
  return images;
}

/// Specular-path validity of an image as seen from `mic`.
///
/// Walls are vertical and floor/ceiling horizontal, so the path's floor-plan
/// projection is the 2D specular path through the sidewall reflections alone,
/// and floor/ceiling bounces never leave the room once that projection does
/// not. The 2D path is unfolded backwards from the mic: the segment towards
/// the current image must leave the polygon through some wall face, the image
/// is mirrored back across that wall, and after as many steps as the image
/// has sidewall reflections the unfolded image must coincide with the source.
/// An exit through the wrong face (the reflection point falls outside the
/// intended wall segment) therefore fails the final comparison. The source is
/// recovered by mirroring the image back through its reflection sequence.
inline bool is_visible(const ImageSource& image, Vec3 mic, const RoomSpec& room) {
  const auto& floor = room.floor;
  int sidewall_bounces = 0;
  Vec2 source = image.position.xy();
  for (auto it = image.reflection_sequence.rbegin(); it != image.reflection_sequence.rend(); ++it) {
    if (*it >= kSidewalls) continue;
    ++sidewall_bounces;
    source = mirror2d(floor, *it, source);
  }
  Vec2 from = mic.xy();
  Vec2 target = image.position.xy();
  for (int step = 0; step < sidewall_bounces; ++step) {
    Vec2 dir = target - from;
    double best_t = INFINITY;
    int best_wall = -1;
    for (int w = 0; w < kSidewalls; ++w) {
      Vec2 n = floor.outward_normal(w);
      double den = dot(dir, n);
      if (den <= 0.0) continue;
      double t = dot(floor.wall_start(w) - from, n) / den;
      if (t < best_t) {
        best_t = t;
        best_wall = w;
      }
    }
    if (best_wall < 0 || !(best_t < 1.0)) return false;
    from = from + best_t * dir;
    target = mirror2d(floor, best_wall, target);
  }
  return norm(target - source) < 1e-6;
}

/// Hann-windowed sinc tap value at offset x (samples) from the echo center.
inline double fractional_delay_tap(double x) {
  if (std::abs(x) >= kKernelHalfWidth) return 0.0;
  double s = x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x);
  double w = 0.5 * (1.0 + std::cos(kPi * x / kKernelHalfWidth));
  return s * w;
}

/// Adds amplitude * kernel(n - delay) into `signal`; taps outside the buffer
/// are dropped.
inline void render_echo(std::span<double> signal, double delay, double amplitude) {
  const long long lo = static_cast<long long>(std::floor(delay)) - kKernelHalfWidth + 1;
  const long long hi = static_cast<long long>(std::ceil(delay)) + kKernelHalfWidth - 1;
  const long long n_max = static_cast<long long>(signal.size()) - 1;
  for (long long n = std::max(lo, 0LL); n <= std::min(hi, n_max); ++n) {
    signal[static_cast<std::size_t>(n)] += amplitude * fractional_delay_tap(static_cast<double>(n) - delay);
  }
}

inline std::vector<double> synthesize_rir(const RoomSpec& room, Vec3 source, Vec3 mic,
                                          const std::vector<ImageSource>& images, double fs, double c,
                                          int length_raw) {
  if (!inside_room(room, mic)) throw Error("synthesize_rir: microphone outside the room");
  double direct = norm(source - mic) * fs / c;
  if (!(std::ceil(direct) < length_raw)) throw Error("synthesize_rir: length too short for the direct path");
  std::vector<double> out(static_cast<std::size_t>(length_raw), 0.0);
  for (const auto& img : images) {
    if (img.gain == 0.0) continue;
    double dist = norm(img.position - mic);
    double delay = dist * fs / c;
    if (delay - kKernelHalfWidth >= length_raw) continue;
    if (!is_visible(img, mic, room)) continue;
    render_echo(out, delay, img.gain / dist);
  }
  return out;
}

inline std::vector<double> synthesize_rir(const RoomSpec& room, Vec3 source, Vec3 mic, int max_order,
                                          double fs, double c, int length_raw) {
  return synthesize_rir(room, source, mic, enumerate_images(room, source, max_order), fs, c, length_raw);
}

/// One RIR per array microphone; the loudspeaker sits at the array center.
inline RirSet simulate_setup(const RoomSpec& room, const AcousticsConfig& cfg) {
  if (cfg.length_raw <= 0) throw Error("simulate_setup: length_raw must be positive");
  RirSet set;
  set.fs = cfg.fs;
  set.c = cfg.c;
  set.array_radius_m = room.array_radius_m;
  set.mic_positions = mic_positions(room.n_mics, room.array_radius_m);
  const Vec3 src = room.device_center;
  auto images = enumerate_images(room, src, cfg.max_order);
  for (const auto& p : set.mic_positions) {
    Vec3 mic{src.x + p.x, src.y + p.y, src.z};
    set.signals.push_back(synthesize_rir(room, src, mic, images, cfg.fs, cfg.c, cfg.length_raw));
  }
  return set;
}

/// Number of leading samples discarded by truncate_direct.
inline int direct_cut(double radius, double fs, double c, int margin = kKernelHalfWidth) {
  return static_cast<int>(std::ceil(radius * fs / c)) + margin;
}

inline std::vector<double> truncate_direct(std::span<const double> rir, double radius, double fs, double c,
                                           int length, int margin = kKernelHalfWidth) {
  const int cut = direct_cut(radius, fs, c, margin);
  if (length < 0 || rir.size() < static_cast<std::size_t>(cut) + static_cast<std::size_t>(length)) {
    throw Error("truncate_direct: input has " + std::to_string(rir.size()) + " samples, need " +
                std::to_string(cut + length));
  }
  auto first = rir.begin() + cut;
  return {first, first + length};
}

inline std::vector<double> zero_clip(std::span<const double> rir) {
  std::vector<double> out(rir.begin(), rir.end());
  for (auto& v : out) v = std::max(v, 0.0);
  return out;
}

namespace detail {
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Unit-RMS noise with a 1/f power spectrum: white Gaussian noise shaped by
/// 1/sqrt(f) in the frequency domain, DC removed.
inline std::vector<double> pink_noise(std::size_t length, std::uint64_t seed) {
  if (length < 2) throw Error("pink_noise: length must be at least 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t bins = length / 2 + 1;
  double* buf = fftw_alloc_real(length);
  fftw_complex* spec = fftw_alloc_complex(bins);
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(length), buf, spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(length), spec, buf, FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < length; ++i) buf[i] = gauss(rng);
  fftw_execute(fwd);
  spec[0][0] = spec[0][1] = 0.0;
  for (std::size_t k = 1; k < bins; ++k) {
    double s = 1.0 / std::sqrt(static_cast<double>(k));
    spec[k][0] *= s;
    spec[k][1] *= s;
  }
  fftw_execute(inv);
  std::vector<double> out(buf, buf + length);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  fftw_free(spec);
  fftw_free(buf);
  double power = 0.0;
  for (double v : out) power += v * v;
  double scale = 1.0 / std::sqrt(power / static_cast<double>(length));
  for (auto& v : out) v *= scale;
  return out;
}

inline double mean_power(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return x.empty() ? 0.0 : p / static_cast<double>(x.size());
}

/// Adds pink noise scaled so that signal power over noise power, both taken
/// over the whole signal, equals snr_db. snr_db = +inf returns the input.
inline std::vector<double> add_noise(std::span<const double> rir, double snr_db, std::uint64_t seed) {
  if (std::isinf(snr_db) && snr_db > 0.0) return {rir.begin(), rir.end()};
  if (!std::isfinite(snr_db)) throw Error("add_noise: snr_db must be finite or +inf");
  double ps = mean_power(rir);
  if (!(ps > 0.0)) throw Error("add_noise: signal has zero energy");
  auto noise = pink_noise(rir.size(), seed);
  double pn = mean_power(noise);
  double scale = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
  std::vector<double> out(rir.begin(), rir.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * noise[i];
  return out;
}

/// Writes `<stem>.f32` (M x L_raw row-major) and `<stem>.txt` metadata.
inline void write_rirset(const RirSet& set, const RoomSpec& room, const std::filesystem::path& stem) {
  if (set.signals.empty()) throw Error("write_rirset: empty set");
  const std::size_t len = set.signals.front().size();
  std::vector<double> flat;
  flat.reserve(set.signals.size() * len);
  for (const auto& s : set.signals) {
    if (s.size() != len) throw Error("write_rirset: ragged signals");
    flat.insert(flat.end(), s.begin(), s.end());
  }
  auto bin = stem;
  bin += ".f32";
  auto txt = stem;
  txt += ".txt";
  write_f32<double>(bin, flat);
  KeyValueRecord rec;
  rec.set("fs", format_double(set.fs));
  rec.set("c", format_double(set.c));
  rec.set("n_mics", std::to_string(set.signals.size()));
  rec.set("length_raw", std::to_string(len));
  rec.set("array_radius_m", format_double(set.array_radius_m));
  write_room(room, rec);
  write_text_file(txt, rec.to_string());
}

}  // namespace echomap

#pragma once

// Convex prism rooms, device placement, and device-centric wall labels.

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "echomap/common.hpp"
#include "echomap/io.hpp"

namespace echomap {

/// Uniform double in [0, 1) from 53 random bits; avoids the
/// implementation-defined std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Four floor vertices in counter-clockwise order. Wall i runs from vertex i
/// to vertex (i + 1) % 4.
struct FloorPolygon {
  std::array<Vec2, 4> vertices{};

  Vec2 wall_start(int i) const { return vertices[static_cast<std::size_t>(i)]; }
  Vec2 wall_end(int i) const { return vertices[static_cast<std::size_t>((i + 1) % 4)]; }

  /// Unit normal of wall i pointing out of the room.
  Vec2 outward_normal(int i) const {
    Vec2 e = wall_end(i) - wall_start(i);
    double len = norm(e);
    return {e.y / len, -e.x / len};
  }

  /// Signed distance from p to wall i's supporting line, positive inside.
  double inside_distance(int i, Vec2 p) const {
    return dot(wall_start(i) - p, outward_normal(i));
  }

  bool contains_strictly(Vec2 p) const {
    for (int i = 0; i < 4; ++i) {
      if (!(inside_distance(i, p) > 0.0)) return false;
    }
    return true;
  }

  friend bool operator==(const FloorPolygon&, const FloorPolygon&) = default;
};

inline constexpr int kSidewalls = 4;
inline constexpr int kSurfaces = 6;  // four sidewalls, floor, ceiling
inline constexpr int kFloorId = 4;
inline constexpr int kCeilingId = 5;

struct RoomSpec {
  FloorPolygon floor;
  double height_m = 3.0;
  /// Energy absorption: sidewalls 0..3 (polygon wall order), floor, ceiling.
  std::array<double, kSurfaces> absorption{};
  Vec3 device_center;
  double array_radius_m = 0.05;
  int n_mics = 8;

  friend bool operator==(const RoomSpec&, const RoomSpec&) = default;
};

struct SamplingConfig {
  double side_min_m = 3.0;
  double side_max_m = 8.0;
  double tilt_max_deg = 20.0;
  double height_min_m = 2.0;
  double height_max_m = 5.0;
  double device_z_min_m = 0.5;
  double device_z_max_m = 4.5;
  double clearance_m = 0.10;
  double array_radius_m = 0.05;
  int n_mics = 8;
  double absorption_min = 0.0;
  double absorption_max = 1.0;
  int max_attempts = 1000;
};

struct WallLabel {
  int wall_index = 0;  // 1-based polygon wall this label describes
  double distance = 0.0;
  double angle = 0.0;  // outward normal direction, [0, 2*pi)
  Vec2 normal_xy;      // distance * (cos angle, sin angle)
};

/// Sort key for the canonical wall order. Angles are compared after shifting
/// the branch cut to -pi/4, so that walls of an axis-aligned room tilted by
/// up to 45 degrees never swap slots across the 0/2*pi seam.
inline constexpr double kWallOrderCut = -kPi / 4.0;

inline double wall_order_key(double angle) { return wrap_angle(angle - kWallOrderCut); }

inline Vec2 encode_normal(double distance, double angle) {
  if (!(distance > 0.0)) throw Error("encode_normal: distance must be positive");
  return {distance * std::cos(angle), distance * std::sin(angle)};
}

struct PolarNormal {
  double distance = 0.0;
  double angle = 0.0;
};

inline PolarNormal decode_normal(Vec2 xy) {
  if (xy.x == 0.0 && xy.y == 0.0) throw Error("decode_normal: zero vector has no direction");
  return {norm(xy), wrap_angle(std::atan2(xy.y, xy.x))};
}

/// True iff every consecutive edge pair turns the same way with a nonzero
/// cross product.
inline bool is_convex(const std::array<Vec2, 4>& pts) {
  int sign = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    Vec2 e0 = pts[(i + 1) % 4] - pts[i];
    Vec2 e1 = pts[(i + 2) % 4] - pts[(i + 1) % 4];
    double c = cross(e0, e1);
    if (c == 0.0 || !std::isfinite(c)) return false;
    int s = c > 0.0 ? 1 : -1;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return true;
}

/// Microphone m sits at r * (cos(2*pi*m/M), sin(2*pi*m/M)) in the device frame.
inline std::vector<Vec2> mic_positions(int n_mics, double radius) {
  if (n_mics < 1) throw Error("mic_positions: need at least one microphone");
  if (!(radius > 0.0)) throw Error("mic_positions: radius must be positive");
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(n_mics));
  for (int m = 0; m < n_mics; ++m) {
    double a = kTwoPi * m / n_mics;
    out.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return out;
}

/// Checks every RoomSpec invariant; throws with the first violation.
inline void validate_room(const RoomSpec& room) {
  const auto& v = room.floor.vertices;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) {
      if (v[i] == v[j]) throw Error("room: repeated floor vertex");
    }
  }
  if (!is_convex(v)) throw Error("room: floor polygon is not convex");
  if (cross(v[1] - v[0], v[2] - v[1]) <= 0.0) throw Error("room: floor polygon is not counter-clockwise");
  if (!(room.height_m >= 2.0 && room.height_m <= 5.0)) throw Error("room: height outside [2, 5] m");
  for (double a : room.absorption) {
    if (!(a >= 0.0 && a < 1.0)) throw Error("room: absorption outside [0, 1)");
  }
  double z = room.device_center.z;
  if (!(z >= 0.5 && z <= 4.5 && z < room.height_m)) throw Error("room: device height out of range");
  if (!(room.array_radius_m > 0.0) || room.n_mics < 1) throw Error("room: bad array geometry");
  double need = 0.10 + room.array_radius_m;
  for (int w = 0; w < kSidewalls; ++w) {
    if (room.floor.inside_distance(w, room.device_center.xy()) < need) {
      throw Error("room: device closer than clearance to wall " + std::to_string(w + 1));
    }
  }
}

namespace detail {
inline bool intersect_lines(Vec2 p0, Vec2 d0, Vec2 p1, Vec2 d1, Vec2& out) {
  double den = cross(d0, d1);
  if (std::abs(den) < 1e-12) return false;
  double t = cross(p1 - p0, d1) / den;
  out = p0 + t * d0;
  return true;
}
}  // namespace detail

/// Rectangle [0,a]x[0,b] whose walls are each rotated about their midpoint by
/// the given angles (radians); vertices are the consecutive line
/// intersections. Returns false if the lines are parallel.
inline bool tilted_rectangle(double a, double b, const std::array<double, 4>& tilts,
                             std::array<Vec2, 4>& out) {
  const std::array<Vec2, 4> rect{{{0, 0}, {a, 0}, {a, b}, {0, b}}};
  std::array<Vec2, 4> mid{}, dir{};
  for (std::size_t i = 0; i < 4; ++i) {
    Vec2 s = rect[i], e = rect[(i + 1) % 4];
    mid[i] = 0.5 * (s + e);
    Vec2 d = e - s;
    double c = std::cos(tilts[i]), sn = std::sin(tilts[i]);
    dir[i] = {c * d.x - sn * d.y, sn * d.x + c * d.y};
  }
  for (std::size_t i = 0; i < 4; ++i) {
    std::size_t prev = (i + 3) % 4;
    if (!detail::intersect_lines(mid[prev], dir[prev], mid[i], dir[i], out[i])) return false;
  }
  return true;
}

/// Rejection-samples a room satisfying every RoomSpec invariant. A failed
/// attempt (non-convex floor, or no device spot with clearance) re-draws the
/// whole room.
inline RoomSpec sample_room(std::uint64_t seed, const SamplingConfig& cfg = {}) {
  if (!(cfg.side_min_m > 0.0 && cfg.side_max_m >= cfg.side_min_m) ||
      !(cfg.height_max_m >= cfg.height_min_m) || !(cfg.tilt_max_deg >= 0.0) ||
      !(cfg.device_z_max_m >= cfg.device_z_min_m) || cfg.max_attempts < 1 ||
      !(cfg.absorption_max > cfg.absorption_min)) {
    throw Error("sample_room: degenerate sampling configuration");
  }
  std::mt19937_64 rng(seed);
  const double tilt = deg2rad(cfg.tilt_max_deg);
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    RoomSpec room;
    double a = uniform(rng, cfg.side_min_m, cfg.side_max_m);
    double b = uniform(rng, cfg.side_min_m, cfg.side_max_m);
    std::array<double, 4> tilts{};
    for (auto& t : tilts) t = uniform(rng, -tilt, tilt);
    room.height_m = uniform(rng, cfg.height_min_m, cfg.height_max_m);
    for (auto& al : room.absorption) al = uniform(rng, cfg.absorption_min, cfg.absorption_max);
    room.array_radius_m = cfg.array_radius_m;
    room.n_mics = cfg.n_mics;

    std::array<Vec2, 4> verts{};
    if (!tilted_rectangle(a, b, tilts, verts) || !is_convex(verts)) continue;
    if (cross(verts[1] - verts[0], verts[2] - verts[1]) <= 0.0) continue;
    room.floor.vertices = verts;

    double zmax = std::min(cfg.device_z_max_m, room.height_m);
    double z = uniform(rng, cfg.device_z_min_m, zmax);
    if (!(z < room.height_m)) continue;

    double xmin = verts[0].x, xmax = verts[0].x, ymin = verts[0].y, ymax = verts[0].y;
    for (const auto& p : verts) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
    const double need = cfg.clearance_m + cfg.array_radius_m;
    bool placed = false;
    for (int k = 0; k < cfg.max_attempts && !placed; ++k) {
      Vec2 p{uniform(rng, xmin, xmax), uniform(rng, ymin, ymax)};
      bool ok = true;
      for (int w = 0; w < kSidewalls && ok; ++w) ok = room.floor.inside_distance(w, p) >= need;
      if (ok) {
        room.device_center = {p.x, p.y, z};
        placed = true;
      }
    }
    if (placed) return room;
  }
  throw Error("sample_room: no valid room after " + std::to_string(cfg.max_attempts) +
              " attempts (infeasible configuration?)");
}

/// Device-centric labels for the four sidewalls, in canonical slot order
/// (ascending wall_order_key of the normal angle).
inline std::array<WallLabel, 4> wall_labels(const RoomSpec& room) {
  const Vec2 dev = room.device_center.xy();
  if (!room.floor.contains_strictly(dev)) throw Error("wall_labels: device outside the floor polygon");
  std::array<WallLabel, 4> out{};
  for (int w = 0; w < kSidewalls; ++w) {
    Vec2 n = room.floor.outward_normal(w);
    auto& lab = out[static_cast<std::size_t>(w)];
    lab.wall_index = w + 1;
    lab.distance = room.floor.inside_distance(w, dev);
    lab.angle = wrap_angle(std::atan2(n.y, n.x));
    lab.normal_xy = encode_normal(lab.distance, lab.angle);
  }
  std::sort(out.begin(), out.end(), [](const WallLabel& a, const WallLabel& b) {
    return wall_order_key(a.angle) < wall_order_key(b.angle);
  });
  for (std::size_t i = 0; i + 1 < out.size(); ++i) {
    if (wall_order_key(out[i + 1].angle) - wall_order_key(out[i].angle) < 1e-9) {
      throw Error("wall_labels: two walls share a normal direction");
    }
  }
  return out;
}

/// Polygon wall (0-based) facing the given device-frame direction most
/// closely; used to address e.g. "the east wall" independent of slot order.
inline int wall_facing(const RoomSpec& room, double angle) {
  int best = 0;
  double best_dot = -2.0;
  Vec2 dir{std::cos(angle), std::sin(angle)};
  for (int w = 0; w < kSidewalls; ++w) {
    double d = dot(room.floor.outward_normal(w), dir);
    if (d > best_dot) {
      best_dot = d;
      best = w;
    }
  }
  return best;
}

// Record schema (one key per line):
//   room.floor          = x0 y0 x1 y1 x2 y2 x3 y3     (meters, CCW)
//   room.height_m       = h
//   room.absorption     = a1 a2 a3 a4 a_floor a_ceiling
//   room.device_center  = x y z
//   room.array_radius_m = r
//   room.n_mics         = M
inline void write_room(const RoomSpec& room, KeyValueRecord& rec) {
  std::vector<double> floor;
  for (const auto& v : room.floor.vertices) {
    floor.push_back(v.x);
    floor.push_back(v.y);
  }
  rec.set("room.floor", join_doubles(floor));
  rec.set("room.height_m", format_double(room.height_m));
  rec.set("room.absorption", join_doubles(room.absorption));
  const std::array<double, 3> dc{room.device_center.x, room.device_center.y, room.device_center.z};
  rec.set("room.device_center", join_doubles(dc));
  rec.set("room.array_radius_m", format_double(room.array_radius_m));
  rec.set("room.n_mics", std::to_string(room.n_mics));
}

inline RoomSpec read_room(const KeyValueRecord& rec) {
  RoomSpec room;
  auto floor = split_doubles(rec.get("room.floor"), "room.floor");
  if (floor.size() != 8) throw Error("room.floor: expected 8 numbers");
  for (std::size_t i = 0; i < 4; ++i) room.floor.vertices[i] = {floor[2 * i], floor[2 * i + 1]};
  room.height_m = rec.get_double("room.height_m");
  auto abs = split_doubles(rec.get("room.absorption"), "room.absorption");
  if (abs.size() != kSurfaces) throw Error("room.absorption: expected 6 numbers");
  std::copy(abs.begin(), abs.end(), room.absorption.begin());
  auto dc = split_doubles(rec.get("room.device_center"), "room.device_center");
  if (dc.size() != 3) throw Error("room.device_center: expected 3 numbers");
  room.device_center = {dc[0], dc[1], dc[2]};
  room.array_radius_m = rec.get_double("room.array_radius_m");
  room.n_mics = static_cast<int>(rec.get_int("room.n_mics"));
  return room;
}

}  // namespace echomap

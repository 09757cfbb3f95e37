#pragma once

// Wall metrics, thresholded detection, the JDL / LO(D) / LO(U) evaluation
// protocol, the absorption sweep, and SVG floor maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "echomap/dataset.hpp"
#include "echomap/geometry.hpp"
#include "echomap/io.hpp"
#include "echomap/nnet.hpp"

namespace echomap {

/// |d - |est||, meters.
inline double distance_error(const WallLabel& label, Vec2 estimate) {
  if (estimate.x == 0.0 && estimate.y == 0.0) throw Error("distance_error: zero estimate");
  return std::abs(label.distance - norm(estimate));
}

/// Angle between the true and the estimated unit normals, radians. This is
/// arccos of their inner product, evaluated as atan2(|cross|, dot): arccos
/// loses half the digits near 0 and pi (1e-8 rad for collinear vectors) and
/// needs clamping, atan2 needs neither.
inline double orientation_error(const WallLabel& label, Vec2 estimate) {
  if (estimate.x == 0.0 && estimate.y == 0.0) throw Error("orientation_error: zero estimate");
  const Vec2 v{std::cos(label.angle), std::sin(label.angle)};
  return std::atan2(std::abs(cross(v, estimate)), dot(v, estimate));
}

/// Strict threshold: wall w is detected iff score_w > gamma.
template <typename T>
std::array<bool, 4> detect(const std::array<T, 4>& scores, double gamma) {
  std::array<bool, 4> out{};
  for (std::size_t w = 0; w < 4; ++w) out[w] = static_cast<double>(scores[w]) > gamma;
  return out;
}

struct ErrorStats {
  std::size_t count = 0;
  double distance_mean_cm = 0.0, distance_std_cm = 0.0;
  double orientation_mean_deg = 0.0, orientation_std_deg = 0.0;
};

/// Accumulates per-wall errors; mean and population standard deviation.
class ErrorAccumulator {
 public:
  void add(double distance_m, double orientation_rad) {
    dist_.push_back(100.0 * distance_m);
    orient_.push_back(rad2deg(orientation_rad));
  }
  /// Empty partitions are absent, not zero.
  std::optional<ErrorStats> stats() const {
    if (dist_.empty()) return std::nullopt;
    ErrorStats s;
    s.count = dist_.size();
    moments(dist_, s.distance_mean_cm, s.distance_std_cm);
    moments(orient_, s.orientation_mean_deg, s.orientation_std_deg);
    return s;
  }

 private:
  static void moments(const std::vector<double>& v, double& mean, double& sd) {
    double sum = 0.0;
    for (double x : v) sum += x;
    mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / static_cast<double>(v.size()));
  }
  std::vector<double> dist_, orient_;
};

/// Per-room network predictions: 4 scores and 4 (x, y) normals.
struct Prediction {
  std::array<double, 4> detection{};
  std::array<Vec2, 4> normals{};

  template <typename T>
  static Prediction from(const nn::ModelOutput<T>& o) {
    Prediction p;
    for (std::size_t w = 0; w < 4; ++w) {
      p.detection[w] = static_cast<double>(o.detection[w]);
      p.normals[w] = {static_cast<double>(o.normals[2 * w]), static_cast<double>(o.normals[2 * w + 1])};
    }
    return p;
  }
};

struct EvalReport {
  std::size_t rooms = 0;
  std::size_t walls = 0;
  std::size_t detected = 0;
  double detection_rate = 0.0;  // percent
  std::optional<ErrorStats> jdl;       // JDL model, walls it detected
  std::optional<ErrorStats> lo_all;    // LO model, every wall
  std::optional<ErrorStats> lo_detected;
  std::optional<ErrorStats> lo_undetected;

  std::size_t count(const std::optional<ErrorStats>& s) const { return s ? s->count : 0; }
};

/// Partitions every wall by the JDL model's detection and scores the JDL
/// estimates on detected walls and the LO estimates on both partitions.
inline EvalReport evaluate_predictions(const std::vector<std::array<WallLabel, 4>>& labels,
                                       const std::vector<Prediction>& jdl, const std::vector<Prediction>& lo,
                                       double gamma) {
  if (labels.size() != jdl.size() || labels.size() != lo.size()) throw Error("evaluate: prediction count mismatch");
  EvalReport r;
  ErrorAccumulator acc_jdl, acc_all, acc_d, acc_u;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto det = detect(jdl[i].detection, gamma);
    for (std::size_t w = 0; w < 4; ++w) {
      const auto& lab = labels[i][w];
      const Vec2 lo_est = lo[i].normals[w];
      const double lo_d = distance_error(lab, lo_est), lo_o = orientation_error(lab, lo_est);
      acc_all.add(lo_d, lo_o);
      if (det[w]) {
        ++r.detected;
        acc_jdl.add(distance_error(lab, jdl[i].normals[w]), orientation_error(lab, jdl[i].normals[w]));
        acc_d.add(lo_d, lo_o);
      } else {
        acc_u.add(lo_d, lo_o);
      }
    }
  }
  r.rooms = labels.size();
  r.walls = 4 * labels.size();
  r.detection_rate = r.walls ? 100.0 * static_cast<double>(r.detected) / static_cast<double>(r.walls) : 0.0;
  r.jdl = acc_jdl.stats();
  r.lo_all = acc_all.stats();
  r.lo_detected = acc_d.stats();
  r.lo_undetected = acc_u.stats();
  return r;
}

inline std::vector<Prediction> predict(const nn::Model<float>& model, std::span<const float> params,
                                       const Dataset& ds, int threads = thread_count()) {
  std::vector<Prediction> out(ds.samples.size());
  parallel_for(ds.samples.size(), threads, [&](std::size_t i) {
    out[i] = Prediction::from(model.forward<float>(params, std::span<const float>(ds.samples[i].map)));
  });
  return out;
}

struct TrainedModel {
  nn::ModelConfig config;
  std::vector<float> params;
};

inline EvalReport evaluate(const TrainedModel& jdl, const TrainedModel& lo, const Dataset& test, double gamma) {
  if (!(jdl.config == lo.config)) throw Error("evaluate: JDL and LO models use different configurations");
  if (test.config.theta != jdl.config.theta || test.config.length != jdl.config.length) {
    throw Error("evaluate: test maps do not match the model input shape");
  }
  nn::Model<float> jm(jdl.config), lm(lo.config);
  std::vector<std::array<WallLabel, 4>> labels;
  for (const auto& s : test.samples) labels.push_back(s.labels);
  return evaluate_predictions(labels, predict(jm, jdl.params, test), predict(lm, lo.params, test), gamma);
}

namespace detail {
inline std::string cell(const std::optional<ErrorStats>& s, bool distance) {
  if (!s) return "-";
  char buf[64];
  if (distance) {
    std::snprintf(buf, sizeof buf, "%.2f +- %.2f", s->distance_mean_cm, s->distance_std_cm);
  } else {
    std::snprintf(buf, sizeof buf, "%.2f +- %.2f", s->orientation_mean_deg, s->orientation_std_deg);
  }
  return buf;
}
}  // namespace detail

/// Text table: detection rate, then distance (cm) and orientation (deg)
/// errors for JDL, LO(D), LO(U).
inline std::string report_table(const EvalReport& r, const std::string& method) {
  char head[512];
  std::snprintf(head, sizeof head, "%-18s %-10s | %-18s %-18s %-18s | %-16s %-16s %-16s\n", "Method", "Det[%]",
                "Dist JDL [cm]", "Dist LO(D) [cm]", "Dist LO(U) [cm]", "Orient JDL [deg]", "Orient LO(D)",
                "Orient LO(U)");
  std::string out = head;
  char line[512];
  std::snprintf(line, sizeof line, "%-18s %-10s | %-18s %-18s %-18s | %-16s %-16s %-16s\n", "LO (baseline)", "-", "-",
                detail::cell(r.lo_all, true).c_str(), "-", "-", detail::cell(r.lo_all, false).c_str(), "-");
  out += line;
  char rate[32];
  std::snprintf(rate, sizeof rate, "%.2f", r.detection_rate);
  std::snprintf(line, sizeof line, "%-18s %-10s | %-18s %-18s %-18s | %-16s %-16s %-16s\n", method.c_str(), rate,
                detail::cell(r.jdl, true).c_str(), detail::cell(r.lo_detected, true).c_str(),
                detail::cell(r.lo_undetected, true).c_str(), detail::cell(r.jdl, false).c_str(),
                detail::cell(r.lo_detected, false).c_str(), detail::cell(r.lo_undetected, false).c_str());
  out += line;
  out += "rooms=" + std::to_string(r.rooms) + " walls=" + std::to_string(r.walls) +
         " detected=" + std::to_string(r.detected) + "\n";
  return out;
}

/// Machine-readable form: one row per partition; absent partitions have an
/// empty count of 0 and empty statistic fields.
inline std::string report_csv(const EvalReport& r, const std::string& method) {
  std::string out = "method,partition,walls,detection_rate,dist_mean_cm,dist_std_cm,orient_mean_deg,orient_std_deg\n";
  auto row = [&](const char* part, const std::optional<ErrorStats>& s) {
    out += method + "," + part + "," + std::to_string(s ? s->count : 0) + "," + format_double(r.detection_rate) + ",";
    if (s) {
      out += format_double(s->distance_mean_cm) + "," + format_double(s->distance_std_cm) + "," +
             format_double(s->orientation_mean_deg) + "," + format_double(s->orientation_std_deg);
    } else {
      out += ",,,";
    }
    out += "\n";
  };
  row("JDL", r.jdl);
  row("LO", r.lo_all);
  row("LO(D)", r.lo_detected);
  row("LO(U)", r.lo_undetected);
  return out;
}

struct SweepConfig {
  double length_x = 4.0, length_y = 3.0, height = 3.0;
  Vec3 device{2.25, 1.5, 0.5};
  double base_absorption = 0.1;  // every surface except the swept wall
  double wall_angle = 0.0;       // outward normal of the swept wall (0 = east)
};

inline RoomSpec sweep_room(const SweepConfig& sc, const DatasetConfig& dc, double alpha) {
  RoomSpec room;
  room.floor.vertices = {{{0, 0}, {sc.length_x, 0}, {sc.length_x, sc.length_y}, {0, sc.length_y}}};
  room.height_m = sc.height;
  room.absorption.fill(sc.base_absorption);
  room.absorption[static_cast<std::size_t>(wall_facing(room, sc.wall_angle))] = alpha;
  room.device_center = sc.device;
  room.array_radius_m = dc.sampling.array_radius_m;
  room.n_mics = dc.sampling.n_mics;
  validate_room(room);
  return room;
}

struct SweepPoint {
  double alpha = 0.0;
  double score = 0.0;
};

/// Noiseless maps of the fixed shoebox while one wall's absorption varies;
/// returns that wall's detection score per alpha.
inline std::vector<SweepPoint> absorption_sweep(const TrainedModel& model, const DatasetConfig& dc,
                                                const SweepConfig& sc, const std::vector<double>& alphas) {
  nn::Model<float> net(model.config);
  std::vector<SweepPoint> out;
  for (double a : alphas) {
    if (!(a >= 0.0 && a < 1.0)) throw Error("absorption_sweep: alpha outside [0, 1)");
    RoomSpec room = sweep_room(sc, dc, a);
    const int wall = wall_facing(room, sc.wall_angle);
    auto labels = wall_labels(room);
    std::size_t slot = 0;
    for (std::size_t w = 0; w < 4; ++w) {
      if (labels[w].wall_index == wall + 1) slot = w;
    }
    RadonMap map = simulate_map(room, dc, INFINITY, 0);
    std::vector<float> input(map.values.begin(), map.values.end());
    auto o = net.forward<float>(model.params, std::span<const float>(input));
    out.push_back({a, static_cast<double>(o.detection[slot])});
  }
  return out;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& pts) {
  std::string out = "alpha,score\n";
  for (const auto& p : pts) out += format_double(p.alpha) + "," + format_double(p.score) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Floor maps

struct Segment {
  Vec2 a, b;
};

/// Clips the infinite line {p : <p, n> = d} (n unit) to an axis-aligned box.
inline std::optional<Segment> clip_line(Vec2 n, double d, Vec2 lo, Vec2 hi) {
  const Vec2 p0 = d * n;
  const Vec2 dir{-n.y, n.x};
  double t0 = -INFINITY, t1 = INFINITY;
  auto slab = [&](double p, double dv, double mn, double mx) {
    if (std::abs(dv) < 1e-15) return p >= mn && p <= mx;
    double a = (mn - p) / dv, b = (mx - p) / dv;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    return t0 <= t1;
  };
  if (!slab(p0.x, dir.x, lo.x, hi.x) || !slab(p0.y, dir.y, lo.y, hi.y)) return std::nullopt;
  return Segment{p0 + t0 * dir, p0 + t1 * dir};
}

struct FloorMapModel {
  std::string name;
  Prediction prediction;
  bool detection_gated = true;  // JDL models draw detected walls only
  std::string color = "#d62728";
};

struct FloorMapLine {
  std::string model;
  int slot = 0;
  Segment world;
};

/// Estimated wall lines in world coordinates, clipped to the room's bounding
/// box grown by `margin` meters.
inline std::vector<FloorMapLine> floor_map_lines(const RoomSpec& room, const std::vector<FloorMapModel>& models,
                                                 double gamma, double margin = 1.0) {
  const Vec2 dev = room.device_center.xy();
  Vec2 lo = room.floor.vertices[0], hi = lo;
  for (const auto& v : room.floor.vertices) {
    lo = {std::min(lo.x, v.x), std::min(lo.y, v.y)};
    hi = {std::max(hi.x, v.x), std::max(hi.y, v.y)};
  }
  lo = lo - Vec2{margin, margin};
  hi = hi + Vec2{margin, margin};
  std::vector<FloorMapLine> out;
  for (const auto& m : models) {
    auto det = detect(m.prediction.detection, gamma);
    for (std::size_t w = 0; w < 4; ++w) {
      if (m.detection_gated && !det[w]) continue;
      const Vec2 est = m.prediction.normals[w];
      if (est.x == 0.0 && est.y == 0.0) continue;
      const double d = norm(est);
      const Vec2 n{est.x / d, est.y / d};
      auto seg = clip_line(n, d, lo - dev, hi - dev);
      if (!seg) continue;
      out.push_back({m.name, static_cast<int>(w), {seg->a + dev, seg->b + dev}});
    }
  }
  return out;
}

/// SVG with the true floor polygon, the device, and one
/// `<line class="wall-estimate">` per drawn estimate.
inline std::string render_floor_map_svg(const RoomSpec& room, const std::vector<FloorMapModel>& models, double gamma) {
  constexpr double kScale = 60.0, kMargin = 1.0;
  auto lines = floor_map_lines(room, models, gamma, kMargin);
  Vec2 lo = room.floor.vertices[0], hi = lo;
  for (const auto& v : room.floor.vertices) {
    lo = {std::min(lo.x, v.x), std::min(lo.y, v.y)};
    hi = {std::max(hi.x, v.x), std::max(hi.y, v.y)};
  }
  lo = lo - Vec2{kMargin, kMargin};
  hi = hi + Vec2{kMargin, kMargin};
  const double width = (hi.x - lo.x) * kScale, height = (hi.y - lo.y) * kScale;
  auto px = [&](Vec2 p) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f,%.3f", (p.x - lo.x) * kScale, (hi.y - p.y) * kScale);
    return std::string(buf);
  };
  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.3f %.3f\">\n",
                width + 160, height, width + 160, height);
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<polygon class=\"room\" fill=\"none\" stroke=\"black\" stroke-width=\"3\" points=\"";
  for (const auto& v : room.floor.vertices) svg += px(v) + " ";
  svg += "\"/>\n";
  for (const auto& l : lines) {
    std::string color = "#d62728";
    for (const auto& m : models) {
      if (m.name == l.model) color = m.color;
    }
    const auto a = px(l.world.a), b = px(l.world.b);
    svg += "<line class=\"wall-estimate\" data-model=\"" + l.model + "\" data-slot=\"" + std::to_string(l.slot) +
           "\" x1=\"" + a.substr(0, a.find(',')) + "\" y1=\"" + a.substr(a.find(',') + 1) + "\" x2=\"" +
           b.substr(0, b.find(',')) + "\" y2=\"" + b.substr(b.find(',') + 1) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\" stroke-dasharray=\"6,3\"/>\n";
  }
  const auto d = px(room.device_center.xy());
  svg += "<circle class=\"device\" cx=\"" + d.substr(0, d.find(',')) + "\" cy=\"" + d.substr(d.find(',') + 1) +
         "\" r=\"5\" fill=\"black\"/>\n";
  double ly = 20;
  for (const auto& m : models) {
    std::snprintf(buf, sizeof buf,
                  "<text class=\"legend\" x=\"%.1f\" y=\"%.1f\" font-size=\"14\" fill=\"%s\">%s</text>\n", width + 10,
                  ly, m.color.c_str(), m.name.c_str());
    svg += buf;
    ly += 20;
  }
  svg += "</svg>\n";
  return svg;
}

inline void render_floor_map(const RoomSpec& room, const std::vector<FloorMapModel>& models, double gamma,
                             const std::filesystem::path& out_path) {
  validate_room(room);
  write_text_file(out_path, render_floor_map_svg(room, models, gamma));
}

}  // namespace echomap

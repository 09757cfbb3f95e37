#pragma once

// End-to-end sample generation (room -> RIRs -> noise -> truncation ->
// clipping -> Radon map -> labels) and the on-disk split format:
//
//   <out>/maps/<seed>.f32   Theta x L float32 map, normalized to [-1, 1]
//   <out>/meta/<seed>.txt   seed, snr_db, room.* record, label.<slot> lines
//   <out>/manifest.txt      format_version, split, count, ds.* config,
//                           one `sample=<seed> <map> <meta>` line per sample
//
// The manifest is written last, through a rename, and marks completion.

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "echomap/acoustics.hpp"
#include "echomap/geometry.hpp"
#include "echomap/io.hpp"
#include "echomap/radon.hpp"

namespace echomap {

inline constexpr int kFormatVersion = 1;

struct DatasetConfig {
  SamplingConfig sampling;
  double fs = 16000.0;
  double c = 343.0;
  int theta = 90;
  int length = 250;
  int max_order = 3;
  double snr_min_db = 20.0;
  double snr_max_db = 50.0;
  bool noise = true;
  int margin = kKernelHalfWidth;

  int cut() const { return direct_cut(sampling.array_radius_m, fs, c, margin); }
  int length_raw() const { return cut() + length; }
  RadonConfig radon() const { return {fs, c, theta, cut()}; }
  AcousticsConfig acoustics() const { return {fs, c, max_order, length_raw()}; }

  /// Table-scale settings: 360 x 1000 maps, image order 7.
  static DatasetConfig full() {
    DatasetConfig d;
    d.theta = 360;
    d.length = 1000;
    d.max_order = 7;
    return d;
  }
};

struct Sample {
  std::vector<float> map;  // theta-major, normalized
  std::array<WallLabel, 4> labels{};
  RoomSpec room;
  std::uint64_t seed = 0;
  double snr_db = 0.0;

  /// Wall normals in slot order, 8 numbers.
  template <typename T>
  std::array<T, 8> targets() const {
    std::array<T, 8> t{};
    for (std::size_t w = 0; w < 4; ++w) {
      t[2 * w] = static_cast<T>(labels[w].normal_xy.x);
      t[2 * w + 1] = static_cast<T>(labels[w].normal_xy.y);
    }
    return t;
  }
};

struct Dataset {
  DatasetConfig config;
  std::string split;
  std::vector<Sample> samples;
};

/// splitmix64 finalizer; derives independent sub-stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline int thread_count() {
  if (const char* env = std::getenv("ECHOMAP_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception
/// is rethrown after all workers stop.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Preprocessing chain from raw RIRs to a normalized map.
inline RadonMap rirs_to_map(const RirSet& rirs, const DatasetConfig& cfg) {
  std::vector<std::vector<double>> clipped;
  for (const auto& h : rirs.signals) {
    clipped.push_back(zero_clip(truncate_direct(h, rirs.array_radius_m, cfg.fs, cfg.c, cfg.length, cfg.margin)));
  }
  return normalize_map(radon_map(clipped, rirs.mic_positions, cfg.radon()));
}

/// Simulates one room: noise (if snr_db is finite) is added to the raw RIRs
/// before truncation and clipping.
inline RadonMap simulate_map(const RoomSpec& room, const DatasetConfig& cfg, double snr_db,
                             std::uint64_t noise_seed) {
  RirSet rirs = simulate_setup(room, cfg.acoustics());
  for (std::size_t m = 0; m < rirs.signals.size(); ++m) {
    rirs.signals[m] = add_noise(rirs.signals[m], snr_db, mix_seed(noise_seed + m));
  }
  return rirs_to_map(rirs, cfg);
}

inline Sample make_sample(std::uint64_t seed, const DatasetConfig& cfg) {
  Sample s;
  s.seed = seed;
  s.room = sample_room(seed, cfg.sampling);
  s.labels = wall_labels(s.room);
  std::mt19937_64 rng(mix_seed(seed ^ 0x6e6f697365ull));
  s.snr_db = cfg.noise ? uniform(rng, cfg.snr_min_db, cfg.snr_max_db) : INFINITY;
  RadonMap map = simulate_map(s.room, cfg, s.snr_db, rng());
  s.map.assign(map.values.begin(), map.values.end());
  return s;
}

inline void write_dataset_config(const DatasetConfig& d, KeyValueRecord& rec) {
  const auto& s = d.sampling;
  rec.set("ds.fs", format_double(d.fs));
  rec.set("ds.c", format_double(d.c));
  rec.set("ds.theta", std::to_string(d.theta));
  rec.set("ds.length", std::to_string(d.length));
  rec.set("ds.max_order", std::to_string(d.max_order));
  rec.set("ds.snr_min_db", format_double(d.snr_min_db));
  rec.set("ds.snr_max_db", format_double(d.snr_max_db));
  rec.set("ds.noise", d.noise ? "1" : "0");
  rec.set("ds.margin", std::to_string(d.margin));
  rec.set("ds.side_min_m", format_double(s.side_min_m));
  rec.set("ds.side_max_m", format_double(s.side_max_m));
  rec.set("ds.tilt_max_deg", format_double(s.tilt_max_deg));
  rec.set("ds.height_min_m", format_double(s.height_min_m));
  rec.set("ds.height_max_m", format_double(s.height_max_m));
  rec.set("ds.device_z_min_m", format_double(s.device_z_min_m));
  rec.set("ds.device_z_max_m", format_double(s.device_z_max_m));
  rec.set("ds.clearance_m", format_double(s.clearance_m));
  rec.set("ds.array_radius_m", format_double(s.array_radius_m));
  rec.set("ds.n_mics", std::to_string(s.n_mics));
  rec.set("ds.max_attempts", std::to_string(s.max_attempts));
}

inline DatasetConfig read_dataset_config(const KeyValueRecord& rec) {
  DatasetConfig d;
  auto& s = d.sampling;
  d.fs = rec.get_double("ds.fs");
  d.c = rec.get_double("ds.c");
  d.theta = static_cast<int>(rec.get_int("ds.theta"));
  d.length = static_cast<int>(rec.get_int("ds.length"));
  d.max_order = static_cast<int>(rec.get_int("ds.max_order"));
  d.snr_min_db = rec.get_double("ds.snr_min_db");
  d.snr_max_db = rec.get_double("ds.snr_max_db");
  d.noise = rec.get_int("ds.noise") != 0;
  d.margin = static_cast<int>(rec.get_int("ds.margin"));
  s.side_min_m = rec.get_double("ds.side_min_m");
  s.side_max_m = rec.get_double("ds.side_max_m");
  s.tilt_max_deg = rec.get_double("ds.tilt_max_deg");
  s.height_min_m = rec.get_double("ds.height_min_m");
  s.height_max_m = rec.get_double("ds.height_max_m");
  s.device_z_min_m = rec.get_double("ds.device_z_min_m");
  s.device_z_max_m = rec.get_double("ds.device_z_max_m");
  s.clearance_m = rec.get_double("ds.clearance_m");
  s.array_radius_m = rec.get_double("ds.array_radius_m");
  s.n_mics = static_cast<int>(rec.get_int("ds.n_mics"));
  s.max_attempts = static_cast<int>(rec.get_int("ds.max_attempts"));
  return d;
}

inline KeyValueRecord sample_meta(const Sample& s) {
  KeyValueRecord rec;
  rec.set("seed", std::to_string(s.seed));
  rec.set("snr_db", format_double(s.snr_db));
  write_room(s.room, rec);
  for (std::size_t w = 0; w < 4; ++w) {
    const auto& l = s.labels[w];
    std::array<double, 4> v{l.distance, l.angle, l.normal_xy.x, l.normal_xy.y};
    rec.set("label." + std::to_string(w), std::to_string(l.wall_index) + " " + join_doubles(v));
  }
  return rec;
}

struct Manifest {
  DatasetConfig config;
  std::string split;
  struct Entry {
    std::uint64_t seed;
    std::string map_file, meta_file;
  };
  std::vector<Entry> entries;
};

/// Each (seed, split) pair owns its own block of 2^32 room seeds, so train,
/// val and test generated from one seed never share a room.
inline std::uint64_t split_base(std::uint64_t seed, const std::string& split) {
  static const std::array<std::string, 3> names{"train", "val", "test"};
  auto it = std::find(names.begin(), names.end(), split);
  if (it == names.end()) throw Error("unknown split '" + split + "' (train, val, test)");
  if (seed >= (1ull << 30)) throw Error("seed must be below 2^30");
  return seed * 4 + static_cast<std::uint64_t>(it - names.begin());
}

inline std::uint64_t split_seed(std::uint64_t base, std::size_t index) {
  return (base << 32) | static_cast<std::uint64_t>(index);
}

inline Manifest generate_split(const DatasetConfig& cfg, std::size_t n_rooms, std::uint64_t seed,
                               const std::filesystem::path& out_dir, const std::string& split = "train",
                               int threads = thread_count()) {
  const std::uint64_t base = split_base(seed, split);
  if (n_rooms >= (1ull << 32)) throw Error("generate_split: at most 2^32 - 1 rooms per split");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "maps");
  fs::create_directories(out_dir / "meta");
  fs::remove(out_dir / "manifest.txt");
  Manifest man;
  man.config = cfg;
  man.split = split;
  for (std::size_t i = 0; i < n_rooms; ++i) {
    std::uint64_t seed = split_seed(base, i);
    man.entries.push_back({seed, "maps/" + std::to_string(seed) + ".f32", "meta/" + std::to_string(seed) + ".txt"});
  }
  parallel_for(n_rooms, threads, [&](std::size_t i) {
    const auto& e = man.entries[i];
    Sample s = make_sample(e.seed, cfg);
    write_f32<float>(out_dir / e.map_file, s.map);
    write_text_file(out_dir / e.meta_file, sample_meta(s).to_string());
  });
  KeyValueRecord rec;
  rec.set("format_version", std::to_string(kFormatVersion));
  rec.set("split", split);
  rec.set("count", std::to_string(n_rooms));
  write_dataset_config(cfg, rec);
  for (const auto& e : man.entries) rec.append("sample", std::to_string(e.seed) + " " + e.map_file + " " + e.meta_file);
  write_text_file_atomic(out_dir / "manifest.txt", rec.to_string());
  return man;
}

inline Manifest read_manifest(const std::filesystem::path& manifest_path) {
  auto rec = KeyValueRecord::parse(read_text_file(manifest_path));
  if (rec.get_int("format_version") != kFormatVersion) throw Error("manifest: unsupported format_version");
  Manifest man;
  man.config = read_dataset_config(rec);
  man.split = rec.get("split");
  std::set<std::uint64_t> seeds;
  for (const auto& line : rec.get_all("sample")) {
    std::istringstream in(line);
    Manifest::Entry e{};
    if (!(in >> e.seed >> e.map_file >> e.meta_file)) throw Error("manifest: bad sample line '" + line + "'");
    if (!seeds.insert(e.seed).second) throw Error("manifest: duplicate seed " + std::to_string(e.seed));
    man.entries.push_back(std::move(e));
  }
  if (static_cast<long long>(man.entries.size()) != rec.get_int("count")) throw Error("manifest: count mismatch");
  return man;
}

inline Sample read_sample(const std::filesystem::path& root, const Manifest::Entry& e, const DatasetConfig& cfg) {
  Sample s;
  const auto meta_path = root / e.meta_file;
  KeyValueRecord rec;
  try {
    rec = KeyValueRecord::parse(read_text_file(meta_path));
    const std::string seed = rec.get("seed");
    auto [end, ec] = std::from_chars(seed.data(), seed.data() + seed.size(), s.seed);
    if (ec != std::errc{} || end != seed.data() + seed.size()) throw Error("bad seed '" + seed + "'");
    s.snr_db = rec.get_double("snr_db");
    s.room = read_room(rec);
    for (std::size_t w = 0; w < 4; ++w) {
      std::istringstream in(rec.get("label." + std::to_string(w)));
      std::string idx, d, a, x, y;
      if (!(in >> idx >> d >> a >> x >> y)) throw Error("bad label line");
      auto& l = s.labels[w];
      l.wall_index = static_cast<int>(KeyValueRecord::parse_int(idx, "label"));
      l.distance = KeyValueRecord::parse_double(d, "label");
      l.angle = KeyValueRecord::parse_double(a, "label");
      l.normal_xy = {KeyValueRecord::parse_double(x, "label"), KeyValueRecord::parse_double(y, "label")};
    }
  } catch (const Error& err) {
    throw Error("'" + meta_path.string() + "': " + err.what());
  }
  if (s.seed != e.seed) throw Error("'" + meta_path.string() + "': seed does not match the manifest");
  s.map = read_f32(root / e.map_file, static_cast<std::size_t>(cfg.theta) * static_cast<std::size_t>(cfg.length));
  return s;
}

/// Loads every sample of a split, in manifest order, validating shapes.
inline Dataset load_split(const std::filesystem::path& manifest_path, int threads = thread_count()) {
  Manifest man = read_manifest(manifest_path);
  const auto root = manifest_path.parent_path();
  Dataset ds;
  ds.config = man.config;
  ds.split = man.split;
  ds.samples.resize(man.entries.size());
  parallel_for(man.entries.size(), threads,
               [&](std::size_t i) { ds.samples[i] = read_sample(root, man.entries[i], man.config); });
  return ds;
}

/// Consecutive index batches of size `batch`; the last one may be short.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch) {
  if (batch == 0) throw Error("make_batches: batch size must be positive");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch)));
  }
  return out;
}

}  // namespace echomap

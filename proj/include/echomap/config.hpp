#pragma once

// Run configuration: named keys with reference defaults, a `preset` that
// switches to the desk-scale sizes, key=value config files and overrides.

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "echomap/checkpoint.hpp"
#include "echomap/dataset.hpp"
#include "echomap/io.hpp"
#include "echomap/losses.hpp"
#include "echomap/train.hpp"

namespace echomap {

struct ConfigKey {
  const char* name;
  const char* full_default;
  const char* desk_default;  // nullptr: same as full_default
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"preset", "full", "desk", "full | desk: selects the default column below"},
      {"fs", "16000", nullptr, "sampling rate [Hz] (reference setup: 16 kHz)"},
      {"c", "343", nullptr, "speed of sound [m/s] (reference setup: 343 m/s)"},
      {"n_mics", "8", nullptr, "microphones on the circular array (reference: M = 8)"},
      {"array_radius", "0.05", nullptr, "array radius [m] (reference: r = 5 cm)"},
      {"theta", "360", "90", "look directions of the map (reference: 360 at 1 deg)"},
      {"length", "1000", "250", "RIR samples kept after the direct path (reference: L = 1000)"},
      {"max_order", "7", "3", "image-source reflection order (reference: 7)"},
      {"snr_min", "20", nullptr, "lower pink-noise SNR [dB] (reference: 20 dB)"},
      {"snr_max", "50", nullptr, "upper pink-noise SNR [dB] (reference: 50 dB)"},
      {"noise", "1", nullptr, "add pink noise to simulated RIRs (0/1)"},
      {"side_min", "3", nullptr, "shortest base-rectangle side [m] (reference: 3 m)"},
      {"side_max", "8", nullptr, "longest base-rectangle side [m] (reference: 8 m)"},
      {"tilt_max_deg", "20", nullptr, "max sidewall tilt [deg] (reference: 20 deg)"},
      {"height_min", "2", nullptr, "min room height [m] (reference: 2 m)"},
      {"height_max", "5", nullptr, "max room height [m] (reference: 5 m)"},
      {"device_z_min", "0.5", nullptr, "min device height [m] (reference: 0.5 m)"},
      {"device_z_max", "4.5", nullptr, "max device height [m] (reference: 4.5 m)"},
      {"clearance", "0.1", nullptr, "device-to-wall clearance beyond the array [m] (reference: 10 cm)"},
      {"gamma", "0.5", nullptr, "detection threshold (reference: 0.5)"},
      {"batch", "50", nullptr, "mini-batch size B (reference: 50)"},
      {"lr", "0.001", nullptr, "AdamW learning rate"},
      {"weight_decay", "5e-5", nullptr, "AdamW decoupled weight decay (reference: 5e-5)"},
      {"beta1", "0.9", nullptr, "AdamW beta1"},
      {"beta2", "0.999", nullptr, "AdamW beta2"},
      {"adam_eps", "1e-8", nullptr, "AdamW epsilon"},
      {"epochs", "200", "30", "maximum epochs (reference: 200)"},
      {"patience", "20", nullptr, "early-stopping patience in epochs (reference: 20)"},
      {"loss", "rajdl", nullptr, "lo | ajdl | rajdl"},
      {"lambda", "0.05", nullptr, "detection-mass penalty weight (reference runs: 0.01, 0.05, 0.10)"},
      {"w_max", "4", nullptr, "expected detected walls W_max (reference: 4)"},
      {"eps_guard", "1e-8", nullptr, "denominator guard of the attention loss"},
      {"filters", "16 32 64 64 64", "8 16 32 32 32", "conv filters per block (reference: 16 32 64 64 64)"},
      {"kernels", "7 5 3 3 3", nullptr, "conv kernel sizes per block (reference: 7 5 3 3 3)"},
      {"gru_layers", "2", "1", "stacked bidirectional GRU layers"},
      {"gru_hidden", "64", "32", "GRU hidden width"},
      {"head_hidden", "128", nullptr, "hidden width of both output heads"},
  };
  return keys;
}

/// Effective key=value configuration after defaults, preset, file and
/// overrides. Unknown keys are rejected at every stage.
class RunConfig {
 public:
  RunConfig() { apply_preset("full"); }

  static bool known(const std::string& key) {
    const auto& keys = config_keys();
    return std::any_of(keys.begin(), keys.end(), [&](const ConfigKey& k) { return key == k.name; });
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw Error("unknown config key '" + key + "'");
    if (key == "preset") {
      apply_preset(value);
      return;
    }
    values_[key] = value;
  }

  /// `key=value`.
  void set_override(const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos) throw Error("override '" + assignment + "' is not key=value");
    set(std::string(KeyValueRecord::trim(assignment.substr(0, eq))),
        std::string(KeyValueRecord::trim(assignment.substr(eq + 1))));
  }

  /// Loads a config file; `preset` is applied first wherever it appears so
  /// that explicit keys in the same file win.
  void load_file(const std::filesystem::path& path) {
    auto rec = KeyValueRecord::parse(read_text_file(path));
    for (const auto& [k, v] : rec.entries()) {
      if (k == "preset") set(k, v);
    }
    for (const auto& [k, v] : rec.entries()) {
      if (k != "preset") set(k, v);
    }
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error("unknown config key '" + key + "'");
    return it->second;
  }
  double num(const std::string& key) const { return KeyValueRecord::parse_double(get(key), key); }
  int integer(const std::string& key) const { return static_cast<int>(KeyValueRecord::parse_int(get(key), key)); }

  std::string to_string() const {
    std::string out;
    for (const auto& k : config_keys()) out += std::string(k.name) + "=" + get(k.name) + "\n";
    return out;
  }

  DatasetConfig dataset() const {
    DatasetConfig d;
    d.fs = num("fs");
    d.c = num("c");
    d.theta = integer("theta");
    d.length = integer("length");
    d.max_order = integer("max_order");
    d.snr_min_db = num("snr_min");
    d.snr_max_db = num("snr_max");
    d.noise = integer("noise") != 0;
    auto& s = d.sampling;
    s.n_mics = integer("n_mics");
    s.array_radius_m = num("array_radius");
    s.side_min_m = num("side_min");
    s.side_max_m = num("side_max");
    s.tilt_max_deg = num("tilt_max_deg");
    s.height_min_m = num("height_min");
    s.height_max_m = num("height_max");
    s.device_z_min_m = num("device_z_min");
    s.device_z_max_m = num("device_z_max");
    s.clearance_m = num("clearance");
    if (d.theta < 1 || d.length < 1 || d.max_order < 0 || s.n_mics < 1) throw Error("config: bad dataset sizes");
    if (!(d.snr_max_db >= d.snr_min_db)) throw Error("config: snr_max below snr_min");
    return d;
  }

  nn::ModelConfig model(int theta, int length) const {
    nn::ModelConfig m;
    m.theta = theta;
    m.length = length;
    m.filters = nn::split_ints(get("filters"), "filters");
    m.kernels = nn::split_ints(get("kernels"), "kernels");
    m.gru_layers = integer("gru_layers");
    m.gru_hidden = integer("gru_hidden");
    m.head_hidden = integer("head_hidden");
    m.validate();
    return m;
  }

  /// Parses every typed value once so malformed settings fail up front.
  void validate() const {
    auto d = dataset();
    model(d.theta, d.length);
    training();
    if (!(num("gamma") >= 0.0 && num("gamma") <= 1.0)) throw Error("config: gamma outside [0, 1]");
  }

  nn::TrainConfig training() const {
    nn::TrainConfig t;
    t.loss = parse_loss_kind(get("loss"));
    t.hyper.lambda = num("lambda");
    t.hyper.w_max = num("w_max");
    t.hyper.eps_guard = num("eps_guard");
    t.epochs = integer("epochs");
    t.patience = integer("patience");
    t.batch = integer("batch");
    t.gamma = num("gamma");
    t.optimizer.lr = num("lr");
    t.optimizer.weight_decay = num("weight_decay");
    t.optimizer.beta1 = num("beta1");
    t.optimizer.beta2 = num("beta2");
    t.optimizer.eps = num("adam_eps");
    return t;
  }

 private:
  void apply_preset(const std::string& preset) {
    if (preset != "full" && preset != "desk") throw Error("preset must be 'full' or 'desk'");
    for (const auto& k : config_keys()) {
      values_[k.name] = (preset == "desk" && k.desk_default) ? k.desk_default : k.full_default;
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace echomap

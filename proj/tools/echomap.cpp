// echomap: dataset generation, training, evaluation, absorption sweeps and
// floor-map rendering from the command line.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad command line.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "echomap/checkpoint.hpp"
#include "echomap/config.hpp"
#include "echomap/dataset.hpp"
#include "echomap/eval.hpp"
#include "echomap/train.hpp"

namespace fs = std::filesystem;
using namespace echomap;

namespace {

void log(const std::string& msg) { std::cerr << "[echomap] " << msg << std::endl; }

struct CommonOptions {
  std::string preset;
  std::string config_file;
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
  std::string out;
};

void add_common(CLI::App* app, CommonOptions& o, bool need_out = true) {
  app->add_option("--preset", o.preset, "full | desk default sizes")->check(CLI::IsMember({"full", "desk"}));
  app->add_option("--config", o.config_file, "key=value config file")->check(CLI::ExistingFile);
  app->add_option("--set", o.overrides, "override key=value (repeatable)");
  app->add_option("--seed", o.seed, "seed; fixes every random stream")->capture_default_str();
  auto* out = app->add_option("--out", o.out, "output directory");
  if (need_out) out->required();
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig cfg;
  if (!o.preset.empty()) cfg.set("preset", o.preset);
  if (!o.config_file.empty()) cfg.load_file(o.config_file);
  for (const auto& s : o.overrides) cfg.set_override(s);
  return cfg;
}

void echo_config(const RunConfig& cfg, const CommonOptions& o, const fs::path& out) {
  fs::create_directories(out);
  // Loadable with --config; the seed is a flag, so it rides along as a comment.
  write_text_file(out / "effective_config.txt", cfg.to_string() + "# seed=" + std::to_string(o.seed) + "\n");
}

TrainedModel load_model(const fs::path& dir) {
  auto ck = nn::load_checkpoint(dir);
  return {ck.config, std::move(ck.params)};
}

DatasetConfig model_dataset_config(const fs::path& dir) {
  return read_dataset_config(KeyValueRecord::parse(read_text_file(dir / "dataset.txt")));
}

std::vector<double> parse_list(const std::string& s) {
  std::string t = s;
  for (auto& ch : t) {
    if (ch == ',') ch = ' ';
  }
  return split_doubles(t, "list");
}

/// Hand-built rooms for floor-map figures.
RoomSpec fixture_room(const std::string& name, const DatasetConfig& dc) {
  RoomSpec room;
  room.height_m = 3.0;
  room.absorption.fill(0.1);
  room.array_radius_m = dc.sampling.array_radius_m;
  room.n_mics = dc.sampling.n_mics;
  if (name == "hallway") {
    room.floor.vertices = {{{0, 0}, {12, 0}, {12, 2.5}, {0, 2.5}}};
    room.device_center = {1.5, 1.25, 1.2};
  } else if (name == "tilted") {
    // Steep east wall: the device's perpendicular foot on it lies below the
    // south corner, so its first-order echo is occluded.
    const double top = 4.0 + 3.0 * std::tan(deg2rad(20.0));
    room.floor.vertices = {{{0, 0}, {4, 0}, {top, 3}, {0, 3}}};
    room.device_center = {1.0, 0.3, 1.2};
  } else if (name == "shoebox") {
    room.floor.vertices = {{{0, 0}, {4, 0}, {4, 3}, {0, 3}}};
    room.device_center = {2.25, 1.5, 0.5};
  } else {
    throw Error("unknown fixture '" + name + "' (hallway, tilted, shoebox)");
  }
  validate_room(room);
  return room;
}

int run_gen(const CommonOptions& o, std::size_t rooms, const std::string& split) {
  RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  echo_config(cfg, o, out);
  auto dc = cfg.dataset();
  log("generating " + std::to_string(rooms) + " rooms (" + split + ") into " + out.string());
  auto man = generate_split(dc, rooms, o.seed, out, split);
  log("wrote " + std::to_string(man.entries.size()) + " samples");
  return 0;
}

int run_train(const CommonOptions& o, const std::string& train_manifest, const std::string& val_manifest) {
  RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  echo_config(cfg, o, out);
  auto train_set = load_split(train_manifest);
  auto val_set = load_split(val_manifest);
  auto mc = cfg.model(train_set.config.theta, train_set.config.length);
  auto tc = cfg.training();
  tc.seed = o.seed;
  log("training " + std::string(loss_name(tc.loss)) + " on " + std::to_string(train_set.samples.size()) +
      " rooms, validating on " + std::to_string(val_set.samples.size()));
  auto res = nn::train(mc, train_set, val_set, tc, log);
  nn::save_checkpoint(out, mc, res.params);
  KeyValueRecord ds;
  write_dataset_config(train_set.config, ds);
  write_text_file(out / "dataset.txt", ds.to_string());
  write_text_file(out / "history.csv", nn::history_csv(res.history));
  log("best epoch " + std::to_string(res.best_epoch) + ", validation loss " + std::to_string(res.best_val_loss));
  return 0;
}

int run_eval(const CommonOptions& o, const std::string& jdl_dir, const std::string& lo_dir,
             const std::string& test_manifest, std::optional<double> gamma, const std::string& name) {
  RunConfig cfg = resolve(o);
  if (gamma) cfg.set("gamma", format_double(*gamma));
  const fs::path out = o.out;
  echo_config(cfg, o, out);
  auto test = load_split(test_manifest);
  auto report = evaluate(load_model(jdl_dir), load_model(lo_dir), test, cfg.num("gamma"));
  auto table = report_table(report, name);
  write_text_file(out / "report.txt", table);
  write_text_file(out / "report.csv", report_csv(report, name));
  std::cout << table;
  return 0;
}

int run_sweep(const CommonOptions& o, const std::string& model_dir, const std::string& alphas,
              double base_absorption, double wall_deg) {
  RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  echo_config(cfg, o, out);
  SweepConfig sc;
  sc.base_absorption = base_absorption;
  sc.wall_angle = deg2rad(wall_deg);
  auto pts = absorption_sweep(load_model(model_dir), model_dataset_config(model_dir), sc, parse_list(alphas));
  write_text_file(out / "sweep.csv", sweep_csv(pts));
  // Minimal line plot: alpha on x, score on y, both in [0, 1].
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"420\" height=\"320\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"40\" y1=\"280\" x2=\"400\" y2=\"280\" stroke=\"black\"/>\n"
      << "<line x1=\"40\" y1=\"20\" x2=\"40\" y2=\"280\" stroke=\"black\"/>\n"
      << "<line x1=\"40\" y1=\"150\" x2=\"400\" y2=\"150\" stroke=\"#999\" stroke-dasharray=\"4,4\"/>\n"
      << "<polyline class=\"sweep\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& p : pts) svg << 40 + 360 * p.alpha << "," << 280 - 260 * p.score << " ";
  svg << "\"/>\n<text x=\"200\" y=\"310\" font-size=\"12\">absorption</text>\n"
      << "<text x=\"2\" y=\"15\" font-size=\"12\">score</text>\n</svg>\n";
  write_text_file(out / "sweep.svg", svg.str());
  for (const auto& p : pts) std::cout << p.alpha << "," << p.score << "\n";
  return 0;
}

int run_render(const CommonOptions& o, const std::string& room_file, const std::string& fixture,
               const std::vector<std::string>& jdl_dirs, const std::string& lo_dir, std::optional<double> gamma,
               const std::string& out_file) {
  RunConfig cfg = resolve(o);
  if (gamma) cfg.set("gamma", format_double(*gamma));
  std::vector<std::string> dirs = jdl_dirs;
  if (!lo_dir.empty()) dirs.push_back(lo_dir);
  if (dirs.empty()) throw Error("render: give at least one --jdl or --lo model");
  DatasetConfig dc = model_dataset_config(dirs.front());
  RoomSpec room = !room_file.empty() ? read_room(KeyValueRecord::parse(read_text_file(room_file)))
                                     : fixture_room(fixture.empty() ? "shoebox" : fixture, dc);
  validate_room(room);
  RadonMap map = simulate_map(room, dc, INFINITY, 0);
  std::vector<float> input(map.values.begin(), map.values.end());
  static const char* colors[] = {"#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};
  std::vector<FloorMapModel> models;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    auto m = load_model(dirs[i]);
    nn::Model<float> net(m.config);
    auto pred = Prediction::from(net.forward<float>(m.params, std::span<const float>(input)));
    const bool is_lo = !lo_dir.empty() && i + 1 == dirs.size();
    models.push_back({is_lo ? "LO" : fs::path(dirs[i]).filename().string(), pred, !is_lo,
                      is_lo ? "#d62728" : colors[i % 5]});
  }
  if (!out_file.empty() && fs::path(out_file).has_parent_path()) fs::create_directories(fs::path(out_file).parent_path());
  render_floor_map(room, models, cfg.num("gamma"), out_file);
  log("wrote " + out_file);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"echomap: reflector detection and localization toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "list every subcommand and config key");
  app.footer([] {
    std::string s = "\nConfig keys (key: reference default [desk default] - meaning):\n";
    for (const auto& k : config_keys()) {
      s += "  " + std::string(k.name) + ": " + k.full_default;
      if (k.desk_default) s += std::string(" [") + k.desk_default + "]";
      s += " - " + std::string(k.help) + "\n";
    }
    s += "\nECHOMAP_THREADS caps worker threads for generation and evaluation.\n";
    return s;
  }());

  CommonOptions gen_o, train_o, eval_o, sweep_o, render_o;
  std::size_t rooms = 0;
  std::string split = "train";
  auto* gen = app.add_subcommand("gen", "simulate one dataset split");
  add_common(gen, gen_o);
  gen->add_option("--rooms", rooms, "number of rooms")->required();
  gen->add_option("--split", split, "split name; each split draws from its own seed block")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();

  std::string train_manifest, val_manifest, loss;
  std::optional<double> lambda;
  std::optional<int> epochs, patience;
  auto* train = app.add_subcommand("train", "train a model (lo, ajdl, rajdl)");
  add_common(train, train_o);
  train->add_option("--train", train_manifest, "training manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--val", val_manifest, "validation manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--loss", loss, "lo | ajdl | rajdl")->check(CLI::IsMember({"lo", "ajdl", "rajdl"}));
  train->add_option("--lambda", lambda, "penalty weight for rajdl");
  train->add_option("--epochs", epochs, "maximum epochs");
  train->add_option("--patience", patience, "early-stopping patience");

  std::string jdl_dir, lo_dir, test_manifest, name = "JDL";
  std::optional<double> gamma;
  auto* eval = app.add_subcommand("eval", "detection rate and JDL / LO(D) / LO(U) error table");
  add_common(eval, eval_o);
  eval->add_option("--jdl", jdl_dir, "JDL checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--lo", lo_dir, "LO checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--test", test_manifest, "test manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--gamma", gamma, "detection threshold");
  eval->add_option("--name", name, "method label in the table")->capture_default_str();

  std::string sweep_model, alphas = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,0.99";
  double base_absorption = 0.1, wall_deg = 0.0;
  auto* sweep = app.add_subcommand("sweep", "detection score vs. absorption of one shoebox wall");
  add_common(sweep, sweep_o);
  sweep->add_option("--model", sweep_model, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  sweep->add_option("--alphas", alphas, "comma-separated absorption grid")->capture_default_str();
  sweep->add_option("--base-absorption", base_absorption, "absorption of the other surfaces")->capture_default_str();
  sweep->add_option("--wall-deg", wall_deg, "outward normal of the swept wall, degrees (0 = east)")
      ->capture_default_str();

  std::string room_file, fixture, render_lo, out_file;
  std::vector<std::string> render_jdl;
  std::optional<double> render_gamma;
  auto* render = app.add_subcommand("render", "SVG floor map with estimated walls");
  add_common(render, render_o, false);
  render->add_option("--room", room_file, "file with room.* keys (e.g. a dataset meta file)")
      ->check(CLI::ExistingFile);
  render->add_option("--fixture", fixture, "hallway | tilted | shoebox")
      ->check(CLI::IsMember({"hallway", "tilted", "shoebox"}));
  render->add_option("--jdl", render_jdl, "JDL checkpoint directory (repeatable)");
  render->add_option("--lo", render_lo, "LO checkpoint directory");
  render->add_option("--gamma", render_gamma, "detection threshold");
  render->add_option("--svg", out_file, "output SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  if (!loss.empty()) train_o.overrides.push_back("loss=" + loss);
  if (lambda) train_o.overrides.push_back("lambda=" + format_double(*lambda));
  if (epochs) train_o.overrides.push_back("epochs=" + std::to_string(*epochs));
  if (patience) train_o.overrides.push_back("patience=" + std::to_string(*patience));

  // Config keys and values are flags too: reject them before any work starts.
  for (auto [cmd, opts] : {std::pair{gen, &gen_o}, {train, &train_o}, {eval, &eval_o}, {sweep, &sweep_o},
                           {render, &render_o}}) {
    if (!*cmd) continue;
    try {
      resolve(*opts).validate();
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n" << cmd->help();
      return 2;
    }
  }

  try {
    if (*gen) return run_gen(gen_o, rooms, split);
    if (*train) return run_train(train_o, train_manifest, val_manifest);
    if (*eval) return run_eval(eval_o, jdl_dir, lo_dir, test_manifest, gamma, name);
    if (*sweep) return run_sweep(sweep_o, sweep_model, alphas, base_absorption, wall_deg);
    if (*render) return run_render(render_o, room_file, fixture, render_jdl, render_lo, render_gamma, out_file);
  } catch (const std::exception& e) {
    std::cerr << "echomap: " << e.what() << std::endl;
    return 1;
  }
  return 2;
}

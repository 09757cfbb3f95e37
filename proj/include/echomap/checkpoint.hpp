#pragma once

// Checkpoint = `<dir>/model.f32` (all tensors back to back, little-endian
// float32) + `<dir>/model.idx`, a key=value index:
//   model.theta, model.length, model.filters, model.kernels, model.pool,
//   model.gru_layers, model.gru_hidden, model.head_hidden
//   tensor=<name> <dim0>x<dim1>... <offset in floats>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "echomap/io.hpp"
#include "echomap/nnet.hpp"

namespace echomap::nn {

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<int> split_ints(const std::string& s, std::string_view what) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(static_cast<int>(KeyValueRecord::parse_int(tok, what)));
  return out;
}

inline void write_model_config(const ModelConfig& c, KeyValueRecord& rec) {
  rec.set("model.theta", std::to_string(c.theta));
  rec.set("model.length", std::to_string(c.length));
  rec.set("model.filters", join_ints(c.filters));
  rec.set("model.kernels", join_ints(c.kernels));
  rec.set("model.pool", std::to_string(c.pool));
  rec.set("model.gru_layers", std::to_string(c.gru_layers));
  rec.set("model.gru_hidden", std::to_string(c.gru_hidden));
  rec.set("model.head_hidden", std::to_string(c.head_hidden));
}

inline ModelConfig read_model_config(const KeyValueRecord& rec) {
  ModelConfig c;
  c.theta = static_cast<int>(rec.get_int("model.theta"));
  c.length = static_cast<int>(rec.get_int("model.length"));
  c.filters = split_ints(rec.get("model.filters"), "model.filters");
  c.kernels = split_ints(rec.get("model.kernels"), "model.kernels");
  c.pool = static_cast<int>(rec.get_int("model.pool"));
  c.gru_layers = static_cast<int>(rec.get_int("model.gru_layers"));
  c.gru_hidden = static_cast<int>(rec.get_int("model.gru_hidden"));
  c.head_hidden = static_cast<int>(rec.get_int("model.head_hidden"));
  c.validate();
  return c;
}

struct Checkpoint {
  ModelConfig config;
  std::vector<float> params;
};

inline void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, std::span<const float> params) {
  Layout layout(cfg);
  if (params.size() != layout.total) throw Error("save_checkpoint: parameter count mismatch");
  std::filesystem::create_directories(dir);
  KeyValueRecord rec;
  write_model_config(cfg, rec);
  for (const auto& t : layout.tensors) {
    std::string shape;
    for (std::size_t i = 0; i < t.shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(t.shape[i]);
    rec.append("tensor", t.name + " " + shape + " " + std::to_string(t.offset));
  }
  write_f32<float>(dir / "model.f32", params);
  write_text_file_atomic(dir / "model.idx", rec.to_string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  auto rec = KeyValueRecord::parse(read_text_file(dir / "model.idx"));
  Checkpoint ck;
  ck.config = read_model_config(rec);
  Layout layout(ck.config);
  auto listed = rec.get_all("tensor");
  if (listed.size() != layout.tensors.size()) throw Error("checkpoint: tensor count does not match the model");
  for (std::size_t i = 0; i < listed.size(); ++i) {
    std::istringstream in(listed[i]);
    std::string name, shape;
    std::size_t offset = 0;
    in >> name >> shape >> offset;
    if (name != layout.tensors[i].name || offset != layout.tensors[i].offset) {
      throw Error("checkpoint: unexpected tensor entry '" + listed[i] + "'");
    }
  }
  ck.params = read_f32(dir / "model.f32", layout.total);
  return ck;
}

}  // namespace echomap::nn

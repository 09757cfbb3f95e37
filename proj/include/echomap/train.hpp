#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "echomap/adamw.hpp"
#include "echomap/dataset.hpp"
#include "echomap/losses.hpp"
#include "echomap/nnet.hpp"

namespace echomap::nn {

struct TrainConfig {
  LossKind loss = LossKind::kRegularizedAttention;
  LossHyper hyper;
  int epochs = 200;
  int patience = 20;
  int batch = 50;
  AdamWConfig optimizer;
  std::uint64_t seed = 1;
  double gamma = 0.5;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_detection_rate = 0.0;  // percent of walls with score > gamma
};

struct TrainResult {
  std::vector<float> params;  // best-validation parameters
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

using Logger = std::function<void(const std::string&)>;

/// Seeded Fisher-Yates; identical on every platform for a given seed.
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

struct SplitScore {
  double loss = 0.0;
  double detection_rate = 0.0;
};

/// Mean batch loss over a split (fixed order, batches of `batch`) and the
/// detection rate at threshold gamma.
inline SplitScore score_split(const Model<float>& model, std::span<const float> params, const Dataset& ds,
                              const TrainConfig& tc) {
  std::vector<std::size_t> order(ds.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double total = 0.0;
  std::size_t detected = 0, walls = 0;
  auto batches = make_batches(order, static_cast<std::size_t>(tc.batch));
  for (const auto& b : batches) {
    std::vector<std::span<const float>> maps;
    std::vector<float> targets;
    for (auto i : b) {
      maps.emplace_back(ds.samples[i].map);
      auto t = ds.samples[i].targets<float>();
      targets.insert(targets.end(), t.begin(), t.end());
    }
    auto res = batch_gradient<float, float>(model, params, maps, targets, tc.loss, tc.hyper, false);
    total += static_cast<double>(res.loss.loss);
    for (const auto& o : res.outputs) {
      for (float d : o.detection) detected += d > tc.gamma ? 1 : 0;
      walls += kWalls;
    }
  }
  return {total / static_cast<double>(batches.size()), walls ? 100.0 * detected / walls : 0.0};
}

/// Mini-batch AdamW with early stopping on the validation loss. Returns the
/// parameters of the best validation epoch.
inline TrainResult train(const ModelConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                         const TrainConfig& tc, const Logger& log = {}) {
  if (train_set.samples.empty() || val_set.samples.empty()) throw Error("train: empty dataset");
  for (const auto* ds : {&train_set, &val_set}) {
    if (ds->config.theta != cfg.theta || ds->config.length != cfg.length) {
      throw Error("train: dataset map shape does not match the model input");
    }
  }
  if (tc.epochs < 1 || tc.patience < 1 || tc.batch < 1) throw Error("train: epochs, patience and batch must be positive");
  Model<float> model(cfg);
  std::vector<float> params = model.init_params(mix_seed(tc.seed));
  AdamWState<float> opt;
  std::mt19937_64 shuffle_rng(mix_seed(tc.seed + 1));

  TrainResult res;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.samples.size());
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_indices(order, shuffle_rng);
    auto batches = make_batches(order, static_cast<std::size_t>(tc.batch));
    double epoch_loss = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      std::vector<std::span<const float>> maps;
      std::vector<float> targets;
      for (auto i : batches[bi]) {
        maps.emplace_back(train_set.samples[i].map);
        auto t = train_set.samples[i].targets<float>();
        targets.insert(targets.end(), t.begin(), t.end());
      }
      BatchResult<float> br;
      try {
        br = batch_gradient<float, float>(model, params, maps, targets, tc.loss, tc.hyper);
      } catch (const Error& e) {
        throw Error("train: diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) + ": " +
                    e.what());
      }
      epoch_loss += static_cast<double>(br.loss.loss);
      adamw_step<float>(params, br.grad, opt, tc.optimizer);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(batches.size());
    auto val = score_split(model, params, val_set, tc);
    rec.val_loss = val.loss;
    rec.val_detection_rate = val.detection_rate;
    res.history.push_back(rec);
    if (!std::isfinite(rec.val_loss)) throw Error("train: validation loss is not finite at epoch " + std::to_string(epoch));
    if (rec.val_loss < res.best_val_loss) {
      res.best_val_loss = rec.val_loss;
      res.best_epoch = epoch;
      res.params = params;
    }
    if (log) {
      log("epoch " + std::to_string(epoch) + " train " + std::to_string(rec.train_loss) + " val " +
          std::to_string(rec.val_loss) + " det " + std::to_string(rec.val_detection_rate) + "%");
    }
    if (epoch - res.best_epoch >= tc.patience) break;
  }
  return res;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_loss,detection_rate\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.val_loss) + "," +
           format_double(r.val_detection_rate) + "\n";
  }
  return out;
}

}  // namespace echomap::nn

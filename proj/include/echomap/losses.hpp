#pragma once

// Training objectives over a mini-batch of four-wall predictions.
//
// Layout: normals are B x 4 x 2 flattened as [b][w][xy], detection scores
// B x 4 as [b][w]. Each loss returns its value together with the gradient
// with respect to both prediction tensors, so the network backward pass can
// start from them directly.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "echomap/common.hpp"

namespace echomap {

inline constexpr int kWalls = 4;

enum class LossKind { kLocalizationOnly, kAttention, kRegularizedAttention };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::kLocalizationOnly: return "lo";
    case LossKind::kAttention: return "ajdl";
    case LossKind::kRegularizedAttention: return "rajdl";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "lo") return LossKind::kLocalizationOnly;
  if (s == "ajdl") return LossKind::kAttention;
  if (s == "rajdl") return LossKind::kRegularizedAttention;
  throw Error("unknown loss '" + s + "' (expected lo, ajdl or rajdl)");
}

struct LossHyper {
  double lambda = 0.05;
  double w_max = 4.0;
  double eps_guard = 1e-8;
};

template <typename T>
struct LossValue {
  T loss{};
  std::vector<T> wall_errors;     // B x 4 Euclidean errors
  std::vector<T> detection_mass;  // B, sum of scores per sample (empty for LO)
  std::vector<T> grad_normals;    // B x 4 x 2
  std::vector<T> grad_detection;  // B x 4
};

namespace detail {
template <typename T>
std::size_t batch_of(std::span<const T> pred, std::span<const T> target) {
  if (pred.size() != target.size() || pred.size() % (2 * kWalls) != 0) {
    throw Error("loss: prediction/target shape mismatch");
  }
  return pred.size() / (2 * kWalls);
}

/// Fills per-wall errors and the unit error directions d(l)/d(pred).
template <typename T>
void wall_errors(std::span<const T> pred, std::span<const T> target, std::vector<T>& err,
                 std::vector<T>& dir) {
  const std::size_t walls = pred.size() / 2;
  err.assign(walls, T{});
  dir.assign(pred.size(), T{});
  for (std::size_t i = 0; i < walls; ++i) {
    T dx = pred[2 * i] - target[2 * i];
    T dy = pred[2 * i + 1] - target[2 * i + 1];
    T l = std::sqrt(dx * dx + dy * dy);
    err[i] = l;
    if (l > T{}) {
      dir[2 * i] = dx / l;
      dir[2 * i + 1] = dy / l;
    }
  }
}
}  // namespace detail

/// Mean Euclidean wall-normal error over batch and walls.
template <typename T>
LossValue<T> loss_lo(std::span<const T> pred, std::span<const T> target) {
  const std::size_t batch = detail::batch_of(pred, target);
  LossValue<T> out;
  std::vector<T> dir;
  detail::wall_errors(pred, target, out.wall_errors, dir);
  const T scale = T{1} / static_cast<T>(kWalls * batch);
  for (T l : out.wall_errors) out.loss += l;
  out.loss *= scale;
  out.grad_normals.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out.grad_normals[i] = scale * dir[i];
  out.grad_detection.assign(batch * kWalls, T{});
  return out;
}

/// Detection-weighted mean error per sample, averaged over the batch. The
/// denominator is sum(scores) + eps_guard.
template <typename T>
LossValue<T> loss_ajdl(std::span<const T> pred, std::span<const T> detection, std::span<const T> target,
                       double eps_guard = 1e-8) {
  const std::size_t batch = detail::batch_of(pred, target);
  if (detection.size() != batch * kWalls) throw Error("loss_ajdl: detection shape mismatch");
  LossValue<T> out;
  std::vector<T> dir;
  detail::wall_errors(pred, target, out.wall_errors, dir);
  out.detection_mass.assign(batch, T{});
  out.grad_normals.assign(pred.size(), T{});
  out.grad_detection.assign(detection.size(), T{});
  const T inv_b = T{1} / static_cast<T>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    T mass{}, weighted{};
    for (int w = 0; w < kWalls; ++w) {
      const std::size_t i = b * kWalls + static_cast<std::size_t>(w);
      mass += detection[i];
      weighted += detection[i] * out.wall_errors[i];
    }
    out.detection_mass[b] = mass;
    const T denom = mass + static_cast<T>(eps_guard);
    const T term = weighted / denom;
    out.loss += inv_b * term;
    for (int w = 0; w < kWalls; ++w) {
      const std::size_t i = b * kWalls + static_cast<std::size_t>(w);
      out.grad_detection[i] = inv_b * (out.wall_errors[i] - term) / denom;
      const T g = inv_b * detection[i] / denom;
      out.grad_normals[2 * i] = g * dir[2 * i];
      out.grad_normals[2 * i + 1] = g * dir[2 * i + 1];
    }
  }
  return out;
}

/// Attention loss plus lambda * RMS over the batch of (W_max - sum scores).
template <typename T>
LossValue<T> loss_rajdl(std::span<const T> pred, std::span<const T> detection, std::span<const T> target,
                        double lambda, double w_max, double eps_guard = 1e-8) {
  if (!(lambda >= 0.0) || !(w_max > 0.0)) throw Error("loss_rajdl: need lambda >= 0 and W_max > 0");
  LossValue<T> out = loss_ajdl(pred, detection, target, eps_guard);
  const std::size_t batch = out.detection_mass.size();
  T mean_sq{};
  for (T m : out.detection_mass) mean_sq += (static_cast<T>(w_max) - m) * (static_cast<T>(w_max) - m);
  mean_sq /= static_cast<T>(batch);
  const T rms = std::sqrt(mean_sq);
  out.loss += static_cast<T>(lambda) * rms;
  if (rms > T{}) {
    for (std::size_t b = 0; b < batch; ++b) {
      const T g = -static_cast<T>(lambda) * (static_cast<T>(w_max) - out.detection_mass[b]) /
                  (static_cast<T>(batch) * rms);
      for (int w = 0; w < kWalls; ++w) out.grad_detection[b * kWalls + static_cast<std::size_t>(w)] += g;
    }
  }
  return out;
}

template <typename T>
LossValue<T> compute_loss(LossKind kind, const LossHyper& hyper, std::span<const T> pred,
                          std::span<const T> detection, std::span<const T> target) {
  switch (kind) {
    case LossKind::kLocalizationOnly: return loss_lo(pred, target);
    case LossKind::kAttention: return loss_ajdl(pred, detection, target, hyper.eps_guard);
    case LossKind::kRegularizedAttention:
      return loss_rajdl(pred, detection, target, hyper.lambda, hyper.w_max, hyper.eps_guard);
  }
  throw Error("compute_loss: bad loss kind");
}

}  // namespace echomap

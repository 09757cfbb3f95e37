#pragma once

// Convolutional-recurrent network with a detection head and a wall-normal
// regression head, with hand-written reverse-mode gradients.
//
// Data flow for one Theta x L input map:
//   conv blocks: circular pad (theta) + zero pad (time) -> conv -> ReLU -> 2x2 max-pool
//   sequence:    time steps of the last block, features = channels x theta bins
//   recurrent:   stacked bidirectional GRU layers
//   heads:       [h_fwd(T-1), h_bwd(0)] -> fc -> ReLU -> fc -> {sigmoid x4 | linear x8}

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "echomap/common.hpp"
#include "echomap/geometry.hpp"
#include "echomap/losses.hpp"

namespace echomap::nn {

struct ModelConfig {
  int theta = 90;
  int length = 250;
  std::vector<int> filters{8, 16, 32, 32, 32};
  std::vector<int> kernels{7, 5, 3, 3, 3};
  int pool = 2;
  int gru_layers = 1;
  int gru_hidden = 32;
  int head_hidden = 128;

  /// Five blocks (16, 32, 64, 64, 64) on a 360 x 1000 map, two BiGRU layers
  /// of width 64.
  static ModelConfig full() {
    ModelConfig c;
    c.theta = 360;
    c.length = 1000;
    c.filters = {16, 32, 64, 64, 64};
    c.kernels = {7, 5, 3, 3, 3};
    c.gru_layers = 2;
    c.gru_hidden = 64;
    return c;
  }

  /// Same block structure at reduced width for a 90 x 250 map.
  static ModelConfig desk() { return ModelConfig{}; }

  /// Gradient-check size: 12 x 32 input, two blocks of two filters.
  static ModelConfig tiny() {
    ModelConfig c;
    c.theta = 12;
    c.length = 32;
    c.filters = {2, 2};
    c.kernels = {3, 3};
    c.gru_layers = 1;
    c.gru_hidden = 4;
    c.head_hidden = 8;
    return c;
  }

  int blocks() const { return static_cast<int>(filters.size()); }

  struct Shape {
    int c, h, w;
  };

  /// Output shape of every block, after pooling.
  std::vector<Shape> block_shapes() const {
    std::vector<Shape> out;
    Shape s{1, theta, length};
    for (int b = 0; b < blocks(); ++b) {
      s = {filters[static_cast<std::size_t>(b)], s.h / pool, s.w / pool};
      out.push_back(s);
    }
    return out;
  }

  int seq_len() const { return block_shapes().back().w; }
  int seq_features() const {
    auto s = block_shapes().back();
    return s.c * s.h;
  }

  void validate() const {
    if (filters.empty() || filters.size() != kernels.size()) throw Error("model: filters/kernels mismatch");
    if (pool < 1 || gru_layers < 1 || gru_hidden < 1 || head_hidden < 1) throw Error("model: bad sizes");
    int h = theta, w = length;
    for (std::size_t b = 0; b < filters.size(); ++b) {
      if (filters[b] < 1 || kernels[b] < 1 || kernels[b] % 2 == 0) throw Error("model: kernels must be odd");
      if (kernels[b] / 2 >= h) throw Error("model: circular padding wider than the angular axis");
      h /= pool;
      w /= pool;
      if (h < 1 || w < 1) throw Error("model: input too small for the number of pooling stages");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Offsets of every named tensor inside one flat parameter vector.
struct Layout {
  struct Conv {
    std::size_t w, b;
    int cin, cout, k;
  };
  struct Gru {
    std::size_t w_ih, w_hh, b_ih, b_hh;
    int in, hidden;
  };
  struct Dense {
    std::size_t w, b;
    int in, out;
  };

  std::vector<TensorInfo> tensors;
  std::vector<Conv> conv;
  std::vector<Gru> gru;  // layer-major: [layer * 2 + direction]
  Dense det1{}, det2{}, reg1{}, reg2{};
  std::size_t total = 0;

  explicit Layout(const ModelConfig& cfg) {
    cfg.validate();
    int cin = 1;
    for (int b = 0; b < cfg.blocks(); ++b) {
      int cout = cfg.filters[static_cast<std::size_t>(b)], k = cfg.kernels[static_cast<std::size_t>(b)];
      std::string p = "conv" + std::to_string(b);
      Conv c{add(p + ".weight", {cout, cin, k, k}), add(p + ".bias", {cout}), cin, cout, k};
      conv.push_back(c);
      cin = cout;
    }
    int in = cfg.seq_features();
    const int h = cfg.gru_hidden;
    for (int l = 0; l < cfg.gru_layers; ++l) {
      for (const char* dir : {"fwd", "bwd"}) {
        std::string p = "gru" + std::to_string(l) + "." + dir;
        Gru g{add(p + ".w_ih", {3 * h, in}), add(p + ".w_hh", {3 * h, h}), add(p + ".b_ih", {3 * h}),
              add(p + ".b_hh", {3 * h}), in, h};
        gru.push_back(g);
      }
      in = 2 * h;
    }
    det1 = dense("det.fc1", 2 * h, cfg.head_hidden);
    det2 = dense("det.fc2", cfg.head_hidden, kWalls);
    reg1 = dense("reg.fc1", 2 * h, cfg.head_hidden);
    reg2 = dense("reg.fc2", cfg.head_hidden, 2 * kWalls);
  }

  const TensorInfo& find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return t;
    }
    throw Error("no parameter tensor named '" + name + "'");
  }

 private:
  std::size_t add(std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    tensors.push_back({std::move(name), std::move(shape), total, n});
    total += n;
    return total - n;
  }
  Dense dense(const std::string& p, int in, int out) {
    return {add(p + ".weight", {out, in}), add(p + ".bias", {out}), in, out};
  }
};

/// C x H x W activation, row-major.
template <typename T>
struct Tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, T{}) {}

  T& at(int ci, int hi, int wi) { return data[(static_cast<std::size_t>(ci) * h + hi) * w + wi]; }
  const T& at(int ci, int hi, int wi) const { return data[(static_cast<std::size_t>(ci) * h + hi) * w + wi]; }
};

/// Wraps `pad` rows cyclically on the angular (h) axis.
template <typename T>
Tensor3<T> circular_pad(const Tensor3<T>& x, int pad) {
  if (pad < 0 || pad >= x.h) throw Error("circular_pad: pad must be in [0, H)");
  Tensor3<T> out(x.c, x.h + 2 * pad, x.w);
  for (int c = 0; c < x.c; ++c) {
    for (int r = 0; r < out.h; ++r) {
      int src = ((r - pad) % x.h + x.h) % x.h;
      std::copy_n(&x.at(c, src, 0), x.w, &out.at(c, r, 0));
    }
  }
  return out;
}

/// Adjoint of circular_pad: folds wrapped rows back onto their source rows.
template <typename T>
Tensor3<T> circular_pad_backward(const Tensor3<T>& grad_padded, int pad) {
  Tensor3<T> out(grad_padded.c, grad_padded.h - 2 * pad, grad_padded.w);
  for (int c = 0; c < out.c; ++c) {
    for (int r = 0; r < grad_padded.h; ++r) {
      int dst = ((r - pad) % out.h + out.h) % out.h;
      const T* src = &grad_padded.at(c, r, 0);
      T* d = &out.at(c, dst, 0);
      for (int i = 0; i < out.w; ++i) d[i] += src[i];
    }
  }
  return out;
}

template <typename T>
struct ModelOutput {
  std::array<T, kWalls> detection{};         // sigmoid scores
  std::array<T, 2 * kWalls> normals{};       // (x, y) per wall slot
};

/// Everything the backward pass needs from one forward pass.
template <typename T>
struct ForwardCache {
  std::vector<Tensor3<T>> block_input;   // input of each conv block (unpadded)
  std::vector<Tensor3<T>> block_output;  // pooled, post-ReLU
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  Tensor3<T> first_response;  // block 0 pre-pool activation, when requested

  struct GruStep {
    std::vector<T> h_prev, r, z, n, gh_n;
  };
  std::vector<std::vector<T>> gru_input;  // per layer, T x F_in row-major
  std::vector<std::vector<GruStep>> gru_steps;  // per layer*2+dir, indexed by time
  std::vector<std::vector<T>> gru_output;  // per layer, T x 2H
  std::vector<T> head_in;
  std::vector<T> det_hidden, reg_hidden;  // post-ReLU
  ModelOutput<T> out;
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
T sigmoid(T x) {
  return x >= T{} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)), layout_(cfg_) {}

  const ModelConfig& config() const { return cfg_; }
  const Layout& layout() const { return layout_; }
  std::size_t parameter_count() const { return layout_.total; }

  /// Uniform fan-in initialization; biases start at zero.
  std::vector<T> init_params(std::uint64_t seed) const {
    std::vector<T> p(layout_.total, T{});
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t off, std::size_t n, double bound) {
      for (std::size_t i = 0; i < n; ++i) p[off + i] = static_cast<T>(uniform(rng, -bound, bound));
    };
    for (const auto& c : layout_.conv) {
      int fan_in = c.cin * c.k * c.k;
      fill(c.w, static_cast<std::size_t>(c.cout) * fan_in, std::sqrt(6.0 / fan_in));
    }
    for (const auto& g : layout_.gru) {
      double bound = 1.0 / std::sqrt(static_cast<double>(g.hidden));
      fill(g.w_ih, static_cast<std::size_t>(3 * g.hidden) * g.in, bound);
      fill(g.w_hh, static_cast<std::size_t>(3 * g.hidden) * g.hidden, bound);
      fill(g.b_ih, static_cast<std::size_t>(3 * g.hidden), bound);
      fill(g.b_hh, static_cast<std::size_t>(3 * g.hidden), bound);
    }
    for (const auto* d : {&layout_.det1, &layout_.reg1}) {
      fill(d->w, static_cast<std::size_t>(d->out) * d->in, std::sqrt(6.0 / d->in));
    }
    for (const auto* d : {&layout_.det2, &layout_.reg2}) {
      fill(d->w, static_cast<std::size_t>(d->out) * d->in, 1.0 / std::sqrt(static_cast<double>(d->in)));
    }
    return p;
  }

  /// Runs the network on one Theta x L map. `cache` may be null for inference.
  template <typename In>
  ModelOutput<T> forward(std::span<const T> params, std::span<const In> map, ForwardCache<T>* cache = nullptr,
                         bool keep_first_response = false) const {
    if (params.size() != layout_.total) throw Error("forward: parameter vector has wrong size");
    if (map.size() != static_cast<std::size_t>(cfg_.theta) * cfg_.length) throw Error("forward: input shape mismatch");
    ForwardCache<T> local;
    ForwardCache<T>& c = cache ? *cache : local;
    c = ForwardCache<T>{};

    Tensor3<T> x(1, cfg_.theta, cfg_.length);
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (!std::isfinite(static_cast<double>(map[i]))) throw Error("forward: non-finite input");
      x.data[i] = static_cast<T>(map[i]);
    }
    for (int b = 0; b < cfg_.blocks(); ++b) {
      Tensor3<T> pre = conv_forward(params, layout_.conv[static_cast<std::size_t>(b)], x);
      for (auto& v : pre.data) v = std::max(v, T{});
      if (b == 0 && keep_first_response) c.first_response = pre;
      std::vector<std::uint32_t> argmax;
      Tensor3<T> pooled = max_pool(pre, argmax);
      if (cache) {
        c.block_input.push_back(std::move(x));
        c.pool_argmax.push_back(std::move(argmax));
      }
      x = std::move(pooled);
      if (cache) c.block_output.push_back(x);
    }

    // Sequence over time: step t carries x(c, h, t) for all channels and rows.
    const int steps = x.w, feat = x.c * x.h;
    std::vector<T> seq(static_cast<std::size_t>(steps) * feat);
    for (int ci = 0; ci < x.c; ++ci)
      for (int hi = 0; hi < x.h; ++hi)
        for (int t = 0; t < steps; ++t) seq[static_cast<std::size_t>(t) * feat + ci * x.h + hi] = x.at(ci, hi, t);

    const int hid = cfg_.gru_hidden;
    int in_dim = feat;
    c.gru_steps.resize(static_cast<std::size_t>(2 * cfg_.gru_layers));
    for (int l = 0; l < cfg_.gru_layers; ++l) {
      std::vector<T> out(static_cast<std::size_t>(steps) * 2 * hid);
      for (int dir = 0; dir < 2; ++dir) {
        const auto& g = layout_.gru[static_cast<std::size_t>(2 * l + dir)];
        gru_forward(params, g, seq, steps, in_dim, dir == 1, out, dir * hid, 2 * hid,
                    c.gru_steps[static_cast<std::size_t>(2 * l + dir)]);
      }
      c.gru_input.push_back(std::move(seq));
      seq = out;
      c.gru_output.push_back(std::move(out));
      in_dim = 2 * hid;
    }
    const auto& last = c.gru_output.back();
    c.head_in.assign(static_cast<std::size_t>(2 * hid), T{});
    for (int i = 0; i < hid; ++i) {
      c.head_in[static_cast<std::size_t>(i)] = last[static_cast<std::size_t>(steps - 1) * 2 * hid + i];
      c.head_in[static_cast<std::size_t>(hid + i)] = last[static_cast<std::size_t>(hid + i)];
    }

    ModelOutput<T> out;
    c.det_hidden = dense_forward(params, layout_.det1, c.head_in, true);
    auto det = dense_forward(params, layout_.det2, c.det_hidden, false);
    for (int w = 0; w < kWalls; ++w) out.detection[static_cast<std::size_t>(w)] = sigmoid(det[static_cast<std::size_t>(w)]);
    c.reg_hidden = dense_forward(params, layout_.reg1, c.head_in, true);
    auto reg = dense_forward(params, layout_.reg2, c.reg_hidden, false);
    std::copy(reg.begin(), reg.end(), out.normals.begin());
    c.out = out;
    return out;
  }

  /// Accumulates d(loss)/d(params) into `grad` given the loss gradient with
  /// respect to this sample's outputs.
  void backward(std::span<const T> params, const ForwardCache<T>& c, std::span<const T> d_detection,
                std::span<const T> d_normals, std::span<T> grad) const {
    if (grad.size() != layout_.total) throw Error("backward: gradient vector has wrong size");
    if (c.block_input.empty()) throw Error("backward: forward cache is empty");
    const int hid = cfg_.gru_hidden;

    // Heads. The sigmoid derivative folds into the detection logit gradient.
    std::vector<T> d_logit(kWalls);
    for (int w = 0; w < kWalls; ++w) {
      T s = c.out.detection[static_cast<std::size_t>(w)];
      d_logit[static_cast<std::size_t>(w)] = d_detection[static_cast<std::size_t>(w)] * s * (T{1} - s);
    }
    std::vector<T> d_head(static_cast<std::size_t>(2 * hid), T{});
    {
      auto dh = dense_backward(params, layout_.det2, c.det_hidden, d_logit, grad);
      for (std::size_t i = 0; i < dh.size(); ++i) dh[i] = c.det_hidden[i] > T{} ? dh[i] : T{};
      auto di = dense_backward(params, layout_.det1, c.head_in, dh, grad);
      for (std::size_t i = 0; i < di.size(); ++i) d_head[i] += di[i];
    }
    {
      std::vector<T> dn(d_normals.begin(), d_normals.end());
      auto dh = dense_backward(params, layout_.reg2, c.reg_hidden, dn, grad);
      for (std::size_t i = 0; i < dh.size(); ++i) dh[i] = c.reg_hidden[i] > T{} ? dh[i] : T{};
      auto di = dense_backward(params, layout_.reg1, c.head_in, dh, grad);
      for (std::size_t i = 0; i < di.size(); ++i) d_head[i] += di[i];
    }

    // Recurrent stack.
    const int steps = cfg_.seq_len();
    std::vector<T> d_out(static_cast<std::size_t>(steps) * 2 * hid, T{});
    for (int i = 0; i < hid; ++i) {
      d_out[static_cast<std::size_t>(steps - 1) * 2 * hid + i] += d_head[static_cast<std::size_t>(i)];
      d_out[static_cast<std::size_t>(hid + i)] += d_head[static_cast<std::size_t>(hid + i)];
    }
    for (int l = cfg_.gru_layers - 1; l >= 0; --l) {
      const auto& input = c.gru_input[static_cast<std::size_t>(l)];
      const int in_dim = layout_.gru[static_cast<std::size_t>(2 * l)].in;
      std::vector<T> d_in(static_cast<std::size_t>(steps) * in_dim, T{});
      for (int dir = 0; dir < 2; ++dir) {
        gru_backward(params, layout_.gru[static_cast<std::size_t>(2 * l + dir)], input, steps, dir == 1, d_out,
                     dir * hid, 2 * hid, c.gru_steps[static_cast<std::size_t>(2 * l + dir)], grad, d_in);
      }
      d_out = std::move(d_in);
    }

    // Back into the last block's pooled output.
    const auto& last = c.block_output.back();
    Tensor3<T> d_x(last.c, last.h, last.w);
    const int feat = last.c * last.h;
    for (int ci = 0; ci < last.c; ++ci)
      for (int hi = 0; hi < last.h; ++hi)
        for (int t = 0; t < last.w; ++t) d_x.at(ci, hi, t) = d_out[static_cast<std::size_t>(t) * feat + ci * last.h + hi];

    for (int b = cfg_.blocks() - 1; b >= 0; --b) {
      const auto& input = c.block_input[static_cast<std::size_t>(b)];
      const auto& pooled = c.block_output[static_cast<std::size_t>(b)];
      const auto& argmax = c.pool_argmax[static_cast<std::size_t>(b)];
      const auto& conv = layout_.conv[static_cast<std::size_t>(b)];
      // Max-pool then ReLU adjoint: only the argmax cell of a positive window
      // receives gradient.
      Tensor3<T> d_pre(conv.cout, input.h, input.w);
      for (std::size_t i = 0; i < argmax.size(); ++i) {
        if (pooled.data[i] > T{}) d_pre.data[argmax[i]] += d_x.data[i];
      }
      d_x = conv_backward(params, conv, input, d_pre, grad, b > 0);
    }
  }

 private:
  ModelConfig cfg_;
  Layout layout_;

  // im2col of the circularly (h) and zero (w) padded input: rows (ci, ky, kx),
  // columns (h, w) of the same-size output.
  static RowMat<T> im2col(const Tensor3<T>& padded, int k, int out_h, int out_w) {
    const int pad = k / 2;
    RowMat<T> col(padded.c * k * k, out_h * out_w);
    col.setZero();
    for (int ci = 0; ci < padded.c; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T* row = col.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * out_h * out_w;
          const int w0 = std::max(0, pad - kx), w1 = std::min(out_w, out_w + pad - kx);
          for (int h = 0; h < out_h; ++h) {
            const T* src = &padded.at(ci, h + ky, 0);
            T* dst = row + static_cast<std::size_t>(h) * out_w;
            for (int w = w0; w < w1; ++w) dst[w] = src[w + kx - pad];
          }
        }
    return col;
  }

  static void col2im(const RowMat<T>& dcol, int k, Tensor3<T>& d_padded) {
    const int pad = k / 2;
    const int out_h = d_padded.h - 2 * pad, out_w = d_padded.w;
    for (int ci = 0; ci < d_padded.c; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T* row = dcol.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * out_h * out_w;
          const int w0 = std::max(0, pad - kx), w1 = std::min(out_w, out_w + pad - kx);
          for (int h = 0; h < out_h; ++h) {
            T* dst = &d_padded.at(ci, h + ky, 0);
            const T* src = row + static_cast<std::size_t>(h) * out_w;
            for (int w = w0; w < w1; ++w) dst[w + kx - pad] += src[w];
          }
        }
  }

  static Tensor3<T> conv_forward(std::span<const T> p, const Layout::Conv& conv, const Tensor3<T>& x) {
    const int k = conv.k;
    Tensor3<T> padded = circular_pad(x, k / 2);
    RowMat<T> col = im2col(padded, k, x.h, x.w);
    Eigen::Map<const RowMat<T>> w(p.data() + conv.w, conv.cout, conv.cin * k * k);
    Eigen::Map<const Vec<T>> bias(p.data() + conv.b, conv.cout);
    Tensor3<T> out(conv.cout, x.h, x.w);
    Eigen::Map<RowMat<T>> y(out.data.data(), conv.cout, x.h * x.w);
    y.noalias() = w * col;
    y.colwise() += bias;
    return out;
  }

  static Tensor3<T> conv_backward(std::span<const T> p, const Layout::Conv& conv, const Tensor3<T>& x,
                                  const Tensor3<T>& d_pre, std::span<T> grad, bool need_input_grad) {
    const int k = conv.k, pad = k / 2;
    Tensor3<T> padded = circular_pad(x, pad);
    RowMat<T> col = im2col(padded, k, x.h, x.w);
    Eigen::Map<const RowMat<T>> dy(d_pre.data.data(), conv.cout, x.h * x.w);
    Eigen::Map<RowMat<T>> dw(grad.data() + conv.w, conv.cout, conv.cin * k * k);
    Eigen::Map<Vec<T>> db(grad.data() + conv.b, conv.cout);
    dw.noalias() += dy * col.transpose();
    // Plain loop: Eigen's vectorized reduction peels by pointer alignment, which
    // makes the rounding depend on where the heap put d_pre.
    for (int o = 0; o < conv.cout; ++o) {
      T acc = 0;
      for (Eigen::Index j = 0; j < dy.cols(); ++j) acc += dy(o, j);
      db(o) += acc;
    }
    if (!need_input_grad) return {};
    Eigen::Map<const RowMat<T>> w(p.data() + conv.w, conv.cout, conv.cin * k * k);
    RowMat<T> dcol = w.transpose() * dy;
    Tensor3<T> d_padded(conv.cin, x.h + 2 * pad, x.w);
    col2im(dcol, k, d_padded);
    return circular_pad_backward(d_padded, pad);
  }

  static Tensor3<T> max_pool(const Tensor3<T>& x, std::vector<std::uint32_t>& argmax) {
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor3<T> out(x.c, oh, ow);
    argmax.assign(out.data.size(), 0);
    std::size_t o = 0;
    for (int ci = 0; ci < x.c; ++ci)
      for (int h = 0; h < oh; ++h)
        for (int w = 0; w < ow; ++w, ++o) {
          std::uint32_t best = static_cast<std::uint32_t>((static_cast<std::size_t>(ci) * x.h + 2 * h) * x.w + 2 * w);
          T bv = x.data[best];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              auto idx = static_cast<std::uint32_t>((static_cast<std::size_t>(ci) * x.h + 2 * h + dy) * x.w + 2 * w + dx);
              if (x.data[idx] > bv) {
                bv = x.data[idx];
                best = idx;
              }
            }
          out.data[o] = bv;
          argmax[o] = best;
        }
    return out;
  }

  static std::vector<T> dense_forward(std::span<const T> p, const Layout::Dense& d, const std::vector<T>& in,
                                      bool relu) {
    Eigen::Map<const RowMat<T>> w(p.data() + d.w, d.out, d.in);
    Eigen::Map<const Vec<T>> b(p.data() + d.b, d.out);
    Eigen::Map<const Vec<T>> x(in.data(), d.in);
    std::vector<T> out(static_cast<std::size_t>(d.out));
    Eigen::Map<Vec<T>> y(out.data(), d.out);
    y.noalias() = w * x + b;
    if (relu) {
      for (auto& v : out) v = std::max(v, T{});
    }
    return out;
  }

  static std::vector<T> dense_backward(std::span<const T> p, const Layout::Dense& d, const std::vector<T>& in,
                                       const std::vector<T>& d_out, std::span<T> grad) {
    Eigen::Map<const RowMat<T>> w(p.data() + d.w, d.out, d.in);
    Eigen::Map<const Vec<T>> x(in.data(), d.in);
    Eigen::Map<const Vec<T>> dy(d_out.data(), d.out);
    Eigen::Map<RowMat<T>> dw(grad.data() + d.w, d.out, d.in);
    Eigen::Map<Vec<T>> db(grad.data() + d.b, d.out);
    dw.noalias() += dy * x.transpose();
    db += dy;
    std::vector<T> d_in(static_cast<std::size_t>(d.in));
    Eigen::Map<Vec<T>> dx(d_in.data(), d.in);
    dx.noalias() = w.transpose() * dy;
    return d_in;
  }

  // Gate order in the stacked weights: reset, update, candidate.
  static void gru_forward(std::span<const T> p, const Layout::Gru& g, const std::vector<T>& input, int steps,
                          int in_dim, bool reverse, std::vector<T>& out, int out_offset, int out_stride,
                          std::vector<typename ForwardCache<T>::GruStep>& cache) {
    const int h = g.hidden;
    Eigen::Map<const RowMat<T>> w_ih(p.data() + g.w_ih, 3 * h, in_dim);
    Eigen::Map<const RowMat<T>> w_hh(p.data() + g.w_hh, 3 * h, h);
    Eigen::Map<const Vec<T>> b_ih(p.data() + g.b_ih, 3 * h);
    Eigen::Map<const Vec<T>> b_hh(p.data() + g.b_hh, 3 * h);
    Eigen::Map<const RowMat<T>> x(input.data(), steps, in_dim);
    RowMat<T> gi = x * w_ih.transpose();
    gi.rowwise() += b_ih.transpose();

    cache.assign(static_cast<std::size_t>(steps), {});
    Vec<T> state = Vec<T>::Zero(h);
    for (int s = 0; s < steps; ++s) {
      const int t = reverse ? steps - 1 - s : s;
      Vec<T> gh = w_hh * state + b_hh;
      auto& st = cache[static_cast<std::size_t>(t)];
      st.h_prev.assign(state.data(), state.data() + h);
      st.r.resize(static_cast<std::size_t>(h));
      st.z.resize(static_cast<std::size_t>(h));
      st.n.resize(static_cast<std::size_t>(h));
      st.gh_n.resize(static_cast<std::size_t>(h));
      for (int i = 0; i < h; ++i) {
        T r = sigmoid(gi(t, i) + gh(i));
        T z = sigmoid(gi(t, h + i) + gh(h + i));
        T n = std::tanh(gi(t, 2 * h + i) + r * gh(2 * h + i));
        st.r[static_cast<std::size_t>(i)] = r;
        st.z[static_cast<std::size_t>(i)] = z;
        st.n[static_cast<std::size_t>(i)] = n;
        st.gh_n[static_cast<std::size_t>(i)] = gh(2 * h + i);
        state(i) = (T{1} - z) * n + z * state(i);
        out[static_cast<std::size_t>(t) * out_stride + out_offset + i] = state(i);
      }
    }
  }

  static void gru_backward(std::span<const T> p, const Layout::Gru& g, const std::vector<T>& input, int steps,
                           bool reverse, const std::vector<T>& d_out, int out_offset, int out_stride,
                           const std::vector<typename ForwardCache<T>::GruStep>& cache, std::span<T> grad,
                           std::vector<T>& d_input) {
    const int h = g.hidden, in_dim = g.in;
    Eigen::Map<const RowMat<T>> w_ih(p.data() + g.w_ih, 3 * h, in_dim);
    Eigen::Map<const RowMat<T>> w_hh(p.data() + g.w_hh, 3 * h, h);
    RowMat<T> d_gi(steps, 3 * h);
    Vec<T> d_state = Vec<T>::Zero(h);
    Vec<T> d_gh(3 * h);
    Eigen::Map<RowMat<T>> dw_hh(grad.data() + g.w_hh, 3 * h, h);
    Eigen::Map<Vec<T>> db_hh(grad.data() + g.b_hh, 3 * h);
    for (int s = steps - 1; s >= 0; --s) {
      const int t = reverse ? steps - 1 - s : s;
      const auto& st = cache[static_cast<std::size_t>(t)];
      Vec<T> d_prev(h);
      for (int i = 0; i < h; ++i) {
        const std::size_t ui = static_cast<std::size_t>(i);
        T dh = d_state(i) + d_out[static_cast<std::size_t>(t) * out_stride + out_offset + i];
        T r = st.r[ui], z = st.z[ui], n = st.n[ui];
        T dn = dh * (T{1} - z);
        T dz = dh * (st.h_prev[ui] - n);
        d_prev(i) = dh * z;
        T dn_pre = dn * (T{1} - n * n);
        T dr = dn_pre * st.gh_n[ui];
        T dr_pre = dr * r * (T{1} - r);
        T dz_pre = dz * z * (T{1} - z);
        d_gi(t, i) = dr_pre;
        d_gi(t, h + i) = dz_pre;
        d_gi(t, 2 * h + i) = dn_pre;
        d_gh(i) = dr_pre;
        d_gh(h + i) = dz_pre;
        d_gh(2 * h + i) = dn_pre * r;
      }
      Eigen::Map<const Vec<T>> h_prev(st.h_prev.data(), h);
      dw_hh.noalias() += d_gh * h_prev.transpose();
      db_hh += d_gh;
      d_prev.noalias() += w_hh.transpose() * d_gh;
      d_state = d_prev;
    }
    Eigen::Map<const RowMat<T>> x(input.data(), steps, in_dim);
    Eigen::Map<RowMat<T>> dw_ih(grad.data() + g.w_ih, 3 * h, in_dim);
    Eigen::Map<Vec<T>> db_ih(grad.data() + g.b_ih, 3 * h);
    dw_ih.noalias() += d_gi.transpose() * x;
    for (Eigen::Index t = 0; t < d_gi.rows(); ++t) db_ih += d_gi.row(t).transpose();
    Eigen::Map<RowMat<T>> dx(d_input.data(), steps, in_dim);
    dx.noalias() += d_gi * w_ih;
  }
};

/// Loss and parameter gradient for one mini-batch.
template <typename T>
struct BatchResult {
  LossValue<T> loss;
  std::vector<ModelOutput<T>> outputs;
  std::vector<T> grad;
};

/// Forward over the batch, loss, then backward per sample. `targets` holds
/// 8 numbers (4 wall normals) per sample.
template <typename T, typename In>
BatchResult<T> batch_gradient(const Model<T>& model, std::span<const T> params,
                              const std::vector<std::span<const In>>& maps, std::span<const T> targets,
                              LossKind kind, const LossHyper& hyper, bool need_grad = true) {
  const std::size_t batch = maps.size();
  if (batch == 0 || targets.size() != batch * 2 * kWalls) throw Error("batch_gradient: batch/target mismatch");
  BatchResult<T> res;
  std::vector<ForwardCache<T>> caches(need_grad ? batch : 0);
  std::vector<T> pred(batch * 2 * kWalls), det(batch * kWalls);
  for (std::size_t b = 0; b < batch; ++b) {
    auto out = model.forward(params, maps[b], need_grad ? &caches[b] : nullptr);
    std::copy(out.normals.begin(), out.normals.end(), pred.begin() + static_cast<std::ptrdiff_t>(b * 2 * kWalls));
    std::copy(out.detection.begin(), out.detection.end(), det.begin() + static_cast<std::ptrdiff_t>(b * kWalls));
    res.outputs.push_back(out);
  }
  res.loss = compute_loss<T>(kind, hyper, pred, det, targets);
  if (!std::isfinite(static_cast<double>(res.loss.loss))) throw Error("batch_gradient: non-finite loss");
  if (!need_grad) return res;
  res.grad.assign(model.parameter_count(), T{});
  for (std::size_t b = 0; b < batch; ++b) {
    std::span<const T> dd(res.loss.grad_detection.data() + b * kWalls, kWalls);
    std::span<const T> dn(res.loss.grad_normals.data() + b * 2 * kWalls, 2 * kWalls);
    model.backward(params, caches[b], dd, dn, res.grad);
  }
  const auto& layout = model.layout();
  for (const auto& t : layout.tensors) {
    for (std::size_t i = 0; i < t.size; ++i) {
      if (!std::isfinite(static_cast<double>(res.grad[t.offset + i]))) {
        throw Error("batch_gradient: non-finite gradient in '" + t.name + "'");
      }
    }
  }
  return res;
}

}  // namespace echomap::nn

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scsp/errors.hpp"
#include "scsp/rng.hpp"
#include "scsp/tensor.hpp"

namespace scsp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class LayerKind : std::uint8_t { conv = 0, maxpool = 1, fully_connected = 2, relu = 3, flatten = 4, softmax_xent = 5 };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::fully_connected: return "fully_connected";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::softmax_xent: return "softmax_xent";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  // conv
  std::size_t kernel = 0, c_in = 0, c_out = 0, stride = 1, padding = 0;
  // maxpool
  std::size_t window = 0;
  // fully connected
  std::size_t fan_in = 0, fan_out = 0;
  bool prunable = false;

  bool has_params() const { return kind == LayerKind::conv || kind == LayerKind::fully_connected; }
  std::size_t n_filters() const { return kind == LayerKind::conv ? c_out : fan_out; }
  std::size_t filter_len() const { return kind == LayerKind::conv ? kernel * kernel * c_in : fan_in; }
  std::vector<std::size_t> weight_shape() const {
    if (kind == LayerKind::conv) return {kernel, kernel, c_in, c_out};
    return {fan_in, fan_out};
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Per-sample activation shape, H x W x C (FC activations are 1 x 1 x n).
struct ActShape {
  std::size_t h = 0, w = 0, c = 0;
  std::size_t size() const { return h * w * c; }
  friend bool operator==(const ActShape&, const ActShape&) = default;
};

/// Activation shapes before each layer plus the final output shape.
inline std::vector<ActShape> shape_chain(const std::vector<LayerSpec>& specs, ActShape input) {
  std::vector<ActShape> out{input};
  ActShape cur = input;
  for (const auto& s : specs) {
    switch (s.kind) {
      case LayerKind::conv: {
        if (s.c_in != cur.c || s.kernel == 0 || s.stride == 0 || s.c_out == 0)
          throw DimensionError("shape chain: conv " + s.name + " expects " + std::to_string(s.c_in) +
                               " channels, got " + std::to_string(cur.c));
        if (cur.h + 2 * s.padding < s.kernel || cur.w + 2 * s.padding < s.kernel)
          throw DimensionError("shape chain: conv " + s.name + " kernel larger than input");
        cur = {(cur.h + 2 * s.padding - s.kernel) / s.stride + 1,
               (cur.w + 2 * s.padding - s.kernel) / s.stride + 1, s.c_out};
        break;
      }
      case LayerKind::maxpool:
        if (s.window == 0 || cur.h < s.window || cur.w < s.window)
          throw DimensionError("shape chain: pool " + s.name + " window does not fit");
        cur = {cur.h / s.window, cur.w / s.window, cur.c};
        break;
      case LayerKind::fully_connected:
        if (s.fan_in != cur.size() || s.fan_out == 0)
          throw DimensionError("shape chain: fc " + s.name + " expects fan_in " + std::to_string(s.fan_in) +
                               ", got " + std::to_string(cur.size()));
        cur = {1, 1, s.fan_out};
        break;
      case LayerKind::flatten:
        cur = {1, 1, cur.size()};
        break;
      case LayerKind::relu:
      case LayerKind::softmax_xent:
        break;
    }
    out.push_back(cur);
  }
  return out;
}

/// conv1 3x3 1->32, pool, conv2 3x3 32->64, pool, fc1 3136->128, fc2 128->10.
inline std::vector<LayerSpec> lenet4_specs() {
  std::vector<LayerSpec> s;
  LayerSpec conv1{.kind = LayerKind::conv, .name = "conv1", .kernel = 3, .c_in = 1, .c_out = 32, .stride = 1, .padding = 1};
  conv1.prunable = true;
  s.push_back(conv1);
  s.push_back({.kind = LayerKind::relu, .name = "relu1"});
  s.push_back({.kind = LayerKind::maxpool, .name = "pool1", .window = 2});
  LayerSpec conv2{.kind = LayerKind::conv, .name = "conv2", .kernel = 3, .c_in = 32, .c_out = 64, .stride = 1, .padding = 1};
  conv2.prunable = true;
  s.push_back(conv2);
  s.push_back({.kind = LayerKind::relu, .name = "relu2"});
  s.push_back({.kind = LayerKind::maxpool, .name = "pool2", .window = 2});
  s.push_back({.kind = LayerKind::flatten, .name = "flatten"});
  LayerSpec fc1{.kind = LayerKind::fully_connected, .name = "fc1", .fan_in = 7 * 7 * 64, .fan_out = 128};
  fc1.prunable = true;
  s.push_back(fc1);
  s.push_back({.kind = LayerKind::relu, .name = "relu3"});
  s.push_back({.kind = LayerKind::fully_connected, .name = "fc2", .fan_in = 128, .fan_out = 10});
  s.push_back({.kind = LayerKind::softmax_xent, .name = "loss"});
  return s;
}

// active[o] is false while filter o is zeroized. last_pruned_* record the
// most recent selection so it can be re-applied as a final hard prune.
struct PruneMask {
  std::size_t layer_id = 0;
  std::vector<bool> active;
  std::vector<std::size_t> last_pruned_groups;
  std::vector<std::size_t> last_pruned_filters;

  std::size_t active_count() const {
    return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
  }
  friend bool operator==(const PruneMask&, const PruneMask&) = default;
};

struct NetworkState {
  std::vector<LayerSpec> specs;
  ActShape input{28, 28, 1};
  std::vector<Tensor> weights;               // one per spec; empty if unparameterized
  std::vector<std::vector<double>> biases;   // one per spec
  std::vector<PruneMask> masks;              // one per parameterized layer, in layer order
  std::uint64_t rng_seed = 0;
  std::uint64_t epoch = 0;                   // completed training epochs

  std::vector<std::size_t> param_layers() const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < specs.size(); ++i)
      if (specs[i].has_params()) ids.push_back(i);
    return ids;
  }

  PruneMask& mask_for(std::size_t layer_id) {
    for (auto& m : masks)
      if (m.layer_id == layer_id) return m;
    throw ContractError("no mask for layer " + std::to_string(layer_id));
  }
  const PruneMask& mask_for(std::size_t layer_id) const {
    for (const auto& m : masks)
      if (m.layer_id == layer_id) return m;
    throw ContractError("no mask for layer " + std::to_string(layer_id));
  }

  std::size_t layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < specs.size(); ++i)
      if (specs[i].name == name) return i;
    throw ParameterError("unknown layer name '" + name + "'");
  }

  friend bool operator==(const NetworkState&, const NetworkState&) = default;
};

struct TrainConfig {
  double learning_rate = 0.07;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
};

/// Filter o of a parameterized layer is zero when every incoming weight and
/// its bias are exactly zero.
inline bool filter_is_zero(const NetworkState& s, std::size_t layer, std::size_t o) {
  const auto& w = s.weights[layer];
  const std::size_t n = s.specs[layer].n_filters();
  if (s.biases[layer][o] != 0.0) return false;
  for (std::size_t r = o; r < w.numel(); r += n)
    if (w.data[r] != 0.0) return false;
  return true;
}

inline double filter_norm(const NetworkState& s, std::size_t layer, std::size_t o) {
  const auto& w = s.weights[layer];
  const std::size_t n = s.specs[layer].n_filters();
  double sum = 0.0;
  for (std::size_t r = o; r < w.numel(); r += n) sum += w.data[r] * w.data[r];
  return std::sqrt(sum);
}

/// Marks a filter active exactly when it is nonzero.
inline void refresh_masks(NetworkState& s) {
  for (auto& m : s.masks)
    for (std::size_t o = 0; o < m.active.size(); ++o) m.active[o] = !filter_is_zero(s, m.layer_id, o);
}

/// Builds a network from specs with He-uniform weights (bound sqrt(6/fan_in))
/// and zero biases. Deterministic per seed.
inline NetworkState init_network(std::uint64_t seed, std::vector<LayerSpec> specs = lenet4_specs(),
                                 ActShape input = {28, 28, 1}) {
  const auto chain = shape_chain(specs, input);
  if (specs.empty() || specs.back().kind != LayerKind::softmax_xent)
    throw DimensionError("network must end in softmax_xent");

  NetworkState s;
  s.specs = std::move(specs);
  s.input = input;
  s.rng_seed = seed;
  s.weights.resize(s.specs.size());
  s.biases.resize(s.specs.size());
  Rng rng(derive_seed(seed, 0x1417));
  for (std::size_t i = 0; i < s.specs.size(); ++i) {
    const auto& sp = s.specs[i];
    if (!sp.has_params()) continue;
    Tensor w(sp.weight_shape());
    const double bound = std::sqrt(6.0 / static_cast<double>(sp.filter_len()));
    for (double& x : w.data) x = uniform(rng, -bound, bound);
    s.weights[i] = std::move(w);
    s.biases[i].assign(sp.n_filters(), 0.0);
    s.masks.push_back({.layer_id = i, .active = std::vector<bool>(sp.n_filters(), true)});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct ForwardCache {
  std::vector<RowMatrix> inputs;                  // input to each layer, N x size
  std::vector<RowMatrix> columns;                 // im2col buffers for conv layers
  std::vector<std::vector<std::uint32_t>> argmax;  // pool winners, flat index into input
  std::vector<ActShape> shapes;
  RowMatrix logits;
};

namespace detail {

inline RowMatrix im2col(const RowMatrix& x, ActShape in, const LayerSpec& sp, ActShape out) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  const std::size_t k = sp.kernel;
  const std::size_t patch = k * k * in.c;
  RowMatrix cols = RowMatrix::Zero(static_cast<Eigen::Index>(n * out.h * out.w), static_cast<Eigen::Index>(patch));
  for (std::size_t b = 0; b < n; ++b) {
    const double* src = x.data() + b * in.size();
    for (std::size_t oy = 0; oy < out.h; ++oy) {
      for (std::size_t ox = 0; ox < out.w; ++ox) {
        double* dst = cols.data() + ((b * out.h + oy) * out.w + ox) * patch;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * sp.stride + ky) - static_cast<std::ptrdiff_t>(sp.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * sp.stride + kx) - static_cast<std::ptrdiff_t>(sp.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.w)) continue;
            const double* p = src + (static_cast<std::size_t>(iy) * in.w + static_cast<std::size_t>(ix)) * in.c;
            std::copy(p, p + in.c, dst + (ky * k + kx) * in.c);
          }
        }
      }
    }
  }
  return cols;
}

inline RowMatrix col2im(const RowMatrix& cols, std::size_t n, ActShape in, const LayerSpec& sp, ActShape out) {
  const std::size_t k = sp.kernel;
  const std::size_t patch = k * k * in.c;
  RowMatrix dx = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in.size()));
  for (std::size_t b = 0; b < n; ++b) {
    double* dst = dx.data() + b * in.size();
    for (std::size_t oy = 0; oy < out.h; ++oy) {
      for (std::size_t ox = 0; ox < out.w; ++ox) {
        const double* src = cols.data() + ((b * out.h + oy) * out.w + ox) * patch;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * sp.stride + ky) - static_cast<std::ptrdiff_t>(sp.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * sp.stride + kx) - static_cast<std::ptrdiff_t>(sp.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.w)) continue;
            double* p = dst + (static_cast<std::size_t>(iy) * in.w + static_cast<std::size_t>(ix)) * in.c;
            const double* q = src + (ky * k + kx) * in.c;
            for (std::size_t c = 0; c < in.c; ++c) p[c] += q[c];
          }
        }
      }
    }
  }
  return dx;
}

inline Eigen::Map<const RowMatrix> weight_map(const Tensor& w, const LayerSpec& sp) {
  return {w.data.data(), static_cast<Eigen::Index>(sp.filter_len()), static_cast<Eigen::Index>(sp.n_filters())};
}

inline Eigen::Map<const Eigen::RowVectorXd> bias_map(const std::vector<double>& b) {
  return {b.data(), static_cast<Eigen::Index>(b.size())};
}

}  // namespace detail

/// Forward pass over a batch given as N rows of H*W*C values (HWC order).
/// When cache is non-null it receives everything backward needs.
inline RowMatrix forward_rows(const NetworkState& s, const RowMatrix& batch, ForwardCache* cache = nullptr) {
  if (static_cast<std::size_t>(batch.cols()) != s.input.size())
    throw DimensionError("forward: sample size " + std::to_string(batch.cols()) + " != " +
                         std::to_string(s.input.size()));
  const auto shapes = shape_chain(s.specs, s.input);
  const std::size_t n = static_cast<std::size_t>(batch.rows());
  if (cache) {
    cache->inputs.assign(s.specs.size(), RowMatrix());
    cache->columns.assign(s.specs.size(), RowMatrix());
    cache->argmax.assign(s.specs.size(), {});
    cache->shapes = shapes;
  }

  RowMatrix x = batch;
  for (std::size_t i = 0; i < s.specs.size(); ++i) {
    const auto& sp = s.specs[i];
    const ActShape in = shapes[i];
    const ActShape out = shapes[i + 1];
    if (cache && sp.kind != LayerKind::conv) cache->inputs[i] = x;
    switch (sp.kind) {
      case LayerKind::conv: {
        RowMatrix cols = detail::im2col(x, in, sp, out);
        RowMatrix y = cols * detail::weight_map(s.weights[i], sp);
        y.rowwise() += detail::bias_map(s.biases[i]);
        // (N*Ho*Wo) x O row-major is the same memory as N x (Ho*Wo*O).
        x = Eigen::Map<RowMatrix>(y.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out.size()));
        if (cache) cache->columns[i] = std::move(cols);
        break;
      }
      case LayerKind::fully_connected: {
        RowMatrix y = x * detail::weight_map(s.weights[i], sp);
        y.rowwise() += detail::bias_map(s.biases[i]);
        x = std::move(y);
        break;
      }
      case LayerKind::relu:
        x = x.cwiseMax(0.0);
        break;
      case LayerKind::maxpool: {
        RowMatrix y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out.size()));
        std::vector<std::uint32_t> arg(n * out.size());
        for (std::size_t b = 0; b < n; ++b) {
          const double* src = x.data() + b * in.size();
          for (std::size_t oy = 0; oy < out.h; ++oy)
            for (std::size_t ox = 0; ox < out.w; ++ox)
              for (std::size_t c = 0; c < out.c; ++c) {
                std::size_t best = ((oy * sp.window) * in.w + ox * sp.window) * in.c + c;
                for (std::size_t wy = 0; wy < sp.window; ++wy)
                  for (std::size_t wx = 0; wx < sp.window; ++wx) {
                    const std::size_t idx = ((oy * sp.window + wy) * in.w + ox * sp.window + wx) * in.c + c;
                    if (src[idx] > src[best]) best = idx;  // ties keep the first element
                  }
                const std::size_t o = (oy * out.w + ox) * out.c + c;
                y(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(o)) = src[best];
                arg[b * out.size() + o] = static_cast<std::uint32_t>(best);
              }
        }
        x = std::move(y);
        if (cache) cache->argmax[i] = std::move(arg);
        break;
      }
      case LayerKind::flatten:
      case LayerKind::softmax_xent:
        break;
    }
  }
  if (!x.allFinite()) throw NumericError("forward: non-finite logits");
  if (cache) cache->logits = x;
  return x;
}

/// Forward pass over an N x H x W x C image tensor.
inline RowMatrix forward(const NetworkState& s, const Tensor& batch, ForwardCache* cache = nullptr) {
  if (batch.rank() != 4 || batch.dim(1) != s.input.h || batch.dim(2) != s.input.w || batch.dim(3) != s.input.c)
    throw DimensionError("forward: batch shape " + batch.shape_string() + " does not match network input");
  const auto n = static_cast<Eigen::Index>(batch.dim(0));
  RowMatrix x = Eigen::Map<const RowMatrix>(batch.data.data(), n, static_cast<Eigen::Index>(s.input.size()));
  return forward_rows(s, x, cache);
}

struct LossResult {
  double loss = 0.0;   // batch mean
  RowMatrix dlogits;   // d(mean loss)/d(logits)
};

inline LossResult softmax_cross_entropy(const RowMatrix& logits, std::span<const int> labels) {
  const auto n = logits.rows();
  const auto classes = logits.cols();
  if (static_cast<std::size_t>(n) != labels.size()) throw DimensionError("loss: label count mismatch");
  LossResult r;
  r.dlogits.resize(n, classes);
  for (Eigen::Index b = 0; b < n; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= classes) throw DataError("loss: label " + std::to_string(y) + " out of range");
    const double mx = logits.row(b).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < classes; ++c) z += std::exp(logits(b, c) - mx);
    const double logz = std::log(z) + mx;
    r.loss += logz - logits(b, y);
    for (Eigen::Index c = 0; c < classes; ++c)
      r.dlogits(b, c) = (std::exp(logits(b, c) - logz) - (c == y ? 1.0 : 0.0)) / static_cast<double>(n);
  }
  r.loss /= static_cast<double>(n);
  return r;
}

struct Gradients {
  std::vector<Tensor> weights;
  std::vector<std::vector<double>> biases;
  double loss = 0.0;
};

/// Backpropagates the mean softmax cross-entropy of the cached forward pass.
/// ReLU uses the subgradient 1 at exactly zero, so a zeroized filter (zero
/// output everywhere) still receives gradient and can recover.
inline Gradients backward(const NetworkState& s, const ForwardCache& cache, std::span<const int> labels) {
  if (cache.inputs.size() != s.specs.size()) throw ContractError("backward: cache does not match network");
  LossResult lr = softmax_cross_entropy(cache.logits, labels);
  Gradients g;
  g.loss = lr.loss;
  g.weights.resize(s.specs.size());
  g.biases.resize(s.specs.size());
  const std::size_t n = labels.size();

  RowMatrix dy = std::move(lr.dlogits);
  const auto first_param = s.param_layers().front();
  for (std::size_t ii = s.specs.size(); ii-- > 0;) {
    const auto& sp = s.specs[ii];
    const ActShape in = cache.shapes[ii];
    const ActShape out = cache.shapes[ii + 1];
    switch (sp.kind) {
      case LayerKind::softmax_xent:
      case LayerKind::flatten:
        break;
      case LayerKind::relu: {
        const RowMatrix& x = cache.inputs[ii];
        dy = (x.array() >= 0.0).select(dy, 0.0);
        break;
      }
      case LayerKind::maxpool: {
        RowMatrix dx = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in.size()));
        const auto& arg = cache.argmax[ii];
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t o = 0; o < out.size(); ++o)
            dx(static_cast<Eigen::Index>(b), arg[b * out.size() + o]) +=
                dy(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(o));
        dy = std::move(dx);
        break;
      }
      case LayerKind::fully_connected: {
        const RowMatrix& x = cache.inputs[ii];
        RowMatrix dw = x.transpose() * dy;
        g.weights[ii] = Tensor(sp.weight_shape(), std::vector<double>(dw.data(), dw.data() + dw.size()));
        Eigen::RowVectorXd db = dy.colwise().sum();
        g.biases[ii].assign(db.data(), db.data() + db.size());
        if (ii != first_param) dy = dy * detail::weight_map(s.weights[ii], sp).transpose();
        break;
      }
      case LayerKind::conv: {
        const RowMatrix& cols = cache.columns[ii];
        Eigen::Map<const RowMatrix> dout(dy.data(), static_cast<Eigen::Index>(n * out.h * out.w),
                                         static_cast<Eigen::Index>(out.c));
        RowMatrix dw = cols.transpose() * dout;
        g.weights[ii] = Tensor(sp.weight_shape(), std::vector<double>(dw.data(), dw.data() + dw.size()));
        Eigen::RowVectorXd db = dout.colwise().sum();
        g.biases[ii].assign(db.data(), db.data() + db.size());
        if (ii != first_param) {
          RowMatrix dcols = dout * detail::weight_map(s.weights[ii], sp).transpose();
          dy = detail::col2im(dcols, n, in, sp, out);
        }
        break;
      }
    }
  }
  return g;
}

/// w <- w - lr * g for every parameter, zeroized filters included.
inline void sgd_step(NetworkState& s, const Gradients& g, double lr) {
  for (std::size_t i = 0; i < s.specs.size(); ++i) {
    if (!s.specs[i].has_params()) continue;
    auto& w = s.weights[i].data;
    const auto& gw = g.weights[i].data;
    if (gw.size() != w.size()) throw DimensionError("sgd_step: gradient shape mismatch at " + s.specs[i].name);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gw[k];
    auto& b = s.biases[i];
    const auto& gb = g.biases[i];
    if (gb.size() != b.size()) throw DimensionError("sgd_step: bias gradient shape mismatch");
    for (std::size_t k = 0; k < b.size(); ++k) b[k] -= lr * gb[k];
  }
}

/// Index of the largest logit per row; ties go to the lower class.
inline std::vector<int> predict(const RowMatrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(b, c) > logits(b, best)) best = c;
    out[static_cast<std::size_t>(b)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace scsp

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scsp/data.hpp"
#include "scsp/nn.hpp"

namespace scsp {

/// Normalized images for the given sample indices, one row per sample.
inline RowMatrix gather_images(const Dataset& ds, std::span<const std::size_t> idx) {
  const std::size_t sz = ds.image_size();
  RowMatrix x(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(sz));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const std::uint8_t* src = ds.pixels.data() + idx[r] * sz;
    double* dst = x.data() + r * sz;
    for (std::size_t p = 0; p < sz; ++p) dst[p] = src[p] / 255.0;
  }
  return x;
}

inline std::vector<int> gather_labels(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> y(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) y[r] = ds.labels[idx[r]];
  return y;
}

/// Fraction of samples whose argmax logit (ties to the lower class) equals
/// the label. Batches are reduced in index order.
inline double evaluate(const NetworkState& s, const Dataset& ds, std::size_t batch_size = 500) {
  if (ds.size() == 0) throw DataError("evaluate: empty dataset");
  std::size_t correct = 0;
  for (const auto& b : batches(ds.size(), batch_size, 0, 0, false)) {
    const auto pred = predict(forward_rows(s, gather_images(ds, b)));
    for (std::size_t i = 0; i < b.size(); ++i) correct += pred[i] == ds.labels[b[i]] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Accuracy for an N x H x W x C image tensor with matching labels.
inline double evaluate(const NetworkState& s, const Tensor& images, std::span<const int> labels) {
  if (labels.empty()) throw DataError("evaluate: empty dataset");
  const auto pred = predict(forward(s, images));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// One pass of minibatch SGD over the dataset; returns the sample-weighted
/// mean training loss. `epoch` selects the shuffle permutation.
inline double train_epoch(NetworkState& s, const Dataset& ds, const TrainConfig& cfg, std::uint64_t epoch) {
  if (!(cfg.learning_rate > 0.0)) throw ParameterError("train: learning_rate must be positive");
  double total = 0.0;
  ForwardCache cache;
  for (const auto& b : batches(ds, cfg.batch_size, cfg.seed, epoch, true)) {
    forward_rows(s, gather_images(ds, b), &cache);
    const auto labels = gather_labels(ds, b);
    const Gradients g = backward(s, cache, labels);
    if (!std::isfinite(g.loss)) throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch));
    sgd_step(s, g, cfg.learning_rate);
    total += g.loss * static_cast<double>(b.size());
  }
  return total / static_cast<double>(ds.size());
}

}  // namespace scsp

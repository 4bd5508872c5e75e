#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scsp/errors.hpp"
#include "scsp/linalg.hpp"
#include "scsp/tensor.hpp"

namespace scsp {

// A layer's filters as columns: filter_len x n_filters. Columns may be a
// subset of the layer's filters; active_index_map[j] gives the original
// filter index of column j.
struct FilterMatrix {
  std::size_t layer_id = 0;
  std::size_t filter_len = 0;
  std::size_t n_filters = 0;
  std::size_t original_filters = 0;
  DenseMatrix weights;
  std::vector<std::size_t> active_index_map;

  double column_norm(std::size_t j) const {
    double s = 0.0;
    for (std::size_t r = 0; r < filter_len; ++r) s += weights(r, j) * weights(r, j);
    return std::sqrt(s);
  }
};

struct SpectralConfig {
  double bandwidth = 1.0;
  std::size_t n_clusters = 0;  // 0: default_cluster_count of the layer
  bool reduce_dimension = true;
  std::size_t embed_dim = 0;  // 0: same as n_clusters
  bool normalize_rows = true;
};

struct ClusterAssignment {
  std::size_t layer_id = 0;
  std::vector<int> labels;                       // per retained filter
  std::vector<std::size_t> retained;             // original index per label entry
  std::vector<std::vector<std::size_t>> groups;  // original indices, ascending

  std::size_t n_groups() const { return groups.size(); }
};

/// Heuristic cluster count: the class count when the layer has at least two
/// filters per class, otherwise a quarter of the filters (at least 2).
inline std::size_t default_cluster_count(std::size_t n_filters, std::size_t n_classes = 10) {
  if (n_filters >= 2 * n_classes) return n_classes;
  return std::max<std::size_t>(2, n_filters / 4);
}

/// Views a H x W x I x O conv tensor (or fan_in x O FC matrix) as a
/// filter_len x O matrix. Column o is filter o flattened H-major, then W,
/// then I, which is exactly the row-major storage order.
inline FilterMatrix reshape_filters(const Tensor& layer_weights, std::size_t layer_id) {
  const auto& s = layer_weights.shape;
  if (s.size() != 4 && s.size() != 2)
    throw DimensionError("reshape_filters: expected a 4-d or 2-d tensor, got " +
                         layer_weights.shape_string());
  if (std::any_of(s.begin(), s.end(), [](std::size_t d) { return d == 0; }))
    throw DimensionError("reshape_filters: empty tensor " + layer_weights.shape_string());

  FilterMatrix m;
  m.layer_id = layer_id;
  m.n_filters = s.back();
  m.original_filters = s.back();
  m.filter_len = layer_weights.numel() / m.n_filters;
  m.weights = DenseMatrix(m.filter_len, m.n_filters, layer_weights.data);
  m.active_index_map.resize(m.n_filters);
  for (std::size_t j = 0; j < m.n_filters; ++j) m.active_index_map[j] = j;
  return m;
}

/// Inverse of reshape_filters for a matrix that still holds every filter.
inline Tensor unreshape_filters(const FilterMatrix& m, const std::vector<std::size_t>& shape) {
  if (m.n_filters != m.original_filters)
    throw ContractError("unreshape_filters: matrix has dropped filters");
  Tensor t(shape, m.weights.data());
  if (t.shape.back() != m.n_filters) throw DimensionError("unreshape_filters: filter count mismatch");
  return t;
}

/// Keeps the columns whose L2 norm exceeds tol.
inline FilterMatrix drop_zero_filters(const FilterMatrix& m, double tol = 1e-12) {
  if (tol < 0.0) throw ParameterError("drop_zero_filters: negative tolerance");
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < m.n_filters; ++j)
    if (m.column_norm(j) > tol) keep.push_back(j);
  if (keep.empty())
    throw EmptyLayerError("layer " + std::to_string(m.layer_id) + " has only zero filters");

  FilterMatrix out;
  out.layer_id = m.layer_id;
  out.filter_len = m.filter_len;
  out.n_filters = keep.size();
  out.original_filters = m.original_filters;
  out.weights = DenseMatrix(m.filter_len, keep.size());
  for (std::size_t c = 0; c < keep.size(); ++c) {
    for (std::size_t r = 0; r < m.filter_len; ++r) out.weights(r, c) = m.weights(r, keep[c]);
    out.active_index_map.push_back(m.active_index_map[keep[c]]);
  }
  return out;
}

/// S_jk = 1 - cos(m_j, m_k). Symmetric with an exact zero diagonal; values
/// are clamped into [0, 2] against rounding.
inline DenseMatrix cosine_distance_matrix(const FilterMatrix& m) {
  const std::size_t n = m.n_filters;
  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    norms[j] = m.column_norm(j);
    if (!(norms[j] > 0.0))
      throw ContractError("cosine_distance_matrix: zero-norm filter column " + std::to_string(j));
  }
  DenseMatrix s(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = j + 1; k < n; ++k) {
      double dot = 0.0;
      for (std::size_t r = 0; r < m.filter_len; ++r) dot += m.weights(r, j) * m.weights(r, k);
      const double d = std::clamp(1.0 - dot / (norms[j] * norms[k]), 0.0, 2.0);
      s(j, k) = s(k, j) = d;
    }
  }
  return s;
}

/// Gamma_jk = exp(-S_jk^2 / bandwidth).
inline DenseMatrix rbf_adjacency(const DenseMatrix& s, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ParameterError("rbf_adjacency: bandwidth must be positive");
  if (!s.square()) throw DimensionError("rbf_adjacency: distance matrix must be square");
  DenseMatrix g(s.rows(), s.cols());
  for (std::size_t j = 0; j < s.rows(); ++j) {
    g(j, j) = 1.0;
    for (std::size_t k = j + 1; k < s.cols(); ++k) g(j, k) = g(k, j) = std::exp(-s(j, k) * s(j, k) / bandwidth);
  }
  return g;
}

inline DenseMatrix degree_matrix(const DenseMatrix& gamma) {
  if (!gamma.square()) throw DimensionError("degree_matrix: adjacency must be square");
  DenseMatrix d(gamma.rows(), gamma.cols());
  for (std::size_t m = 0; m < gamma.rows(); ++m) {
    double sum = 0.0;
    for (std::size_t n = 0; n < gamma.cols(); ++n) sum += gamma(n, m);
    d(m, m) = sum;
  }
  return d;
}

/// Symmetric normalized Laplacian D^-1/2 (D - Gamma) D^-1/2.
inline DenseMatrix normalized_laplacian(const DenseMatrix& gamma, const DenseMatrix& d) {
  if (!gamma.square() || gamma.rows() != d.rows() || !d.square())
    throw DimensionError("normalized_laplacian: shape mismatch");
  const std::size_t n = gamma.rows();
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(d(i, i) > 0.0)) throw NumericError("normalized_laplacian: non-positive degree at " + std::to_string(i));
    inv_sqrt[i] = 1.0 / std::sqrt(d(i, i));
  }
  DenseMatrix pi(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    pi(i, i) = (d(i, i) - gamma(i, i)) * inv_sqrt[i] * inv_sqrt[i];
    for (std::size_t j = i + 1; j < n; ++j) pi(i, j) = pi(j, i) = -gamma(i, j) * inv_sqrt[i] * inv_sqrt[j];
  }
  return pi;
}

/// Per-filter embedding rows from the Laplacian's eigenvectors.
///
/// With reduction, the embed_dim eigenvectors of smallest eigenvalue are
/// kept; otherwise the full eigenvector matrix is returned. Rows are then
/// scaled to unit length when normalize_rows is set (all-zero rows are left
/// as they are).
inline DenseMatrix spectral_embedding(const DenseMatrix& pi, const SpectralConfig& cfg) {
  const std::size_t n = pi.rows();
  std::size_t dim = n;
  if (cfg.reduce_dimension) {
    const std::size_t k = cfg.n_clusters == 0 ? default_cluster_count(n) : cfg.n_clusters;
    dim = cfg.embed_dim == 0 ? k : cfg.embed_dim;
    if (dim == 0 || dim > n)
      throw ParameterError("spectral_embedding: embed_dim " + std::to_string(dim) +
                           " not in [1, " + std::to_string(n) + "]");
  }
  const EigenResult eig = eigh_symmetric(pi);
  DenseMatrix f(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) f(i, j) = eig.eigenvectors(i, j);

  if (cfg.normalize_rows) {
    for (std::size_t i = 0; i < n; ++i) {
      auto r = f.row(i);
      double norm = 0.0;
      for (double x : r) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (double& x : r) x /= norm;
    }
  }
  return f;
}

/// Spectral clustering of an already-filtered (all columns nonzero) matrix.
inline ClusterAssignment cluster_filter_matrix(const FilterMatrix& m, SpectralConfig cfg,
                                               std::uint64_t seed) {
  if (cfg.n_clusters == 0) cfg.n_clusters = default_cluster_count(m.original_filters);
  if (cfg.n_clusters < 2) throw ParameterError("cluster_filters: n_clusters must be at least 2");
  if (m.n_filters < cfg.n_clusters)
    throw LayerSkip("layer " + std::to_string(m.layer_id) + ": " + std::to_string(m.n_filters) +
                    " nonzero filters < " + std::to_string(cfg.n_clusters) + " clusters");

  const DenseMatrix s = cosine_distance_matrix(m);
  const DenseMatrix gamma = rbf_adjacency(s, cfg.bandwidth);
  const DenseMatrix d = degree_matrix(gamma);
  const DenseMatrix pi = normalized_laplacian(gamma, d);
  const DenseMatrix f = spectral_embedding(pi, cfg);
  const KMeansResult km = kmeans(f, cfg.n_clusters, seed);

  ClusterAssignment a;
  a.layer_id = m.layer_id;
  a.labels = km.labels;
  a.retained = m.active_index_map;
  a.groups.assign(cfg.n_clusters, {});
  for (std::size_t j = 0; j < km.labels.size(); ++j)
    a.groups[static_cast<std::size_t>(km.labels[j])].push_back(m.active_index_map[j]);
  for (auto& g : a.groups) std::sort(g.begin(), g.end());
  return a;
}

/// Clusters one layer's filters: reshape, drop zero filters, cosine
/// distance, RBF adjacency, normalized Laplacian, embedding and k-means.
/// Throws LayerSkip when the layer cannot be clustered this round.
inline ClusterAssignment cluster_filters(const Tensor& layer_weights, const SpectralConfig& cfg,
                                         std::uint64_t seed, std::size_t layer_id = 0) {
  const FilterMatrix full = reshape_filters(layer_weights, layer_id);
  FilterMatrix kept;
  try {
    kept = drop_zero_filters(full);
  } catch (const EmptyLayerError& e) {
    throw LayerSkip(e.what());
  }
  return cluster_filter_matrix(kept, cfg, seed);
}

}  // namespace scsp

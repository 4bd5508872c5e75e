#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scsp/errors.hpp"
#include "scsp/rng.hpp"

namespace scsp {

// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("DenseMatrix: data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double> col(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  DenseMatrix transpose() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline double symmetry_defect(const DenseMatrix& a) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) d = std::max(d, std::abs(a(i, j) - a(j, i)));
  return d;
}

inline double squared_distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition
// ---------------------------------------------------------------------------

struct EigenResult {
  std::vector<double> eigenvalues;  // ascending
  DenseMatrix eigenvectors;         // column j pairs with eigenvalues[j]
  int sweeps = 0;
};

struct JacobiOptions {
  double off_tolerance = 1e-10;
  int max_sweeps = 100;
  double symmetry_tolerance = 1e-9;
};

/// Full spectrum of a real symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps over every (p, q) pair, annihilating a_pq with a plane rotation,
/// until the off-diagonal Frobenius norm drops to the tolerance. The
/// accumulated rotations form the eigenvector matrix. Eigenpairs are returned
/// sorted by ascending eigenvalue, each eigenvector with a nonnegative
/// leading nonzero component so the output is unique for simple spectra.
inline EigenResult eigh_symmetric(const DenseMatrix& input, const JacobiOptions& opt = {}) {
  if (!input.square())
    throw DimensionError("eigh_symmetric: matrix is " + std::to_string(input.rows()) + "x" +
                         std::to_string(input.cols()));
  if (!input.all_finite()) throw NumericError("eigh_symmetric: non-finite entry");
  if (symmetry_defect(input) > opt.symmetry_tolerance)
    throw ContractError("eigh_symmetric: matrix is not symmetric");

  const std::size_t n = input.rows();
  DenseMatrix a = input;
  // Work on the exactly symmetrized copy.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));
  DenseMatrix v = DenseMatrix::identity(n);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };
  double frob = 0.0;
  for (double x : a.data()) frob += x * x;
  frob = std::sqrt(frob);
  // An absolute 1e-10 is unreachable in floating point for very large norms.
  const double tol = std::max(opt.off_tolerance, 1e-15 * frob);

  int sweep = 0;
  for (; sweep < opt.max_sweeps && off_norm() > tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (off_norm() > tol)
    throw NumericError("eigh_symmetric: no convergence after " + std::to_string(sweep) + " sweeps");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

  EigenResult out;
  out.sweeps = sweep;
  out.eigenvalues.resize(n);
  out.eigenvectors = DenseMatrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.eigenvalues[j] = a(src, src);
    double norm = 0.0;
    for (std::size_t k = 0; k < n; ++k) norm += v(k, src) * v(k, src);
    norm = std::sqrt(norm);
    double sign = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (std::abs(v(k, src)) > 1e-12) {
        sign = v(k, src) < 0.0 ? -1.0 : 1.0;
        break;
      }
    }
    for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, j) = sign * v(k, src) / norm;
  }
  return out;
}

// ---------------------------------------------------------------------------
// K-means
// ---------------------------------------------------------------------------

struct KMeansResult {
  std::vector<int> labels;
  DenseMatrix centers;  // k x dim
  double objective = 0.0;
  int iterations = 0;
  std::vector<double> objective_history;  // after each Lloyd iteration
};

/// Sum of squared distances of each point to its assigned center.
inline double kmeans_objective(const DenseMatrix& points, std::span<const int> labels,
                               const DenseMatrix& centers) {
  double obj = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i)
    obj += squared_distance(points.row(i), centers.row(static_cast<std::size_t>(labels[i])));
  return obj;
}

namespace detail {

// k-means++ seeding: first center uniform, the rest drawn with probability
// proportional to the squared distance to the nearest chosen center. When all
// remaining distances are zero the lowest unchosen index is taken.
inline DenseMatrix kmeanspp_seed(const DenseMatrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  DenseMatrix centers(k, dim);
  std::vector<bool> chosen(n, false);

  auto take = [&](std::size_t c, std::size_t idx) {
    chosen[idx] = true;
    auto src = points.row(idx);
    std::copy(src.begin(), src.end(), centers.row(c).begin());
  };

  take(0, static_cast<std::size_t>(uniform_index(rng, n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.row(i), centers.row(0));

  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!chosen[i]) total += d2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      const double r = uniform01(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i] || d2[i] == 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > r) break;
      }
    }
    if (pick == n) {
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) {
          pick = i;
          break;
        }
    }
    take(c, pick);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(points.row(i), centers.row(c)));
  }
  return centers;
}

inline void assign_nearest(const DenseMatrix& points, const DenseMatrix& centers,
                           std::vector<int>& labels, std::vector<double>& dist) {
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t c = 0; c < centers.rows(); ++c) {
      const double d = squared_distance(points.row(i), centers.row(c));
      if (d < best) {  // strict: ties stay with the lower center index
        best = d;
        arg = static_cast<int>(c);
      }
    }
    labels[i] = arg;
    dist[i] = best;
  }
}

// Moves the point farthest from its center into each empty cluster, taking
// only from clusters that keep at least one member.
inline void repair_empty(std::vector<int>& labels, std::vector<double>& dist, std::size_t k) {
  std::vector<std::size_t> sizes(k, 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  for (std::size_t c = 0; c < k; ++c) {
    if (sizes[c] != 0) continue;
    std::size_t far = labels.size();
    double best = -1.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (sizes[static_cast<std::size_t>(labels[i])] < 2) continue;
      if (dist[i] > best) {
        best = dist[i];
        far = i;
      }
    }
    if (far == labels.size()) break;  // unreachable when k <= n
    --sizes[static_cast<std::size_t>(labels[far])];
    labels[far] = static_cast<int>(c);
    dist[far] = 0.0;
    ++sizes[c];
  }
}

inline DenseMatrix recompute_centers(const DenseMatrix& points, std::span<const int> labels,
                                     std::size_t k) {
  DenseMatrix centers(k, points.cols());
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++sizes[c];
    auto dst = centers.row(c);
    auto src = points.row(i);
    for (std::size_t d = 0; d < src.size(); ++d) dst[d] += src[d];
  }
  for (std::size_t c = 0; c < k; ++c)
    if (sizes[c] > 0)
      for (double& x : centers.row(c)) x /= static_cast<double>(sizes[c]);
  return centers;
}

// Single-point moves: point i leaves cluster a for b whenever
//   |b| / (|b| + 1) * d(x, c_b) < |a| / (|a| - 1) * d(x, c_a)
// which lowers the objective by the difference. Repeats until no move helps.
// Returns true if any point moved.
inline bool hartigan_refine(const DenseMatrix& points, std::vector<int>& labels, DenseMatrix& centers,
                            std::size_t k) {
  const std::size_t n = points.rows();
  std::vector<double> sizes(k, 0.0);
  for (int l : labels) sizes[static_cast<std::size_t>(l)] += 1.0;
  bool any = false;
  for (std::size_t pass = 0; pass < 100 * n; ++pass) {
    bool moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = static_cast<std::size_t>(labels[i]);
      if (sizes[a] < 2.0) continue;
      const auto x = points.row(i);
      const double leave = sizes[a] / (sizes[a] - 1.0) * squared_distance(x, centers.row(a));
      std::size_t best = a;
      double best_cost = leave;
      for (std::size_t b = 0; b < k; ++b) {
        if (b == a) continue;
        const double join = sizes[b] / (sizes[b] + 1.0) * squared_distance(x, centers.row(b));
        if (join < best_cost - 1e-12 * std::max(1.0, leave)) {
          best = b;
          best_cost = join;
        }
      }
      if (best == a) continue;
      labels[i] = static_cast<int>(best);
      sizes[a] -= 1.0;
      sizes[best] += 1.0;
      centers = recompute_centers(points, labels, k);
      moved = any = true;
    }
    if (!moved) break;
  }
  return any;
}

// One k-means++ seeding followed by Lloyd iterations until the labels reach
// a fixed point or max_iters is hit.
inline KMeansResult lloyd(const DenseMatrix& points, std::size_t k, Rng& rng, int max_iters) {
  const std::size_t n = points.rows();
  KMeansResult res;
  res.centers = kmeanspp_seed(points, k, rng);
  res.labels.assign(n, -1);
  std::vector<int> labels(n, 0);
  std::vector<double> dist(n, 0.0);

  for (int it = 0; it < max_iters; ++it) {
    assign_nearest(points, res.centers, labels, dist);
    repair_empty(labels, dist, k);
    const bool fixed = labels == res.labels;
    res.labels = labels;
    res.centers = recompute_centers(points, res.labels, k);
    res.iterations = it + 1;
    res.objective_history.push_back(kmeans_objective(points, res.labels, res.centers));
    if (fixed) break;
  }
  if (hartigan_refine(points, res.labels, res.centers, k))
    res.objective_history.push_back(kmeans_objective(points, res.labels, res.centers));
  res.objective = kmeans_objective(points, res.labels, res.centers);
  return res;
}

}  // namespace detail

/// Best of n_init k-means++/Lloyd runs by objective. Deterministic for a
/// fixed seed.
inline KMeansResult kmeans(const DenseMatrix& points, std::size_t k, std::uint64_t seed,
                           int max_iters = 100, int n_init = 20) {
  const std::size_t n = points.rows();
  if (k == 0) throw ParameterError("kmeans: k must be at least 1");
  if (k > n)
    throw ParameterError("kmeans: k=" + std::to_string(k) + " exceeds point count " +
                         std::to_string(n));
  if (max_iters < 1) throw ParameterError("kmeans: max_iters must be at least 1");
  if (n_init < 1) throw ParameterError("kmeans: n_init must be at least 1");
  if (!points.all_finite()) throw NumericError("kmeans: non-finite point coordinate");

  // Restarts draw their seedings from one stream; the first strictly best run wins.
  Rng rng(seed);
  KMeansResult best = detail::lloyd(points, k, rng, max_iters);
  for (int r = 1; r < n_init; ++r) {
    KMeansResult cand = detail::lloyd(points, k, rng, max_iters);
    if (cand.objective < best.objective) best = std::move(cand);
  }
  return best;
}

}  // namespace scsp

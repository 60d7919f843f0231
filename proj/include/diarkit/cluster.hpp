// Copyright 2026  The diarkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Spectral clustering back-end with normalized-maximum-eigengap (NME)
// selection of the binarization parameter p and the cluster count k.
//
//   A      cosine affinity of the segment embeddings
//   A_p    row-wise top-p binarization of A (diagonal excluded)
//   Abar_p (A_p + A_p^T) / 2
//   L_p    D_p - Abar_p, D_p the diagonal of row sums
//   e_p    eigengaps lambda_{i+1} - lambda_i, i = 1..k_max
//   g_p    max_i e_p[i] / lambda_max
//   r(p)   p / g_p, minimized over p; k = argmax_i e_p[i] at that p

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "diarkit/errors.hpp"
#include "diarkit/numkit/matrix.hpp"
#include "diarkit/rng.hpp"

namespace diarkit {

using AffinityMatrix = Matrix;

inline AffinityMatrix cosine_affinity(const EmbeddingMatrix& x) {
  if (x.rows() < 1) throw ShapeError("cosine_affinity: no rows");
  const Matrix u = l2_normalize_rows(x);
  AffinityMatrix a(x.rows(), x.rows());
  a.noalias() = u * u.transpose();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    a(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
      const double v = std::clamp(0.5 * (a(i, j) + a(j, i)), -1.0, 1.0);
      a(i, j) = a(j, i) = v;
    }
  }
  return a;
}

// Keeps the p largest off-diagonal entries of each row (ties toward the lower
// column index) as 1, everything else 0, then averages with the transpose.
inline Matrix binarize_symmetrize(const AffinityMatrix& a, std::size_t p) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw ShapeError("binarize_symmetrize: affinity must be square");
  if (p < 1 || static_cast<Eigen::Index>(p) > n - 1)
    throw RangeError("binarize_symmetrize: p = " + std::to_string(p) + " outside [1, " + std::to_string(n - 1) + "]");
  Matrix ap = Matrix::Zero(n, n);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t k = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) order[k++] = j;
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(p), order.end(),
                      [&](Eigen::Index x, Eigen::Index y) {
                        if (a(i, x) != a(i, y)) return a(i, x) > a(i, y);
                        return x < y;
                      });
    for (std::size_t t = 0; t < p; ++t) ap(i, order[t]) = 1.0;
  }
  return 0.5 * (ap + ap.transpose());
}

inline Matrix laplacian(const Matrix& abar) {
  if (abar.rows() != abar.cols()) throw ShapeError("laplacian: matrix must be square");
  Matrix l = -abar;
  const Vector deg = abar.rowwise().sum();
  l.diagonal() += deg;
  return l;
}

struct EigenDecomposition {
  Vector values;   // ascending
  Matrix vectors;  // column j pairs with values[j]; empty if not requested
};

// Symmetric eigendecomposition (Householder tridiagonalization + implicit QR).
inline EigenDecomposition eig_sym(const Matrix& m, bool want_vectors = true) {
  if (m.rows() != m.cols()) throw ShapeError("eig_sym: matrix must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (((m - m.transpose()).cwiseAbs().maxCoeff()) > 1e-10 * scale)
    throw ContractError("eig_sym: matrix is not symmetric");
  Eigen::MatrixXd dense = m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      dense, want_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("eig_sym: eigensolver did not converge");
  EigenDecomposition out;
  out.values = solver.eigenvalues();
  if (want_vectors) out.vectors = solver.eigenvectors();
  return out;
}

struct NmeTracePoint {
  std::size_t p = 0;
  double g = 0.0;  // normalized maximum eigengap
  double r = 0.0;  // p / g
  std::size_t k = 0;
};

struct NmeResult {
  std::size_t p_hat = 0;
  std::size_t k_hat = 0;
  Vector eigenvalues;  // of L_{p_hat}, ascending
  Vector eigengaps;    // e[i-1] = lambda_{i+1} - lambda_i, i = 1..k_max
  std::vector<NmeTracePoint> trace;
};

// Candidate binarization counts; 0 selects the default bound.
struct PRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

// p in [2, ceil(n / 4)], capped at n - 1. p = 1 is left out by default: the
// mutual-nearest-neighbour graph is a forest of small fragments, and its
// eigengap counts fragments rather than speakers.
inline PRange default_p_range(std::size_t n) {
  const std::size_t hi = std::min<std::size_t>(std::max<std::size_t>(1, (n + 3) / 4), n - 1);
  return {std::min<std::size_t>(2, hi), hi};
}

namespace detail {

inline std::size_t argmax_first(const Vector& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  return best;
}

inline Vector eigengaps(const Vector& lambda, std::size_t k_max) {
  Vector e(static_cast<Eigen::Index>(k_max));
  for (std::size_t i = 0; i < k_max; ++i)
    e[static_cast<Eigen::Index>(i)] = lambda[static_cast<Eigen::Index>(i + 1)] - lambda[static_cast<Eigen::Index>(i)];
  return e;
}

}  // namespace detail

inline NmeResult nme_select(const AffinityMatrix& a, PRange range, std::size_t k_max) {
  const auto n = static_cast<std::size_t>(a.rows());
  if (n < 2) throw ShapeError("nme_select: need at least 2 segments");
  const PRange def = default_p_range(n);
  if (range.lo == 0) range.lo = std::min(def.lo, range.hi == 0 ? def.hi : range.hi);
  if (range.hi == 0) range.hi = std::max(def.hi, range.lo);
  range.hi = std::min(range.hi, n - 1);
  if (range.lo < 1 || range.lo > range.hi)
    throw RangeError("nme_select: empty p range [" + std::to_string(range.lo) + ", " + std::to_string(range.hi) + "]");
  if (k_max < 1) throw RangeError("nme_select: k_max must be at least 1");
  k_max = std::min(k_max, n - 1);

  constexpr double eps = 1e-12;
  NmeResult res;
  double best_r = std::numeric_limits<double>::infinity();
  bool any_gap = false;
  for (std::size_t p = range.lo; p <= range.hi; ++p) {
    const Vector lambda = eig_sym(laplacian(binarize_symmetrize(a, p)), false).values;
    const Vector e = detail::eigengaps(lambda, k_max);
    const std::size_t i_max = detail::argmax_first(e);
    const double g = e[static_cast<Eigen::Index>(i_max)] / std::max(lambda[lambda.size() - 1], eps);
    NmeTracePoint tp;
    tp.p = p;
    tp.g = g;
    tp.k = i_max + 1;
    tp.r = g > 0.0 ? static_cast<double>(p) / g : std::numeric_limits<double>::infinity();
    res.trace.push_back(tp);
    if (g > 0.0) any_gap = true;
    if (tp.r < best_r) {
      best_r = tp.r;
      res.p_hat = p;
      res.k_hat = tp.k;
      res.eigenvalues = lambda;
      res.eigengaps = e;
    }
  }
  if (!any_gap) throw NumericalError("nme_select: degenerate affinity, every eigengap is zero");
  return res;
}

inline void write_nme_trace_csv(std::ostream& os, const NmeResult& r) {
  os << "p,g_p,r,k_at_p\n";
  char buf[128];
  for (const NmeTracePoint& t : r.trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%zu\n", t.p, t.g, t.r, t.k);
    os << buf;
  }
}

struct ClusterAssignment {
  std::vector<int> labels;  // canonical: first occurrence order 0, 1, 2, ...
  std::size_t k = 0;
  double inertia = 0.0;
};

struct KmeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iter = 300;
  double tol = 1e-9;  // stop when no centroid moves more than this
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<int> canonical_labels(const std::vector<int>& labels, std::size_t k) {
  std::vector<int> map(k, -1);
  int next = 0;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int& m = map[static_cast<std::size_t>(labels[i])];
    if (m < 0) m = next++;
    out[i] = m;
  }
  return out;
}

struct KmeansRun {
  std::vector<int> labels;
  double inertia = 0.0;
  std::vector<double> trace;
};

inline KmeansRun kmeans_once(const Matrix& x, std::size_t k, const KmeansOptions& opt, Rng& rng) {
  const Eigen::Index n = x.rows();
  const auto K = static_cast<Eigen::Index>(k);
  Matrix centers(K, x.cols());

  // k-means++ seeding.
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  Eigen::Index first = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
  centers.row(0) = x.row(first);
  chosen[static_cast<std::size_t>(first)] = 1;
  Vector d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Eigen::Index c = 1; c < K; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = -1;
    if (total > 0.0) {
      double u = uniform01(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        u -= d2[i];
        if (u < 0.0) break;
      }
    } else {
      // All remaining points coincide with a center: take the next unused index.
      for (Eigen::Index i = 0; i < n && pick < 0; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) pick = i;
    }
    centers.row(c) = x.row(pick);
    chosen[static_cast<std::size_t>(pick)] = 1;
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  KmeansRun run;
  run.labels.assign(static_cast<std::size_t>(n), 0);
  Vector dist(n);
  for (std::size_t iter = 0; iter < opt.max_iter; ++iter) {
    // Assignment, ties toward the lower centroid index.
    std::vector<std::size_t> count(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = (x.row(i) - centers.row(0)).squaredNorm();
      for (Eigen::Index c = 1; c < K; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = static_cast<int>(c);
        }
      }
      run.labels[static_cast<std::size_t>(i)] = best;
      dist[i] = bd;
      ++count[static_cast<std::size_t>(best)];
    }
    // Empty cluster: move the point farthest from its centroid into it.
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] != 0) continue;
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (count[static_cast<std::size_t>(run.labels[static_cast<std::size_t>(i)])] < 2) continue;
        if (far < 0 || dist[i] > dist[far]) far = i;
      }
      --count[static_cast<std::size_t>(run.labels[static_cast<std::size_t>(far)])];
      run.labels[static_cast<std::size_t>(far)] = static_cast<int>(c);
      count[c] = 1;
      dist[far] = 0.0;
      centers.row(static_cast<Eigen::Index>(c)) = x.row(far);
    }
    run.trace.push_back(dist.sum());

    Matrix next = Matrix::Zero(K, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) next.row(run.labels[static_cast<std::size_t>(i)]) += x.row(i);
    for (Eigen::Index c = 0; c < K; ++c) next.row(c) /= static_cast<double>(count[static_cast<std::size_t>(c)]);
    const double shift = (next - centers).rowwise().norm().maxCoeff();
    centers = next;
    if (shift < opt.tol) break;
  }
  run.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    run.inertia += (x.row(i) - centers.row(run.labels[static_cast<std::size_t>(i)])).squaredNorm();
  return run;
}

}  // namespace detail

// Lloyd k-means with k-means++ seeding; the restart with the lowest inertia
// wins (earliest on ties). `inertia_trace`, when given, receives the
// per-iteration inertia of the winning restart.
inline ClusterAssignment kmeans(const Matrix& x, std::size_t k, const KmeansOptions& opt = {},
                                std::vector<double>* inertia_trace = nullptr) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k < 1 || k > n) throw RangeError("kmeans: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  if (opt.restarts < 1) throw ConfigError("kmeans: restarts must be at least 1");
  std::optional<detail::KmeansRun> best;
  for (std::size_t r = 0; r < opt.restarts; ++r) {
    Rng rng(derive_seed(opt.seed, r));
    detail::KmeansRun run = detail::kmeans_once(x, k, opt, rng);
    if (!best || run.inertia < best->inertia) best = std::move(run);
  }
  ClusterAssignment out;
  out.k = k;
  out.inertia = best->inertia;
  out.labels = detail::canonical_labels(best->labels, k);
  if (inertia_trace != nullptr) *inertia_trace = best->trace;
  return out;
}

struct SpectralMode {
  enum class Kind { known_k, estimate };
  Kind kind = Kind::estimate;
  std::size_t k = 0;   // known_k
  std::size_t p = 0;   // known_k: fixed binarization p
  PRange p_range;      // estimate
  std::size_t k_max = 10;

  static SpectralMode known(std::size_t k, std::size_t p) {
    SpectralMode m;
    m.kind = Kind::known_k;
    m.k = k;
    m.p = p;
    return m;
  }
  static SpectralMode estimate_k(PRange range = {}, std::size_t k_max = 10) {
    SpectralMode m;
    m.kind = Kind::estimate;
    m.p_range = range;
    m.k_max = k_max;
    return m;
  }
};

struct SpectralResult {
  ClusterAssignment assignment;
  std::optional<NmeResult> nme;
  std::size_t p_used = 0;
};

// Clusters the rows of the n x k matrix of eigenvectors of the k smallest
// Laplacian eigenvalues.
inline SpectralResult spectral_cluster_affinity(const AffinityMatrix& a, const SpectralMode& mode,
                                                const KmeansOptions& km = {}) {
  const auto n = static_cast<std::size_t>(a.rows());
  if (n < 2) throw ShapeError("spectral_cluster: need at least 2 segments");
  SpectralResult out;
  std::size_t k = 0;
  if (mode.kind == SpectralMode::Kind::known_k) {
    if (mode.k < 1 || mode.k > n) throw RangeError("spectral_cluster: k outside [1, n]");
    out.p_used = std::clamp<std::size_t>(mode.p, 1, n - 1);
    k = mode.k;
  } else {
    out.nme = nme_select(a, mode.p_range, mode.k_max);
    out.p_used = out.nme->p_hat;
    k = out.nme->k_hat;
  }
  if (k == 1) {
    out.assignment.k = 1;
    out.assignment.labels.assign(n, 0);
    return out;
  }
  const EigenDecomposition ed = eig_sym(laplacian(binarize_symmetrize(a, out.p_used)));
  const Matrix embedding = ed.vectors.leftCols(static_cast<Eigen::Index>(k));
  out.assignment = kmeans(embedding, k, km);
  return out;
}

inline SpectralResult spectral_cluster(const EmbeddingMatrix& x, const SpectralMode& mode,
                                       const KmeansOptions& km = {}) {
  return spectral_cluster_affinity(cosine_affinity(x), mode, km);
}

}  // namespace diarkit

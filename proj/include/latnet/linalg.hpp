#ifndef LATNET_LINALG_HPP
#define LATNET_LINALG_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "latnet/errors.hpp"
#include "latnet/matrix.hpp"
#include "latnet/rng.hpp"

namespace latnet {

inline double symmetry_tolerance(const DenseMatrix& a) {
  return 1e-12 * std::max(1.0, max_abs(a));
}

/// Solves A X = B for symmetric positive-definite A by Cholesky
/// factorization. Throws NotPositiveDefinite when a pivot is not strictly
/// positive; regularization is the caller's responsibility.
inline DenseMatrix cholesky_solve(const DenseMatrix& a, const DenseMatrix& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionMismatch("cholesky_solve: A must be square");
  if (b.rows() != n) throw DimensionMismatch("cholesky_solve: B row count must match A");
  if (!is_symmetric(a, symmetry_tolerance(a)))
    throw NonSymmetric("cholesky_solve: A is not symmetric");

  // lower-triangular factor, A = L L^T
  DenseMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw NotPositiveDefinite("cholesky_solve: non-positive pivot");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }

  DenseMatrix x = b;
  for (std::size_t c = 0; c < b.cols(); ++c) {
    // forward substitution, L y = b
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
      x(i, c) = s / l(i, i);
    }
    // back substitution, L^T x = y
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
      x(ii, c) = s / l(ii, ii);
    }
  }
  return x;
}

/// Eigendecomposition of a symmetric matrix: ascending eigenvalues and the
/// matching orthonormal eigenvectors as columns.
struct SymEigResult {
  std::vector<double> eigenvalues;
  DenseMatrix eigenvectors;  // column i pairs with eigenvalues[i]
};

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// 1e-12 times the Frobenius norm of the input. Intended for the moderate
/// sizes used here (up to a couple thousand); throws NoConvergence after the
/// sweep budget.
inline SymEigResult sym_eig(const DenseMatrix& input, int max_sweeps = 100) {
  const std::size_t n = input.rows();
  if (input.cols() != n) throw DimensionMismatch("sym_eig: matrix must be square");
  if (!is_symmetric(input, symmetry_tolerance(input)))
    throw NonSymmetric("sym_eig: matrix is not symmetric");

  DenseMatrix a = input;
  DenseMatrix v = DenseMatrix::identity(n);

  auto off_diagonal_sq = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return s;
  };

  const double total_sq = frobenius_norm(input) * frobenius_norm(input);
  const double target_sq = 1e-24 * total_sq;  // (1e-12 * ||A||_F)^2

  bool converged = off_diagonal_sq() <= target_sq;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double sign = theta >= 0.0 ? 1.0 : -1.0;
        const double t = sign / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);

        const double app = a(p, p);
        const double aqq = a(q, q);
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r != p && r != q) {
            const double arp = a(r, p);
            const double arq = a(r, q);
            a(r, p) = a(p, r) = arp - s * (arq + tau * arp);
            a(r, q) = a(q, r) = arq + s * (arp - tau * arq);
          }
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = vrp - s * (vrq + tau * vrp);
          v(r, q) = vrq + s * (vrp - tau * vrq);
        }
      }
    }
    converged = off_diagonal_sq() <= target_sq;
  }
  if (!converged) throw NoConvergence("sym_eig: Jacobi sweeps exhausted");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

  SymEigResult out;
  out.eigenvalues.resize(n);
  out.eigenvectors = DenseMatrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, k) = v(r, order[k]);
  }
  return out;
}

struct KMeansResult {
  std::vector<int> labels;
  DenseMatrix centers;  // k x dims
  double within_ss = 0.0;
  std::vector<double> objective_history;  // per-Lloyd-iteration SS of the winning restart
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

struct LloydRun {
  std::vector<int> labels;
  DenseMatrix centers;
  double within_ss = std::numeric_limits<double>::infinity();
  std::vector<double> history;
};

inline LloydRun kmeans_once(const DenseMatrix& points, std::size_t k, Rng& rng,
                            int max_iters) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();

  // k-means++ seeding
  DenseMatrix centers(k, d);
  std::vector<double> dist_sq(n, std::numeric_limits<double>::infinity());
  {
    const std::size_t first = rng.uniform_int(n);
    for (std::size_t j = 0; j < d; ++j) centers(0, j) = points(first, j);
    for (std::size_t c = 1; c < k; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        dist_sq[i] = std::min(dist_sq[i], sq_dist(points.row(i), centers.row(c - 1), d));
        total += dist_sq[i];
      }
      std::size_t pick = 0;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += dist_sq[i];
          if (acc > target) {
            pick = i;
            break;
          }
        }
      } else {
        pick = rng.uniform_int(n);
      }
      for (std::size_t j = 0; j < d; ++j) centers(c, j) = points(pick, j);
    }
  }

  LloydRun run;
  run.labels.assign(n, -1);
  std::vector<std::size_t> counts(k, 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    // assignment step; ties go to the lowest center index
    bool changed = false;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(points.row(i), centers.row(0), d);
      for (std::size_t c = 1; c < k; ++c) {
        const double dc = sq_dist(points.row(i), centers.row(c), d);
        if (dc < best_d) {
          best_d = dc;
          best = static_cast<int>(c);
        }
      }
      if (run.labels[i] != best) {
        run.labels[i] = best;
        changed = true;
      }
      ss += best_d;
    }
    run.history.push_back(ss);
    if (!changed) break;

    // update step
    centers.fill(0.0);
    std::fill(counts.begin(), counts.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = static_cast<std::size_t>(run.labels[i]);
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) centers(c, j) += points(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // re-seed an empty cluster at the point farthest from its center
        std::size_t worst = 0;
        double worst_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t ci = static_cast<std::size_t>(run.labels[i]);
          if (counts[ci] <= 1) continue;
          const double di = sq_dist(points.row(i), centers.row(ci), d);
          if (di > worst_d) {
            worst_d = di;
            worst = i;
          }
        }
        for (std::size_t j = 0; j < d; ++j) centers(c, j) = points(worst, j);
        counts[c] = 1;
      } else {
        for (std::size_t j = 0; j < d; ++j) centers(c, j) /= static_cast<double>(counts[c]);
      }
    }
  }

  run.within_ss = run.history.empty() ? 0.0 : run.history.back();
  run.centers = std::move(centers);
  return run;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding, deterministic for a given seed.
/// Runs `restarts` independent seedings and keeps the lowest within-cluster
/// sum of squares.
inline KMeansResult kmeans(const DenseMatrix& points, std::size_t k, std::uint64_t seed,
                           int restarts = 10, int max_iters = 300) {
  const std::size_t n = points.rows();
  if (n == 0) throw EmptyInput("kmeans: no points");
  if (k == 0 || k > n) throw InvalidCount("kmeans: k must be in [1, rows]");

  detail::LloydRun best;
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    detail::LloydRun run = detail::kmeans_once(points, k, rng, max_iters);
    if (run.within_ss < best.within_ss) best = std::move(run);
  }

  KMeansResult out;
  out.labels = std::move(best.labels);
  out.centers = std::move(best.centers);
  out.within_ss = best.within_ss;
  out.objective_history = std::move(best.history);
  return out;
}

}  // namespace latnet

#endif  // LATNET_LINALG_HPP

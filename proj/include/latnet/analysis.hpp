#ifndef LATNET_ANALYSIS_HPP
#define LATNET_ANALYSIS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "latnet/errors.hpp"
#include "latnet/linalg.hpp"
#include "latnet/matrix.hpp"
#include "latnet/model.hpp"
#include "latnet/rng.hpp"
#include "latnet/sampler.hpp"

namespace latnet {

namespace detail {

inline double median_of(std::vector<double> values) {
  if (values.empty()) throw EmptyInput("median_of: no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace detail

/// Euclidean distances between all row pairs; exactly symmetric with a zero
/// diagonal.
inline DenseMatrix pairwise_distances(const DenseMatrix& x) {
  const std::size_t n = x.rows();
  DenseMatrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) {
        const double delta = x(i, k) - x(j, k);
        s += delta * delta;
      }
      const double dist = std::sqrt(s);
      d(i, j) = dist;
      d(j, i) = dist;
    }
  }
  return d;
}

/// Distance-matrix discrepancy: the Frobenius norm over all N^2 entries,
/// divided by N.
inline double distance_error(const DenseMatrix& dk, const DenseMatrix& d) {
  if (dk.rows() != d.rows() || dk.cols() != d.cols() || dk.rows() != dk.cols())
    throw SizeMismatch("distance_error: matrices must be square and equal-sized");
  double s = 0.0;
  for (std::size_t i = 0; i < dk.rows(); ++i)
    for (std::size_t j = 0; j < dk.cols(); ++j) {
      const double delta = dk(i, j) - d(i, j);
      s += delta * delta;
    }
  return std::sqrt(s) / static_cast<double>(dk.rows());
}

/// Samples distinct observation pairs, both ends free, without replacement.
inline std::vector<std::pair<std::size_t, std::size_t>> random_free_pairs(
    std::size_t n_obs, const std::vector<std::size_t>& anchored, std::uint64_t seed,
    std::size_t count = 6) {
  std::vector<char> is_anchored(n_obs, 0);
  for (std::size_t idx : anchored) {
    if (idx >= n_obs) throw IndexOutOfRange("random_free_pairs: anchor index out of range");
    is_anchored[idx] = 1;
  }
  std::vector<std::size_t> free_idx;
  for (std::size_t i = 0; i < n_obs; ++i)
    if (!is_anchored[i]) free_idx.push_back(i);
  const std::size_t f = free_idx.size();
  if (count > f * (f - 1) / 2)
    throw InvalidCount("random_free_pairs: not enough free pairs");
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  while (pairs.size() < count) {
    std::size_t a = free_idx[rng.uniform_int(f)];
    std::size_t b = free_idx[rng.uniform_int(f)];
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    const std::pair<std::size_t, std::size_t> candidate{a, b};
    if (std::find(pairs.begin(), pairs.end(), candidate) != pairs.end()) continue;
    pairs.push_back(candidate);
  }
  return pairs;
}

/// Per-chain series of latent pairwise distances, one column per requested
/// pair. Anchored rows take their fixed values, so anchored-anchored pairs
/// yield constant series.
inline std::vector<DenseMatrix> distance_trace(
    const ParamLayout& layout, const AnchorValues& anchors,
    const std::vector<ChainTrace>& traces,
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  for (const auto& pair : pairs)
    if (pair.first >= layout.n || pair.second >= layout.n)
      throw IndexOutOfRange("distance_trace: pair index out of range");
  std::vector<DenseMatrix> out;
  out.reserve(traces.size());
  std::vector<double> xi(layout.q), xj(layout.q);
  for (const auto& trace : traces) {
    DenseMatrix series(trace.draws.rows(), pairs.size());
    for (std::size_t k = 0; k < trace.draws.rows(); ++k) {
      const double* z = trace.draws.row(k);
      for (std::size_t c = 0; c < pairs.size(); ++c) {
        fill_latent_row(layout, anchors, z, pairs[c].first, xi.data());
        fill_latent_row(layout, anchors, z, pairs[c].second, xj.data());
        double s = 0.0;
        for (std::size_t j = 0; j < layout.q; ++j) {
          const double delta = xi[j] - xj[j];
          s += delta * delta;
        }
        series(k, c) = std::sqrt(s);
      }
    }
    out.push_back(std::move(series));
  }
  return out;
}

namespace detail {

struct SplitMoments {
  std::size_t n_split = 0;     // number of half-chains
  std::size_t len = 0;         // draws per half-chain
  std::vector<double> means;   // per half-chain
  std::vector<double> vars;    // per half-chain, unbiased
  double w = 0.0;              // mean within-chain variance
  double b_over_len = 0.0;     // between-chain variance of means
  double var_plus = 0.0;
  double grand_mean = 0.0;
};

inline std::vector<std::vector<double>> split_halves(
    const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw TooFewDraws("split chains: need at least 2 chains");
  const std::size_t n = chains.front().size();
  for (const auto& chain : chains) {
    if (chain.size() != n) throw SizeMismatch("split chains: unequal chain lengths");
    if (chain.size() < 4) throw TooFewDraws("split chains: need at least 4 draws per chain");
  }
  const std::size_t half = n / 2;
  std::vector<std::vector<double>> splits;
  splits.reserve(2 * chains.size());
  for (const auto& chain : chains) {
    splits.emplace_back(chain.begin(), chain.begin() + half);
    splits.emplace_back(chain.end() - half, chain.end());
  }
  return splits;
}

inline SplitMoments split_moments(const std::vector<std::vector<double>>& splits) {
  SplitMoments m;
  m.n_split = splits.size();
  m.len = splits.front().size();
  const double len = static_cast<double>(m.len);
  for (const auto& split : splits) {
    double mean = 0.0;
    for (double v : split) mean += v;
    mean /= len;
    double var = 0.0;
    for (double v : split) var += (v - mean) * (v - mean);
    var /= (len - 1.0);
    m.means.push_back(mean);
    m.vars.push_back(var);
    m.w += var;
    m.grand_mean += mean;
  }
  m.w /= static_cast<double>(m.n_split);
  m.grand_mean /= static_cast<double>(m.n_split);
  for (double mean : m.means)
    m.b_over_len += (mean - m.grand_mean) * (mean - m.grand_mean);
  m.b_over_len /= static_cast<double>(m.n_split - 1);
  m.var_plus = (len - 1.0) / len * m.w + m.b_over_len;
  return m;
}

}  // namespace detail

/// Split-chain potential scale reduction factor. Each chain is halved; the
/// statistic compares between-half and within-half variances. Zero total
/// variance returns 1 by convention.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  const auto moments = detail::split_moments(detail::split_halves(chains));
  if (moments.var_plus == 0.0) return 1.0;
  if (moments.w == 0.0) return std::numeric_limits<double>::infinity();
  return std::sqrt(moments.var_plus / moments.w);
}

/// Effective sample size across split chains, using per-chain
/// autocovariances combined with Geyer's initial monotone positive-pair
/// truncation.
inline double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  const auto splits = detail::split_halves(chains);
  const auto moments = detail::split_moments(splits);
  const std::size_t m = moments.n_split;
  const std::size_t len = moments.len;
  const double total = static_cast<double>(m * len);
  if (moments.var_plus == 0.0) return total;

  DenseMatrix acov(m, len);
  for (std::size_t c = 0; c < m; ++c) {
    const auto& split = splits[c];
    const double mean = moments.means[c];
    for (std::size_t t = 0; t < len; ++t) {
      double s = 0.0;
      for (std::size_t i = 0; i + t < len; ++i) s += (split[i] - mean) * (split[i + t] - mean);
      acov(c, t) = s / static_cast<double>(len);
    }
  }

  auto rho = [&](std::size_t t) {
    double mean_acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) mean_acov += acov(c, t);
    mean_acov /= static_cast<double>(m);
    return 1.0 - (moments.w - mean_acov) / moments.var_plus;
  };

  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; 2 * t + 1 < len; ++t) {
    double pair = rho(2 * t) + rho(2 * t + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    tau += 2.0 * pair;
    prev_pair = pair;
  }
  if (!(tau > 0.0)) return total;
  return total / tau;
}

/// Monte Carlo standard error of the pooled posterior mean.
inline double mcse_mean(const std::vector<std::vector<double>>& chains) {
  const auto moments = detail::split_moments(detail::split_halves(chains));
  return std::sqrt(moments.var_plus / effective_sample_size(chains));
}

inline double pooled_mean(const std::vector<std::vector<double>>& chains) {
  if (chains.empty()) throw EmptyInput("pooled_mean: no chains");
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& chain : chains) {
    for (double v : chain) s += v;
    n += chain.size();
  }
  if (n == 0) throw EmptyInput("pooled_mean: no draws");
  return s / static_cast<double>(n);
}

/// Spectral clustering of a distance matrix: Gaussian affinity with the
/// median off-diagonal distance as bandwidth, symmetric normalized
/// Laplacian, bottom-k eigenvectors with row normalization, then k-means.
inline std::vector<int> spectral_cluster(const DenseMatrix& d, std::size_t k,
                                         std::uint64_t seed) {
  if (d.rows() != d.cols()) throw SizeMismatch("spectral_cluster: distance matrix not square");
  if (k < 2) throw InvalidCount("spectral_cluster: need at least 2 clusters");
  const std::size_t n = d.rows();
  std::vector<double> off_diag;
  off_diag.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) off_diag.push_back(d(i, j));
  double bandwidth = off_diag.empty() ? 1.0 : detail::median_of(off_diag);
  if (!(bandwidth > 0.0)) bandwidth = 1.0;
  const double inv_two_sq = 1.0 / (2.0 * bandwidth * bandwidth);

  DenseMatrix affinity(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    affinity(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = std::exp(-d(i, j) * d(i, j) * inv_two_sq);
      affinity(i, j) = a;
      affinity(j, i) = a;
    }
  }
  std::vector<double> inv_sqrt_degree(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += affinity(i, j);
    inv_sqrt_degree[i] = 1.0 / std::sqrt(s);
  }
  DenseMatrix laplacian(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    laplacian(i, i) = 1.0 - affinity(i, i) * inv_sqrt_degree[i] * inv_sqrt_degree[i];
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = -affinity(i, j) * inv_sqrt_degree[i] * inv_sqrt_degree[j];
      laplacian(i, j) = v;
      laplacian(j, i) = v;
    }
  }
  const SymEigResult eig = sym_eig(laplacian);
  DenseMatrix embedding(n, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) embedding(i, j) = eig.eigenvectors(i, j);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += embedding(i, j) * embedding(i, j);
    if (s > 0.0) {
      const double inv = 1.0 / std::sqrt(s);
      for (std::size_t j = 0; j < k; ++j) embedding(i, j) *= inv;
    }
  }
  return kmeans(embedding, k, seed).labels;
}

/// Binary same-cluster indicator of one partition; symmetric with unit
/// diagonal.
inline DenseMatrix clustering_matrix(const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  DenseMatrix c(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    c(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = labels[i] == labels[j] ? 1.0 : 0.0;
      c(i, j) = v;
      c(j, i) = v;
    }
  }
  return c;
}

/// Streaming mean of per-draw clustering matrices.
inline DenseMatrix coclustering_probability(const std::vector<std::vector<int>>& draws) {
  if (draws.empty()) throw EmptyInput("coclustering_probability: no draws");
  const std::size_t n = draws.front().size();
  DenseMatrix sum(n, n);
  for (const auto& labels : draws) {
    if (labels.size() != n)
      throw SizeMismatch("coclustering_probability: label vectors differ in length");
    for (std::size_t i = 0; i < n; ++i) {
      sum(i, i) += 1.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (labels[i] == labels[j]) {
          sum(i, j) += 1.0;
          sum(j, i) += 1.0;
        }
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(draws.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sum(i, j) *= inv;
  return sum;
}

struct CoClusteringResult {
  DenseMatrix probability;
  std::vector<DenseMatrix> indicators;
};

/// Per-draw clustering matrices plus their mean. Prefer
/// coclustering_probability when only the mean is needed; the indicators are
/// dense and one is kept per draw.
inline CoClusteringResult coclustering(const std::vector<std::vector<int>>& draws) {
  CoClusteringResult out;
  out.probability = coclustering_probability(draws);
  out.indicators.reserve(draws.size());
  for (const auto& labels : draws) out.indicators.push_back(clustering_matrix(labels));
  return out;
}

struct DahlResult {
  std::size_t index = 0;
  std::vector<int> labels;
  double objective = 0.0;
};

/// Extracts partition labels from a clustering indicator, numbering clusters
/// by first appearance.
inline std::vector<int> partition_labels(const DenseMatrix& indicator) {
  const std::size_t n = indicator.rows();
  std::vector<int> labels(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= 0) continue;
    labels[i] = next++;
    for (std::size_t j = i + 1; j < n; ++j)
      if (indicator(i, j) > 0.5) labels[j] = labels[i];
  }
  return labels;
}

namespace detail {

inline double dahl_objective(const std::vector<int>& labels, const DenseMatrix& probability) {
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j) {
      const double c = labels[i] == labels[j] ? 1.0 : 0.0;
      const double delta = c - probability(i, j);
      s += delta * delta;
    }
  return s;
}

}  // namespace detail

/// Least-squares draw selection: the draw whose clustering matrix is closest
/// in squared error to the co-clustering probabilities. Ties keep the
/// earliest draw.
inline DahlResult dahl_least_squares(const std::vector<std::vector<int>>& draws,
                                     const DenseMatrix& probability) {
  if (draws.empty()) throw EmptyInput("dahl_least_squares: no draws");
  DahlResult best;
  best.objective = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < draws.size(); ++k) {
    if (draws[k].size() != probability.rows())
      throw SizeMismatch("dahl_least_squares: label vector does not match probability matrix");
    const double obj = detail::dahl_objective(draws[k], probability);
    if (obj < best.objective) {
      best.objective = obj;
      best.index = k;
    }
  }
  best.labels = draws[best.index];
  return best;
}

inline DahlResult dahl_least_squares(const std::vector<DenseMatrix>& indicators,
                                     const DenseMatrix& probability) {
  if (indicators.empty()) throw EmptyInput("dahl_least_squares: no draws");
  DahlResult best;
  best.objective = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < indicators.size(); ++k) {
    const DenseMatrix& c = indicators[k];
    if (c.rows() != probability.rows() || c.cols() != probability.cols())
      throw SizeMismatch("dahl_least_squares: indicator does not match probability matrix");
    double obj = 0.0;
    for (std::size_t i = 0; i < c.rows(); ++i)
      for (std::size_t j = 0; j < c.cols(); ++j) {
        const double delta = c(i, j) - probability(i, j);
        obj += delta * delta;
      }
    if (obj < best.objective) {
      best.objective = obj;
      best.index = k;
    }
  }
  best.labels = partition_labels(indicators[best.index]);
  return best;
}

/// Stable observation ordering by label, for heatmap row ordering.
inline std::vector<std::size_t> order_by_labels(const std::vector<int>& labels) {
  std::vector<std::size_t> order(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });
  return order;
}

}  // namespace latnet

#endif  // LATNET_ANALYSIS_HPP

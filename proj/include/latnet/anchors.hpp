#ifndef LATNET_ANCHORS_HPP
#define LATNET_ANCHORS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "latnet/errors.hpp"
#include "latnet/linalg.hpp"
#include "latnet/matrix.hpp"
#include "latnet/model.hpp"
#include "latnet/rng.hpp"

namespace latnet {

struct LLEConfig {
  std::size_t n_neighbors = 5;
  double ridge = 1e-3;
  std::size_t target_dim = 0;

  void validate() const {
    if (n_neighbors < 1) throw InvalidCount("LLEConfig: n_neighbors must be >= 1");
    if (!(ridge >= 0.0)) throw InvalidCount("LLEConfig: ridge must be >= 0");
    if (target_dim < 1) throw InvalidCount("LLEConfig: target_dim must be >= 1");
  }
};

struct AnchorSet {
  std::vector<std::size_t> indices;
  DenseMatrix values;            // N_ref x q, rescaled coordinates
  std::vector<double> column_norms;
  DenseMatrix source_embedding;  // N_ref x q, pre-rescale
  std::uint64_t seed = 0;
  LLEConfig config;
};

inline AnchorValues anchor_values(const AnchorSet& set) {
  return AnchorValues{set.indices, set.values};
}

/// Uniform draw of N_ref distinct indices from [0, N), returned sorted.
inline std::vector<std::size_t> select_anchors(std::size_t n, std::size_t n_ref,
                                               std::uint64_t seed) {
  if (n_ref == 0 || n_ref >= n)
    throw InvalidCount("select_anchors: need 0 < N_ref < N");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < n_ref; ++i) {
    const std::size_t j = i + rng.uniform_int(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n_ref);
  std::sort(pool.begin(), pool.end());
  return pool;
}

namespace detail {

inline std::vector<std::size_t> nearest_neighbors(const DenseMatrix& y, std::size_t i,
                                                  std::size_t k) {
  std::vector<std::pair<double, std::size_t>> ranked;
  ranked.reserve(y.rows() - 1);
  for (std::size_t j = 0; j < y.rows(); ++j) {
    if (j == i) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) {
      const double delta = y(i, c) - y(j, c);
      s += delta * delta;
    }
    ranked.emplace_back(s, j);
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<std::size_t> out(k);
  for (std::size_t a = 0; a < k; ++a) out[a] = ranked[a].second;
  return out;
}

inline std::vector<double> reconstruction_weights(const DenseMatrix& y, std::size_t i,
                                                  const std::vector<std::size_t>& neighbors,
                                                  double ridge) {
  const std::size_t k = neighbors.size();
  DenseMatrix gram(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a; b < k; ++b) {
      double s = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c)
        s += (y(i, c) - y(neighbors[a], c)) * (y(i, c) - y(neighbors[b], c));
      gram(a, b) = s;
      gram(b, a) = s;
    }
  double trace = 0.0;
  for (std::size_t a = 0; a < k; ++a) trace += gram(a, a);
  DenseMatrix ones(k, 1);
  ones.fill(1.0);
  auto solve_with = [&](double reg) {
    DenseMatrix lhs = gram;
    for (std::size_t a = 0; a < k; ++a) lhs(a, a) += reg;
    return cholesky_solve(lhs, ones);
  };
  const double reg = ridge * trace / static_cast<double>(k);
  DenseMatrix w;
  try {
    w = solve_with(reg);
  } catch (const NotPositiveDefinite&) {
    w = solve_with(10.0 * reg);
  }
  double sum = 0.0;
  for (std::size_t a = 0; a < k; ++a) sum += w(a, 0);
  std::vector<double> out(k);
  for (std::size_t a = 0; a < k; ++a) out[a] = w(a, 0) / sum;
  return out;
}

}  // namespace detail

/// Reconstruction-weight matrix W of locally-linear embedding: row i holds
/// the weights expressing point i through its nearest neighbors, summing
/// to 1.
inline DenseMatrix lle_weights(const DenseMatrix& y, const LLEConfig& cfg) {
  cfg.validate();
  const std::size_t m = y.rows();
  if (m <= cfg.n_neighbors)
    throw TooFewPoints("lle_weights: need more points than neighbors");
  DenseMatrix w(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto neighbors = detail::nearest_neighbors(y, i, cfg.n_neighbors);
    const auto weights = detail::reconstruction_weights(y, i, neighbors, cfg.ridge);
    for (std::size_t a = 0; a < neighbors.size(); ++a) w(i, neighbors[a]) = weights[a];
  }
  return w;
}

/// Locally-linear embedding of the rows of y into target_dim coordinates:
/// eigenvectors 2..q+1 of (I-W)^T(I-W) in ascending order, scaled by
/// sqrt(M), each signed so its largest-magnitude entry is positive.
inline DenseMatrix lle_embed(const DenseMatrix& y, const LLEConfig& cfg) {
  cfg.validate();
  const std::size_t m = y.rows();
  if (m <= cfg.n_neighbors)
    throw TooFewPoints("lle_embed: need more points than neighbors");
  if (m <= cfg.target_dim)
    throw TooFewPoints("lle_embed: need more points than target dimensions");
  const DenseMatrix w = lle_weights(y, cfg);
  DenseMatrix residual = DenseMatrix::identity(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) residual(i, j) -= w(i, j);
  DenseMatrix cost(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += residual(k, i) * residual(k, j);
      cost(i, j) = s;
      cost(j, i) = s;
    }
  const SymEigResult eig = sym_eig(cost);
  const double scale = std::sqrt(static_cast<double>(m));
  DenseMatrix out(m, cfg.target_dim);
  for (std::size_t j = 0; j < cfg.target_dim; ++j) {
    const std::size_t col = j + 1;  // skip the constant bottom eigenvector
    std::size_t peak = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (std::abs(eig.eigenvectors(i, col)) > std::abs(eig.eigenvectors(peak, col))) peak = i;
    const double sign = eig.eigenvectors(peak, col) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < m; ++i) out(i, j) = sign * scale * eig.eigenvectors(i, col);
  }
  return out;
}

struct AdamConfig {
  double rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 2000;
};

struct PretrainResult {
  DecoderParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> column_norms;
  std::vector<double> loss_history;  // one entry per evaluation, initial first
};

namespace detail {

struct FlatParams {
  std::vector<double> values;
  std::size_t h = 0, q = 0, p = 0;

  std::size_t w1_at(std::size_t k, std::size_t j) const { return k * q + j; }
  std::size_t b1_at(std::size_t k) const { return h * q + k; }
  std::size_t w2_at(std::size_t mrow, std::size_t k) const { return h * q + h + mrow * h + k; }
  std::size_t b2_at(std::size_t mrow) const { return h * q + h + p * h + mrow; }
  std::size_t size() const { return h * q + h + p * h + p; }
};

inline double pretrain_loss_grad(const FlatParams& theta, const DenseMatrix& x,
                                 const DenseMatrix& y, std::vector<double>* grad) {
  const std::size_t m = x.rows();
  const std::size_t q = theta.q, h = theta.h, p = theta.p;
  if (grad != nullptr) grad->assign(theta.size(), 0.0);
  std::vector<double> hidden(h), residual(p), g_hidden(h);
  double loss = 0.0;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < h; ++k) {
      double a = theta.values[theta.b1_at(k)];
      for (std::size_t j = 0; j < q; ++j) a += theta.values[theta.w1_at(k, j)] * x(i, j);
      hidden[k] = std::tanh(a);
    }
    for (std::size_t r = 0; r < p; ++r) {
      double out = theta.values[theta.b2_at(r)];
      for (std::size_t k = 0; k < h; ++k) out += theta.values[theta.w2_at(r, k)] * hidden[k];
      residual[r] = out - y(i, r);
      loss += residual[r] * residual[r];
    }
    if (grad == nullptr) continue;
    std::fill(g_hidden.begin(), g_hidden.end(), 0.0);
    for (std::size_t r = 0; r < p; ++r) {
      const double gr = 2.0 * inv_m * residual[r];
      (*grad)[theta.b2_at(r)] += gr;
      for (std::size_t k = 0; k < h; ++k) {
        (*grad)[theta.w2_at(r, k)] += gr * hidden[k];
        g_hidden[k] += gr * theta.values[theta.w2_at(r, k)];
      }
    }
    for (std::size_t k = 0; k < h; ++k) {
      const double ga = g_hidden[k] * (1.0 - hidden[k] * hidden[k]);
      (*grad)[theta.b1_at(k)] += ga;
      for (std::size_t j = 0; j < q; ++j) (*grad)[theta.w1_at(k, j)] += ga * x(i, j);
    }
  }
  return loss * inv_m;
}

inline PretrainResult pretrain_once(const DenseMatrix& x, const DenseMatrix& y,
                                    const ModelSpec& spec, const AdamConfig& opt,
                                    std::uint64_t seed) {
  FlatParams theta;
  theta.h = spec.hidden_dim;
  theta.q = spec.latent_dim;
  theta.p = spec.observed_dim;
  theta.values.assign(theta.size(), 0.0);
  Rng rng(seed);
  const double sd1 = 1.0 / std::sqrt(static_cast<double>(theta.q));
  const double sd2 = 1.0 / std::sqrt(static_cast<double>(theta.h));
  for (std::size_t k = 0; k < theta.h; ++k)
    for (std::size_t j = 0; j < theta.q; ++j) theta.values[theta.w1_at(k, j)] = sd1 * rng.normal();
  for (std::size_t r = 0; r < theta.p; ++r)
    for (std::size_t k = 0; k < theta.h; ++k) theta.values[theta.w2_at(r, k)] = sd2 * rng.normal();

  std::vector<double> grad, m1(theta.size(), 0.0), m2(theta.size(), 0.0);
  std::vector<double> best = theta.values;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<double> history;
  history.reserve(opt.epochs + 1);
  for (std::size_t epoch = 0; epoch <= opt.epochs; ++epoch) {
    const bool last = epoch == opt.epochs;
    const double loss = pretrain_loss_grad(theta, x, y, last ? nullptr : &grad);
    if (!std::isfinite(loss)) throw NonFiniteLoss("pretrain_decoder: loss became non-finite");
    history.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = theta.values;
    }
    if (last) break;
    const double t = static_cast<double>(epoch + 1);
    const double corr1 = 1.0 - std::pow(opt.beta1, t);
    const double corr2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t idx = 0; idx < theta.size(); ++idx) {
      m1[idx] = opt.beta1 * m1[idx] + (1.0 - opt.beta1) * grad[idx];
      m2[idx] = opt.beta2 * m2[idx] + (1.0 - opt.beta2) * grad[idx] * grad[idx];
      theta.values[idx] -=
          opt.rate * (m1[idx] / corr1) / (std::sqrt(m2[idx] / corr2) + opt.eps);
    }
  }

  PretrainResult out;
  out.params.w1 = DenseMatrix(theta.h, theta.q);
  out.params.b1.resize(theta.h);
  out.params.w2 = DenseMatrix(theta.p, theta.h);
  out.params.b2.resize(theta.p);
  for (std::size_t k = 0; k < theta.h; ++k)
    for (std::size_t j = 0; j < theta.q; ++j) out.params.w1(k, j) = best[theta.w1_at(k, j)];
  for (std::size_t k = 0; k < theta.h; ++k) out.params.b1[k] = best[theta.b1_at(k)];
  for (std::size_t r = 0; r < theta.p; ++r)
    for (std::size_t k = 0; k < theta.h; ++k) out.params.w2(r, k) = best[theta.w2_at(r, k)];
  for (std::size_t r = 0; r < theta.p; ++r) out.params.b2[r] = best[theta.b2_at(r)];
  out.initial_loss = history.front();
  out.final_loss = best_loss;
  out.column_norms = column_norms(out.params.w1);
  out.loss_history = std::move(history);
  return out;
}

}  // namespace detail

/// Fits an unconstrained decoder to (x, y) pairs by full-batch Adam on the
/// mean squared error and reports the best iterate seen. A non-finite loss
/// triggers one retry at a tenth of the learning rate.
inline PretrainResult pretrain_decoder(const DenseMatrix& x, const DenseMatrix& y,
                                       const ModelSpec& spec, const AdamConfig& opt = {},
                                       std::uint64_t seed = 0) {
  if (x.rows() != y.rows())
    throw DimensionMismatch("pretrain_decoder: point counts differ");
  if (x.rows() == 0) throw EmptyInput("pretrain_decoder: no points");
  if (x.cols() != spec.latent_dim || y.cols() != spec.observed_dim)
    throw DimensionMismatch("pretrain_decoder: dimensions do not match the model spec");
  if (spec.hidden_dim < 1) throw InvalidCount("pretrain_decoder: hidden_dim must be >= 1");
  try {
    return detail::pretrain_once(x, y, spec, opt, seed);
  } catch (const NonFiniteLoss&) {
    AdamConfig slower = opt;
    slower.rate = opt.rate / 10.0;
    return detail::pretrain_once(x, y, spec, slower, seed);
  }
}

/// Anchor construction: select indices, embed the anchor subset, pretrain a
/// decoder on the embedding, and rescale each embedding column by the
/// trained first-layer column norm. With embed_full the embedding and the
/// pretraining run over the whole dataset and the anchor rows are extracted
/// afterwards.
inline AnchorSet build_anchor_set(const DenseMatrix& y, std::size_t n_ref,
                                  const LLEConfig& cfg, const ModelSpec& spec,
                                  std::uint64_t seed, const AdamConfig& opt = {},
                                  bool embed_full = false) {
  cfg.validate();
  if (cfg.target_dim != spec.latent_dim)
    throw DimensionMismatch("build_anchor_set: LLE target_dim must equal latent_dim");
  if (y.cols() != spec.observed_dim)
    throw DimensionMismatch("build_anchor_set: data width must equal observed_dim");
  AnchorSet set;
  set.seed = seed;
  set.config = cfg;
  set.indices = select_anchors(y.rows(), n_ref, derive_seed(seed, 0));
  if (embed_full) {
    const DenseMatrix embedding = lle_embed(y, cfg);
    const PretrainResult trained =
        pretrain_decoder(embedding, y, spec, opt, derive_seed(seed, 1));
    set.column_norms = trained.column_norms;
    set.source_embedding = DenseMatrix(n_ref, cfg.target_dim);
    for (std::size_t i = 0; i < n_ref; ++i)
      for (std::size_t j = 0; j < cfg.target_dim; ++j)
        set.source_embedding(i, j) = embedding(set.indices[i], j);
  } else {
    DenseMatrix subset(n_ref, y.cols());
    for (std::size_t i = 0; i < n_ref; ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) subset(i, j) = y(set.indices[i], j);
    set.source_embedding = lle_embed(subset, cfg);
    const PretrainResult trained =
        pretrain_decoder(set.source_embedding, subset, spec, opt, derive_seed(seed, 1));
    set.column_norms = trained.column_norms;
  }
  set.values = DenseMatrix(n_ref, cfg.target_dim);
  for (std::size_t i = 0; i < n_ref; ++i)
    for (std::size_t j = 0; j < cfg.target_dim; ++j)
      set.values(i, j) = set.source_embedding(i, j) * set.column_norms[j];
  return set;
}

}  // namespace latnet

#endif  // LATNET_ANCHORS_HPP

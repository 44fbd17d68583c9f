#ifndef LATNET_MODEL_HPP
#define LATNET_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "latnet/errors.hpp"
#include "latnet/matrix.hpp"

namespace latnet {

inline constexpr double kColumnNormFloor = 1e-8;
inline constexpr double kPi = 3.14159265358979323846;

struct ModelSpec {
  std::size_t observed_dim = 0;  // p
  std::size_t latent_dim = 0;    // q
  std::size_t hidden_dim = 0;    // h
  std::size_t n_obs = 0;         // N
  bool constrain_columns = true;

  void validate() const {
    if (latent_dim == 0 || latent_dim >= observed_dim)
      throw DimensionMismatch("ModelSpec: need 0 < latent_dim < observed_dim");
    if (hidden_dim == 0) throw InvalidCount("ModelSpec: hidden_dim must be >= 1");
    if (n_obs == 0) throw EmptyInput("ModelSpec: n_obs must be >= 1");
  }
};

/// Raw decoder weights; the first-layer columns are divided by their norms
/// inside decode, so the stored values are unconstrained.
struct DecoderParams {
  DenseMatrix w1;          // hidden_dim x latent_dim
  std::vector<double> b1;  // hidden_dim
  DenseMatrix w2;          // observed_dim x hidden_dim
  std::vector<double> b2;  // observed_dim
};

struct VarianceParams {
  double tau_sq = 1.0;    // observation noise variance, isotropic
  double sigma_sq = 1.0;  // prior variance shared by all decoder parameters
};

struct LatentConfiguration {
  DenseMatrix x;               // n x q, anchored rows hold their fixed values
  std::vector<char> anchored;  // length n
};

struct AnchorValues {
  std::vector<std::size_t> indices;  // strictly ascending rows of the dataset
  DenseMatrix values;                // indices.size() x q
};

inline std::vector<double> column_norms(const DenseMatrix& w1) {
  std::vector<double> norms(w1.cols());
  for (std::size_t j = 0; j < w1.cols(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < w1.rows(); ++k) s += w1(k, j) * w1(k, j);
    norms[j] = std::sqrt(s);
  }
  return norms;
}

namespace detail {

inline void check_decoder_dims(const ModelSpec& spec, const DecoderParams& params) {
  if (params.w1.rows() != spec.hidden_dim || params.w1.cols() != spec.latent_dim ||
      params.b1.size() != spec.hidden_dim || params.w2.rows() != spec.observed_dim ||
      params.w2.cols() != spec.hidden_dim || params.b2.size() != spec.observed_dim)
    throw DimensionMismatch("decoder parameter shapes do not match the model spec");
}

// Destructively folds a small term buffer in an order that does not depend
// on how latent columns are indexed: two addends commute exactly, larger
// counts are summed ascending so every column ordering rounds identically.
inline double canonical_sum(double* terms, std::size_t count) {
  if (count > 2) std::sort(terms, terms + count);
  double a = 0.0;
  for (std::size_t j = 0; j < count; ++j) a += terms[j];
  return a;
}

// Effective first-layer weights: columns divided by their norms when the
// model is constrained, raw otherwise.
inline DenseMatrix effective_w1(const ModelSpec& spec, const DecoderParams& params) {
  if (!spec.constrain_columns) return params.w1;
  DenseMatrix w = params.w1;
  const std::vector<double> norms = column_norms(params.w1);
  for (std::size_t j = 0; j < w.cols(); ++j) {
    if (norms[j] < kColumnNormFloor)
      throw DegenerateColumn("first-layer column norm below floor");
    for (std::size_t k = 0; k < w.rows(); ++k) w(k, j) /= norms[j];
  }
  return w;
}

inline void decode_with(const ModelSpec& spec, const DenseMatrix& w_eff,
                        const DecoderParams& params, const double* x, double* out,
                        double* hidden, double* qterms) {
  for (std::size_t k = 0; k < spec.hidden_dim; ++k) {
    // the latent-dimension sum is folded canonically so that permuting
    // latent columns cannot change the rounding
    for (std::size_t j = 0; j < spec.latent_dim; ++j) qterms[j] = w_eff(k, j) * x[j];
    hidden[k] = std::tanh(params.b1[k] + canonical_sum(qterms, spec.latent_dim));
  }
  for (std::size_t m = 0; m < spec.observed_dim; ++m) {
    double f = params.b2[m];
    for (std::size_t k = 0; k < spec.hidden_dim; ++k) f += params.w2(m, k) * hidden[k];
    out[m] = f;
  }
}

}  // namespace detail

/// Decoder output for a single latent vector.
inline std::vector<double> decode(const ModelSpec& spec, const DecoderParams& params,
                                  const std::vector<double>& x) {
  detail::check_decoder_dims(spec, params);
  if (x.size() != spec.latent_dim) throw DimensionMismatch("decode: latent size mismatch");
  const DenseMatrix w_eff = detail::effective_w1(spec, params);
  std::vector<double> out(spec.observed_dim);
  std::vector<double> hidden(spec.hidden_dim);
  std::vector<double> qterms(spec.latent_dim);
  detail::decode_with(spec, w_eff, params, x.data(), out.data(), hidden.data(), qterms.data());
  return out;
}

/// Decoder applied to every row of an n x q latent matrix.
inline DenseMatrix decode_all(const ModelSpec& spec, const DecoderParams& params,
                              const DenseMatrix& x) {
  detail::check_decoder_dims(spec, params);
  if (x.cols() != spec.latent_dim) throw DimensionMismatch("decode_all: latent size mismatch");
  const DenseMatrix w_eff = detail::effective_w1(spec, params);
  DenseMatrix out(x.rows(), spec.observed_dim);
  std::vector<double> hidden(spec.hidden_dim);
  std::vector<double> qterms(spec.latent_dim);
  for (std::size_t i = 0; i < x.rows(); ++i)
    detail::decode_with(spec, w_eff, params, x.row(i), out.row(i), hidden.data(), qterms.data());
  return out;
}

/// Isotropic Gaussian log-likelihood of Y given decoded latents, including
/// the normalizing constant so the noise variance stays identifiable.
inline double log_likelihood(const ModelSpec& spec, const DecoderParams& params,
                             const LatentConfiguration& latents, double tau_sq,
                             const DenseMatrix& y) {
  detail::check_decoder_dims(spec, params);
  if (latents.x.rows() != y.rows() || latents.x.cols() != spec.latent_dim ||
      y.cols() != spec.observed_dim)
    throw DimensionMismatch("log_likelihood: shape mismatch");
  if (!(tau_sq > 0.0)) throw NonPositiveVariance("log_likelihood: tau_sq must be positive");

  const DenseMatrix w_eff = detail::effective_w1(spec, params);
  std::vector<double> out(spec.observed_dim);
  std::vector<double> hidden(spec.hidden_dim);
  std::vector<double> qterms(spec.latent_dim);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    detail::decode_with(spec, w_eff, params, latents.x.row(i), out.data(), hidden.data(),
                        qterms.data());
    for (std::size_t m = 0; m < spec.observed_dim; ++m) {
      const double r = out[m] - y(i, m);
      sum_sq += r * r;
    }
  }
  const double np = static_cast<double>(y.rows()) * static_cast<double>(spec.observed_dim);
  return -sum_sq / (2.0 * tau_sq) - 0.5 * np * std::log(2.0 * kPi * tau_sq);
}

inline double half_cauchy_log_density(double x, double scale = 5.0) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  const double r = x / scale;
  return std::log(2.0 / (kPi * scale)) - std::log1p(r * r);
}

/// Log prior: N(0, sigma_sq) over every decoder parameter, N(0, sd^2 I) over
/// free latent rows, and half-Cauchy(5) over both variances.
inline double log_prior(const ModelSpec& spec, const DecoderParams& params,
                        const LatentConfiguration& latents, const VarianceParams& v,
                        double latent_prior_sd = 1.0) {
  detail::check_decoder_dims(spec, params);
  if (latents.anchored.size() != latents.x.rows())
    throw DimensionMismatch("log_prior: anchored mask length mismatch");
  if (!(v.tau_sq > 0.0) || !(v.sigma_sq > 0.0))
    throw NonPositiveVariance("log_prior: variances must be positive");

  // decoder block; the first-layer sum is built from per-column subtotals
  // folded canonically, keeping the value independent of column order
  std::vector<double> qterms(params.w1.cols());
  for (std::size_t j = 0; j < params.w1.cols(); ++j) {
    double col = 0.0;
    for (std::size_t k = 0; k < params.w1.rows(); ++k) col += params.w1(k, j) * params.w1(k, j);
    qterms[j] = col;
  }
  double theta_sq = detail::canonical_sum(qterms.data(), qterms.size());
  for (double b : params.b1) theta_sq += b * b;
  for (std::size_t m = 0; m < params.w2.rows(); ++m)
    for (std::size_t k = 0; k < params.w2.cols(); ++k) theta_sq += params.w2(m, k) * params.w2(m, k);
  for (double b : params.b2) theta_sq += b * b;
  const double theta_dim =
      static_cast<double>(spec.hidden_dim * spec.latent_dim + spec.hidden_dim +
                          spec.observed_dim * spec.hidden_dim + spec.observed_dim);
  double total = -0.5 * theta_dim * std::log(2.0 * kPi * v.sigma_sq) -
                 theta_sq / (2.0 * v.sigma_sq);

  double latent_sq = 0.0;
  std::size_t n_free = 0;
  for (std::size_t i = 0; i < latents.x.rows(); ++i) {
    if (latents.anchored[i]) continue;
    ++n_free;
    for (std::size_t j = 0; j < latents.x.cols(); ++j)
      qterms[j] = latents.x(i, j) * latents.x(i, j);
    latent_sq += detail::canonical_sum(qterms.data(), qterms.size());
  }
  const double sd_sq = latent_prior_sd * latent_prior_sd;
  total += -0.5 * static_cast<double>(n_free * spec.latent_dim) * std::log(2.0 * kPi * sd_sq) -
           latent_sq / (2.0 * sd_sq);

  total += half_cauchy_log_density(v.tau_sq);
  total += half_cauchy_log_density(v.sigma_sq);
  return total;
}

/// Index map from named parameter blocks into the flat sampling vector.
/// Anchored latent rows are excluded: they are constants, not coordinates.
struct ParamLayout {
  std::size_t p = 0, q = 0, h = 0, n = 0;
  std::vector<std::size_t> free_rows;           // dataset row per free slot
  std::vector<std::ptrdiff_t> free_slot_of_row; // -1 when anchored
  std::vector<std::ptrdiff_t> anchor_pos_of_row;
  std::size_t w1_offset = 0, b1_offset = 0, w2_offset = 0, b2_offset = 0, x_offset = 0,
              log_tau_offset = 0, log_sigma_offset = 0, dim = 0;

  static ParamLayout create(const ModelSpec& spec,
                            const std::vector<std::size_t>& anchor_indices) {
    spec.validate();
    if (anchor_indices.size() >= spec.n_obs)
      throw InvalidCount("ParamLayout: anchors must leave at least one free row");
    ParamLayout out;
    out.p = spec.observed_dim;
    out.q = spec.latent_dim;
    out.h = spec.hidden_dim;
    out.n = spec.n_obs;
    out.free_slot_of_row.assign(out.n, -1);
    out.anchor_pos_of_row.assign(out.n, -1);
    for (std::size_t a = 0; a < anchor_indices.size(); ++a) {
      const std::size_t idx = anchor_indices[a];
      if (idx >= out.n) throw IndexOutOfRange("ParamLayout: anchor index out of range");
      if (a > 0 && anchor_indices[a - 1] >= idx)
        throw InvalidCount("ParamLayout: anchor indices must be strictly ascending");
      out.anchor_pos_of_row[idx] = static_cast<std::ptrdiff_t>(a);
    }
    for (std::size_t i = 0; i < out.n; ++i) {
      if (out.anchor_pos_of_row[i] >= 0) continue;
      out.free_slot_of_row[i] = static_cast<std::ptrdiff_t>(out.free_rows.size());
      out.free_rows.push_back(i);
    }
    out.w1_offset = 0;
    out.b1_offset = out.w1_offset + out.h * out.q;
    out.w2_offset = out.b1_offset + out.h;
    out.b2_offset = out.w2_offset + out.p * out.h;
    out.x_offset = out.b2_offset + out.p;
    out.log_tau_offset = out.x_offset + out.free_rows.size() * out.q;
    out.log_sigma_offset = out.log_tau_offset + 1;
    out.dim = out.log_sigma_offset + 1;
    return out;
  }

  std::size_t n_free() const { return free_rows.size(); }
  std::size_t w1_coord(std::size_t k, std::size_t j) const { return w1_offset + k * q + j; }
  std::size_t w2_coord(std::size_t m, std::size_t k) const { return w2_offset + m * h + k; }
  std::size_t x_coord(std::size_t slot, std::size_t j) const { return x_offset + slot * q + j; }

  std::vector<std::string> coordinate_names() const {
    std::vector<std::string> names;
    names.reserve(dim);
    for (std::size_t k = 0; k < h; ++k)
      for (std::size_t j = 0; j < q; ++j)
        names.push_back("w1[" + std::to_string(k) + "][" + std::to_string(j) + "]");
    for (std::size_t k = 0; k < h; ++k) names.push_back("b1[" + std::to_string(k) + "]");
    for (std::size_t m = 0; m < p; ++m)
      for (std::size_t k = 0; k < h; ++k)
        names.push_back("w2[" + std::to_string(m) + "][" + std::to_string(k) + "]");
    for (std::size_t m = 0; m < p; ++m) names.push_back("b2[" + std::to_string(m) + "]");
    for (std::size_t slot = 0; slot < free_rows.size(); ++slot)
      for (std::size_t j = 0; j < q; ++j)
        names.push_back("x[" + std::to_string(free_rows[slot]) + "][" + std::to_string(j) + "]");
    names.push_back("log_tau_sq");
    names.push_back("log_sigma_sq");
    return names;
  }
};

struct ModelState {
  DecoderParams params;
  DenseMatrix x_free;  // n_free x q
  double log_tau_sq = 0.0;
  double log_sigma_sq = 0.0;
};

inline std::vector<double> pack(const ParamLayout& layout, const ModelState& state) {
  std::vector<double> z(layout.dim, 0.0);
  for (std::size_t k = 0; k < layout.h; ++k)
    for (std::size_t j = 0; j < layout.q; ++j) z[layout.w1_coord(k, j)] = state.params.w1(k, j);
  for (std::size_t k = 0; k < layout.h; ++k) z[layout.b1_offset + k] = state.params.b1[k];
  for (std::size_t m = 0; m < layout.p; ++m)
    for (std::size_t k = 0; k < layout.h; ++k) z[layout.w2_coord(m, k)] = state.params.w2(m, k);
  for (std::size_t m = 0; m < layout.p; ++m) z[layout.b2_offset + m] = state.params.b2[m];
  for (std::size_t slot = 0; slot < layout.n_free(); ++slot)
    for (std::size_t j = 0; j < layout.q; ++j) z[layout.x_coord(slot, j)] = state.x_free(slot, j);
  z[layout.log_tau_offset] = state.log_tau_sq;
  z[layout.log_sigma_offset] = state.log_sigma_sq;
  return z;
}

inline ModelState unpack(const ParamLayout& layout, const std::vector<double>& z) {
  if (z.size() != layout.dim) throw DimensionMismatch("unpack: coordinate length mismatch");
  ModelState state;
  state.params.w1 = DenseMatrix(layout.h, layout.q);
  state.params.b1.resize(layout.h);
  state.params.w2 = DenseMatrix(layout.p, layout.h);
  state.params.b2.resize(layout.p);
  state.x_free = DenseMatrix(layout.n_free(), layout.q);
  for (std::size_t k = 0; k < layout.h; ++k)
    for (std::size_t j = 0; j < layout.q; ++j) state.params.w1(k, j) = z[layout.w1_coord(k, j)];
  for (std::size_t k = 0; k < layout.h; ++k) state.params.b1[k] = z[layout.b1_offset + k];
  for (std::size_t m = 0; m < layout.p; ++m)
    for (std::size_t k = 0; k < layout.h; ++k) state.params.w2(m, k) = z[layout.w2_coord(m, k)];
  for (std::size_t m = 0; m < layout.p; ++m) state.params.b2[m] = z[layout.b2_offset + m];
  for (std::size_t slot = 0; slot < layout.n_free(); ++slot)
    for (std::size_t j = 0; j < layout.q; ++j) state.x_free(slot, j) = z[layout.x_coord(slot, j)];
  state.log_tau_sq = z[layout.log_tau_offset];
  state.log_sigma_sq = z[layout.log_sigma_offset];
  return state;
}

/// Fills one row of the full latent matrix for a draw, substituting anchor
/// values for anchored rows.
inline void fill_latent_row(const ParamLayout& layout, const AnchorValues& anchors,
                            const double* z, std::size_t row, double* out) {
  if (row >= layout.n) throw IndexOutOfRange("fill_latent_row: row out of range");
  const std::ptrdiff_t slot = layout.free_slot_of_row[row];
  if (slot >= 0) {
    const double* src = z + layout.x_coord(static_cast<std::size_t>(slot), 0);
    for (std::size_t j = 0; j < layout.q; ++j) out[j] = src[j];
  } else {
    const std::size_t pos = static_cast<std::size_t>(layout.anchor_pos_of_row[row]);
    for (std::size_t j = 0; j < layout.q; ++j) out[j] = anchors.values(pos, j);
  }
}

inline DenseMatrix latent_matrix(const ParamLayout& layout, const AnchorValues& anchors,
                                 const double* z) {
  DenseMatrix x(layout.n, layout.q);
  for (std::size_t i = 0; i < layout.n; ++i) fill_latent_row(layout, anchors, z, i, x.row(i));
  return x;
}

/// Posterior of the latent-variable decoder model on the unconstrained
/// coordinate space, with anchored latent rows held fixed. Variances are
/// carried as logs; the change-of-variables term is included by default.
class AnchoredPosterior {
 public:
  struct Options {
    bool include_likelihood = true;
    bool include_prior = true;
    bool include_transform_jacobian = true;
    double latent_prior_sd = 1.0;
  };

  AnchoredPosterior(ModelSpec spec, DenseMatrix y, AnchorValues anchors)
      : AnchoredPosterior(std::move(spec), std::move(y), std::move(anchors), Options()) {}

  AnchoredPosterior(ModelSpec spec, DenseMatrix y, AnchorValues anchors, Options options)
      : spec_(spec), y_(std::move(y)), anchors_(std::move(anchors)), options_(options) {
    spec_.validate();
    if (y_.rows() != spec_.n_obs || y_.cols() != spec_.observed_dim)
      throw DimensionMismatch("AnchoredPosterior: data shape does not match spec");
    if (!anchors_.indices.empty() &&
        (anchors_.values.rows() != anchors_.indices.size() ||
         anchors_.values.cols() != spec_.latent_dim))
      throw DimensionMismatch("AnchoredPosterior: anchor value shape mismatch");
    layout_ = ParamLayout::create(spec_, anchors_.indices);
  }

  const ModelSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return layout_; }
  const AnchorValues& anchors() const { return anchors_; }
  const DenseMatrix& data() const { return y_; }
  const Options& options() const { return options_; }
  std::size_t dim() const { return layout_.dim; }

  LatentConfiguration latent_configuration(const ModelState& state) const {
    LatentConfiguration lat;
    lat.x = DenseMatrix(layout_.n, layout_.q);
    lat.anchored.assign(layout_.n, 0);
    for (std::size_t i = 0; i < layout_.n; ++i) {
      const std::ptrdiff_t slot = layout_.free_slot_of_row[i];
      if (slot >= 0) {
        for (std::size_t j = 0; j < layout_.q; ++j)
          lat.x(i, j) = state.x_free(static_cast<std::size_t>(slot), j);
      } else {
        lat.anchored[i] = 1;
        const std::size_t pos = static_cast<std::size_t>(layout_.anchor_pos_of_row[i]);
        for (std::size_t j = 0; j < layout_.q; ++j) lat.x(i, j) = anchors_.values(pos, j);
      }
    }
    return lat;
  }

  /// Composed evaluation from the standalone model terms. Degenerate
  /// first-layer columns yield -inf so the sampler rejects.
  double log_posterior(const std::vector<double>& z) const {
    const ModelState state = unpack(layout_, z);
    if (spec_.constrain_columns) {
      for (double norm : column_norms(state.params.w1))
        if (norm < kColumnNormFloor) return -std::numeric_limits<double>::infinity();
    }
    const VarianceParams v{std::exp(state.log_tau_sq), std::exp(state.log_sigma_sq)};
    const LatentConfiguration lat = latent_configuration(state);
    double total = 0.0;
    if (options_.include_likelihood)
      total += log_likelihood(spec_, state.params, lat, v.tau_sq, y_);
    if (options_.include_prior)
      total += log_prior(spec_, state.params, lat, v, options_.latent_prior_sd);
    if (options_.include_transform_jacobian) {
      total += state.log_tau_sq;
      total += state.log_sigma_sq;
    }
    return total;
  }

  /// Fused value plus exact gradient. Returns -inf with a zero gradient when
  /// a constrained column collapses.
  double value_and_grad(const std::vector<double>& z, std::vector<double>& grad) const {
    const ParamLayout& L = layout_;
    if (z.size() != L.dim) throw DimensionMismatch("value_and_grad: coordinate length mismatch");
    grad.assign(L.dim, 0.0);

    const std::size_t p = L.p, q = L.q, h = L.h, n = L.n;
    const double* w1 = z.data() + L.w1_offset;
    const double* b1 = z.data() + L.b1_offset;
    const double* w2 = z.data() + L.w2_offset;
    const double* b2 = z.data() + L.b2_offset;
    const double u_tau = z[L.log_tau_offset];
    const double u_sigma = z[L.log_sigma_offset];
    const double tau_sq = std::exp(u_tau);
    const double sigma_sq = std::exp(u_sigma);

    std::vector<double> norms(q, 1.0);
    std::vector<double> w_eff(w1, w1 + h * q);
    if (spec_.constrain_columns) {
      for (std::size_t j = 0; j < q; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < h; ++k) s += w1[k * q + j] * w1[k * q + j];
        norms[j] = std::sqrt(s);
        if (norms[j] < kColumnNormFloor) return -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < h; ++k) w_eff[k * q + j] /= norms[j];
      }
    }

    double total = 0.0;
    std::vector<double> qterms(q);
    if (options_.include_likelihood) {
      std::vector<double> hidden(h), resid(p), g_hidden(h);
      std::vector<double> g_w_eff(h * q, 0.0);
      double sum_sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::ptrdiff_t slot = L.free_slot_of_row[i];
        const double* xi;
        if (slot >= 0) {
          xi = z.data() + L.x_coord(static_cast<std::size_t>(slot), 0);
        } else {
          xi = anchors_.values.row(static_cast<std::size_t>(L.anchor_pos_of_row[i]));
        }
        for (std::size_t k = 0; k < h; ++k) {
          for (std::size_t j = 0; j < q; ++j) qterms[j] = w_eff[k * q + j] * xi[j];
          hidden[k] = std::tanh(b1[k] + detail::canonical_sum(qterms.data(), q));
        }
        const double* yi = y_.row(i);
        for (std::size_t m = 0; m < p; ++m) {
          double f = b2[m];
          for (std::size_t k = 0; k < h; ++k) f += w2[m * h + k] * hidden[k];
          resid[m] = f - yi[m];
          sum_sq += resid[m] * resid[m];
        }
        // backward pass for this observation; the -1/tau_sq factor is
        // applied once after the loop
        for (std::size_t m = 0; m < p; ++m) {
          grad[L.b2_offset + m] += resid[m];
          for (std::size_t k = 0; k < h; ++k) grad[L.w2_coord(m, k)] += resid[m] * hidden[k];
        }
        for (std::size_t k = 0; k < h; ++k) {
          double gt = 0.0;
          for (std::size_t m = 0; m < p; ++m) gt += resid[m] * w2[m * h + k];
          g_hidden[k] = gt * (1.0 - hidden[k] * hidden[k]);
          grad[L.b1_offset + k] += g_hidden[k];
          for (std::size_t j = 0; j < q; ++j) g_w_eff[k * q + j] += g_hidden[k] * xi[j];
        }
        if (slot >= 0) {
          double* gx = grad.data() + L.x_coord(static_cast<std::size_t>(slot), 0);
          for (std::size_t j = 0; j < q; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < h; ++k) s += g_hidden[k] * w_eff[k * q + j];
            gx[j] += s;
          }
        }
      }
      const double scale = -1.0 / tau_sq;
      for (std::size_t m = 0; m < p; ++m) {
        grad[L.b2_offset + m] *= scale;
        for (std::size_t k = 0; k < h; ++k) grad[L.w2_coord(m, k)] *= scale;
      }
      for (std::size_t k = 0; k < h; ++k) grad[L.b1_offset + k] *= scale;
      for (std::size_t slot = 0; slot < L.n_free(); ++slot)
        for (std::size_t j = 0; j < q; ++j) grad[L.x_coord(slot, j)] *= scale;
      // chain rule through the column normalization: project out the radial
      // component, then divide by the norm
      for (std::size_t j = 0; j < q; ++j) {
        if (spec_.constrain_columns) {
          double dot = 0.0;
          for (std::size_t k = 0; k < h; ++k) dot += w_eff[k * q + j] * g_w_eff[k * q + j];
          for (std::size_t k = 0; k < h; ++k)
            grad[L.w1_coord(k, j)] +=
                scale * (g_w_eff[k * q + j] - dot * w_eff[k * q + j]) / norms[j];
        } else {
          for (std::size_t k = 0; k < h; ++k) grad[L.w1_coord(k, j)] += scale * g_w_eff[k * q + j];
        }
      }
      const double np = static_cast<double>(n) * static_cast<double>(p);
      total += -sum_sq / (2.0 * tau_sq) - 0.5 * np * std::log(2.0 * kPi * tau_sq);
      grad[L.log_tau_offset] += sum_sq / (2.0 * tau_sq) - 0.5 * np;
    }

    if (options_.include_prior) {
      for (std::size_t j = 0; j < q; ++j) {
        double col = 0.0;
        for (std::size_t k = 0; k < h; ++k) col += w1[k * q + j] * w1[k * q + j];
        qterms[j] = col;
      }
      double theta_sq = detail::canonical_sum(qterms.data(), q);
      for (std::size_t k = 0; k < h; ++k) theta_sq += b1[k] * b1[k];
      for (std::size_t i = 0; i < p * h; ++i) theta_sq += w2[i] * w2[i];
      for (std::size_t m = 0; m < p; ++m) theta_sq += b2[m] * b2[m];
      const double theta_dim = static_cast<double>(h * q + h + p * h + p);
      total += -0.5 * theta_dim * std::log(2.0 * kPi * sigma_sq) - theta_sq / (2.0 * sigma_sq);
      for (std::size_t i = 0; i < L.x_offset; ++i) grad[i] += -z[i] / sigma_sq;
      grad[L.log_sigma_offset] += theta_sq / (2.0 * sigma_sq) - 0.5 * theta_dim;

      double latent_sq = 0.0;
      for (std::size_t slot = 0; slot < L.n_free(); ++slot) {
        for (std::size_t j = 0; j < q; ++j) {
          const double v = z[L.x_coord(slot, j)];
          qterms[j] = v * v;
        }
        latent_sq += detail::canonical_sum(qterms.data(), q);
      }
      const double sd_sq = options_.latent_prior_sd * options_.latent_prior_sd;
      total += -0.5 * static_cast<double>(L.n_free() * q) * std::log(2.0 * kPi * sd_sq) -
               latent_sq / (2.0 * sd_sq);
      for (std::size_t slot = 0; slot < L.n_free(); ++slot)
        for (std::size_t j = 0; j < q; ++j)
          grad[L.x_coord(slot, j)] += -z[L.x_coord(slot, j)] / sd_sq;

      total += half_cauchy_log_density(tau_sq);
      total += half_cauchy_log_density(sigma_sq);
      grad[L.log_tau_offset] += -2.0 * tau_sq * tau_sq / (25.0 + tau_sq * tau_sq);
      grad[L.log_sigma_offset] += -2.0 * sigma_sq * sigma_sq / (25.0 + sigma_sq * sigma_sq);
    }

    if (options_.include_transform_jacobian) {
      total += u_tau + u_sigma;
      grad[L.log_tau_offset] += 1.0;
      grad[L.log_sigma_offset] += 1.0;
    }
    return total;
  }

 private:
  ModelSpec spec_;
  DenseMatrix y_;
  AnchorValues anchors_;
  Options options_;
  ParamLayout layout_;
};

}  // namespace latnet

#endif  // LATNET_MODEL_HPP

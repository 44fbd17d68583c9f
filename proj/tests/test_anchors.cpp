#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "latnet/anchors.hpp"
#include "latnet/linalg.hpp"
#include "latnet/matrix.hpp"
#include "latnet/rng.hpp"

namespace {

using latnet::DenseMatrix;
using latnet::Rng;

DenseMatrix noisy_curve(std::uint64_t seed, std::size_t n, double noise) {
  Rng rng(seed);
  DenseMatrix y(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    y(i, 0) = std::cos(1.5 * t) + noise * rng.normal();
    y(i, 1) = std::sin(1.5 * t) + noise * rng.normal();
    y(i, 2) = 0.5 * t + noise * rng.normal();
  }
  return y;
}

DenseMatrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  DenseMatrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("anchor selection bounds and determinism", "[anchors]") {
  CHECK_THROWS_AS(latnet::select_anchors(10, 10, 1), latnet::InvalidCount);
  CHECK_THROWS_AS(latnet::select_anchors(10, 0, 1), latnet::InvalidCount);
  CHECK_THROWS_AS(latnet::select_anchors(10, 11, 1), latnet::InvalidCount);

  const auto picked = latnet::select_anchors(640, 40, 7);
  REQUIRE(picked.size() == 40);
  CHECK(std::is_sorted(picked.begin(), picked.end()));
  CHECK(std::set<std::size_t>(picked.begin(), picked.end()).size() == 40);
  CHECK(picked.back() < 640);
  CHECK(picked == latnet::select_anchors(640, 40, 7));
  CHECK(picked != latnet::select_anchors(640, 40, 8));
}

TEST_CASE("anchor selection is close to uniform", "[anchors]") {
  std::vector<std::size_t> counts(10, 0);
  const std::size_t reps = 2000;
  for (std::size_t rep = 0; rep < reps; ++rep)
    for (std::size_t idx : latnet::select_anchors(10, 3, 1000 + rep)) ++counts[idx];
  for (std::size_t idx = 0; idx < 10; ++idx) {
    CHECK(counts[idx] > 480);
    CHECK(counts[idx] < 720);
  }
}

TEST_CASE("lle reconstruction weights sum to one", "[anchors]") {
  const DenseMatrix y = noisy_curve(3, 30, 0.01);
  latnet::LLEConfig cfg;
  cfg.target_dim = 1;
  const DenseMatrix w = latnet::lle_weights(y, cfg);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double sum = 0.0;
    std::size_t nonzero = 0;
    for (std::size_t j = 0; j < y.rows(); ++j) {
      sum += w(i, j);
      if (w(i, j) != 0.0) ++nonzero;
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-10));
    CHECK(nonzero <= cfg.n_neighbors);
    CHECK(w(i, i) == 0.0);
  }
}

TEST_CASE("lle cost matrix annihilates the constant vector", "[anchors]") {
  const DenseMatrix y = noisy_curve(5, 25, 0.02);
  latnet::LLEConfig cfg;
  cfg.target_dim = 2;
  const DenseMatrix w = latnet::lle_weights(y, cfg);
  const std::size_t m = y.rows();
  DenseMatrix residual = DenseMatrix::identity(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) residual(i, j) -= w(i, j);
  const DenseMatrix cost = latnet::matmul(latnet::transpose(residual), residual);
  const auto eig = latnet::sym_eig(cost);
  CHECK(eig.eigenvalues[0] == Catch::Approx(0.0).margin(1e-8));
  double lo = eig.eigenvectors(0, 0), hi = eig.eigenvectors(0, 0);
  for (std::size_t i = 0; i < m; ++i) {
    lo = std::min(lo, eig.eigenvectors(i, 0));
    hi = std::max(hi, eig.eigenvectors(i, 0));
  }
  CHECK(hi - lo == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("lle embedding of a straight line preserves order", "[anchors]") {
  const std::size_t n = 40;
  DenseMatrix y(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 0.07 * static_cast<double>(i);
    y(i, 0) = 1.0 + 2.0 * t;
    y(i, 1) = -0.5 + t;
    y(i, 2) = 0.25 - 0.5 * t;
  }
  latnet::LLEConfig cfg;
  cfg.target_dim = 1;
  const DenseMatrix embedding = latnet::lle_embed(y, cfg);
  REQUIRE(embedding.rows() == n);
  REQUIRE(embedding.cols() == 1);
  bool increasing = true, decreasing = true;
  for (std::size_t i = 1; i < n; ++i) {
    if (embedding(i, 0) <= embedding(i - 1, 0)) increasing = false;
    if (embedding(i, 0) >= embedding(i - 1, 0)) decreasing = false;
  }
  CHECK((increasing || decreasing));
}

TEST_CASE("lle embedding columns are orthogonal and sqrt-m scaled", "[anchors]") {
  const DenseMatrix y = noisy_curve(11, 36, 0.05);
  latnet::LLEConfig cfg;
  cfg.target_dim = 2;
  const DenseMatrix embedding = latnet::lle_embed(y, cfg);
  const double m = static_cast<double>(y.rows());
  for (std::size_t a = 0; a < 2; ++a) {
    double norm_sq = 0.0;
    std::size_t peak = 0;
    for (std::size_t i = 0; i < y.rows(); ++i) {
      norm_sq += embedding(i, a) * embedding(i, a);
      if (std::abs(embedding(i, a)) > std::abs(embedding(peak, a))) peak = i;
    }
    CHECK(std::sqrt(norm_sq) == Catch::Approx(std::sqrt(m)).epsilon(1e-8));
    CHECK(embedding(peak, a) > 0.0);
  }
  double cross = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i) cross += embedding(i, 0) * embedding(i, 1);
  CHECK(std::abs(cross) / m <= 1e-8);
}

TEST_CASE("lle input validation", "[anchors]") {
  latnet::LLEConfig cfg;
  cfg.target_dim = 1;
  Rng rng(2);
  CHECK_THROWS_AS(latnet::lle_embed(random_matrix(rng, 5, 3), cfg), latnet::TooFewPoints);
  latnet::LLEConfig wide = cfg;
  wide.n_neighbors = 3;
  wide.target_dim = 8;
  CHECK_THROWS_AS(latnet::lle_embed(random_matrix(rng, 8, 3), wide), latnet::TooFewPoints);
  latnet::LLEConfig bad = cfg;
  bad.ridge = -1.0;
  CHECK_THROWS_AS(latnet::lle_embed(random_matrix(rng, 12, 3), bad), latnet::InvalidCount);
  bad = cfg;
  bad.n_neighbors = 0;
  CHECK_THROWS_AS(latnet::lle_embed(random_matrix(rng, 12, 3), bad), latnet::InvalidCount);
}

TEST_CASE("lle propagates an unsalvageable gram failure", "[anchors]") {
  DenseMatrix y(8, 2);
  for (std::size_t i = 0; i < 8; ++i) {
    y(i, 0) = static_cast<double>(i / 4);  // two coincident clumps of four
    y(i, 1) = 0.0;
  }
  latnet::LLEConfig cfg;
  cfg.n_neighbors = 3;
  cfg.target_dim = 1;
  cfg.ridge = 0.0;
  CHECK_THROWS_AS(latnet::lle_weights(y, cfg), latnet::NotPositiveDefinite);
}

TEST_CASE("pretraining fits constant targets", "[anchors]") {
  Rng rng(17);
  const std::size_t m = 12;
  const DenseMatrix x = random_matrix(rng, m, 1);
  DenseMatrix y(m, 2);
  for (std::size_t i = 0; i < m; ++i) {
    y(i, 0) = 0.7;
    y(i, 1) = -1.2;
  }
  latnet::ModelSpec spec;
  spec.observed_dim = 2;
  spec.latent_dim = 1;
  spec.hidden_dim = 3;
  spec.n_obs = m;
  const auto result = latnet::pretrain_decoder(x, y, spec, {}, 5);
  CHECK(result.final_loss <= 1e-3);
  for (double probe : {-0.9, 0.1, 1.3}) {
    for (std::size_t r = 0; r < 2; ++r) {
      double out = result.params.b2[r];
      for (std::size_t k = 0; k < 3; ++k)
        out += result.params.w2(r, k) *
               std::tanh(result.params.w1(k, 0) * probe + result.params.b1[k]);
      CHECK(out == Catch::Approx(y(0, r)).margin(0.15));
    }
  }
  CHECK(result.final_loss <= result.initial_loss);
  for (double norm : result.column_norms) CHECK(norm > 0.0);
}

TEST_CASE("pretraining loss descends over early epochs", "[anchors]") {
  Rng rng(19);
  const DenseMatrix x = random_matrix(rng, 20, 2);
  DenseMatrix y(20, 3);
  for (std::size_t i = 0; i < 20; ++i) {
    y(i, 0) = std::sin(x(i, 0));
    y(i, 1) = x(i, 0) * x(i, 1);
    y(i, 2) = std::cos(x(i, 1));
  }
  latnet::ModelSpec spec;
  spec.observed_dim = 3;
  spec.latent_dim = 2;
  spec.hidden_dim = 4;
  spec.n_obs = 20;
  latnet::AdamConfig opt;
  opt.epochs = 10;
  const auto result = latnet::pretrain_decoder(x, y, spec, opt, 23);
  REQUIRE(result.loss_history.size() == 11);
  int increases = 0;
  for (std::size_t e = 1; e < result.loss_history.size(); ++e)
    if (result.loss_history[e] > result.loss_history[e - 1]) ++increases;
  CHECK(increases <= 2);
  CHECK(result.final_loss <= result.initial_loss);
}

TEST_CASE("zero-epoch pretraining returns the initialization", "[anchors]") {
  Rng rng(29);
  const DenseMatrix x = random_matrix(rng, 8, 2);
  const DenseMatrix y = random_matrix(rng, 8, 4);
  latnet::ModelSpec spec;
  spec.observed_dim = 4;
  spec.latent_dim = 2;
  spec.hidden_dim = 3;
  spec.n_obs = 8;
  latnet::AdamConfig opt;
  opt.epochs = 0;
  const auto a = latnet::pretrain_decoder(x, y, spec, opt, 31);
  const auto b = latnet::pretrain_decoder(x, y, spec, opt, 31);
  CHECK(a.params.w1 == b.params.w1);
  CHECK(a.params.b1 == b.params.b1);
  CHECK(a.params.w2 == b.params.w2);
  CHECK(a.params.b2 == b.params.b2);
  CHECK(a.final_loss == a.initial_loss);
  CHECK(a.loss_history == std::vector<double>{a.initial_loss});
  CHECK(a.column_norms == latnet::column_norms(a.params.w1));
  for (double v : a.params.b1) CHECK(v == 0.0);
  for (double v : a.params.b2) CHECK(v == 0.0);
}

TEST_CASE("pretraining never ends above the initial loss", "[anchors]") {
  latnet::ModelSpec spec;
  spec.observed_dim = 3;
  spec.latent_dim = 2;
  spec.hidden_dim = 3;
  spec.n_obs = 10;
  latnet::AdamConfig opt;
  opt.epochs = 50;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    const DenseMatrix x = random_matrix(rng, 10, 2);
    const DenseMatrix y = random_matrix(rng, 10, 3);
    const auto result = latnet::pretrain_decoder(x, y, spec, opt, seed);
    CHECK(result.final_loss <= result.initial_loss);
  }
}

TEST_CASE("pretraining rejects an unrecoverable learning rate", "[anchors]") {
  Rng rng(37);
  const DenseMatrix x = random_matrix(rng, 6, 1);
  const DenseMatrix y = random_matrix(rng, 6, 2);
  latnet::ModelSpec spec;
  spec.observed_dim = 2;
  spec.latent_dim = 1;
  spec.hidden_dim = 2;
  spec.n_obs = 6;
  latnet::AdamConfig opt;
  opt.rate = 1e170;
  opt.epochs = 3;
  CHECK_THROWS_AS(latnet::pretrain_decoder(x, y, spec, opt, 1), latnet::NonFiniteLoss);
}

TEST_CASE("pretraining dimension validation", "[anchors]") {
  Rng rng(41);
  latnet::ModelSpec spec;
  spec.observed_dim = 3;
  spec.latent_dim = 2;
  spec.hidden_dim = 2;
  spec.n_obs = 5;
  CHECK_THROWS_AS(
      latnet::pretrain_decoder(random_matrix(rng, 5, 2), random_matrix(rng, 4, 3), spec),
      latnet::DimensionMismatch);
  CHECK_THROWS_AS(
      latnet::pretrain_decoder(random_matrix(rng, 5, 1), random_matrix(rng, 5, 3), spec),
      latnet::DimensionMismatch);
  CHECK_THROWS_AS(
      latnet::pretrain_decoder(random_matrix(rng, 5, 2), random_matrix(rng, 5, 2), spec),
      latnet::DimensionMismatch);
}

TEST_CASE("anchor set composes selection, embedding, and rescale", "[anchors]") {
  const DenseMatrix y = noisy_curve(43, 60, 0.03);
  latnet::LLEConfig cfg;
  cfg.target_dim = 2;
  latnet::ModelSpec spec;
  spec.observed_dim = 3;
  spec.latent_dim = 2;
  spec.hidden_dim = 4;
  spec.n_obs = 60;
  latnet::AdamConfig opt;
  opt.epochs = 200;
  const auto set = latnet::build_anchor_set(y, 12, cfg, spec, 51, opt);
  REQUIRE(set.indices.size() == 12);
  CHECK(std::is_sorted(set.indices.begin(), set.indices.end()));
  CHECK(set.indices.back() < 60);
  REQUIRE(set.values.rows() == 12);
  REQUIRE(set.values.cols() == 2);
  REQUIRE(set.column_norms.size() == 2);
  for (double norm : set.column_norms) CHECK(norm > 0.0);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(set.values(i, j) == set.source_embedding(i, j) * set.column_norms[j]);
  CHECK(set.seed == 51);

  const auto again = latnet::build_anchor_set(y, 12, cfg, spec, 51, opt);
  CHECK(again.indices == set.indices);
  CHECK(again.values == set.values);
  CHECK(again.column_norms == set.column_norms);
  CHECK(again.source_embedding == set.source_embedding);
}

TEST_CASE("anchor set can embed the whole dataset first", "[anchors]") {
  const DenseMatrix y = noisy_curve(43, 60, 0.03);
  latnet::LLEConfig cfg;
  cfg.target_dim = 2;
  latnet::ModelSpec spec;
  spec.observed_dim = 3;
  spec.latent_dim = 2;
  spec.hidden_dim = 4;
  spec.n_obs = 60;
  latnet::AdamConfig opt;
  opt.epochs = 200;
  const auto full = latnet::build_anchor_set(y, 12, cfg, spec, 51, opt, true);
  const auto subset = latnet::build_anchor_set(y, 12, cfg, spec, 51, opt, false);
  CHECK(full.indices == subset.indices);
  REQUIRE(full.values.rows() == 12);
  REQUIRE(full.values.cols() == 2);
  REQUIRE(full.column_norms.size() == 2);
  for (double norm : full.column_norms) CHECK(norm > 0.0);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(full.values(i, j) == full.source_embedding(i, j) * full.column_norms[j]);
  CHECK(full.values != subset.values);

  const auto again = latnet::build_anchor_set(y, 12, cfg, spec, 51, opt, true);
  CHECK(again.values == full.values);
  CHECK(again.source_embedding == full.source_embedding);
}

TEST_CASE("anchor set validates configuration agreement", "[anchors]") {
  const DenseMatrix y = noisy_curve(47, 30, 0.03);
  latnet::LLEConfig cfg;
  cfg.target_dim = 1;
  latnet::ModelSpec spec;
  spec.observed_dim = 3;
  spec.latent_dim = 2;
  spec.hidden_dim = 4;
  spec.n_obs = 30;
  CHECK_THROWS_AS(latnet::build_anchor_set(y, 8, cfg, spec, 1), latnet::DimensionMismatch);
  cfg.target_dim = 2;
  CHECK_THROWS_AS(latnet::build_anchor_set(latnet::DenseMatrix(30, 2), 8, cfg, spec, 1),
                  latnet::DimensionMismatch);
  CHECK_THROWS_AS(latnet::build_anchor_set(y, 30, cfg, spec, 1), latnet::InvalidCount);
}

TEST_CASE("anchor pairs cover a small fraction of all pairs", "[anchors]") {
  const double fraction = (40.0 * 39.0 / 2.0) / (640.0 * 639.0 / 2.0);
  CHECK(fraction == Catch::Approx(0.0038).margin(2e-4));
  CHECK(fraction < 0.005);
}

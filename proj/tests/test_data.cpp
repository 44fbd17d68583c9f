#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "latnet/data.hpp"

namespace {

namespace fs = std::filesystem;

std::string write_temp(const std::string& name, const std::string& content) {
  const fs::path path = fs::temp_directory_path() / name;
  std::ofstream out(path);
  out << content;
  return path.string();
}

}  // namespace

TEST_CASE("noiseless hypersphere points sit on the unit sphere", "[data]") {
  const auto sim = latnet::simulate_hypersphere(50, 0.0, 3);
  for (std::size_t i = 0; i < 50; ++i) {
    const double norm = std::sqrt(sim.data.y(i, 0) * sim.data.y(i, 0) +
                                  sim.data.y(i, 1) * sim.data.y(i, 1) +
                                  sim.data.y(i, 2) * sim.data.y(i, 2));
    CHECK(norm == Catch::Approx(1.0).margin(1e-12));
  }
  CHECK(sim.data.y == sim.true_points);
}

TEST_CASE("hypersphere simulation defaults and determinism", "[data]") {
  const auto sim = latnet::simulate_hypersphere();
  CHECK(sim.data.y.rows() == 640);
  CHECK(sim.data.y.cols() == 3);
  CHECK(sim.true_distances.rows() == 640);

  const auto a = latnet::simulate_hypersphere(30, 0.05, 9);
  const auto b = latnet::simulate_hypersphere(30, 0.05, 9);
  CHECK(a.data.y == b.data.y);
  CHECK(a.true_points == b.true_points);
  CHECK(a.true_distances == b.true_distances);
  CHECK(a.data.y != latnet::simulate_hypersphere(30, 0.05, 10).data.y);
}

TEST_CASE("hypersphere noise perturbs observations at the stated scale", "[data]") {
  const auto sim = latnet::simulate_hypersphere(200, 0.05, 21);
  double total = 0.0;
  for (std::size_t i = 0; i < 200; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      total += std::abs(sim.data.y(i, j) - sim.true_points(i, j));
  const double mean_abs = total / 600.0;
  CHECK(mean_abs > 0.02);
  CHECK(mean_abs < 0.08);
}

TEST_CASE("hypersphere truth distances are chordal by default", "[data]") {
  const auto sim = latnet::simulate_hypersphere(12, 0.1, 5);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(sim.true_distances(i, i) == 0.0);
    for (std::size_t j = 0; j < 12; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        const double delta = sim.true_points(i, k) - sim.true_points(j, k);
        s += delta * delta;
      }
      CHECK(sim.true_distances(i, j) == Catch::Approx(std::sqrt(s)).margin(1e-14));
      CHECK(sim.true_distances(i, j) == sim.true_distances(j, i));
    }
  }
}

TEST_CASE("geodesic truth metric matches the chord relation", "[data]") {
  const auto chord = latnet::simulate_hypersphere(10, 0.0, 7, latnet::TruthMetric::chordal);
  const auto arc = latnet::simulate_hypersphere(10, 0.0, 7, latnet::TruthMetric::geodesic);
  CHECK(chord.true_points == arc.true_points);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) {
      const double expected = 2.0 * std::asin(std::min(1.0, chord.true_distances(i, j) / 2.0));
      CHECK(arc.true_distances(i, j) == Catch::Approx(expected).margin(1e-12));
    }
}

TEST_CASE("hypersphere input validation", "[data]") {
  CHECK_THROWS_AS(latnet::simulate_hypersphere(0, 0.05, 1), latnet::InvalidCount);
  CHECK_THROWS_AS(latnet::simulate_hypersphere(10, -0.1, 1), latnet::InvalidCount);
}

TEST_CASE("csv loading maps labels and standardizes features", "[data]") {
  const auto path = write_temp("latnet_basic.csv",
                               "a,b,label\n"
                               "1.0,10,x\n"
                               "2.0,20,y\n"
                               "3.0,30,x\n"
                               "4.0,40,z\n");
  const auto data = latnet::load_csv(path, "label");
  REQUIRE(data.y.rows() == 4);
  REQUIRE(data.y.cols() == 2);
  CHECK(data.column_names == std::vector<std::string>{"a", "b"});
  CHECK(data.has_labels);
  CHECK(data.labels == std::vector<int>{0, 1, 0, 2});
  CHECK(data.label_names == std::vector<std::string>{"x", "y", "z"});
  CHECK(data.n_classes() == 3);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < 4; ++r) mean += data.y(r, c);
    mean /= 4.0;
    for (std::size_t r = 0; r < 4; ++r) var += (data.y(r, c) - mean) * (data.y(r, c) - mean);
    var /= 3.0;
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(var == Catch::Approx(1.0).margin(1e-10));
  }
  CHECK(data.provenance == path);
}

TEST_CASE("csv loading without standardization only centers", "[data]") {
  const auto path = write_temp("latnet_center.csv", "v\n1\n2\n6\n");
  const auto data = latnet::load_csv(path, "", false);
  CHECK(data.y(0, 0) == Catch::Approx(-2.0).margin(1e-12));
  CHECK(data.y(1, 0) == Catch::Approx(-1.0).margin(1e-12));
  CHECK(data.y(2, 0) == Catch::Approx(3.0).margin(1e-12));
  CHECK_FALSE(data.has_labels);
}

TEST_CASE("constant csv columns survive standardization", "[data]") {
  const auto path = write_temp("latnet_const.csv", "a,b\n5,1\n5,2\n5,3\n");
  const auto data = latnet::load_csv(path);
  for (std::size_t r = 0; r < 3; ++r) CHECK(data.y(r, 0) == 0.0);
  CHECK(data.y(2, 1) > 0.0);
}

TEST_CASE("csv loading handles crlf and numeric labels", "[data]") {
  const auto path = write_temp("latnet_crlf.csv", "a,cls\r\n1,5\r\n2,3\r\n3,5\r\n");
  const auto data = latnet::load_csv(path, "cls");
  CHECK(data.labels == std::vector<int>{0, 1, 0});
  CHECK(data.label_names == std::vector<std::string>{"5", "3"});
}

TEST_CASE("csv parse failures carry locations", "[data]") {
  const auto bad_number = write_temp("latnet_badnum.csv", "a,b\n1,2\n3,oops\n");
  CHECK_THROWS_WITH(latnet::load_csv(bad_number),
                    Catch::Matchers::ContainsSubstring("row 3") &&
                        Catch::Matchers::ContainsSubstring("column 'b'"));

  const auto ragged = write_temp("latnet_ragged.csv", "a,b\n1,2\n3\n");
  CHECK_THROWS_AS(latnet::load_csv(ragged), latnet::ParseError);

  const auto missing = write_temp("latnet_missing.csv", "a,b\n1,\n2,3\n");
  CHECK_THROWS_AS(latnet::load_csv(missing), latnet::MissingValue);

  const auto header_only = write_temp("latnet_empty.csv", "a,b\n");
  CHECK_THROWS_AS(latnet::load_csv(header_only), latnet::ParseError);

  CHECK_THROWS_AS(latnet::load_csv(write_temp("latnet_nolabel.csv", "a,b\n1,2\n"), "label"),
                  latnet::ParseError);
  CHECK_THROWS_AS(latnet::load_csv("/nonexistent/latnet.csv"), latnet::ParseError);
}

TEST_CASE("experiment presets carry the documented shapes", "[data]") {
  CHECK(latnet::preset_names() ==
        std::vector<std::string>{"sphere", "ecoli", "knowledge", "banknote"});

  const auto sphere = latnet::preset_config("sphere");
  CHECK(sphere.p == 3);
  CHECK(sphere.q == 2);
  CHECK(sphere.h == 10);
  CHECK(sphere.n == 640);
  CHECK(sphere.n_ref == 40);
  CHECK(sphere.n_ref_options == std::vector<std::size_t>{40, 120});
  CHECK_FALSE(sphere.standardize);
  CHECK(sphere.noise_sd == 0.05);

  const auto ecoli = latnet::preset_config("ecoli");
  CHECK(ecoli.p == 7);
  CHECK(ecoli.q == 1);
  CHECK(ecoli.h == 5);
  CHECK(ecoli.n_ref == 20);
  CHECK(ecoli.clusters == 8);
  CHECK(ecoli.standardize);

  const auto knowledge = latnet::preset_config("knowledge");
  CHECK(knowledge.p == 5);
  CHECK(knowledge.q == 1);
  CHECK(knowledge.h == 10);
  CHECK(knowledge.n_ref == 15);
  CHECK(knowledge.clusters == 4);

  const auto banknote = latnet::preset_config("banknote");
  CHECK(banknote.p == 4);
  CHECK(banknote.q == 2);
  CHECK(banknote.h == 20);
  CHECK(banknote.n_ref == 80);
  CHECK(banknote.clusters == 2);

  for (const auto& name : latnet::preset_names()) {
    const auto cfg = latnet::preset_config(name);
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.lle.target_dim == cfg.q);
  }
  CHECK_THROWS_AS(latnet::preset_config("unknown"), latnet::InvalidCount);
}

TEST_CASE("run config validation rejects inconsistent settings", "[data]") {
  auto cfg = latnet::preset_config("sphere");
  cfg.q = 3;
  CHECK_THROWS_AS(cfg.validate(), latnet::DimensionMismatch);
  cfg = latnet::preset_config("sphere");
  cfg.lle.target_dim = 1;
  CHECK_THROWS_AS(cfg.validate(), latnet::DimensionMismatch);
  cfg = latnet::preset_config("sphere");
  cfg.n_ref = 0;
  CHECK_THROWS_AS(cfg.validate(), latnet::InvalidCount);
  cfg = latnet::preset_config("sphere");
  cfg.n_ref = 0;
  cfg.use_anchors = false;
  CHECK_NOTHROW(cfg.validate());
  cfg = latnet::preset_config("sphere");
  cfg.lle_scope = "sometimes";
  CHECK_THROWS_AS(cfg.validate(), latnet::InvalidCount);
  cfg = latnet::preset_config("sphere");
  cfg.truth_metric = "manhattan";
  CHECK_THROWS_AS(cfg.validate(), latnet::InvalidCount);
}

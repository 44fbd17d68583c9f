#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "latnet/rng.hpp"

TEST_CASE("derive_seed separates streams", "[rng]") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 8; ++s)
    for (std::uint64_t c = 0; c < 8; ++c) seen.insert(latnet::derive_seed(s, c));
  CHECK(seen.size() == 64);
  CHECK(latnet::derive_seed(42, 3) == latnet::derive_seed(42, 3));
  CHECK(latnet::derive_seed(42, 3) != latnet::derive_seed(42, 4));
  CHECK(latnet::derive_seed(42, 3) != latnet::derive_seed(43, 3));
}

TEST_CASE("uniform stays in the half-open unit interval", "[rng]") {
  latnet::Rng rng(1);
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("uniform_int covers its range without bias artifacts", "[rng]") {
  latnet::Rng rng(2);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const std::uint64_t v = rng.uniform_int(7);
    REQUIRE(v < 7);
    ++counts[static_cast<std::size_t>(v)];
  }
  for (int c : counts) {
    CHECK(c > 9000);
    CHECK(c < 11000);
  }
}

TEST_CASE("normal has roughly standard moments", "[rng]") {
  latnet::Rng rng(3);
  const int n = 200000;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum_sq += x * x;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("identical seeds give identical sequences", "[rng]") {
  latnet::Rng a(77);
  latnet::Rng b(77);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform_int(1000) == b.uniform_int(1000));
  }
}

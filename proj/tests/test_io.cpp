#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "latnet/io.hpp"

namespace {

namespace fs = std::filesystem;

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

std::string temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::create_directories(dir);
  return dir.string();
}

latnet::DenseMatrix awkward_matrix() {
  latnet::DenseMatrix m(3, 2);
  m(0, 0) = 1.0 / 3.0;
  m(0, 1) = -2.718281828459045;
  m(1, 0) = 1e-300;
  m(1, 1) = 12345.678901234567;
  m(2, 0) = -0.0;
  m(2, 1) = 7.0;
  return m;
}

}  // namespace

TEST_CASE("matrix csv round trips bit exactly", "[io]") {
  const auto path = temp_path("latnet_matrix.csv");
  const auto m = awkward_matrix();
  latnet::write_matrix_csv(path, {"left", "right"}, m);
  const auto back = latnet::read_matrix_csv(path);
  CHECK(back.header == std::vector<std::string>{"left", "right"});
  REQUIRE(back.values.rows() == 3);
  REQUIRE(back.values.cols() == 2);
  CHECK(back.values == m);
}

TEST_CASE("matrix csv write validation", "[io]") {
  CHECK_THROWS_AS(latnet::write_matrix_csv(temp_path("latnet_w.csv"), {"only"},
                                           awkward_matrix()),
                  latnet::SizeMismatch);
  CHECK_THROWS_AS(latnet::write_matrix_csv("/nonexistent/dir/out.csv", {"a", "b"},
                                           awkward_matrix()),
                  latnet::ParseError);
}

TEST_CASE("matrix csv read failures carry locations", "[io]") {
  CHECK_THROWS_AS(latnet::read_matrix_csv(temp_path("latnet_absent.csv")), latnet::ParseError);

  const auto ragged = temp_path("latnet_ragged_io.csv");
  std::ofstream(ragged) << "a,b\n1,2\n3\n";
  CHECK_THROWS_WITH(latnet::read_matrix_csv(ragged),
                    Catch::Matchers::ContainsSubstring("row 3"));

  const auto textual = temp_path("latnet_text_io.csv");
  std::ofstream(textual) << "a\n1\nfoo\n";
  CHECK_THROWS_WITH(latnet::read_matrix_csv(textual),
                    Catch::Matchers::ContainsSubstring("not numeric"));
}

TEST_CASE("index csv lists one value per line", "[io]") {
  const auto path = temp_path("latnet_index.csv");
  latnet::write_index_csv(path, "index", {4, 0, 17});
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  CHECK(lines == std::vector<std::string>{"index", "4", "0", "17"});
}

TEST_CASE("json files round trip and reject malformed input", "[io]") {
  const auto path = temp_path("latnet_round.json");
  nlohmann::json j = {{"alpha", 1.5}, {"items", {1, 2, 3}}};
  latnet::write_json(path, j);
  CHECK(latnet::read_json(path) == j);

  const auto broken = temp_path("latnet_broken.json");
  std::ofstream(broken) << "{ not json";
  CHECK_THROWS_AS(latnet::read_json(broken), latnet::ParseError);
  CHECK_THROWS_AS(latnet::read_json(temp_path("latnet_missing.json")), latnet::ParseError);
}

TEST_CASE("matrix json round trips", "[io]") {
  const auto m = awkward_matrix();
  CHECK(latnet::matrix_from_json(latnet::matrix_to_json(m)) == m);
  CHECK(latnet::matrix_from_json(nlohmann::json::array()).rows() == 0);
  CHECK_THROWS_AS(latnet::matrix_from_json(nlohmann::json{{"k", 1}}), latnet::ParseError);
  nlohmann::json ragged = nlohmann::json::array();
  ragged.push_back({1.0, 2.0});
  ragged.push_back({3.0});
  CHECK_THROWS_AS(latnet::matrix_from_json(ragged), latnet::ParseError);
}

TEST_CASE("anchor sets round trip through json", "[io]") {
  latnet::AnchorSet set;
  set.indices = {1, 4, 6};
  set.values = latnet::DenseMatrix(3, 2);
  set.values(0, 0) = 0.5;
  set.values(0, 1) = -1.25;
  set.values(1, 0) = 2.0;
  set.values(1, 1) = 0.75;
  set.values(2, 0) = -3.5;
  set.values(2, 1) = 1.0 / 7.0;
  set.column_norms = {2.0, 0.5};
  set.seed = 99;
  set.config.n_neighbors = 4;
  set.config.ridge = 1e-2;
  set.config.target_dim = 2;

  const auto j = latnet::anchor_set_to_json(set);
  const auto back = latnet::anchor_set_from_json(j);
  CHECK(back.indices == set.indices);
  CHECK(back.values == set.values);
  CHECK(back.column_norms == set.column_norms);
  CHECK(back.seed == set.seed);
  CHECK(back.config.n_neighbors == 4);
  CHECK(back.config.ridge == 1e-2);
  CHECK(back.config.target_dim == 2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(back.source_embedding(i, c) == set.values(i, c) / set.column_norms[c]);
}

TEST_CASE("anchor set json reload guards degenerate norms and shapes", "[io]") {
  latnet::AnchorSet set;
  set.indices = {0};
  set.values = latnet::DenseMatrix(1, 1);
  set.values(0, 0) = 0.0;
  set.column_norms = {0.0};
  set.config.target_dim = 1;
  const auto back = latnet::anchor_set_from_json(latnet::anchor_set_to_json(set));
  CHECK(back.source_embedding(0, 0) == 0.0);

  auto j = latnet::anchor_set_to_json(set);
  j.erase("column_norms");
  CHECK_THROWS_AS(latnet::anchor_set_from_json(j), latnet::ParseError);

  j = latnet::anchor_set_to_json(set);
  j["indices"] = {0, 1};
  CHECK_THROWS_AS(latnet::anchor_set_from_json(j), latnet::SizeMismatch);
}

TEST_CASE("run configs round trip through json", "[io]") {
  auto cfg = latnet::preset_config("banknote");
  cfg.sampler.chains = 6;
  cfg.sampler.workers = 2;
  cfg.pretrain.epochs = 123;
  cfg.pairs = 9;
  cfg.thin = 5;
  cfg.seed = 42;
  cfg.label_column = "class";
  cfg.input_path = "data/banknote.csv";
  cfg.output_dir = "out/banknote";

  latnet::RunConfig other;
  latnet::run_config_merge_json(other, latnet::run_config_to_json(cfg));
  CHECK(other.name == cfg.name);
  CHECK(other.p == cfg.p);
  CHECK(other.q == cfg.q);
  CHECK(other.h == cfg.h);
  CHECK(other.n == cfg.n);
  CHECK(other.n_ref == cfg.n_ref);
  CHECK(other.n_ref_options == cfg.n_ref_options);
  CHECK(other.use_anchors == cfg.use_anchors);
  CHECK(other.constrain == cfg.constrain);
  CHECK(other.standardize == cfg.standardize);
  CHECK(other.noise_sd == cfg.noise_sd);
  CHECK(other.truth_metric == cfg.truth_metric);
  CHECK(other.lle_scope == cfg.lle_scope);
  CHECK(other.sampler.chains == 6);
  CHECK(other.sampler.workers == 2);
  CHECK(other.sampler.target_accept == cfg.sampler.target_accept);
  CHECK(other.lle.n_neighbors == cfg.lle.n_neighbors);
  CHECK(other.lle.ridge == cfg.lle.ridge);
  CHECK(other.lle.target_dim == cfg.q);
  CHECK(other.pretrain.epochs == 123);
  CHECK(other.clusters == cfg.clusters);
  CHECK(other.pairs == 9);
  CHECK(other.thin == 5);
  CHECK(other.seed == 42);
  CHECK(other.label_column == "class");
  CHECK(other.input_path == cfg.input_path);
  CHECK(other.output_dir == cfg.output_dir);
}

TEST_CASE("partial config json only touches listed keys", "[io]") {
  auto cfg = latnet::preset_config("sphere");
  const auto before = latnet::run_config_to_json(cfg);
  nlohmann::json patch = {{"q", 1}, {"sampler", {{"chains", 7}}}};
  latnet::run_config_merge_json(cfg, patch);
  CHECK(cfg.q == 1);
  CHECK(cfg.sampler.chains == 7);
  CHECK(cfg.lle.target_dim == 1);
  CHECK(cfg.p == before["p"].get<std::size_t>());
  CHECK(cfg.sampler.warmup_iters == before["sampler"]["warmup_iters"].get<std::size_t>());
  CHECK(cfg.n_ref == before["n_ref"].get<std::size_t>());

  nlohmann::json bad = {{"p", "three"}};
  CHECK_THROWS_AS(latnet::run_config_merge_json(cfg, bad), latnet::ParseError);
}

TEST_CASE("trace bundles round trip through disk", "[io]") {
  const auto dir = temp_dir("latnet_traces");
  std::vector<latnet::ChainTrace> traces(2);
  for (int c = 0; c < 2; ++c) {
    auto& t = traces[c];
    t.chain_id = c;
    t.seed = 100 + static_cast<std::uint64_t>(c);
    t.draws = latnet::DenseMatrix(3, 2);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t k = 0; k < 2; ++k)
        t.draws(r, k) = 0.1 * static_cast<double>(r + 1) + static_cast<double>(c) + 1.0 / 3.0;
    t.log_posterior = {-1.5, -2.5, -0.25};
    t.step_size = {0.3, 0.3, 0.31};
    t.accept_stat = {0.9, 0.7, 1.0};
    t.tree_depth = {2, 3, 1};
    t.divergent = {0, 1, 0};
    t.initial_state = {0.5, -0.5};
    t.adapted_step = 0.2971;
    t.mass_diagonal = {1.25, 0.8};
    t.warmup_divergences = 4;
    t.divergences = 1;
    t.mean_accept = 0.82;
  }
  latnet::write_traces(dir, traces, {"x[0][0]", "x[0][1]"});

  const auto bundle = latnet::load_traces(dir);
  CHECK(bundle.coordinate_names == std::vector<std::string>{"x[0][0]", "x[0][1]"});
  REQUIRE(bundle.traces.size() == 2);
  for (int c = 0; c < 2; ++c) {
    const auto& got = bundle.traces[c];
    const auto& want = traces[c];
    CHECK(got.chain_id == want.chain_id);
    CHECK(got.seed == want.seed);
    CHECK(got.draws == want.draws);
    CHECK(got.log_posterior == want.log_posterior);
    CHECK(got.step_size == want.step_size);
    CHECK(got.accept_stat == want.accept_stat);
    CHECK(got.tree_depth == want.tree_depth);
    CHECK(got.divergent == want.divergent);
    CHECK(got.initial_state == want.initial_state);
    CHECK(got.adapted_step == want.adapted_step);
    CHECK(got.mass_diagonal == want.mass_diagonal);
    CHECK(got.warmup_divergences == want.warmup_divergences);
    CHECK(got.divergences == want.divergences);
    CHECK(got.mean_accept == want.mean_accept);
  }
}

TEST_CASE("trace loading rejects broken directories", "[io]") {
  const auto empty = temp_dir("latnet_traces_empty");
  CHECK_THROWS_AS(latnet::load_traces(empty), latnet::ParseError);

  const auto headless = temp_dir("latnet_traces_headless");
  latnet::write_json(headless + "/stats.json", nlohmann::json{{"chains", nlohmann::json::array()}});
  CHECK_THROWS_AS(latnet::load_traces(headless), latnet::ParseError);

  const auto partial = temp_dir("latnet_traces_partial");
  nlohmann::json chain = {{"chain_id", 0}, {"seed", 1}};
  latnet::write_json(partial + "/stats.json",
                     nlohmann::json{{"chains", nlohmann::json::array({chain})}});
  CHECK_THROWS_AS(latnet::load_traces(partial), latnet::ParseError);
}

TEST_CASE("layout reconstruction from a trace header", "[io]") {
  latnet::ModelSpec spec;
  spec.observed_dim = 3;
  spec.latent_dim = 2;
  spec.hidden_dim = 2;
  spec.n_obs = 5;
  const std::vector<std::size_t> anchors = {1, 3};
  const auto layout = latnet::ParamLayout::create(spec, anchors);
  const auto header = layout.coordinate_names();

  const auto rebuilt = latnet::layout_from_header(header, anchors);
  CHECK(rebuilt.p == layout.p);
  CHECK(rebuilt.q == layout.q);
  CHECK(rebuilt.h == layout.h);
  CHECK(rebuilt.n == layout.n);
  CHECK(rebuilt.dim == layout.dim);
  CHECK(rebuilt.free_rows == layout.free_rows);
  CHECK(rebuilt.coordinate_names() == header);

  CHECK_THROWS_AS(latnet::layout_from_header(header, {0}), latnet::ParseError);
  CHECK_THROWS_AS(latnet::layout_from_header({"w1[0][0]", "nonsense"}, {}), latnet::ParseError);

  const auto unanchored = latnet::ParamLayout::create(spec, {});
  const auto again = latnet::layout_from_header(unanchored.coordinate_names(), {});
  CHECK(again.n_free() == 5);
  CHECK(again.dim == unanchored.dim);
}

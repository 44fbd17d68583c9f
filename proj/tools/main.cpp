#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "latnet/analysis.hpp"
#include "latnet/anchors.hpp"
#include "latnet/data.hpp"
#include "latnet/errors.hpp"
#include "latnet/io.hpp"
#include "latnet/model.hpp"
#include "latnet/sampler.hpp"

namespace {

namespace fs = std::filesystem;
using latnet::DenseMatrix;

// Flag or configuration problem; reported before any computation starts.
struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sub-seed streams derived from the top-level seed, one per pipeline stage,
// so a stage rerun in isolation reproduces its in-pipeline output.
constexpr std::uint64_t kSimulateStream = 0;
constexpr std::uint64_t kAnchorStream = 1;
constexpr std::uint64_t kSamplerStream = 2;
constexpr std::uint64_t kAnalysisStream = 3;

template <class Fn>
void usage_check(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& err) {
    throw UsageFailure(err.what());
  }
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageFailure(what + " is required");
  if (!fs::exists(path)) throw UsageFailure(what + " not found: " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw latnet::ParseError("cannot create directory " + dir + ": " + ec.message());
}

// All recognized flag values; each subcommand registers the subset it
// supports, and values only apply when the flag was actually given.
struct FlagBag {
  std::string preset, config, data, label, anchors, truth, traces, out, metric, lle_scope;
  std::size_t n = 0, n_ref = 0, q = 0, h = 0, chains = 0, warmup = 0, iters = 0,
              workers = 0, neighbors = 0, epochs = 0, clusters = 0, pairs = 0, thin = 0;
  int max_depth = 0;
  double noise_sd = 0.0, ridge = 0.0, target_accept = 0.0, init_scale = 0.0, rate = 0.0;
  std::uint64_t seed = 0;
  bool no_standardize = false, no_constraint = false, no_anchors = false;
};

void add_config_flags(CLI::App* sub, FlagBag& f) {
  sub->add_option("--preset", f.preset, "named experiment preset (sphere, ecoli, knowledge, banknote)");
  sub->add_option("--config", f.config, "JSON configuration file")->option_text("FILE");
  sub->add_option("--seed", f.seed, "top-level seed; every stage derives its own stream");
}

void add_data_flags(CLI::App* sub, FlagBag& f) {
  sub->add_option("--data", f.data, "input CSV with a header row")->option_text("FILE");
  sub->add_option("--label", f.label, "name of the label column in the input CSV");
  sub->add_flag("--no-standardize", f.no_standardize, "center columns without scaling them");
}

void add_model_flags(CLI::App* sub, FlagBag& f) {
  sub->add_option("--q", f.q, "latent dimension");
  sub->add_option("--h", f.h, "hidden layer width");
}

CLI::App* add_subcommand(CLI::App& app, const std::string& name, const std::string& text) {
  CLI::App* sub = app.add_subcommand(name, text);
  sub->set_help_flag("--help", "print this help message and exit");
  return sub;
}

void add_anchor_flags(CLI::App* sub, FlagBag& f) {
  sub->add_option("--n-ref", f.n_ref, "number of anchor points");
  sub->add_option("--lle-scope", f.lle_scope, "embed 'anchors' only or the 'full' dataset");
  sub->add_option("--neighbors", f.neighbors, "LLE neighbor count");
  sub->add_option("--ridge", f.ridge, "LLE Gram regularization fraction");
  sub->add_option("--epochs", f.epochs, "pretraining epochs");
  sub->add_option("--rate", f.rate, "pretraining learning rate");
}

void add_sampler_flags(CLI::App* sub, FlagBag& f) {
  sub->add_option("--chains", f.chains, "number of chains");
  sub->add_option("--warmup", f.warmup, "warmup iterations per chain");
  sub->add_option("--iters", f.iters, "retained draws per chain");
  sub->add_option("--target-accept", f.target_accept, "step size adaptation target");
  sub->add_option("--max-depth", f.max_depth, "maximum tree depth");
  sub->add_option("--init-scale", f.init_scale, "uniform initialization half-width");
  sub->add_option("--workers", f.workers, "chains run concurrently");
  sub->add_flag("--no-constraint", f.no_constraint, "skip the first-layer column normalization");
}

void add_analysis_flags(CLI::App* sub, FlagBag& f) {
  sub->add_option("--pairs", f.pairs, "number of random free pairs to trace");
  sub->add_option("--clusters", f.clusters, "cluster count; 0 uses the label class count");
  sub->add_option("--thin", f.thin, "cluster every thin-th retained draw");
}

bool flag_given(const CLI::App* sub, const std::string& name) {
  const CLI::Option* opt = sub->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

// Preset, then config file, then explicit flags, later sources winning.
latnet::RunConfig resolve_config(const CLI::App* sub, const FlagBag& f) {
  latnet::RunConfig cfg;
  usage_check([&] {
    if (flag_given(sub, "--preset")) cfg = latnet::preset_config(f.preset);
    if (flag_given(sub, "--config")) {
      require_file(f.config, "--config");
      latnet::run_config_merge_json(cfg, latnet::read_json(f.config));
    }
  });
  const auto given = [&](const char* name) { return flag_given(sub, name); };
  if (given("--seed")) cfg.seed = f.seed;
  if (given("--data")) cfg.input_path = f.data;
  if (given("--label")) cfg.label_column = f.label;
  if (given("--no-standardize")) cfg.standardize = false;
  if (given("--n")) cfg.n = f.n;
  if (given("--noise-sd")) cfg.noise_sd = f.noise_sd;
  if (given("--metric")) cfg.truth_metric = f.metric;
  if (given("--q")) cfg.q = f.q;
  if (given("--h")) cfg.h = f.h;
  if (given("--n-ref")) cfg.n_ref = f.n_ref;
  if (given("--lle-scope")) cfg.lle_scope = f.lle_scope;
  if (given("--neighbors")) cfg.lle.n_neighbors = f.neighbors;
  if (given("--ridge")) cfg.lle.ridge = f.ridge;
  if (given("--epochs")) cfg.pretrain.epochs = f.epochs;
  if (given("--rate")) cfg.pretrain.rate = f.rate;
  if (given("--no-anchors")) cfg.use_anchors = false;
  if (given("--chains")) cfg.sampler.chains = f.chains;
  if (given("--warmup")) cfg.sampler.warmup_iters = f.warmup;
  if (given("--iters")) cfg.sampler.sample_iters = f.iters;
  if (given("--target-accept")) cfg.sampler.target_accept = f.target_accept;
  if (given("--max-depth")) cfg.sampler.max_tree_depth = f.max_depth;
  if (given("--init-scale")) cfg.sampler.init_scale = f.init_scale;
  if (given("--workers")) cfg.sampler.workers = f.workers;
  if (given("--no-constraint")) cfg.constrain = false;
  if (given("--pairs")) cfg.pairs = f.pairs;
  if (given("--clusters")) cfg.clusters = f.clusters;
  if (given("--thin")) cfg.thin = f.thin;
  if (given("--out")) cfg.output_dir = f.out;
  if (given("--out-dir")) cfg.output_dir = f.out;
  cfg.lle.target_dim = cfg.q;
  return cfg;
}

latnet::TruthMetric parse_metric(const latnet::RunConfig& cfg) {
  if (cfg.truth_metric == "chordal") return latnet::TruthMetric::chordal;
  if (cfg.truth_metric == "geodesic") return latnet::TruthMetric::geodesic;
  throw UsageFailure("truth metric must be 'chordal' or 'geodesic'");
}

// Feature count comes from the data; a preset that pins p must agree.
void reconcile_shapes(latnet::RunConfig& cfg, const latnet::Dataset& data) {
  if (cfg.p != 0 && cfg.p != data.y.cols())
    throw UsageFailure("data has " + std::to_string(data.y.cols()) +
                       " feature columns but the configuration expects p=" +
                       std::to_string(cfg.p));
  cfg.p = data.y.cols();
  cfg.n = data.y.rows();
}

latnet::ModelSpec model_spec(const latnet::RunConfig& cfg) {
  latnet::ModelSpec spec;
  spec.observed_dim = cfg.p;
  spec.latent_dim = cfg.q;
  spec.hidden_dim = cfg.h;
  spec.n_obs = cfg.n;
  spec.constrain_columns = cfg.constrain;
  return spec;
}

std::vector<std::string> indexed_header(const std::string& stem, std::size_t n) {
  std::vector<std::string> header;
  header.reserve(n);
  for (std::size_t i = 0; i < n; ++i) header.push_back(stem + std::to_string(i));
  return header;
}

void write_simulation(const std::string& dir, const latnet::Simulation& sim) {
  latnet::write_matrix_csv(dir + "/data.csv", sim.data.column_names, sim.data.y);
  latnet::write_matrix_csv(dir + "/truth_points.csv", sim.data.column_names, sim.true_points);
  latnet::write_matrix_csv(dir + "/truth_distances.csv",
                           indexed_header("d", sim.true_distances.cols()), sim.true_distances);
}

void write_labels(const std::string& path, const std::vector<int>& labels) {
  DenseMatrix column(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) column(i, 0) = labels[i];
  latnet::write_matrix_csv(path, {"label"}, column);
}

std::vector<int> read_labels(const std::string& path) {
  const latnet::CsvMatrix csv = latnet::read_matrix_csv(path);
  if (csv.values.cols() != 1)
    throw latnet::ParseError("labels file " + path + " must have one column");
  std::vector<int> labels(csv.values.rows());
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<int>(csv.values(i, 0));
  return labels;
}

void write_run_json(const std::string& dir, const latnet::RunConfig& cfg) {
  latnet::write_json(dir + "/run.json", latnet::run_config_to_json(cfg));
}

latnet::AnchorSet load_anchor_set(const std::string& path) {
  const std::string file = fs::is_directory(path) ? path + "/anchors.json" : path;
  return latnet::anchor_set_from_json(latnet::read_json(file));
}

struct SampleArtifacts {
  std::vector<latnet::ChainTrace> traces;
  std::vector<std::string> coordinate_names;
  std::size_t total_divergences = 0;
};

SampleArtifacts run_sampling(const latnet::RunConfig& cfg, const DenseMatrix& y,
                             const latnet::AnchorValues& anchors) {
  const latnet::AnchoredPosterior posterior(model_spec(cfg), y, anchors);
  latnet::TargetFn target;
  target.dim = posterior.dim();
  target.value_and_grad = [&posterior](const std::vector<double>& z, std::vector<double>& g) {
    return posterior.value_and_grad(z, g);
  };
  latnet::NutsConfig nuts = cfg.sampler;
  nuts.seed = latnet::derive_seed(cfg.seed, kSamplerStream);
  SampleArtifacts out;
  out.traces = latnet::run_chains(target, nuts);
  out.coordinate_names = posterior.layout().coordinate_names();
  for (const auto& trace : out.traces) out.total_divergences += trace.divergences;
  return out;
}

// Posterior summaries for a trace directory's contents: distance traces with
// convergence diagnostics, error series against a truth matrix when one is
// available, and per-draw spectral clustering reduced by Dahl's method.
void run_analysis(const latnet::RunConfig& cfg, const latnet::TraceBundle& bundle,
                  const std::vector<std::size_t>& anchor_indices,
                  const latnet::AnchorValues& anchors, const DenseMatrix* truth,
                  const std::vector<int>* labels, const std::string& out_dir) {
  const latnet::ParamLayout layout =
      latnet::layout_from_header(bundle.coordinate_names, anchor_indices);
  const std::uint64_t seed = latnet::derive_seed(cfg.seed, kAnalysisStream);
  ensure_dir(out_dir);

  const std::size_t n_free = layout.n_free();
  const std::size_t max_pairs = n_free < 2 ? 0 : n_free * (n_free - 1) / 2;
  const std::size_t pair_count = std::min(cfg.pairs, max_pairs);
  if (pair_count > 0) {
    const auto pairs = latnet::random_free_pairs(layout.n, anchor_indices,
                                                 latnet::derive_seed(seed, 0), pair_count);
    const auto series = latnet::distance_trace(layout, anchors, bundle.traces, pairs);
    std::vector<std::string> header;
    for (const auto& pair : pairs)
      header.push_back("d_" + std::to_string(pair.first) + "_" + std::to_string(pair.second));
    for (std::size_t c = 0; c < series.size(); ++c)
      latnet::write_matrix_csv(out_dir + "/distances_chain" +
                                   std::to_string(bundle.traces[c].chain_id) + ".csv",
                               header, series[c]);

    nlohmann::json diag;
    diag["pairs"] = nlohmann::json::array();
    for (const auto& pair : pairs) diag["pairs"].push_back({pair.first, pair.second});
    diag["split_rhat"] = nlohmann::json::array();
    diag["ess"] = nlohmann::json::array();
    diag["mcse"] = nlohmann::json::array();
    if (bundle.traces.size() >= 2) {
      std::vector<double> rhats;
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        std::vector<std::vector<double>> chains;
        for (const auto& m : series) {
          std::vector<double> column(m.rows());
          for (std::size_t r = 0; r < m.rows(); ++r) column[r] = m(r, p);
          chains.push_back(std::move(column));
        }
        const double rhat = latnet::split_rhat(chains);
        rhats.push_back(rhat);
        diag["split_rhat"].push_back(rhat);
        diag["ess"].push_back(latnet::effective_sample_size(chains));
        diag["mcse"].push_back(latnet::mcse_mean(chains));
      }
      diag["median_split_rhat"] = latnet::detail::median_of(rhats);
    }
    latnet::write_json(out_dir + "/rhat.json", diag);
  }

  if (truth != nullptr) {
    if (truth->rows() != layout.n || truth->cols() != layout.n)
      throw UsageFailure("truth matrix is " + std::to_string(truth->rows()) + "x" +
                         std::to_string(truth->cols()) + " but the traces describe n=" +
                         std::to_string(layout.n));
    const std::size_t draws = bundle.traces.front().draws.rows();
    DenseMatrix errors(draws, bundle.traces.size());
    std::vector<std::string> header;
    for (std::size_t c = 0; c < bundle.traces.size(); ++c) {
      header.push_back("chain" + std::to_string(bundle.traces[c].chain_id));
      const auto& draws_m = bundle.traces[c].draws;
      for (std::size_t k = 0; k < draws_m.rows(); ++k) {
        const DenseMatrix x = latnet::latent_matrix(layout, anchors, draws_m.row(k));
        errors(k, c) = latnet::distance_error(latnet::pairwise_distances(x), *truth);
      }
    }
    latnet::write_matrix_csv(out_dir + "/error.csv", header, errors);
  }

  std::size_t k = cfg.clusters;
  if (k == 0 && labels != nullptr && !labels->empty()) {
    std::set<int> distinct(labels->begin(), labels->end());
    k = distinct.size();
  }
  if (k >= 2) {
    const std::uint64_t cluster_seed = latnet::derive_seed(seed, 1);
    std::vector<std::vector<int>> draws;
    std::vector<std::pair<int, std::size_t>> origin;  // chain id, draw row
    std::size_t stream = 0;
    for (const auto& trace : bundle.traces) {
      for (std::size_t r = 0; r < trace.draws.rows(); r += cfg.thin) {
        const DenseMatrix x = latnet::latent_matrix(layout, anchors, trace.draws.row(r));
        draws.push_back(latnet::spectral_cluster(latnet::pairwise_distances(x), k,
                                                 latnet::derive_seed(cluster_seed, stream)));
        origin.emplace_back(trace.chain_id, r);
        ++stream;
      }
    }
    const DenseMatrix probability = latnet::coclustering_probability(draws);
    const latnet::DahlResult dahl = latnet::dahl_least_squares(draws, probability);
    latnet::write_matrix_csv(out_dir + "/cocluster.csv",
                             indexed_header("c", probability.cols()), probability);
    nlohmann::json dahl_json;
    dahl_json["index"] = dahl.index;
    dahl_json["chain"] = origin[dahl.index].first;
    dahl_json["draw"] = origin[dahl.index].second;
    dahl_json["objective"] = dahl.objective;
    dahl_json["labels"] = dahl.labels;
    dahl_json["clusters"] = k;
    latnet::write_json(out_dir + "/dahl.json", dahl_json);

    const std::vector<int>& order_source =
        (labels != nullptr && labels->size() == dahl.labels.size()) ? *labels : dahl.labels;
    const auto order = latnet::order_by_labels(order_source);
    DenseMatrix order_m(order.size(), 2);
    for (std::size_t i = 0; i < order.size(); ++i) {
      order_m(i, 0) = static_cast<double>(order[i]);
      order_m(i, 1) = order_source[order[i]];
    }
    latnet::write_matrix_csv(out_dir + "/order.csv", {"index", "label"}, order_m);
  }
}

int cmd_simulate(const CLI::App* sub, const FlagBag& f) {
  latnet::RunConfig cfg = resolve_config(sub, f);
  if (cfg.output_dir.empty()) throw UsageFailure("--out is required");
  if (cfg.n == 0) cfg.n = 640;
  const latnet::TruthMetric metric = parse_metric(cfg);
  usage_check([&] {
    if (cfg.n < 1) throw latnet::InvalidCount("need at least one observation");
    if (cfg.noise_sd < 0.0) throw latnet::InvalidCount("noise must be nonnegative");
  });
  const latnet::Simulation sim = latnet::simulate_hypersphere(
      cfg.n, cfg.noise_sd, latnet::derive_seed(cfg.seed, kSimulateStream), metric);
  ensure_dir(cfg.output_dir);
  write_simulation(cfg.output_dir, sim);
  write_run_json(cfg.output_dir, cfg);
  std::cout << "simulate: wrote " << cfg.n << " observations to " << cfg.output_dir << "\n";
  return 0;
}

int cmd_anchors(const CLI::App* sub, const FlagBag& f) {
  latnet::RunConfig cfg = resolve_config(sub, f);
  if (cfg.output_dir.empty()) throw UsageFailure("--out is required");
  require_file(cfg.input_path, "--data");
  const latnet::Dataset data =
      latnet::load_csv(cfg.input_path, cfg.label_column, cfg.standardize);
  reconcile_shapes(cfg, data);
  cfg.use_anchors = true;
  usage_check([&] { cfg.validate(); });
  if (cfg.n_ref >= cfg.n)
    throw UsageFailure("n_ref must be smaller than the number of observations");
  const latnet::AnchorSet set = latnet::build_anchor_set(
      data.y, cfg.n_ref, cfg.lle, model_spec(cfg), latnet::derive_seed(cfg.seed, kAnchorStream),
      cfg.pretrain, cfg.lle_scope == "full");
  ensure_dir(cfg.output_dir);
  latnet::write_json(cfg.output_dir + "/anchors.json", latnet::anchor_set_to_json(set));
  write_run_json(cfg.output_dir, cfg);
  std::cout << "anchors: wrote " << set.indices.size() << " anchors to " << cfg.output_dir
            << "\n";
  return 0;
}

int cmd_sample(const CLI::App* sub, const FlagBag& f) {
  latnet::RunConfig cfg = resolve_config(sub, f);
  if (cfg.output_dir.empty()) throw UsageFailure("--out-dir is required");
  require_file(cfg.input_path, "--data");
  const latnet::Dataset data =
      latnet::load_csv(cfg.input_path, cfg.label_column, cfg.standardize);
  reconcile_shapes(cfg, data);

  latnet::AnchorSet set;
  latnet::AnchorValues anchors;
  cfg.use_anchors = flag_given(sub, "--anchors");
  if (cfg.use_anchors) {
    require_file(f.anchors, "--anchors");
    set = load_anchor_set(f.anchors);
    anchors = latnet::anchor_values(set);
    usage_check([&] {
      if (!anchors.indices.empty() && anchors.indices.back() >= cfg.n)
        throw latnet::IndexOutOfRange("anchor index exceeds the dataset size");
      if (anchors.values.cols() != cfg.q)
        throw latnet::DimensionMismatch("anchor latent dimension does not match q");
    });
    cfg.n_ref = set.indices.size();
  }
  usage_check([&] { cfg.validate(); });

  const SampleArtifacts artifacts = run_sampling(cfg, data.y, anchors);
  ensure_dir(cfg.output_dir);
  latnet::write_traces(cfg.output_dir, artifacts.traces, artifacts.coordinate_names);
  if (cfg.use_anchors)
    latnet::write_json(cfg.output_dir + "/anchors.json", latnet::anchor_set_to_json(set));
  if (data.has_labels) write_labels(cfg.output_dir + "/labels.csv", data.labels);
  write_run_json(cfg.output_dir, cfg);
  std::cout << "sample: " << artifacts.traces.size() << " chains, "
            << artifacts.total_divergences << " post-warmup divergences, traces in "
            << cfg.output_dir << "\n";
  return 0;
}

int cmd_analyze(const CLI::App* sub, const FlagBag& f) {
  latnet::RunConfig cfg = resolve_config(sub, f);
  if (cfg.output_dir.empty()) throw UsageFailure("--out-dir is required");
  require_file(f.traces, "--traces");
  if (cfg.thin < 1) throw UsageFailure("--thin must be >= 1");
  cfg.input_path = f.traces;

  const latnet::TraceBundle bundle = latnet::load_traces(f.traces);
  std::vector<std::size_t> anchor_indices;
  latnet::AnchorValues anchors;
  if (fs::exists(f.traces + "/anchors.json")) {
    const latnet::AnchorSet set = load_anchor_set(f.traces);
    anchor_indices = set.indices;
    anchors = latnet::anchor_values(set);
  }
  std::vector<int> labels;
  bool has_labels = false;
  if (fs::exists(f.traces + "/labels.csv")) {
    labels = read_labels(f.traces + "/labels.csv");
    has_labels = true;
  }
  DenseMatrix truth;
  bool has_truth = false;
  if (flag_given(sub, "--truth")) {
    require_file(f.truth, "--truth");
    truth = latnet::read_matrix_csv(f.truth).values;
    has_truth = true;
  }

  run_analysis(cfg, bundle, anchor_indices, anchors, has_truth ? &truth : nullptr,
               has_labels ? &labels : nullptr, cfg.output_dir);
  write_run_json(cfg.output_dir, cfg);
  std::cout << "analyze: summaries written to " << cfg.output_dir << "\n";
  return 0;
}

int cmd_pipeline(const CLI::App* sub, const FlagBag& f) {
  latnet::RunConfig cfg = resolve_config(sub, f);
  if (cfg.output_dir.empty()) throw UsageFailure("--out-dir is required");
  const std::string root = cfg.output_dir;
  ensure_dir(root);
  const std::string data_dir = root + "/data";
  const std::string anchors_dir = root + "/anchors";
  const std::string traces_dir = root + "/traces";
  const std::string analysis_dir = root + "/analysis";

  // data stage: either simulate the hypersphere or load the input CSV; the
  // simulated file holds raw coordinates so a staged rerun reproduces the
  // in-memory centering below
  latnet::Dataset data;
  DenseMatrix truth;
  bool has_truth = false;
  ensure_dir(data_dir);
  if (cfg.input_path.empty()) {
    if (cfg.n == 0) cfg.n = 640;
    const latnet::TruthMetric metric = parse_metric(cfg);
    const latnet::Simulation sim = latnet::simulate_hypersphere(
        cfg.n, cfg.noise_sd, latnet::derive_seed(cfg.seed, kSimulateStream), metric);
    write_simulation(data_dir, sim);
    data = sim.data;
    latnet::center_columns(data.y, cfg.standardize);
    truth = sim.true_distances;
    has_truth = true;
  } else {
    require_file(cfg.input_path, "--data");
    data = latnet::load_csv(cfg.input_path, cfg.label_column, cfg.standardize);
    std::error_code ec;
    fs::copy_file(cfg.input_path, data_dir + "/data.csv",
                  fs::copy_options::overwrite_existing, ec);
    if (ec)
      throw latnet::ParseError("cannot copy " + cfg.input_path + ": " + ec.message());
    if (data.has_labels) write_labels(data_dir + "/labels.csv", data.labels);
  }
  reconcile_shapes(cfg, data);
  usage_check([&] { cfg.validate(); });
  write_run_json(data_dir, cfg);

  latnet::AnchorSet set;
  latnet::AnchorValues anchors;
  if (cfg.use_anchors) {
    if (cfg.n_ref >= cfg.n)
      throw UsageFailure("n_ref must be smaller than the number of observations");
    set = latnet::build_anchor_set(data.y, cfg.n_ref, cfg.lle, model_spec(cfg),
                                   latnet::derive_seed(cfg.seed, kAnchorStream), cfg.pretrain,
                                   cfg.lle_scope == "full");
    anchors = latnet::anchor_values(set);
    ensure_dir(anchors_dir);
    latnet::write_json(anchors_dir + "/anchors.json", latnet::anchor_set_to_json(set));
    write_run_json(anchors_dir, cfg);
  }

  const SampleArtifacts artifacts = run_sampling(cfg, data.y, anchors);
  ensure_dir(traces_dir);
  latnet::write_traces(traces_dir, artifacts.traces, artifacts.coordinate_names);
  if (cfg.use_anchors)
    latnet::write_json(traces_dir + "/anchors.json", latnet::anchor_set_to_json(set));
  if (data.has_labels) write_labels(traces_dir + "/labels.csv", data.labels);
  write_run_json(traces_dir, cfg);

  latnet::TraceBundle bundle;
  bundle.traces = artifacts.traces;
  bundle.coordinate_names = artifacts.coordinate_names;
  run_analysis(cfg, bundle, set.indices, anchors, has_truth ? &truth : nullptr,
               data.has_labels ? &data.labels : nullptr, analysis_dir);
  write_run_json(analysis_dir, cfg);
  write_run_json(root, cfg);
  std::cout << "pipeline: " << artifacts.traces.size() << " chains, "
            << artifacts.total_divergences << " post-warmup divergences, outputs in " << root
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent decoder model: simulation, anchors, sampling, and analysis"};
  app.set_help_flag("--help", "print this help message and exit");
  app.require_subcommand(1);
  FlagBag f;

  CLI::App* simulate = add_subcommand(app, "simulate", "generate the noisy hypersphere dataset");
  add_config_flags(simulate, f);
  simulate->add_option("--n", f.n, "number of observations");
  simulate->add_option("--noise-sd", f.noise_sd, "observation noise standard deviation");
  simulate->add_option("--metric", f.metric, "truth distances: 'chordal' or 'geodesic'");
  simulate->add_option("--out", f.out, "output directory")->required();

  CLI::App* anchors = add_subcommand(app, "anchors", "select and embed anchor points");
  add_config_flags(anchors, f);
  add_data_flags(anchors, f);
  add_model_flags(anchors, f);
  add_anchor_flags(anchors, f);
  anchors->add_option("--out", f.out, "output directory")->required();

  CLI::App* sample = add_subcommand(app, "sample", "run the posterior sampler");
  add_config_flags(sample, f);
  add_data_flags(sample, f);
  add_model_flags(sample, f);
  add_sampler_flags(sample, f);
  sample->add_option("--anchors", f.anchors, "anchor JSON file or the directory holding it");
  sample->add_option("--out-dir", f.out, "output directory")->required();

  CLI::App* analyze = add_subcommand(app, "analyze", "summarize a trace directory");
  add_config_flags(analyze, f);
  add_analysis_flags(analyze, f);
  analyze->add_option("--traces", f.traces, "trace directory from the sample step")->required();
  analyze->add_option("--truth", f.truth, "true pairwise distance CSV");
  analyze->add_option("--out-dir", f.out, "output directory")->required();

  CLI::App* pipeline = add_subcommand(app, "pipeline", "run every stage end to end");
  add_config_flags(pipeline, f);
  add_data_flags(pipeline, f);
  add_model_flags(pipeline, f);
  add_anchor_flags(pipeline, f);
  add_sampler_flags(pipeline, f);
  add_analysis_flags(pipeline, f);
  pipeline->add_option("--n", f.n, "simulated observation count");
  pipeline->add_option("--noise-sd", f.noise_sd, "simulation noise standard deviation");
  pipeline->add_option("--metric", f.metric, "truth distances: 'chordal' or 'geodesic'");
  pipeline->add_flag("--no-anchors", f.no_anchors, "sample without anchor points");
  pipeline->add_option("--out-dir", f.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 1;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(simulate, f);
    if (anchors->parsed()) return cmd_anchors(anchors, f);
    if (sample->parsed()) return cmd_sample(sample, f);
    if (analyze->parsed()) return cmd_analyze(analyze, f);
    return cmd_pipeline(pipeline, f);
  } catch (const UsageFailure& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
}

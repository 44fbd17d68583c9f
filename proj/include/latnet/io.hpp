#ifndef LATNET_IO_HPP
#define LATNET_IO_HPP

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "latnet/anchors.hpp"
#include "latnet/data.hpp"
#include "latnet/errors.hpp"
#include "latnet/matrix.hpp"
#include "latnet/model.hpp"
#include "latnet/sampler.hpp"

namespace latnet {

inline std::string format_double(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

inline void write_matrix_csv(const std::string& path, const std::vector<std::string>& header,
                             const DenseMatrix& m) {
  if (header.size() != m.cols())
    throw SizeMismatch("write_matrix_csv: header width does not match matrix");
  std::ofstream out(path);
  if (!out) throw ParseError("write_matrix_csv: cannot open " + path + " for writing");
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c > 0) out << ',';
    out << header[c];
  }
  out << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c > 0) out << ',';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
  if (!out) throw ParseError("write_matrix_csv: write to " + path + " failed");
}

inline void write_index_csv(const std::string& path, const std::string& header,
                            const std::vector<std::size_t>& values) {
  std::ofstream out(path);
  if (!out) throw ParseError("write_index_csv: cannot open " + path + " for writing");
  out << header << '\n';
  for (std::size_t v : values) out << v << '\n';
  if (!out) throw ParseError("write_index_csv: write to " + path + " failed");
}

struct CsvMatrix {
  std::vector<std::string> header;
  DenseMatrix values;
};

inline CsvMatrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("read_matrix_csv: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw ParseError("read_matrix_csv: " + path + " is empty");
  CsvMatrix out;
  out.header = detail::split_fields(lines.front());
  out.values = DenseMatrix(lines.size() - 1, out.header.size());
  for (std::size_t r = 0; r + 1 < lines.size(); ++r) {
    const auto fields = detail::split_fields(lines[r + 1]);
    if (fields.size() != out.header.size())
      throw ParseError("read_matrix_csv: " + path + " row " + std::to_string(r + 2) +
                       " has " + std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(out.header.size()));
    for (std::size_t c = 0; c < fields.size(); ++c) {
      char* end = nullptr;
      out.values(r, c) = std::strtod(fields[c].c_str(), &end);
      if (end == fields[c].c_str() || *end != '\0')
        throw ParseError("read_matrix_csv: " + path + " row " + std::to_string(r + 2) +
                         ", column " + std::to_string(c + 1) + " is not numeric");
    }
  }
  return out;
}

inline void write_json(const std::string& path, const nlohmann::json& value) {
  std::ofstream out(path);
  if (!out) throw ParseError("write_json: cannot open " + path + " for writing");
  out << value.dump(2) << '\n';
  if (!out) throw ParseError("write_json: write to " + path + " failed");
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("read_json: cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& err) {
    throw ParseError("read_json: " + path + ": " + err.what());
  }
}

inline nlohmann::json matrix_to_json(const DenseMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline DenseMatrix matrix_from_json(const nlohmann::json& rows) {
  if (!rows.is_array()) throw ParseError("matrix_from_json: expected an array of rows");
  if (rows.empty()) return DenseMatrix();
  DenseMatrix out(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    if (!rows[r].is_array() || rows[r].size() != out.cols())
      throw ParseError("matrix_from_json: ragged rows");
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = rows[r][c].get<double>();
  }
  return out;
}

inline nlohmann::json anchor_set_to_json(const AnchorSet& set) {
  nlohmann::json j;
  j["indices"] = set.indices;
  j["values"] = matrix_to_json(set.values);
  j["column_norms"] = set.column_norms;
  j["seed"] = set.seed;
  j["config"] = {{"n_neighbors", set.config.n_neighbors},
                 {"ridge", set.config.ridge},
                 {"target_dim", set.config.target_dim}};
  return j;
}

inline AnchorSet anchor_set_from_json(const nlohmann::json& j) {
  AnchorSet set;
  try {
    set.indices = j.at("indices").get<std::vector<std::size_t>>();
    set.values = matrix_from_json(j.at("values"));
    set.column_norms = j.at("column_norms").get<std::vector<double>>();
    set.seed = j.at("seed").get<std::uint64_t>();
    const auto& cfg = j.at("config");
    set.config.n_neighbors = cfg.at("n_neighbors").get<std::size_t>();
    set.config.ridge = cfg.at("ridge").get<double>();
    set.config.target_dim = cfg.at("target_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& err) {
    throw ParseError(std::string("anchor_set_from_json: ") + err.what());
  }
  if (set.values.rows() != set.indices.size() ||
      set.values.cols() != set.column_norms.size())
    throw SizeMismatch("anchor_set_from_json: inconsistent shapes");
  set.source_embedding = DenseMatrix(set.values.rows(), set.values.cols());
  for (std::size_t i = 0; i < set.values.rows(); ++i)
    for (std::size_t c = 0; c < set.values.cols(); ++c)
      set.source_embedding(i, c) =
          set.column_norms[c] != 0.0 ? set.values(i, c) / set.column_norms[c] : 0.0;
  return set;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["name"] = cfg.name;
  j["p"] = cfg.p;
  j["q"] = cfg.q;
  j["h"] = cfg.h;
  j["n"] = cfg.n;
  j["n_ref"] = cfg.n_ref;
  j["n_ref_options"] = cfg.n_ref_options;
  j["use_anchors"] = cfg.use_anchors;
  j["constrain"] = cfg.constrain;
  j["standardize"] = cfg.standardize;
  j["noise_sd"] = cfg.noise_sd;
  j["truth_metric"] = cfg.truth_metric;
  j["lle_scope"] = cfg.lle_scope;
  j["sampler"] = {{"target_accept", cfg.sampler.target_accept},
                  {"max_tree_depth", cfg.sampler.max_tree_depth},
                  {"warmup_iters", cfg.sampler.warmup_iters},
                  {"sample_iters", cfg.sampler.sample_iters},
                  {"chains", cfg.sampler.chains},
                  {"init_scale", cfg.sampler.init_scale},
                  {"workers", cfg.sampler.workers}};
  j["lle"] = {{"n_neighbors", cfg.lle.n_neighbors}, {"ridge", cfg.lle.ridge}};
  j["pretrain"] = {{"rate", cfg.pretrain.rate},
                   {"beta1", cfg.pretrain.beta1},
                   {"beta2", cfg.pretrain.beta2},
                   {"eps", cfg.pretrain.eps},
                   {"epochs", cfg.pretrain.epochs}};
  j["clusters"] = cfg.clusters;
  j["pairs"] = cfg.pairs;
  j["thin"] = cfg.thin;
  j["seed"] = cfg.seed;
  j["label_column"] = cfg.label_column;
  j["input_path"] = cfg.input_path;
  j["output_dir"] = cfg.output_dir;
  return j;
}

/// Applies the keys present in j on top of cfg; absent keys keep their
/// current values, so partial config files compose with presets and flags.
inline void run_config_merge_json(RunConfig& cfg, const nlohmann::json& j) {
  try {
    if (j.contains("name")) cfg.name = j["name"].get<std::string>();
    if (j.contains("p")) cfg.p = j["p"].get<std::size_t>();
    if (j.contains("q")) cfg.q = j["q"].get<std::size_t>();
    if (j.contains("h")) cfg.h = j["h"].get<std::size_t>();
    if (j.contains("n")) cfg.n = j["n"].get<std::size_t>();
    if (j.contains("n_ref")) cfg.n_ref = j["n_ref"].get<std::size_t>();
    if (j.contains("n_ref_options"))
      cfg.n_ref_options = j["n_ref_options"].get<std::vector<std::size_t>>();
    if (j.contains("use_anchors")) cfg.use_anchors = j["use_anchors"].get<bool>();
    if (j.contains("constrain")) cfg.constrain = j["constrain"].get<bool>();
    if (j.contains("standardize")) cfg.standardize = j["standardize"].get<bool>();
    if (j.contains("noise_sd")) cfg.noise_sd = j["noise_sd"].get<double>();
    if (j.contains("truth_metric")) cfg.truth_metric = j["truth_metric"].get<std::string>();
    if (j.contains("lle_scope")) cfg.lle_scope = j["lle_scope"].get<std::string>();
    if (j.contains("sampler")) {
      const auto& s = j["sampler"];
      if (s.contains("target_accept"))
        cfg.sampler.target_accept = s["target_accept"].get<double>();
      if (s.contains("max_tree_depth"))
        cfg.sampler.max_tree_depth = s["max_tree_depth"].get<int>();
      if (s.contains("warmup_iters"))
        cfg.sampler.warmup_iters = s["warmup_iters"].get<std::size_t>();
      if (s.contains("sample_iters"))
        cfg.sampler.sample_iters = s["sample_iters"].get<std::size_t>();
      if (s.contains("chains")) cfg.sampler.chains = s["chains"].get<std::size_t>();
      if (s.contains("init_scale")) cfg.sampler.init_scale = s["init_scale"].get<double>();
      if (s.contains("workers")) cfg.sampler.workers = s["workers"].get<std::size_t>();
    }
    if (j.contains("lle")) {
      const auto& l = j["lle"];
      if (l.contains("n_neighbors")) cfg.lle.n_neighbors = l["n_neighbors"].get<std::size_t>();
      if (l.contains("ridge")) cfg.lle.ridge = l["ridge"].get<double>();
    }
    if (j.contains("pretrain")) {
      const auto& a = j["pretrain"];
      if (a.contains("rate")) cfg.pretrain.rate = a["rate"].get<double>();
      if (a.contains("beta1")) cfg.pretrain.beta1 = a["beta1"].get<double>();
      if (a.contains("beta2")) cfg.pretrain.beta2 = a["beta2"].get<double>();
      if (a.contains("eps")) cfg.pretrain.eps = a["eps"].get<double>();
      if (a.contains("epochs")) cfg.pretrain.epochs = a["epochs"].get<std::size_t>();
    }
    if (j.contains("clusters")) cfg.clusters = j["clusters"].get<std::size_t>();
    if (j.contains("pairs")) cfg.pairs = j["pairs"].get<std::size_t>();
    if (j.contains("thin")) cfg.thin = j["thin"].get<std::size_t>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("label_column")) cfg.label_column = j["label_column"].get<std::string>();
    if (j.contains("input_path")) cfg.input_path = j["input_path"].get<std::string>();
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
  } catch (const nlohmann::json::exception& err) {
    throw ParseError(std::string("run_config_merge_json: ") + err.what());
  }
  cfg.lle.target_dim = cfg.q;
}

inline void write_traces(const std::string& dir, const std::vector<ChainTrace>& traces,
                         const std::vector<std::string>& coordinate_names) {
  nlohmann::json stats;
  stats["chains"] = nlohmann::json::array();
  for (const auto& trace : traces) {
    write_matrix_csv(dir + "/trace_chain" + std::to_string(trace.chain_id) + ".csv",
                     coordinate_names, trace.draws);
    nlohmann::json c;
    c["chain_id"] = trace.chain_id;
    c["seed"] = trace.seed;
    c["adapted_step"] = trace.adapted_step;
    c["mass_diagonal"] = trace.mass_diagonal;
    c["mean_accept"] = trace.mean_accept;
    c["divergences"] = trace.divergences;
    c["warmup_divergences"] = trace.warmup_divergences;
    c["initial_state"] = trace.initial_state;
    c["log_posterior"] = trace.log_posterior;
    c["accept_stat"] = trace.accept_stat;
    c["tree_depth"] = trace.tree_depth;
    c["step_size"] = trace.step_size;
    nlohmann::json divergent = nlohmann::json::array();
    for (char flag : trace.divergent) divergent.push_back(static_cast<int>(flag));
    c["divergent"] = std::move(divergent);
    stats["chains"].push_back(std::move(c));
  }
  write_json(dir + "/stats.json", stats);
}

struct TraceBundle {
  std::vector<ChainTrace> traces;
  std::vector<std::string> coordinate_names;
};

inline TraceBundle load_traces(const std::string& dir) {
  const nlohmann::json stats = read_json(dir + "/stats.json");
  if (!stats.contains("chains") || !stats["chains"].is_array() || stats["chains"].empty())
    throw ParseError("load_traces: stats.json has no chains");
  TraceBundle bundle;
  for (const auto& c : stats["chains"]) {
    ChainTrace trace;
    try {
      trace.chain_id = c.at("chain_id").get<int>();
      trace.seed = c.at("seed").get<std::uint64_t>();
      trace.adapted_step = c.at("adapted_step").get<double>();
      trace.mass_diagonal = c.at("mass_diagonal").get<std::vector<double>>();
      trace.mean_accept = c.at("mean_accept").get<double>();
      trace.divergences = c.at("divergences").get<std::size_t>();
      trace.warmup_divergences = c.at("warmup_divergences").get<std::size_t>();
      trace.initial_state = c.at("initial_state").get<std::vector<double>>();
      trace.log_posterior = c.at("log_posterior").get<std::vector<double>>();
      trace.accept_stat = c.at("accept_stat").get<std::vector<double>>();
      trace.tree_depth = c.at("tree_depth").get<std::vector<int>>();
      trace.step_size = c.at("step_size").get<std::vector<double>>();
      for (int flag : c.at("divergent").get<std::vector<int>>())
        trace.divergent.push_back(static_cast<char>(flag));
    } catch (const nlohmann::json::exception& err) {
      throw ParseError(std::string("load_traces: ") + err.what());
    }
    CsvMatrix csv =
        read_matrix_csv(dir + "/trace_chain" + std::to_string(trace.chain_id) + ".csv");
    if (bundle.coordinate_names.empty())
      bundle.coordinate_names = csv.header;
    else if (bundle.coordinate_names != csv.header)
      throw ParseError("load_traces: chains disagree on coordinate names");
    trace.draws = std::move(csv.values);
    bundle.traces.push_back(std::move(trace));
  }
  return bundle;
}

/// Rebuilds the coordinate layout implied by a trace header, given the
/// anchored row indices (empty for unanchored runs). The header must match
/// the reconstructed layout exactly.
inline ParamLayout layout_from_header(const std::vector<std::string>& header,
                                      const std::vector<std::size_t>& anchor_indices) {
  std::size_t h = 0, p = 0, w1_count = 0;
  std::vector<std::size_t> free_rows;
  for (const auto& name : header) {
    if (name.rfind("b1[", 0) == 0) ++h;
    if (name.rfind("b2[", 0) == 0) ++p;
    if (name.rfind("w1[", 0) == 0) ++w1_count;
    if (name.rfind("x[", 0) == 0) {
      const std::size_t close = name.find(']');
      if (close == std::string::npos) throw ParseError("layout_from_header: malformed name");
      const std::size_t row =
          static_cast<std::size_t>(std::strtoull(name.c_str() + 2, nullptr, 10));
      if (free_rows.empty() || free_rows.back() != row) free_rows.push_back(row);
    }
  }
  if (h == 0 || p == 0 || w1_count % h != 0)
    throw ParseError("layout_from_header: header lacks a recognizable layout");
  ModelSpec spec;
  spec.observed_dim = p;
  spec.latent_dim = w1_count / h;
  spec.hidden_dim = h;
  spec.n_obs = free_rows.size() + anchor_indices.size();
  const ParamLayout layout = ParamLayout::create(spec, anchor_indices);
  if (layout.coordinate_names() != header)
    throw ParseError("layout_from_header: header does not match the reconstructed layout");
  return layout;
}

}  // namespace latnet

#endif  // LATNET_IO_HPP

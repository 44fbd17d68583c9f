#ifndef LATNET_DATA_HPP
#define LATNET_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "latnet/anchors.hpp"
#include "latnet/errors.hpp"
#include "latnet/matrix.hpp"
#include "latnet/model.hpp"
#include "latnet/rng.hpp"
#include "latnet/sampler.hpp"

namespace latnet {

struct Dataset {
  DenseMatrix y;
  bool has_labels = false;
  std::vector<int> labels;
  std::vector<std::string> column_names;
  std::vector<std::string> label_names;  // class string per label code
  std::string provenance;

  std::size_t n_classes() const { return label_names.size(); }
};

enum class TruthMetric { chordal, geodesic };

struct Simulation {
  Dataset data;
  DenseMatrix true_points;     // noiseless sphere points
  DenseMatrix true_distances;  // distances between noiseless points
};

/// Uniform points on the unit sphere in R^3 with isotropic Gaussian noise.
/// The truth sidecar holds the noiseless points and their pairwise
/// distances, chordal by default.
inline Simulation simulate_hypersphere(std::size_t n = 640, double noise_sd = 0.05,
                                       std::uint64_t seed = 0,
                                       TruthMetric metric = TruthMetric::chordal) {
  if (n < 1) throw InvalidCount("simulate_hypersphere: need at least one point");
  if (!(noise_sd >= 0.0)) throw InvalidCount("simulate_hypersphere: noise_sd must be >= 0");
  Rng rng(seed);
  Simulation sim;
  sim.true_points = DenseMatrix(n, 3);
  sim.data.y = DenseMatrix(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    double v[3], norm = 0.0;
    do {
      for (double& c : v) c = rng.normal();
      norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    } while (norm == 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
      sim.true_points(i, j) = v[j] / norm;
      sim.data.y(i, j) = sim.true_points(i, j) + noise_sd * rng.normal();
    }
  }
  sim.true_distances = DenseMatrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d;
      if (metric == TruthMetric::chordal) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          const double delta = sim.true_points(i, k) - sim.true_points(j, k);
          s += delta * delta;
        }
        d = std::sqrt(s);
      } else {
        double dot = 0.0;
        for (std::size_t k = 0; k < 3; ++k) dot += sim.true_points(i, k) * sim.true_points(j, k);
        d = std::acos(std::min(1.0, std::max(-1.0, dot)));
      }
      sim.true_distances(i, j) = d;
      sim.true_distances(j, i) = d;
    }
  std::ostringstream tag;
  tag << "hypersphere(n=" << n << ",noise_sd=" << noise_sd << ",seed=" << seed << ")";
  sim.data.column_names = {"y0", "y1", "y2"};
  sim.data.provenance = tag.str();
  return sim;
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return s.substr(a, b - a);
}

}  // namespace detail

/// Column-wise centering, plus scaling to unit sample variance when
/// standardize is set; constant columns stay centered only.
inline void center_columns(DenseMatrix& y, bool standardize) {
  const std::size_t rows = y.rows();
  if (rows == 0) return;
  for (std::size_t c = 0; c < y.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += y(r, c);
    mean /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) y(r, c) -= mean;
    if (standardize && rows > 1) {
      double var = 0.0;
      for (std::size_t r = 0; r < rows; ++r) var += y(r, c) * y(r, c);
      var /= static_cast<double>(rows - 1);
      if (var > 0.0) {
        const double inv_sd = 1.0 / std::sqrt(var);
        for (std::size_t r = 0; r < rows; ++r) y(r, c) *= inv_sd;
      }
    }
  }
}

/// Reads a comma-separated table with a header row. Feature columns pass
/// through center_columns; a label column, when named, maps to dense integer
/// codes in order of first appearance.
inline Dataset load_csv(const std::string& path, const std::string& label_column = "",
                        bool standardize = true) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_csv: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!detail::trim(line).empty()) lines.push_back(line);
  }
  if (lines.size() < 2) throw ParseError("load_csv: " + path + " has no data rows");

  const auto header = detail::split_fields(lines.front());
  std::ptrdiff_t label_idx = -1;
  Dataset out;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = detail::trim(header[c]);
    if (!label_column.empty() && name == label_column)
      label_idx = static_cast<std::ptrdiff_t>(c);
    else
      out.column_names.push_back(name);
  }
  if (!label_column.empty() && label_idx < 0)
    throw ParseError("load_csv: label column '" + label_column + "' not in header");
  if (out.column_names.empty()) throw ParseError("load_csv: no feature columns");

  const std::size_t rows = lines.size() - 1;
  out.y = DenseMatrix(rows, out.column_names.size());
  out.has_labels = label_idx >= 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto fields = detail::split_fields(lines[r + 1]);
    const std::string location = "row " + std::to_string(r + 2);
    if (fields.size() != header.size())
      throw ParseError("load_csv: " + location + " has " + std::to_string(fields.size()) +
                       " fields, expected " + std::to_string(header.size()));
    std::size_t feature = 0;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const std::string value = detail::trim(fields[c]);
      const std::string cell = location + ", column '" + detail::trim(header[c]) + "'";
      if (value.empty()) throw MissingValue("load_csv: empty field at " + cell);
      if (static_cast<std::ptrdiff_t>(c) == label_idx) {
        int code = -1;
        for (std::size_t k = 0; k < out.label_names.size(); ++k)
          if (out.label_names[k] == value) code = static_cast<int>(k);
        if (code < 0) {
          code = static_cast<int>(out.label_names.size());
          out.label_names.push_back(value);
        }
        out.labels.push_back(code);
      } else {
        char* end = nullptr;
        const double parsed = std::strtod(value.c_str(), &end);
        if (end == value.c_str() || *end != '\0')
          throw ParseError("load_csv: cannot parse number at " + cell);
        out.y(r, feature++) = parsed;
      }
    }
  }

  center_columns(out.y, standardize);
  out.provenance = path;
  return out;
}

struct RunConfig {
  std::string name = "custom";
  std::size_t p = 0, q = 0, h = 0;
  std::size_t n = 0;  // simulation size; 0 means dataset-defined
  std::size_t n_ref = 0;
  std::vector<std::size_t> n_ref_options;
  bool use_anchors = true;
  bool constrain = true;
  bool standardize = true;
  double noise_sd = 0.05;
  std::string truth_metric = "chordal";
  std::string lle_scope = "anchors";
  NutsConfig sampler;
  LLEConfig lle;
  AdamConfig pretrain;
  std::size_t clusters = 0;  // 0 means use the class count of the labels
  std::size_t pairs = 6;     // pair count for distance diagnostics; 0 skips
  std::size_t thin = 1;      // keep every thin-th draw when clustering
  std::uint64_t seed = 0;
  std::string label_column;
  std::string input_path;
  std::string output_dir;

  void validate() const {
    if (q == 0 || q >= p) throw DimensionMismatch("RunConfig: need 0 < q < p");
    if (h < 1) throw InvalidCount("RunConfig: need h >= 1");
    if (use_anchors && n_ref == 0)
      throw InvalidCount("RunConfig: anchored runs need n_ref >= 1");
    if (lle.target_dim != q) throw DimensionMismatch("RunConfig: lle.target_dim must equal q");
    if (thin < 1) throw InvalidCount("RunConfig: thin must be >= 1");
    sampler.validate();
    lle.validate();
    if (lle_scope != "anchors" && lle_scope != "full")
      throw InvalidCount("RunConfig: lle_scope must be 'anchors' or 'full'");
    if (truth_metric != "chordal" && truth_metric != "geodesic")
      throw InvalidCount("RunConfig: truth_metric must be 'chordal' or 'geodesic'");
  }
};

inline std::vector<std::string> preset_names() {
  return {"sphere", "ecoli", "knowledge", "banknote"};
}

/// Named experiment presets; sizes follow the studies the tool reproduces.
inline RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  cfg.name = name;
  if (name == "sphere") {
    cfg.p = 3;
    cfg.q = 2;
    cfg.h = 10;
    cfg.n = 640;
    cfg.n_ref = 40;
    cfg.n_ref_options = {40, 120};
    cfg.standardize = false;
    cfg.noise_sd = 0.05;
  } else if (name == "ecoli") {
    cfg.p = 7;
    cfg.q = 1;
    cfg.h = 5;
    cfg.n_ref = 20;
    cfg.clusters = 8;
  } else if (name == "knowledge") {
    cfg.p = 5;
    cfg.q = 1;
    cfg.h = 10;
    cfg.n_ref = 15;
    cfg.clusters = 4;
  } else if (name == "banknote") {
    cfg.p = 4;
    cfg.q = 2;
    cfg.h = 20;
    cfg.n_ref = 80;
    cfg.clusters = 2;
  } else {
    throw InvalidCount("preset_config: unknown preset '" + name + "'");
  }
  cfg.lle.target_dim = cfg.q;
  return cfg;
}

}  // namespace latnet

#endif  // LATNET_DATA_HPP

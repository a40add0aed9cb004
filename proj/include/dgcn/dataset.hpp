#pragma once

// Graph dataset model: loaders for the plain-text node/edge/split formats,
// split management, homophily statistics, and a synthetic generator with a
// controllable homophily ratio. Graphs are undirected and simple; self-loops
// live in neighborhood operators, never in the stored edge list.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace dgcn {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SplitMasks {
  std::vector<std::uint8_t> train, val, test;
};

struct Dataset {
  std::size_t num_nodes = 0;
  std::size_t num_classes = 0;
  std::size_t num_features = 0;
  std::vector<double> features;  // num_nodes x num_features, row-major
  std::vector<int> labels;
  // Undirected, deduplicated, no self-loops; stored as (min,max), sorted.
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<SplitMasks> splits;

  const double* feature_row(std::size_t v) const {
    return features.data() + v * num_features;
  }
};

struct DatasetStats {
  std::size_t num_classes = 0;
  std::size_t num_nodes = 0;
  std::size_t num_edges = 0;
  std::size_t num_features = 0;
  double average_degree = 0.0;
  double homophily_ratio = 0.0;
};

namespace detail {

inline std::vector<std::string> split_on(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string loc(const std::string& path, std::size_t line_no) {
  return std::filesystem::path(path).filename().string() + ":" +
         std::to_string(line_no);
}

inline std::size_t parse_index(const std::string& s, const std::string& where) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw DatasetError(where + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw DatasetError(where + ": expected a number, got '" + s + "'");
  return v;
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Strips a trailing '\r' so CRLF files parse identically to LF files.
inline bool next_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

}  // namespace detail

inline void validate_dataset(const Dataset& ds) {
  if (ds.features.size() != ds.num_nodes * ds.num_features)
    throw DatasetError("dataset: feature matrix size mismatch");
  if (ds.labels.size() != ds.num_nodes)
    throw DatasetError("dataset: one label per node required");
  for (std::size_t v = 0; v < ds.num_nodes; ++v)
    if (ds.labels[v] < 0 || static_cast<std::size_t>(ds.labels[v]) >= ds.num_classes)
      throw DatasetError("dataset: label out of range at node " + std::to_string(v));
  for (auto [u, v] : ds.edges) {
    if (u >= ds.num_nodes || v >= ds.num_nodes)
      throw DatasetError("dataset: edge endpoint out of range");
    if (u == v) throw DatasetError("dataset: self-loop in edge list");
    if (u > v) throw DatasetError("dataset: edges must be stored as (min,max)");
  }
  for (std::size_t i = 1; i < ds.edges.size(); ++i)
    if (!(ds.edges[i - 1] < ds.edges[i]))
      throw DatasetError("dataset: edges must be sorted and deduplicated");
  for (const SplitMasks& m : ds.splits) {
    if (m.train.size() != ds.num_nodes || m.val.size() != ds.num_nodes ||
        m.test.size() != ds.num_nodes)
      throw DatasetError("dataset: mask length differs from node count");
    for (std::size_t v = 0; v < ds.num_nodes; ++v)
      if (m.train[v] + m.val[v] + m.test[v] != 1)
        throw DatasetError("dataset: node " + std::to_string(v) +
                           " not in exactly one of train/val/test");
  }
}

// Node file: `node_id<TAB>f1,f2,...<TAB>label`, ids covering 0..n-1.
// Edge file: `u<TAB>v` per line, order irrelevant; symmetrized, deduplicated,
// self-loops dropped. Split files: `node_id<TAB>{train|val|test}` per node.
inline Dataset load_dataset(const std::string& node_path, const std::string& edge_path,
                            const std::vector<std::string>& split_paths = {}) {
  Dataset ds;

  std::ifstream nf(node_path);
  if (!nf) throw DatasetError("cannot open node file: " + node_path);
  struct Row {
    std::vector<double> feats;
    int label;
  };
  std::vector<Row> rows;
  std::vector<std::size_t> ids;
  std::string line;
  std::size_t line_no = 0;
  while (detail::next_line(nf, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = detail::loc(node_path, line_no);
    auto fields = detail::split_on(line, '\t');
    if (fields.size() != 3)
      throw DatasetError(where + ": expected `id<TAB>features<TAB>label`, got " +
                         std::to_string(fields.size()) + " fields");
    ids.push_back(detail::parse_index(fields[0], where));
    Row r;
    for (const std::string& f : detail::split_on(fields[1], ','))
      r.feats.push_back(detail::parse_double(f, where));
    const std::size_t lab = detail::parse_index(fields[2], where);
    r.label = static_cast<int>(lab);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DatasetError(node_path + ": no nodes");

  const std::size_t n = rows.size();
  std::vector<char> seen(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] >= n)
      throw DatasetError(node_path + ": node id " + std::to_string(ids[i]) +
                         " outside 0.." + std::to_string(n - 1));
    if (seen[ids[i]])
      throw DatasetError(node_path + ": duplicate node id " + std::to_string(ids[i]));
    seen[ids[i]] = 1;
  }
  ds.num_nodes = n;
  ds.num_features = rows[0].feats.size();
  ds.features.assign(n * ds.num_features, 0.0);
  ds.labels.assign(n, 0);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].feats.size() != ds.num_features)
      throw DatasetError(node_path + ": node " + std::to_string(ids[i]) + " has " +
                         std::to_string(rows[i].feats.size()) + " features, expected " +
                         std::to_string(ds.num_features));
    std::copy(rows[i].feats.begin(), rows[i].feats.end(),
              ds.features.begin() + static_cast<long>(ids[i] * ds.num_features));
    ds.labels[ids[i]] = rows[i].label;
    max_label = std::max(max_label, rows[i].label);
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;

  std::ifstream ef(edge_path);
  if (!ef) throw DatasetError("cannot open edge file: " + edge_path);
  std::set<std::pair<std::size_t, std::size_t>> edge_set;
  line_no = 0;
  while (detail::next_line(ef, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = detail::loc(edge_path, line_no);
    auto fields = detail::split_on(line, '\t');
    if (fields.size() != 2)
      throw DatasetError(where + ": expected `u<TAB>v`");
    std::size_t u = detail::parse_index(fields[0], where);
    std::size_t v = detail::parse_index(fields[1], where);
    if (u >= n || v >= n)
      throw DatasetError(where + ": edge endpoint out of range");
    if (u == v) continue;  // neighborhood operators add self-loops themselves
    edge_set.emplace(std::min(u, v), std::max(u, v));
  }
  ds.edges.assign(edge_set.begin(), edge_set.end());

  for (const std::string& sp : split_paths) {
    std::ifstream sf(sp);
    if (!sf) throw DatasetError("cannot open split file: " + sp);
    SplitMasks m;
    m.train.assign(n, 0);
    m.val.assign(n, 0);
    m.test.assign(n, 0);
    std::vector<char> assigned(n, 0);
    line_no = 0;
    std::size_t count = 0;
    while (detail::next_line(sf, line)) {
      ++line_no;
      if (line.empty()) continue;
      const std::string where = detail::loc(sp, line_no);
      auto fields = detail::split_on(line, '\t');
      if (fields.size() != 2)
        throw DatasetError(where + ": expected `id<TAB>{train|val|test}`");
      std::size_t v = detail::parse_index(fields[0], where);
      if (v >= n) throw DatasetError(where + ": node id out of range");
      if (assigned[v]) throw DatasetError(where + ": node assigned twice");
      assigned[v] = 1;
      ++count;
      if (fields[1] == "train") m.train[v] = 1;
      else if (fields[1] == "val") m.val[v] = 1;
      else if (fields[1] == "test") m.test[v] = 1;
      else throw DatasetError(where + ": unknown split '" + fields[1] + "'");
    }
    if (count != n)
      throw DatasetError(sp + ": covers " + std::to_string(count) + " of " +
                         std::to_string(n) + " nodes");
    ds.splits.push_back(std::move(m));
  }

  validate_dataset(ds);
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& node_path,
                         const std::string& edge_path) {
  std::ofstream nf(node_path);
  if (!nf) throw DatasetError("cannot write node file: " + node_path);
  for (std::size_t v = 0; v < ds.num_nodes; ++v) {
    nf << v << '\t';
    for (std::size_t j = 0; j < ds.num_features; ++j) {
      if (j) nf << ',';
      nf << detail::fmt_double(ds.features[v * ds.num_features + j]);
    }
    nf << '\t' << ds.labels[v] << '\n';
  }
  std::ofstream ef(edge_path);
  if (!ef) throw DatasetError("cannot write edge file: " + edge_path);
  for (auto [u, v] : ds.edges) ef << u << '\t' << v << '\n';
}

inline void save_split(const SplitMasks& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DatasetError("cannot write split file: " + path);
  for (std::size_t v = 0; v < m.train.size(); ++v)
    f << v << '\t' << (m.train[v] ? "train" : m.val[v] ? "val" : "test") << '\n';
}

// Fraction of undirected edges whose endpoints share a label.
inline double homophily_ratio(const Dataset& ds) {
  if (ds.edges.empty())
    throw DatasetError("homophily_ratio: undefined on an empty edge set");
  std::size_t same = 0;
  for (auto [u, v] : ds.edges) same += ds.labels[u] == ds.labels[v] ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(ds.edges.size());
}

inline DatasetStats dataset_stats(const Dataset& ds) {
  DatasetStats st;
  st.num_classes = ds.num_classes;
  st.num_nodes = ds.num_nodes;
  st.num_edges = ds.edges.size();
  st.num_features = ds.num_features;
  st.average_degree =
      2.0 * static_cast<double>(ds.edges.size()) / static_cast<double>(ds.num_nodes);
  st.homophily_ratio = ds.edges.empty() ? 0.0 : homophily_ratio(ds);
  return st;
}

inline nlohmann::ordered_json stats_to_json(const DatasetStats& st) {
  nlohmann::ordered_json j;
  j["num_classes"] = st.num_classes;
  j["num_nodes"] = st.num_nodes;
  j["num_edges"] = st.num_edges;
  j["num_features"] = st.num_features;
  j["average_degree"] = st.average_degree;
  j["homophily_ratio"] = st.homophily_ratio;
  return j;
}

// Classes are assigned round-robin (balanced). Each node draws `degree`
// distinct partners; each draw targets a same-class partner with probability
// target_h, a cross-class partner otherwise. Features are the class mean plus
// isotropic Gaussian noise. Deterministic given the seed.
inline Dataset generate_synthetic(std::size_t n, std::size_t num_classes,
                                  double target_h, std::size_t d_x,
                                  std::size_t degree, double feature_noise,
                                  std::uint64_t seed) {
  if (num_classes < 2 || n < num_classes)
    throw DatasetError("generate_synthetic: need n >= C >= 2");
  if (!(target_h >= 0.0 && target_h <= 1.0))
    throw DatasetError("generate_synthetic: target homophily must be in [0,1]");
  if (degree < 1) throw DatasetError("generate_synthetic: degree must be >= 1");
  if (degree >= n)
    throw DatasetError("generate_synthetic: degree " + std::to_string(degree) +
                       " infeasible for " + std::to_string(n) + " nodes");

  Dataset ds;
  ds.num_nodes = n;
  ds.num_classes = num_classes;
  ds.num_features = d_x;
  ds.labels.resize(n);
  for (std::size_t v = 0; v < n; ++v)
    ds.labels[v] = static_cast<int>(v % num_classes);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<double> means(num_classes * d_x);
  for (double& m : means) m = gauss(rng);
  ds.features.resize(n * d_x);
  for (std::size_t v = 0; v < n; ++v) {
    const double* mu = means.data() + static_cast<std::size_t>(ds.labels[v]) * d_x;
    double* x = ds.features.data() + v * d_x;
    for (std::size_t j = 0; j < d_x; ++j) x[j] = mu[j] + feature_noise * gauss(rng);
  }

  std::set<std::pair<std::size_t, std::size_t>> edge_set;
  std::vector<std::size_t> pool;
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t t = 0; t < degree; ++t) {
      const bool same = unit(rng) < target_h;
      pool.clear();
      for (std::size_t u = 0; u < n; ++u) {
        if (u == v) continue;
        if ((ds.labels[u] == ds.labels[v]) != same) continue;
        if (edge_set.count({std::min(u, v), std::max(u, v)})) continue;
        pool.push_back(u);
      }
      if (pool.empty())
        throw DatasetError("generate_synthetic: no unused " +
                           std::string(same ? "same" : "cross") +
                           "-class partner left for node " + std::to_string(v));
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const std::size_t u = pool[pick(rng)];
      edge_set.emplace(std::min(u, v), std::max(u, v));
    }
  }
  ds.edges.assign(edge_set.begin(), edge_set.end());
  validate_dataset(ds);
  return ds;
}

struct SplitFractions {
  double train = 0.48, val = 0.32, test = 0.20;
};

// Per-class stratified splits: floor(train), floor(val), remainder to test.
// Every class must land at least one node in each bucket.
inline std::vector<SplitMasks> make_splits(const Dataset& ds, SplitFractions f,
                                           std::size_t num_splits, std::uint64_t seed) {
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw DatasetError("make_splits: fractions must sum to 1");
  if (f.train < 0 || f.val < 0 || f.test < 0)
    throw DatasetError("make_splits: fractions must be non-negative");

  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t v = 0; v < ds.num_nodes; ++v)
    by_class[static_cast<std::size_t>(ds.labels[v])].push_back(v);

  std::mt19937_64 rng(seed);
  std::vector<SplitMasks> out;
  out.reserve(num_splits);
  for (std::size_t s = 0; s < num_splits; ++s) {
    SplitMasks m;
    m.train.assign(ds.num_nodes, 0);
    m.val.assign(ds.num_nodes, 0);
    m.test.assign(ds.num_nodes, 0);
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      std::vector<std::size_t> idx = by_class[c];
      std::shuffle(idx.begin(), idx.end(), rng);
      const std::size_t cnt = idx.size();
      const std::size_t n_train =
          static_cast<std::size_t>(std::floor(f.train * static_cast<double>(cnt)));
      const std::size_t n_val =
          static_cast<std::size_t>(std::floor(f.val * static_cast<double>(cnt)));
      const std::size_t n_test = cnt - n_train - n_val;
      if (n_train == 0 || n_val == 0 || n_test == 0)
        throw DatasetError("make_splits: class " + std::to_string(c) + " has " +
                           std::to_string(cnt) +
                           " nodes, too few for a train/val/test split");
      for (std::size_t i = 0; i < cnt; ++i) {
        if (i < n_train) m.train[idx[i]] = 1;
        else if (i < n_train + n_val) m.val[idx[i]] = 1;
        else m.test[idx[i]] = 1;
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace dgcn

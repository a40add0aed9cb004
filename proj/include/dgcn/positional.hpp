#pragma once

// Feature smoothing over the input graph, positional embedding projection,
// and latent kNN neighborhood graphs. Smoothing is parameter-free and runs
// off-tape; the projection participates in training. Neighborhood graphs are
// built once and never mutated afterwards.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgcn/dataset.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

// Fixed per-node neighbor lists in CSR form. Latent (kNN) graphs have exactly
// k+1 entries per node ordered by (ascending l2 distance, ascending index);
// the input graph keeps its native degrees with neighbors ordered by index.
// Every list contains the node itself.
struct NeighborhoodGraph {
  std::string level_tag;  // "0".."L" for latent graphs, "input" for the last
  std::size_t num_nodes = 0;
  std::vector<std::size_t> offsets;    // size num_nodes+1
  std::vector<std::size_t> neighbors;  // flattened lists

  std::size_t degree(std::size_t v) const { return offsets[v + 1] - offsets[v]; }
  const std::size_t* begin_of(std::size_t v) const {
    return neighbors.data() + offsets[v];
  }
};

inline std::vector<std::vector<std::size_t>> adjacency_lists(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> adj(ds.num_nodes);
  for (auto [u, v] : ds.edges) {
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  for (auto& lst : adj) std::sort(lst.begin(), lst.end());
  return adj;
}

// E^(0) = X; E^(l)_v = mean of E^(l-1) rows over the self-looped input-graph
// neighborhood. Isolated nodes average over themselves only.
inline std::vector<std::vector<double>> smooth_features(const Dataset& ds,
                                                        std::size_t L) {
  const std::size_t n = ds.num_nodes, d = ds.num_features;
  auto adj = adjacency_lists(ds);
  std::vector<std::vector<double>> tables;
  tables.reserve(L + 1);
  tables.push_back(ds.features);
  for (std::size_t l = 1; l <= L; ++l) {
    const std::vector<double>& prev = tables.back();
    std::vector<double> next(n * d, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
      double* row = next.data() + v * d;
      for (std::size_t j = 0; j < d; ++j) row[j] = prev[v * d + j];
      for (std::size_t u : adj[v])
        for (std::size_t j = 0; j < d; ++j) row[j] += prev[u * d + j];
      const double inv = 1.0 / static_cast<double>(adj[v].size() + 1);
      for (std::size_t j = 0; j < d; ++j) row[j] *= inv;
    }
    tables.push_back(std::move(next));
  }
  return tables;
}

// Positional coordinates for one level: rows of `smoothed` projected by the
// learnable matrix W (stored d_x by d_phi, acting on row vectors).
inline Tensor positional_embed(Tape& tape, const Tensor& smoothed, const Tensor& W) {
  return tape.matmul(smoothed, W);
}

// Brute-force exact kNN under l2 distance: the k nearest other nodes plus the
// node itself, ordered by (squared distance, index).
inline NeighborhoodGraph build_knn_graph(const std::vector<double>& features,
                                         std::size_t n, std::size_t d, std::size_t k,
                                         std::string level_tag) {
  if (k >= n)
    throw DatasetError("build_knn_graph: k=" + std::to_string(k) +
                       " must be below the node count " + std::to_string(n));
  NeighborhoodGraph g;
  g.level_tag = std::move(level_tag);
  g.num_nodes = n;
  g.offsets.resize(n + 1);
  g.neighbors.resize(n * (k + 1));
  std::vector<std::pair<double, std::size_t>> cand(n);
  for (std::size_t v = 0; v < n; ++v) {
    const double* xv = features.data() + v * d;
    cand.clear();
    for (std::size_t u = 0; u < n; ++u) {
      if (u == v) continue;
      const double* xu = features.data() + u * d;
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = xu[j] - xv[j];
        sq += diff * diff;
      }
      cand.emplace_back(sq, u);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(k), cand.end());
    cand.resize(k);
    cand.emplace_back(0.0, v);  // self at distance zero
    std::sort(cand.begin(), cand.end());
    g.offsets[v] = v * (k + 1);
    for (std::size_t i = 0; i <= k; ++i) g.neighbors[v * (k + 1) + i] = cand[i].second;
  }
  g.offsets[n] = n * (k + 1);
  return g;
}

inline NeighborhoodGraph build_input_graph(const Dataset& ds) {
  auto adj = adjacency_lists(ds);
  NeighborhoodGraph g;
  g.level_tag = "input";
  g.num_nodes = ds.num_nodes;
  g.offsets.resize(ds.num_nodes + 1, 0);
  for (std::size_t v = 0; v < ds.num_nodes; ++v)
    g.offsets[v + 1] = g.offsets[v] + adj[v].size() + 1;
  g.neighbors.reserve(g.offsets.back());
  for (std::size_t v = 0; v < ds.num_nodes; ++v) {
    std::vector<std::size_t> lst = adj[v];
    lst.push_back(v);
    std::sort(lst.begin(), lst.end());
    g.neighbors.insert(g.neighbors.end(), lst.begin(), lst.end());
  }
  return g;
}

// Latent graphs G^(0..L) on the smoothed feature tables, then the input graph
// as level L+1.
inline std::vector<NeighborhoodGraph> build_all_graphs(
    const Dataset& ds, const std::vector<std::vector<double>>& smoothed,
    std::size_t k) {
  std::vector<NeighborhoodGraph> graphs;
  graphs.reserve(smoothed.size() + 1);
  for (std::size_t l = 0; l < smoothed.size(); ++l)
    graphs.push_back(build_knn_graph(smoothed[l], ds.num_nodes, ds.num_features, k,
                                     std::to_string(l)));
  graphs.push_back(build_input_graph(ds));
  return graphs;
}

inline void save_graph(const NeighborhoodGraph& g, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DatasetError("cannot write graph file: " + path);
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    f << v << '\t';
    for (std::size_t i = g.offsets[v]; i < g.offsets[v + 1]; ++i) {
      if (i != g.offsets[v]) f << ',';
      f << g.neighbors[i];
    }
    f << '\n';
  }
}

inline NeighborhoodGraph load_graph(const std::string& path, std::string level_tag) {
  std::ifstream f(path);
  if (!f) throw DatasetError("cannot open graph file: " + path);
  NeighborhoodGraph g;
  g.level_tag = std::move(level_tag);
  g.offsets.push_back(0);
  std::string line;
  std::size_t line_no = 0;
  while (detail::next_line(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = detail::loc(path, line_no);
    auto fields = detail::split_on(line, '\t');
    if (fields.size() != 2) throw DatasetError(where + ": expected `v<TAB>list`");
    if (detail::parse_index(fields[0], where) != g.num_nodes)
      throw DatasetError(where + ": node ids must be consecutive from 0");
    for (const std::string& s : detail::split_on(fields[1], ','))
      g.neighbors.push_back(detail::parse_index(s, where));
    g.offsets.push_back(g.neighbors.size());
    ++g.num_nodes;
  }
  for (std::size_t u : g.neighbors)
    if (u >= g.num_nodes) throw DatasetError(path + ": neighbor id out of range");
  return g;
}

}  // namespace dgcn

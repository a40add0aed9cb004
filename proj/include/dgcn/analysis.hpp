#pragma once
// Post-hoc quantities computed from a trained model's forward pass: averaged
// attention per neighborhood graph, per-node homophilic weight with and
// without deformation, and receptive-field intensity maps. All exports are
// plain CSV for downstream plotting.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgcn/dataset.hpp"
#include "dgcn/deform_conv.hpp"
#include "dgcn/model.hpp"
#include "dgcn/positional.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

struct AnalysisError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mean attention score per level over all nodes.
inline std::vector<double> attention_summary(const Tensor& scores) {
  const std::size_t n = scores.rows();
  const std::size_t levels = scores.cols();
  if (n == 0) throw AnalysisError("attention_summary: no nodes");
  std::vector<double> avg(levels, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t l = 0; l < levels; ++l) avg[l] += scores.values[v * levels + l];
  for (double& a : avg) a /= static_cast<double>(n);
  return avg;
}

// Total kernel weight landing on same-label neighbors of v, summed over
// kernels. The self-loop entry never counts.
inline double homophilic_weight(std::size_t v, const NeighborhoodGraph& g,
                                const ConvOutput& conv, const std::vector<int>& labels) {
  if (v >= g.num_nodes) throw AnalysisError("homophilic_weight: node out of range");
  if (conv.a_hat.empty())
    throw AnalysisError("homophilic_weight: no attention diagnostics for this level");
  double w = 0.0;
  for (const std::vector<double>& ak : conv.a_hat) {
    if (ak.size() != g.neighbors.size())
      throw AnalysisError("homophilic_weight: diagnostics do not match the graph");
    for (std::size_t e = g.offsets[v]; e < g.offsets[v + 1]; ++e) {
      const std::size_t u = g.neighbors[e];
      if (u == v) continue;
      if (labels[u] == labels[v]) w += ak[e];
    }
  }
  return w;
}

// I(u) = sum over levels and kernels of s_v^(l) * a_hat^(l)_{u,v,k}; zero for
// nodes outside every level's neighborhood of v. Dense over all nodes.
inline std::vector<double> receptive_field(std::size_t v, const Tensor& scores,
                                           const std::vector<NeighborhoodGraph>& graphs,
                                           const std::vector<ConvOutput>& convs) {
  if (graphs.empty() || graphs.size() != convs.size())
    throw AnalysisError("receptive_field: graphs and diagnostics disagree");
  const std::size_t n = graphs[0].num_nodes;
  if (v >= n) throw AnalysisError("receptive_field: node out of range");
  if (scores.rows() != n || scores.cols() != graphs.size())
    throw AnalysisError("receptive_field: score table does not match graphs");
  std::vector<double> intensity(n, 0.0);
  for (std::size_t l = 0; l < graphs.size(); ++l) {
    const NeighborhoodGraph& g = graphs[l];
    const double s = scores.values[v * graphs.size() + l];
    for (const std::vector<double>& ak : convs[l].a_hat)
      for (std::size_t e = g.offsets[v]; e < g.offsets[v + 1]; ++e)
        intensity[g.neighbors[e]] += s * ak[e];
  }
  return intensity;
}

struct AnalysisReport {
  std::vector<std::string> levels;  // level tags aligned with the graph list
  std::vector<double> avg_scores;
  // h_weights indexed [node][level]
  std::vector<std::vector<double>> h_no_deform, h_deform;
  std::vector<std::size_t> targets;
  std::vector<std::vector<double>> intensity;  // dense per target
};

// Runs two dropout-free forwards (deformation on and off) and collects every
// report quantity. Targets may be empty.
inline AnalysisReport analyze(const Dataset& ds, const std::vector<NeighborhoodGraph>& graphs,
                              const std::vector<std::vector<double>>& smoothed,
                              const DeformableGCNParams& params,
                              const std::vector<std::size_t>& targets) {
  AnalysisReport rep;
  for (const NeighborhoodGraph& g : graphs) rep.levels.push_back(g.level_tag);

  Tape tape_on, tape_off;
  ForwardOutput with_deform =
      dgcn_forward(tape_on, ds, graphs, smoothed, params.bind(tape_on), false, nullptr, true);
  ForwardOutput without_deform =
      dgcn_forward(tape_off, ds, graphs, smoothed, params.bind(tape_off), false, nullptr, false);

  rep.avg_scores = attention_summary(with_deform.scores);
  rep.h_no_deform.assign(ds.num_nodes, std::vector<double>(graphs.size(), 0.0));
  rep.h_deform = rep.h_no_deform;
  for (std::size_t v = 0; v < ds.num_nodes; ++v)
    for (std::size_t l = 0; l < graphs.size(); ++l) {
      rep.h_no_deform[v][l] = homophilic_weight(v, graphs[l], without_deform.conv[l], ds.labels);
      rep.h_deform[v][l] = homophilic_weight(v, graphs[l], with_deform.conv[l], ds.labels);
    }
  rep.targets = targets;
  for (std::size_t v : targets)
    rep.intensity.push_back(receptive_field(v, with_deform.scores, graphs, with_deform.conv));
  return rep;
}

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw AnalysisError("cannot open " + path + " for writing");
  return out;
}

}  // namespace detail

inline void export_attention_csv(const std::string& path, const std::vector<std::string>& levels,
                                 const std::vector<double>& avg_scores) {
  if (levels.size() != avg_scores.size())
    throw AnalysisError("export_attention_csv: level/score length mismatch");
  std::ofstream out = detail::open_out(path);
  out << "level,avg_score\n";
  for (std::size_t l = 0; l < levels.size(); ++l)
    out << levels[l] << ',' << dgcn::detail::fmt_double(avg_scores[l]) << '\n';
}

inline void export_h_weight_csv(const std::string& path, const std::vector<std::string>& levels,
                                const std::vector<std::vector<double>>& h_no_deform,
                                const std::vector<std::vector<double>>& h_deform) {
  if (h_no_deform.size() != h_deform.size())
    throw AnalysisError("export_h_weight_csv: table sizes differ");
  std::ofstream out = detail::open_out(path);
  out << "node,level,h_weight_no_deform,h_weight_deform\n";
  for (std::size_t v = 0; v < h_no_deform.size(); ++v) {
    if (h_no_deform[v].size() != levels.size() || h_deform[v].size() != levels.size())
      throw AnalysisError("export_h_weight_csv: row does not cover every level");
    for (std::size_t l = 0; l < levels.size(); ++l)
      out << v << ',' << levels[l] << ',' << dgcn::detail::fmt_double(h_no_deform[v][l]) << ','
          << dgcn::detail::fmt_double(h_deform[v][l]) << '\n';
  }
}

// One block per target, nodes ordered by descending intensity (ties by index).
inline void export_receptive_csv(const std::string& path,
                                 const std::vector<std::size_t>& targets,
                                 const std::vector<std::vector<double>>& intensity) {
  if (targets.size() != intensity.size())
    throw AnalysisError("export_receptive_csv: target/intensity length mismatch");
  std::ofstream out = detail::open_out(path);
  out << "target,node,intensity\n";
  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::vector<std::size_t> order(intensity[t].size());
    for (std::size_t u = 0; u < order.size(); ++u) order[u] = u;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return intensity[t][a] > intensity[t][b];
    });
    for (std::size_t u : order)
      out << targets[t] << ',' << u << ',' << dgcn::detail::fmt_double(intensity[t][u]) << '\n';
  }
}

inline void export_report(const AnalysisReport& rep, const std::string& dir) {
  export_attention_csv(dir + "/attention.csv", rep.levels, rep.avg_scores);
  export_h_weight_csv(dir + "/h_weight.csv", rep.levels, rep.h_no_deform, rep.h_deform);
  export_receptive_csv(dir + "/receptive_field.csv", rep.targets, rep.intensity);
}

// Raw kernel weights for every (level, edge, kernel) triple.
inline void export_conv_diagnostics_csv(const std::string& path,
                                        const std::vector<NeighborhoodGraph>& graphs,
                                        const std::vector<ConvOutput>& convs) {
  if (graphs.size() != convs.size())
    throw AnalysisError("export_conv_diagnostics_csv: graphs and diagnostics disagree");
  std::ofstream out = detail::open_out(path);
  out << "level,v,u,k,a_hat\n";
  for (std::size_t l = 0; l < graphs.size(); ++l) {
    const NeighborhoodGraph& g = graphs[l];
    for (std::size_t v = 0; v < g.num_nodes; ++v)
      for (std::size_t e = g.offsets[v]; e < g.offsets[v + 1]; ++e)
        for (std::size_t k = 0; k < convs[l].a_hat.size(); ++k)
          out << g.level_tag << ',' << v << ',' << g.neighbors[e] << ',' << k << ','
              << dgcn::detail::fmt_double(convs[l].a_hat[k][e]) << '\n';
  }
}

}  // namespace dgcn

#pragma once

// Deformable graph convolution over one neighborhood graph: relation vectors
// between positional coordinates, K learnable kernel vectors translated by a
// per-node deformation network, neighbor-softmax kernel weights, and the
// factored aggregation y_v = sum_k W_k (sum_u a_hat[u,v,k] h_u).

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "dgcn/positional.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

// Relation between coordinates pairs with an extra indicator slot: the
// normalized difference with indicator 0, or, when the positions coincide
// (norm <= kNormEps), the pure indicator vector. Matches the on-tape
// construction inside deform_gconv; exposed for diagnostics and tests.
inline std::vector<double> relation_vector(const double* phi_u, const double* phi_v,
                                           std::size_t d_phi) {
  std::vector<double> r(d_phi + 1, 0.0);
  double sq = 0.0;
  for (std::size_t j = 0; j < d_phi; ++j) {
    const double diff = phi_u[j] - phi_v[j];
    r[j] = diff;
    sq += diff * diff;
  }
  const double norm = std::sqrt(sq);
  if (norm <= kNormEps) {
    std::fill(r.begin(), r.end() - 1, 0.0);
    r[d_phi] = 1.0;
  } else {
    for (std::size_t j = 0; j < d_phi; ++j) r[j] /= norm;
  }
  return r;
}

// Parameters of one deformable convolution level. The deformation network is
// a two-layer perceptron d_x -> d_def (relu) -> K*(d_phi+1); its output rows
// hold the K deformation vectors for one node, concatenated.
struct KernelParams {
  std::vector<Tensor> phi_tilde;  // K vectors, each (d_phi+1) x 1
  std::vector<Tensor> W_k;        // K matrices, each d_h x d_y
  Tensor def_W1;                  // d_x x d_def
  Tensor def_b1;                  // 1 x d_def
  Tensor def_W2;                  // d_def x K*(d_phi+1)
  Tensor def_b2;                  // 1 x K*(d_phi+1)

  std::size_t K() const { return phi_tilde.size(); }
  std::size_t d_rel() const { return phi_tilde.empty() ? 0 : phi_tilde[0].shape[0]; }

  KernelParams bind(Tape& tape) const {
    KernelParams b = *this;
    for (Tensor& t : b.phi_tilde) t = tape.leaf(t);
    for (Tensor& t : b.W_k) t = tape.leaf(t);
    b.def_W1 = tape.leaf(def_W1);
    b.def_b1 = tape.leaf(def_b1);
    b.def_W2 = tape.leaf(def_W2);
    b.def_b2 = tape.leaf(def_b2);
    return b;
  }
};

inline Tensor glorot_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-s, s);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = u(rng);
  return Tensor({rows, cols}, std::move(v));
}

inline Tensor unit_sphere_vector(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(d);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (double& x : v) {
      x = gauss(rng);
      sq += x * x;
    }
  } while (std::sqrt(sq) <= kNormEps);
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : v) x *= inv;
  return Tensor({d, 1}, std::move(v));
}

inline KernelParams init_kernel_params(std::size_t K, std::size_t d_phi,
                                       std::size_t d_h, std::size_t d_y,
                                       std::size_t d_x, std::size_t d_def,
                                       std::mt19937_64& rng) {
  KernelParams p;
  for (std::size_t k = 0; k < K; ++k)
    p.phi_tilde.push_back(unit_sphere_vector(d_phi + 1, rng));
  for (std::size_t k = 0; k < K; ++k) p.W_k.push_back(glorot_uniform(d_h, d_y, rng));
  p.def_W1 = glorot_uniform(d_x, d_def, rng);
  p.def_b1 = Tensor::zeros({1, d_def});
  p.def_W2 = glorot_uniform(d_def, K * (d_phi + 1), rng);
  p.def_b2 = Tensor::zeros({1, K * (d_phi + 1)});
  return p;
}

struct ConvOutput {
  Tensor Y;             // n x d_y
  Tensor delta_sqnorm;  // scalar: sum over nodes and kernels of |Delta|^2
  // Kernel weights per kernel, aligned with graph.neighbors (diagnostics).
  std::vector<std::vector<double>> a_hat;
};

namespace detail {

inline std::vector<std::size_t> expand_centers(const NeighborhoodGraph& g) {
  std::vector<std::size_t> centers(g.neighbors.size());
  for (std::size_t v = 0; v < g.num_nodes; ++v)
    for (std::size_t i = g.offsets[v]; i < g.offsets[v + 1]; ++i) centers[i] = v;
  return centers;
}

inline Tensor ones_matrix(std::size_t r, std::size_t c) {
  return Tensor::filled({r, c}, 1.0);
}

// Constant selector extracting the k-th block of d columns from a row of K*d.
inline Tensor block_selector(std::size_t K, std::size_t d, std::size_t k) {
  Tensor s = Tensor::zeros({K * d, d});
  for (std::size_t j = 0; j < d; ++j) s.values[(k * d + j) * d + j] = 1.0;
  return s;
}

}  // namespace detail

// One deformable convolution pass. H holds hidden features (n x d_h), phi the
// positional coordinates for this level (n x d_phi), `smoothed` the constant
// feature table feeding the deformation network (n x d_x). When
// use_deformation is false the kernel vectors are used untranslated and
// delta_sqnorm is zero.
inline ConvOutput deform_gconv(Tape& tape, const NeighborhoodGraph& graph,
                               const Tensor& H, const Tensor& phi,
                               const Tensor& smoothed, const KernelParams& params,
                               bool use_deformation = true) {
  const std::size_t n = graph.num_nodes;
  const std::size_t m = graph.neighbors.size();
  const std::size_t K = params.K();
  const std::size_t d_rel = params.d_rel();
  const std::size_t d_phi = d_rel - 1;
  const std::size_t d_h = H.shape[1];
  if (phi.shape[0] != n || H.shape[0] != n)
    throw TensorError("deform_gconv: node count mismatch");
  if (phi.shape[1] != d_phi)
    throw TensorError("deform_gconv: coordinate width does not match kernel vectors");
  if (m == 0) throw TensorError("deform_gconv: empty neighborhood graph");

  const std::vector<std::size_t> centers = detail::expand_centers(graph);
  const std::vector<std::size_t>& us = graph.neighbors;

  // Relation matrix R (m x d_rel). The indicator branch is decided from the
  // current coordinate values; those rows carry no gradient into phi.
  Tensor phi_u = tape.gather_rows(phi, us);
  Tensor phi_v = tape.gather_rows(phi, centers);
  Tensor diffs = tape.sub(phi_u, phi_v);
  Tensor keep_mask = Tensor::zeros({m, d_phi});
  Tensor indicator_col = Tensor::zeros({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d_phi; ++j) {
      const double x = diffs.values[i * d_phi + j];
      sq += x * x;
    }
    const bool indicator = us[i] == centers[i] || std::sqrt(sq) <= kNormEps;
    indicator_col.values[i] = indicator ? 1.0 : 0.0;
    if (!indicator)
      for (std::size_t j = 0; j < d_phi; ++j) keep_mask.values[i * d_phi + j] = 1.0;
  }
  Tensor normalized = tape.row_l2_normalize(diffs);
  Tensor R = tape.concat_cols(tape.mul(normalized, keep_mask), indicator_col);

  // Deformation vectors for every node, all kernels concatenated per row.
  Tensor D_all;
  if (use_deformation) {
    Tensor bias1 = tape.matmul(detail::ones_matrix(n, 1), params.def_b1);
    Tensor hidden = tape.relu(tape.add(tape.matmul(smoothed, params.def_W1), bias1));
    Tensor bias2 = tape.matmul(detail::ones_matrix(n, 1), params.def_b2);
    D_all = tape.add(tape.matmul(hidden, params.def_W2), bias2);
  }

  Tensor H_edges = tape.gather_rows(H, us);
  ConvOutput out;
  out.a_hat.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    Tensor logits = tape.matmul(R, params.phi_tilde[k]);
    if (use_deformation) {
      Tensor D_k = tape.matmul(D_all, detail::block_selector(K, d_rel, k));
      Tensor D_edges = tape.gather_rows(D_k, centers);
      Tensor dot = tape.matmul(tape.mul(R, D_edges), detail::ones_matrix(d_rel, 1));
      logits = tape.add(logits, dot);
    }
    Tensor a_k = tape.softmax_groups(logits, graph.offsets);
    out.a_hat.push_back(a_k.values);

    Tensor weighted = tape.mul(tape.matmul(a_k, detail::ones_matrix(1, d_h)), H_edges);
    Tensor agg = tape.scatter_add_rows(weighted, centers, n);
    Tensor y_k = tape.matmul(agg, params.W_k[k]);
    out.Y = k == 0 ? y_k : tape.add(out.Y, y_k);
  }
  out.delta_sqnorm =
      use_deformation ? tape.squared_l2_norm(D_all) : Tensor::scalar(0.0);
  return out;
}

}  // namespace dgcn

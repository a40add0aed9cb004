#pragma once

// Full model assembly: encoder -> per-graph deformable convolutions ->
// attention fusion -> linear classifier, plus 2-layer GCN and MLP baselines,
// parameter initialization, and JSON checkpoints.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgcn/dataset.hpp"
#include "dgcn/deform_conv.hpp"
#include "dgcn/positional.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

struct ModelConfig {
  std::size_t L = 2;       // smoothing levels -> L+1 latent graphs
  std::size_t K = 4;       // kernel vectors per level
  std::size_t knn = 5;     // latent-graph neighbor count
  std::size_t d_phi = 16;  // positional coordinate width
  std::size_t d_h = 64;    // hidden width; convolution outputs share it
  std::size_t d_def = 0;   // deformation hidden width; 0 means d_h
  double dropout = 0.5;
  std::size_t d_x = 0;  // resolved from the dataset
  std::size_t num_classes = 0;

  std::size_t resolved_d_def() const { return d_def ? d_def : d_h; }
  std::size_t levels() const { return L + 2; }  // latent graphs plus input graph
};

struct ParamRef {
  std::string name;
  Tensor* tensor;
  bool decay;  // weight decay applies; biases and kernel vectors opt out
};

namespace detail {

inline Tensor tile_bias(Tape& tape, std::size_t n, const Tensor& b) {
  return tape.matmul(ones_matrix(n, 1), b);
}

inline Tensor dropout_maybe(Tape& tape, const Tensor& x, double rate, bool train_mode,
                            std::mt19937_64* rng) {
  if (!train_mode || rate <= 0.0) return x;
  if (!rng) throw TensorError("dropout requires an rng in train mode");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor mask = Tensor::zeros(x.shape);
  for (double& m : mask.values) m = u(*rng) < rate ? 0.0 : 1.0;
  return tape.dropout(x, mask, rate);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Deformable GCN

struct DeformableGCNParams {
  ModelConfig cfg;
  Tensor enc_W;                      // d_x x d_h
  Tensor enc_b;                      // 1 x d_h
  std::vector<Tensor> W_phi;         // L+1 projections, each d_x x d_phi
  std::vector<KernelParams> levels;  // L+2 kernel sets
  Tensor z;                          // d_h x 1 fusion vector
  Tensor cls_W;                      // d_h x C
  Tensor cls_b;                      // 1 x C

  static DeformableGCNParams init(const ModelConfig& cfg, std::mt19937_64& rng) {
    DeformableGCNParams p;
    p.cfg = cfg;
    p.enc_W = glorot_uniform(cfg.d_x, cfg.d_h, rng);
    p.enc_b = Tensor::zeros({1, cfg.d_h});
    for (std::size_t l = 0; l <= cfg.L; ++l)
      p.W_phi.push_back(glorot_uniform(cfg.d_x, cfg.d_phi, rng));
    for (std::size_t l = 0; l < cfg.levels(); ++l)
      p.levels.push_back(init_kernel_params(cfg.K, cfg.d_phi, cfg.d_h, cfg.d_h,
                                            cfg.d_x, cfg.resolved_d_def(), rng));
    p.z = glorot_uniform(cfg.d_h, 1, rng);
    p.cls_W = glorot_uniform(cfg.d_h, cfg.num_classes, rng);
    p.cls_b = Tensor::zeros({1, cfg.num_classes});
    return p;
  }

  DeformableGCNParams bind(Tape& tape) const {
    DeformableGCNParams b = *this;
    b.enc_W = tape.leaf(enc_W);
    b.enc_b = tape.leaf(enc_b);
    for (Tensor& t : b.W_phi) t = tape.leaf(t);
    for (std::size_t l = 0; l < levels.size(); ++l) b.levels[l] = levels[l].bind(tape);
    b.z = tape.leaf(z);
    b.cls_W = tape.leaf(cls_W);
    b.cls_b = tape.leaf(cls_b);
    return b;
  }

  std::vector<ParamRef> param_refs() {
    std::vector<ParamRef> refs;
    refs.push_back({"encoder.W", &enc_W, true});
    refs.push_back({"encoder.b", &enc_b, false});
    for (std::size_t l = 0; l < W_phi.size(); ++l)
      refs.push_back({"W_phi." + std::to_string(l), &W_phi[l], true});
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const std::string base = "level." + std::to_string(l) + ".";
      KernelParams& kp = levels[l];
      for (std::size_t k = 0; k < kp.phi_tilde.size(); ++k)
        refs.push_back({base + "phi_tilde." + std::to_string(k), &kp.phi_tilde[k], false});
      for (std::size_t k = 0; k < kp.W_k.size(); ++k)
        refs.push_back({base + "W_k." + std::to_string(k), &kp.W_k[k], true});
      refs.push_back({base + "def.W1", &kp.def_W1, true});
      refs.push_back({base + "def.b1", &kp.def_b1, false});
      refs.push_back({base + "def.W2", &kp.def_W2, true});
      refs.push_back({base + "def.b2", &kp.def_b2, false});
    }
    refs.push_back({"fusion.z", &z, true});
    refs.push_back({"classifier.W", &cls_W, true});
    refs.push_back({"classifier.b", &cls_b, false});
    return refs;
  }
};

// Normalizes each level's output rows to unit l2 norm (pass-through below the
// norm guard), scores levels by softmax of z^T ytilde per node, and returns
// the convex combination plus the score matrix (n x levels).
inline std::pair<Tensor, Tensor> fuse_attention(Tape& tape,
                                                const std::vector<Tensor>& Ys,
                                                const Tensor& z) {
  if (Ys.empty()) throw TensorError("fuse_attention: no levels");
  const std::size_t n = Ys[0].shape[0];
  const std::size_t d = Ys[0].shape[1];
  std::vector<Tensor> normed;
  normed.reserve(Ys.size());
  Tensor logits;
  for (std::size_t l = 0; l < Ys.size(); ++l) {
    if (Ys[l].shape[0] != n || Ys[l].shape[1] != d)
      throw TensorError("fuse_attention: level output shapes differ");
    normed.push_back(tape.row_l2_normalize(Ys[l]));
    Tensor col = tape.matmul(normed.back(), z);
    logits = l == 0 ? col : tape.concat_cols(logits, col);
  }
  Tensor s = tape.softmax_rows(logits);
  Tensor fused;
  for (std::size_t l = 0; l < Ys.size(); ++l) {
    Tensor onehot = Tensor::zeros({Ys.size(), 1});
    onehot.values[l] = 1.0;
    Tensor tile = tape.matmul(tape.matmul(s, onehot), detail::ones_matrix(1, d));
    Tensor term = tape.mul(tile, normed[l]);
    fused = l == 0 ? term : tape.add(fused, term);
  }
  return {fused, s};
}

struct ForwardOutput {
  Tensor logits;  // n x C
  Tensor htilde;  // n x d_h fused representation
  Tensor scores;  // n x (L+2) fusion scores
  std::vector<ConvOutput> conv;  // per level
};

// Full forward pass. `smoothed` must hold L+1 tables; `graphs` L+2 graphs with
// the input graph last. The input-graph convolution reuses the deepest
// coordinates phi^(L) and the raw features as its deformation input. Dropout
// fires only in train mode.
inline ForwardOutput dgcn_forward(Tape& tape, const Dataset& ds,
                                  const std::vector<NeighborhoodGraph>& graphs,
                                  const std::vector<std::vector<double>>& smoothed,
                                  const DeformableGCNParams& bound, bool train_mode,
                                  std::mt19937_64* rng, bool use_deformation = true) {
  const ModelConfig& cfg = bound.cfg;
  const std::size_t n = ds.num_nodes;
  if (graphs.size() != cfg.levels())
    throw TensorError("dgcn_forward: expected " + std::to_string(cfg.levels()) +
                      " graphs, got " + std::to_string(graphs.size()));
  if (smoothed.size() != cfg.L + 1)
    throw TensorError("dgcn_forward: expected " + std::to_string(cfg.L + 1) +
                      " smoothed tables");

  Tensor X({n, cfg.d_x}, ds.features);
  Tensor X_in = detail::dropout_maybe(tape, X, cfg.dropout, train_mode, rng);
  Tensor h = tape.relu(tape.add(tape.matmul(X_in, bound.enc_W),
                                detail::tile_bias(tape, n, bound.enc_b)));

  std::vector<Tensor> phis;
  phis.reserve(cfg.L + 1);
  for (std::size_t l = 0; l <= cfg.L; ++l) {
    Tensor E_l({n, cfg.d_x}, smoothed[l]);
    phis.push_back(positional_embed(tape, E_l, bound.W_phi[l]));
  }

  ForwardOutput out;
  std::vector<Tensor> Ys;
  Ys.reserve(cfg.levels());
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    const bool input_level = l == cfg.L + 1;
    const Tensor& phi = input_level ? phis[cfg.L] : phis[l];
    const std::vector<double>& e_table = input_level ? smoothed[0] : smoothed[l];
    Tensor e({n, cfg.d_x}, e_table);
    out.conv.push_back(deform_gconv(tape, graphs[l], h, phi, e, bound.levels[l],
                                    use_deformation));
    Ys.push_back(out.conv.back().Y);
  }

  auto [fused, scores] = fuse_attention(tape, Ys, bound.z);
  out.htilde = fused;
  out.scores = scores;
  Tensor cls_in = detail::dropout_maybe(tape, fused, cfg.dropout, train_mode, rng);
  out.logits = tape.add(tape.matmul(cls_in, bound.cls_W),
                        detail::tile_bias(tape, n, bound.cls_b));
  return out;
}

// ---------------------------------------------------------------------------
// Baselines

struct GCNParams {
  ModelConfig cfg;
  Tensor W1, b1, W2, b2;

  static GCNParams init(const ModelConfig& cfg, std::mt19937_64& rng) {
    GCNParams p;
    p.cfg = cfg;
    p.W1 = glorot_uniform(cfg.d_x, cfg.d_h, rng);
    p.b1 = Tensor::zeros({1, cfg.d_h});
    p.W2 = glorot_uniform(cfg.d_h, cfg.num_classes, rng);
    p.b2 = Tensor::zeros({1, cfg.num_classes});
    return p;
  }

  GCNParams bind(Tape& tape) const {
    GCNParams b = *this;
    b.W1 = tape.leaf(W1);
    b.b1 = tape.leaf(b1);
    b.W2 = tape.leaf(W2);
    b.b2 = tape.leaf(b2);
    return b;
  }

  std::vector<ParamRef> param_refs() {
    return {{"gcn.W1", &W1, true},
            {"gcn.b1", &b1, false},
            {"gcn.W2", &W2, true},
            {"gcn.b2", &b2, false}};
  }
};

// Symmetric normalization coefficients 1/sqrt(deg(v) deg(u)) over the
// self-looped input graph, aligned with its CSR slots.
inline std::vector<double> gcn_norm_coeffs(const NeighborhoodGraph& g) {
  std::vector<double> coeff(g.neighbors.size());
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    for (std::size_t i = g.offsets[v]; i < g.offsets[v + 1]; ++i) {
      const std::size_t u = g.neighbors[i];
      coeff[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(v)) *
                                 static_cast<double>(g.degree(u)));
    }
  }
  return coeff;
}

inline Tensor gcn_aggregate(Tape& tape, const NeighborhoodGraph& g,
                            const std::vector<double>& coeff, const Tensor& H) {
  const std::size_t d = H.shape[1];
  const std::size_t m = g.neighbors.size();
  Tensor tile = Tensor::zeros({m, d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) tile.values[i * d + j] = coeff[i];
  Tensor H_edges = tape.gather_rows(H, g.neighbors);
  return tape.scatter_add_rows(tape.mul(tile, H_edges), detail::expand_centers(g),
                               g.num_nodes);
}

inline Tensor gcn_forward(Tape& tape, const Dataset& ds, const NeighborhoodGraph& input_graph,
                          const GCNParams& bound, bool train_mode, std::mt19937_64* rng) {
  const std::size_t n = ds.num_nodes;
  const auto coeff = gcn_norm_coeffs(input_graph);
  Tensor X({n, bound.cfg.d_x}, ds.features);
  Tensor X_in = detail::dropout_maybe(tape, X, bound.cfg.dropout, train_mode, rng);
  Tensor h1 = tape.relu(tape.add(
      tape.matmul(gcn_aggregate(tape, input_graph, coeff, X_in), bound.W1),
      detail::tile_bias(tape, n, bound.b1)));
  Tensor h1_in = detail::dropout_maybe(tape, h1, bound.cfg.dropout, train_mode, rng);
  return tape.add(tape.matmul(gcn_aggregate(tape, input_graph, coeff, h1_in), bound.W2),
                  detail::tile_bias(tape, n, bound.b2));
}

struct MLPParams {
  ModelConfig cfg;
  Tensor W1, b1, W2, b2;

  static MLPParams init(const ModelConfig& cfg, std::mt19937_64& rng) {
    MLPParams p;
    p.cfg = cfg;
    p.W1 = glorot_uniform(cfg.d_x, cfg.d_h, rng);
    p.b1 = Tensor::zeros({1, cfg.d_h});
    p.W2 = glorot_uniform(cfg.d_h, cfg.num_classes, rng);
    p.b2 = Tensor::zeros({1, cfg.num_classes});
    return p;
  }

  MLPParams bind(Tape& tape) const {
    MLPParams b = *this;
    b.W1 = tape.leaf(W1);
    b.b1 = tape.leaf(b1);
    b.W2 = tape.leaf(W2);
    b.b2 = tape.leaf(b2);
    return b;
  }

  std::vector<ParamRef> param_refs() {
    return {{"mlp.W1", &W1, true},
            {"mlp.b1", &b1, false},
            {"mlp.W2", &W2, true},
            {"mlp.b2", &b2, false}};
  }
};

inline Tensor mlp_forward(Tape& tape, const Dataset& ds, const MLPParams& bound,
                          bool train_mode, std::mt19937_64* rng) {
  const std::size_t n = ds.num_nodes;
  Tensor X({n, bound.cfg.d_x}, ds.features);
  Tensor X_in = detail::dropout_maybe(tape, X, bound.cfg.dropout, train_mode, rng);
  Tensor h = tape.relu(tape.add(tape.matmul(X_in, bound.W1),
                                detail::tile_bias(tape, n, bound.b1)));
  Tensor h_in = detail::dropout_maybe(tape, h, bound.cfg.dropout, train_mode, rng);
  return tape.add(tape.matmul(h_in, bound.W2), detail::tile_bias(tape, n, bound.b2));
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON with a config echo and named shape/value arrays.

inline void save_checkpoint(const std::string& path, const std::string& model_kind,
                            const nlohmann::ordered_json& config,
                            std::vector<ParamRef> refs) {
  nlohmann::ordered_json j;
  j["format"] = "dgcn-checkpoint-v1";
  j["model"] = model_kind;
  j["config"] = config;
  nlohmann::ordered_json tensors;
  for (const ParamRef& r : refs) {
    nlohmann::ordered_json t;
    t["shape"] = r.tensor->shape;
    t["values"] = r.tensor->values;
    tensors[r.name] = std::move(t);
  }
  j["tensors"] = std::move(tensors);
  std::ofstream f(path);
  if (!f) throw TensorError("cannot write checkpoint: " + path);
  f << j.dump(1) << '\n';
}

inline nlohmann::ordered_json read_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw TensorError("cannot open checkpoint: " + path);
  nlohmann::ordered_json j;
  f >> j;
  if (!j.contains("format") || j["format"] != "dgcn-checkpoint-v1")
    throw TensorError("unrecognized checkpoint format in " + path);
  return j;
}

inline void assign_checkpoint_tensors(const nlohmann::ordered_json& ckpt,
                                      std::vector<ParamRef> refs) {
  const auto& tensors = ckpt.at("tensors");
  for (ParamRef& r : refs) {
    if (!tensors.contains(r.name))
      throw TensorError("checkpoint is missing tensor " + r.name);
    const auto& t = tensors.at(r.name);
    const Shape shape = t.at("shape").get<Shape>();
    if (shape != r.tensor->shape)
      throw TensorError("checkpoint tensor " + r.name + " has shape " +
                        shape_str(shape) + ", expected " + shape_str(r.tensor->shape));
    r.tensor->values = t.at("values").get<std::vector<double>>();
  }
}

}  // namespace dgcn

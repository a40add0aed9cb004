#pragma once
// Loss assembly (classification plus the two kernel regularizers), Adam with
// coupled weight decay, the full-graph training loop, and accuracy evaluation.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgcn/dataset.hpp"
#include "dgcn/deform_conv.hpp"
#include "dgcn/model.hpp"
#include "dgcn/positional.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 0.01;
  double weight_decay = 5e-4;
  std::size_t epochs = 500;
  double alpha = 1e-2;   // separating-regularizer strength
  double beta = 1e-2;    // focusing-regularizer strength
  std::uint64_t seed = 0;
};

// Negative mean pairwise squared distance between kernel vectors, summed over
// ordered pairs k1 != k2 within each level and averaged across levels. Always
// <= 0; exactly zero when every level has a single kernel.
inline Tensor loss_separating(Tape& tape, const std::vector<KernelParams>& levels) {
  if (levels.empty()) throw TrainError("loss_separating: no kernel sets");
  Tensor acc = Tensor::scalar(0.0);
  for (const KernelParams& lvl : levels) {
    const std::size_t K = lvl.K();
    if (K < 2) continue;  // empty pair set
    Tensor pair_sum = Tensor::scalar(0.0);
    for (std::size_t k1 = 0; k1 < K; ++k1)
      for (std::size_t k2 = 0; k2 < K; ++k2) {
        if (k1 == k2) continue;
        Tensor d = tape.sub(lvl.phi_tilde[k2], lvl.phi_tilde[k1]);
        pair_sum = tape.add(pair_sum, tape.squared_l2_norm(d));
      }
    acc = tape.add(acc, tape.scalar_mul(pair_sum, -1.0 / static_cast<double>(K)));
  }
  return tape.scalar_mul(acc, 1.0 / static_cast<double>(levels.size()));
}

// Mean squared deformation norm over (node, kernel), averaged across levels.
// Each ConvOutput already carries the per-level total sum of squares.
inline Tensor loss_focusing(Tape& tape, const std::vector<ConvOutput>& conv,
                            std::size_t K, std::size_t num_nodes) {
  if (conv.empty()) throw TrainError("loss_focusing: no convolution outputs");
  if (K == 0 || num_nodes == 0) throw TrainError("loss_focusing: empty kernel set or graph");
  Tensor acc = Tensor::scalar(0.0);
  for (const ConvOutput& c : conv) acc = tape.add(acc, c.delta_sqnorm);
  const double denom = static_cast<double>(K) * static_cast<double>(num_nodes) *
                       static_cast<double>(conv.size());
  return tape.scalar_mul(acc, 1.0 / denom);
}

struct LossTerms {
  Tensor cls, sep, focus, total;
};

inline LossTerms loss_total(Tape& tape, const Tensor& logits, const std::vector<int>& labels,
                            const std::vector<std::uint8_t>& train_mask, const Tensor& sep,
                            const Tensor& focus, double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0)
    throw TrainError("loss_total: regularizer strengths must be non-negative");
  LossTerms t;
  t.cls = tape.cross_entropy_with_logits(logits, labels, train_mask);
  t.sep = sep;
  t.focus = focus;
  t.total = tape.add(t.cls, tape.add(tape.scalar_mul(sep, alpha), tape.scalar_mul(focus, beta)));
  return t;
}

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

inline AdamState adam_init(const std::vector<ParamRef>& params) {
  AdamState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const ParamRef& p : params) {
    st.m.emplace_back(p.tensor->numel(), 0.0);
    st.v.emplace_back(p.tensor->numel(), 0.0);
  }
  return st;
}

// Standard Adam with bias correction; eps sits outside the square root.
// Weight decay enters as wd*theta added to the gradient (coupled L2) and only
// touches parameters whose ref opted in.
inline void adam_step(std::vector<ParamRef>& params,
                      const std::vector<const std::vector<double>*>& grads, AdamState& st,
                      double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw TrainError("adam_step: parameter, gradient, and state counts differ");
  ++st.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double>& th = params[i].tensor->values;
    const std::vector<double>& g0 = *grads[i];
    if (g0.size() != th.size())
      throw TrainError("adam_step: gradient size mismatch for " + params[i].name);
    std::vector<double>& m = st.m[i];
    std::vector<double>& v = st.v[i];
    const double wd = params[i].decay ? weight_decay : 0.0;
    for (std::size_t j = 0; j < th.size(); ++j) {
      const double g = g0[j] + wd * th[j];
      m[j] = beta1 * m[j] + (1.0 - beta1) * g;
      v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
      th[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
    }
  }
}

// Masked accuracy; argmax ties resolve to the lowest class index.
inline double evaluate(const Tensor& logits, const std::vector<int>& labels,
                       const std::vector<std::uint8_t>& mask) {
  const std::size_t n = logits.rows();
  const std::size_t C = logits.cols();
  if (labels.size() != n || mask.size() != n)
    throw TrainError("evaluate: labels/mask length does not match logits rows");
  std::size_t total = 0, hit = 0;
  for (std::size_t v = 0; v < n; ++v) {
    if (!mask[v]) continue;
    std::size_t pred = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (logits.values[v * C + c] > logits.values[v * C + pred]) pred = c;
    ++total;
    hit += static_cast<std::size_t>(pred) == static_cast<std::size_t>(labels[v]) ? 1 : 0;
  }
  if (total == 0) throw TrainError("evaluate: empty mask");
  return static_cast<double>(hit) / static_cast<double>(total);
}

// One forward pass as the trainer sees it, regardless of the model family.
// param_nodes are the tape leaf ids aligned with the model's param_refs().
struct ModelPass {
  Tensor logits;
  std::vector<int> param_nodes;
  Tensor loss_sep = Tensor::scalar(0.0);
  Tensor loss_focus = Tensor::scalar(0.0);
  ForwardOutput out;  // convolution diagnostics; empty for the baselines
};

struct DeformableModel {
  const Dataset* ds = nullptr;
  std::vector<std::vector<double>> smoothed;
  std::vector<NeighborhoodGraph> graphs;
  DeformableGCNParams params;
  bool use_deformation = true;

  static DeformableModel make(const Dataset& ds, ModelConfig cfg, std::uint64_t seed) {
    DeformableModel m;
    m.ds = &ds;
    cfg.d_x = ds.num_features;
    cfg.num_classes = ds.num_classes;
    m.smoothed = smooth_features(ds, cfg.L);
    m.graphs = build_all_graphs(ds, m.smoothed, cfg.knn);
    std::mt19937_64 rng(seed);
    m.params = DeformableGCNParams::init(cfg, rng);
    return m;
  }

  std::vector<ParamRef> param_refs() { return params.param_refs(); }

  ModelPass run(Tape& tape, bool train_mode, std::mt19937_64* rng) const {
    DeformableGCNParams bound = params.bind(tape);
    ModelPass p;
    p.out = dgcn_forward(tape, *ds, graphs, smoothed, bound, train_mode, rng, use_deformation);
    p.logits = p.out.logits;
    for (const ParamRef& r : bound.param_refs()) p.param_nodes.push_back(r.tensor->node);
    p.loss_sep = loss_separating(tape, bound.levels);
    p.loss_focus = loss_focusing(tape, p.out.conv, params.cfg.K, ds->num_nodes);
    return p;
  }
};

struct GCNModel {
  const Dataset* ds = nullptr;
  NeighborhoodGraph input_graph;
  GCNParams params;

  static GCNModel make(const Dataset& ds, ModelConfig cfg, std::uint64_t seed) {
    GCNModel m;
    m.ds = &ds;
    cfg.d_x = ds.num_features;
    cfg.num_classes = ds.num_classes;
    m.input_graph = build_input_graph(ds);
    std::mt19937_64 rng(seed);
    m.params = GCNParams::init(cfg, rng);
    return m;
  }

  std::vector<ParamRef> param_refs() { return params.param_refs(); }

  ModelPass run(Tape& tape, bool train_mode, std::mt19937_64* rng) const {
    GCNParams bound = params.bind(tape);
    ModelPass p;
    p.logits = gcn_forward(tape, *ds, input_graph, bound, train_mode, rng);
    for (const ParamRef& r : bound.param_refs()) p.param_nodes.push_back(r.tensor->node);
    return p;
  }
};

struct MLPModel {
  const Dataset* ds = nullptr;
  MLPParams params;

  static MLPModel make(const Dataset& ds, ModelConfig cfg, std::uint64_t seed) {
    MLPModel m;
    m.ds = &ds;
    cfg.d_x = ds.num_features;
    cfg.num_classes = ds.num_classes;
    std::mt19937_64 rng(seed);
    m.params = MLPParams::init(cfg, rng);
    return m;
  }

  std::vector<ParamRef> param_refs() { return params.param_refs(); }

  ModelPass run(Tape& tape, bool train_mode, std::mt19937_64* rng) const {
    MLPParams bound = params.bind(tape);
    ModelPass p;
    p.logits = mlp_forward(tape, *ds, bound, train_mode, rng);
    for (const ParamRef& r : bound.param_refs()) p.param_nodes.push_back(r.tensor->node);
    return p;
  }
};

struct EpochRecord {
  std::size_t epoch;
  double loss_cls, loss_sep, loss_focus, val_acc, test_acc;
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_acc = -1.0;
  double test_at_best = 0.0;
};

inline nlohmann::ordered_json epoch_to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["loss_cls"] = r.loss_cls;
  j["loss_sep"] = r.loss_sep;
  j["loss_focus"] = r.loss_focus;
  j["val_acc"] = r.val_acc;
  j["test_acc"] = r.test_acc;
  return j;
}

// Full-graph training. One Adam step per epoch; validation and test accuracy
// are measured after the step with dropout off. The model is left holding the
// parameters from the best-validation epoch (ties to the earliest).
template <typename Model>
RunMetrics train_model(Model& model, const Dataset& ds, const SplitMasks& split,
                       const TrainConfig& tc, std::ostream* metrics_log = nullptr) {
  if (tc.epochs < 1) throw TrainError("train: epochs must be >= 1");
  auto count = [](const std::vector<std::uint8_t>& m) {
    std::size_t c = 0;
    for (std::uint8_t b : m) c += b ? 1 : 0;
    return c;
  };
  if (count(split.train) == 0) throw TrainError("train: empty train mask");
  if (count(split.val) == 0) throw TrainError("train: empty validation mask");
  if (count(split.test) == 0) throw TrainError("train: empty test mask");

  std::vector<ParamRef> master = model.param_refs();
  AdamState st = adam_init(master);
  std::mt19937_64 drop_rng(tc.seed ^ 0x9e3779b97f4a7c15ull);

  RunMetrics rm;
  Model best = model;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    EpochRecord rec{epoch, 0, 0, 0, 0, 0};
    try {
      Tape tape;
      ModelPass pass = model.run(tape, true, &drop_rng);
      LossTerms lt = loss_total(tape, pass.logits, ds.labels, split.train, pass.loss_sep,
                                pass.loss_focus, tc.alpha, tc.beta);
      rec.loss_cls = lt.cls.values[0];
      rec.loss_sep = lt.sep.values[0];
      rec.loss_focus = lt.focus.values[0];
      if (!std::isfinite(lt.total.values[0])) throw TensorError("non-finite loss");
      auto grads = tape.backward(lt.total);
      std::vector<const std::vector<double>*> g;
      g.reserve(pass.param_nodes.size());
      for (int nid : pass.param_nodes) g.push_back(&grads.at(nid).values);
      adam_step(master, g, st, tc.lr, tc.weight_decay);

      Tape eval_tape;
      ModelPass ep = model.run(eval_tape, false, nullptr);
      rec.val_acc = evaluate(ep.logits, ds.labels, split.val);
      rec.test_acc = evaluate(ep.logits, ds.labels, split.test);
    } catch (const TensorError& e) {
      throw TrainError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    rm.epochs.push_back(rec);
    if (metrics_log) (*metrics_log) << epoch_to_json(rec).dump() << '\n';
    if (rec.val_acc > rm.best_val_acc) {
      rm.best_val_acc = rec.val_acc;
      rm.best_epoch = epoch;
      rm.test_at_best = rec.test_acc;
      best = model;
    }
  }
  model = best;
  return rm;
}

// Two-sided 95% t-interval half-width over independent runs; the half-width
// is zero when fewer than two values are given.
struct MeanCI {
  double mean = 0.0;
  double half_width = 0.0;
  std::size_t n = 0;
};

inline MeanCI mean_ci95(const std::vector<double>& xs) {
  static constexpr double kT95[30] = {
      12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
      2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
      2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  MeanCI out;
  out.n = xs.size();
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  if (xs.size() < 2) return out;
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  const std::size_t df = xs.size() - 1;
  const double t = df <= 30 ? kT95[df - 1] : 1.96;
  out.half_width = t * sd / std::sqrt(static_cast<double>(xs.size()));
  return out;
}

}  // namespace dgcn

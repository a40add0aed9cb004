#pragma once

// Dense 64-bit tensors plus a recording tape for reverse-mode differentiation.
// Every op validates shapes, rejects non-finite outputs, and records itself on
// the tape when any input is tracked. Ops on pure constants compute without
// recording anything.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dgcn {

using Shape = std::vector<std::size_t>;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Row-major tensor of doubles. `node` is the handle into the tape that
// produced it; -1 marks a constant outside any recorded computation.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  int node = -1;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v)
      : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != shape_numel(shape))
      throw TensorError("tensor: " + std::to_string(values.size()) +
                        " values for shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    std::vector<double> v(shape_numel(s), 0.0);
    return Tensor(std::move(s), std::move(v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vec(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
  }
  static Tensor filled(Shape s, double x) {
    std::vector<double> v(shape_numel(s), x);
    return Tensor(std::move(s), std::move(v));
  }

  std::size_t numel() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  // Rank-1 tensors are treated as a single row where a row view is needed.
  std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  bool tracked() const { return node >= 0; }

  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
};

enum class OpKind {
  kLeaf,
  kConst,
  kMatmul,
  kAdd,
  kSub,
  kScalarMul,
  kMul,
  kConcatCols,
  kRelu,
  kRowL2Normalize,
  kSoftmaxGroups,
  kExp,
  kLog,
  kSum,
  kMean,
  kDropout,
  kGatherRows,
  kScatterAddRows,
  kCrossEntropy,
  kSquaredL2Norm,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConst: return "const";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kScalarMul: return "scalar-mul";
    case OpKind::kMul: return "elementwise-mul";
    case OpKind::kConcatCols: return "concat-last-axis";
    case OpKind::kRelu: return "relu";
    case OpKind::kRowL2Normalize: return "row-l2-normalize";
    case OpKind::kSoftmaxGroups: return "softmax-over-group";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kDropout: return "dropout";
    case OpKind::kGatherRows: return "gather-rows";
    case OpKind::kScatterAddRows: return "scatter-add-rows";
    case OpKind::kCrossEntropy: return "cross-entropy-with-logits";
    case OpKind::kSquaredL2Norm: return "squared-l2-norm";
  }
  return "?";
}

// Rows with an l2 norm at or below this are passed through unchanged by
// row_l2_normalize instead of being divided by a near-zero norm.
inline constexpr double kNormEps = 1e-12;

struct TapeNode {
  OpKind kind = OpKind::kConst;
  std::vector<int> inputs;
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  double scalar = 0.0;               // kScalarMul factor, kDropout rate
  std::vector<std::size_t> indices;  // kGatherRows / kScatterAddRows
  std::vector<std::size_t> offsets;  // kSoftmaxGroups segment boundaries
  std::vector<int> labels;           // kCrossEntropy
  std::vector<std::uint8_t> mask;    // kCrossEntropy
  std::size_t out_rows = 0;          // kScatterAddRows
};

// Records a topologically ordered list of operations. One tape per
// forward/backward pass; recording is single-threaded.
class Tape {
 public:
  // Registers a tracked leaf (a parameter or differentiable input).
  Tensor leaf(const Tensor& t) {
    TapeNode n;
    n.kind = OpKind::kLeaf;
    n.shape = t.shape;
    n.values = t.values;
    n.requires_grad = true;
    int id = push(std::move(n));
    Tensor out = t;
    out.node = id;
    return out;
  }

  std::size_t size() const { return nodes_.size(); }
  const TapeNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
      throw TensorError(std::string("matmul: incompatible shapes ") +
                        shape_str(a.shape) + " " + shape_str(b.shape));
    TapeNode n;
    n.kind = OpKind::kMatmul;
    n.shape = {a.shape[0], b.shape[1]};
    return finish(std::move(n), {&a, &b});
  }

  Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::kAdd, a, b); }
  Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::kSub, a, b); }
  Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::kMul, a, b); }

  Tensor scalar_mul(const Tensor& a, double c) {
    TapeNode n;
    n.kind = OpKind::kScalarMul;
    n.shape = a.shape;
    n.scalar = c;
    return finish(std::move(n), {&a});
  }

  Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[0] != b.shape[0])
      throw TensorError(std::string("concat-last-axis: incompatible shapes ") +
                        shape_str(a.shape) + " " + shape_str(b.shape));
    TapeNode n;
    n.kind = OpKind::kConcatCols;
    n.shape = {a.shape[0], a.shape[1] + b.shape[1]};
    return finish(std::move(n), {&a, &b});
  }

  Tensor relu(const Tensor& a) { return unary(OpKind::kRelu, a); }
  Tensor exp(const Tensor& a) { return unary(OpKind::kExp, a); }
  Tensor log(const Tensor& a) { return unary(OpKind::kLog, a); }

  Tensor row_l2_normalize(const Tensor& a) {
    if (a.rank() > 2) throw TensorError("row-l2-normalize: rank must be 1 or 2");
    return unary(OpKind::kRowL2Normalize, a);
  }

  // Softmax within each contiguous segment of the flattened values.
  // `offsets` must start at 0, end at numel, and be strictly increasing.
  Tensor softmax_groups(const Tensor& a, std::vector<std::size_t> offsets) {
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != a.numel())
      throw TensorError("softmax-over-group: bad segment offsets");
    for (std::size_t i = 1; i < offsets.size(); ++i)
      if (offsets[i] <= offsets[i - 1])
        throw TensorError("softmax-over-group: empty segment");
    TapeNode n;
    n.kind = OpKind::kSoftmaxGroups;
    n.shape = a.shape;
    n.offsets = std::move(offsets);
    return finish(std::move(n), {&a});
  }

  // Softmax over the last axis of a rank-2 tensor (one group per row).
  Tensor softmax_rows(const Tensor& a) {
    if (a.rank() != 2) throw TensorError("softmax_rows: rank-2 input required");
    std::vector<std::size_t> off(a.shape[0] + 1);
    for (std::size_t i = 0; i <= a.shape[0]; ++i) off[i] = i * a.shape[1];
    return softmax_groups(a, std::move(off));
  }

  Tensor sum(const Tensor& a) { return reduce(OpKind::kSum, a); }
  Tensor mean(const Tensor& a) { return reduce(OpKind::kMean, a); }
  Tensor squared_l2_norm(const Tensor& a) { return reduce(OpKind::kSquaredL2Norm, a); }

  // Inverted dropout with a caller-supplied 0/1 mask. The mask is a constant:
  // no gradient flows into it.
  Tensor dropout(const Tensor& a, const Tensor& mask01, double rate) {
    if (mask01.shape != a.shape)
      throw TensorError("dropout: mask shape mismatch");
    if (!(rate >= 0.0 && rate < 1.0))
      throw TensorError("dropout: rate must be in [0,1)");
    for (double m : mask01.values)
      if (m != 0.0 && m != 1.0) throw TensorError("dropout: mask must be 0/1");
    TapeNode n;
    n.kind = OpKind::kDropout;
    n.shape = a.shape;
    n.scalar = rate;
    Tensor mask_const = mask01;
    mask_const.node = -1;  // never differentiated
    return finish(std::move(n), {&a, &mask_const});
  }

  Tensor gather_rows(const Tensor& a, std::vector<std::size_t> rows) {
    if (a.rank() != 2) throw TensorError("gather-rows: rank-2 input required");
    for (std::size_t r : rows)
      if (r >= a.shape[0]) throw TensorError("gather-rows: row index out of range");
    TapeNode n;
    n.kind = OpKind::kGatherRows;
    n.shape = {rows.size(), a.shape[1]};
    n.indices = std::move(rows);
    return finish(std::move(n), {&a});
  }

  Tensor scatter_add_rows(const Tensor& a, std::vector<std::size_t> rows,
                          std::size_t out_rows) {
    if (a.rank() != 2) throw TensorError("scatter-add-rows: rank-2 input required");
    if (rows.size() != a.shape[0])
      throw TensorError("scatter-add-rows: one target row per input row required");
    for (std::size_t r : rows)
      if (r >= out_rows) throw TensorError("scatter-add-rows: row index out of range");
    TapeNode n;
    n.kind = OpKind::kScatterAddRows;
    n.shape = {out_rows, a.shape[1]};
    n.indices = std::move(rows);
    n.out_rows = out_rows;
    return finish(std::move(n), {&a});
  }

  // Mean negative log-likelihood of softmax(logits) over the masked rows.
  Tensor cross_entropy_with_logits(const Tensor& logits, std::vector<int> labels,
                                   std::vector<std::uint8_t> mask) {
    if (logits.rank() != 2)
      throw TensorError("cross-entropy-with-logits: rank-2 logits required");
    const std::size_t n = logits.shape[0], c = logits.shape[1];
    if (labels.size() != n || mask.size() != n)
      throw TensorError("cross-entropy-with-logits: labels/mask length mismatch");
    std::size_t covered = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      ++covered;
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
        throw TensorError("cross-entropy-with-logits: label out of range at row " +
                          std::to_string(i));
    }
    if (covered == 0) throw TensorError("cross-entropy-with-logits: empty mask");
    TapeNode node;
    node.kind = OpKind::kCrossEntropy;
    node.shape = {1};
    node.labels = std::move(labels);
    node.mask = std::move(mask);
    return finish(std::move(node), {&logits});
  }

  // Reverse sweep from a scalar loss. Returns the gradient of every leaf,
  // shaped like the leaf itself (zeros when the leaf does not reach the loss).
  std::unordered_map<int, Tensor> backward(const Tensor& loss) const {
    if (!loss.tracked()) throw TensorError("backward: loss is not on this tape");
    const TapeNode& ln = node(loss.node);
    if (ln.values.size() != 1) throw TensorError("backward: loss must be scalar");

    std::vector<std::vector<double>> grads(nodes_.size());
    auto grad_of = [&](int id) -> std::vector<double>& {
      auto& g = grads[static_cast<std::size_t>(id)];
      if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].values.size(), 0.0);
      return g;
    };
    grad_of(loss.node)[0] = 1.0;

    for (int id = loss.node; id >= 0; --id) {
      const TapeNode& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || grads[static_cast<std::size_t>(id)].empty()) continue;
      if (n.kind == OpKind::kLeaf || n.kind == OpKind::kConst) continue;
      accumulate(n, grads[static_cast<std::size_t>(id)], grad_of);
    }

    std::unordered_map<int, Tensor> table;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const TapeNode& n = nodes_[id];
      if (n.kind != OpKind::kLeaf) continue;
      std::vector<double> g = grads[id].empty()
                                  ? std::vector<double>(n.values.size(), 0.0)
                                  : std::move(grads[id]);
      Tensor t(n.shape, std::move(g));
      table.emplace(static_cast<int>(id), std::move(t));
    }
    return table;
  }

  // Re-executes every recorded op in order from the stored leaf values.
  void replay() {
    for (auto& n : nodes_) {
      if (n.kind == OpKind::kLeaf || n.kind == OpKind::kConst) continue;
      n.values = execute(n, collect(n));
    }
  }

 private:
  struct InView {
    const Shape* shape;
    const std::vector<double>* values;
    std::size_t rows() const { return shape->size() == 2 ? (*shape)[0] : 1; }
    std::size_t cols() const { return shape->empty() ? 1 : shape->back(); }
  };

  std::vector<TapeNode> nodes_;

  int push(TapeNode n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int intern_const(const Tensor& t) {
    TapeNode n;
    n.kind = OpKind::kConst;
    n.shape = t.shape;
    n.values = t.values;
    return push(std::move(n));
  }

  std::vector<InView> collect(const TapeNode& n) const {
    std::vector<InView> ins;
    ins.reserve(n.inputs.size());
    for (int id : n.inputs) {
      const TapeNode& in = nodes_[static_cast<std::size_t>(id)];
      ins.push_back({&in.shape, &in.values});
    }
    return ins;
  }

  Tensor unary(OpKind k, const Tensor& a) {
    TapeNode n;
    n.kind = k;
    n.shape = a.shape;
    return finish(std::move(n), {&a});
  }

  Tensor binary(OpKind k, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
      throw TensorError(std::string(op_name(k)) + ": shape mismatch " +
                        shape_str(a.shape) + " vs " + shape_str(b.shape));
    TapeNode n;
    n.kind = k;
    n.shape = a.shape;
    return finish(std::move(n), {&a, &b});
  }

  Tensor reduce(OpKind k, const Tensor& a) {
    TapeNode n;
    n.kind = k;
    n.shape = {1};
    return finish(std::move(n), {&a});
  }

  // Executes the op, checks finiteness, and records it when any input is
  // tracked. Untracked inputs of a recorded op are interned as constants so
  // the tape can be replayed from its own storage.
  Tensor finish(TapeNode n, std::initializer_list<const Tensor*> ins) {
    std::vector<InView> views;
    views.reserve(ins.size());
    for (const Tensor* t : ins) views.push_back({&t->shape, &t->values});
    std::vector<double> out = execute(n, views);
    for (double v : out)
      if (!std::isfinite(v))
        throw TensorError(std::string(op_name(n.kind)) + ": non-finite output");

    bool tracked = false;
    for (const Tensor* t : ins) tracked = tracked || t->tracked();
    if (!tracked) return Tensor(n.shape, std::move(out));

    for (const Tensor* t : ins) {
      int id = t->tracked() ? t->node : intern_const(*t);
      n.inputs.push_back(id);
      n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(id)].requires_grad;
    }
    Tensor result(n.shape, out);
    n.values = std::move(out);
    result.node = push(std::move(n));
    return result;
  }

  static std::vector<double> execute(const TapeNode& n, const std::vector<InView>& ins) {
    std::vector<double> out(shape_numel(n.shape), 0.0);
    switch (n.kind) {
      case OpKind::kMatmul: {
        const auto& A = *ins[0].values;
        const auto& B = *ins[1].values;
        const std::size_t m = (*ins[0].shape)[0], k = (*ins[0].shape)[1],
                          p = (*ins[1].shape)[1];
        for (std::size_t i = 0; i < m; ++i) {
          const double* arow = A.data() + i * k;
          double* crow = out.data() + i * p;
          for (std::size_t t = 0; t < k; ++t) {
            const double a = arow[t];
            const double* brow = B.data() + t * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += a * brow[j];
          }
        }
        break;
      }
      case OpKind::kAdd:
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = (*ins[0].values)[i] + (*ins[1].values)[i];
        break;
      case OpKind::kSub:
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = (*ins[0].values)[i] - (*ins[1].values)[i];
        break;
      case OpKind::kScalarMul:
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = n.scalar * (*ins[0].values)[i];
        break;
      case OpKind::kMul:
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = (*ins[0].values)[i] * (*ins[1].values)[i];
        break;
      case OpKind::kConcatCols: {
        const std::size_t rows = (*ins[0].shape)[0];
        const std::size_t ca = (*ins[0].shape)[1], cb = (*ins[1].shape)[1];
        for (std::size_t i = 0; i < rows; ++i) {
          std::copy_n(ins[0].values->data() + i * ca, ca, out.data() + i * (ca + cb));
          std::copy_n(ins[1].values->data() + i * cb, cb,
                      out.data() + i * (ca + cb) + ca);
        }
        break;
      }
      case OpKind::kRelu:
        for (std::size_t i = 0; i < out.size(); ++i) {
          const double x = (*ins[0].values)[i];
          out[i] = x > 0.0 ? x : 0.0;
        }
        break;
      case OpKind::kRowL2Normalize: {
        const std::size_t rows = ins[0].rows(), cols = ins[0].cols();
        for (std::size_t i = 0; i < rows; ++i) {
          const double* x = ins[0].values->data() + i * cols;
          double sq = 0.0;
          for (std::size_t j = 0; j < cols; ++j) sq += x[j] * x[j];
          const double norm = std::sqrt(sq);
          double* y = out.data() + i * cols;
          if (norm <= kNormEps) {
            std::copy_n(x, cols, y);
          } else {
            for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] / norm;
          }
        }
        break;
      }
      case OpKind::kSoftmaxGroups: {
        const auto& x = *ins[0].values;
        for (std::size_t g = 0; g + 1 < n.offsets.size(); ++g) {
          const std::size_t lo = n.offsets[g], hi = n.offsets[g + 1];
          double mx = x[lo];
          for (std::size_t i = lo + 1; i < hi; ++i) mx = std::max(mx, x[i]);
          double z = 0.0;
          for (std::size_t i = lo; i < hi; ++i) {
            out[i] = std::exp(x[i] - mx);
            z += out[i];
          }
          for (std::size_t i = lo; i < hi; ++i) out[i] /= z;
        }
        break;
      }
      case OpKind::kExp:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp((*ins[0].values)[i]);
        break;
      case OpKind::kLog:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log((*ins[0].values)[i]);
        break;
      case OpKind::kSum: {
        double s = 0.0;
        for (double v : *ins[0].values) s += v;
        out[0] = s;
        break;
      }
      case OpKind::kMean: {
        double s = 0.0;
        for (double v : *ins[0].values) s += v;
        out[0] = s / static_cast<double>(ins[0].values->size());
        break;
      }
      case OpKind::kSquaredL2Norm: {
        double s = 0.0;
        for (double v : *ins[0].values) s += v * v;
        out[0] = s;
        break;
      }
      case OpKind::kDropout: {
        const double keep = 1.0 - n.scalar;
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = (*ins[0].values)[i] * (*ins[1].values)[i] / keep;
        break;
      }
      case OpKind::kGatherRows: {
        const std::size_t cols = (*ins[0].shape)[1];
        for (std::size_t i = 0; i < n.indices.size(); ++i)
          std::copy_n(ins[0].values->data() + n.indices[i] * cols, cols,
                      out.data() + i * cols);
        break;
      }
      case OpKind::kScatterAddRows: {
        const std::size_t cols = (*ins[0].shape)[1];
        for (std::size_t i = 0; i < n.indices.size(); ++i) {
          const double* src = ins[0].values->data() + i * cols;
          double* dst = out.data() + n.indices[i] * cols;
          for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
        }
        break;
      }
      case OpKind::kCrossEntropy: {
        const auto& x = *ins[0].values;
        const std::size_t rows = (*ins[0].shape)[0], cols = (*ins[0].shape)[1];
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < rows; ++i) {
          if (!n.mask[i]) continue;
          const double* row = x.data() + i * cols;
          double mx = row[0];
          for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
          double z = 0.0;
          for (std::size_t j = 0; j < cols; ++j) z += std::exp(row[j] - mx);
          total += std::log(z) - (row[static_cast<std::size_t>(n.labels[i])] - mx);
          ++count;
        }
        out[0] = total / static_cast<double>(count);
        break;
      }
      case OpKind::kLeaf:
      case OpKind::kConst:
        break;  // never re-executed
    }
    return out;
  }

  template <typename GradOf>
  void accumulate(const TapeNode& n, const std::vector<double>& gout, GradOf&& grad_of) const {
    auto in_node = [&](std::size_t i) -> const TapeNode& {
      return nodes_[static_cast<std::size_t>(n.inputs[i])];
    };
    auto wants = [&](std::size_t i) { return in_node(i).requires_grad; };

    switch (n.kind) {
      case OpKind::kMatmul: {
        const TapeNode& an = in_node(0);
        const TapeNode& bn = in_node(1);
        const std::size_t m = an.shape[0], k = an.shape[1], p = bn.shape[1];
        if (wants(0)) {
          auto& ga = grad_of(n.inputs[0]);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t t = 0; t < k; ++t) {
              double s = 0.0;
              const double* grow = gout.data() + i * p;
              const double* brow = bn.values.data() + t * p;
              for (std::size_t j = 0; j < p; ++j) s += grow[j] * brow[j];
              ga[i * k + t] += s;
            }
        }
        if (wants(1)) {
          auto& gb = grad_of(n.inputs[1]);
          for (std::size_t i = 0; i < m; ++i) {
            const double* arow = an.values.data() + i * k;
            const double* grow = gout.data() + i * p;
            for (std::size_t t = 0; t < k; ++t) {
              const double a = arow[t];
              double* gbrow = gb.data() + t * p;
              for (std::size_t j = 0; j < p; ++j) gbrow[j] += a * grow[j];
            }
          }
        }
        break;
      }
      case OpKind::kAdd:
        for (std::size_t s = 0; s < 2; ++s)
          if (wants(s)) {
            auto& g = grad_of(n.inputs[s]);
            for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i];
          }
        break;
      case OpKind::kSub: {
        if (wants(0)) {
          auto& g = grad_of(n.inputs[0]);
          for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i];
        }
        if (wants(1)) {
          auto& g = grad_of(n.inputs[1]);
          for (std::size_t i = 0; i < gout.size(); ++i) g[i] -= gout[i];
        }
        break;
      }
      case OpKind::kScalarMul:
        if (wants(0)) {
          auto& g = grad_of(n.inputs[0]);
          for (std::size_t i = 0; i < gout.size(); ++i) g[i] += n.scalar * gout[i];
        }
        break;
      case OpKind::kMul: {
        const TapeNode& an = in_node(0);
        const TapeNode& bn = in_node(1);
        if (wants(0)) {
          auto& g = grad_of(n.inputs[0]);
          for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i] * bn.values[i];
        }
        if (wants(1)) {
          auto& g = grad_of(n.inputs[1]);
          for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i] * an.values[i];
        }
        break;
      }
      case OpKind::kConcatCols: {
        const std::size_t rows = n.shape[0];
        const std::size_t ca = in_node(0).shape[1], cb = in_node(1).shape[1];
        if (wants(0)) {
          auto& g = grad_of(n.inputs[0]);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < ca; ++j)
              g[i * ca + j] += gout[i * (ca + cb) + j];
        }
        if (wants(1)) {
          auto& g = grad_of(n.inputs[1]);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cb; ++j)
              g[i * cb + j] += gout[i * (ca + cb) + ca + j];
        }
        break;
      }
      case OpKind::kRelu:
        if (wants(0)) {
          const TapeNode& an = in_node(0);
          auto& g = grad_of(n.inputs[0]);
          for (std::size_t i = 0; i < gout.size(); ++i)
            if (an.values[i] > 0.0) g[i] += gout[i];
        }
        break;
      case OpKind::kRowL2Normalize: {
        if (!wants(0)) break;
        const TapeNode& an = in_node(0);
        auto& g = grad_of(n.inputs[0]);
        const std::size_t cols = an.shape.empty() ? 1 : an.shape.back();
        const std::size_t rows = an.values.size() / cols;
        for (std::size_t i = 0; i < rows; ++i) {
          const double* x = an.values.data() + i * cols;
          const double* y = n.values.data() + i * cols;
          const double* go = gout.data() + i * cols;
          double sq = 0.0;
          for (std::size_t j = 0; j < cols; ++j) sq += x[j] * x[j];
          const double norm = std::sqrt(sq);
          double* gi = g.data() + i * cols;
          if (norm <= kNormEps) {
            for (std::size_t j = 0; j < cols; ++j) gi[j] += go[j];
          } else {
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += y[j] * go[j];
            for (std::size_t j = 0; j < cols; ++j)
              gi[j] += (go[j] - y[j] * dot) / norm;
          }
        }
        break;
      }
      case OpKind::kSoftmaxGroups: {
        if (!wants(0)) break;
        auto& g = grad_of(n.inputs[0]);
        for (std::size_t s = 0; s + 1 < n.offsets.size(); ++s) {
          const std::size_t lo = n.offsets[s], hi = n.offsets[s + 1];
          double dot = 0.0;
          for (std::size_t i = lo; i < hi; ++i) dot += n.values[i] * gout[i];
          for (std::size_t i = lo; i < hi; ++i)
            g[i] += n.values[i] * (gout[i] - dot);
        }
        break;
      }
      case OpKind::kExp:
        if (wants(0)) {
          auto& g = grad_of(n.inputs[0]);
          for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i] * n.values[i];
        }
        break;
      case OpKind::kLog:
        if (wants(0)) {
          const TapeNode& an = in_node(0);
          auto& g = grad_of(n.inputs[0]);
          for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i] / an.values[i];
        }
        break;
      case OpKind::kSum:
        if (wants(0)) {
          auto& g = grad_of(n.inputs[0]);
          for (double& gi : g) gi += gout[0];
        }
        break;
      case OpKind::kMean:
        if (wants(0)) {
          auto& g = grad_of(n.inputs[0]);
          const double inv = 1.0 / static_cast<double>(g.size());
          for (double& gi : g) gi += gout[0] * inv;
        }
        break;
      case OpKind::kSquaredL2Norm:
        if (wants(0)) {
          const TapeNode& an = in_node(0);
          auto& g = grad_of(n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * gout[0] * an.values[i];
        }
        break;
      case OpKind::kDropout:
        if (wants(0)) {
          const TapeNode& mn = in_node(1);
          auto& g = grad_of(n.inputs[0]);
          const double keep = 1.0 - n.scalar;
          for (std::size_t i = 0; i < gout.size(); ++i)
            g[i] += gout[i] * mn.values[i] / keep;
        }
        break;
      case OpKind::kGatherRows:
        if (wants(0)) {
          auto& g = grad_of(n.inputs[0]);
          const std::size_t cols = n.shape[1];
          for (std::size_t i = 0; i < n.indices.size(); ++i) {
            const double* go = gout.data() + i * cols;
            double* gi = g.data() + n.indices[i] * cols;
            for (std::size_t j = 0; j < cols; ++j) gi[j] += go[j];
          }
        }
        break;
      case OpKind::kScatterAddRows:
        if (wants(0)) {
          auto& g = grad_of(n.inputs[0]);
          const std::size_t cols = n.shape[1];
          for (std::size_t i = 0; i < n.indices.size(); ++i) {
            const double* go = gout.data() + n.indices[i] * cols;
            double* gi = g.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) gi[j] += go[j];
          }
        }
        break;
      case OpKind::kCrossEntropy: {
        if (!wants(0)) break;
        const TapeNode& an = in_node(0);
        auto& g = grad_of(n.inputs[0]);
        const std::size_t rows = an.shape[0], cols = an.shape[1];
        std::size_t count = 0;
        for (std::size_t i = 0; i < rows; ++i) count += n.mask[i] ? 1 : 0;
        const double scale = gout[0] / static_cast<double>(count);
        for (std::size_t i = 0; i < rows; ++i) {
          if (!n.mask[i]) continue;
          const double* row = an.values.data() + i * cols;
          double mx = row[0];
          for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
          double z = 0.0;
          for (std::size_t j = 0; j < cols; ++j) z += std::exp(row[j] - mx);
          double* gi = g.data() + i * cols;
          for (std::size_t j = 0; j < cols; ++j) {
            const double p = std::exp(row[j] - mx) / z;
            gi[j] += scale * (p - (static_cast<std::size_t>(n.labels[i]) == j ? 1.0 : 0.0));
          }
        }
        break;
      }
      case OpKind::kLeaf:
      case OpKind::kConst:
        break;
    }
  }
};

}  // namespace dgcn

#pragma once

// Static computation graph with a reverse-mode tape.
//
// A graph is declared once (inputs with fixed shapes, parameter references,
// primitive ops) and then evaluated many times: bind inputs, run forward,
// optionally run backward from any scalar node. Nodes are stored in
// declaration order, which is a topological order by construction.

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "scpl/tensor.hpp"

namespace scpl {

/// Named, ordered collection of trainable tensors.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    auto [it, inserted] = params_.emplace(name, std::move(value));
    if (!inserted) throw Error("duplicate parameter '" + name + "'");
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  Tensor<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  const std::map<std::string, Tensor<T>>& all() const { return params_; }
  std::map<std::string, Tensor<T>>& all() { return params_; }

  std::vector<std::string> names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : params_)
      if (k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, v] : params_) out.add(k, v.template cast<U>());
    return out;
  }

  /// Overwrites values of existing parameters (shapes must match).
  void assign(const ParamStore& other) {
    for (const auto& [k, v] : other.params_) {
      auto& dst = get(k);
      if (dst.shape != v.shape) throw ShapeError("assign shape mismatch for '" + k + "'");
      dst.data = v.data;
    }
  }

 private:
  std::map<std::string, Tensor<T>> params_;
};

struct NodeId {
  std::size_t index = 0;
};

enum class Op {
  Input,
  Param,
  Const,
  MatMul,
  AddBias,
  Conv2d,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Relu,
  Tanh,
  Exp,
  Log,
  Square,
  Sum,
  Mean,
  SumRows,
  Minimum,
  Concat,
  Slice,
  Reshape,
  StopGrad,
};

const char* op_name(Op op);

enum class Wrt { Parameters, Inputs, Both };

struct BackwardOptions {
  Wrt wrt = Wrt::Parameters;
  /// Apply guided-backprop gating at every ReLU, not only the ones flagged at construction.
  bool guided = false;
  /// Restrict parameter gradients to names starting with one of these prefixes (empty = all).
  std::vector<std::string> param_prefixes;
};

template <typename T>
using Grads = std::map<std::string, Tensor<T>>;

template <typename T>
class Graph {
 public:
  explicit Graph(ParamStore<T>& params) : params_(&params) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  // ---- declaration ----
  NodeId input(const std::string& name, Shape shape) {
    for (const auto& n : nodes_)
      if ((n.op == Op::Input || n.op == Op::Param) && n.name == name)
        throw Error("duplicate graph leaf name '" + name + "'");
    Node n;
    n.op = Op::Input;
    n.name = name;
    n.shape = std::move(shape);
    n.value = Tensor<T>(n.shape);
    return push(std::move(n));
  }

  NodeId param(const std::string& name) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return it->second;
    Node n;
    n.op = Op::Param;
    n.name = name;
    n.param = &params_->get(name);
    n.shape = n.param->shape;
    NodeId id = push(std::move(n));
    param_nodes_[name] = id;
    return id;
  }

  NodeId constant(Tensor<T> value, const std::string& name = "const") {
    Node n;
    n.op = Op::Const;
    n.name = name;
    n.shape = value.shape;
    n.value = std::move(value);
    return push(std::move(n));
  }

  NodeId matmul(NodeId a, NodeId b) {
    const auto& sa = shape(a);
    const auto& sb = shape(b);
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
      throw ShapeError("matmul shape mismatch " + shape_str(sa) + " x " + shape_str(sb));
    return make(Op::MatMul, {sa[0], sb[1]}, a, b);
  }

  NodeId add_bias(NodeId x, NodeId bias) {
    const auto& sx = shape(x);
    const auto& sb = shape(bias);
    if (sx.size() != 2 || sb.size() != 1 || sb[0] != sx[1])
      throw ShapeError("add_bias shape mismatch " + shape_str(sx) + " + " + shape_str(sb));
    return make(Op::AddBias, sx, x, bias);
  }

  /// Valid-padding 2-D convolution. x: [B,C,H,W], w: [O,C,K,K], bias: [O].
  NodeId conv2d(NodeId x, NodeId w, NodeId bias, std::size_t stride = 1) {
    const auto& sx = shape(x);
    const auto& sw = shape(w);
    if (sx.size() != 4 || sw.size() != 4 || sw[1] != sx[1] || sw[2] != sw[3] ||
        shape(bias) != Shape{sw[0]} || stride == 0 || sx[2] < sw[2] || sx[3] < sw[3])
      throw ShapeError("conv2d shape mismatch input " + shape_str(sx) + " kernel " +
                       shape_str(sw));
    const std::size_t ho = (sx[2] - sw[2]) / stride + 1;
    const std::size_t wo = (sx[3] - sw[3]) / stride + 1;
    NodeId id = make(Op::Conv2d, {sx[0], sw[0], ho, wo}, x, w, bias);
    nodes_[id.index].i0 = stride;
    return id;
  }

  NodeId add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
  /// Hadamard product (one side may be a single-element tensor).
  NodeId mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }

  NodeId scale(NodeId x, T c) {
    NodeId id = make(Op::Scale, shape(x), x);
    nodes_[id.index].c = c;
    return id;
  }
  NodeId add_scalar(NodeId x, T c) {
    NodeId id = make(Op::AddScalar, shape(x), x);
    nodes_[id.index].c = c;
    return id;
  }

  NodeId relu(NodeId x, bool guided = false) {
    NodeId id = make(Op::Relu, shape(x), x);
    nodes_[id.index].guided = guided;
    return id;
  }
  NodeId tanh(NodeId x) { return make(Op::Tanh, shape(x), x); }
  NodeId exp(NodeId x) { return make(Op::Exp, shape(x), x); }
  NodeId log(NodeId x) { return make(Op::Log, shape(x), x); }
  NodeId square(NodeId x) { return make(Op::Square, shape(x), x); }

  NodeId sum(NodeId x) { return make(Op::Sum, {}, x); }
  NodeId mean(NodeId x) { return make(Op::Mean, {}, x); }
  /// [N,M] -> [N,1]
  NodeId sum_rows(NodeId x) {
    const auto& s = shape(x);
    if (s.size() != 2) throw ShapeError("sum_rows needs rank 2, got " + shape_str(s));
    return make(Op::SumRows, {s[0], 1}, x);
  }

  /// Elementwise minimum; ties route the gradient to the first operand.
  NodeId minimum(NodeId a, NodeId b) {
    if (shape(a) != shape(b))
      throw ShapeError("minimum shape mismatch " + shape_str(shape(a)) + " vs " +
                       shape_str(shape(b)));
    return make(Op::Minimum, shape(a), a, b);
  }

  /// Concatenate along axis 0 (any rank) or axis 1 (rank 2).
  NodeId concat(NodeId a, NodeId b, std::size_t axis) {
    Shape sa = shape(a);
    const Shape& sb = shape(b);
    check_axis(sa, axis, "concat");
    if (sa.size() != sb.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < sa.size(); ++i)
      if (i != axis && sa[i] != sb[i])
        throw ShapeError("concat shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    sa[axis] += sb[axis];
    NodeId id = make(Op::Concat, sa, a, b);
    nodes_[id.index].i0 = axis;
    return id;
  }

  /// Half-open range [begin, end) along axis 0 (any rank) or axis 1 (rank 2).
  NodeId slice(NodeId x, std::size_t axis, std::size_t begin, std::size_t end) {
    Shape s = shape(x);
    check_axis(s, axis, "slice");
    if (begin >= end || end > s[axis])
      throw ShapeError("slice range out of bounds for " + shape_str(s));
    s[axis] = end - begin;
    NodeId id = make(Op::Slice, s, x);
    auto& n = nodes_[id.index];
    n.i0 = axis;
    n.i1 = begin;
    return id;
  }

  NodeId reshape(NodeId x, Shape s) {
    if (numel(s) != numel(shape(x)))
      throw ShapeError("reshape " + shape_str(shape(x)) + " -> " + shape_str(s));
    return make(Op::Reshape, std::move(s), x);
  }

  /// [B, ...] -> [B, rest]
  NodeId flatten(NodeId x) {
    const auto& s = shape(x);
    return reshape(x, {s[0], numel(s) / s[0]});
  }

  NodeId stop_gradient(NodeId x) { return make(Op::StopGrad, shape(x), x); }

  void set_name(NodeId id, std::string name) { nodes_.at(id.index).name = std::move(name); }

  // ---- evaluation ----
  void bind(const std::string& name, const Tensor<T>& value) {
    Node& n = find_input(name);
    if (value.shape != n.shape)
      throw ShapeError("input '" + name + "' expects shape " + shape_str(n.shape) + ", got " +
                       shape_str(value.shape));
    n.value.data = value.data;
    n.bound = true;
  }

  void run() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.op == Op::Input && !n.bound)
        throw Error("input '" + n.name + "' not bound before forward");
      eval(n);
      const Tensor<T>& v = val(n);
      for (T x : v.data) {
        if (!std::isfinite(x))
          throw NumericError("non-finite value in node '" + n.name + "' (#" +
                             std::to_string(i) + ", " + op_name(n.op) + ")");
      }
    }
    ran_ = true;
  }

  void forward(const std::map<std::string, Tensor<T>>& inputs) {
    for (const auto& [k, v] : inputs) bind(k, v);
    run();
  }

  Grads<T> backward(NodeId root, const BackwardOptions& opts = {}) {
    if (!ran_) throw Error("backward requested before forward");
    Node& r = nodes_.at(root.index);
    if (!r.shape.empty())
      throw ShapeError("backward root '" + r.name + "' must be a scalar, has shape " +
                       shape_str(r.shape));
    const bool want_params = opts.wrt != Wrt::Inputs;
    const bool want_inputs = opts.wrt != Wrt::Parameters;
    for (std::size_t i = 0; i <= root.index; ++i) {
      Node& n = nodes_[i];
      if (n.op == Op::Param) {
        n.needs_grad = want_params && matches(n.name, opts.param_prefixes);
      } else if (n.op == Op::Input) {
        n.needs_grad = want_inputs;
      } else if (n.op == Op::Const || n.op == Op::StopGrad) {
        n.needs_grad = false;
      } else {
        n.needs_grad = false;
        for (int p : n.parents())
          if (p >= 0 && nodes_[p].needs_grad) n.needs_grad = true;
      }
      if (n.needs_grad) {
        if (n.grad.shape != n.shape || n.grad.size() != numel(n.shape))
          n.grad = Tensor<T>(n.shape);
        else
          n.grad.fill(T{0});
      }
    }
    if (r.needs_grad) r.grad.data[0] = T{1};
    for (std::size_t i = root.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad) continue;
      propagate(n, opts.guided);
    }
    Grads<T> out;
    for (std::size_t i = 0; i <= root.index; ++i) {
      const Node& n = nodes_[i];
      if ((n.op == Op::Param || n.op == Op::Input) && n.needs_grad) {
        for (T x : n.grad.data) {
          if (!std::isfinite(x))
            throw NumericError("non-finite gradient at '" + n.name + "'");
        }
        out[n.name] = n.grad;
      }
    }
    return out;
  }

  const Tensor<T>& value(NodeId id) const { return val(nodes_.at(id.index)); }
  const Shape& shape(NodeId id) const { return nodes_.at(id.index).shape; }
  const std::string& name(NodeId id) const { return nodes_.at(id.index).name; }
  std::size_t size() const { return nodes_.size(); }
  bool has_run() const { return ran_; }

  /// Parents of a node (-1 for unused slots); exposed for invariant checks.
  std::vector<int> parents_of(NodeId id) const {
    auto p = nodes_.at(id.index).parents();
    return {p.begin(), p.end()};
  }

 private:
  using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapR = Eigen::Map<MatR>;
  using CMapR = Eigen::Map<const MatR>;

  struct Node {
    Op op = Op::Const;
    std::string name;
    Shape shape;
    int p0 = -1, p1 = -1, p2 = -1;
    T c = T{0};
    std::size_t i0 = 0, i1 = 0;
    bool guided = false;
    bool bound = false;
    bool needs_grad = false;
    Tensor<T>* param = nullptr;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<T> cols;     // conv: im2col matrix [C*K*K, B*P]
    std::vector<T> scratch;  // conv: [O, B*P] staging
    std::array<int, 3> parents() const { return {p0, p1, p2}; }
  };

  static bool matches(const std::string& name, const std::vector<std::string>& prefixes) {
    if (prefixes.empty()) return true;
    for (const auto& p : prefixes)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  }

  static void check_axis(const Shape& s, std::size_t axis, const char* what) {
    if (axis > 1 || s.empty() || (axis == 1 && s.size() != 2))
      throw ShapeError(std::string(what) + ": unsupported axis " + std::to_string(axis) +
                       " for shape " + shape_str(s));
  }

  NodeId push(Node n) {
    if (n.name.empty() || n.name == "const") n.name = std::string(op_name(n.op)) + "#" + std::to_string(nodes_.size());
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
  }

  NodeId make(Op op, Shape s, NodeId a, NodeId b = NodeId{~std::size_t{0}},
              NodeId c = NodeId{~std::size_t{0}}) {
    Node n;
    n.op = op;
    n.shape = std::move(s);
    n.p0 = static_cast<int>(a.index);
    n.p1 = b.index == ~std::size_t{0} ? -1 : static_cast<int>(b.index);
    n.p2 = c.index == ~std::size_t{0} ? -1 : static_cast<int>(c.index);
    n.value = Tensor<T>(n.shape);
    return push(std::move(n));
  }

  NodeId binary(Op op, NodeId a, NodeId b) {
    const auto& sa = shape(a);
    const auto& sb = shape(b);
    if (sa == sb) return make(op, sa, a, b);
    if (numel(sb) == 1) return make(op, sa, a, b);
    if (numel(sa) == 1) return make(op, sb, a, b);
    throw ShapeError(std::string(op_name(op)) + " shape mismatch " + shape_str(sa) + " vs " +
                     shape_str(sb));
  }

  Node& find_input(const std::string& name) {
    for (auto& n : nodes_)
      if (n.op == Op::Input && n.name == name) return n;
    throw Error("graph has no input named '" + name + "'");
  }

  const Tensor<T>& val(const Node& n) const { return n.param ? *n.param : n.value; }
  const Tensor<T>& pv(int i) const { return val(nodes_[i]); }

  void eval(Node& n) {
    T* out = n.value.ptr();
    const std::size_t size = n.value.size();
    switch (n.op) {
      case Op::Input:
      case Op::Param:
      case Op::Const:
        return;
      case Op::MatMul: {
        const auto& a = pv(n.p0);
        const auto& b = pv(n.p1);
        MapR(out, a.shape[0], b.shape[1]).noalias() =
            CMapR(a.ptr(), a.shape[0], a.shape[1]) * CMapR(b.ptr(), b.shape[0], b.shape[1]);
        return;
      }
      case Op::AddBias: {
        const auto& x = pv(n.p0);
        const auto& b = pv(n.p1);
        const std::size_t rows = x.shape[0], cols = x.shape[1];
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + b[c];
        return;
      }
      case Op::Conv2d:
        conv_forward(n);
        return;
      case Op::Add:
      case Op::Sub:
      case Op::Mul: {
        const auto& a = pv(n.p0);
        const auto& b = pv(n.p1);
        const bool sa = a.size() == 1 && size != 1;
        const bool sb = b.size() == 1 && size != 1;
        for (std::size_t i = 0; i < size; ++i) {
          const T x = a[sa ? 0 : i];
          const T y = b[sb ? 0 : i];
          out[i] = n.op == Op::Add ? x + y : n.op == Op::Sub ? x - y : x * y;
        }
        return;
      }
      case Op::Scale: {
        const auto& x = pv(n.p0);
        for (std::size_t i = 0; i < size; ++i) out[i] = x[i] * n.c;
        return;
      }
      case Op::AddScalar: {
        const auto& x = pv(n.p0);
        for (std::size_t i = 0; i < size; ++i) out[i] = x[i] + n.c;
        return;
      }
      case Op::Relu: {
        const auto& x = pv(n.p0);
        for (std::size_t i = 0; i < size; ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
        return;
      }
      case Op::Tanh: {
        const auto& x = pv(n.p0);
        for (std::size_t i = 0; i < size; ++i) out[i] = std::tanh(x[i]);
        return;
      }
      case Op::Exp: {
        const auto& x = pv(n.p0);
        for (std::size_t i = 0; i < size; ++i) out[i] = std::exp(x[i]);
        return;
      }
      case Op::Log: {
        const auto& x = pv(n.p0);
        for (std::size_t i = 0; i < size; ++i) out[i] = std::log(x[i]);
        return;
      }
      case Op::Square: {
        const auto& x = pv(n.p0);
        for (std::size_t i = 0; i < size; ++i) out[i] = x[i] * x[i];
        return;
      }
      case Op::Sum:
      case Op::Mean: {
        const auto& x = pv(n.p0);
        T acc{0};
        for (T v : x.data) acc += v;
        out[0] = n.op == Op::Sum ? acc : acc / static_cast<T>(x.size());
        return;
      }
      case Op::SumRows: {
        const auto& x = pv(n.p0);
        const std::size_t rows = x.shape[0], cols = x.shape[1];
        for (std::size_t r = 0; r < rows; ++r) {
          T acc{0};
          for (std::size_t c = 0; c < cols; ++c) acc += x[r * cols + c];
          out[r] = acc;
        }
        return;
      }
      case Op::Minimum: {
        const auto& a = pv(n.p0);
        const auto& b = pv(n.p1);
        for (std::size_t i = 0; i < size; ++i) out[i] = a[i] <= b[i] ? a[i] : b[i];
        return;
      }
      case Op::Concat: {
        const auto& a = pv(n.p0);
        const auto& b = pv(n.p1);
        if (n.i0 == 0) {
          std::copy(a.data.begin(), a.data.end(), out);
          std::copy(b.data.begin(), b.data.end(), out + a.size());
        } else {
          const std::size_t rows = a.shape[0], ca = a.shape[1], cb = b.shape[1];
          for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(a.ptr() + r * ca, ca, out + r * (ca + cb));
            std::copy_n(b.ptr() + r * cb, cb, out + r * (ca + cb) + ca);
          }
        }
        return;
      }
      case Op::Slice: {
        const auto& x = pv(n.p0);
        if (n.i0 == 0) {
          const std::size_t inner = x.size() / x.shape[0];
          std::copy_n(x.ptr() + n.i1 * inner, size, out);
        } else {
          const std::size_t rows = x.shape[0], cx = x.shape[1], co = n.shape[1];
          for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.ptr() + r * cx + n.i1, co, out + r * co);
        }
        return;
      }
      case Op::Reshape:
      case Op::StopGrad: {
        const auto& x = pv(n.p0);
        std::copy(x.data.begin(), x.data.end(), out);
        return;
      }
    }
  }

  void conv_geometry(const Node& n, std::size_t& B, std::size_t& C, std::size_t& H,
                     std::size_t& W, std::size_t& O, std::size_t& K, std::size_t& Ho,
                     std::size_t& Wo) const {
    const auto& x = pv(n.p0);
    const auto& w = pv(n.p1);
    B = x.shape[0];
    C = x.shape[1];
    H = x.shape[2];
    W = x.shape[3];
    O = w.shape[0];
    K = w.shape[2];
    Ho = n.shape[2];
    Wo = n.shape[3];
  }

  void conv_forward(Node& n) {
    std::size_t B, C, H, W, O, K, Ho, Wo;
    conv_geometry(n, B, C, H, W, O, K, Ho, Wo);
    const std::size_t s = n.i0, P = Ho * Wo, ckk = C * K * K, cols_w = B * P;
    const auto& x = pv(n.p0);
    const auto& w = pv(n.p1);
    const auto& bias = pv(n.p2);
    n.cols.resize(ckk * cols_w);
    n.scratch.resize(O * cols_w);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ki = 0; ki < K; ++ki)
        for (std::size_t kj = 0; kj < K; ++kj) {
          T* row = n.cols.data() + ((c * K + ki) * K + kj) * cols_w;
          for (std::size_t b = 0; b < B; ++b) {
            const T* img = x.ptr() + (b * C + c) * H * W;
            T* dst = row + b * P;
            for (std::size_t oy = 0; oy < Ho; ++oy) {
              const T* src = img + (oy * s + ki) * W + kj;
              for (std::size_t ox = 0; ox < Wo; ++ox) dst[oy * Wo + ox] = src[ox * s];
            }
          }
        }
    MapR(n.scratch.data(), O, cols_w).noalias() =
        CMapR(w.ptr(), O, ckk) * CMapR(n.cols.data(), ckk, cols_w);
    T* out = n.value.ptr();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < O; ++o) {
        const T* src = n.scratch.data() + o * cols_w + b * P;
        T* dst = out + (b * O + o) * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + bias[o];
      }
  }

  void conv_backward(Node& n) {
    std::size_t B, C, H, W, O, K, Ho, Wo;
    conv_geometry(n, B, C, H, W, O, K, Ho, Wo);
    const std::size_t s = n.i0, P = Ho * Wo, ckk = C * K * K, cols_w = B * P;
    const auto& w = pv(n.p1);
    T* G = n.scratch.data();
    const T* gout = n.grad.ptr();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < O; ++o)
        std::copy_n(gout + (b * O + o) * P, P, G + o * cols_w + b * P);
    CMapR gmat(G, O, cols_w);
    Node& nw = nodes_[n.p1];
    if (nw.needs_grad)
      MapR(nw.grad.ptr(), O, ckk).noalias() += gmat * CMapR(n.cols.data(), ckk, cols_w).transpose();
    Node& nb = nodes_[n.p2];
    if (nb.needs_grad)
      for (std::size_t o = 0; o < O; ++o) {
        T acc{0};
        for (std::size_t j = 0; j < cols_w; ++j) acc += G[o * cols_w + j];
        nb.grad[o] += acc;
      }
    Node& nx = nodes_[n.p0];
    if (!nx.needs_grad) return;
    MatR dcols = CMapR(w.ptr(), O, ckk).transpose() * gmat;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ki = 0; ki < K; ++ki)
        for (std::size_t kj = 0; kj < K; ++kj) {
          const T* row = dcols.data() + ((c * K + ki) * K + kj) * cols_w;
          for (std::size_t b = 0; b < B; ++b) {
            T* img = nx.grad.ptr() + (b * C + c) * H * W;
            const T* src = row + b * P;
            for (std::size_t oy = 0; oy < Ho; ++oy) {
              T* dst = img + (oy * s + ki) * W + kj;
              for (std::size_t ox = 0; ox < Wo; ++ox) dst[ox * s] += src[oy * Wo + ox];
            }
          }
        }
  }

  void propagate(Node& n, bool guided_all) {
    const T* g = n.grad.ptr();
    const std::size_t size = n.grad.size();
    auto parent = [&](int i) -> Node* {
      if (i < 0) return nullptr;
      Node& p = nodes_[i];
      return p.needs_grad ? &p : nullptr;
    };
    switch (n.op) {
      case Op::Input:
      case Op::Param:
      case Op::Const:
      case Op::StopGrad:
        return;
      case Op::MatMul: {
        const auto& a = pv(n.p0);
        const auto& b = pv(n.p1);
        const std::size_t N = a.shape[0], Kd = a.shape[1], M = b.shape[1];
        CMapR gm(g, N, M);
        if (Node* pa = parent(n.p0))
          MapR(pa->grad.ptr(), N, Kd).noalias() += gm * CMapR(b.ptr(), Kd, M).transpose();
        if (Node* pb = parent(n.p1))
          MapR(pb->grad.ptr(), Kd, M).noalias() += CMapR(a.ptr(), N, Kd).transpose() * gm;
        return;
      }
      case Op::AddBias: {
        const std::size_t rows = n.shape[0], cols = n.shape[1];
        if (Node* px = parent(n.p0))
          for (std::size_t i = 0; i < size; ++i) px->grad[i] += g[i];
        if (Node* pb = parent(n.p1))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) pb->grad[c] += g[r * cols + c];
        return;
      }
      case Op::Conv2d:
        conv_backward(n);
        return;
      case Op::Add:
      case Op::Sub:
      case Op::Mul: {
        const auto& a = pv(n.p0);
        const auto& b = pv(n.p1);
        const bool sa = a.size() == 1 && size != 1;
        const bool sb = b.size() == 1 && size != 1;
        if (Node* pa = parent(n.p0))
          for (std::size_t i = 0; i < size; ++i) {
            const T d = n.op == Op::Mul ? g[i] * b[sb ? 0 : i] : g[i];
            pa->grad[sa ? 0 : i] += d;
          }
        if (Node* pb = parent(n.p1))
          for (std::size_t i = 0; i < size; ++i) {
            const T d = n.op == Op::Mul ? g[i] * a[sa ? 0 : i] : n.op == Op::Sub ? -g[i] : g[i];
            pb->grad[sb ? 0 : i] += d;
          }
        return;
      }
      case Op::Scale:
        if (Node* p = parent(n.p0))
          for (std::size_t i = 0; i < size; ++i) p->grad[i] += g[i] * n.c;
        return;
      case Op::AddScalar:
      case Op::Reshape:
        if (Node* p = parent(n.p0))
          for (std::size_t i = 0; i < size; ++i) p->grad[i] += g[i];
        return;
      case Op::Relu: {
        const auto& x = pv(n.p0);
        const bool guided = guided_all || n.guided;
        if (Node* p = parent(n.p0))
          for (std::size_t i = 0; i < size; ++i)
            if (x[i] > T{0} && (!guided || g[i] > T{0})) p->grad[i] += g[i];
        return;
      }
      case Op::Tanh:
        if (Node* p = parent(n.p0))
          for (std::size_t i = 0; i < size; ++i)
            p->grad[i] += g[i] * (T{1} - n.value[i] * n.value[i]);
        return;
      case Op::Exp:
        if (Node* p = parent(n.p0))
          for (std::size_t i = 0; i < size; ++i) p->grad[i] += g[i] * n.value[i];
        return;
      case Op::Log: {
        const auto& x = pv(n.p0);
        if (Node* p = parent(n.p0))
          for (std::size_t i = 0; i < size; ++i) p->grad[i] += g[i] / x[i];
        return;
      }
      case Op::Square: {
        const auto& x = pv(n.p0);
        if (Node* p = parent(n.p0))
          for (std::size_t i = 0; i < size; ++i) p->grad[i] += T{2} * x[i] * g[i];
        return;
      }
      case Op::Sum:
      case Op::Mean:
        if (Node* p = parent(n.p0)) {
          const T d = n.op == Op::Sum ? g[0] : g[0] / static_cast<T>(p->grad.size());
          for (auto& v : p->grad.data) v += d;
        }
        return;
      case Op::SumRows:
        if (Node* p = parent(n.p0)) {
          const std::size_t cols = p->shape[1];
          for (std::size_t r = 0; r < n.shape[0]; ++r)
            for (std::size_t c = 0; c < cols; ++c) p->grad[r * cols + c] += g[r];
        }
        return;
      case Op::Minimum: {
        const auto& a = pv(n.p0);
        const auto& b = pv(n.p1);
        Node* pa = parent(n.p0);
        Node* pb = parent(n.p1);
        for (std::size_t i = 0; i < size; ++i) {
          if (a[i] <= b[i]) {
            if (pa) pa->grad[i] += g[i];
          } else if (pb) {
            pb->grad[i] += g[i];
          }
        }
        return;
      }
      case Op::Concat: {
        Node* pa = parent(n.p0);
        Node* pb = parent(n.p1);
        const std::size_t na = numel(nodes_[n.p0].shape);
        if (n.i0 == 0) {
          if (pa)
            for (std::size_t i = 0; i < na; ++i) pa->grad[i] += g[i];
          if (pb)
            for (std::size_t i = na; i < size; ++i) pb->grad[i - na] += g[i];
        } else {
          const std::size_t rows = n.shape[0], ca = nodes_[n.p0].shape[1], co = n.shape[1],
                            cb = co - ca;
          for (std::size_t r = 0; r < rows; ++r) {
            if (pa)
              for (std::size_t c = 0; c < ca; ++c) pa->grad[r * ca + c] += g[r * co + c];
            if (pb)
              for (std::size_t c = 0; c < cb; ++c) pb->grad[r * cb + c] += g[r * co + ca + c];
          }
        }
        return;
      }
      case Op::Slice: {
        Node* p = parent(n.p0);
        if (!p) return;
        if (n.i0 == 0) {
          const std::size_t inner = numel(p->shape) / p->shape[0];
          for (std::size_t i = 0; i < size; ++i) p->grad[n.i1 * inner + i] += g[i];
        } else {
          const std::size_t rows = n.shape[0], co = n.shape[1], cx = p->shape[1];
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < co; ++c) p->grad[r * cx + n.i1 + c] += g[r * co + c];
        }
        return;
      }
    }
  }

  ParamStore<T>* params_;
  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_nodes_;
  bool ran_ = false;
};

/// Binds `inputs`, evaluates the whole graph and returns the requested nodes by name.
template <typename T>
std::map<std::string, Tensor<T>> forward_eval(Graph<T>& graph,
                                              const std::map<std::string, Tensor<T>>& inputs,
                                              const std::map<std::string, NodeId>& outputs) {
  graph.forward(inputs);
  std::map<std::string, Tensor<T>> out;
  for (const auto& [k, id] : outputs) out[k] = graph.value(id);
  return out;
}

template <typename T>
Grads<T> backward_grad(Graph<T>& graph, NodeId scalar_node, const BackwardOptions& opts = {}) {
  return graph.backward(scalar_node, opts);
}

}  // namespace scpl

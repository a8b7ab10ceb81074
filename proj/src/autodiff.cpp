#include "ellip/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ellip::ad {

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw ShapeError("tensor data size does not match shape");
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(std::size_t rows, std::size_t cols) {
  if (rows * cols != data_.size()) throw ShapeError("reshape must preserve the element count");
  rows_ = rows;
  cols_ = cols;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Exp: return "exp";
    case Op::Sqrt: return "sqrt";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Atan: return "atan";
    case Op::Relu: return "relu";
    case Op::Square: return "square";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::SmoothPositive: return "smooth_positive";
    case Op::MatMul: return "matmul";
    case Op::GroupMatMul: return "group_matmul";
    case Op::ReduceMean: return "reduce_mean";
    case Op::ReduceSum: return "reduce_sum";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::AffineNorm: return "affine_norm";
    case Op::Reshape: return "reshape";
    case Op::kCount: break;
  }
  return "?";
}

// ---------------------------------------------------------------- kernels

void matmul_into(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw ShapeError("matmul inner dimensions differ");
  if (out.rows() != m || out.cols() != n) out = Tensor(m, n);
  else out.fill(0.0);
  const double* __restrict pa = a.data();
  const double* __restrict pb = b.data();
  double* __restrict po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict row = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      const double* __restrict brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
}

namespace {

Tensor transpose(const Tensor& t) {
  Tensor out(t.cols(), t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out(c, r) = t(r, c);
  return out;
}

// out += a^T g   (a: m x k, g: m x n, out: k x n), summed over rows in order.
void accumulate_at_g(const Tensor& a, const Tensor& g, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = g.cols();
  const double* __restrict pa = a.data();
  const double* __restrict pg = g.data();
  double* __restrict po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* __restrict grow = pg + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      double* __restrict orow = po + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * grow[j];
    }
  }
}

// out += a b  with raw pointers (a: m x k, b: k x n).
void accumulate_ab(const double* __restrict pa, const double* __restrict pb, double* __restrict po,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict row = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      const double* __restrict brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
}

// out += a b^T  (a: m x k, b: n x k); dot products in fixed index order.
void accumulate_abt(const double* __restrict pa, const double* __restrict pb,
                    double* __restrict po, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += pa[i * k + p] * pb[j * k + p];
      po[i * n + j] += s;
    }
}

// out += a^T b  (a: m x k, b: m x n, out: k x n).
void accumulate_atb(const double* __restrict pa, const double* __restrict pb,
                    double* __restrict po, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      for (std::size_t j = 0; j < n; ++j) po[p * n + j] += s * pb[i * n + j];
    }
}

std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  std::ostringstream os;
  os << op << ": incompatible extents " << a << " and " << b;
  throw ShapeError(os.str());
}

template <class F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, const char* op, F f) {
  const std::size_t rows = broadcast_dim(a.rows(), b.rows(), op);
  const std::size_t cols = broadcast_dim(a.cols(), b.cols(), op);
  Tensor out(rows, cols);
  if (a.same_shape(b)) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t ra = a.rows() == 1 ? 0 : r, rb = b.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t ca = a.cols() == 1 ? 0 : c, cb = b.cols() == 1 ? 0 : c;
      out(r, c) = f(a(ra, ca), b(rb, cb));
    }
  }
  return out;
}

// Visits every output element with the matching (broadcast) input offsets.
template <class F>
void broadcast_visit(const Tensor& out, const Tensor& a, const Tensor& b, F f) {
  if (a.same_shape(b) && a.same_shape(out)) {
    for (std::size_t i = 0; i < out.size(); ++i) f(i, i, i);
    return;
  }
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const std::size_t ra = a.rows() == 1 ? 0 : r, rb = b.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < out.cols(); ++c) {
      const std::size_t ca = a.cols() == 1 ? 0 : c, cb = b.cols() == 1 ? 0 : c;
      f(r * out.cols() + c, ra * a.cols() + ca, rb * b.cols() + cb);
    }
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

Tape& same_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw std::logic_error("operands belong to different tapes");
  return *a.tape();
}

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw std::logic_error("operand is not attached to a tape");
  return *a.tape();
}

}  // namespace

// ---------------------------------------------------------------- Var / Tape

const Tensor& Var::value() const { return tape_->value(*this); }
const Tensor& Var::grad() const { return tape_->grad(*this); }
double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("item() on a non-scalar node");
  return v[0];
}

Var Tape::constant(Tensor value) { return push(Op::Leaf, std::move(value), {}, 0.0, 0); }

Var Tape::variable(Tensor value) {
  Var v = push(Op::Leaf, std::move(value), {}, 0.0, 0);
  nodes_.back().needs_grad = true;
  return v;
}

Var Tape::push(Op op, Tensor value, std::initializer_list<Var> inputs, double scalar,
               std::size_t aux, Tensor saved) {
  Node node;
  node.op = op;
  node.scalar = scalar;
  node.aux = aux;
  node.value = std::move(value);
  node.saved = std::move(saved);
  for (Var v : inputs) {
    if (v.tape() != this || v.id() >= nodes_.size())
      throw std::logic_error("node input must be an earlier node on the same tape");
    node.in[node.n_in++] = v.id();
    node.needs_grad = node.needs_grad || nodes_[v.id()].needs_grad;
  }
  nodes_.push_back(std::move(node));
  ++counts_[static_cast<std::size_t>(op)];
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id()).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.size() == 0 && n.value.size() != 0) {
    // never reached by backward: zero adjoint
    static thread_local Tensor zero;
    zero = Tensor(n.value.rows(), n.value.cols());
    return zero;
  }
  return n.grad;
}

void Tape::clear() {
  nodes_.clear();
  counts_ = {};
}

Tensor& Tape::grad_of(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value))
    n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::logic_error("backward root belongs to another tape");
  if (nodes_.at(root.id()).value.size() != 1) throw ShapeError("backward root must be 1x1");
  for (Node& n : nodes_) n.grad = Tensor();
  grad_of(root.id())[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.needs_grad || n.op == Op::Leaf || n.grad.size() == 0) continue;
    backprop_node(n);
  }
}

void Tape::backprop_node(const Node& node) {
  const Tensor& g = node.grad;
  const Tensor& out = node.value;
  auto wants = [&](int k) { return nodes_[node.in[k]].needs_grad; };
  auto in_value = [&](int k) -> const Tensor& { return nodes_[node.in[k]].value; };

  switch (node.op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const bool wa = wants(0), wb = wants(1);
      Tensor* ga = wa ? &grad_of(node.in[0]) : nullptr;
      Tensor* gb = wb ? &grad_of(node.in[1]) : nullptr;
      const Op op = node.op;
      broadcast_visit(out, a, b, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        const double go = g[o];
        switch (op) {
          case Op::Add:
            if (ga) (*ga)[ia] += go;
            if (gb) (*gb)[ib] += go;
            break;
          case Op::Sub:
            if (ga) (*ga)[ia] += go;
            if (gb) (*gb)[ib] -= go;
            break;
          case Op::Mul:
            if (ga) (*ga)[ia] += go * b[ib];
            if (gb) (*gb)[ib] += go * a[ia];
            break;
          default:
            if (ga) (*ga)[ia] += go / b[ib];
            if (gb) (*gb)[ib] -= go * out[o] / b[ib];
            break;
        }
      });
      break;
    }
    case Op::Reshape: {
      Tensor& ga = grad_of(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case Op::Neg:
    case Op::Exp:
    case Op::Sqrt:
    case Op::Sin:
    case Op::Cos:
    case Op::Atan:
    case Op::Relu:
    case Op::Square:
    case Op::Scale:
    case Op::AddScalar:
    case Op::SmoothPositive: {
      const Tensor& a = in_value(0);
      Tensor& ga = grad_of(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = 0.0;
        switch (node.op) {
          case Op::Neg: d = -1.0; break;
          case Op::Exp: d = out[i]; break;
          case Op::Sqrt: d = 0.5 / out[i]; break;
          case Op::Sin: d = std::cos(a[i]); break;
          case Op::Cos: d = -std::sin(a[i]); break;
          case Op::Atan: d = 1.0 / (1.0 + a[i] * a[i]); break;
          case Op::Relu: d = a[i] > 0.0 ? 1.0 : 0.0; break;
          case Op::Square: d = 2.0 * a[i]; break;
          case Op::Scale: d = node.scalar; break;
          case Op::AddScalar: d = 1.0; break;
          case Op::SmoothPositive: d = a[i] >= 1.0 ? 1.0 : out[i]; break;
          default: break;
        }
        ga[i] += g[i] * d;
      }
      break;
    }
    case Op::MatMul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      if (wants(0)) {
        const Tensor bt = transpose(b);
        Tensor& ga = grad_of(node.in[0]);
        accumulate_ab(g.data(), bt.data(), ga.data(), g.rows(), g.cols(), bt.cols());
      }
      if (wants(1)) accumulate_at_g(a, g, grad_of(node.in[1]));
      break;
    }
    case Op::GroupMatMul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const std::size_t groups = node.aux;
      const bool bt = node.scalar != 0.0;
      const std::size_t m = a.rows() / groups, k = a.cols();
      const std::size_t n = out.cols();
      Tensor* ga = wants(0) ? &grad_of(node.in[0]) : nullptr;
      Tensor* gb = wants(1) ? &grad_of(node.in[1]) : nullptr;
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const double* pa = a.data() + gi * m * k;
        const double* pg = g.data() + gi * m * n;
        if (bt) {
          // out_g = a_g b_g^T, b_g: n x k
          const double* pb = b.data() + gi * n * k;
          if (ga) accumulate_ab(pg, pb, ga->data() + gi * m * k, m, n, k);
          if (gb) accumulate_atb(pg, pa, gb->data() + gi * n * k, m, n, k);
        } else {
          // out_g = a_g b_g, b_g: k x n
          const double* pb = b.data() + gi * k * n;
          if (ga) accumulate_abt(pg, pb, ga->data() + gi * m * k, m, n, k);
          if (gb) accumulate_atb(pa, pg, gb->data() + gi * k * n, m, k, n);
        }
      }
      break;
    }
    case Op::ReduceMean:
    case Op::ReduceSum: {
      Tensor& ga = grad_of(node.in[0]);
      const double d =
          node.op == Op::ReduceMean ? g[0] / static_cast<double>(ga.size()) : g[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d;
      break;
    }
    case Op::SoftmaxRows: {
      Tensor& ga = grad_of(node.in[0]);
      const std::size_t cols = out.cols();
      for (std::size_t r = 0; r < out.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g(r, c) * out(r, c);
        for (std::size_t c = 0; c < cols; ++c) ga(r, c) += out(r, c) * (g(r, c) - dot);
      }
      break;
    }
    case Op::AffineNorm: {
      // saved: x_hat (rows x cols) followed by one extra column of 1/std.
      const Tensor& gamma = in_value(1);
      const std::size_t rows = out.rows(), cols = out.cols();
      const Tensor& saved = node.saved;
      const std::size_t sc = cols + 1;
      if (wants(0)) {
        Tensor& gx = grad_of(node.in[0]);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xh = saved.data() + r * sc;
          const double inv_std = xh[cols];
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const double dxh = g(r, c) * gamma[c];
            mean_d += dxh;
            mean_dx += dxh * xh[c];
          }
          mean_d /= static_cast<double>(cols);
          mean_dx /= static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            const double dxh = g(r, c) * gamma[c];
            gx(r, c) += inv_std * (dxh - mean_d - xh[c] * mean_dx);
          }
        }
      }
      if (wants(1)) {
        Tensor& gg = grad_of(node.in[1]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gg[c] += g(r, c) * saved(r, c);
      }
      if (wants(2)) {
        Tensor& gb = grad_of(node.in[2]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gb[c] += g(r, c);
      }
      break;
    }
    case Op::Leaf:
    case Op::kCount:
      break;
  }
}

// ---------------------------------------------------------------- ops

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.push(Op::Add, broadcast_apply(a.value(), b.value(), "add", std::plus<>{}), {a, b});
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.push(Op::Sub, broadcast_apply(a.value(), b.value(), "sub", std::minus<>{}), {a, b});
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.push(Op::Mul, broadcast_apply(a.value(), b.value(), "mul", std::multiplies<>{}),
                {a, b});
}

Var div(Var a, Var b) {
  Tape& t = same_tape(a, b);
  for (double v : b.value().values())
    if (v == 0.0) throw DomainError("div: zero denominator");
  return t.push(Op::Div, broadcast_apply(a.value(), b.value(), "div", std::divides<>{}), {a, b});
}

Var neg(Var a) {
  return tape_of(a).push(Op::Neg, map(a.value(), [](double x) { return -x; }), {a});
}

Var exp(Var a) {
  return tape_of(a).push(Op::Exp, map(a.value(), [](double x) { return std::exp(x); }), {a});
}

Var sqrt(Var a) {
  for (double v : a.value().values())
    if (v < 0.0) throw DomainError("sqrt: negative argument");
  return tape_of(a).push(Op::Sqrt, map(a.value(), [](double x) { return std::sqrt(x); }), {a});
}

Var sin(Var a) {
  return tape_of(a).push(Op::Sin, map(a.value(), [](double x) { return std::sin(x); }), {a});
}

Var cos(Var a) {
  return tape_of(a).push(Op::Cos, map(a.value(), [](double x) { return std::cos(x); }), {a});
}

Var atan(Var a) {
  return tape_of(a).push(Op::Atan, map(a.value(), [](double x) { return std::atan(x); }), {a});
}

Var relu(Var a) {
  return tape_of(a).push(Op::Relu, map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }),
                         {a});
}

Var square(Var a) {
  return tape_of(a).push(Op::Square, map(a.value(), [](double x) { return x * x; }), {a});
}

Var scale(Var a, double s) {
  return tape_of(a).push(Op::Scale, map(a.value(), [s](double x) { return x * s; }), {a}, s);
}

Var add_scalar(Var a, double s) {
  return tape_of(a).push(Op::AddScalar, map(a.value(), [s](double x) { return x + s; }), {a}, s);
}

Var smooth_positive(Var a) {
  return tape_of(a).push(
      Op::SmoothPositive,
      map(a.value(), [](double x) { return x >= 1.0 ? x : std::exp(x - 1.0); }), {a});
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Tensor out;
  matmul_into(a.value(), b.value(), out);
  return t.push(Op::MatMul, std::move(out), {a, b});
}

Var group_matmul(Var a, Var b, std::size_t groups, bool transpose_b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (groups == 0 || av.rows() % groups != 0 || bv.rows() % groups != 0)
    throw ShapeError("group_matmul: rows not divisible by group count");
  const std::size_t m = av.rows() / groups, k = av.cols();
  std::size_t n = 0;
  if (transpose_b) {
    if (bv.cols() != k) throw ShapeError("group_matmul: inner dimensions differ");
    n = bv.rows() / groups;
  } else {
    if (bv.rows() / groups != k) throw ShapeError("group_matmul: inner dimensions differ");
    n = bv.cols();
  }
  Tensor out(groups * m, n);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* pa = av.data() + gi * m * k;
    double* po = out.data() + gi * m * n;
    if (transpose_b) accumulate_abt(pa, bv.data() + gi * n * k, po, m, k, n);
    else accumulate_ab(pa, bv.data() + gi * k * n, po, m, k, n);
  }
  return t.push(Op::GroupMatMul, std::move(out), {a, b}, transpose_b ? 1.0 : 0.0, groups);
}

Var reduce_mean(Var a) {
  const Tensor& v = a.value();
  if (v.size() == 0) throw ShapeError("reduce_mean of an empty tensor");
  double s = 0.0;
  for (double x : v.values()) s += x;
  return tape_of(a).push(Op::ReduceMean, Tensor::scalar(s / static_cast<double>(v.size())), {a});
}

Var reduce_sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return tape_of(a).push(Op::ReduceSum, Tensor::scalar(s), {a});
}

Var softmax_rows(Var a) {
  const Tensor& v = a.value();
  Tensor out(v.rows(), v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double mx = v(r, 0);
    for (std::size_t c = 1; c < v.cols(); ++c) mx = std::max(mx, v(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < v.cols(); ++c) {
      out(r, c) = std::exp(v(r, c) - mx);
      s += out(r, c);
    }
    for (std::size_t c = 0; c < v.cols(); ++c) out(r, c) /= s;
  }
  return tape_of(a).push(Op::SoftmaxRows, std::move(out), {a});
}

Var affine_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != cols || beta.rows() != 1 || beta.cols() != cols)
    throw ShapeError("affine_norm: gamma/beta must be (1, cols)");
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(rows, cols);
  Tensor saved(rows, cols + 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xv(r, c);
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double dlt = xv(r, c) - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(cols);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (xv(r, c) - mean) * inv_std;
      saved(r, c) = xh;
      out(r, c) = gv[c] * xh + bv[c];
    }
    saved(r, cols) = inv_std;
  }
  return t.push(Op::AffineNorm, std::move(out), {x, gamma, beta}, eps, 0, std::move(saved));
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tensor v = a.value();
  v.reshape(rows, cols);
  return tape_of(a).push(Op::Reshape, std::move(v), {a});
}

// ---------------------------------------------------------------- grad check

std::string GradCheckReport::summary() const {
  std::size_t failed = 0;
  for (const auto& e : entries) failed += e.pass ? 0 : 1;
  std::ostringstream os;
  os << entries.size() << " coordinates, " << failed << " failed, max rel error "
     << max_rel_error;
  return os.str();
}

GradCheckReport grad_check(const TapedFunction& f, const Tensor& point, double step, double rtol,
                           double atol) {
  GradCheckReport report;
  Tensor analytic;
  try {
    Tape tape;
    Var x = tape.variable(point);
    Var y = f(tape, x);
    tape.backward(y);
    analytic = x.grad();
  } catch (const std::exception&) {
    analytic = Tensor(point.rows(), point.cols(), std::nan(""));
  }

  auto eval = [&](const Tensor& p) -> double {
    try {
      Tape tape;
      Var x = tape.constant(p);
      return f(tape, x).item();
    } catch (const std::exception&) {
      return std::nan("");
    }
  };

  for (std::size_t i = 0; i < point.size(); ++i) {
    Tensor plus = point, minus = point;
    plus[i] += step;
    minus[i] -= step;
    GradCheckEntry e;
    e.index = i;
    e.analytic = analytic[i];
    e.numeric = (eval(plus) - eval(minus)) / (2.0 * step);
    e.finite = std::isfinite(e.analytic) && std::isfinite(e.numeric);
    e.abs_error = std::abs(e.analytic - e.numeric);
    e.pass = e.finite && e.abs_error <= atol + rtol * std::abs(e.numeric);
    if (e.finite && e.abs_error > atol) {
      const double denom = std::max(std::abs(e.numeric), std::abs(e.analytic));
      report.max_rel_error = std::max(report.max_rel_error, e.abs_error / denom);
    } else if (!e.finite) {
      report.max_rel_error = std::numeric_limits<double>::infinity();
    }
    report.pass = report.pass && e.pass;
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace ellip::ad

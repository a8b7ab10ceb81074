#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ellip::ad {

/// Dense row-major matrix of doubles. Scalars are 1x1.
class Tensor {
public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::vector<double> v) {
    const auto n = v.size();
    return Tensor(n, 1, std::move(v));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v);
  /// Same data, new shape; rows * cols must be preserved.
  void reshape(std::size_t rows, std::size_t cols);

  bool operator==(const Tensor&) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

class ShapeError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
  using std::domain_error::domain_error;
};

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Sqrt,
  Sin,
  Cos,
  Atan,
  Relu,
  Square,
  Scale,
  AddScalar,
  SmoothPositive,
  MatMul,
  GroupMatMul,
  ReduceMean,
  ReduceSum,
  SoftmaxRows,
  AffineNorm,
  Reshape,
  kCount,
};

constexpr std::size_t kOpCount = static_cast<std::size_t>(Op::kCount);
const char* op_name(Op op);

using OpCounts = std::array<std::size_t, kOpCount>;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives
/// and has not been cleared.
class Var {
public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  double item() const;  // value of a 1x1 node
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Append-only reverse-mode tape. Inputs of every node precede it, and
/// backward() walks the nodes in strict reverse insertion order.
/// Single-threaded; use one tape per thread.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var constant(double v) { return constant(Tensor::scalar(v)); }
  Var variable(Tensor value);  // leaf that receives a gradient

  /// Seeds d(root)/d(root) = 1 and accumulates adjoints into every node
  /// that depends on a variable. Previous adjoints are discarded.
  void backward(Var root);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const OpCounts& op_counts() const noexcept { return counts_; }
  void clear();

  // Node construction; used by the free-function ops below.
  Var push(Op op, Tensor value, std::initializer_list<Var> inputs, double scalar = 0.0,
           std::size_t aux = 0, Tensor saved = {});

private:
  struct Node {
    Op op = Op::Leaf;
    std::array<std::uint32_t, 3> in{};
    std::uint8_t n_in = 0;
    bool needs_grad = false;
    double scalar = 0.0;
    std::size_t aux = 0;
    Tensor value;
    Tensor saved;
    Tensor grad;
  };

  void backprop_node(const Node& node);
  Tensor& grad_of(std::uint32_t id);

  std::deque<Node> nodes_;  // stable addresses across push()
  OpCounts counts_{};
};

// Elementwise binary ops broadcast along any axis of extent 1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);  // throws DomainError on an exact zero denominator
Var neg(Var a);
Var exp(Var a);
Var sqrt(Var a);  // throws DomainError on a negative argument
Var sin(Var a);
Var cos(Var a);
Var atan(Var a);
Var relu(Var a);
Var square(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// x for x >= 1, exp(x - 1) below: C1, strictly positive, identity on [1, inf).
Var smooth_positive(Var a);
Var matmul(Var a, Var b);
/// Block-wise product over `groups` equal row-blocks. a: (G*m, k).
/// transpose_b: b is (G*n, k) and block g gives a_g b_g^T, else b is
/// (G*k, n) and block g gives a_g b_g.
Var group_matmul(Var a, Var b, std::size_t groups, bool transpose_b);
Var reduce_mean(Var a);
Var reduce_sum(Var a);
Var softmax_rows(Var a);
/// Per-row normalization to zero mean / unit variance, then gamma*x + beta
/// with gamma, beta of shape (1, cols).
Var affine_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var reshape(Var a, std::size_t rows, std::size_t cols);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator+(double s, Var a) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }
inline Var operator-(double s, Var a) { return add_scalar(neg(a), s); }

// Raw kernels shared with non-taped code paths.
void matmul_into(const Tensor& a, const Tensor& b, Tensor& out);

struct GradCheckEntry {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double abs_error = 0.0;
  bool finite = true;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;  // over coordinates whose error exceeds atol
  bool pass = true;

  std::string summary() const;
};

/// f maps a leaf variable (same shape as `point`) to a 1x1 node on `tape`.
using TapedFunction = std::function<Var(Tape& tape, Var x)>;

/// Central-difference check of every coordinate. A coordinate passes when
/// |analytic - numeric| <= atol + rtol * |numeric|. Non-finite values are
/// reported as failures.
GradCheckReport grad_check(const TapedFunction& f, const Tensor& point, double step = 1e-6,
                           double rtol = 1e-5, double atol = 1e-8);

}  // namespace ellip::ad

#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation; backward() walks it in reverse.
// Scalars are 1x1 matrices.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace bcr::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  // Gradient accumulated by the last Tape::backward(); zero-sized if the node
  // did not receive any gradient.
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  // Records a derived node. `backward` is only kept if some parent needs a
  // gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, std::span<const Var> parents, Backward backward);

  // Seeds d(output)/d(output) = 1 and propagates. `output` must be 1x1.
  void backward(Var output);

  void accumulate(Var target, const Matrix& contribution);
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Arithmetic. Shapes must agree exactly unless noted.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                 // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add_row(Var a, Var row);           // broadcast a 1xC row over every row of a
Var sub_row(Var a, Var row);

// Elementwise nonlinearities.
Var square(Var a);
Var sqrt(Var a);
Var abs(Var a);                        // subgradient 0 at 0
Var gelu(Var a);                       // tanh approximation

// Reductions.
Var sum(Var a);                        // -> 1x1
Var col_mean(Var a);                   // -> 1xC

// Row-wise transforms.
Var softmax_rows(Var a);
Var layer_norm_rows(Var a, Var gamma, Var beta, double eps = 1e-5);
Var normalize_rows(Var a, double eps = 1e-12);

// Structural.
Var gather_rows(Var a, const std::vector<Eigen::Index>& rows);
// out(r, c) = a.flat[index[r * cols + c]] with a in row-major order.
Var gather_flat(Var a, const std::vector<Eigen::Index>& index, Eigen::Index rows, Eigen::Index cols);
Var col_block(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

}  // namespace bcr::ad

#include "bcr/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "bcr/errors.hpp"

namespace bcr::ad {

const Matrix& Var::value() const { return tape_->nodes_[id_].value; }
const Matrix& Var::grad() const { return tape_->nodes_[id_].grad; }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_[p.id_].requires_grad;
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var target, const Matrix& contribution) {
  Node& n = nodes_[target.id_];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = contribution;
  } else {
    n.grad += contribution;
  }
}

void Tape::backward(Var output) {
  if (output.tape_ != this) throw ShapeMismatch("backward: variable belongs to another tape");
  if (output.rows() != 1 || output.cols() != 1) throw ShapeMismatch("backward: output must be scalar");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[output.id_].requires_grad) return;
  nodes_[output.id_].grad = Matrix::Ones(1, 1);
  for (std::size_t i = output.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // Copy: accumulate() may touch other nodes but never this one.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeMismatch(std::string(op) + ": operand shapes differ");
  }
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [a, b](Tape& t, const Matrix& g) {
                            t.accumulate(a, g.cwiseProduct(b.value()));
                            t.accumulate(b, g.cwiseProduct(a.value()));
                          });
}

Var scale(Var a, double s) {
  return a.tape()->record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_scalar(Var a, double s) {
  return a.tape()->record(a.value().array() + s, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
  return a.tape()->record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(Var a) {
  return a.tape()->record(a.value().transpose(), {a},
                          [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeMismatch("add_row: row shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(row, g.colwise().sum());
  });
}

Var sub_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeMismatch("sub_row: row shape mismatch");
  Matrix out = a.value().rowwise() - row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(row, -g.colwise().sum());
  });
}

Var square(Var a) {
  return a.tape()->record(a.value().array().square(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

Var sqrt(Var a) {
  Matrix out = a.value().array().sqrt();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    // d sqrt(x) = 1 / (2 sqrt(x)); recompute from the input to stay independent of node order.
    t.accumulate(a, (g.array() / (2.0 * a.value().array().sqrt())).matrix());
  });
}

Var abs(Var a) {
  return a.tape()->record(a.value().cwiseAbs(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(Matrix(a.value().array().sign())));
  });
}

Var gelu(Var a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double c = 0.044715;
  Matrix out = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); });
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix d = a.value().unaryExpr([](double x) {
      const double th = std::tanh(k * (x + c * x * x * x));
      return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * k * (1.0 + 3.0 * c * x * x);
    });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var col_mean(Var a) {
  if (a.rows() == 0) throw ShapeMismatch("col_mean: no rows");
  const double n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() / n;
  return a.tape()->record(std::move(out), {a}, [a, n](Tape& t, const Matrix& g) {
    Matrix spread = g.replicate(a.rows(), 1) / n;
    t.accumulate(a, spread);
  });
}

Var softmax_rows(Var a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  Var result = a.tape()->record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    Matrix d(out.rows(), out.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double dot = g.row(r).dot(out.row(r));
      d.row(r) = out.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    t.accumulate(a, d);
  });
  return result;
}

Var layer_norm_rows(Var a, Var gamma, Var beta, double eps) {
  const Eigen::Index n = a.rows();
  const Eigen::Index d = a.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw ShapeMismatch("layer_norm_rows: affine parameter shape mismatch");
  }
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = a.value().row(r).mean();
    const double var = (a.value().row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (a.value().row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return a.tape()->record(std::move(out), {a, gamma, beta},
                          [a, gamma, beta, xhat, inv_std](Tape& t, const Matrix& g) {
                            t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                            t.accumulate(beta, g.colwise().sum());
                            if (!t.requires_grad(a)) return;
                            Matrix dxhat = g.array().rowwise() * gamma.value().row(0).array();
                            Matrix dx(dxhat.rows(), dxhat.cols());
                            for (Eigen::Index r = 0; r < dx.rows(); ++r) {
                              const double m1 = dxhat.row(r).mean();
                              const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(dx.cols());
                              dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                            }
                            t.accumulate(a, dx);
                          });
}

Var normalize_rows(Var a, double eps) {
  Matrix out = a.value();
  Eigen::VectorXd norms(out.rows());
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    norms(r) = std::sqrt(out.row(r).squaredNorm() + eps);
    out.row(r) /= norms(r);
  }
  return a.tape()->record(out, {a}, [a, out, norms](Tape& t, const Matrix& g) {
    Matrix d(out.rows(), out.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double dot = g.row(r).dot(out.row(r));
      d.row(r) = (g.row(r) - dot * out.row(r)) / norms(r);
    }
    t.accumulate(a, d);
  });
}

Var gather_rows(Var a, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw ShapeMismatch("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  return a.tape()->record(std::move(out), {a}, [a, rows](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) d.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(a, d);
  });
}

Var gather_flat(Var a, const std::vector<Eigen::Index>& index, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(index.size()) != rows * cols) {
    throw ShapeMismatch("gather_flat: index count does not match output shape");
  }
  const Eigen::Index n = a.value().size();
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= n) throw ShapeMismatch("gather_flat: index out of range");
    out.data()[k] = a.value().data()[index[k]];
  }
  return a.tape()->record(std::move(out), {a}, [a, index](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t k = 0; k < index.size(); ++k) d.data()[index[k]] += g.data()[k];
    t.accumulate(a, d);
  });
}

Var col_block(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeMismatch("col_block: out of range");
  Matrix out = a.value().middleCols(start, count);
  return a.tape()->record(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    d.middleCols(start, count) = g;
    t.accumulate(a, d);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: nothing to concatenate");
  Eigen::Index total = 0;
  for (Var p : parts) {
    if (p.rows() != parts.front().rows()) throw ShapeMismatch("concat_cols: row counts differ");
    total += p.cols();
  }
  Matrix out(parts.front().rows(), total);
  Eigen::Index offset = 0;
  for (Var p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      t.accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: nothing to concatenate");
  Eigen::Index total = 0;
  for (Var p : parts) {
    if (p.cols() != parts.front().cols()) throw ShapeMismatch("concat_rows: column counts differ");
    total += p.rows();
  }
  Matrix out(total, parts.front().cols());
  Eigen::Index offset = 0;
  for (Var p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      t.accumulate(p, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

}  // namespace bcr::ad

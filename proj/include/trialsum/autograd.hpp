#pragma once

// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every operation applied to its variables. When recording is
// off the ops only compute values, which is what inference uses. Parameters
// are borrowed by reference; their gradients stay on the tape.

#include "trialsum/linalg.hpp"

#include <cassert>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

namespace trialsum::ag {

template <typename Scalar>
struct Parameter {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Parameter() = default;
  Parameter(Index rows, Index cols)
      : value(Matrix<Scalar>::Zero(rows, cols)), grad(Matrix<Scalar>::Zero(rows, cols)) {}

  Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<Scalar>& value() const { return tape->value(*this); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(const Mat&)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<Scalar> constant(Mat value) {
    Node& n = nodes_.emplace_back();
    n.own = std::move(value);
    return {this, nodes_.size() - 1};
  }

  // Borrowed constant; `value` must outlive the tape.
  Var<Scalar> constant_ref(const Mat& value) {
    Node& n = nodes_.emplace_back();
    n.ref = &value;
    return {this, nodes_.size() - 1};
  }

  // Registers `p` once per tape. Its gradient is read back with gradient_of().
  Var<Scalar> parameter(const Parameter<Scalar>& p) {
    if (auto it = params_.find(&p); it != params_.end()) return {this, it->second};
    Node& n = nodes_.emplace_back();
    n.ref = &p.value;
    n.needs_grad = record_;
    const std::size_t id = nodes_.size() - 1;
    params_.emplace(&p, id);
    return {this, id};
  }

  // Gradient accumulated for `p` by backward(), or nullptr if `p` was unused.
  const Mat* gradient_of(const Parameter<Scalar>& p) const {
    auto it = params_.find(&p);
    if (it == params_.end()) return nullptr;
    const Node& n = nodes_[it->second];
    return n.grad.size() == 0 ? nullptr : &n.grad;
  }

  // Adds an op node. `backward` is stored only when some input needs a gradient.
  Var<Scalar> emit(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward backward) {
    return emit(std::move(value), std::span<const Var<Scalar>>(inputs.begin(), inputs.size()),
                std::move(backward));
  }

  Var<Scalar> emit(Mat value, std::span<const Var<Scalar>> inputs, Backward backward) {
    bool needs = false;
    if (record_) {
      for (const auto& v : inputs) needs = needs || nodes_[v.id].needs_grad;
    }
    Node& n = nodes_.emplace_back();
    n.own = std::move(value);
    n.needs_grad = needs;
    if (needs) n.backward = std::move(backward);
    return {this, nodes_.size() - 1};
  }

  const Mat& value(Var<Scalar> v) const {
    const Node& n = nodes_[v.id];
    return n.ref ? *n.ref : n.own;
  }

  bool needs_grad(Var<Scalar> v) const { return nodes_[v.id].needs_grad; }

  // Gradient buffer of `v`, zero-initialised on first access.
  Mat& grad(Var<Scalar> v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) {
      const Mat& val = value(v);
      n.grad.setZero(val.rows(), val.cols());
    }
    return n.grad;
  }

  template <typename Derived>
  void accumulate(Var<Scalar> v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Seeds d(loss)/d(loss) = seed and propagates to every recorded input.
  void backward(Var<Scalar> loss, Scalar seed = Scalar(1)) {
    assert(record_);
    assert(value(loss).size() == 1);
    nodes_[loss.id].grad = Mat::Constant(1, 1, seed);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(n.grad);
    }
  }

 private:
  struct Node {
    Mat own;
    const Mat* ref = nullptr;
    Mat grad;
    Backward backward;
    bool needs_grad = false;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, std::size_t> params_;
};

// ---------------------------------------------------------------------------
// Ops

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = *a.tape;
  return t.emit(a.value() * b.value(), {a, b}, [a, b](const Matrix<Scalar>& g) {
    Tape<Scalar>& t = *a.tape;
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = *a.tape;
  return t.emit(a.value() * b.value().transpose(), {a, b}, [a, b](const Matrix<Scalar>& g) {
    Tape<Scalar>& t = *a.tape;
    if (t.needs_grad(a)) t.accumulate(a, g * b.value());
    if (t.needs_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = *a.tape;
  return t.emit(a.value() + b.value(), {a, b}, [a, b](const Matrix<Scalar>& g) {
    a.tape->accumulate(a, g);
    a.tape->accumulate(b, g);
  });
}

// Adds a 1 x n row to every row of a.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> row) {
  Tape<Scalar>& t = *a.tape;
  Matrix<Scalar> v = a.value().rowwise() + row.value().row(0);
  return t.emit(std::move(v), {a, row}, [a, row](const Matrix<Scalar>& g) {
    a.tape->accumulate(a, g);
    if (a.tape->needs_grad(row)) a.tape->accumulate(row, g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  Tape<Scalar>& t = *a.tape;
  return t.emit(a.value() * s, {a}, [a, s](const Matrix<Scalar>& g) { a.tape->accumulate(a, g * s); });
}

template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias) {
  return add_row(matmul(x, weight), bias);
}

// tanh approximation of GELU
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  const Scalar c = Scalar(0.7978845608028654);
  const Scalar k = Scalar(0.044715);
  const auto x = a.value().array();
  Matrix<Scalar> th = (c * (x + k * x.cube())).tanh().matrix();
  Matrix<Scalar> v = (Scalar(0.5) * x * (Scalar(1) + th.array())).matrix();
  Tape<Scalar>& t = *a.tape;
  return t.emit(std::move(v), {a}, [a, th = std::move(th), c, k](const Matrix<Scalar>& g) {
    const auto x = a.value().array();
    const auto d = Scalar(0.5) * (Scalar(1) + th.array()) +
                   Scalar(0.5) * x * (Scalar(1) - th.array().square()) * c *
                       (Scalar(1) + Scalar(3) * k * x.square());
    a.tape->accumulate(a, (g.array() * d).matrix());
  });
}

// Row-wise layer normalisation with learned gain and bias (both 1 x n).
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias, Scalar eps = Scalar(1e-5)) {
  const Matrix<Scalar>& in = x.value();
  const Index n = in.cols();
  Matrix<Scalar> xhat(in.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv(in.rows());
  for (Index r = 0; r < in.rows(); ++r) {
    const Scalar mu = in.row(r).mean();
    const Scalar var = (in.row(r).array() - mu).square().mean();
    inv(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mu) * inv(r);
  }
  Matrix<Scalar> v = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  v.rowwise() += bias.value().row(0);
  Tape<Scalar>& t = *x.tape;
  return t.emit(std::move(v), {x, gain, bias},
                [x, gain, bias, xhat = std::move(xhat), inv = std::move(inv)](const Matrix<Scalar>& g) {
                  Tape<Scalar>& t = *x.tape;
                  if (t.needs_grad(gain)) t.accumulate(gain, (g.array() * xhat.array()).colwise().sum().matrix());
                  if (t.needs_grad(bias)) t.accumulate(bias, g.colwise().sum());
                  if (!t.needs_grad(x)) return;
                  const Index n = g.cols();
                  Matrix<Scalar> dxhat = (g.array().rowwise() * gain.value().row(0).array()).matrix();
                  Matrix<Scalar> dx(g.rows(), n);
                  for (Index r = 0; r < g.rows(); ++r) {
                    const Scalar sum = dxhat.row(r).sum();
                    const Scalar dot = dxhat.row(r).dot(xhat.row(r));
                    dx.row(r) = (inv(r) / Scalar(n)) *
                                (Scalar(n) * dxhat.row(r).array() - sum - xhat.row(r).array() * dot).matrix();
                  }
                  t.accumulate(x, dx);
                });
}

// Gathers rows of `table` for each id.
template <typename Scalar>
Var<Scalar> embedding(Var<Scalar> table, std::span<const TokenId> ids) {
  const Matrix<Scalar>& tab = table.value();
  Matrix<Scalar> v(static_cast<Index>(ids.size()), tab.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) v.row(static_cast<Index>(i)) = tab.row(ids[i]);
  Tape<Scalar>& t = *table.tape;
  std::vector<TokenId> idv(ids.begin(), ids.end());
  return t.emit(std::move(v), {table}, [table, idv = std::move(idv)](const Matrix<Scalar>& g) {
    Matrix<Scalar>& gt = table.tape->grad(table);
    for (std::size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += g.row(static_cast<Index>(i));
  });
}

// Multi-head scaled dot-product attention over already-projected q, k, v.
// With `causal`, query i only sees keys j <= i (requires equal lengths).
template <typename Scalar>
Var<Scalar> attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, int n_heads, bool causal) {
  const Matrix<Scalar>& Q = q.value();
  const Matrix<Scalar>& K = k.value();
  const Matrix<Scalar>& V = v.value();
  const Index tq = Q.rows();
  const Index tk = K.rows();
  const Index dh = Q.cols() / n_heads;
  const Scalar sc = Scalar(1) / std::sqrt(Scalar(dh));
  assert(!causal || tq == tk);

  auto probs = std::make_shared<std::vector<Matrix<Scalar>>>(n_heads);
  Matrix<Scalar> out(tq, Q.cols());
  for (int h = 0; h < n_heads; ++h) {
    Matrix<Scalar> s = (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose()) * sc;
    for (Index i = 0; i < tq; ++i) {
      const Index visible = causal ? i + 1 : tk;
      auto row = s.row(i).head(visible);
      const Scalar hi = row.maxCoeff();
      row = (row.array() - hi).exp().matrix();
      row /= row.sum();
      if (visible < tk) s.row(i).tail(tk - visible).setZero();
    }
    out.middleCols(h * dh, dh) = s * V.middleCols(h * dh, dh);
    (*probs)[h] = std::move(s);
  }

  Tape<Scalar>& t = *q.tape;
  return t.emit(std::move(out), {q, k, v}, [q, k, v, probs, n_heads, dh, sc](const Matrix<Scalar>& g) {
    Tape<Scalar>& t = *q.tape;
    const Matrix<Scalar>& Q = q.value();
    const Matrix<Scalar>& K = k.value();
    const Matrix<Scalar>& V = v.value();
    Matrix<Scalar> dq = Matrix<Scalar>::Zero(Q.rows(), Q.cols());
    Matrix<Scalar> dk = Matrix<Scalar>::Zero(K.rows(), K.cols());
    Matrix<Scalar> dv = Matrix<Scalar>::Zero(V.rows(), V.cols());
    for (int h = 0; h < n_heads; ++h) {
      const Matrix<Scalar>& p = (*probs)[h];
      const auto go = g.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh) = p.transpose() * go;
      Matrix<Scalar> dp = go * V.middleCols(h * dh, dh).transpose();
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inner = (dp.array() * p.array()).rowwise().sum();
      Matrix<Scalar> ds = (p.array() * (dp.colwise() - inner).array()).matrix() * sc;
      dq.middleCols(h * dh, dh) = ds * K.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * Q.middleCols(h * dh, dh);
    }
    t.accumulate(q, dq);
    t.accumulate(k, dk);
    t.accumulate(v, dv);
  });
}

// Column k of the result is ys[k] * w, with w a D x 1 vector.
template <typename Scalar>
Var<Scalar> gate_logits(std::span<const Var<Scalar>> ys, Var<Scalar> w) {
  const Index T = ys.front().rows();
  Matrix<Scalar> v(T, static_cast<Index>(ys.size()));
  for (std::size_t k = 0; k < ys.size(); ++k) v.col(static_cast<Index>(k)) = ys[k].value() * w.value();
  std::vector<Var<Scalar>> inputs(ys.begin(), ys.end());
  inputs.push_back(w);
  Tape<Scalar>& t = *w.tape;
  std::vector<Var<Scalar>> yv(ys.begin(), ys.end());
  return t.emit(std::move(v), std::span<const Var<Scalar>>(inputs), [yv = std::move(yv), w](const Matrix<Scalar>& g) {
    Tape<Scalar>& t = *w.tape;
    for (std::size_t k = 0; k < yv.size(); ++k) {
      const auto gk = g.col(static_cast<Index>(k));
      if (t.needs_grad(yv[k])) t.accumulate(yv[k], gk * w.value().transpose());
      if (t.needs_grad(w)) t.accumulate(w, yv[k].value().transpose() * gk);
    }
  });
}

}  // namespace trialsum::ag

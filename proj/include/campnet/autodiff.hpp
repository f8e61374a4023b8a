// include/campnet/autodiff.hpp

// Copyright 2026  The campnet Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Reverse-mode differentiation over dense matrices. Every operation is a
// whole-matrix op recorded on a Tape; backward() replays the tape in reverse.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "campnet/types.hpp"

namespace campnet::ad {

enum class ParamGroup : std::uint8_t { kEncoder = 0, kPrenet = 1, kDecoder = 2 };

inline const char* ToString(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kPrenet: return "prenet";
    case ParamGroup::kDecoder: return "decoder";
  }
  return "?";
}

template <typename S>
struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::kEncoder;
  Matrix<S> value;
  Matrix<S> grad;  // empty until a backward pass reaches it
  /// Buffers (batch-norm running statistics) are stored and partitioned like
  /// parameters but never receive gradients or optimizer updates.
  bool trainable = true;

  bool has_grad() const { return grad.size() != 0; }
};

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Matrix<S>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Sequence boundaries inside a row-stacked batch: segment b owns rows
/// [offsets[b], offsets[b+1]).
using Segments = std::vector<int>;

template <typename S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<S> Constant(Matrix<S> value) { return Push("constant", std::move(value), false, {}); }

  /// A differentiable input; its gradient is available after Backward().
  Var<S> Variable(Matrix<S> value) { return Push("variable", std::move(value), record_, {}); }

  /// Records an op result. The result needs a gradient when any input does.
  Var<S> RecordOp(const char* kind, Matrix<S> value, std::initializer_list<Var<S>> inputs,
                  BackwardFn backward) {
    bool needs = false;
    if (record_)
      for (const auto& in : inputs) needs = needs || nodes_[in.id].needs_grad;
    return Push(kind, std::move(value), needs, needs ? std::move(backward) : BackwardFn{}, inputs);
  }

  const Matrix<S>& value(Var<S> v) const { return nodes_[v.id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var<S> v) const { return needs_grad(v.id); }

  /// Gradient of node `id`, allocated as zeros on first use.
  Matrix<S>& grad(int id) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Matrix<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

  /// Seeds d(output)/d(output) = 1 for a 1x1 output and propagates gradients
  /// back to every Variable.
  void Backward(Var<S> output) {
    if (output.rows() != 1 || output.cols() != 1) throw ModelError("backward needs a scalar output");
    if (!nodes_[output.id].needs_grad) return;
    grad(output.id)(0, 0) = S(1);
    for (int id = output.id; id >= 0; --id) {
      auto& n = nodes_[id];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, id);
    }
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  int CountOps(const std::string& kind) const {
    return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(),
                                          [&](const Node& n) { return kind == n.kind; }));
  }
  /// Ids of every node `v` transitively depends on (including itself).
  std::vector<int> Ancestors(Var<S> v) const {
    std::vector<bool> seen(nodes_.size(), false);
    std::vector<int> stack{v.id}, out;
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      if (seen[id]) continue;
      seen[id] = true;
      out.push_back(id);
      for (int in : nodes_[id].inputs) stack.push_back(in);
    }
    std::sort(out.begin(), out.end());
    return out;
  }
  const char* kind(int id) const { return nodes_[id].kind; }

 private:
  struct Node {
    const char* kind = "";
    Matrix<S> value;
    Matrix<S> grad;
    bool needs_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  Var<S> Push(const char* kind, Matrix<S> value, bool needs, BackwardFn backward,
              std::initializer_list<Var<S>> inputs = {}) {
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    n.needs_grad = needs;
    n.backward = std::move(backward);
    for (const auto& in : inputs) n.inputs.push_back(in.id);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

 private:
  bool record_;
  std::vector<Node> nodes_;
};

namespace detail {

template <typename S>
void CheckSameTape(Var<S> a, Var<S> b) {
  if (a.tape != b.tape) throw ModelError("variables live on different tapes");
}

template <typename S>
void CheckShape(bool ok, const char* op) {
  if (!ok) throw ModelError(std::string("shape mismatch in ") + op);
}

}  // namespace detail

template <typename S>
Var<S> MatMul(Var<S> a, Var<S> b) {
  detail::CheckSameTape(a, b);
  detail::CheckShape<S>(a.cols() == b.rows(), "MatMul");
  Matrix<S> out = a.value() * b.value();
  return a.tape->RecordOp("matmul", std::move(out), {a, b}, [a, b](Tape<S>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a)) t.grad(a.id).noalias() += g * t.value(b).transpose();
    if (t.needs_grad(b)) t.grad(b.id).noalias() += t.value(a).transpose() * g;
  });
}

template <typename S>
Var<S> Add(Var<S> a, Var<S> b) {
  detail::CheckSameTape(a, b);
  detail::CheckShape<S>(a.rows() == b.rows() && a.cols() == b.cols(), "Add");
  Matrix<S> out = a.value() + b.value();
  return a.tape->RecordOp("add", std::move(out), {a, b}, [a, b](Tape<S>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a)) t.grad(a.id) += g;
    if (t.needs_grad(b)) t.grad(b.id) += g;
  });
}

template <typename S>
Var<S> Scale(Var<S> a, S c) {
  Matrix<S> out = a.value() * c;
  return a.tape->RecordOp("scale", std::move(out), {a}, [a, c](Tape<S>& t, int self) {
    t.grad(a.id) += t.grad(self) * c;
  });
}

/// a + row broadcast over every row of a.
template <typename S>
Var<S> AddRow(Var<S> a, Var<S> row) {
  detail::CheckSameTape(a, row);
  detail::CheckShape<S>(row.rows() == 1 && row.cols() == a.cols(), "AddRow");
  Matrix<S> out = a.value().rowwise() + row.value().row(0);
  return a.tape->RecordOp("add_row", std::move(out), {a, row}, [a, row](Tape<S>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a)) t.grad(a.id) += g;
    if (t.needs_grad(row)) t.grad(row.id) += g.colwise().sum();
  });
}

template <typename S>
Var<S> Linear(Var<S> x, Var<S> weight, Var<S> bias) {
  return AddRow(MatMul(x, weight), bias);
}

template <typename S>
Var<S> Relu(Var<S> a) {
  Matrix<S> out = a.value().cwiseMax(S(0));
  return a.tape->RecordOp("relu", std::move(out), {a}, [a](Tape<S>& t, int self) {
    t.grad(a.id).array() += (t.value(a).array() > S(0)).select(t.grad(self).array(), S(0));
  });
}

/// Inverted dropout with keep-probability 1 - p; identity when p == 0 or rng is null.
template <typename S>
Var<S> Dropout(Var<S> a, double p, Rng* rng) {
  if (p <= 0.0 || rng == nullptr) return a;
  std::bernoulli_distribution keep(1.0 - p);
  Matrix<S> mask(a.rows(), a.cols());
  const S scale = S(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? scale : S(0);
  Matrix<S> out = a.value().cwiseProduct(mask);
  return a.tape->RecordOp("dropout", std::move(out), {a},
                          [a, mask = std::move(mask)](Tape<S>& t, int self) {
                            t.grad(a.id) += t.grad(self).cwiseProduct(mask);
                          });
}

/// Row-wise layer normalization with affine gain/bias rows.
template <typename S>
Var<S> LayerNorm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  detail::CheckShape<S>(gain.cols() == x.cols() && bias.cols() == x.cols(), "LayerNorm");
  const auto& xv = x.value();
  const Eigen::Index D = xv.cols();
  Eigen::Matrix<S, Eigen::Dynamic, 1> mean = xv.rowwise().mean();
  Matrix<S> centered = xv.colwise() - mean;
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd =
      ((centered.array().square().rowwise().sum() / S(D)) + eps).rsqrt().matrix();
  Matrix<S> xhat = centered.array().colwise() * rstd.array();
  Matrix<S> out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
                  bias.value().row(0).array();
  return x.tape->RecordOp(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<S>& t, int self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(gain)) t.grad(gain.id) += g.cwiseProduct(xhat).colwise().sum();
        if (t.needs_grad(bias)) t.grad(bias.id) += g.colwise().sum();
        if (t.needs_grad(x)) {
          const Eigen::Index D = xhat.cols();
          Matrix<S> dxhat = g.array().rowwise() * t.value(gain).row(0).array();
          Eigen::Matrix<S, Eigen::Dynamic, 1> m1 = dxhat.rowwise().sum() / S(D);
          Eigen::Matrix<S, Eigen::Dynamic, 1> m2 = dxhat.cwiseProduct(xhat).rowwise().sum() / S(D);
          Matrix<S> dx = dxhat.colwise() - m1;
          dx -= (xhat.array().colwise() * m2.array()).matrix();
          t.grad(x.id) += (dx.array().colwise() * rstd.array()).matrix();
        }
      });
}

template <typename S>
struct BatchStats {
  RowVector<S> mean;
  RowVector<S> var;  // unbiased
};

/// Column-wise batch normalization. Training mode normalizes with the batch
/// statistics (reported through `stats`); eval mode uses the running ones.
template <typename S>
Var<S> BatchNorm(Var<S> x, Var<S> gain, Var<S> bias, const std::type_identity_t<RowVector<S>>& running_mean,
                 const std::type_identity_t<RowVector<S>>& running_var, bool training, BatchStats<S>* stats = nullptr,
                 S eps = S(1e-5)) {
  const auto& xv = x.value();
  const Eigen::Index N = xv.rows();
  if (!training || N < 2) {
    RowVector<S> inv = (running_var.array() + eps).rsqrt().matrix();
    const RowVector<S> scale = (inv.array() * gain.value().row(0).array()).matrix();
    Matrix<S> out = ((xv.rowwise() - running_mean).array().rowwise() * scale.array()).rowwise() +
                    bias.value().row(0).array();
    return x.tape->RecordOp(
        "batch_norm", std::move(out), {x, gain, bias},
        [x, gain, bias, running_mean, inv](Tape<S>& t, int self) {
          const auto& g = t.grad(self);
          if (t.needs_grad(gain)) {
            Matrix<S> xhat = (t.value(x).rowwise() - running_mean).array().rowwise() * inv.array();
            t.grad(gain.id) += g.cwiseProduct(xhat).colwise().sum();
          }
          if (t.needs_grad(bias)) t.grad(bias.id) += g.colwise().sum();
          if (t.needs_grad(x))
            t.grad(x.id) += (g.array().rowwise() * (inv.array() * t.value(gain).row(0).array())).matrix();
        });
  }
  RowVector<S> mean = xv.colwise().mean();
  Matrix<S> centered = xv.rowwise() - mean;
  RowVector<S> var = centered.array().square().colwise().sum() / S(N);
  RowVector<S> rstd = (var.array() + eps).rsqrt().matrix();
  if (stats) *stats = {mean, var * (S(N) / S(N - 1))};
  Matrix<S> xhat = centered.array().rowwise() * rstd.array();
  Matrix<S> out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
                  bias.value().row(0).array();
  return x.tape->RecordOp(
      "batch_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<S>& t, int self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(gain)) t.grad(gain.id) += g.cwiseProduct(xhat).colwise().sum();
        if (t.needs_grad(bias)) t.grad(bias.id) += g.colwise().sum();
        if (t.needs_grad(x)) {
          const S n = S(xhat.rows());
          Matrix<S> dxhat = g.array().rowwise() * t.value(gain).row(0).array();
          RowVector<S> m1 = dxhat.colwise().sum() / n;
          RowVector<S> m2 = dxhat.cwiseProduct(xhat).colwise().sum() / n;
          Matrix<S> dx = dxhat.rowwise() - m1;
          dx -= (xhat.array().rowwise() * m2.array()).matrix();
          t.grad(x.id) += (dx.array().rowwise() * rstd.array()).matrix();
        }
      });
}

/// Same-padded sliding windows for a 1-D convolution: row r of the result is
/// the concatenation of rows r - k/2 .. r + k/2 of x, zero outside r's segment.
template <typename S>
Var<S> Unfold(Var<S> x, const Segments& segments, int kernel) {
  const auto& xv = x.value();
  const Eigen::Index C = xv.cols();
  const int pad = kernel / 2;
  Matrix<S> out = Matrix<S>::Zero(xv.rows(), C * kernel);
  for (std::size_t b = 0; b + 1 < segments.size(); ++b)
    for (int r = segments[b]; r < segments[b + 1]; ++r)
      for (int k = 0; k < kernel; ++k) {
        const int src = r + k - pad;
        if (src >= segments[b] && src < segments[b + 1]) out.block(r, k * C, 1, C) = xv.row(src);
      }
  return x.tape->RecordOp("unfold", std::move(out), {x},
                          [x, segments, kernel, pad, C](Tape<S>& t, int self) {
                            const auto& g = t.grad(self);
                            auto& dx = t.grad(x.id);
                            for (std::size_t b = 0; b + 1 < segments.size(); ++b)
                              for (int r = segments[b]; r < segments[b + 1]; ++r)
                                for (int k = 0; k < kernel; ++k) {
                                  const int src = r + k - pad;
                                  if (src >= segments[b] && src < segments[b + 1])
                                    dx.row(src) += g.block(r, k * C, 1, C);
                                }
                          });
}

/// Rows of `table` selected by `ids`.
template <typename S>
Var<S> Gather(Var<S> table, const std::vector<int>& ids) {
  const auto& tv = table.value();
  Matrix<S> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows())
      throw ModelError("embedding id " + std::to_string(ids[i]) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  return table.tape->RecordOp("gather", std::move(out), {table}, [table, ids](Tape<S>& t, int self) {
    const auto& g = t.grad(self);
    auto& dt = t.grad(table.id);
    for (std::size_t i = 0; i < ids.size(); ++i) dt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

/// Adds `row` to every row of x whose flag is set.
template <typename S>
Var<S> AddRowWhere(Var<S> x, Var<S> row, const std::vector<bool>& flags) {
  detail::CheckShape<S>(row.cols() == x.cols() && static_cast<Eigen::Index>(flags.size()) == x.rows(),
                        "AddRowWhere");
  Matrix<S> out = x.value();
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) out.row(static_cast<Eigen::Index>(i)) += row.value().row(0);
  return x.tape->RecordOp("add_row_where", std::move(out), {x, row},
                          [x, row, flags](Tape<S>& t, int self) {
                            const auto& g = t.grad(self);
                            if (t.needs_grad(x)) t.grad(x.id) += g;
                            if (t.needs_grad(row))
                              for (std::size_t i = 0; i < flags.size(); ++i)
                                if (flags[i]) t.grad(row.id) += g.row(static_cast<Eigen::Index>(i));
                          });
}

/// Softmax attention weights of one segment pair: heads x (Tq x Tk).
template <typename S>
using HeadWeights = std::vector<Matrix<S>>;

/// Multi-head scaled dot-product attention over already-projected q, k, v.
/// Query segment b attends only to key segment b. Each head uses a contiguous
/// block of cols / heads columns. When `weights` is non-null it receives the
/// softmax weights per segment.
template <typename S>
Var<S> Attention(Var<S> q, Var<S> k, Var<S> v, const Segments& q_segments,
                 const Segments& k_segments, int heads,
                 std::vector<HeadWeights<S>>* weights = nullptr) {
  detail::CheckShape<S>(q.cols() == k.cols() && k.cols() == v.cols() && k.rows() == v.rows() &&
                            q_segments.size() == k_segments.size() && q.cols() % heads == 0,
                        "Attention");
  const Eigen::Index D = q.cols();
  const Eigen::Index dh = D / heads;
  const S scale = S(1) / std::sqrt(S(dh));
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  Matrix<S> out = Matrix<S>::Zero(qv.rows(), D);
  auto probs = std::make_shared<std::vector<HeadWeights<S>>>();
  for (std::size_t b = 0; b + 1 < q_segments.size(); ++b) {
    const int q0 = q_segments[b], tq = q_segments[b + 1] - q0;
    const int k0 = k_segments[b], tk = k_segments[b + 1] - k0;
    HeadWeights<S> seg;
    for (int h = 0; h < heads; ++h) {
      Matrix<S> scores = (qv.block(q0, h * dh, tq, dh) * kv.block(k0, h * dh, tk, dh).transpose()) * scale;
      Eigen::Matrix<S, Eigen::Dynamic, 1> mx = scores.rowwise().maxCoeff();
      Matrix<S> p = (scores.colwise() - mx).array().exp();
      Eigen::Matrix<S, Eigen::Dynamic, 1> z = p.rowwise().sum();
      p.array().colwise() /= z.array();
      out.block(q0, h * dh, tq, dh).noalias() = p * vv.block(k0, h * dh, tk, dh);
      seg.push_back(std::move(p));
    }
    probs->push_back(std::move(seg));
  }
  if (weights) *weights = *probs;
  return q.tape->RecordOp(
      "attention", std::move(out), {q, k, v},
      [q, k, v, q_segments, k_segments, heads, dh, scale, probs](Tape<S>& t, int self) {
        const auto& g = t.grad(self);
        const auto& qv = t.value(q);
        const auto& kv = t.value(k);
        const auto& vv = t.value(v);
        const bool gq = t.needs_grad(q), gk = t.needs_grad(k), gv = t.needs_grad(v);
        for (std::size_t b = 0; b + 1 < q_segments.size(); ++b) {
          const int q0 = q_segments[b], tq = q_segments[b + 1] - q0;
          const int k0 = k_segments[b], tk = k_segments[b + 1] - k0;
          for (int h = 0; h < heads; ++h) {
            const Matrix<S>& p = (*probs)[b][h];
            const auto go = g.block(q0, h * dh, tq, dh);
            if (gv) t.grad(v.id).block(k0, h * dh, tk, dh).noalias() += p.transpose() * go;
            if (!gq && !gk) continue;
            Matrix<S> dp = go * vv.block(k0, h * dh, tk, dh).transpose();
            Eigen::Matrix<S, Eigen::Dynamic, 1> rs = dp.cwiseProduct(p).rowwise().sum();
            Matrix<S> ds = (p.array() * (dp.colwise() - rs).array()).matrix() * scale;
            if (gq) t.grad(q.id).block(q0, h * dh, tq, dh).noalias() += ds * kv.block(k0, h * dh, tk, dh);
            if (gk) t.grad(k.id).block(k0, h * dh, tk, dh).noalias() += ds.transpose() * qv.block(q0, h * dh, tq, dh);
          }
        }
      });
}

/// Weighted mean absolute error against a constant target:
/// sum_t w_t sum_d |a - target| / (cols * sum_t w_t). Empty weights mean all ones.
template <typename S>
Var<S> MeanAbsError(Var<S> a, const Matrix<S>& target, const std::vector<S>& row_weights = {}) {
  detail::CheckShape<S>(a.rows() == target.rows() && a.cols() == target.cols(), "MeanAbsError");
  const Eigen::Index N = a.rows(), D = a.cols();
  detail::CheckShape<S>(row_weights.empty() || static_cast<Eigen::Index>(row_weights.size()) == N,
                        "MeanAbsError weights");
  Eigen::Matrix<S, Eigen::Dynamic, 1> w = Eigen::Matrix<S, Eigen::Dynamic, 1>::Ones(N);
  if (!row_weights.empty()) w = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(row_weights.data(), N);
  const S denom = S(D) * w.sum();
  Matrix<S> diff = a.value() - target;
  Matrix<S> out(1, 1);
  out(0, 0) = denom > S(0) ? (diff.cwiseAbs().rowwise().sum().cwiseProduct(w)).sum() / denom : S(0);
  return a.tape->RecordOp("mae", std::move(out), {a},
                          [a, diff = std::move(diff), w, denom](Tape<S>& t, int self) {
                            if (!(denom > S(0))) return;
                            const S g = t.grad(self)(0, 0) / denom;
                            t.grad(a.id) += ((diff.array().sign().colwise() * w.array()) * g).matrix();
                          });
}

/// sum(a .* weights) for a constant weight matrix; a smooth scalar probe.
template <typename S>
Var<S> Dot(Var<S> a, const Matrix<S>& weights) {
  detail::CheckShape<S>(a.rows() == weights.rows() && a.cols() == weights.cols(), "Dot");
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  return a.tape->RecordOp("dot", std::move(out), {a}, [a, weights](Tape<S>& t, int self) {
    t.grad(a.id) += weights * t.grad(self)(0, 0);
  });
}

}  // namespace campnet::ad

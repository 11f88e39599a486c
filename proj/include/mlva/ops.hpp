// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "mlva/tensor.hpp"

namespace mlva {

/// Reduction direction. kRows collapses the row dimension (result 1xC),
/// kCols collapses columns (result Rx1), kAll yields a 1x1 scalar.
enum class Axis { kRows, kCols, kAll };

/// Contiguous run of rows inside a stacked matrix.
struct RowSegment {
  Index start = 0;
  Index length = 0;
};

inline constexpr double kCosineEps = 1e-8;

namespace detail {

template <typename Scalar>
void require_same_shape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
}

// Sums a gradient of the broadcast shape back onto a possibly-1x1 operand.
template <typename Scalar>
Matrix<Scalar> reduce_to(const Matrix<Scalar>& g, const detail::NodePtr<Scalar>& target) {
  if (target->value.size() == 1 && g.size() != 1) {
    Matrix<Scalar> s(1, 1);
    s(0, 0) = g.sum();
    return s;
  }
  return g;
}

template <typename Scalar>
bool broadcastable(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return (a.rows() == b.rows() && a.cols() == b.cols()) || a.size() == 1 || b.size() == 1;
}

template <typename Scalar>
Matrix<Scalar> broadcast(const Matrix<Scalar>& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return Matrix<Scalar>::Constant(rows, cols, m(0, 0));
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(Graph<Scalar>& g, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + a.shape_str() + " * " +
                         b.shape_str());
  }
  Matrix<Scalar> out = a.value() * b.value();
  return g.record(OpKind::kMatMul, {a, b}, std::move(out), [an = a.node(), bn = b.node()](auto) {
    return [an, bn](const Matrix<Scalar>& go) {
      if (an->requires_grad) detail::accumulate(*an, go * bn->value.transpose());
      if (bn->requires_grad) detail::accumulate(*bn, an->value.transpose() * go);
    };
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(Graph<Scalar>& g, const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().transpose();
  return g.record(OpKind::kTranspose, {a}, std::move(out), [an = a.node()](auto) {
    return [an](const Matrix<Scalar>& go) { detail::accumulate(*an, go.transpose()); };
  });
}

namespace detail {

template <typename Scalar, typename Combine, typename GradA, typename GradB>
Tensor<Scalar> binary(Graph<Scalar>& g, OpKind kind, const Tensor<Scalar>& a,
                      const Tensor<Scalar>& b, Combine combine, GradA grad_a, GradB grad_b) {
  if (!broadcastable(a, b)) {
    throw DimensionError(std::string(op_name(kind)) + ": incompatible shapes " + a.shape_str() +
                         " and " + b.shape_str());
  }
  const Index rows = std::max(a.rows(), b.rows());
  const Index cols = std::max(a.cols(), b.cols());
  Matrix<Scalar> av = broadcast(a.value(), rows, cols);
  Matrix<Scalar> bv = broadcast(b.value(), rows, cols);
  Matrix<Scalar> out = combine(av, bv);
  return g.record(kind, {a, b}, std::move(out),
                  [an = a.node(), bn = b.node(), av, bv, grad_a, grad_b](auto) {
                    return [=](const Matrix<Scalar>& go) {
                      if (an->requires_grad) accumulate(*an, reduce_to<Scalar>(grad_a(go, av, bv), an));
                      if (bn->requires_grad) accumulate(*bn, reduce_to<Scalar>(grad_b(go, av, bv), bn));
                    };
                  });
}

}  // namespace detail

/// Elementwise sum. Operands must share a shape, or one of them is 1x1.
template <typename Scalar>
Tensor<Scalar> add(Graph<Scalar>& g, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using M = Matrix<Scalar>;
  return detail::binary(
      g, OpKind::kAdd, a, b, [](const M& x, const M& y) -> M { return x + y; },
      [](const M& go, const M&, const M&) -> M { return go; },
      [](const M& go, const M&, const M&) -> M { return go; });
}

template <typename Scalar>
Tensor<Scalar> sub(Graph<Scalar>& g, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using M = Matrix<Scalar>;
  return detail::binary(
      g, OpKind::kSub, a, b, [](const M& x, const M& y) -> M { return x - y; },
      [](const M& go, const M&, const M&) -> M { return go; },
      [](const M& go, const M&, const M&) -> M { return -go; });
}

template <typename Scalar>
Tensor<Scalar> mul(Graph<Scalar>& g, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using M = Matrix<Scalar>;
  return detail::binary(
      g, OpKind::kMul, a, b, [](const M& x, const M& y) -> M { return x.cwiseProduct(y); },
      [](const M& go, const M&, const M& y) -> M { return go.cwiseProduct(y); },
      [](const M& go, const M& x, const M&) -> M { return go.cwiseProduct(x); });
}

template <typename Scalar>
Tensor<Scalar> scale(Graph<Scalar>& g, const Tensor<Scalar>& a, Scalar factor) {
  Matrix<Scalar> out = a.value() * factor;
  return g.record(OpKind::kScale, {a}, std::move(out), [an = a.node(), factor](auto) {
    return [an, factor](const Matrix<Scalar>& go) { detail::accumulate(*an, go * factor); };
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(Graph<Scalar>& g, const Tensor<Scalar>& a) {
  Matrix<Scalar> out =
      a.value().unaryExpr([](Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); });
  return g.record(OpKind::kSigmoid, {a}, out, [an = a.node()](auto on) {
    return [an, on](const Matrix<Scalar>& go) {
      const auto& y = on->value.array();
      detail::accumulate(*an, (go.array() * y * (Scalar(1) - y)).matrix());
    };
  });
}

template <typename Scalar>
Tensor<Scalar> tanh(Graph<Scalar>& g, const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  return g.record(OpKind::kTanh, {a}, std::move(out), [an = a.node()](auto on) {
    return [an, on](const Matrix<Scalar>& go) {
      const auto& y = on->value.array();
      detail::accumulate(*an, (go.array() * (Scalar(1) - y.square())).matrix());
    };
  });
}

template <typename Scalar>
Tensor<Scalar> relu(Graph<Scalar>& g, const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return g.record(OpKind::kRelu, {a}, std::move(out), [an = a.node()](auto) {
    return [an](const Matrix<Scalar>& go) {
      detail::accumulate(
          *an, (an->value.array() > Scalar(0)).select(go.array(), Scalar(0)).matrix());
    };
  });
}

/// Concatenates along the last (column) axis. All parts share a row count.
template <typename Scalar>
Tensor<Scalar> concat_cols(Graph<Scalar>& g, std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + parts.front().shape_str() + " vs " +
                           p.shape_str());
    }
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Tensor<Scalar>> inputs(parts.begin(), parts.end());
  return g.record(OpKind::kConcatCols, inputs, std::move(out), [inputs](auto) {
    return [inputs](const Matrix<Scalar>& go) {
      Index at = 0;
      for (const auto& p : inputs) {
        if (p.requires_grad()) detail::accumulate(*p.node(), go.middleCols(at, p.cols()));
        at += p.cols();
      }
    };
  });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(Graph<Scalar>& g, std::initializer_list<Tensor<Scalar>> parts) {
  std::vector<Tensor<Scalar>> v(parts);
  return concat_cols(g, std::span<const Tensor<Scalar>>(v));
}

/// Stacks along the row axis. All parts share a column count.
template <typename Scalar>
Tensor<Scalar> concat_rows(Graph<Scalar>& g, std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + parts.front().shape_str() + " vs " +
                           p.shape_str());
    }
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Tensor<Scalar>> inputs(parts.begin(), parts.end());
  return g.record(OpKind::kConcatRows, inputs, std::move(out), [inputs](auto) {
    return [inputs](const Matrix<Scalar>& go) {
      Index at = 0;
      for (const auto& p : inputs) {
        if (p.requires_grad()) detail::accumulate(*p.node(), go.middleRows(at, p.rows()));
        at += p.rows();
      }
    };
  });
}

template <typename Scalar>
Tensor<Scalar> sum(Graph<Scalar>& g, const Tensor<Scalar>& a, Axis axis = Axis::kAll) {
  // Accumulated in index order so results do not depend on vectorization.
  const Matrix<Scalar>& v = a.value();
  Matrix<Scalar> out = Matrix<Scalar>::Zero(axis == Axis::kCols ? v.rows() : 1,
                                            axis == Axis::kRows ? v.cols() : 1);
  for (Index r = 0; r < v.rows(); ++r) {
    for (Index c = 0; c < v.cols(); ++c) {
      switch (axis) {
        case Axis::kRows: out(0, c) += v(r, c); break;
        case Axis::kCols: out(r, 0) += v(r, c); break;
        case Axis::kAll: out(0, 0) += v(r, c); break;
      }
    }
  }
  return g.record(OpKind::kSum, {a}, std::move(out), [an = a.node(), axis](auto) {
    return [an, axis](const Matrix<Scalar>& go) {
      const Index r = an->value.rows(), c = an->value.cols();
      switch (axis) {
        case Axis::kRows: detail::accumulate(*an, go.replicate(r, 1)); break;
        case Axis::kCols: detail::accumulate(*an, go.replicate(1, c)); break;
        case Axis::kAll: detail::accumulate(*an, Matrix<Scalar>::Constant(r, c, go(0, 0))); break;
      }
    };
  });
}

template <typename Scalar>
Tensor<Scalar> mean(Graph<Scalar>& g, const Tensor<Scalar>& a, Axis axis = Axis::kAll) {
  const Index n = axis == Axis::kRows ? a.rows() : axis == Axis::kCols ? a.cols() : a.size();
  Tensor<Scalar> s = sum(g, a, axis);
  // Recorded as its own op so the graph reads as the caller wrote it.
  const Scalar inv = Scalar(1) / static_cast<Scalar>(n);
  Matrix<Scalar> out = s.value() / static_cast<Scalar>(n);
  return g.record(OpKind::kMean, {s}, std::move(out), [sn = s.node(), inv](auto) {
    return [sn, inv](const Matrix<Scalar>& go) { detail::accumulate(*sn, go * inv); };
  });
}

template <typename Scalar>
Tensor<Scalar> reshape(Graph<Scalar>& g, const Tensor<Scalar>& a, Index rows, Index cols) {
  if (rows * cols != a.size()) {
    throw DimensionError("reshape: cannot view " + a.shape_str() + " as " +
                         shape_string(rows, cols));
  }
  Matrix<Scalar> out = Eigen::Map<const Matrix<Scalar>>(a.value().data(), rows, cols);
  return g.record(OpKind::kReshape, {a}, std::move(out), [an = a.node()](auto) {
    return [an](const Matrix<Scalar>& go) {
      detail::accumulate(*an, Eigen::Map<const Matrix<Scalar>>(go.data(), an->value.rows(),
                                                                an->value.cols()));
    };
  });
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Tensor<Scalar> softmax(Graph<Scalar>& g, const Tensor<Scalar>& x) {
  if (x.cols() < 1) throw DimensionError("softmax: empty input");
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.value().row(r).maxCoeff();
    out.row(r) = (x.value().row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return g.record(OpKind::kSoftmax, {x}, std::move(out), [xn = x.node()](auto on) {
    return [xn, on](const Matrix<Scalar>& go) {
      const Matrix<Scalar>& y = on->value;
      Matrix<Scalar> dx(y.rows(), y.cols());
      for (Index r = 0; r < y.rows(); ++r) {
        const Scalar dot = y.row(r).dot(go.row(r));
        dx.row(r) = (y.row(r).array() * (go.row(r).array() - dot)).matrix();
      }
      detail::accumulate(*xn, dx);
    };
  });
}

/// u.v / (max(|u|, eps) * max(|v|, eps)) over the flattened operands.
template <typename Scalar>
Tensor<Scalar> cosine_similarity(Graph<Scalar>& g, const Tensor<Scalar>& u,
                                 const Tensor<Scalar>& v) {
  detail::require_same_shape("cosine_similarity", u, v);
  const Scalar eps = static_cast<Scalar>(kCosineEps);
  const Scalar nu_raw = u.value().norm();
  const Scalar nv_raw = v.value().norm();
  if (nu_raw <= eps && nv_raw <= eps) {
    throw DegenerateInputError("cosine_similarity: both operands have norm below epsilon");
  }
  const Scalar nu = std::max(nu_raw, eps);
  const Scalar nv = std::max(nv_raw, eps);
  const Scalar dot = u.value().cwiseProduct(v.value()).sum();
  const Scalar c = dot / (nu * nv);
  return g.record(
      OpKind::kCosine, {u, v}, Matrix<Scalar>::Constant(1, 1, c),
      [un = u.node(), vn = v.node(), nu, nv, c, u_clamped = nu_raw <= eps,
       v_clamped = nv_raw <= eps](auto) {
        return [=](const Matrix<Scalar>& go) {
          const Scalar s = go(0, 0);
          if (un->requires_grad) {
            Matrix<Scalar> du = vn->value / (nu * nv);
            if (!u_clamped) du -= un->value * (c / (nu * nu));
            detail::accumulate(*un, du * s);
          }
          if (vn->requires_grad) {
            Matrix<Scalar> dv = un->value / (nu * nv);
            if (!v_clamped) dv -= vn->value * (c / (nv * nv));
            detail::accumulate(*vn, dv * s);
          }
        };
      });
}

/// Scales each row to unit length; rows with norm below eps are divided by eps.
template <typename Scalar>
Tensor<Scalar> normalize_rows(Graph<Scalar>& g, const Tensor<Scalar>& a) {
  const Scalar eps = static_cast<Scalar>(kCosineEps);
  Matrix<Scalar> norms = a.value().rowwise().norm();
  Matrix<Scalar> denom = norms.cwiseMax(eps);
  Matrix<Scalar> out = denom.cwiseInverse().asDiagonal() * a.value();
  return g.record(OpKind::kNormalizeRows, {a}, std::move(out),
                  [an = a.node(), norms, denom, eps](auto on) {
                    return [=](const Matrix<Scalar>& go) {
                      const Matrix<Scalar>& y = on->value;
                      Matrix<Scalar> da(y.rows(), y.cols());
                      for (Index r = 0; r < y.rows(); ++r) {
                        if (norms(r, 0) > eps) {
                          const Scalar dot = y.row(r).dot(go.row(r));
                          da.row(r) = (go.row(r) - dot * y.row(r)) / denom(r, 0);
                        } else {
                          da.row(r) = go.row(r) / denom(r, 0);
                        }
                      }
                      detail::accumulate(*an, da);
                    };
                  });
}

/// Pairwise cosine similarities between the rows of a and the rows of b.
template <typename Scalar>
Tensor<Scalar> cosine_matrix(Graph<Scalar>& g, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("cosine_matrix: width mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  return matmul(g, normalize_rows(g, a), transpose(g, normalize_rows(g, b)));
}

/// max(0, alpha + s_neg - s_pos), elementwise over s_pos (s_neg is 1x1).
/// At the kink the inactive branch is taken, so the gradient there is zero.
template <typename Scalar>
Tensor<Scalar> hinge_margin(Graph<Scalar>& g, const Tensor<Scalar>& s_neg,
                            const Tensor<Scalar>& s_pos, Scalar alpha) {
  if (!(alpha >= Scalar(0))) throw ConfigError("hinge_margin: margin must be non-negative");
  if (s_neg.size() != 1) {
    throw DimensionError("hinge_margin: negative score must be 1x1, got " + s_neg.shape_str());
  }
  const Scalar neg = s_neg.item();
  Matrix<Scalar> raw = (alpha + neg - s_pos.value().array()).matrix();
  Matrix<Scalar> out = raw.cwiseMax(Scalar(0));
  return g.record(OpKind::kHinge, {s_neg, s_pos}, std::move(out),
                  [nn = s_neg.node(), pn = s_pos.node(), raw](auto) {
                    return [=](const Matrix<Scalar>& go) {
                      Matrix<Scalar> active =
                          (raw.array() > Scalar(0)).select(go.array(), Scalar(0)).matrix();
                      if (nn->requires_grad) {
                        detail::accumulate(*nn, Matrix<Scalar>::Constant(1, 1, active.sum()));
                      }
                      if (pn->requires_grad) detail::accumulate(*pn, -active);
                    };
                  });
}

/// Selects rows by index; repeated indices accumulate on backward.
template <typename Scalar>
Tensor<Scalar> gather_rows(Graph<Scalar>& g, const Tensor<Scalar>& a, std::vector<Index> rows) {
  if (rows.empty()) throw DimensionError("gather_rows: no indices");
  Matrix<Scalar> out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           a.shape_str());
    }
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  return g.record(OpKind::kGatherRows, {a}, std::move(out),
                  [an = a.node(), rows = std::move(rows)](auto) {
                    return [an, rows](const Matrix<Scalar>& go) {
                      Matrix<Scalar> da = Matrix<Scalar>::Zero(an->value.rows(), an->value.cols());
                      for (std::size_t i = 0; i < rows.size(); ++i) {
                        da.row(rows[i]) += go.row(static_cast<Index>(i));
                      }
                      detail::accumulate(*an, da);
                    };
                  });
}

template <typename Scalar>
Tensor<Scalar> row(Graph<Scalar>& g, const Tensor<Scalar>& a, Index r) {
  return gather_rows(g, a, std::vector<Index>{r});
}

/// Element (row, col) pairs gathered into a 1xK row.
struct Element {
  Index row = 0;
  Index col = 0;
};

template <typename Scalar>
Tensor<Scalar> gather(Graph<Scalar>& g, const Tensor<Scalar>& a, std::vector<Element> at) {
  if (at.empty()) throw DimensionError("gather: no indices");
  Matrix<Scalar> out(1, static_cast<Index>(at.size()));
  for (std::size_t i = 0; i < at.size(); ++i) {
    if (at[i].row < 0 || at[i].row >= a.rows() || at[i].col < 0 || at[i].col >= a.cols()) {
      throw DimensionError("gather: element out of range for " + a.shape_str());
    }
    out(0, static_cast<Index>(i)) = a.value()(at[i].row, at[i].col);
  }
  return g.record(OpKind::kGatherElements, {a}, std::move(out),
                  [an = a.node(), at = std::move(at)](auto) {
                    return [an, at](const Matrix<Scalar>& go) {
                      Matrix<Scalar> da = Matrix<Scalar>::Zero(an->value.rows(), an->value.cols());
                      for (std::size_t i = 0; i < at.size(); ++i) {
                        da(at[i].row, at[i].col) += go(0, static_cast<Index>(i));
                      }
                      detail::accumulate(*an, da);
                    };
                  });
}

/// Position of the maximum in row-major order; ties go to the first index.
template <typename Derived>
Index argmax_first(const Eigen::DenseBase<Derived>& m) {
  Index best = 0;
  for (Index i = 1; i < m.size(); ++i) {
    if (m(i / m.cols(), i % m.cols()) > m(best / m.cols(), best % m.cols())) best = i;
  }
  return best;
}

/// Maximum over all elements. Gradient goes to the first maximal entry.
template <typename Scalar>
Tensor<Scalar> max(Graph<Scalar>& g, const Tensor<Scalar>& a) {
  const Index at = argmax_first(a.value());
  const Scalar v = a.value().data()[at];
  return g.record(OpKind::kMax, {a}, Matrix<Scalar>::Constant(1, 1, v), [an = a.node(), at](auto) {
    return [an, at](const Matrix<Scalar>& go) {
      Matrix<Scalar> da = Matrix<Scalar>::Zero(an->value.rows(), an->value.cols());
      da.data()[at] = go(0, 0);
      detail::accumulate(*an, da);
    };
  });
}

/// Mean over rows of -log softmax(logits_r)[target_r].
template <typename Scalar>
Tensor<Scalar> cross_entropy(Graph<Scalar>& g, const Tensor<Scalar>& logits,
                             std::vector<Index> targets) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         logits.shape_str() + " logits");
  }
  Matrix<Scalar> probs(logits.rows(), logits.cols());
  Scalar total = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const Index t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= logits.cols()) {
      throw DataError("cross_entropy: target " + std::to_string(t) + " out of range [0, " +
                      std::to_string(logits.cols()) + ")");
    }
    const auto row = logits.value().row(r);
    const Scalar m = row.maxCoeff();
    const Scalar lse = m + std::log((row.array() - m).exp().sum());
    probs.row(r) = (row.array() - lse).exp().matrix();
    total += lse - row(t);
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(logits.rows());
  return g.record(OpKind::kCrossEntropy, {logits}, Matrix<Scalar>::Constant(1, 1, total * inv),
                  [ln = logits.node(), probs, targets = std::move(targets), inv](auto) {
                    return [=](const Matrix<Scalar>& go) {
                      Matrix<Scalar> d = probs;
                      for (std::size_t r = 0; r < targets.size(); ++r) {
                        d(static_cast<Index>(r), targets[r]) -= Scalar(1);
                      }
                      detail::accumulate(*ln, d * (inv * go(0, 0)));
                    };
                  });
}

/// x * w + b, with the 1xN bias added to every row.
template <typename Scalar>
Tensor<Scalar> linear(Graph<Scalar>& g, const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                      const Tensor<Scalar>& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("linear: incompatible shapes x" + x.shape_str() + " w" + w.shape_str() +
                         " b" + b.shape_str());
  }
  Matrix<Scalar> out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return g.record(OpKind::kLinear, {x, w, b}, std::move(out),
                  [xn = x.node(), wn = w.node(), bn = b.node()](auto) {
                    return [=](const Matrix<Scalar>& go) {
                      if (xn->requires_grad) detail::accumulate(*xn, go * wn->value.transpose());
                      if (wn->requires_grad) detail::accumulate(*wn, xn->value.transpose() * go);
                      if (bn->requires_grad) detail::accumulate(*bn, go.colwise().sum());
                    };
                  });
}

/// Single-layer unidirectional LSTM over a batch of padded sequences.
///
/// `inputs` stacks N sequences of `steps` rows each (row n*steps + t).
/// Sequence n is valid for t < lengths[n]; padded output rows are zero and
/// padded steps leave the state untouched. Gate column blocks are ordered
/// input, forget, output, candidate.
template <typename Scalar>
Tensor<Scalar> lstm(Graph<Scalar>& g, const Tensor<Scalar>& inputs, const Tensor<Scalar>& w_input,
                    const Tensor<Scalar>& w_hidden, const Tensor<Scalar>& bias,
                    std::vector<Index> lengths, Index steps) {
  const Index n = static_cast<Index>(lengths.size());
  const Index d = inputs.cols();
  const Index h = w_hidden.rows();
  if (n == 0 || steps < 1 || inputs.rows() != n * steps || w_input.rows() != d ||
      w_input.cols() != 4 * h || w_hidden.cols() != 4 * h || bias.rows() != 1 ||
      bias.cols() != 4 * h) {
    throw DimensionError("lstm: incompatible shapes inputs" + inputs.shape_str() + " w_input" +
                         w_input.shape_str() + " w_hidden" + w_hidden.shape_str() + " bias" +
                         bias.shape_str());
  }
  for (Index len : lengths) {
    if (len < 1 || len > steps) throw DimensionError("lstm: sequence length out of range");
  }
  using M = Matrix<Scalar>;
  using Strided = Eigen::Map<const M, 0, Eigen::OuterStride<>>;

  struct Step {
    M mask;  // N x 1
    M h_prev, c_prev, i, f, o, cand, tanh_c;
  };
  auto saved = std::make_shared<std::vector<Step>>(static_cast<std::size_t>(steps));
  M hs = M::Zero(n, h), cs = M::Zero(n, h);
  M out = M::Zero(n * steps, h);
  for (Index t = 0; t < steps; ++t) {
    Step& st = (*saved)[static_cast<std::size_t>(t)];
    st.mask.resize(n, 1);
    for (Index s = 0; s < n; ++s) st.mask(s, 0) = t < lengths[static_cast<std::size_t>(s)] ? 1 : 0;
    Strided xt(inputs.value().data() + t * d, n, d, Eigen::OuterStride<>(steps * d));
    M gates = xt * w_input.value() + hs * w_hidden.value();
    gates.rowwise() += bias.value().row(0);
    auto sig = [](const auto& z) { return (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix(); };
    st.h_prev = hs;
    st.c_prev = cs;
    st.i = sig(gates.middleCols(0, h));
    st.f = sig(gates.middleCols(h, h));
    st.o = sig(gates.middleCols(2 * h, h));
    st.cand = gates.middleCols(3 * h, h).array().tanh().matrix();
    M c = (st.f.array() * cs.array() + st.i.array() * st.cand.array()).matrix();
    st.tanh_c = c.array().tanh().matrix();
    M hn = (st.o.array() * st.tanh_c.array()).matrix();
    for (Index s = 0; s < n; ++s) {
      if (st.mask(s, 0) == 0) continue;
      hs.row(s) = hn.row(s);
      cs.row(s) = c.row(s);
      out.row(s * steps + t) = hn.row(s);
    }
  }
  return g.record(
      OpKind::kLstm, {inputs, w_input, w_hidden, bias}, std::move(out),
      [xn = inputs.node(), wi = w_input.node(), wh = w_hidden.node(), bn = bias.node(), saved, n,
       d, h, steps](auto) {
        return [=](const M& go) {
          using Strided = Eigen::Map<const M, 0, Eigen::OuterStride<>>;
          M dh_next = M::Zero(n, h), dc_next = M::Zero(n, h);
          M d_wi = M::Zero(d, 4 * h), d_wh = M::Zero(h, 4 * h), d_b = M::Zero(1, 4 * h);
          M dx = M::Zero(n * steps, d);
          M d_gates(n, 4 * h);
          for (Index t = steps - 1; t >= 0; --t) {
            const Step& st = (*saved)[static_cast<std::size_t>(t)];
            Strided go_t(go.data() + t * h, n, h, Eigen::OuterStride<>(steps * h));
            const auto m = st.mask.col(0).array();
            M dh = go_t + dh_next;
            dh.array().colwise() *= m;
            M dc = dc_next;
            dc.array().colwise() *= m;
            dc.array() += dh.array() * st.o.array() * (Scalar(1) - st.tanh_c.array().square());
            const auto di = dc.array() * st.cand.array();
            const auto df = dc.array() * st.c_prev.array();
            const auto d_o = dh.array() * st.tanh_c.array();
            const auto dcand = dc.array() * st.i.array();
            d_gates.middleCols(0, h) = (di * st.i.array() * (Scalar(1) - st.i.array())).matrix();
            d_gates.middleCols(h, h) = (df * st.f.array() * (Scalar(1) - st.f.array())).matrix();
            d_gates.middleCols(2 * h, h) =
                (d_o * st.o.array() * (Scalar(1) - st.o.array())).matrix();
            d_gates.middleCols(3 * h, h) =
                (dcand * (Scalar(1) - st.cand.array().square())).matrix();
            Strided xt(xn->value.data() + t * d, n, d, Eigen::OuterStride<>(steps * d));
            if (wi->requires_grad) d_wi.noalias() += xt.transpose() * d_gates;
            if (wh->requires_grad) d_wh.noalias() += st.h_prev.transpose() * d_gates;
            d_b += d_gates.colwise().sum();
            if (xn->requires_grad) {
              M dxt = d_gates * wi->value.transpose();
              for (Index s = 0; s < n; ++s) dx.row(s * steps + t) = dxt.row(s);
            }
            // Padded steps pass state gradients straight through.
            M dh_prev = d_gates * wh->value.transpose();
            M dc_prev = (dc.array() * st.f.array()).matrix();
            for (Index s = 0; s < n; ++s) {
              if (st.mask(s, 0) == 0) {
                dh_prev.row(s) = dh_next.row(s);
                dc_prev.row(s) = dc_next.row(s);
              }
            }
            dh_next = std::move(dh_prev);
            dc_next = std::move(dc_prev);
          }
          if (xn->requires_grad) detail::accumulate(*xn, dx);
          if (wi->requires_grad) detail::accumulate(*wi, d_wi);
          if (wh->requires_grad) detail::accumulate(*wh, d_wh);
          if (bn->requires_grad) detail::accumulate(*bn, d_b);
        };
      });
}

/// Single-query scaled dot-product pooling over each row segment:
/// out_k = softmax(R_k q^T / sqrt(H))^T R_k for R_k = rows of segment k.
template <typename Scalar>
Tensor<Scalar> attention_pool_segments(Graph<Scalar>& g, const Tensor<Scalar>& rows,
                                       const Tensor<Scalar>& query,
                                       std::vector<RowSegment> segments) {
  const Index h = rows.cols();
  if (query.rows() != 1 || query.cols() != h) {
    throw DimensionError("attention_pool: query " + query.shape_str() + " does not match rows " +
                         rows.shape_str());
  }
  if (segments.empty()) throw DimensionError("attention_pool: no segments");
  for (const auto& s : segments) {
    if (s.length < 1) throw EmptySequenceError("attention_pool: empty sequence");
    if (s.start < 0 || s.start + s.length > rows.rows()) {
      throw DimensionError("attention_pool: segment outside " + rows.shape_str());
    }
  }
  using M = Matrix<Scalar>;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(h));
  auto weights = std::make_shared<std::vector<M>>();
  weights->reserve(segments.size());
  M out(static_cast<Index>(segments.size()), h);
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto block = rows.value().middleRows(segments[k].start, segments[k].length);
    M scores = (block * query.value().transpose()).transpose() * inv_sqrt;  // 1 x L
    const Scalar m = scores.maxCoeff();
    M w = (scores.array() - m).exp().matrix();
    w /= w.sum();
    out.row(static_cast<Index>(k)) = w * block;
    weights->push_back(std::move(w));
  }
  return g.record(OpKind::kAttentionPool, {rows, query}, std::move(out),
                  [rn = rows.node(), qn = query.node(), segments = std::move(segments), weights,
                   inv_sqrt](auto) {
                    return [=](const M& go) {
                      M d_rows = M::Zero(rn->value.rows(), rn->value.cols());
                      M d_query = M::Zero(1, qn->value.cols());
                      for (std::size_t k = 0; k < segments.size(); ++k) {
                        const auto& seg = segments[k];
                        const auto block = rn->value.middleRows(seg.start, seg.length);
                        const M& w = (*weights)[k];
                        const auto gk = go.row(static_cast<Index>(k));
                        M dw = (block * gk.transpose()).transpose();  // 1 x L
                        const Scalar wdw = w.row(0).dot(dw.row(0));
                        M dscore = (w.array() * (dw.array() - wdw)).matrix() * inv_sqrt;
                        d_rows.middleRows(seg.start, seg.length).noalias() +=
                            w.transpose() * gk + dscore.transpose() * qn->value;
                        d_query.noalias() += dscore * block;
                      }
                      if (rn->requires_grad) detail::accumulate(*rn, d_rows);
                      if (qn->requires_grad) detail::accumulate(*qn, d_query);
                    };
                  });
}

}  // namespace mlva

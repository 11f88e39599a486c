// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mlva/errors.hpp"

namespace mlva {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << '[' << rows << 'x' << cols << ']';
  return os.str();
}

namespace detail {

template <typename Scalar>
struct TensorNode {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;  // empty until a gradient is first written
  bool requires_grad = false;
  bool is_leaf = true;
  std::int64_t node_id = -1;
  const void* graph = nullptr;
};

template <typename Scalar>
using NodePtr = std::shared_ptr<TensorNode<Scalar>>;

template <typename Scalar, typename Derived>
void accumulate(TensorNode<Scalar>& node, const Eigen::MatrixBase<Derived>& delta) {
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = delta;
  } else {
    node.grad += delta;
  }
}

}  // namespace detail

/// Dense 2-D tensor handle. Vectors are 1xN rows and scalars are 1x1.
///
/// Copies share the underlying node, so a parameter held in a ParameterSet and
/// the same parameter referenced inside a Graph see the same gradient buffer.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;

  Tensor() = default;

  explicit Tensor(Matrix<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode<Scalar>>()) {
    if (value.rows() <= 0 || value.cols() <= 0) {
      throw DimensionError("tensor extents must be positive, got " +
                           shape_string(value.rows(), value.cols()));
    }
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(Matrix<Scalar>::Zero(rows, cols), requires_grad);
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    Matrix<Scalar> m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m), requires_grad);
  }

  static Tensor row(std::initializer_list<Scalar> values, bool requires_grad = false) {
    Matrix<Scalar> m(1, static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) m(0, i++) = v;
    return Tensor(std::move(m), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  std::string shape_str() const { return shape_string(rows(), cols()); }

  const Matrix<Scalar>& value() const { return node_->value; }

  /// Mutable access for leaves (optimizer updates, finite differences).
  Matrix<Scalar>& mutable_value() {
    if (!node_->is_leaf) throw Error("cannot mutate the value of a recorded graph output");
    return node_->value;
  }

  Scalar item() const {
    if (size() != 1) throw DimensionError("item() requires a 1x1 tensor, got " + shape_str());
    return node_->value(0, 0);
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  std::int64_t node_id() const { return node_->node_id; }

  bool has_grad() const { return node_->grad.size() != 0; }

  /// Gradient buffer, zeros when nothing has been accumulated yet.
  Matrix<Scalar> grad() const {
    if (!has_grad()) return Matrix<Scalar>::Zero(rows(), cols());
    return node_->grad;
  }

  void zero_grad() { node_->grad.resize(0, 0); }

  const detail::NodePtr<Scalar>& node() const { return node_; }

 private:
  template <typename S>
  friend class Graph;

  explicit Tensor(detail::NodePtr<Scalar> node) : node_(std::move(node)) {}

  detail::NodePtr<Scalar> node_;
};

enum class OpKind {
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kSigmoid,
  kTanh,
  kRelu,
  kConcatCols,
  kConcatRows,
  kSum,
  kMean,
  kReshape,
  kSoftmax,
  kCosine,
  kNormalizeRows,
  kHinge,
  kGatherRows,
  kGatherElements,
  kMax,
  kCrossEntropy,
  kLinear,
  kLstm,
  kAttentionPool,
};

const char* op_name(OpKind kind);

/// Ordered record of the operations of one forward pass.
///
/// Records are appended in execution order, so the list is topologically
/// sorted by construction. backward() walks it once in reverse.
template <typename Scalar>
class Graph {
 public:
  using NodePtr = detail::NodePtr<Scalar>;
  using BackwardFn = std::function<void(const Matrix<Scalar>& out_grad)>;

  struct Record {
    OpKind kind;
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }

  /// Appends an operation. `make_backward` receives the output node and
  /// returns the closure that propagates the output gradient to the inputs.
  template <typename MakeBackward>
  Tensor<Scalar> record(OpKind kind, std::vector<Tensor<Scalar>> inputs, Matrix<Scalar> value,
                        MakeBackward&& make_backward) {
    if (!value.allFinite()) {
      throw NumericalError(std::string("non-finite value produced by ") + op_name(kind) +
                           " (node " + std::to_string(records_.size()) + ")");
    }
    auto out = std::make_shared<detail::TensorNode<Scalar>>();
    out->value = std::move(value);
    out->is_leaf = false;
    out->graph = this;
    out->node_id = static_cast<std::int64_t>(records_.size());
    Record rec{kind, {}, out, {}};
    rec.inputs.reserve(inputs.size());
    for (const auto& t : inputs) {
      if (!t.defined()) throw Error(std::string("undefined input to ") + op_name(kind));
      if (!t.node()->is_leaf && t.node()->graph != this) {
        throw Error(std::string("input of ") + op_name(kind) + " belongs to another graph");
      }
      out->requires_grad = out->requires_grad || t.requires_grad();
      rec.inputs.push_back(t.node());
    }
    if (out->requires_grad) rec.backward = make_backward(out);
    records_.push_back(std::move(rec));
    return Tensor<Scalar>(out);
  }

  /// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
  /// Leaf gradients add up across calls; intermediate buffers are reset.
  void backward(const Tensor<Scalar>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw DimensionError("backward requires a scalar loss, got " +
                           (loss.defined() ? loss.shape_str() : std::string("undefined")));
    }
    const auto& node = loss.node();
    if (node->is_leaf || node->graph != this) {
      throw Error("backward: loss was not produced by this graph");
    }
    for (auto& rec : records_) rec.output->grad.resize(0, 0);
    if (!node->requires_grad) return;
    node->grad = Matrix<Scalar>::Ones(1, 1);
    for (auto k = static_cast<std::int64_t>(node->node_id); k >= 0; --k) {
      auto& rec = records_[static_cast<std::size_t>(k)];
      if (!rec.backward || rec.output->grad.size() == 0) continue;
      rec.backward(rec.output->grad);
    }
  }

  /// Checks that every input was produced by an earlier record or is a leaf.
  bool is_topologically_ordered() const {
    for (std::size_t k = 0; k < records_.size(); ++k) {
      for (const auto& in : records_[k].inputs) {
        if (!in->is_leaf && in->node_id >= static_cast<std::int64_t>(k)) return false;
      }
    }
    return true;
  }

 private:
  std::vector<Record> records_;
};

inline const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kRelu: return "relu";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kCosine: return "cosine_similarity";
    case OpKind::kNormalizeRows: return "normalize_rows";
    case OpKind::kHinge: return "hinge_margin";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kGatherElements: return "gather";
    case OpKind::kMax: return "max";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kLinear: return "linear";
    case OpKind::kLstm: return "lstm";
    case OpKind::kAttentionPool: return "attention_pool";
  }
  return "unknown";
}

}  // namespace mlva

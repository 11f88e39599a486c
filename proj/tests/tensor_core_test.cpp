// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mlva/adamw.hpp"
#include "mlva/gradcheck.hpp"
#include "mlva/ops.hpp"
#include "test_support.hpp"

namespace mlva {
namespace {

using testing::Gen;
using T = Tensor<double>;
using G = Graph<double>;
using M = Matrix<double>;

constexpr int kSeeds = 100;
constexpr double kTol = 1e-4;

M mat(std::initializer_list<std::initializer_list<double>> rows) {
  M m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index r = 0;
  for (const auto& row : rows) {
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

// Weighted sum of an op output so every output entry gets a distinct cotangent.
T weighted_sum(G& g, const T& out, std::uint64_t seed) {
  Gen gen(seed ^ 0x9e3779b97f4a7c15ULL);
  T w(gen.matrix(out.rows(), out.cols()));
  return sum(g, mul(g, out, w));
}

using OpBuilder = std::function<T(G&, std::vector<T>&)>;

double check_op(std::vector<T> inputs, const OpBuilder& op, std::uint64_t seed) {
  LossFn<double> loss = [&](G& g) { return weighted_sum(g, op(g, inputs), seed); };
  return finite_diff_check<double>(loss, std::span<T>(inputs));
}

// Runs `make` for kSeeds seeds and checks the largest relative error.
void property_over_seeds(const std::string& name,
                         const std::function<std::vector<T>(Gen&)>& make,
                         const OpBuilder& op) {
  double worst = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Gen gen(static_cast<std::uint64_t>(seed));
    worst = std::max(worst, check_op(make(gen), op, static_cast<std::uint64_t>(seed)));
  }
  EXPECT_LT(worst, kTol) << name;
}

T leaf(const M& m) { return T(m, true); }

TEST(Matmul, IdentityLeavesInputUnchanged) {
  G g;
  M x = mat({{1.5, -2}, {0.25, 4}});
  T out = matmul(g, T(M::Identity(2, 2)), T(x));
  EXPECT_EQ(out.value(), x);
}

TEST(Matmul, HandArithmetic) {
  G g;
  T out = matmul(g, T(mat({{1, 2}, {3, 4}})), T(mat({{1}, {1}})));
  EXPECT_EQ(out.value(), mat({{3}, {7}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  G g;
  try {
    matmul(g, T(M::Ones(2, 3)), T(M::Ones(2, 3)));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, RandomGradientMatchesFiniteDifferences) {
  Gen gen(7);
  double err = check_op({leaf(gen.matrix(3, 4)), leaf(gen.matrix(4, 2))},
                        [](G& g, std::vector<T>& in) { return matmul(g, in[0], in[1]); }, 7);
  EXPECT_LT(err, kTol);
}

TEST(Pointwise, SigmoidOfZeroIsHalf) {
  G g;
  EXPECT_EQ(sigmoid(g, T::scalar(0.0)).item(), 0.5);
}

TEST(Pointwise, ReluOfNegativeIsZeroWithZeroGradient) {
  G g;
  T x = T::scalar(-3.0, true);
  T y = relu(g, x);
  EXPECT_EQ(y.item(), 0.0);
  g.backward(y);
  EXPECT_EQ(x.grad()(0, 0), 0.0);
}

TEST(Pointwise, TanhGradientOnFiveVector) {
  Gen gen(3);
  double err = check_op({leaf(gen.matrix(1, 5))},
                        [](G& g, std::vector<T>& in) { return tanh(g, in[0]); }, 3);
  EXPECT_LT(err, kTol);
}

TEST(Pointwise, IncompatibleShapesRaise) {
  G g;
  EXPECT_THROW(add(g, T(M::Ones(2, 3)), T(M::Ones(3, 2))), DimensionError);
  EXPECT_THROW(mul(g, T(M::Ones(2, 3)), T(M::Ones(1, 3))), DimensionError);
}

TEST(Pointwise, ScalarBroadcasts) {
  G g;
  T out = add(g, T(mat({{1, 2}, {3, 4}})), T::scalar(10.0));
  EXPECT_EQ(out.value(), mat({{11, 12}, {13, 14}}));
}

TEST(Softmax, UniformInputGivesUniformOutput) {
  G g;
  T out = softmax(g, T::row({0.0, 0.0, 0.0}));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(out.value()(0, i), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  G g;
  T out = softmax(g, T::row({1000.0, 0.0}));
  EXPECT_EQ(out.value()(0, 0), 1.0);
  EXPECT_EQ(out.value()(0, 1), 0.0);
}

TEST(Softmax, JacobianOnFourVector) {
  Gen gen(11);
  double err = check_op({leaf(gen.matrix(1, 4))},
                        [](G& g, std::vector<T>& in) { return softmax(g, in[0]); }, 11);
  EXPECT_LT(err, kTol);
}

TEST(Softmax, SumsToOneAndIsPermutationEquivariant) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Gen gen(static_cast<std::uint64_t>(seed));
    const Index n = gen.index(1, 9);
    M x = gen.matrix(1, n) * 5.0;
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen.engine());
    M px(1, n);
    for (Index i = 0; i < n; ++i) px(0, i) = x(0, perm[static_cast<std::size_t>(i)]);
    G g;
    M s = softmax(g, T(x)).value();
    M ps = softmax(g, T(px)).value();
    EXPECT_NEAR(s.sum(), 1.0, 1e-6);
    for (Index i = 0; i < n; ++i) {
      EXPECT_GT(s(0, i), 0.0);
      EXPECT_NEAR(ps(0, i), s(0, perm[static_cast<std::size_t>(i)]), 1e-15);
    }
  }
}

TEST(Cosine, SelfSimilarityIsOne) {
  G g;
  Gen gen(5);
  T x(gen.matrix(1, 6));
  EXPECT_NEAR(cosine_similarity(g, x, x).item(), 1.0, 1e-12);
}

TEST(Cosine, OrthogonalIsZero) {
  G g;
  EXPECT_EQ(cosine_similarity(g, T::row({1.0, 0.0}), T::row({0.0, 1.0})).item(), 0.0);
}

TEST(Cosine, ScaleInvariantForPositiveFactors) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Gen gen(static_cast<std::uint64_t>(seed));
    const Index d = gen.index(1, 8);
    M u = gen.matrix(1, d), v = gen.matrix(1, d);
    const double a = gen.uniform(0.01, 50.0), b = gen.uniform(0.01, 50.0);
    G g;
    const double base = cosine_similarity(g, T(u), T(v)).item();
    EXPECT_NEAR(cosine_similarity(g, T(M(a * u)), T(M(b * v))).item(), base, 1e-6);
    EXPECT_NEAR(cosine_similarity(g, T(M(2.0 * u)), T(M(3.0 * v))).item(), base, 1e-6);
    EXPECT_LE(std::abs(base), 1.0 + 1e-6);
  }
}

TEST(Cosine, BothNormsBelowEpsilonRaise) {
  G g;
  EXPECT_THROW(cosine_similarity(g, T::row({0.0, 0.0}), T::row({1e-10, 0.0})),
               DegenerateInputError);
}

TEST(Cosine, OneDegenerateOperandUsesClampedNorm) {
  G g;
  const double c = cosine_similarity(g, T::row({0.0, 0.0}), T::row({1.0, 0.0})).item();
  EXPECT_EQ(c, 0.0);
}

TEST(Hinge, MarginSatisfiedGivesZero) {
  G g;
  EXPECT_EQ(hinge_margin(g, T::scalar(0.5), T::scalar(0.9), 0.2).item(), 0.0);
}

TEST(Hinge, DirectFormula) {
  G g;
  EXPECT_NEAR(hinge_margin(g, T::scalar(0.5), T::scalar(0.4), 0.2).item(), 0.3, 1e-15);
}

TEST(Hinge, KinkHasZeroGradient) {
  G g;
  T neg = T::scalar(0.37, true), pos = T::scalar(0.37, true);
  T out = hinge_margin(g, neg, pos, 0.0);
  EXPECT_EQ(out.item(), 0.0);
  g.backward(out);
  EXPECT_EQ(neg.grad()(0, 0), 0.0);
  EXPECT_EQ(pos.grad()(0, 0), 0.0);
}

TEST(Hinge, NegativeMarginIsConfigError) {
  G g;
  EXPECT_THROW(hinge_margin(g, T::scalar(0.0), T::scalar(0.0), -0.1), ConfigError);
}

TEST(Hinge, MonotoneInBothScores) {
  for (int seed = 0; seed < 1000; ++seed) {
    Gen gen(static_cast<std::uint64_t>(seed));
    const double alpha = gen.uniform(0.0, 1.0);
    const double neg = gen.uniform(-1, 1), pos = gen.uniform(-1, 1), d = gen.uniform(0, 1);
    G g;
    auto h = [&](double n, double p) {
      return hinge_margin(g, T::scalar(n), T::scalar(p), alpha).item();
    };
    EXPECT_LE(h(neg, pos), h(neg + d, pos));
    EXPECT_GE(h(neg, pos), h(neg, pos + d));
  }
}

TEST(Backward, SumGivesOnes) {
  G g;
  T x(M::Random(3, 4), true);
  g.backward(sum(g, x));
  EXPECT_EQ(x.grad(), M::Ones(3, 4));
}

TEST(Backward, CosineAtEqualVectorsIsStationary) {
  Gen gen(9);
  M base = gen.matrix(1, 5);
  T u(base, true), v(base, true);
  G g;
  g.backward(cosine_similarity(g, u, v));
  EXPECT_LT(u.grad().cwiseAbs().maxCoeff(), 1e-12);
  // Finite differences agree that the gradient vanishes.
  std::vector<T> params{u};
  LossFn<double> loss = [&](G& gg) { return cosine_similarity(gg, params[0], v); };
  params[0].zero_grad();
  for (Index i = 0; i < 5; ++i) {
    auto& x = params[0].mutable_value().data()[i];
    const double saved = x;
    x = saved + 1e-5;
    G g1;
    const double up = loss(g1).item();
    x = saved - 1e-5;
    G g2;
    const double down = loss(g2).item();
    x = saved;
    EXPECT_LT(std::abs(up - down) / 2e-5, 1e-6);
  }
}

TEST(Backward, TwoCallsDoubleTheGradient) {
  G g;
  Gen gen(4);
  T x(gen.matrix(2, 3), true);
  T loss = sum(g, mul(g, x, x));
  g.backward(loss);
  M once = x.grad();
  g.backward(loss);
  EXPECT_EQ(x.grad(), M(2.0 * once));
}

TEST(Backward, NonScalarLossRaises) {
  G g;
  T x(M::Ones(2, 2), true);
  EXPECT_THROW(g.backward(scale(g, x, 2.0)), DimensionError);
}

TEST(Backward, FanOutSumsBothContributions) {
  G g;
  T x = T::row({1.0, 2.0, 3.0}, true);
  T a = scale(g, x, 2.0);
  T b = mul(g, x, x);
  g.backward(sum(g, add(g, a, b)));
  EXPECT_EQ(x.grad(), mat({{4.0, 6.0, 8.0}}));
}

TEST(Graph, RecordsAreTopologicallyOrdered) {
  G g;
  Gen gen(2);
  T x(gen.matrix(2, 3), true), w(gen.matrix(3, 3), true);
  T h = tanh(g, matmul(g, x, w));
  T y = sum(g, mul(g, h, h));
  EXPECT_TRUE(g.is_topologically_ordered());
  for (std::size_t k = 0; k < g.records().size(); ++k) {
    EXPECT_EQ(g.records()[k].output->node_id, static_cast<std::int64_t>(k));
  }
  EXPECT_EQ(y.node_id(), static_cast<std::int64_t>(g.size()) - 1);
}

TEST(Graph, NonFiniteOutputNamesTheOp) {
  G g;
  try {
    scale(g, T::scalar(1e300), 1e300);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

TEST(Tensor, ShapeAndGradInvariants) {
  T x(M::Ones(2, 5), true);
  EXPECT_EQ(x.size(), 10);
  EXPECT_EQ(x.grad().rows(), 2);
  EXPECT_EQ(x.grad().cols(), 5);
  EXPECT_THROW(T(M(0, 3)), DimensionError);
}

TEST(AdamW, ZeroGradientWithoutDecayIsFixedPoint) {
  Gen gen(1);
  std::vector<T> params{T(gen.matrix(2, 2), true)};
  const M before = params[0].value();
  AdamWState<double> st{std::span<const T>(params)};
  std::vector<M> grads{M::Zero(2, 2)};
  AdamWOptions opt;
  opt.weight_decay = 0.0;
  adamw_step(std::span<T>(params), std::span<const M>(grads), st, opt);
  EXPECT_EQ(params[0].value(), before);
}

TEST(AdamW, ZeroGradientDecayOnly) {
  std::vector<T> params{T(mat({{2.0, -4.0}}), true)};
  AdamWState<double> st{std::span<const T>(params)};
  std::vector<M> grads{M::Zero(1, 2)};
  AdamWOptions opt;
  opt.lr = 0.1;
  opt.weight_decay = 0.01;
  adamw_step(std::span<T>(params), std::span<const M>(grads), st, opt);
  EXPECT_NEAR(params[0].value()(0, 0), 2.0 * 0.999, 1e-15);
  EXPECT_NEAR(params[0].value()(0, 1), -4.0 * 0.999, 1e-15);
}

TEST(AdamW, TwoStepsMatchHandRecurrence) {
  std::vector<T> params{T::scalar(1.0, true)};
  AdamWState<double> st{std::span<const T>(params)};
  std::vector<M> grads{M::Ones(1, 1)};
  AdamWOptions opt;  // lr 1e-4, b1 0.9, b2 0.98, wd 0.01, eps 1e-8
  adamw_step(std::span<T>(params), std::span<const M>(grads), st, opt);
  adamw_step(std::span<T>(params), std::span<const M>(grads), st, opt);
  // Hand recurrence for a constant gradient of 1.
  double p = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    p -= 1e-4 * 0.01 * p;
    m = 0.9 * m + 0.1;
    v = 0.98 * v + 0.02;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.98, t));
    p -= 1e-4 * mhat / (std::sqrt(vhat) + 1e-8);
  }
  EXPECT_NEAR(params[0].item(), p, 1e-15);
  // Frozen: with a unit gradient each step moves by lr / (1 + eps) after decay.
  EXPECT_NEAR(params[0].item(), 0.999798000103, 1e-12);
  EXPECT_EQ(st.step, 2);
}

TEST(AdamW, ShapeMismatchRaises) {
  std::vector<T> params{T(M::Ones(2, 2), true)};
  AdamWState<double> st{std::span<const T>(params)};
  std::vector<M> grads{M::Ones(2, 3)};
  EXPECT_THROW(adamw_step(std::span<T>(params), std::span<const M>(grads), st), DimensionError);
}

TEST(FiniteDiffCheck, ExactQuadratic) {
  Gen gen(8);
  std::vector<T> params{T(gen.matrix(1, 6), true)};
  LossFn<double> loss = [&](G& g) { return scale(g, sum(g, mul(g, params[0], params[0])), 0.5); };
  EXPECT_LT(finite_diff_check<double>(loss, std::span<T>(params)), 1e-8);
}

TEST(FiniteDiffCheck, ConstantFunctionHasZeroError) {
  std::vector<T> params{T(M::Ones(2, 2), true)};
  T c = T::scalar(3.0);
  LossFn<double> loss = [&](G& g) { return add(g, scale(g, sum(g, params[0]), 0.0), c); };
  EXPECT_EQ(finite_diff_check<double>(loss, std::span<T>(params)), 0.0);
  EXPECT_EQ(params[0].grad(), M::Zero(2, 2));
}

// Every registered op against central differences over 100 seeds.

TEST(OpGradients, MatMul) {
  property_over_seeds(
      "matmul",
      [](Gen& g) {
        const Index m = g.index(1, 4), k = g.index(1, 4), n = g.index(1, 4);
        return std::vector<T>{leaf(g.matrix(m, k)), leaf(g.matrix(k, n))};
      },
      [](G& g, std::vector<T>& in) { return matmul(g, in[0], in[1]); });
}

TEST(OpGradients, Transpose) {
  property_over_seeds(
      "transpose", [](Gen& g) { return std::vector<T>{leaf(g.matrix(g.index(1, 4), g.index(1, 4)))}; },
      [](G& g, std::vector<T>& in) { return transpose(g, in[0]); });
}

TEST(OpGradients, AddSubMulWithBroadcast) {
  property_over_seeds(
      "add/sub/mul",
      [](Gen& g) {
        const Index r = g.index(1, 4), c = g.index(1, 4);
        return std::vector<T>{leaf(g.matrix(r, c)), leaf(g.matrix(r, c)), leaf(g.matrix(1, 1))};
      },
      [](G& g, std::vector<T>& in) {
        return mul(g, sub(g, add(g, in[0], in[2]), in[1]), add(g, in[1], in[2]));
      });
}

TEST(OpGradients, Scale) {
  property_over_seeds(
      "scale", [](Gen& g) { return std::vector<T>{leaf(g.matrix(2, 3))}; },
      [](G& g, std::vector<T>& in) { return scale(g, in[0], -1.75); });
}

TEST(OpGradients, Sigmoid) {
  property_over_seeds(
      "sigmoid", [](Gen& g) { return std::vector<T>{leaf(g.matrix(2, 4))}; },
      [](G& g, std::vector<T>& in) { return sigmoid(g, in[0]); });
}

TEST(OpGradients, Tanh) {
  property_over_seeds(
      "tanh", [](Gen& g) { return std::vector<T>{leaf(g.matrix(3, 3))}; },
      [](G& g, std::vector<T>& in) { return tanh(g, in[0]); });
}

TEST(OpGradients, ReluAwayFromKink) {
  property_over_seeds(
      "relu", [](Gen& g) { return std::vector<T>{leaf(g.away_from_zero(3, 3, 0.01))}; },
      [](G& g, std::vector<T>& in) { return relu(g, in[0]); });
}

TEST(OpGradients, ConcatColsAndRows) {
  property_over_seeds(
      "concat",
      [](Gen& g) {
        return std::vector<T>{leaf(g.matrix(2, 3)), leaf(g.matrix(2, 1)), leaf(g.matrix(1, 4))};
      },
      [](G& g, std::vector<T>& in) {
        std::vector<T> parts{concat_cols(g, std::span<const T>(in.data(), 2)), in[2]};
        return concat_rows(g, std::span<const T>(parts));
      });
}

TEST(OpGradients, SumAndMeanOverEachAxis) {
  property_over_seeds(
      "sum/mean", [](Gen& g) { return std::vector<T>{leaf(g.matrix(3, 4))}; },
      [](G& g, std::vector<T>& in) {
        T a = sum(g, in[0], Axis::kRows);
        T b = mean(g, in[0], Axis::kCols);
        T c = mean(g, in[0], Axis::kAll);
        return concat_cols(g, {a, transpose(g, b), c});
      });
}

TEST(OpGradients, Reshape) {
  property_over_seeds(
      "reshape", [](Gen& g) { return std::vector<T>{leaf(g.matrix(2, 6))}; },
      [](G& g, std::vector<T>& in) { return reshape(g, in[0], 4, 3); });
}

TEST(OpGradients, SoftmaxRows) {
  property_over_seeds(
      "softmax", [](Gen& g) { return std::vector<T>{leaf(g.matrix(g.index(1, 3), g.index(1, 6)))}; },
      [](G& g, std::vector<T>& in) { return softmax(g, in[0]); });
}

TEST(OpGradients, CosineSimilarity) {
  property_over_seeds(
      "cosine_similarity",
      [](Gen& g) {
        const Index d = g.index(1, 6);
        return std::vector<T>{leaf(g.matrix(1, d)), leaf(g.matrix(1, d))};
      },
      [](G& g, std::vector<T>& in) { return cosine_similarity(g, in[0], in[1]); });
}

TEST(OpGradients, NormalizeRowsAndCosineMatrix) {
  property_over_seeds(
      "cosine_matrix",
      [](Gen& g) { return std::vector<T>{leaf(g.matrix(3, 4)), leaf(g.matrix(2, 4))}; },
      [](G& g, std::vector<T>& in) {
        return concat_cols(g, {cosine_matrix(g, in[0], in[1]), normalize_rows(g, in[0])});
      });
}

TEST(OpGradients, HingeAwayFromKink) {
  property_over_seeds(
      "hinge_margin",
      [](Gen& g) {
        // Keep every alpha + neg - pos at least 0.05 away from zero.
        M pos(1, 5);
        const double neg = g.uniform(-1, 1);
        for (Index i = 0; i < 5; ++i) {
          const double gap = g.uniform(0.05, 1.0);
          pos(0, i) = 0.2 + neg + (g.coin() ? gap : -gap);
        }
        return std::vector<T>{leaf(M::Constant(1, 1, neg)), leaf(pos)};
      },
      [](G& g, std::vector<T>& in) { return hinge_margin(g, in[0], in[1], 0.2); });
}

TEST(OpGradients, GatherRowsAndElements) {
  property_over_seeds(
      "gather",
      [](Gen& g) { return std::vector<T>{leaf(g.matrix(3, 3))}; },
      [](G& g, std::vector<T>& in) {
        T rows = gather_rows(g, in[0], {2, 0, 2});
        T elems = gather(g, in[0], {{0, 1}, {1, 1}, {0, 1}});
        return concat_cols(g, {reshape(g, rows, 1, 9), elems});
      });
}

TEST(OpGradients, MaxWithDistinctEntries) {
  property_over_seeds(
      "max", [](Gen& g) { return std::vector<T>{leaf(g.distinct(2, 4, 0.01))}; },
      [](G& g, std::vector<T>& in) { return max(g, in[0]); });
}

TEST(OpGradients, CrossEntropy) {
  property_over_seeds(
      "cross_entropy", [](Gen& g) { return std::vector<T>{leaf(g.matrix(3, 4))}; },
      [](G& g, std::vector<T>& in) { return cross_entropy(g, in[0], {1, 3, 0}); });
}

TEST(OpGradients, Linear) {
  property_over_seeds(
      "linear",
      [](Gen& g) {
        return std::vector<T>{leaf(g.matrix(3, 4)), leaf(g.matrix(4, 2)), leaf(g.matrix(1, 2))};
      },
      [](G& g, std::vector<T>& in) { return linear(g, in[0], in[1], in[2]); });
}

TEST(OpGradients, LstmWithPadding) {
  property_over_seeds(
      "lstm",
      [](Gen& g) {
        const Index d = 2, h = 3;
        return std::vector<T>{leaf(g.matrix(2 * 3, d)), leaf(M(0.5 * g.matrix(d, 4 * h))),
                              leaf(M(0.5 * g.matrix(h, 4 * h))), leaf(M(0.5 * g.matrix(1, 4 * h)))};
      },
      [](G& g, std::vector<T>& in) { return lstm(g, in[0], in[1], in[2], in[3], {3, 2}, 3); });
}

TEST(OpGradients, AttentionPoolSegments) {
  property_over_seeds(
      "attention_pool",
      [](Gen& g) { return std::vector<T>{leaf(g.matrix(5, 3)), leaf(g.matrix(1, 3))}; },
      [](G& g, std::vector<T>& in) {
        return attention_pool_segments(g, in[0], in[1], {{0, 2}, {2, 3}});
      });
}

TEST(Lstm, PaddedRowsAreZero) {
  Gen gen(1);
  G g;
  T out = lstm(g, T(gen.matrix(6, 2)), T(gen.matrix(2, 12)), T(gen.matrix(3, 12)),
               T(gen.matrix(1, 12)), {3, 1}, 3);
  EXPECT_EQ(out.value().row(4), M::Zero(1, 3));
  EXPECT_EQ(out.value().row(5), M::Zero(1, 3));
  EXPECT_NE(out.value().row(3), M::Zero(1, 3));
}

TEST(Lstm, SingleStepMatchesHandCell) {
  Gen gen(2);
  M x = gen.matrix(1, 2), wi = gen.matrix(2, 4), wh = gen.matrix(1, 4), b = gen.matrix(1, 4);
  G g;
  T out = lstm(g, T(x), T(wi), T(wh), T(b), {1}, 1);
  M z = x * wi + b;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  // Gate blocks: input, forget, output, candidate. Initial state is zero.
  const double c = sig(z(0, 0)) * std::tanh(z(0, 3));
  EXPECT_NEAR(out.value()(0, 0), sig(z(0, 2)) * std::tanh(c), 1e-14);
}

}  // namespace
}  // namespace mlva

#include "latentaug/graph.hpp"

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "latentaug/error.hpp"
#include "latentaug/layers.hpp"
#include "latentaug/rng.hpp"
#include "support/fd_check.hpp"
#include "support/random_graphs.hpp"

namespace latentaug {
namespace {

using testing::fd_check;
using testing::make_random_graph;
using testing::random_tensor;

TEST(RngTest, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
  }
}

TEST(RngTest, UniformInHalfOpenUnitInterval) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(RngTest, NormalMomentsRoughlyStandard) {
  Rng rng(11);
  double sum = 0.0, sum_sq = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    sum += z;
    sum_sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sum_sq / n, 1.0, 0.03);
}

TEST(RngTest, ForkStreamsDifferByLabel) {
  Rng parent1(5), parent2(5);
  Rng a = parent1.fork("alpha");
  Rng b = parent2.fork("beta");
  Rng a2 = Rng(5).fork("alpha");
  EXPECT_EQ(a.next_u64(), a2.next_u64());
  Rng c(5);
  Rng ca = c.fork("alpha");
  EXPECT_NE(ca.next_u64(), b.next_u64());
}

TEST(RngTest, DerivedSeedsDifferAcrossNames) {
  EXPECT_EQ(derive_seed(123, "gan"), derive_seed(123, "gan"));
  EXPECT_NE(derive_seed(123, "gan"), derive_seed(123, "policy"));
  EXPECT_NE(derive_seed(123, "gan"), derive_seed(124, "gan"));
}

TEST(GraphTest, ElementwiseForward) {
  Graph g;
  NodeId a = g.input("a", {3});
  NodeId b = g.input("b", {3});
  NodeId s = g.sum(g.mul(g.add(a, b), g.sub(a, b)));  // sum(a^2 - b^2)
  g.set_output(s);
  g.bind("a", Tensor({3}, {1, 2, 3}));
  g.bind("b", Tensor({3}, {3, 2, 1}));
  EXPECT_DOUBLE_EQ(g.evaluate(), (1 - 9) + (4 - 4) + (9 - 1));
}

TEST(GraphTest, ScaleAndAddScalar) {
  Graph g;
  NodeId x = g.input("x", {2});
  g.set_output(g.sum(g.add_scalar(g.scale(x, 3.0), 1.0)));
  g.bind("x", Tensor({2}, {1, 2}));
  EXPECT_DOUBLE_EQ(g.evaluate(), 3 + 1 + 6 + 1);
}

TEST(GraphTest, MatmulForward) {
  Graph g;
  NodeId a = g.input("a", {2, 2});
  NodeId b = g.input("b", {2, 2});
  NodeId mm = g.matmul(a, b);
  g.set_output(g.sum(mm));
  g.bind("a", Tensor({2, 2}, {1, 2, 3, 4}));
  g.bind("b", Tensor({2, 2}, {5, 6, 7, 8}));
  g.evaluate();
  const Tensor& y = g.value(mm);
  EXPECT_DOUBLE_EQ(y.at(0, 0), 19);
  EXPECT_DOUBLE_EQ(y.at(0, 1), 22);
  EXPECT_DOUBLE_EQ(y.at(1, 0), 43);
  EXPECT_DOUBLE_EQ(y.at(1, 1), 50);
}

TEST(GraphTest, ConvIdentityKernel) {
  Graph g;
  NodeId x = g.input("x", {1, 1, 4, 4});
  NodeId w = g.input("w", {1, 1, 3, 3});
  NodeId y = g.conv2d(x, w, 1, 1);
  g.set_output(g.sum(y));

  Rng rng(3);
  Tensor xin = random_tensor({1, 1, 4, 4}, 1.0, rng);
  Tensor delta({1, 1, 3, 3});
  delta[4] = 1.0;  // center tap
  g.bind("x", xin);
  g.bind("w", delta);
  g.evaluate();
  const Tensor& out = g.value(y);
  for (int64_t i = 0; i < xin.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], xin[i]);
}

TEST(GraphTest, ConvStrideTwoShape) {
  Graph g;
  NodeId x = g.input("x", {2, 3, 8, 8});
  NodeId w = g.input("w", {5, 3, 4, 4});
  NodeId y = g.conv2d(x, w, 2, 1);
  EXPECT_EQ(g.shape(y), (Shape{2, 5, 4, 4}));
}

TEST(GraphTest, ConvRejectsBadGeometry) {
  Graph g;
  NodeId x = g.input("x", {1, 1, 4, 4});
  NodeId w5 = g.input("w5", {1, 1, 5, 5});
  EXPECT_THROW(g.conv2d(x, w5, 1, 0), Error);  // kernel larger than input
  NodeId w3 = g.input("w3", {1, 1, 3, 3});
  EXPECT_THROW(g.conv2d(x, w3, 2, 1), Error);  // stride does not tile evenly
  NodeId wbad = g.input("wbad", {1, 2, 3, 3});
  EXPECT_THROW(g.conv2d(x, wbad, 1, 1), Error);  // channel mismatch
}

TEST(GraphTest, ShapeMismatchRejected) {
  Graph g;
  NodeId a = g.input("a", {2, 3});
  NodeId b = g.input("b", {3, 2});
  EXPECT_THROW(g.add(a, b), Error);
  EXPECT_THROW(g.matmul(a, a), Error);
}

TEST(GraphTest, PoolUndoesUpsample) {
  Graph g;
  NodeId x = g.input("x", {1, 2, 4, 4});
  NodeId y = g.avg_pool2x(g.upsample2x(x));
  g.set_output(g.sum(y));
  Rng rng(9);
  Tensor xin = random_tensor({1, 2, 4, 4}, 1.0, rng);
  g.bind("x", xin);
  g.evaluate();
  const Tensor& out = g.value(y);
  for (int64_t i = 0; i < xin.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], xin[i]);
}

TEST(GraphTest, HFlipIsInvolution) {
  Graph g;
  NodeId x = g.input("x", {2, 1, 4, 4});
  NodeId y = g.hflip(g.hflip(x, {1, 0}), {1, 0});
  g.set_output(g.sum(y));
  Rng rng(13);
  Tensor xin = random_tensor({2, 1, 4, 4}, 1.0, rng);
  g.bind("x", xin);
  g.evaluate();
  const Tensor& out = g.value(y);
  for (int64_t i = 0; i < xin.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], xin[i]);
}

TEST(GraphTest, TranslateZeroFills) {
  Graph g;
  NodeId x = g.input("x", {1, 1, 3, 3});
  NodeId y = g.translate2d(x, {1}, {-1});
  g.set_output(g.sum(y));
  g.bind("x", Tensor({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  g.evaluate();
  const Tensor& out = g.value(y);
  // shifted down one row, left one column
  std::vector<double> want = {0, 0, 0, 2, 3, 0, 5, 6, 0};
  for (int64_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(out[i], want[static_cast<size_t>(i)]);
}

TEST(GraphTest, ActivationFixedPoints) {
  Graph g;
  NodeId x = g.input("x", {1});
  NodeId sp = g.softplus(x);
  NodeId sg = g.sigmoid(x);
  g.set_output(g.sum(g.add(sp, sg)));
  g.bind("x", Tensor({1}, {0.0}));
  g.evaluate();
  EXPECT_NEAR(g.value(sp)[0], std::numbers::ln2, 1e-15);
  EXPECT_DOUBLE_EQ(g.value(sg)[0], 0.5);
}

TEST(GraphTest, SoftplusStableAtLargeInputs) {
  Graph g;
  NodeId x = g.input("x", {2});
  NodeId y = g.softplus(x);
  g.set_output(g.sum(y));
  g.bind("x", Tensor({2}, {800.0, -800.0}));
  EXPECT_DOUBLE_EQ(g.evaluate(), 800.0);
  EXPECT_DOUBLE_EQ(g.value(y)[1], 0.0);
}

TEST(GraphTest, ReductionValues) {
  Graph g;
  NodeId x = g.input("x", {4});
  NodeId s = g.sum(x);
  NodeId m = g.mean(x);
  NodeId q = g.sum_sq(x);
  g.set_output(g.sum(g.add(g.add(s, m), q)));
  g.bind("x", Tensor({4}, {1, 2, 3, 4}));
  g.evaluate();
  EXPECT_DOUBLE_EQ(g.value(s)[0], 10);
  EXPECT_DOUBLE_EQ(g.value(m)[0], 2.5);
  EXPECT_DOUBLE_EQ(g.value(q)[0], 30);
}

TEST(GraphTest, ConcatSliceRoundtrip) {
  Graph g;
  NodeId a = g.input("a", {1, 2, 2, 2});
  NodeId b = g.input("b", {1, 3, 2, 2});
  NodeId cat = g.concat_chan(a, b);
  NodeId back = g.slice_chan(cat, 2, 5);
  g.set_output(g.sum(back));
  Rng rng(17);
  Tensor ain = random_tensor({1, 2, 2, 2}, 1.0, rng);
  Tensor bin = random_tensor({1, 3, 2, 2}, 1.0, rng);
  g.bind("a", ain);
  g.bind("b", bin);
  g.evaluate();
  const Tensor& out = g.value(back);
  for (int64_t i = 0; i < bin.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], bin[i]);
  EXPECT_THROW(g.slice_chan(cat, 3, 3), Error);
  EXPECT_THROW(g.slice_chan(cat, 0, 6), Error);
}

TEST(GraphTest, CropWindowContents) {
  Graph g;
  NodeId x = g.input("x", {1, 1, 3, 3});
  NodeId y = g.crop2d(x, 1, 1, 2, 2);
  g.set_output(g.sum(y));
  g.bind("x", Tensor({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_DOUBLE_EQ(g.evaluate(), 5 + 6 + 8 + 9);
  EXPECT_THROW(g.crop2d(x, 2, 2, 2, 2), Error);
}

TEST(GraphTest, EvaluateRequiresBoundInputsAndScalarOutput) {
  Graph g;
  NodeId x = g.input("x", {2, 2});
  EXPECT_THROW(g.set_output(x), Error);
  NodeId s = g.sum(x);
  g.set_output(s);
  EXPECT_THROW(g.evaluate(), Error);  // unbound input
  g.bind("x", Tensor({2, 2}, {1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(g.evaluate(), 10.0);
  EXPECT_THROW(g.bind("x", Tensor({3}, {1, 2, 3})), Error);
  EXPECT_THROW(g.bind("nope", Tensor({1}, {0})), Error);
}

TEST(GraphTest, NonFiniteValuesAreReported) {
  Graph g;
  NodeId x = g.input("x", {2});
  g.set_output(g.sum(g.square(g.square(g.square(x)))));
  g.bind("x", Tensor({2}, {1e100, 1.0}));
  try {
    g.evaluate();
    FAIL() << "expected non-finite failure";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(GraphTest, ValueBeforeEvaluateRejected) {
  Graph g;
  NodeId x = g.input("x", {1});
  g.set_output(g.sum(x));
  EXPECT_THROW(g.value(x), Error);
}

TEST(GraphTest, DuplicateInputNameRejected) {
  Graph g;
  g.input("x", {1});
  EXPECT_THROW(g.input("x", {2}), Error);
}

TEST(GraphTest, BackpropRequiresEvaluate) {
  Graph g;
  NodeId x = g.input("x", {2});
  g.set_output(g.sum(x));
  EXPECT_THROW(g.backprop(), Error);
}

TEST(GraphTest, BackpropRejectsNonDifferentiableInput) {
  Graph g;
  NodeId x = g.input("x", {2}, /*differentiable=*/false);
  g.set_output(g.sum(x));
  g.bind("x", Tensor({2}, {1, 2}));
  g.evaluate();
  EXPECT_TRUE(g.backprop().empty());
  EXPECT_THROW(g.backprop({"x"}), Error);
}

TEST(GraphTest, SimpleGradientsExact) {
  // d/dx sum((2x + 1)^2) = 4(2x + 1)
  Graph g;
  NodeId x = g.input("x", {3});
  g.set_output(g.sum_sq(g.add_scalar(g.scale(x, 2.0), 1.0)));
  g.bind("x", Tensor({3}, {0.5, -1.0, 2.0}));
  g.evaluate();
  Tensor dx = g.backprop().at("x");
  EXPECT_DOUBLE_EQ(dx[0], 4 * 2.0);
  EXPECT_DOUBLE_EQ(dx[1], 4 * -1.0);
  EXPECT_DOUBLE_EQ(dx[2], 4 * 5.0);
}

TEST(GraphTest, LreluMaskHasZeroDerivative) {
  // y = sum(x * mask(x)): with the mask locally constant the gradient is
  // exactly the mask values, not the true lrelu derivative path.
  Graph g;
  NodeId x = g.input("x", {4});
  g.set_output(g.sum(g.mul(x, g.lrelu_mask(x, 0.2))));
  g.bind("x", Tensor({4}, {-2.0, -0.5, 0.5, 2.0}));
  g.evaluate();
  Tensor dx = g.backprop().at("x");
  EXPECT_DOUBLE_EQ(dx[0], 0.2);
  EXPECT_DOUBLE_EQ(dx[1], 0.2);
  EXPECT_DOUBLE_EQ(dx[2], 1.0);
  EXPECT_DOUBLE_EQ(dx[3], 1.0);
}

TEST(GraphTest, VjpOpMatchesConvBackprop) {
  // Route 1: input gradient of sum(conv2d(x, w)) via backprop.
  Rng rng(21);
  Tensor xin = random_tensor({2, 3, 8, 8}, 1.0, rng);
  Tensor win = random_tensor({4, 3, 3, 3}, 0.5, rng);

  Graph g1;
  NodeId x1 = g1.input("x", {2, 3, 8, 8});
  NodeId w1 = g1.input("w", {4, 3, 3, 3}, false);
  g1.set_output(g1.sum(g1.conv2d(x1, w1, 1, 1)));
  g1.bind("x", xin);
  g1.bind("w", win);
  g1.evaluate();
  Tensor route1 = g1.backprop({"x"}).at("x");

  // Route 2: the same gradient as a forward evaluation of the vjp op with
  // an all-ones upstream.
  Graph g2;
  NodeId ones = g2.constant(Tensor::full({2, 4, 8, 8}, 1.0));
  NodeId w2 = g2.input("w", {4, 3, 3, 3}, false);
  NodeId dx = g2.conv2d_vjp_input(ones, w2, 1, 1, 8, 8);
  g2.set_output(g2.sum(dx));
  g2.bind("w", win);
  g2.evaluate();
  const Tensor& route2 = g2.value(dx);

  ASSERT_TRUE(route1.same_shape(route2));
  for (int64_t i = 0; i < route1.numel(); ++i) EXPECT_NEAR(route1[i], route2[i], 1e-12);
}

TEST(GraphTest, StackInputGradientMatchesBackprop) {
  // The explicit gradient chain used by the gradient penalty must agree
  // with reverse-mode applied to the same stack.
  Rng rng(31);
  std::map<std::string, Tensor> params;
  params["c1.w"] = random_tensor({4, 2, 3, 3}, 0.4, rng);
  params["c1.b"] = random_tensor({4}, 0.2, rng);
  params["c2.w"] = random_tensor({6, 4, 2, 2}, 0.4, rng);
  params["c2.b"] = random_tensor({6}, 0.2, rng);
  params["fc.w"] = random_tensor({6 * 4 * 4, 1}, 0.3, rng);
  params["fc.b"] = random_tensor({1}, 0.1, rng);
  std::vector<LayerSpec> stack = {
      LayerSpec::conv("c1.w", "c1.b", 1, 1), LayerSpec::leaky_relu(0.2),
      LayerSpec::conv("c2.w", "c2.b", 2, 0), LayerSpec::leaky_relu(0.2),
      LayerSpec::flatten(),                  LayerSpec::dense("fc.w", "fc.b"),
  };
  Tensor xin = random_tensor({3, 2, 8, 8}, 0.8, rng);

  Graph g1;
  ParamBinder frozen1(g1, params, false);
  NodeId x1 = g1.input("x", {3, 2, 8, 8});
  StackTrace t1 = stack_forward(g1, stack, x1, frozen1);
  g1.set_output(g1.sum(t1.out));
  g1.bind("x", xin);
  g1.evaluate();
  Tensor route1 = g1.backprop({"x"}).at("x");

  Graph g2;
  ParamBinder frozen2(g2, params, false);
  NodeId x2 = g2.input("x", {3, 2, 8, 8}, false);
  StackTrace t2 = stack_forward(g2, stack, x2, frozen2);
  NodeId seed = g2.constant(Tensor::full({3, 1}, 1.0));
  NodeId gx = stack_input_gradient(g2, t2, seed);
  g2.set_output(g2.sum(gx));
  g2.bind("x", xin);
  g2.evaluate();
  const Tensor& route2 = g2.value(gx);

  ASSERT_TRUE(route1.same_shape(route2));
  for (int64_t i = 0; i < route1.numel(); ++i) EXPECT_NEAR(route1[i], route2[i], 1e-12);
}

TEST(GraphTest, PerOpGradientsMatchFiniteDifferences) {
  Rng rng(41);

  {  // conv stride 1 and 2, bias, lrelu
    Graph g;
    NodeId x = g.input("x", {2, 2, 8, 8});
    NodeId w1 = g.input("w1", {3, 2, 3, 3});
    NodeId b1 = g.input("b1", {3});
    NodeId w2 = g.input("w2", {4, 3, 2, 2});
    NodeId h1 = g.leaky_relu(g.bias_chan(g.conv2d(x, w1, 1, 1), b1), 0.2);
    NodeId h2 = g.conv2d(h1, w2, 2, 0);
    g.set_output(g.sum_sq(h2));
    std::map<std::string, Tensor> inputs;
    inputs["x"] = random_tensor({2, 2, 8, 8}, 0.7, rng);
    inputs["w1"] = random_tensor({3, 2, 3, 3}, 0.4, rng);
    inputs["b1"] = random_tensor({3}, 0.2, rng);
    inputs["w2"] = random_tensor({4, 3, 2, 2}, 0.4, rng);
    auto rep = fd_check(g, inputs, {"x", "w1", "b1", "w2"}, rng, 1e-4, 8);
    EXPECT_EQ(rep.failed, 0) << "worst " << rep.worst_rel << " at " << rep.worst_where;
  }

  {  // matmul, transpose, row bias
    Graph g;
    NodeId a = g.input("a", {3, 4});
    NodeId w = g.input("w", {4, 2});
    NodeId b = g.input("b", {2});
    NodeId y = g.add_row_vec(g.matmul(a, w), b);
    g.set_output(g.sum_sq(g.transpose(y)));
    std::map<std::string, Tensor> inputs;
    inputs["a"] = random_tensor({3, 4}, 0.8, rng);
    inputs["w"] = random_tensor({4, 2}, 0.8, rng);
    inputs["b"] = random_tensor({2}, 0.5, rng);
    auto rep = fd_check(g, inputs, {"a", "w", "b"}, rng, 1e-4, 8);
    EXPECT_EQ(rep.failed, 0) << "worst " << rep.worst_rel << " at " << rep.worst_where;
  }

  {  // channel affine + upsample + pool + sigmoid/softplus/abs/square
    Graph g;
    NodeId x = g.input("x", {2, 3, 4, 4});
    NodeId s = g.input("s", {2, 3});
    NodeId t = g.input("t", {2, 3});
    NodeId y = g.channel_affine(g.upsample2x(x), s, t);
    y = g.avg_pool2x(g.softplus(y));
    y = g.square(g.sigmoid(y));
    g.set_output(g.mean(g.abs(y)));
    std::map<std::string, Tensor> inputs;
    inputs["x"] = random_tensor({2, 3, 4, 4}, 0.8, rng);
    inputs["s"] = random_tensor({2, 3}, 0.5, rng);
    inputs["t"] = random_tensor({2, 3}, 0.5, rng);
    auto rep = fd_check(g, inputs, {"x", "s", "t"}, rng, 1e-4, 8);
    EXPECT_EQ(rep.failed, 0) << "worst " << rep.worst_rel << " at " << rep.worst_where;
  }

  {  // flip, translate, concat, slice, crop
    Graph g;
    NodeId x = g.input("x", {2, 2, 4, 4});
    NodeId y = g.hflip(x, {1, 0});
    y = g.add_scalar(g.translate2d(y, {1, -1}, {0, 1}), 0.2);
    y = g.concat_chan(y, g.sigmoid(y));
    y = g.slice_chan(y, 1, 3);
    y = g.crop2d(y, 1, 0, 3, 2);
    g.set_output(g.sum_sq(y));
    std::map<std::string, Tensor> inputs;
    inputs["x"] = random_tensor({2, 2, 4, 4}, 0.8, rng);
    auto rep = fd_check(g, inputs, {"x"}, rng, 1e-4, 10);
    EXPECT_EQ(rep.failed, 0) << "worst " << rep.worst_rel << " at " << rep.worst_where;
  }

  {  // vjp op differentiated w.r.t. both upstream and weights
    Graph g;
    NodeId dy = g.input("dy", {2, 3, 4, 4});
    NodeId w = g.input("w", {3, 2, 3, 3});
    NodeId dx = g.conv2d_vjp_input(dy, w, 1, 1, 4, 4);
    g.set_output(g.sum_sq(dx));
    std::map<std::string, Tensor> inputs;
    inputs["dy"] = random_tensor({2, 3, 4, 4}, 0.7, rng);
    inputs["w"] = random_tensor({3, 2, 3, 3}, 0.4, rng);
    auto rep = fd_check(g, inputs, {"dy", "w"}, rng, 1e-4, 8);
    EXPECT_EQ(rep.failed, 0) << "worst " << rep.worst_rel << " at " << rep.worst_where;
  }
}

TEST(GraphTest, RandomizedGraphGradientsMatchFiniteDifferences) {
  int failures = 0;
  for (uint64_t trial = 0; trial < 25; ++trial) {
    auto c = make_random_graph(1000 + trial);
    Rng probe(2000 + trial);
    auto rep = fd_check(c.graph, c.inputs, c.grad_names, probe, 1e-4, 4);
    if (rep.failed > 0) {
      ++failures;
      ADD_FAILURE() << "trial " << trial << ": " << rep.failed << "/" << rep.checked
                    << " probes off, worst " << rep.worst_rel << " at " << rep.worst_where;
    }
  }
  EXPECT_EQ(failures, 0);
}

TEST(GraphTest, RepeatedEvaluationIsBitIdentical) {
  auto c1 = make_random_graph(77);
  auto c2 = make_random_graph(77);
  for (const auto& [name, value] : c1.inputs) {
    c1.graph.bind(name, value);
    c2.graph.bind(name, value);
  }
  double y1 = c1.graph.evaluate();
  double y2 = c2.graph.evaluate();
  EXPECT_EQ(y1, y2);
  double y1again = c1.graph.evaluate();
  EXPECT_EQ(y1, y1again);

  auto g1 = c1.graph.backprop();
  auto g2 = c2.graph.backprop();
  ASSERT_EQ(g1.size(), g2.size());
  for (const auto& [name, grad] : g1) {
    const Tensor& other = g2.at(name);
    ASSERT_EQ(grad.numel(), other.numel());
    for (int64_t i = 0; i < grad.numel(); ++i) {
      ASSERT_EQ(grad[i], other[i]) << name << "[" << i << "]";
    }
  }
}

}  // namespace
}  // namespace latentaug

#include <gtest/gtest.h>

#include <cmath>

#include "scpl/finite_diff.hpp"
#include "scpl/graph.hpp"
#include "scpl/nn.hpp"
#include "scpl/rng.hpp"

using namespace scpl;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

// Checks d(root)/d(input "x") against central differences for a graph built by `build`.
template <typename Build>
double input_grad_error(Build build, const Tensor<double>& x, bool guided = false) {
  ParamStore<double> store;
  Graph<double> g(store);
  NodeId in = g.input("x", x.shape);
  NodeId root = build(g, in);
  g.forward({{"x", x}});
  BackwardOptions opts;
  opts.wrt = Wrt::Inputs;
  opts.guided = guided;
  auto grads = g.backward(root, opts);
  auto f = [&](const Tensor<double>& xs) {
    g.forward({{"x", xs}});
    return g.value(root).item();
  };
  auto fd = finite_diff_grad<double>(f, x, 1e-5);
  return max_relative_error(grads.at("x"), fd);
}

}  // namespace

TEST(Graph, DenseIdentityReturnsInput) {
  ParamStore<float> store;
  Tensor<float> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0f;
  store.add("fc.w", eye);
  store.add("fc.b", Tensor<float>({3}));
  Graph<float> g(store);
  NodeId x = g.input("x", {2, 3});
  NodeId y = dense(g, "fc", x);
  Tensor<float> xv({2, 3}, {1, -2, 3, 0.5f, 4, -1});
  auto out = forward_eval(g, {{"x", xv}}, {{"y", y}});
  EXPECT_EQ(out.at("y"), xv);
}

TEST(Graph, OneByOneConvScales) {
  ParamStore<float> store;
  store.add("c.w", Tensor<float>({1, 1, 1, 1}, 2.0f));
  store.add("c.b", Tensor<float>({1}));
  Graph<float> g(store);
  NodeId x = g.input("x", {1, 1, 3, 3});
  NodeId y = g.conv2d(x, g.param("c.w"), g.param("c.b"));
  g.forward({{"x", Tensor<float>({1, 1, 3, 3}, 1.0f)}});
  EXPECT_EQ(g.value(y), Tensor<float>({1, 1, 3, 3}, 2.0f));
}

TEST(Graph, TwoLayerReluMatchesHandArithmetic) {
  Rng rng(3);
  ParamStore<double> store;
  init_mlp(store, "net", 4, 5, 2, 2, rng);
  Graph<double> g(store);
  NodeId x = g.input("x", {3, 4});
  NodeId y = mlp(g, "net", 2, x);
  Tensor<double> xv = random_tensor({3, 4}, rng);
  g.forward({{"x", xv}});

  const auto& w0 = store.get("net.l0.w");
  const auto& b0 = store.get("net.l0.b");
  const auto& w1 = store.get("net.l1.w");
  const auto& b1 = store.get("net.l1.b");
  for (std::size_t r = 0; r < 3; ++r) {
    double h[5];
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = b0[j];
      for (std::size_t i = 0; i < 4; ++i) acc += xv.at(r, i) * w0.at(i, j);
      h[j] = acc > 0 ? acc : 0;
    }
    for (std::size_t k = 0; k < 2; ++k) {
      double acc = b1[k];
      for (std::size_t j = 0; j < 5; ++j) acc += h[j] * w1.at(j, k);
      EXPECT_NEAR(g.value(y).at(r, k), acc, 1e-12);
    }
  }
}

TEST(Graph, SumGradientIsOnes) {
  ParamStore<double> store;
  Graph<double> g(store);
  NodeId x = g.input("x", {2, 3});
  NodeId s = g.sum(x);
  g.forward({{"x", Tensor<double>({2, 3}, {1, 2, 3, -4, 5, 6})}});
  auto grads = g.backward(s, {Wrt::Inputs});
  EXPECT_EQ(grads.at("x"), Tensor<double>({2, 3}, 1.0));
}

TEST(Graph, SumOfSquaresGradient) {
  ParamStore<double> store;
  Graph<double> g(store);
  NodeId x = g.input("x", {2});
  NodeId s = g.sum(g.square(x));
  g.forward({{"x", Tensor<double>({2}, {1, 2})}});
  auto grads = g.backward(s, {Wrt::Inputs});
  EXPECT_EQ(grads.at("x"), Tensor<double>({2}, {2, 4}));
}

TEST(Graph, RandomTwoLayerNetMatchesFiniteDifferences) {
  Rng rng(11);
  ParamStore<double> store;
  init_mlp(store, "net", 6, 8, 3, 2, rng);
  Graph<double> g(store);
  NodeId x = g.input("x", {4, 6});
  NodeId loss = g.mean(g.square(mlp(g, "net", 2, x)));
  Tensor<double> xv = random_tensor({4, 6}, rng);
  g.forward({{"x", xv}});
  auto grads = g.backward(loss, {Wrt::Both});
  for (const auto& name : store.names_with_prefix("net")) {
    auto f = [&](const Tensor<double>& p) {
      Tensor<double> saved = store.get(name);
      store.get(name) = p;
      g.forward({{"x", xv}});
      store.get(name) = saved;
      return g.value(loss).item();
    };
    auto fd = finite_diff_grad<double>(f, store.get(name), 1e-5);
    EXPECT_LT(max_relative_error(grads.at(name), fd), 1e-4) << name;
  }
  auto fx = [&](const Tensor<double>& xs) {
    g.forward({{"x", xs}});
    return g.value(loss).item();
  };
  EXPECT_LT(max_relative_error(grads.at("x"), finite_diff_grad<double>(fx, xv, 1e-5)), 1e-4);
}

// Every primitive, on randomized inputs.
TEST(Graph, EveryPrimitiveMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<double> x = random_tensor({3, 4}, rng);
    Tensor<double> pos = x;
    for (auto& v : pos.data) v = 0.5 + std::abs(v);
    auto weights = random_tensor({3, 4}, rng);

    auto weighted = [&](Graph<double>& g, NodeId y) {
      NodeId w = g.constant(Tensor<double>(g.shape(y), std::vector<double>(
                                                           weights.data.begin(),
                                                           weights.data.begin() +
                                                               numel(g.shape(y)))));
      return g.sum(g.mul(y, w));
    };
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) { return weighted(g, g.tanh(v)); }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) { return weighted(g, g.exp(v)); }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) { return weighted(g, g.log(v)); }, pos), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) { return weighted(g, g.square(v)); }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) { return weighted(g, g.relu(v)); }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) { return g.mean(g.square(v)); }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) { return weighted(g, g.scale(v, 3.0)); }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) { return weighted(g, g.add_scalar(g.square(v), 1.5)); }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) { return g.sum(g.square(g.sum_rows(v))); }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) {
                return weighted(g, g.mul(v, g.tanh(v)));
              }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) {
                return weighted(g, g.sub(g.square(v), g.tanh(v)));
              }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) {
                NodeId s = g.sum(v);
                return weighted(g, g.mul(g.tanh(v), s));
              }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) {
                return weighted(g, g.minimum(g.square(v), g.tanh(v)));
              }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) {
                NodeId c = g.concat(g.slice(v, 1, 0, 1), g.slice(v, 1, 2, 4), 1);
                return g.sum(g.square(c));
              }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) {
                NodeId c = g.concat(g.slice(v, 0, 1, 3), g.tanh(g.slice(v, 0, 0, 1)), 0);
                return weighted(g, g.reshape(c, {4, 3}));
              }, x), 1e-4);
    EXPECT_LT(input_grad_error([&](Graph<double>& g, NodeId v) {
                NodeId m = g.matmul(v, g.constant(random_tensor({4, 2}, rng)));
                return g.sum(g.square(g.add_bias(m, g.constant(Tensor<double>({2}, {0.3, -0.1})))));
              }, x), 1e-4);
  }
}

TEST(Graph, ConvMatchesFiniteDifferencesWithStride) {
  Rng rng(9);
  ParamStore<double> store;
  init_conv(store, "c0", 2, 3, 3, rng);
  init_conv(store, "c1", 3, 2, 3, rng);
  Graph<double> g(store);
  NodeId x = g.input("x", {2, 2, 9, 9});
  NodeId h = g.relu(g.conv2d(x, g.param("c0.w"), g.param("c0.b"), 2));
  NodeId y = g.conv2d(h, g.param("c1.w"), g.param("c1.b"), 1);
  NodeId loss = g.sum(g.square(y));
  Tensor<double> xv = random_tensor({2, 2, 9, 9}, rng);
  g.forward({{"x", xv}});
  auto grads = g.backward(loss, {Wrt::Both});
  auto fx = [&](const Tensor<double>& xs) {
    g.forward({{"x", xs}});
    return g.value(loss).item();
  };
  EXPECT_LT(max_relative_error(grads.at("x"), finite_diff_grad<double>(fx, xv, 1e-5)), 1e-4);
  for (const auto& name : {"c0.w", "c0.b", "c1.w", "c1.b"}) {
    auto f = [&](const Tensor<double>& p) {
      Tensor<double> saved = store.get(name);
      store.get(name) = p;
      g.forward({{"x", xv}});
      store.get(name) = saved;
      return g.value(loss).item();
    };
    EXPECT_LT(max_relative_error(grads.at(name), finite_diff_grad<double>(f, store.get(name), 1e-5)), 1e-4)
        << name;
  }
}

TEST(Graph, GuidedEqualsVanillaWhenEverythingPositive) {
  // Positive weights and inputs keep every activation and every upstream gradient positive.
  ParamStore<double> store;
  Rng rng(2);
  Tensor<double> w0({3, 4}), w1({4, 1});
  for (auto& v : w0.data) v = rng.uniform(0.1, 1.0);
  for (auto& v : w1.data) v = rng.uniform(0.1, 1.0);
  store.add("a.w", w0);
  store.add("a.b", Tensor<double>({4}, 0.1));
  store.add("b.w", w1);
  store.add("b.b", Tensor<double>({1}, 0.0));
  Graph<double> g(store);
  NodeId x = g.input("x", {2, 3});
  NodeId q = g.sum(dense(g, "b", g.relu(dense(g, "a", x))));
  Tensor<double> xv({2, 3});
  for (auto& v : xv.data) v = rng.uniform(0.1, 1.0);
  g.forward({{"x", xv}});
  auto vanilla = g.backward(q, {Wrt::Inputs, false});
  auto guided = g.backward(q, {Wrt::Inputs, true});
  EXPECT_EQ(vanilla.at("x"), guided.at("x"));
}

TEST(Graph, GuidedZeroesNegativeUpstreamGradient) {
  ParamStore<double> store;
  store.add("w", Tensor<double>({1, 1}, -2.0));
  Graph<double> g(store);
  NodeId x = g.input("x", {1, 1});
  NodeId y = g.sum(g.matmul(g.relu(x), g.param("w")));
  g.forward({{"x", Tensor<double>({1, 1}, 1.0)}});
  EXPECT_DOUBLE_EQ(g.backward(y, {Wrt::Inputs, false}).at("x")[0], -2.0);
  EXPECT_DOUBLE_EQ(g.backward(y, {Wrt::Inputs, true}).at("x")[0], 0.0);
}

TEST(Graph, ForwardIsBitwiseDeterministic) {
  Rng rng(21);
  ParamStore<float> store;
  EncoderSpec spec{3, 12, 2, 4, 3, 2, 8};
  init_encoder(store, "enc", spec, rng);
  Graph<float> g(store);
  NodeId x = g.input("x", {2, 3, 12, 12});
  NodeId e = encoder(g, "enc", spec, x);
  Tensor<float> xv({2, 3, 12, 12});
  for (auto& v : xv.data) v = static_cast<float>(rng.uniform());
  g.forward({{"x", xv}});
  Tensor<float> first = g.value(e);
  g.forward({{"x", xv}});
  EXPECT_EQ(first, g.value(e));
}

TEST(Graph, TapeIsTopologicallyOrdered) {
  Rng rng(1);
  ParamStore<float> store;
  init_mlp(store, "m", 3, 4, 1, 3, rng);
  Graph<float> g(store);
  NodeId x = g.input("x", {1, 3});
  mlp(g, "m", 3, x);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (int p : g.parents_of(NodeId{i})) EXPECT_LT(p, static_cast<int>(i));
}

TEST(Graph, ShapeMismatchNamesTheInput) {
  ParamStore<float> store;
  Graph<float> g(store);
  g.input("obs", {2, 3});
  try {
    g.bind("obs", Tensor<float>({3, 2}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("obs"), std::string::npos);
  }
  EXPECT_THROW(g.matmul(g.input("a", {2, 3}), g.input("b", {2, 3})), ShapeError);
}

TEST(Graph, NonFiniteOutputNamesTheNode) {
  ParamStore<double> store;
  Graph<double> g(store);
  NodeId x = g.input("x", {1});
  NodeId y = g.log(x);
  g.set_name(y, "critic1.logit");
  try {
    g.forward({{"x", Tensor<double>({1}, -1.0)}});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("critic1.logit"), std::string::npos);
  }
}

TEST(Graph, BackwardErrors) {
  ParamStore<double> store;
  Graph<double> g(store);
  NodeId x = g.input("x", {2});
  NodeId s = g.sum(x);
  EXPECT_THROW(g.backward(s), Error);
  g.forward({{"x", Tensor<double>({2}, 1.0)}});
  EXPECT_THROW(g.backward(x), ShapeError);
  EXPECT_THROW(g.input("x", {1}), Error);
}

TEST(Graph, UnboundInputIsAnError) {
  ParamStore<double> store;
  Graph<double> g(store);
  g.sum(g.input("x", {2}));
  EXPECT_THROW(g.run(), Error);
}

TEST(Graph, ParamPrefixFilterRestrictsGradients) {
  Rng rng(4);
  ParamStore<double> store;
  init_dense(store, "enc", 2, 2, rng);
  init_dense(store, "head", 2, 1, rng);
  Graph<double> g(store);
  NodeId x = g.input("x", {1, 2});
  NodeId y = g.sum(dense(g, "head", dense(g, "enc", x)));
  g.forward({{"x", Tensor<double>({1, 2}, {0.5, -0.5})}});
  BackwardOptions opts;
  opts.param_prefixes = {"head."};
  auto grads = g.backward(y, opts);
  EXPECT_EQ(grads.count("enc.w"), 0u);
  EXPECT_EQ(grads.count("head.w"), 1u);
}

TEST(FiniteDiff, TrivialCases) {
  auto sum = [](const Tensor<double>& x) { return x[0]; };
  EXPECT_NEAR(finite_diff_grad<double>(sum, Tensor<double>({1}, 3.0), 1e-5)[0], 1.0, 1e-10);
  auto sq = [](const Tensor<double>& x) { return x[0] * x[0]; };
  EXPECT_NEAR(finite_diff_grad<double>(sq, Tensor<double>({1}, 2.0), 1e-5)[0], 4.0, 1e-8);
  EXPECT_THROW(finite_diff_grad<double>(sq, Tensor<double>({1}, 2.0), 0.0), Error);
}

TEST(LayerNorm, MatchesDirectComputation) {
  Rng rng(21);
  const Tensor<double> x = random_tensor({3, 5}, rng, 2.0);
  ParamStore<double> store;
  store.add("g", Tensor<double>({1, 5}, {0.5, 1.0, 1.5, 2.0, -1.0}));
  store.add("b", Tensor<double>({5}, {0.1, 0.0, -0.1, 0.2, 0.3}));
  Graph<double> g(store);
  NodeId y = layer_norm(g, g.input("x", x.shape), g.param("g"), g.param("b"));
  g.forward({{"x", x}});
  const auto& out = g.value(y);
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 5; ++c) mu += x[r * 5 + c] / 5;
    for (std::size_t c = 0; c < 5; ++c) var += (x[r * 5 + c] - mu) * (x[r * 5 + c] - mu) / 5;
    for (std::size_t c = 0; c < 5; ++c) {
      const double want = (x[r * 5 + c] - mu) / std::sqrt(var + 1e-5) * store.get("g")[c] + store.get("b")[c];
      EXPECT_NEAR(out[r * 5 + c], want, 1e-12);
    }
  }
}

TEST(LayerNorm, MatchesFiniteDifferences) {
  Rng rng(22);
  const Tensor<double> x = random_tensor({4, 6}, rng, 3.0);
  const Tensor<double> w = random_tensor({4, 6}, rng);
  auto err = input_grad_error(
      [&](Graph<double>& g, NodeId in) {
        NodeId gain = g.constant(Tensor<double>({1, 6}, {1.0, 0.5, -2.0, 1.5, 0.3, 1.0}));
        NodeId bias = g.constant(Tensor<double>({6}, {0.0, 0.1, 0.2, 0.3, 0.4, 0.5}));
        return g.sum(g.mul(g.tanh(layer_norm(g, in, gain, bias)), g.constant(w)));
      },
      x);
  EXPECT_LT(err, 1e-6);
}

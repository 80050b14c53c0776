#include <doctest.h>

#include <cmath>
#include <random>

#include "chorus/autodiff.hpp"
#include "chorus/model.hpp"
#include "chorus/optimizer.hpp"

using namespace chorus;
using ad::Matrix;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

DenseLayer layer(const std::string& name, Matrix w, Matrix b, Activation act) {
  DenseLayer l;
  l.weight = ad::Parameter(name + ".weight", std::move(w));
  l.bias = ad::Parameter(name + ".bias", std::move(b));
  l.activation = act;
  return l;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("forward_mlp identity layer passes input through") {
  std::vector<DenseLayer> layers{layer("l0", Matrix::Identity(2, 2), Matrix::Zero(1, 2), Activation::kIdentity)};
  ad::Graph g;
  const ad::Var y = forward_mlp(g, layers, g.constant(row({0.3, -0.2})));
  CHECK(y.value()(0, 0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(y.value()(0, 1) == doctest::Approx(-0.2).epsilon(1e-15));
}

TEST_CASE("forward_mlp with zero weights yields sigmoid of the bias") {
  std::vector<DenseLayer> layers{layer("l0", Matrix::Zero(3, 2), row({0.4, -1.5}), Activation::kSigmoid)};
  ad::Graph g;
  const ad::Var y = forward_mlp(g, layers, g.constant(row({5.0, -2.0, 1.0})));
  CHECK(std::abs(y.value()(0, 0) - sig(0.4)) < 1e-15);
  CHECK(std::abs(y.value()(0, 1) - sig(-1.5)) < 1e-15);
}

TEST_CASE("two-layer net matches hand evaluation") {
  Matrix w1(2, 2);
  w1 << 0.1, -0.2, 0.3, 0.4;
  Matrix w2(2, 1);
  w2 << 0.5, -0.6;
  std::vector<DenseLayer> layers{layer("l0", w1, row({0.05, -0.1}), Activation::kRelu),
                                 layer("l1", w2, row({0.2}), Activation::kSigmoid)};
  ad::Graph g;
  const ad::Var y = forward_mlp(g, layers, g.constant(row({1.0, 1.0})));
  // h = relu([0.1+0.3+0.05, -0.2+0.4-0.1]) = [0.45, 0.1]; z = 0.225 - 0.06 + 0.2
  CHECK(std::abs(y.scalar() - sig(0.365)) < 1e-15);
}

TEST_CASE("forward_mlp names the layer on a shape mismatch") {
  std::vector<DenseLayer> layers{layer("enc.0", Matrix::Zero(2, 3), Matrix::Zero(1, 3), Activation::kRelu),
                                 layer("enc.1", Matrix::Zero(4, 1), Matrix::Zero(1, 1), Activation::kRelu)};
  ad::Graph g;
  try {
    forward_mlp(g, layers, g.constant(row({1.0, 2.0})));
    FAIL("expected a shape error");
  } catch (const ad::ShapeError& e) {
    CHECK(std::string(e.what()).find("enc.1") != std::string::npos);
  }
}

TEST_CASE("backward of a linear form gives the input") {
  ad::Parameter w("w", row({0.5, -1.0, 2.0}).transpose());
  ad::Graph g;
  const ad::Var x = g.constant(row({3.0, 4.0, -5.0}));
  g.backward(ad::matmul(x, g.parameter(w)));
  CHECK(w.grad(0, 0) == 3.0);
  CHECK(w.grad(1, 0) == 4.0);
  CHECK(w.grad(2, 0) == -5.0);
}

TEST_CASE("sigmoid derivative at zero is one quarter") {
  ad::Parameter z("z", Matrix::Zero(1, 1));
  ad::Graph g;
  g.backward(ad::sigmoid(g.parameter(z)));
  CHECK(z.grad(0, 0) == 0.25);
}

TEST_CASE("backward rejects a non-scalar root") {
  ad::Graph g;
  const ad::Var v = g.constant(row({1.0, 2.0}));
  CHECK_THROWS_AS(g.backward(v), ad::ShapeError);
}

TEST_CASE("random three-layer net agrees with central differences") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 0.5);
  auto rnd = [&](int r, int c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
    return m;
  };
  std::vector<DenseLayer> layers{layer("a", rnd(4, 6), rnd(1, 6), Activation::kRelu),
                                 layer("b", rnd(6, 3), rnd(1, 3), Activation::kRelu),
                                 layer("c", rnd(3, 1), rnd(1, 1), Activation::kSigmoid)};
  const Matrix x = rnd(5, 4);
  const Matrix y = (rnd(5, 1).array() > 0.0).cast<double>().matrix();
  auto loss = [&](bool backward) {
    ad::Graph g;
    const ad::Var p = forward_mlp(g, layers, g.constant(x));
    const ad::Var l = ad::mean(ad::bce(p, g.constant(y)));
    if (backward) g.backward(l);
    return l.scalar();
  };
  for (DenseLayer& l : layers) {
    l.weight.zero_grad();
    l.bias.zero_grad();
  }
  loss(true);
  double worst = 0.0;
  for (DenseLayer& l : layers) {
    for (ad::Parameter* p : {&l.weight, &l.bias}) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double saved = p->value(i);
        p->value(i) = saved + 1e-5;
        const double up = loss(false);
        p->value(i) = saved - 1e-5;
        const double down = loss(false);
        p->value(i) = saved;
        const double num = (up - down) / 2e-5;
        const double a = p->grad(i);
        worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}));
      }
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("stop_gradient keeps the value and blocks the gradient") {
  ad::Parameter a("a", Matrix::Constant(1, 1, 0.3));
  ad::Parameter b("b", Matrix::Constant(1, 1, 0.7));
  ad::Graph g;
  const ad::Var sb = ad::stop_gradient(g.parameter(b));
  CHECK(sb.scalar() == 0.7);
  g.backward(ad::mul(g.parameter(a), sb));
  CHECK(b.grad(0, 0) == 0.0);
  CHECK(a.grad(0, 0) == 0.7);
}

TEST_CASE("stop_gradient also blocks deeper paths") {
  ad::Parameter b("b", Matrix::Constant(1, 1, 0.4));
  ad::Graph g;
  const ad::Var s = ad::sigmoid(g.parameter(b));
  g.backward(ad::log(ad::one_minus(ad::stop_gradient(s))));
  CHECK(b.grad(0, 0) == 0.0);
}

TEST_CASE("clamp passes gradient inside the interval only") {
  ad::Parameter p("p", row({-1.0, 0.5, 2.0}));
  ad::Graph g;
  g.backward(ad::sum(ad::clamp(g.parameter(p), 0.0, 1.0)));
  CHECK(p.grad(0, 0) == 0.0);
  CHECK(p.grad(0, 1) == 1.0);
  CHECK(p.grad(0, 2) == 0.0);
}

TEST_CASE("gather_rows accumulates repeated rows") {
  Matrix t(3, 2);
  t << 1, 2, 3, 4, 5, 6;
  ad::Parameter table("t", t);
  ad::Graph g;
  const std::vector<Eigen::Index> idx{2, 0, 2};
  const ad::Var x = ad::gather_rows(g.parameter(table), idx);
  CHECK(x.value()(0, 1) == 6.0);
  g.backward(ad::sum(x));
  CHECK(table.grad(2, 0) == 2.0);
  CHECK(table.grad(1, 0) == 0.0);
  CHECK(table.grad(0, 1) == 1.0);
  CHECK_THROWS_AS(ad::gather_rows(g.parameter(table), std::vector<Eigen::Index>{3}), ad::ShapeError);
}

TEST_CASE("forward and backward are bit-identical across runs") {
  auto run = [] {
    ad::Parameter w("w", Matrix::Constant(3, 1, 0.1));
    w.value(1, 0) = -0.37;
    Matrix x(4, 3);
    x << 0.1, 0.2, 0.3, -1, 0.5, 2, 0.3, 0.3, 0.3, 1e-3, 7, -2;
    ad::Graph g;
    const ad::Var l = ad::mean(ad::sigmoid(ad::matmul(g.constant(x), g.parameter(w))));
    g.backward(l);
    return std::make_pair(l.scalar(), Matrix(w.grad));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("Adam step with zero gradient leaves parameters unchanged") {
  ad::Parameter p("p", row({1.0, -2.0}));
  ad::OptimizerState st;
  std::vector<ad::Parameter*> ps{&p};
  ad::optimizer_step(ps, st, {});
  CHECK(p.value(0, 0) == 1.0);
  CHECK(p.value(0, 1) == -2.0);
  CHECK(st.step == 1);
}

TEST_CASE("one Adam step matches the hand-computed update") {
  ad::Parameter p("p", Matrix::Constant(1, 1, 0.5));
  p.grad(0, 0) = 0.2;
  ad::OptimizerState st;
  ad::OptimizerHyper h;
  h.learning_rate = 0.01;
  std::vector<ad::Parameter*> ps{&p};
  ad::optimizer_step(ps, st, h);
  const double m = 0.1 * 0.2, v = 0.001 * 0.04;
  const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
  const double expected = 0.5 - 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(std::abs(p.value(0, 0) - expected) < 1e-15);
}

TEST_CASE("one SGD step subtracts the scaled gradient") {
  ad::Parameter p("p", Matrix::Constant(1, 1, 0.5));
  p.grad(0, 0) = 0.2;
  ad::OptimizerState st;
  ad::OptimizerHyper h;
  h.kind = ad::OptimizerKind::kSgd;
  h.learning_rate = 0.1;
  std::vector<ad::Parameter*> ps{&p};
  ad::optimizer_step(ps, st, h);
  CHECK(std::abs(p.value(0, 0) - 0.48) < 1e-15);
}

TEST_CASE("Adam converges on a convex scalar problem") {
  ad::Parameter w("w", Matrix::Zero(1, 1));
  ad::OptimizerState st;
  ad::OptimizerHyper h;
  h.learning_rate = 0.1;
  std::vector<ad::Parameter*> ps{&w};
  for (int i = 0; i < 1000; ++i) {
    w.zero_grad();
    ad::Graph g;
    const ad::Var d = ad::add_scalar(g.parameter(w), -3.0);
    g.backward(ad::sum(ad::mul(d, d)));
    ad::optimizer_step(ps, st, h);
  }
  CHECK(std::abs(w.value(0, 0) - 3.0) < 1e-2);
}

TEST_CASE("non-finite gradient reports parameter and step") {
  ad::Parameter ok("ok", Matrix::Zero(1, 1));
  ad::Parameter bad("tower.weight", Matrix::Zero(1, 1));
  bad.grad(0, 0) = std::nan("");
  ad::OptimizerState st;
  std::vector<ad::Parameter*> ps{&ok, &bad};
  try {
    ad::optimizer_step(ps, st, {});
    FAIL("expected NonFiniteGradient");
  } catch (const ad::NonFiniteGradient& e) {
    CHECK(e.parameter() == "tower.weight");
    CHECK(e.step() == 1);
  }
  CHECK(ok.value(0, 0) == 0.0);
}

#include <doctest.h>

#include <random>

#include "agm/nn.hpp"

using namespace agm;

namespace {

template <typename S>
Mlp<S> random_mlp(const std::vector<int>& dims, OutputActivation act, uint64_t seed,
                  bool random_biases = true) {
  std::mt19937_64 rng(seed);
  auto m = Mlp<S>::init(dims, act, rng);
  if (random_biases) {
    std::uniform_real_distribution<double> ub(-0.2, 0.2);
    for (auto& l : m.layers)
      for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) = S(ub(rng));
  }
  return m;
}

}  // namespace

TEST_CASE("single linear layer forward is x W^T + b") {
  Mlp<double> m;
  Mlp<double>::Layer l;
  l.w.resize(2, 3);
  l.w << 1, 2, 3, 4, 5, 6;
  l.b.resize(2);
  l.b << 0.5, -0.5;
  m.layers.push_back(l);
  m.out_act = OutputActivation::identity;
  Mat<double> x(1, 3);
  x << 1, 0, -1;
  Mlp<double>::Cache c;
  Mat<double> y = m.forward(x, c);
  CHECK(y(0, 0) == doctest::Approx(1 - 3 + 0.5));
  CHECK(y(0, 1) == doctest::Approx(4 - 6 - 0.5));

  m.out_act = OutputActivation::logistic;
  Mat<double> p = m.forward(x, c);
  CHECK(p(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(1.5))));
  CHECK_THROWS_AS(m.forward(Mat<double>::Zero(1, 2), c), Error);
}

TEST_CASE("Glorot init: bounds scale with fan-in/fan-out, biases zero") {
  std::mt19937_64 rng(3);
  auto m = Mlp<double>::init({100, 50, 1}, OutputActivation::identity, rng);
  double bound0 = std::sqrt(6.0 / 150.0);
  CHECK(m.layers[0].w.maxCoeff() <= bound0);
  CHECK(m.layers[0].w.minCoeff() >= -bound0);
  CHECK(m.layers[0].w.cwiseAbs().maxCoeff() > 0.5 * bound0);  // actually spread out
  CHECK(m.layers[0].b.isZero());
  CHECK(m.layers[1].b.isZero());
}

TEST_CASE("MLP gradients match central finite differences") {
  for (auto act : {OutputActivation::identity, OutputActivation::logistic}) {
    auto m = random_mlp<double>({4, 6, 6, 2}, act, 17);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    Mat<double> x(5, 4), dy(5, 2);
    for (int i = 0; i < x.size(); ++i) x(i) = u(rng);
    for (int i = 0; i < dy.size(); ++i) dy(i) = u(rng);

    auto scalar_loss = [&]() {  // <dy, f(x)> as a scalar objective
      Mlp<double>::Cache c;
      return (m.forward(x, c).array() * dy.array()).sum();
    };
    Mlp<double>::Cache c;
    m.forward(x, c);
    auto g = m.zero_grads();
    Mat<double> dx = m.backward(c, dy, g);

    double eps = 1e-6;
    for (size_t l = 0; l < m.layers.size(); ++l) {
      for (Eigen::Index i = 0; i < m.layers[l].w.size(); ++i) {
        double orig = m.layers[l].w(i);
        m.layers[l].w(i) = orig + eps;
        double lp = scalar_loss();
        m.layers[l].w(i) = orig - eps;
        double lm = scalar_loss();
        m.layers[l].w(i) = orig;
        CHECK(g.dw[l](i) == doctest::Approx((lp - lm) / (2 * eps)).epsilon(1e-5));
      }
      for (Eigen::Index i = 0; i < m.layers[l].b.size(); ++i) {
        double orig = m.layers[l].b(i);
        m.layers[l].b(i) = orig + eps;
        double lp = scalar_loss();
        m.layers[l].b(i) = orig - eps;
        double lm = scalar_loss();
        m.layers[l].b(i) = orig;
        CHECK(g.db[l](i) == doctest::Approx((lp - lm) / (2 * eps)).epsilon(1e-5));
      }
    }
    // input gradient
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      double orig = x(i);
      x(i) = orig + eps;
      double lp = scalar_loss();
      x(i) = orig - eps;
      double lm = scalar_loss();
      x(i) = orig;
      CHECK(dx(i) == doctest::Approx((lp - lm) / (2 * eps)).epsilon(1e-5));
    }
  }
}

TEST_CASE("factorized first-layer entry points match the plain MLP") {
  auto m = random_mlp<double>({6, 8, 8, 3}, OutputActivation::identity, 23);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  Mat<double> x(7, 6), dy(7, 3);
  for (int i = 0; i < x.size(); ++i) x(i) = u(rng);
  for (int i = 0; i < dy.size(); ++i) dy(i) = u(rng);

  Mlp<double>::Cache c_ref, c_z1;
  Mat<double> y_ref = m.forward(x, c_ref);
  Mat<double> z1 = x * m.layers[0].w.transpose();
  z1.rowwise() += m.layers[0].b.transpose();
  Mat<double> y_z1 = mlp_forward_from_z1(m, z1, c_z1);
  CHECK((y_ref - y_z1).cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  auto g_ref = m.zero_grads();
  auto g_z1 = m.zero_grads();
  m.backward(c_ref, dy, g_ref);
  Mat<double> dz1 = mlp_backward_to_z1(m, c_z1, dy, g_z1);
  // caller-owned first-layer weight gradient
  g_z1.dw[0].noalias() += dz1.transpose() * x;
  for (size_t l = 0; l < m.layers.size(); ++l) {
    CHECK((g_ref.dw[l] - g_z1.dw[l]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((g_ref.db[l] - g_z1.db[l]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("Adam follows the bias-corrected reference update") {
  using V = Vec<double>;
  V p(1), g1(1), g2(1);
  p << 1.0;
  g1 << 0.5;
  g2 << -0.25;
  AdamState<V> st;
  std::vector<V*> params{&p};

  double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0, ref = 1.0;
  for (int t = 1; t <= 2; ++t) {
    double g = t == 1 ? 0.5 : -0.25;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mh = m / (1 - std::pow(b1, t));
    double vh = v / (1 - std::pow(b2, t));
    ref -= lr * mh / (std::sqrt(vh) + eps);
  }
  std::vector<const V*> gs{&g1};
  adam_step(st, params, gs, lr);
  gs = {&g2};
  adam_step(st, params, gs, lr);
  CHECK(p(0) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(st.t == 2);
}

TEST_CASE("staircase LR schedule hits the pinned values exactly") {
  LrSchedule s;
  CHECK(s.lr_at(0) == 1e-4);
  CHECK(s.lr_at(1999) == 1e-4);
  CHECK(s.lr_at(2000) == 9.8e-5);
  CHECK(s.lr_at(3999) == 9.8e-5);
  CHECK(s.lr_at(4000) == 9.604e-5);
  CHECK_THROWS_AS(s.lr_at(-1), Error);

  LrSchedule cont;
  cont.staircase = false;
  CHECK(cont.lr_at(1000) == doctest::Approx(1e-4 * std::sqrt(0.98)));

  LrSchedule bad;
  bad.decay = 0;
  CHECK_THROWS_AS(bad.lr_at(0), Error);
}

TEST_CASE("MLP JSON round trip is exact") {
  auto m = random_mlp<double>({3, 4, 2}, OutputActivation::logistic, 31);
  auto r = mlp_from_json<double>(mlp_to_json(m));
  CHECK(r.out_act == m.out_act);
  REQUIRE(r.layers.size() == m.layers.size());
  for (size_t l = 0; l < m.layers.size(); ++l) {
    CHECK(r.layers[l].w == m.layers[l].w);
    CHECK(r.layers[l].b == m.layers[l].b);
  }
}

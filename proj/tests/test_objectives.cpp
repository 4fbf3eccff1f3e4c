#include "catch_amalgamated.hpp"

#include <cmath>

#include "fedflex/objectives.hpp"
#include "fedflex/rng.hpp"

using namespace fedflex;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

LocalObjective quadratic_1d(double a, double minimizer, double sigma = 0.0) {
  Mat A(1, 1);
  A << a;
  Vec b(1);
  b << a * minimizer;
  return LocalObjective::quadratic(A, b, 0.5 * a * minimizer * minimizer, sigma);
}

/// Central finite differences, the independent gradient oracle.
Vec fd_gradient(const LocalObjective& obj, const Vec& w, double h = 1e-6) {
  Vec g(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Vec lo = w, hi = w;
    lo[i] -= h;
    hi[i] += h;
    g[i] = (obj.value(hi) - obj.value(lo)) / (2.0 * h);
  }
  return g;
}

LocalObjective random_logistic(int n, int d, double lambda, int batch, RngStream& rng) {
  Mat X(n, d);
  Eigen::VectorXi y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) X(i, j) = rng.gaussian();
    y[i] = rng.uniform() < 0.5 ? 0 : 1;
  }
  return LocalObjective::logistic(X, y, lambda, batch);
}

}  // namespace

TEST_CASE("full gradient of quadratics") {
  auto id2 = LocalObjective::quadratic(Mat::Identity(2, 2), Vec::Zero(2));
  REQUIRE((id2.full_gradient(vec2(3, 4)) - vec2(3, 4)).norm() == 0.0);

  Mat A(2, 2);
  A << 2, 0, 0, 1;
  Vec b = vec2(2, 0);
  auto q = LocalObjective::quadratic(A, b);
  REQUIRE(q.full_gradient(vec2(1, 0)).norm() == 0.0);
  REQUIRE((q.local_minimizer() - vec2(1, 0)).norm() < 1e-14);
}

TEST_CASE("full gradient of a one-sample logistic objective") {
  Mat X(1, 1);
  X << 1.0;
  Eigen::VectorXi y(1);
  y << 1;
  auto obj = LocalObjective::logistic(X, y, 0.1, 1);
  Vec w = Vec::Zero(1);
  REQUIRE(obj.full_gradient(w)[0] == Catch::Approx(-0.5).margin(1e-15));
}

TEST_CASE("gradients match central finite differences") {
  RngStream rng(17);
  for (int rep = 0; rep < 5; ++rep) {
    QuadraticFederationOptions opt;
    opt.dim = 4;
    opt.clients = 1;
    auto fed = random_quadratic_federation(opt, rng);
    const auto& q = fed.client(0);
    auto logi = random_logistic(30, 4, 0.2, 30, rng);
    for (const LocalObjective* obj : {&q, static_cast<const LocalObjective*>(&logi)}) {
      Vec w(4);
      for (int i = 0; i < 4; ++i) w[i] = rng.gaussian();
      const Vec g = obj->full_gradient(w);
      const Vec fd = fd_gradient(*obj, w);
      REQUIRE((g - fd).norm() <= 1e-5 * (1.0 + g.norm()));
    }
  }
}

TEST_CASE("strong convexity and smoothness hold on random pairs") {
  RngStream rng(23);
  QuadraticFederationOptions opt;
  opt.dim = 3;
  opt.clients = 1;
  opt.eig_min = 0.7;
  opt.eig_max = 5.0;
  auto fed = random_quadratic_federation(opt, rng);
  auto logi = random_logistic(40, 3, 0.3, 40, rng);
  for (const LocalObjective* obj : {&fed.client(0), static_cast<const LocalObjective*>(&logi)}) {
    const double mu = obj->strong_convexity();
    const double L = obj->smoothness();
    for (int rep = 0; rep < 100; ++rep) {
      Vec u(3), v(3);
      for (int i = 0; i < 3; ++i) {
        u[i] = 2.0 * rng.gaussian();
        v[i] = 2.0 * rng.gaussian();
      }
      const Vec gu = obj->full_gradient(u);
      const Vec gv = obj->full_gradient(v);
      REQUIRE(obj->value(v) >=
              obj->value(u) + gu.dot(v - u) + 0.5 * mu * (v - u).squaredNorm() - 1e-9);
      REQUIRE((gu - gv).norm() <= L * (u - v).norm() * (1.0 + 1e-12) + 1e-12);
    }
  }
}

TEST_CASE("stochastic gradients are unbiased with controlled variance") {
  RngStream rng(31);
  auto q = quadratic_1d(2.0, 0.5, 0.0);
  Vec w(1);
  w << 1.5;

  SECTION("zero noise equals the full gradient") {
    auto stream = rng.child(1);
    REQUIRE(q.stochastic_gradient(w, stream) == q.full_gradient(w));
  }

  SECTION("empirical mean within the CLT tolerance, variance within bound") {
    Mat A(2, 2);
    A << 2, 0.3, 0.3, 1;
    auto noisy = LocalObjective::quadratic(A, vec2(0.5, -0.2), 0.0, 1.0);
    const Vec w2 = vec2(0.4, -1.0);
    const Vec g = noisy.full_gradient(w2);
    const long draws = 100000;
    Vec mean = Vec::Zero(2);
    double dev2 = 0.0;
    auto stream = rng.child(2);
    for (long i = 0; i < draws; ++i) {
      const Vec s = noisy.stochastic_gradient(w2, stream);
      mean += s;
      dev2 += (s - g).squaredNorm();
    }
    mean /= static_cast<double>(draws);
    dev2 /= static_cast<double>(draws);
    REQUIRE((mean - g).norm() <= 3e-2);  // 3 sigma / sqrt(draws) with sigma = 1
    REQUIRE(dev2 <= 1.0 * 1.05);
    REQUIRE(dev2 >= 1.0 * 0.95);  // the quadratic noise model is exactly sigma^2
  }

  SECTION("full-batch logistic gradient is exact") {
    RngStream lr(5);
    auto logi = random_logistic(25, 3, 0.2, 25, lr);
    Vec w3(3);
    w3 << 0.2, -0.4, 0.9;
    auto stream = rng.child(3);
    REQUIRE((logi.stochastic_gradient(w3, stream) - logi.full_gradient(w3)).norm() == 0.0);
  }

  SECTION("minibatch logistic deviation stays within the declared bound") {
    RngStream lr(7);
    auto logi = random_logistic(60, 3, 0.2, 10, lr);
    const double sigma2 = logi.noise_bound() * logi.noise_bound();
    Vec w3(3);
    w3 << 0.5, 0.1, -0.3;
    const Vec g = logi.full_gradient(w3);
    double dev2 = 0.0;
    const long draws = 20000;
    auto stream = rng.child(4);
    for (long i = 0; i < draws; ++i) {
      dev2 += (logi.stochastic_gradient(w3, stream) - g).squaredNorm();
    }
    dev2 /= static_cast<double>(draws);
    REQUIRE(dev2 <= sigma2 * 1.05);
  }
}

TEST_CASE("global optimum") {
  SECTION("two symmetric 1-d quadratics meet at zero") {
    auto fed = Federation::build({quadratic_1d(1.0, 1.0), quadratic_1d(1.0, -1.0)}, {1, 1});
    REQUIRE(std::abs(fed.optimum()[0]) < 1e-14);
  }
  SECTION("a single client keeps its own minimizer") {
    Mat A(2, 2);
    A << 3, 1, 1, 2;
    Vec b = vec2(1.0, -2.0);
    auto fed = Federation::build({LocalObjective::quadratic(A, b)}, {4});
    REQUIRE((fed.optimum() - fed.client(0).local_minimizer()).norm() < 1e-12);
  }
  SECTION("identical clients share the local minimizer and have zero gap") {
    auto fed = Federation::build({quadratic_1d(2.0, 0.7), quadratic_1d(2.0, 0.7)}, {3, 5});
    REQUIRE(std::abs(fed.optimum()[0] - 0.7) < 1e-14);
    const auto fc = compute_constants(fed, 1.0);
    REQUIRE(fc.per_client[0].gamma == 0.0);
    REQUIRE(fc.per_client[1].gamma == 0.0);
  }
  SECTION("logistic federations are solved to tight gradient norm") {
    RngStream rng(3);
    auto fed = Federation::build({random_logistic(40, 3, 0.5, 40, rng),
                                  random_logistic(40, 3, 0.5, 40, rng)},
                                 {40, 40});
    REQUIRE(fed.gradient(fed.optimum()).norm() <= 1e-10);
  }
}

TEST_CASE("federation constants") {
  SECTION("non-IID gap of the symmetric pair is 1/2 each") {
    auto fed = Federation::build({quadratic_1d(1.0, 1.0), quadratic_1d(1.0, -1.0)}, {1, 1});
    const auto fc = compute_constants(fed, 2.0);
    REQUIRE(fc.per_client[0].gamma == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(fc.per_client[1].gamma == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(fc.gamma_sum == Catch::Approx(0.5).margin(1e-12));
  }
  SECTION("diagonal eigenvalues set L and mu") {
    Mat A(2, 2);
    A << 1, 0, 0, 4;
    auto fed = Federation::build({LocalObjective::quadratic(A, Vec::Zero(2))}, {1});
    const auto fc = compute_constants(fed, 1.0);
    REQUIRE(fc.per_client[0].smoothness == Catch::Approx(4.0));
    REQUIRE(fc.per_client[0].strong_convexity == Catch::Approx(1.0));
  }
  SECTION("gradient bound covers the declared region") {
    RngStream rng(11);
    QuadraticFederationOptions opt;
    opt.dim = 3;
    opt.clients = 3;
    opt.sigma = 0.4;
    auto fed = random_quadratic_federation(opt, rng);
    const double radius = 2.5;
    const auto fc = compute_constants(fed, radius);
    for (int rep = 0; rep < 200; ++rep) {
      Vec dir(3);
      for (int i = 0; i < 3; ++i) dir[i] = rng.gaussian();
      dir *= radius * rng.uniform() / dir.norm();
      const Vec w = fed.optimum() + dir;
      for (std::size_t k = 0; k < fed.size(); ++k) {
        REQUIRE(fed.client(k).full_gradient(w).norm() <= fc.grad_bound);
      }
    }
  }
}

TEST_CASE("invalid construction and dimension mismatches are rejected") {
  Mat bad(2, 2);
  bad << 1, 2, 0, 1;  // asymmetric
  REQUIRE_THROWS_AS(LocalObjective::quadratic(bad, Vec::Zero(2)), std::invalid_argument);

  Mat indef(1, 1);
  indef << -1.0;
  REQUIRE_THROWS_AS(LocalObjective::quadratic(indef, Vec::Zero(1)), std::invalid_argument);

  auto q = quadratic_1d(1.0, 0.0);
  REQUIRE_THROWS_AS(q.full_gradient(Vec::Zero(2)), std::invalid_argument);

  REQUIRE_THROWS_AS(Federation::build({quadratic_1d(1.0, 0.0)}, {0}), std::invalid_argument);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "bnf/bernstein.hpp"
#include "bnf/error.hpp"
#include "bnf/math.hpp"

using namespace bnf;

namespace {

// de Casteljau evaluation, independent of the basis-expansion code path.
double casteljau(std::vector<double> c, double t) {
  for (std::size_t r = 1; r < c.size(); ++r) {
    for (std::size_t i = 0; i + r < c.size(); ++i) c[i] = (1.0 - t) * c[i] + t * c[i + 1];
  }
  return c[0];
}

std::vector<double> random_raw(std::mt19937_64& rng, BernsteinOrder order, double spread = 2.0) {
  std::normal_distribution<double> n(0.0, spread);
  std::vector<double> raw(order.raw_size());
  for (double& v : raw) v = n(rng);
  return raw;
}

void check_invariants(const ConstrainedFlowParams& p) {
  REQUIRE(p.a1() > 0.0);
  const auto th = p.theta();
  REQUIRE(th.front() <= -3.0);
  REQUIRE(th.back() >= 3.0);
  for (std::size_t k = 1; k < th.size(); ++k) REQUIRE(th[k] > th[k - 1]);
}

const double kLn2 = std::log(2.0);

}  // namespace

TEST_CASE("order") {
  CHECK(BernsteinOrder().value() == 16);
  CHECK(BernsteinOrder(16).raw_size() == 20);
  CHECK(BernsteinOrder(16).coefficient_count() == 17);
  CHECK_THROWS_AS(BernsteinOrder(0), InvalidParameterError);
}

TEST_CASE("constrain_params zero raw, M = 2") {
  const auto p = constrain_params(std::vector<double>(6, 0.0), BernsteinOrder(2));
  CHECK(p.a1() == doctest::Approx(kLn2).epsilon(1e-15));
  CHECK(p.b1() == 0.0);
  REQUIRE(p.theta().size() == 3);
  CHECK(p.theta()[0] == doctest::Approx(-3.0 - kLn2).epsilon(1e-14));
  CHECK(std::abs(p.theta()[1]) < 1e-14);
  CHECK(p.theta()[2] == doctest::Approx(3.0 + kLn2).epsilon(1e-14));
}

TEST_CASE("constrain_params saturated softmax keeps strict order") {
  // softmax(10, -10) = (1 - e, e) with e = 1 / (1 + exp(20)) = 2.0611536e-9.
  const auto p = constrain_params(std::vector<double>{0, 0, 0, 10, -10, 0}, BernsteinOrder(2));
  check_invariants(p);
  const double range = 2.0 * (3.0 + kLn2);
  const double share_small = 1.0 / (1.0 + std::exp(20.0));
  CHECK(share_small == doctest::Approx(2.0611536e-9).epsilon(1e-6));
  CHECK(p.theta()[2] - p.theta()[1] == doctest::Approx(range * share_small).epsilon(1e-3));
  CHECK(p.theta()[2] - p.theta()[1] == doctest::Approx(1.5e-8).epsilon(0.03));
}

TEST_CASE("constrain_params errors") {
  CHECK_THROWS_AS(constrain_params(std::vector<double>(5, 0.0), BernsteinOrder(2)), DimensionError);
  std::vector<double> bad(6, 0.0);
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(constrain_params(bad, BernsteinOrder(2)), InvalidParameterError);
  bad[3] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(constrain_params(bad, BernsteinOrder(2)), InvalidParameterError);
}

TEST_CASE("constrain_params invariants on random and extreme raws") {
  std::mt19937_64 rng(1);
  for (int m : {1, 2, 8, 16, 32}) {
    for (int rep = 0; rep < 200; ++rep) check_invariants(constrain_params(random_raw(rng, BernsteinOrder(m), 20.0), BernsteinOrder(m)));
  }
  std::vector<double> extreme(20, 0.0);
  extreme[3] = 800.0;
  extreme[2] = -900.0;
  extreme[19] = 900.0;
  check_invariants(constrain_params(extreme, BernsteinOrder(16)));
}

TEST_CASE("basis values") {
  const auto b0 = bernstein_basis(0.0, BernsteinOrder(5));
  CHECK(b0[0] == 1.0);
  for (std::size_t i = 1; i < b0.size(); ++i) CHECK(b0[i] == 0.0);
  const auto b1 = bernstein_basis(1.0, BernsteinOrder(5));
  CHECK(b1.back() == 1.0);
  for (std::size_t i = 0; i + 1 < b1.size(); ++i) CHECK(b1[i] == 0.0);
  const auto bh = bernstein_basis(0.5, BernsteinOrder(2));
  CHECK(bh[0] == doctest::Approx(0.25));
  CHECK(bh[1] == doctest::Approx(0.5));
  CHECK(bh[2] == doctest::Approx(0.25));
  CHECK_THROWS_AS(bernstein_basis(-1e-9, BernsteinOrder(3)), DomainError);
  CHECK_THROWS_AS(bernstein_basis(1.0 + 1e-9, BernsteinOrder(3)), DomainError);
}

TEST_CASE("basis is a probability vector") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int m : {1, 2, 16, 32}) {
    for (int rep = 0; rep < 100; ++rep) {
      const auto b = bernstein_basis(u(rng), BernsteinOrder(m));
      double s = 0.0;
      for (double v : b) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("f2 matches de Casteljau") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int m : {2, 8, 16}) {
    for (int rep = 0; rep < 50; ++rep) {
      const auto p = constrain_params(random_raw(rng, BernsteinOrder(m)), BernsteinOrder(m));
      const std::vector<double> th(p.theta().begin(), p.theta().end());
      const double t = u(rng);
      CHECK(f2_eval(t, th) == doctest::Approx(casteljau(th, t)).epsilon(1e-12));
    }
  }
}

TEST_CASE("f2 endpoints, symmetry, constants") {
  const std::vector<double> th{-3.0 - kLn2, 0.0, 3.0 + kLn2};
  CHECK(f2_eval(0.0, th) == th[0]);
  CHECK(f2_eval(1.0, th) == th[2]);
  CHECK(std::abs(f2_eval(0.5, th)) < 1e-15);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<double> c(9, 1.75);
  for (int i = 0; i < 50; ++i) CHECK(f2_eval(u(rng), c) == doctest::Approx(1.75).epsilon(1e-14));
}

TEST_CASE("f2 derivative") {
  const std::vector<double> th{-3.0 - kLn2, 0.0, 3.0 + kLn2};
  CHECK(f2_derivative(0.0, th) == doctest::Approx(2.0 * (3.0 + kLn2)).epsilon(1e-14));
  CHECK(f2_derivative(0.0, th) == doctest::Approx(7.3863).epsilon(1e-4));
  CHECK(f2_derivative(-0.5, th) == f2_derivative(0.0, th));
  CHECK(f2_derivative(1.7, th) == f2_derivative(1.0, th));
  const std::vector<double> lin{-3.0, 0.0, 3.0};
  for (double t : {0.0, 0.2, 0.5, 0.9, 1.0}) CHECK(f2_derivative(t, lin) == doctest::Approx(6.0).epsilon(1e-14));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int m : {2, 8, 16}) {
    for (int rep = 0; rep < 50; ++rep) {
      const auto p = constrain_params(random_raw(rng, BernsteinOrder(m)), BernsteinOrder(m));
      const std::vector<double> th(p.theta().begin(), p.theta().end());
      const double t = u(rng);
      const double h = 1e-5;
      const double fd = (casteljau(th, t + h) - casteljau(th, t - h)) / (2.0 * h);
      const double d = f2_derivative(t, th);
      CHECK(d > 0.0);
      CHECK(std::abs(d - fd) <= 1e-6 * std::abs(fd) + 1e-9);
      const double fd2 = (f2_derivative(t + h, th) - f2_derivative(t - h, th)) / (2.0 * h);
      CHECK(f2_second_derivative(t, th) == doctest::Approx(fd2).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("linear extrapolation is C1 at the boundary") {
  std::mt19937_64 rng(6);
  const auto p = constrain_params(random_raw(rng, BernsteinOrder(16)), BernsteinOrder(16));
  const auto th = p.theta();
  const double eps = 1e-6;
  for (double edge : {0.0, 1.0}) {
    const double slope = f2_derivative(edge, th);
    CHECK(std::abs(f2_eval(edge - eps, th) - f2_eval(edge, th)) <= eps * (slope + 1.0));
    CHECK(std::abs(f2_eval(edge + eps, th) - f2_eval(edge, th)) <= eps * (slope + 1.0));
  }
  CHECK(f2_eval(-2.0, th) == doctest::Approx(th[0] - 2.0 * f2_derivative(0.0, th)));
  CHECK(f2_eval(3.0, th) == doctest::Approx(th.back() + 2.0 * f2_derivative(1.0, th)));
}

TEST_CASE("flow_forward examples") {
  const auto p = constrain_params(std::vector<double>(6, 0.0), BernsteinOrder(2));
  const auto e = flow_forward(0.0, p);
  CHECK(e.z == doctest::Approx(-3.0 - kLn2));
  CHECK(e.log_det == doctest::Approx(std::log(kLn2 * 2.0 * (3.0 + kLn2))).epsilon(1e-14));
  CHECK(e.log_det == doctest::Approx(1.633).epsilon(1e-3));

  const ConstrainedFlowParams affine(1.0, 0.0, {-3.0, 0.0, 3.0});
  for (double y : {0.0, 0.25, 0.5, 1.0}) {
    const auto a = flow_forward(y, affine);
    CHECK(a.z == doctest::Approx(6.0 * y - 3.0));
    CHECK(a.log_det == doctest::Approx(std::log(6.0)));
  }
  CHECK_THROWS_AS(flow_forward(std::numeric_limits<double>::quiet_NaN(), p), DomainError);
}

TEST_CASE("flow_forward is monotone and log_det matches finite differences") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  for (int m : {2, 8, 16}) {
    for (int rep = 0; rep < 100; ++rep) {
      const auto p = constrain_params(random_raw(rng, BernsteinOrder(m)), BernsteinOrder(m));
      double prev = -std::numeric_limits<double>::infinity();
      for (int k = 0; k <= 60; ++k) {
        const double y = (p.b1() - 0.5 + 2.0 * k / 60.0) / p.a1();
        const double z = flow_forward(y, p).z;
        CHECK(z > prev);
        prev = z;
      }
      const double z1 = u(rng);
      if (std::abs(z1) < 1e-3 || std::abs(z1 - 1.0) < 1e-3) continue;
      const double y = (z1 + p.b1()) / p.a1();
      const double h = 1e-6 / p.a1();
      const double fd = (flow_forward(y + h, p).z - flow_forward(y - h, p).z) / (2.0 * h);
      CHECK(std::exp(flow_forward(y, p).log_det) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("flow_inverse examples") {
  const auto p = constrain_params(std::vector<double>(6, 0.0), BernsteinOrder(2));
  CHECK(flow_inverse(0.0, p) == doctest::Approx(0.5 / kLn2).epsilon(1e-9));
  CHECK(flow_inverse(0.0, p) == doctest::Approx(0.7213).epsilon(1e-4));
  CHECK(flow_inverse(p.theta()[0], p) == p.b1() / p.a1());
  // Linear tails are inverted exactly.
  const double below = p.theta()[0] - 5.0;
  CHECK(flow_forward(flow_inverse(below, p), p).z == doctest::Approx(below).epsilon(1e-14));
}

TEST_CASE("flow round trip") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.3, 1.3);
  std::normal_distribution<double> zn(0.0, 3.0);
  for (int m : {2, 8, 16}) {
    for (int rep = 0; rep < 300; ++rep) {
      const auto p = constrain_params(random_raw(rng, BernsteinOrder(m)), BernsteinOrder(m));
      const double y = (u(rng) + p.b1()) / p.a1();
      CHECK(std::abs(flow_inverse(flow_forward(y, p).z, p) - y) <= 1e-8);
      const double z = zn(rng);
      CHECK(std::abs(flow_forward(flow_inverse(z, p), p).z - z) <= 1e-9);
    }
  }
}

TEST_CASE("flow density integrates to one") {
  using boost::math::quadrature::gauss_kronrod;
  const double inf = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(9);
  for (int m : {2, 8, 16}) {
    for (int rep = 0; rep < 20; ++rep) {
      const auto p = constrain_params(random_raw(rng, BernsteinOrder(m)), BernsteinOrder(m));
      auto density = [&](double y) {
        const auto e = flow_forward(y, p);
        return std::exp(math::normal_log_pdf(e.z) + e.log_det);
      };
      const double mass = gauss_kronrod<double, 61>::integrate(density, -inf, inf, 15, 1e-10);
      CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
    }
  }
}

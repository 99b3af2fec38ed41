#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "edgeprune/errors.hpp"
#include "edgeprune/gaussfield.hpp"
#include "edgeprune/rng.hpp"
#include "support.hpp"

using namespace edgeprune;
using namespace edgeprune::gaussfield;
using edgeprune::testing::monte_carlo2;

namespace {

constexpr auto relu = Activation::relu;
constexpr auto tanh_act = Activation::tanh;

// Reference values at 30 significant digits, from tests/oracles/gauss_oracles.py.
constexpr double kTanhSq = 0.39429449039784117;
constexpr double kSech4 = 0.46440290244826824;
constexpr double kCross = 0.10512071711067775;  // q1 = 0.5, q2 = 2, c = 0.3
constexpr double kVariance = 0.97716260339514264;  // sigma_b 0.3, sigma_w 1.5, q 1
constexpr double kFixedQ = 0.96084427974043651;  // sigma_b 0.3, sigma_w 1.5
constexpr double kChi = 1.06098126414092;
constexpr double kEocSigmaW = 1.3955839751549022;  // tanh, sigma_b 0.3
constexpr double kEocQ = 0.76347476691046393;
constexpr double kReluHalf = 0.60899778104422936;

double factorial2(int n) {
  double r = 1.0;
  for (int k = n; k > 1; k -= 2) r *= k;
  return r;
}

}  // namespace

TEST_CASE("quadrature integrates normal moments") {
  const auto rule = make_quadrature(4);
  CHECK(rule.expect([](double) { return 1.0; }) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(rule.expect([](double z) { return z * z; }) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(rule.expect([](double z) { return z * z * z * z; }) == doctest::Approx(3.0).epsilon(1e-13));
  CHECK_THROWS_AS(make_quadrature(1), InvalidArgument);
  CHECK_THROWS_AS(make_quadrature(kMaxQuadratureOrder + 1), InvalidArgument);
}

TEST_CASE("quadrature is exact below degree 2n") {
  for (int order : {2, 5, 16, 64, 128, kMaxQuadratureOrder}) {
    const auto rule = make_quadrature(order);
    double total = 0.0;
    for (double w : rule.weights) {
      CHECK(w > 0.0);
      total += w;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
    const int top = std::min(2 * order - 1, 40);
    for (int m = 0; m <= top; ++m) {
      const double got = rule.expect([m](double z) { return std::pow(z, m); });
      const double want = m % 2 ? 0.0 : factorial2(m - 1);
      // Relative to E|Z|^m's order of magnitude so odd moments get a scale too.
      const double scale = factorial2(m - 1 + m % 2);
      CAPTURE(order);
      CAPTURE(m);
      CHECK(std::abs(got - want) <= 1e-10 * scale);
    }
  }
}

TEST_CASE("scaled rule stays accurate for wide variances") {
  // E[tanh(sqrt(q) Z)^2] at 25 digits.
  const std::vector<std::pair<double, double>> ref = {
      {0.5, 0.2736763079367389090182809}, {2.0, 0.5199757456639486235318158},
      {8.0, 0.7310509074434628896248187}, {64.0, 0.9008968068217746513741158},
      {400.0, 0.9601466983062406969507296}};
  for (auto [q, want] : ref) {
    CAPTURE(q);
    CHECK(std::abs(expect_phi_sq(tanh_act, q) - want) < 1e-13);
  }
  const auto rule = make_scaled_rule(3.0);
  double total = 0.0;
  for (double w : rule.weights) total += w;
  CHECK(std::abs(total - 1.0) < 1e-14);
  CHECK(rule.expect([](double z) { return z * z; }) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("activation moments") {
  CHECK(expect_phi_sq(relu, 2.0) == 1.0);
  CHECK(expect_phi_sq(tanh_act, 0.0) == 0.0);
  CHECK(expect_dphi_sq(relu, 1.7) == 0.5);
  CHECK(expect_dphi_sq(tanh_act, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(expect_phi_sq(tanh_act, 1.0) - kTanhSq) < 1e-13);
  CHECK(std::abs(expect_dphi_sq(tanh_act, 1.0) - kSech4) < 1e-13);
  CHECK_THROWS_AS(expect_phi_sq(tanh_act, -1e-9), InvalidArgument);
  CHECK_THROWS_AS(expect_dphi_sq(relu, -1.0), InvalidArgument);
}

TEST_CASE("moments agree with Monte Carlo") {
  constexpr std::uint64_t n = 10'000'000;
  const auto m1 = monte_carlo2(
      [](double z, double) {
        const double t = std::tanh(z);
        return t * t;
      },
      n, 1);
  CHECK(std::abs(expect_phi_sq(tanh_act, 1.0) - m1.mean) < 3.0 * m1.se);
  const auto m2 = monte_carlo2(
      [](double z, double) {
        const double t = std::tanh(z);
        return (1.0 - t * t) * (1.0 - t * t);
      },
      n, 2);
  CHECK(std::abs(expect_dphi_sq(tanh_act, 1.0) - m2.mean) < 3.0 * m2.se);
  const double s2 = std::sqrt(2.0), sc = std::sqrt(1.0 - 0.09);
  const auto m3 = monte_carlo2(
      [&](double z1, double z2) { return std::tanh(std::sqrt(0.5) * z1) * std::tanh(s2 * (0.3 * z1 + sc * z2)); },
      n, 3);
  CHECK(std::abs(cross_expectation(tanh_act, 0.5, 2.0, 0.3) - m3.mean) < 3.0 * m3.se);
  const auto m4 = monte_carlo2([](double z1, double z2) { return std::max(z1, 0.0) * std::max(z2, 0.0); }, n, 4);
  CHECK(std::abs(cross_expectation(relu, 1.0, 1.0, 0.0) - m4.mean) < 3.0 * m4.se);
}

TEST_CASE("cross expectation") {
  CHECK(cross_expectation(relu, 1.0, 1.0, 1.0) == doctest::Approx(0.5));
  CHECK(cross_expectation(relu, 1.0, 1.0, 0.0) == doctest::Approx(1.0 / (2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(std::abs(cross_expectation(tanh_act, 0.5, 2.0, 0.3) - kCross) < 1e-13);
  for (double q : {0.2, 1.0, 5.0})
    CHECK(std::abs(cross_expectation(tanh_act, q, q, 1.0) - expect_phi_sq(tanh_act, q)) < 1e-13);
  for (double c : {-0.7, 0.1, 0.9})
    CHECK(std::abs(cross_expectation(tanh_act, 0.4, 3.0, c) - cross_expectation(tanh_act, 3.0, 0.4, c)) < 1e-13);
  CHECK_THROWS_AS(cross_expectation(tanh_act, 1.0, 1.0, 1.0 + 1e-12), InvalidArgument);
}

TEST_CASE("variance map and its fixed point") {
  CHECK(variance_map(relu, 0.0, std::sqrt(2.0), 3.5) == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(variance_map(tanh_act, 0.0, 1.0, 0.0) == 0.0);
  CHECK(std::abs(variance_map(tanh_act, 0.3, 1.5, 1.0) - kVariance) < 1e-12);

  const auto deg = fixed_point_q(relu, 0.0, std::sqrt(2.0), 1.0);
  CHECK(deg.degenerate);
  CHECK(deg.q == 1.0);
  CHECK(fixed_point_q(tanh_act, 0.0, 1.0, 1.0, 1e-9).q < 1e-4);
  const auto fp = fixed_point_q(tanh_act, 0.3, 1.5);
  CHECK(std::abs(fp.q - kFixedQ) < 1e-11);
  CHECK(std::abs(variance_map(tanh_act, 0.3, 1.5, fp.q) - fp.q) <= 1e-12);
  CHECK_THROWS_AS(fixed_point_q(tanh_act, 0.3, 1.5, 0.0), InvalidArgument);
  CHECK_THROWS_AS(fixed_point_q(relu, 0.1, 2.0), ConvergenceFailure);
  try {
    fixed_point_q(tanh_act, 0.0, 1.0, 1.0, 1e-12, 3);
    FAIL("expected a convergence failure");
  } catch (const ConvergenceFailure& e) {
    CHECK(e.last_iterate() > 0.0);
  }
}

TEST_CASE("variance map slope matches finite differences") {
  for (double q : {0.3, 1.0, 4.0}) {
    const double h = 1e-5;
    const double fd = (variance_map(tanh_act, 0.3, 1.5, q + h) - variance_map(tanh_act, 0.3, 1.5, q - h)) / (2 * h);
    CHECK(variance_map_slope(tanh_act, 0.3, 1.5, q) == doctest::Approx(fd).epsilon(1e-8));
  }
}

TEST_CASE("chi") {
  CHECK(chi(relu, 0.0, std::sqrt(2.0)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(chi(relu, 0.0, 1.0) == 0.5);
  const double x = chi(tanh_act, 0.3, 1.5);
  CHECK(std::abs(x - kChi) < 1e-11);
  // Independent check: slope of f at c -> 1 from below.
  const auto edge = make_edge(tanh_act, 0.3, 1.5);
  const double h = 1e-6;
  CHECK((1.0 - correlation_map(tanh_act, edge, 1.0 - h)) / h == doctest::Approx(x).epsilon(1e-5));
  CHECK(edge.chi == doctest::Approx(1.5 * 1.5 * expect_dphi_sq(tanh_act, edge.q_star)).epsilon(1e-8));
}

TEST_CASE("edge of chaos") {
  const auto r = eoc_solve(relu, 0.0);
  CHECK(r.sigma_w == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(r.conventional_q);
  CHECK(r.q_star == 1.0);

  const auto t0 = eoc_solve(tanh_act, 0.0);
  CHECK(t0.sigma_w == doctest::Approx(1.0).epsilon(1e-6));

  const auto t = eoc_solve(tanh_act, 0.3);
  CHECK(std::abs(t.chi - 1.0) <= 1e-6);
  CHECK(std::abs(t.sigma_w - kEocSigmaW) < 1e-10);
  CHECK(std::abs(t.q_star - kEocQ) < 1e-10);

  // chi = 1 under Monte Carlo as well.
  const double s = std::sqrt(t.q_star);
  const auto mc = monte_carlo2(
      [&](double z, double) {
        const double th = std::tanh(s * z);
        return (1.0 - th * th) * (1.0 - th * th);
      },
      10'000'000, 5);
  const double w2 = t.sigma_w * t.sigma_w;
  CHECK(std::abs(w2 * mc.mean - 1.0) < 3.0 * w2 * mc.se);

  const double h = 1e-4;
  CHECK((1.0 - correlation_map(tanh_act, t, 1.0 - h)) / h == doctest::Approx(1.0).epsilon(1e-2));
  CHECK_THROWS_AS(solve_sigma_w_for_chi(relu, 0.0, 1.0, 0.01, 1.0), BracketFailure);
}

TEST_CASE("correlation map") {
  const auto re = eoc_solve(relu, 0.0);
  CHECK(correlation_map(relu, re, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(correlation_map(relu, re, 0.0) == doctest::Approx(1.0 / std::numbers::pi).epsilon(1e-14));
  CHECK(std::abs(correlation_map(relu, re, -1.0)) < 1e-15);
  for (double c = -1.0; c <= 1.0; c += 0.05)
    CHECK(std::abs(correlation_map(relu, re, c) - relu_correlation_closed_form(c)) < 1e-8);

  EdgePoint zero;
  zero.q_star = 0.0;
  CHECK_THROWS_AS(correlation_map(tanh_act, zero, 0.5), DegenerateEdge);
}

TEST_CASE("f(1) = 1, monotone and convex for solvable edges") {
  // For odd phi, f - sigma_b^2/q is a series in odd powers of c with
  // nonnegative coefficients: convex on [0, 1], concave on [-1, 0]. ReLU's f
  // has f'' = 1/(pi sqrt(1 - c^2)) > 0 on the whole interval.
  std::vector<std::pair<Activation, EdgePoint>> edges;
  for (double sw : {0.5, 1.0, 1.4, 2.0, 3.0, 6.0}) edges.emplace_back(tanh_act, make_edge(tanh_act, 0.3, sw));
  edges.emplace_back(tanh_act, make_edge(tanh_act, 0.05, 1.2));
  edges.emplace_back(relu, make_edge(relu, 0.2, 1.2));
  edges.emplace_back(relu, eoc_solve(relu, 0.0));
  for (const auto& [act, e] : edges) {
    CAPTURE(e.sigma_w);
    CHECK(std::abs(correlation_map(act, e, 1.0) - 1.0) <= 1e-8);
    std::vector<double> f(101);
    for (int i = 0; i <= 100; ++i) f[i] = correlation_map(act, e, -1.0 + 0.02 * i);
    for (int i = 1; i <= 100; ++i) CHECK(f[i] >= f[i - 1] - 1e-12);
    const int first = act == relu ? 1 : 50;
    for (int i = first; i < 100; ++i) CHECK(f[i + 1] - 2 * f[i] + f[i - 1] >= -1e-8);
    if (act == tanh_act)
      for (int i = 1; i < 50; ++i) CHECK(f[i + 1] - 2 * f[i] + f[i - 1] <= 1e-8);
  }
}

TEST_CASE("relu closed form") {
  CHECK(relu_correlation_closed_form(1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(relu_correlation_closed_form(0.5) - kReluHalf) < 1e-14);
  CHECK(relu_correlation_closed_form(0.5) == doctest::Approx(0.60900).epsilon(1e-5));
  CHECK(relu_correlation_closed_form(0.0) == doctest::Approx(0.31831).epsilon(1e-5));
  CHECK_THROWS_AS(relu_correlation_closed_form(1.5), InvalidArgument);

  const double s = std::sqrt(0.75);
  const auto mc = monte_carlo2(
      [&](double z1, double z2) { return 2.0 * std::max(z1, 0.0) * std::max(0.5 * z1 + s * z2, 0.0); },
      10'000'000, 6);
  CHECK(std::abs(relu_correlation_closed_form(0.5) - mc.mean) < 3.0 * mc.se);

  // f(1 - e) - (1 - e) ~ (2 sqrt 2 / 3 pi) e^{3/2}
  const double beta = 2.0 * std::sqrt(2.0) / (3.0 * std::numbers::pi);
  for (double eps : {1e-4, 1e-3, 1e-2}) {
    const double lhs = relu_correlation_closed_form(1.0 - eps) - (1.0 - eps);
    CHECK(lhs == doctest::Approx(beta * std::pow(eps, 1.5)).epsilon(0.05));
    CHECK(relu_correlation_gap(eps) == doctest::Approx(1.0 - relu_correlation_closed_form(1.0 - eps)).epsilon(1e-9));
  }
}

TEST_CASE("gap step agrees with the correlation map") {
  for (double sw : {0.9, 1.5, 3.0}) {
    const auto e = make_edge(tanh_act, 0.3, sw);
    for (double u : {1e-3, 0.1, 0.5, 1.5}) {
      const double direct = 1.0 - correlation_map(tanh_act, e, 1.0 - u);
      CHECK(correlation_gap_step(tanh_act, 0.3, sw, e.q_star, u) == doctest::Approx(direct).epsilon(1e-9));
    }
  }
  // Tiny gaps: the slope chi must survive.
  const auto e = make_edge(tanh_act, 0.3, 1.5);
  CHECK(correlation_gap_step(tanh_act, 0.3, 1.5, e.q_star, 1e-12) / 1e-12 == doctest::Approx(e.chi).epsilon(1e-6));
}

TEST_CASE("folded normal quantiles") {
  CHECK(folded_quantile(0.0) == 0.0);
  CHECK(folded_quantile(0.5) == doctest::Approx(0.67448975019608174).epsilon(1e-12));
  CHECK(folded_quantile(0.9) == doctest::Approx(1.6448536269514727).epsilon(1e-12));
  CHECK_THROWS_AS(folded_quantile(1.0), InvalidArgument);
  CHECK_THROWS_AS(folded_quantile(-0.1), InvalidArgument);
  double prev = 0.0;
  for (int i = 1; i < 1000; ++i) {
    const double q = folded_quantile(i / 1000.0);
    CHECK(q > prev);
    prev = q;
  }
  CHECK(folded_quantile_upper(1e-300) == doctest::Approx(37.06578788077213).epsilon(1e-12));
  for (double p : {1e-10, 0.01, 0.3, 0.7, 0.999})
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));

  // Empirical quantile of 10^7 |Z| draws.
  const CounterRng r(11);
  std::vector<double> a(10'000'000);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::abs(r.normal(i));
  for (double x : {0.5, 0.9}) {
    auto nth = a.begin() + static_cast<std::ptrdiff_t>(x * a.size());
    std::nth_element(a.begin(), nth, a.end());
    CHECK(*nth == doctest::Approx(folded_quantile(x)).epsilon(1e-3));
  }
}

TEST_CASE("activation parsing") {
  CHECK(parse_activation("relu") == relu);
  CHECK(parse_activation("tanh") == tanh_act);
  CHECK(to_string(tanh_act) == "tanh");
  CHECK_THROWS_AS(parse_activation("elu"), InvalidArgument);
  CHECK(has_closed_form(relu));
  CHECK_FALSE(has_closed_form(tanh_act));
}

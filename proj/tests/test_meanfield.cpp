#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include "edgeprune/errors.hpp"
#include "edgeprune/meanfield.hpp"
#include "edgeprune/rng.hpp"

using namespace edgeprune;
using namespace edgeprune::meanfield;
namespace gf = edgeprune::gaussfield;

namespace {

constexpr auto relu = Activation::relu;
constexpr auto tanh_act = Activation::tanh;

EdgePoint ordered_tanh() {
  const double sw = 0.7 * gf::eoc_solve(tanh_act, 0.3).sigma_w;
  return gf::make_edge(tanh_act, 0.3, sw);
}

// Plain per-entry kernel average, written independently of the library loop.
std::vector<double> cnn_step_naive(const EdgePoint& e, const std::vector<double>& g, int n, int k) {
  std::vector<double> out(g.size());
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      double acc = 0.0;
      for (int s = -k; s <= k; ++s) {
        const int aa = ((a + s) % n + n) % n, bb = ((b + s) % n + n) % n;
        acc += gf::correlation_map(tanh_act, e, g[aa * n + bb]);
      }
      out[a * n + b] = acc / (2 * k + 1);
    }
  return out;
}

}  // namespace

TEST_CASE("ffnn trace on the relu edge") {
  const auto e = gf::eoc_solve(relu, 0.0);
  const auto t = propagate_ffnn(relu, e.sigma_b, e.sigma_w, 1.0, 0.5, 3);
  REQUIRE(t.size() == 3);
  CHECK(t.c[0] == 0.5);
  CHECK(t.c[1] == doctest::Approx(0.6090).epsilon(1e-4));
  CHECK(t.c[2] == doctest::Approx(gf::relu_correlation_closed_form(t.c[1])).epsilon(1e-14));
  CHECK(t.c[2] == doctest::Approx(0.683905650898706).epsilon(1e-13));
  for (double q : t.q) CHECK(q == doctest::Approx(1.0).epsilon(1e-15));
  for (double qt : t.qtilde) CHECK(qt == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("trace invariants and the c0 = 1 fixed point") {
  for (auto act : {relu, tanh_act}) {
    const auto t = propagate_ffnn(act, 0.3, 1.2, 0.7, 1.0, 50);
    for (std::size_t l = 0; l < t.size(); ++l) {
      CHECK(t.c[l] == 1.0);
      CHECK(t.q[l] >= 0.0);
    }
    const auto u = propagate_ffnn(act, 0.3, 1.2, 0.7, -0.3, 50);
    for (double c : u.c) CHECK(std::abs(c) <= 1.0);
  }
  CHECK_THROWS_AS(propagate_ffnn(tanh_act, 0.3, 1.2, 0.0, 0.5, 5), InvalidArgument);
  CHECK_THROWS_AS(propagate_ffnn(tanh_act, 0.3, 1.2, 1.0, 1.5, 5), InvalidArgument);
}

TEST_CASE("ordered phase: correlations converge exponentially to 1") {
  const auto e = ordered_tanh();
  REQUIRE(e.chi < 1.0);
  const auto t = propagate_ffnn(tanh_act, e.sigma_b, e.sigma_w, e.q_star, 0.5, 201);
  CHECK(std::abs(t.c[200] - 1.0) < 1e-6);
  const auto fit = decay_exponent_fit(t.gap, 20, 200, DecayLaw::exponential);
  CHECK(fit.slope == doctest::Approx(std::log(e.chi)).epsilon(0.10));
}

TEST_CASE("relu edge: polynomial decay of 1 - c") {
  const auto e = gf::eoc_solve(relu, 0.0);
  const auto t = propagate_ffnn(relu, e.sigma_b, e.sigma_w, 1.0, 0.0, 10001);
  const auto fit = decay_exponent_fit(t.gap, 1000, 10000, DecayLaw::power);
  CHECK(fit.slope == doctest::Approx(-2.0).epsilon(0.1));
  const double limit = 9.0 * std::numbers::pi * std::numbers::pi / 2.0;
  for (std::size_t l : {1000u, 5000u, 10000u})
    CHECK(double(l) * double(l) * t.gap[l] == doctest::Approx(limit).epsilon(0.10));
}

TEST_CASE("chaotic phase: correlations settle at the stable fixed point") {
  const auto eoc = gf::eoc_solve(tanh_act, 0.3);
  const auto e = gf::make_edge(tanh_act, 0.3, 1.6 * eoc.sigma_w);
  REQUIRE(e.chi > 1.0);
  const auto t = propagate_ffnn(tanh_act, e.sigma_b, e.sigma_w, e.q_star, 0.9, 400);
  const double c_star = chaotic_correlation_limit(tanh_act, e);
  CHECK(c_star < 1.0);
  CHECK(t.c.back() == doctest::Approx(c_star).epsilon(1e-8));
  // Independent root of f(c) = c by bisection on the correlation map.
  double lo = -1.0, hi = 1.0 - 1e-6;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (gf::correlation_map(tanh_act, e, mid) - mid > 0.0 ? lo : hi) = mid;
  }
  CHECK(c_star == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-8));
  CHECK_THROWS_AS(chaotic_correlation_limit(tanh_act, ordered_tanh()), InvalidArgument);
}

TEST_CASE("cnn grid propagation") {
  const auto e = ordered_tanh();
  SUBCASE("all-ones grid is fixed") {
    const std::vector<double> ones(36, 1.0);
    for (const auto& g : propagate_cnn_grid(tanh_act, e, ones, 6, 1, 10))
      for (double c : g) CHECK(c == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("a 1x1 grid reduces to the ffnn recursion") {
    const auto grids = propagate_cnn_grid(tanh_act, e, {0.2}, 1, 0, 30);
    const auto t = propagate_ffnn(tanh_act, e.sigma_b, e.sigma_w, e.q_star, 0.2, 30);
    for (std::size_t l = 0; l < 30; ++l) CHECK(grids[l][0] == doctest::Approx(t.c[l]).epsilon(1e-10));
  }
  SUBCASE("random 8x8 grid decays like chi^l and matches a naive loop") {
    const int n = 8, k = 1;
    const CounterRng r(42);
    std::vector<double> g(n * n, 1.0);
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) g[a * n + b] = g[b * n + a] = -0.5 + 1.4 * r.uniform(a * n + b);
    const auto grids = propagate_cnn_grid(tanh_act, e, g, n, k, 40);
    std::vector<double> naive = g, sup;
    for (std::size_t l = 0; l < grids.size(); ++l) {
      if (l > 0) naive = cnn_step_naive(e, naive, n, k);
      double m = 0.0;
      for (int i = 0; i < n * n; ++i) {
        CHECK(grids[l][i] == doctest::Approx(naive[i]).epsilon(1e-12));
        m = std::max(m, 1.0 - grids[l][i]);
      }
      sup.push_back(m);
    }
    const auto fit = decay_exponent_fit(sup, 10, 39, DecayLaw::exponential);
    CHECK(fit.slope == doctest::Approx(std::log(e.chi)).epsilon(0.10));
  }
  CHECK_THROWS_AS(propagate_cnn_grid(tanh_act, e, std::vector<double>(4, 1.0), 2, 1, 3), InvalidArgument);
  CHECK_THROWS_AS(propagate_cnn_grid(tanh_act, e, {2.0}, 1, 0, 3), InvalidArgument);
}

TEST_CASE("backprop variance") {
  const auto flat = backprop_variance(std::vector<double>(12, 1.0), std::vector<double>(12, 50.0), 1.0);
  for (double v : flat) CHECK(v == 1.0);
  const auto geo = backprop_variance(std::vector<double>(10, 0.9), std::vector<double>(10, 1.0), 1.0);
  CHECK(geo.front() == doctest::Approx(std::pow(0.9, 9)).epsilon(1e-14));
  CHECK(geo.front() == doctest::Approx(0.38742).epsilon(1e-5));
  const auto w = backprop_variance({1.0, 1.0}, {4.0, 8.0}, 1.0);
  CHECK(w[0] == 2.0);
  CHECK(w[1] == 1.0);
  CHECK_THROWS_AS(backprop_variance({1.0}, {1.0, 2.0}, 1.0), InvalidArgument);
}

TEST_CASE("saliency profile theory") {
  for (double m : saliency_profile_theory(1.0, 7, 3.0)) CHECK(m == 3.0);
  const auto p = saliency_profile_theory(0.8, 5, 1.0);
  const std::vector<double> want = {0.4096, 0.512, 0.64, 0.8, 1.0};
  for (int i = 0; i < 5; ++i) CHECK(p[i] == doctest::Approx(want[i]).epsilon(1e-14));
  const auto q = saliency_profile_theory(2.0, 3, 1.0);
  CHECK(q == std::vector<double>{4.0, 2.0, 1.0});
}

TEST_CASE("resnet conditioning theory") {
  const double s = std::sqrt(2.0);
  CHECK(resnet_conditioning_theory(s, 10, false) == doctest::Approx(1024.0).epsilon(1e-13));
  CHECK(resnet_conditioning_theory(1.3, 1, false) == doctest::Approx(1.0 + 1.69 / 2).epsilon(1e-14));
  const double L = 1e4;
  CHECK(resnet_conditioning_theory(s, 10000, true) / (std::exp(1.0) / L) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("theorem 1 bound") {
  CHECK(theorem1_bound(0.2, 100, 100, LogBase::ten).value == doctest::Approx(0.275).epsilon(2e-3));
  CHECK(theorem1_bound(0.2, 100, 100, LogBase::natural).value == doctest::Approx(0.620).epsilon(2e-3));
  CHECK(theorem1_bound(1e6, 100, 100, LogBase::natural).value == doctest::Approx(0.01).epsilon(1e-4));
  CHECK(theorem1_bound(0.01, 10, 100, LogBase::natural).vacuous);
  double prev = std::numeric_limits<double>::infinity();
  for (double k = 0.05; k < 5.0; k += 0.05) {
    const double v = theorem1_bound(k, 100, 100, LogBase::natural).value;
    CHECK(v < prev);
    prev = v;
  }
  CHECK_THROWS_AS(theorem1_bound(0.0, 100, 100, LogBase::ten), InvalidArgument);
}

TEST_CASE("magnitude pruning bound") {
  // Frozen from tests/oracles/mbp_oracle.py.
  CHECK(mbp_bound(2, 1, 100, 100).value == doctest::Approx(0.9651396221516916).epsilon(1e-9));
  CHECK(mbp_bound(5, 1, 100, 100).value == doctest::Approx(0.5982324683093498).epsilon(1e-9));
  const auto b10 = mbp_bound(10, 1, 100, 100);
  CHECK(b10.value == doctest::Approx(0.32997864990793857).epsilon(1e-9));
  CHECK(b10.x_eps == doctest::Approx(0.3218390804597701).epsilon(1e-12));
  CHECK(b10.epsilon == doctest::Approx(0.5757142857142857).epsilon(1e-12));
  double prev = 2.0;
  for (double g : {2.0, 5.0, 10.0}) {
    const double v = mbp_bound(g, 1, 100, 100).value;
    CHECK(v <= prev);
    prev = v;
  }
  CHECK_THROWS_AS(mbp_bound(1.0, 1, 100, 100), InvalidArgument);
}

TEST_CASE("pruned resnet correlation recursion") {
  for (double g : pruned_resnet_gap(1.0, 1.0, 100)) CHECK(g == 0.0);
  const auto gap = pruned_resnet_gap(1.0, 0.0, 10000);
  CHECK(1.0 - gap[1] == doctest::Approx(0.5 / std::numbers::pi).epsilon(1e-14));
  CHECK(1.0 - gap[1] == doctest::Approx(0.15915).epsilon(1e-4));
  for (std::size_t l = 1; l < gap.size(); ++l) CHECK(gap[l] <= gap[l - 1]);
  const auto fit = decay_exponent_fit(gap, 1000, 10000, DecayLaw::power);
  CHECK(fit.slope == doctest::Approx(-2.0).epsilon(0.025));
  const double eta = 0.5 * 2.0 * std::sqrt(2.0) / (3.0 * std::numbers::pi);
  CHECK(1e8 * gap[10000] == doctest::Approx(4.0 / (eta * eta)).epsilon(0.05));
  CHECK_THROWS_AS(pruned_resnet_gap(0.0, 0.0, 5), InvalidArgument);
}

TEST_CASE("decay fits") {
  std::vector<double> p(101), x(101);
  for (int l = 1; l <= 100; ++l) p[l] = 1.0 / (double(l) * l);
  CHECK(decay_exponent_fit(p, 1, 100, DecayLaw::power).slope == doctest::Approx(-2.0).epsilon(1e-6));
  for (int l = 0; l <= 100; ++l) x[l] = std::pow(0.9, l);
  const auto f = decay_exponent_fit(x, 0, 100, DecayLaw::exponential);
  CHECK(f.slope == doctest::Approx(std::log(0.9)).epsilon(1e-12));
  CHECK(f.r2 == doctest::Approx(1.0));
  x[50] = 0.0;
  CHECK_THROWS_AS(decay_exponent_fit(x, 0, 100, DecayLaw::exponential), InvalidArgument);
  CHECK_THROWS_AS(decay_exponent_fit(x, 5, 5, DecayLaw::exponential), InvalidArgument);
}

TEST_CASE("trace csv") {
  const auto t = propagate_ffnn(tanh_act, 0.3, 1.2, 1.0, 0.5, 4);
  std::ostringstream os;
  write_trace_csv(os, t);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "layer,q,c,qtilde");
  int rows = 0;
  while (std::getline(is, line)) {
    CHECK(line.rfind(std::to_string(rows) + ",", 0) == 0);
    ++rows;
  }
  CHECK(rows == 4);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "edgeprune/errors.hpp"
#include "edgeprune/gaussfield.hpp"
#include "edgeprune/pruning.hpp"
#include "edgeprune/rng.hpp"
#include "support.hpp"

using namespace edgeprune;
using namespace edgeprune::pruning;
using edgeprune::testing::brute_critical_sparsity;
using edgeprune::testing::brute_topk;
using edgeprune::testing::gaussian_batch;
using gaussfield::Activation;

namespace {

SaliencyMap from_layers(const std::vector<std::vector<double>>& layers) {
  SaliencyMap s;
  for (const auto& l : layers) {
    Tensor t({l.size()});
    t.data = l;
    s.push_back(std::move(t));
  }
  return s;
}

// Small random instance; integer values from a narrow range force ties.
std::vector<std::vector<double>> random_instance(std::uint64_t seed, bool tied) {
  const CounterRng r(seed, 31);
  std::uint64_t c = 0;
  const std::size_t layers = 1 + r.bits(c++) % 6;
  std::vector<std::vector<double>> v(layers);
  for (auto& l : v) {
    l.resize(1 + r.bits(c++) % 160);
    for (double& x : l) x = tied ? static_cast<double>(r.bits(c++) % 7) : std::abs(r.normal(c++));
  }
  return v;
}

}  // namespace

TEST_CASE("magnitude saliency") {
  ParamSet p;
  p.weights = {Tensor({2})};
  p.weights[0].data = {-3.0, 2.0};
  CHECK(saliency_magnitude(p)[0].data == std::vector<double>{3.0, 2.0});
  p.weights[0].data = {0.0, -0.0};
  CHECK(saliency_magnitude(p)[0].data == std::vector<double>{0.0, 0.0});
}

TEST_CASE("magnitude saliency follows the scaled folded normal (KS)") {
  const ArchSpec a = nnet::make_ffnn(50, 2, 200, 10, Activation::tanh);
  const double sw = 1.7;
  const auto s = saliency_magnitude(nnet::init_params(a, sw, 0.0, 12));
  for (std::size_t l = 0; l < s.size(); ++l) {
    const double scale = sw / std::sqrt(a.variance_denominator(l));
    std::vector<double> v = s[l].data;
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double f = 2.0 * gaussfield::normal_cdf(v[i] / scale) - 1.0;
      d = std::max({d, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
    }
    CAPTURE(l);
    // 1% critical value of the one-sample KS statistic.
    CHECK(d < 1.63 / std::sqrt(n));
  }
}

TEST_CASE("sensitivity saliency matches |W| times finite-difference gradients") {
  ArchSpec a = nnet::make_ffnn(6, 2, 5, 3, Activation::tanh);
  ParamSet p = nnet::init_params(a, 1.4, 0.2, 3);
  const auto b = gaussian_batch(4, 8, 6, 3);
  const auto s = saliency_snip(a, p, b);
  const double h = 1e-5;
  for (std::size_t l = 0; l < p.weights.size(); ++l)
    for (std::size_t i = 0; i < p.weights[l].size(); ++i) {
      ParamSet up = p, dn = p;
      up.weights[l][i] += h;
      dn.weights[l][i] -= h;
      const double fd = (nnet::loss_value(a, up, nullptr, nullptr, b) - nnet::loss_value(a, dn, nullptr, nullptr, b)) / (2 * h);
      CHECK(s[l][i] == doctest::Approx(std::abs(p.weights[l][i] * fd)).epsilon(1e-4).scale(1e-10));
    }

  auto& last = p.weights.back();
  std::fill(last.data.begin(), last.data.end(), 0.0);
  const auto zeroed = saliency_snip(a, p, b);
  for (double v : zeroed.back().data) CHECK(v == 0.0);

  CHECK_THROWS_AS(saliency_snip(a, p, nnet::Batch{}), InvalidArgument);
  CHECK_THROWS_AS(compute_saliency(Criterion::snip, a, p, nullptr), InvalidArgument);
  CHECK(parse_criterion("sbp") == Criterion::snip);
  CHECK(parse_criterion("magnitude") == Criterion::magnitude);
  CHECK_THROWS_AS(parse_criterion("grasp"), InvalidArgument);
}

TEST_CASE("kept_count floors and snaps representation error") {
  CHECK(kept_count(0.0, 17) == 17);
  CHECK(kept_count(0.6, 5) == 2);
  CHECK(kept_count(0.7, 10) == 3);  // (1 - 0.7) * 10 = 2.9999999999999996
  CHECK(kept_count(0.35, 10) == 6);
  CHECK(kept_count(0.999, 100) == 0);
  CHECK_THROWS_AS(kept_count(1.0, 10), InvalidArgument);
  CHECK_THROWS_AS(kept_count(-0.1, 10), InvalidArgument);
}

TEST_CASE("global top-k: worked examples") {
  const auto s = from_layers({{5, 4, 3}, {2, 1}});
  auto r = global_topk_mask(s, 0.6);
  CHECK(r.report.kept == 2);
  CHECK(r.mask[0].data == std::vector<double>{1, 1, 0});
  CHECK(r.mask[1].data == std::vector<double>{0, 0});
  CHECK(r.report.fully_pruned == std::vector<std::size_t>{1});
  CHECK(r.report.threshold == 4.0);
  CHECK(r.report.layer_kept_fraction == std::vector<double>{2.0 / 3.0, 0.0});

  r = global_topk_mask(s, 0.0);
  CHECK(r.report.kept == 5);
  CHECK(r.report.fully_pruned.empty());
  for (const auto& m : r.mask)
    for (double v : m.data) CHECK(v == 1.0);

  const auto eq = from_layers({{1, 1, 1}, {1, 1, 1}});
  r = global_topk_mask(eq, 0.5);
  CHECK(r.mask[0].data == std::vector<double>{1, 1, 1});
  CHECK(r.mask[1].data == std::vector<double>{0, 0, 0});

  r = global_topk_mask(s, 0.9);
  CHECK(r.report.kept == 0);
  CHECK(std::isinf(r.report.threshold));
  CHECK(r.report.to_json()["threshold"].is_null());
  CHECK(r.report.to_json()["fully_pruned_layers"].size() == 2);

  CHECK_THROWS_AS(global_topk_mask(s, 1.0), InvalidArgument);
  CHECK_THROWS_AS(global_topk_mask(from_layers({{1.0, -1.0}}), 0.5), InvalidArgument);
  CHECK_THROWS_AS(global_topk_mask(from_layers({{1.0, std::nan("")}}), 0.5), InvalidArgument);
}

TEST_CASE("critical sparsity: worked examples and edge cases") {
  CHECK(critical_sparsity(from_layers({{9, 8}, {7, 1}})) == 0.5);
  CHECK(critical_sparsity(from_layers({{3, 1, 2}})) == 1.0);
  // Cross-layer tie at the top: layer 0 wins the tie, layer 1's top has rank 2.
  CHECK(critical_sparsity(from_layers({{4, 0}, {4, 0}})) == 0.75);
  CHECK_THROWS_AS(critical_sparsity(from_layers({{1.0}, {}})), InvalidArgument);
  CHECK_THROWS_AS(critical_sparsity({}), InvalidArgument);
}

TEST_CASE("global top-k and critical sparsity equal brute force on random instances") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const bool tied = seed % 2 == 0;
    const auto v = random_instance(seed, tied);
    const auto s = from_layers(v);
    std::size_t total = 0;
    for (const auto& l : v) total += l.size();
    CAPTURE(seed);

    const double scr = critical_sparsity(s);
    CHECK(scr == brute_critical_sparsity(v));
    CHECK(scr > 0.0);
    CHECK(scr <= 1.0);

    for (double sp : {0.0, 0.1, 0.37, 0.5, 0.8, 0.95}) {
      const auto r = global_topk_mask(s, sp);
      const auto keep = brute_topk(v, kept_count(sp, total));
      std::size_t kept = 0;
      for (std::size_t l = 0; l < v.size(); ++l)
        for (std::size_t i = 0; i < v[l].size(); ++i) {
          CHECK(r.mask[l][i] == (keep[l][i] ? 1.0 : 0.0));
          kept += r.mask[l][i] != 0.0;
        }
      CHECK(kept == r.report.kept);
      CHECK(kept == kept_count(sp, total));
    }

    // Just below s_cr every layer survives; at s_cr one dies.
    if (v.size() > 1) {
      const double below = 1.0 - (std::round((1.0 - scr) * total) + 1.0) / static_cast<double>(total);
      if (below >= 0.0) CHECK(global_topk_mask(s, below).report.fully_pruned.empty());
      CHECK_FALSE(global_topk_mask(s, scr).report.fully_pruned.empty());
    }
  }
}

TEST_CASE("expected critical sparsity: deterministic, layers alike stay near 1") {
  ArchSpec a = nnet::make_ffnn(30, 8, 30, 10, Activation::tanh);
  a.head = false;
  const auto e1 = estimate_expected_scr(a, 1.0, 0.0, Criterion::magnitude, {}, 6, 100);
  const auto e2 = estimate_expected_scr(a, 1.0, 0.0, Criterion::magnitude, {}, 6, 100);
  CHECK(e1.values == e2.values);
  CHECK(e1.seeds == std::vector<std::uint64_t>{100, 101, 102, 103, 104, 105});
  CHECK(e1.mean > 0.9);
  for (std::size_t t = 0; t < e1.values.size(); ++t)
    CHECK(e1.values[t] == critical_sparsity(saliency_magnitude(nnet::init_params(a, 1.0, 0.0, e1.seeds[t]))));
  CHECK(e1.to_json()["trials"] == 6);

  nnet::ArchSpec b = nnet::make_ffnn(10, 3, 10, 3, Activation::tanh);
  const auto batches = [](std::uint64_t seed) { return gaussian_batch(seed, 20, 10, 3); };
  const auto e3 = estimate_expected_scr(b, 1.2, 0.1, Criterion::snip, batches, 3, 7);
  const auto p = nnet::init_params(b, 1.2, 0.1, 8);
  CHECK(e3.values[1] == critical_sparsity(saliency_snip(b, p, batches(8))));
  CHECK_THROWS_AS(estimate_expected_scr(b, 1.2, 0.1, Criterion::snip, {}, 3), InvalidArgument);
  CHECK_THROWS_AS(estimate_expected_scr(b, 1.2, 0.1, Criterion::magnitude, {}, 0), InvalidArgument);
}

TEST_CASE("rescale factors: worked rows and dead rows") {
  ParamSet p;
  p.weights = {Tensor({3, 3})};
  p.weights[0].data = {0.3, 9.0, -0.4, 1.0, 2.0, 3.0, 0.5, 0.5, 0.5};
  Mask m = {Tensor({3, 3})};
  m[0].data = {1, 0, 1, 0, 0, 0, 1, 1, 1};
  const auto f = rescale_factors(p, m);
  CHECK(f.rho[0][0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(f.rho[0][1] == 1.0);
  CHECK(f.rho[0][2] == doctest::Approx(1.0 / std::sqrt(0.75)).epsilon(1e-15));
  CHECK(f.dead_rows[0] == std::vector<std::size_t>{1});
  CHECK(f.dead_layers.empty());

  const auto s = rescale_multipliers(f, 1.5);
  CHECK(s[0][0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(s[0][1] == 1.0);

  Mask dead = {Tensor({3, 3})};
  CHECK(rescale_factors(p, dead).dead_layers == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(rescale_factors(p, Mask{Tensor({9})}), ShapeMismatch);
  CHECK_THROWS_AS(rescale_factors(p, Mask{}), ShapeMismatch);
}

TEST_CASE("rescale identity holds on kept rows for every architecture") {
  for (auto kind : {nnet::ArchKind::ffnn, nnet::ArchKind::cnn1d, nnet::ArchKind::resnet_ffnn, nnet::ArchKind::resnet_cnn1d}) {
    ArchSpec a;
    a.kind = kind;
    a.depth = 4;
    a.width = 12;
    a.input_dim = 16;
    a.in_channels = 2;
    a.classes = 5;
    const auto p = nnet::init_params(a, 1.3, 0.1, 21);
    const auto mask = global_topk_mask(saliency_magnitude(p), 0.9).mask;
    const auto f = rescale_factors(p, mask);
    CAPTURE(nnet::to_string(kind));
    std::size_t live = 0;
    for (std::size_t l = 0; l < mask.size(); ++l) {
      const std::size_t rows = p.weights[l].dim(0), per = p.weights[l].size() / rows;
      REQUIRE(f.rho[l].size() == rows);
      for (std::size_t r = 0; r < rows; ++r) {
        double alpha = 0.0;
        for (std::size_t j = r * per; j < (r + 1) * per; ++j) alpha += p.weights[l][j] * p.weights[l][j] * mask[l][j];
        if (alpha == 0.0) continue;
        ++live;
        CHECK(std::abs(f.rho[l][r] * f.rho[l][r] * alpha - 1.0) <= 4 * std::numeric_limits<double>::epsilon());
      }
    }
    CHECK(live > 0);
  }
}

TEST_CASE("rescale factor of a dense unit-moment row is near 1") {
  const std::size_t n = 10000;
  ParamSet p;
  p.weights = {Tensor({1, n})};
  const CounterRng r(5);
  for (std::size_t i = 0; i < n; ++i) p.weights[0][i] = r.normal(i) / std::sqrt(static_cast<double>(n));
  const auto f = rescale_factors(p, Mask{Tensor({1, n}, 1.0)});
  CHECK(std::abs(f.rho[0][0] - 1.0) < 5.0 * std::sqrt(0.5 / n));
}

TEST_CASE("edge-of-chaos subnetwork masks") {
  ArchSpec a = nnet::make_ffnn(20, 3, 400, 2, Activation::relu);
  const double s_eoc = gaussfield::eoc_solve(Activation::relu, 0.0).sigma_w;
  CHECK(s_eoc == doctest::Approx(std::sqrt(2.0)).epsilon(1e-10));

  const auto p = eoc_keep_probabilities(a, {s_eoc, 2.0, 2.0 * s_eoc, s_eoc}, 0.0);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(p[2] == doctest::Approx(0.25).epsilon(1e-10));

  const auto m = eoc_subnetwork_mask(a, {s_eoc, 2.0, 2.0 * s_eoc, s_eoc}, 0.0, 3);
  for (double v : m[0].data) CHECK(v == 1.0);
  for (std::size_t l = 1; l <= 2; ++l) {
    double kept = 0.0;
    for (double v : m[l].data) {
      CHECK((v == 0.0 || v == 1.0));
      kept += v;
    }
    const double n = static_cast<double>(m[l].size());
    CHECK(std::abs(kept / n - p[l]) < 3.0 * std::sqrt(p[l] * (1 - p[l]) / n));
  }
  CHECK(eoc_subnetwork_mask(a, {2, 2, 2, 2}, 0.0, 3) == eoc_subnetwork_mask(a, {2, 2, 2, 2}, 0.0, 3));
  CHECK_THROWS_AS(eoc_keep_probabilities(a, {1.0, 2.0, 2.0, 2.0}, 0.0), InvalidArgument);
  CHECK_THROWS_AS(eoc_keep_probabilities(a, {2.0, 2.0}, 0.0), InvalidArgument);
}

TEST_CASE("layer gradient moments") {
  ArchSpec a = nnet::make_ffnn(5, 3, 6, 3, Activation::tanh);
  const auto p = nnet::init_params(a, 1.1, 0.1, 2);
  const auto b = gaussian_batch(9, 4, 5, 3);

  const auto lg = nnet::loss_and_grads(a, p, nullptr, nullptr, b);
  const auto m = layer_gradient_moments(a, p, b);
  for (std::size_t l = 0; l < m.size(); ++l) {
    double s = 0.0;
    for (double g : lg.grads.weights[l].data) s += g * g;
    CHECK(m[l] == doctest::Approx(s / lg.grads.weights[l].size()).epsilon(1e-14));
  }

  std::vector<double> want(m.size(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    nnet::Batch one;
    one.inputs = Tensor({1, 5});
    std::copy_n(b.inputs.data.begin() + i * 5, 5, one.inputs.data.begin());
    one.labels = {b.labels[i]};
    const auto mi = layer_gradient_moments(a, p, one);
    for (std::size_t l = 0; l < m.size(); ++l) want[l] += mi[l] / 4.0;
  }
  const auto ps = layer_gradient_moments(a, p, b, true);
  for (std::size_t l = 0; l < m.size(); ++l) CHECK(ps[l] == doctest::Approx(want[l]).epsilon(1e-14));
}

TEST_CASE("conditioning profile") {
  const auto prof = make_profile({4.0, 1.0, 2.0});
  CHECK(prof.ratio_min == 0.5);
  CHECK(prof.ratio_max == 2.0);
  CHECK_THROWS_AS(make_profile({}), InvalidArgument);

  ArchSpec a = nnet::make_ffnn(8, 3, 8, 2, Activation::tanh);
  const auto batches = [](std::uint64_t seed) { return gaussian_batch(seed, 10, 8, 2); };
  const auto c = well_conditioned_metric(a, 1.2, 0.1, batches, 3, 40);
  CHECK(c.m.size() == a.num_layers());
  CHECK(c.m.back() > 0.0);

  std::vector<double> want(a.num_layers(), 0.0);
  for (std::uint64_t seed = 40; seed < 43; ++seed) {
    const auto p = nnet::init_params(a, 1.2, 0.1, seed);
    const auto s = saliency_snip(a, p, batches(seed));
    for (std::size_t l = 0; l < want.size(); ++l) {
      double acc = 0.0;
      for (double v : s[l].data) acc += v * v;
      want[l] += acc / s[l].size() / 3.0;
    }
  }
  for (std::size_t l = 0; l < want.size(); ++l) CHECK(c.m[l] == doctest::Approx(want[l]).epsilon(1e-12));
  CHECK_THROWS_AS(well_conditioned_metric(a, 1.2, 0.1, {}, 3), InvalidArgument);
}

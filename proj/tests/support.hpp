#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "edgeprune/nnet.hpp"
#include "edgeprune/rng.hpp"

namespace edgeprune::testing {

/// n x d standard normal inputs with labels drawn uniformly from `classes`.
inline nnet::Batch gaussian_batch(std::uint64_t seed, std::size_t n, std::size_t d,
                                  std::size_t classes) {
  nnet::Batch b;
  b.inputs = nnet::Tensor({n, d});
  const CounterRng r(seed, 99);
  for (std::size_t i = 0; i < b.inputs.size(); ++i) b.inputs[i] = r.normal(i);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(r.bits(1000000 + i) % classes));
  return b;
}

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;
};

/// Mean and standard error of g(Z1, Z2) over n independent normal pairs.
template <class F>
McEstimate monte_carlo2(F&& g, std::uint64_t n, std::uint64_t seed) {
  const CounterRng r(seed, 0x6d63);
  double s = 0.0, s2 = 0.0;
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for reduction(+ : s, s2) schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    double z1, z2;
    r.normal_pair(static_cast<std::uint64_t>(i), z1, z2);
    const double v = g(z1, z2);
    s += v;
    s2 += v * v;
  }
  const double nd = static_cast<double>(n);
  const double mean = s / nd;
  const double var = std::max(0.0, s2 / nd - mean * mean);
  return {mean, std::sqrt(var / (nd - 1.0))};
}

/// Per-layer saliency values by brute force: full sort under (value desc,
/// layer asc, index asc), keep the first k.
inline std::vector<std::vector<char>> brute_topk(const std::vector<std::vector<double>>& layers,
                                                 std::size_t k) {
  struct Entry {
    double v;
    std::size_t l, i;
  };
  std::vector<Entry> all;
  for (std::size_t l = 0; l < layers.size(); ++l)
    for (std::size_t i = 0; i < layers[l].size(); ++i) all.push_back({layers[l][i], l, i});
  std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.v > b.v; });
  std::vector<std::vector<char>> keep;
  for (const auto& layer : layers) keep.emplace_back(layer.size(), 0);
  for (std::size_t j = 0; j < k && j < all.size(); ++j) keep[all[j].l][all[j].i] = 1;
  return keep;
}

/// Smallest sparsity 1 - k/total at which brute_topk leaves a layer empty.
inline double brute_critical_sparsity(const std::vector<std::vector<double>>& layers) {
  std::size_t total = 0;
  for (const auto& l : layers) total += l.size();
  for (std::size_t k = total + 1; k-- > 0;) {
    const auto keep = brute_topk(layers, k);
    for (const auto& l : keep)
      if (std::none_of(l.begin(), l.end(), [](char c) { return c != 0; }))
        return 1.0 - static_cast<double>(k) / static_cast<double>(total);
  }
  return 1.0;
}

}  // namespace edgeprune::testing

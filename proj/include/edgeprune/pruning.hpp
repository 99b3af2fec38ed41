#pragma once

// Pruning at initialization: saliency scores, global top-k masks, critical
// sparsity, the per-row rescaling of pruned weights and Bernoulli subnetworks
// placed on the edge of chaos.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "edgeprune/nnet.hpp"

namespace edgeprune::pruning {

using nnet::ArchSpec;
using nnet::Batch;
using nnet::Mask;
using nnet::ParamSet;
using nnet::Tensor;

/// Nonnegative score per weight, shaped like the weights.
using SaliencyMap = std::vector<Tensor>;

enum class Criterion { magnitude, snip };

Criterion parse_criterion(std::string_view name);
std::string_view to_string(Criterion c) noexcept;

/// |W|.
SaliencyMap saliency_magnitude(const ParamSet& params);
/// |W * dL/dW| from one forward/backward pass of the dense network.
SaliencyMap saliency_snip(const ArchSpec& arch, const ParamSet& params, const Batch& batch);
SaliencyMap compute_saliency(Criterion c, const ArchSpec& arch, const ParamSet& params,
                             const Batch* batch);

/// floor((1 - s) * total), snapping values within 1e-9 of an integer.
std::size_t kept_count(double sparsity, std::size_t total);

struct PruneReport {
  double sparsity = 0.0;
  std::size_t kept = 0;
  std::size_t total = 0;
  /// Saliency of the last kept weight; infinite when nothing is kept.
  double threshold = 0.0;
  std::vector<std::size_t> layer_kept;
  std::vector<std::size_t> layer_size;
  std::vector<double> layer_kept_fraction;
  std::vector<std::size_t> fully_pruned;

  nlohmann::json to_json() const;
};

struct TopkResult {
  Mask mask;
  PruneReport report;
};

/// Keep the kept_count(s, total) highest scores. Ties are ordered by layer,
/// then flat index, so the count is exact.
TopkResult global_topk_mask(const SaliencyMap& saliency, double sparsity);

/// 1 - (R - 1)/total where R is the largest global rank of any layer's top
/// score; 1 for a single layer.
double critical_sparsity(const SaliencyMap& saliency);

struct CriticalSparsityEstimate {
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;

  nlohmann::json to_json() const;
};

/// Batch used by the sensitivity criterion for a given trial seed.
using BatchSource = std::function<Batch(std::uint64_t seed)>;

/// s_cr over independent initializations with seeds base_seed + t, run in
/// parallel and gathered by trial index.
CriticalSparsityEstimate estimate_expected_scr(const ArchSpec& arch, double sigma_w, double sigma_b,
                                               Criterion criterion, const BatchSource& batches,
                                               std::size_t trials, std::uint64_t base_seed = 0);

struct RescaleFactors {
  /// rho per layer per output row (dense) or output channel (conv).
  std::vector<std::vector<double>> rho;
  /// Rows with no kept weight; their rho is 1.
  std::vector<std::vector<std::size_t>> dead_rows;
  std::vector<std::size_t> dead_layers;
};

/// rho_i = 1/sqrt(sum_j W_ij^2 delta_ij) per output row or channel.
RescaleFactors rescale_factors(const ParamSet& params, const Mask& mask);

/// Row multipliers gain * rho to feed the forward pass.
nnet::RowScale rescale_multipliers(const RescaleFactors& f, double gain);

/// Keep probability sigma_EOC^2 / sigma_{w,l}^2 per weight layer.
std::vector<double> eoc_keep_probabilities(const ArchSpec& arch,
                                           const std::vector<double>& sigma_w_per_layer,
                                           double sigma_b);

/// Independent Bernoulli(p_l) mask with p_l from eoc_keep_probabilities.
Mask eoc_subnetwork_mask(const ArchSpec& arch, const std::vector<double>& sigma_w_per_layer,
                         double sigma_b, std::uint64_t seed);

/// Mean squared gradient per weight layer, taken with respect to the
/// effective weights of the given network. With `per_sample` each row of the
/// batch is differentiated on its own and the squares are averaged, which
/// drops the cross-sample terms of the batch-mean gradient.
std::vector<double> layer_gradient_moments(const ArchSpec& arch, const ParamSet& params,
                                           const Batch& batch, bool per_sample = false);

struct ConditioningProfile {
  /// Mean of (W dL/dW)^2 per weight layer.
  std::vector<double> m;
  double ratio_min = 0.0;
  double ratio_max = 0.0;
};

/// Empirical m_l averaged over `trials` initializations (seeds base_seed + t)
/// and the batch drawn for each trial. Ratios are taken to the last entry.
ConditioningProfile well_conditioned_metric(const ArchSpec& arch, double sigma_w, double sigma_b,
                                            const BatchSource& batches, std::size_t trials,
                                            std::uint64_t base_seed = 0);

/// Profile from given per-layer moments.
ConditioningProfile make_profile(std::vector<double> m);

}  // namespace edgeprune::pruning

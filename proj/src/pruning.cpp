#include "edgeprune/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "edgeprune/errors.hpp"
#include "edgeprune/gaussfield.hpp"
#include "edgeprune/rng.hpp"

namespace edgeprune::pruning {

using nlohmann::json;

namespace {

std::vector<std::size_t> layer_offsets(const SaliencyMap& s) {
  std::vector<std::size_t> off(s.size() + 1, 0);
  for (std::size_t l = 0; l < s.size(); ++l) off[l + 1] = off[l] + s[l].size();
  return off;
}

std::vector<double> flatten(const SaliencyMap& s) {
  std::vector<double> v;
  for (const auto& t : s) v.insert(v.end(), t.data.begin(), t.data.end());
  for (double x : v)
    if (!(x >= 0.0)) throw InvalidArgument("saliency must be nonnegative and finite-or-inf");
  return v;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

Criterion parse_criterion(std::string_view name) {
  if (name == "magnitude" || name == "mbp") return Criterion::magnitude;
  if (name == "snip" || name == "sbp") return Criterion::snip;
  throw InvalidArgument("unknown pruning criterion '" + std::string(name) + "'");
}

std::string_view to_string(Criterion c) noexcept {
  return c == Criterion::magnitude ? "magnitude" : "snip";
}

SaliencyMap saliency_magnitude(const ParamSet& params) {
  SaliencyMap s;
  for (const auto& w : params.weights) {
    Tensor t(w.shape);
    for (std::size_t i = 0; i < w.size(); ++i) t[i] = std::abs(w[i]);
    s.push_back(std::move(t));
  }
  return s;
}

SaliencyMap saliency_snip(const ArchSpec& arch, const ParamSet& params, const Batch& batch) {
  if (batch.size() == 0) throw InvalidArgument("saliency_snip: batch is empty");
  const nnet::LossGrad lg = nnet::loss_and_grads(arch, params, nullptr, nullptr, batch);
  SaliencyMap s;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const Tensor& w = params.weights[l];
    Tensor t(w.shape);
    for (std::size_t i = 0; i < w.size(); ++i) t[i] = std::abs(w[i] * lg.grads.weights[l][i]);
    s.push_back(std::move(t));
  }
  return s;
}

SaliencyMap compute_saliency(Criterion c, const ArchSpec& arch, const ParamSet& params,
                             const Batch* batch) {
  if (c == Criterion::magnitude) return saliency_magnitude(params);
  if (!batch) throw InvalidArgument("sensitivity pruning needs a batch");
  return saliency_snip(arch, params, *batch);
}

std::size_t kept_count(double sparsity, std::size_t total) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw InvalidArgument("sparsity must be in [0, 1)");
  const double x = (1.0 - sparsity) * static_cast<double>(total);
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, x)) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::floor(x));
}

json PruneReport::to_json() const {
  json j = {{"sparsity", sparsity},
            {"kept", kept},
            {"total", total},
            {"threshold", std::isfinite(threshold) ? json(threshold) : json(nullptr)},
            {"layer_kept", layer_kept},
            {"layer_size", layer_size},
            {"layer_kept_fraction", layer_kept_fraction},
            {"fully_pruned_layers", fully_pruned}};
  return j;
}

TopkResult global_topk_mask(const SaliencyMap& saliency, double sparsity) {
  if (saliency.empty()) throw InvalidArgument("global_topk_mask: empty saliency map");
  const std::vector<double> v = flatten(saliency);
  const std::size_t total = v.size();
  const std::size_t k = kept_count(sparsity, total);

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); };
  if (k > 0 && k < total) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), before);

  TopkResult r;
  std::vector<char> keep(total, 0);
  double threshold = std::numeric_limits<double>::infinity();
  if (k == total) {
    std::fill(keep.begin(), keep.end(), 1);
    threshold = *std::min_element(v.begin(), v.end());
  } else if (k > 0) {
    for (std::size_t i = 0; i < k; ++i) keep[order[i]] = 1;
    threshold = v[order[k - 1]];
  }

  const auto off = layer_offsets(saliency);
  PruneReport& rep = r.report;
  rep.sparsity = sparsity;
  rep.kept = k;
  rep.total = total;
  rep.threshold = threshold;
  for (std::size_t l = 0; l < saliency.size(); ++l) {
    Tensor m(saliency[l].shape);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = keep[off[l] + i] ? 1.0 : 0.0;
      kept += keep[off[l] + i];
    }
    rep.layer_kept.push_back(kept);
    rep.layer_size.push_back(m.size());
    rep.layer_kept_fraction.push_back(m.size() ? static_cast<double>(kept) / m.size() : 0.0);
    if (kept == 0) rep.fully_pruned.push_back(l);
    r.mask.push_back(std::move(m));
  }
  return r;
}

double critical_sparsity(const SaliencyMap& saliency) {
  if (saliency.empty()) throw InvalidArgument("critical_sparsity: empty saliency map");
  for (const auto& t : saliency)
    if (t.size() == 0) throw InvalidArgument("critical_sparsity: every layer must be nonempty");
  if (saliency.size() == 1) return 1.0;
  const std::vector<double> v = flatten(saliency);
  const auto off = layer_offsets(saliency);
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  std::size_t worst_rank = 0;
  for (std::size_t l = 0; l < saliency.size(); ++l) {
    // Top element of the layer under the (value desc, index asc) order.
    std::size_t top = off[l];
    for (std::size_t i = off[l]; i < off[l + 1]; ++i)
      if (v[i] > v[top]) top = i;
    const double t = v[top];
    const auto greater = static_cast<std::size_t>(
        std::lower_bound(sorted.begin(), sorted.end(), t, std::greater<>()) - sorted.begin());
    const auto equal_end = static_cast<std::size_t>(
        std::upper_bound(sorted.begin(), sorted.end(), t, std::greater<>()) - sorted.begin());
    std::size_t ties_before = 0;
    if (equal_end - greater > 1)
      for (std::size_t i = 0; i < top; ++i) ties_before += v[i] == t;
    worst_rank = std::max(worst_rank, greater + ties_before + 1);
  }
  return 1.0 - static_cast<double>(worst_rank - 1) / static_cast<double>(v.size());
}

json CriticalSparsityEstimate::to_json() const {
  return {{"trials", values.size()}, {"seeds", seeds}, {"values", values}, {"mean", mean}, {"std", stddev}};
}

CriticalSparsityEstimate estimate_expected_scr(const ArchSpec& arch, double sigma_w, double sigma_b,
                                               Criterion criterion, const BatchSource& batches,
                                               std::size_t trials, std::uint64_t base_seed) {
  if (trials < 1) throw InvalidArgument("estimate_expected_scr: trials must be >= 1");
  if (criterion == Criterion::snip && !batches)
    throw InvalidArgument("estimate_expected_scr: sensitivity pruning needs a batch source");
  arch.validate();
  CriticalSparsityEstimate est;
  est.values.assign(trials, 0.0);
  for (std::size_t t = 0; t < trials; ++t) est.seeds.push_back(base_seed + t);
  const auto n = static_cast<std::ptrdiff_t>(trials);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    const std::uint64_t seed = est.seeds[t];
    const ParamSet p = nnet::init_params(arch, sigma_w, sigma_b, seed);
    SaliencyMap s;
    if (criterion == Criterion::snip) {
      const Batch b = batches(seed);
      s = saliency_snip(arch, p, b);
    } else {
      s = saliency_magnitude(p);
    }
    est.values[t] = critical_sparsity(s);
  }
  est.mean = mean(est.values);
  double ss = 0.0;
  for (double x : est.values) ss += (x - est.mean) * (x - est.mean);
  est.stddev = trials > 1 ? std::sqrt(ss / static_cast<double>(trials - 1)) : 0.0;
  return est;
}

RescaleFactors rescale_factors(const ParamSet& params, const Mask& mask) {
  if (mask.size() != params.weights.size()) throw ShapeMismatch("rescale_factors: layer count differs");
  RescaleFactors f;
  for (std::size_t l = 0; l < mask.size(); ++l) {
    const Tensor& W = params.weights[l];
    if (mask[l].shape != W.shape) throw ShapeMismatch("rescale_factors: mask shape differs from weights");
    const std::size_t rows = W.dim(0), per_row = W.size() / rows;
    std::vector<double> rho(rows, 1.0);
    std::vector<std::size_t> dead;
    for (std::size_t r = 0; r < rows; ++r) {
      double alpha = 0.0;
      bool any = false;
      for (std::size_t j = r * per_row; j < (r + 1) * per_row; ++j) {
        if (mask[l][j] != 0.0) {
          alpha += W[j] * W[j] * mask[l][j];
          any = true;
        }
      }
      if (any && alpha > 0.0)
        rho[r] = 1.0 / std::sqrt(alpha);
      else
        dead.push_back(r);
    }
    if (dead.size() == rows) f.dead_layers.push_back(l);
    f.rho.push_back(std::move(rho));
    f.dead_rows.push_back(std::move(dead));
  }
  return f;
}

nnet::RowScale rescale_multipliers(const RescaleFactors& f, double gain) {
  nnet::RowScale s = f.rho;
  for (std::size_t l = 0; l < s.size(); ++l) {
    std::size_t next_dead = 0;
    for (std::size_t r = 0; r < s[l].size(); ++r) {
      if (next_dead < f.dead_rows[l].size() && f.dead_rows[l][next_dead] == r) {
        ++next_dead;
        continue;
      }
      s[l][r] *= gain;
    }
  }
  return s;
}

std::vector<double> eoc_keep_probabilities(const ArchSpec& arch,
                                           const std::vector<double>& sigma_w_per_layer,
                                           double sigma_b) {
  if (sigma_w_per_layer.size() != arch.num_layers())
    throw InvalidArgument("eoc_subnetwork_mask: need one sigma_w per weight layer");
  const double s_eoc = gaussfield::eoc_solve(arch.act, sigma_b).sigma_w;
  std::vector<double> p;
  for (double s : sigma_w_per_layer) {
    if (!(s >= s_eoc * (1.0 - 1e-12)))
      throw InvalidArgument("eoc_subnetwork_mask: every sigma_w must be >= the edge-of-chaos value " +
                            std::to_string(s_eoc));
    p.push_back(std::min(1.0, (s_eoc * s_eoc) / (s * s)));
  }
  return p;
}

Mask eoc_subnetwork_mask(const ArchSpec& arch, const std::vector<double>& sigma_w_per_layer,
                         double sigma_b, std::uint64_t seed) {
  const std::vector<double> p = eoc_keep_probabilities(arch, sigma_w_per_layer, sigma_b);
  const CounterRng root(seed, 0x776c7468ULL);
  Mask m = nnet::full_mask(arch);
  for (std::size_t l = 0; l < m.size(); ++l) {
    if (p[l] >= 1.0) continue;
    const CounterRng r = root.split(l);
    for (std::size_t i = 0; i < m[l].size(); ++i) m[l][i] = r.uniform(i) < p[l] ? 1.0 : 0.0;
  }
  return m;
}

std::vector<double> layer_gradient_moments(const ArchSpec& arch, const ParamSet& params,
                                           const Batch& batch, bool per_sample) {
  std::vector<double> m(params.weights.size(), 0.0);
  auto accumulate = [&](const Batch& b, double weight) {
    const nnet::LossGrad lg = nnet::loss_and_grads(arch, params, nullptr, nullptr, b);
    for (std::size_t l = 0; l < m.size(); ++l) {
      const Tensor& g = lg.grads.weights[l];
      double acc = 0.0;
      for (double x : g.data) acc += x * x;
      m[l] += weight * acc / static_cast<double>(g.size());
    }
  };
  if (!per_sample) {
    accumulate(batch, 1.0);
    return m;
  }
  const std::size_t n = batch.size();
  if (n == 0) throw InvalidArgument("layer_gradient_moments: empty batch");
  const std::size_t per = batch.inputs.size() / n;
  for (std::size_t i = 0; i < n; ++i) {
    Batch one;
    std::vector<std::size_t> shape = batch.inputs.shape;
    shape[0] = 1;
    one.inputs = Tensor(shape);
    std::copy_n(batch.inputs.data.begin() + static_cast<std::ptrdiff_t>(i * per), per, one.inputs.data.begin());
    if (!batch.labels.empty()) one.labels = {batch.labels[i]};
    if (batch.targets.rank() > 0) {
      const std::size_t tper = batch.targets.size() / n;
      std::vector<std::size_t> ts = batch.targets.shape;
      ts[0] = 1;
      one.targets = Tensor(ts);
      std::copy_n(batch.targets.data.begin() + static_cast<std::ptrdiff_t>(i * tper), tper,
                  one.targets.data.begin());
    }
    accumulate(one, 1.0 / static_cast<double>(n));
  }
  return m;
}

ConditioningProfile make_profile(std::vector<double> m) {
  if (m.empty()) throw InvalidArgument("conditioning profile: no layers");
  ConditioningProfile p;
  p.m = std::move(m);
  const double last = p.m.back();
  p.ratio_min = std::numeric_limits<double>::infinity();
  p.ratio_max = 0.0;
  for (double x : p.m) {
    const double r = x / last;
    p.ratio_min = std::min(p.ratio_min, r);
    p.ratio_max = std::max(p.ratio_max, r);
  }
  return p;
}

ConditioningProfile well_conditioned_metric(const ArchSpec& arch, double sigma_w, double sigma_b,
                                            const BatchSource& batches, std::size_t trials,
                                            std::uint64_t base_seed) {
  if (trials < 1) throw InvalidArgument("well_conditioned_metric: trials must be >= 1");
  if (!batches) throw InvalidArgument("well_conditioned_metric: needs a batch source");
  const std::size_t L = arch.num_layers();
  std::vector<std::vector<double>> per_trial(trials, std::vector<double>(L, 0.0));
  const auto n = static_cast<std::ptrdiff_t>(trials);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(t);
    const ParamSet p = nnet::init_params(arch, sigma_w, sigma_b, seed);
    const Batch b = batches(seed);
    const nnet::LossGrad lg = nnet::loss_and_grads(arch, p, nullptr, nullptr, b);
    for (std::size_t l = 0; l < L; ++l) {
      double acc = 0.0;
      const Tensor& w = p.weights[l];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double s = w[i] * lg.grads.weights[l][i];
        acc += s * s;
      }
      per_trial[t][l] = acc / static_cast<double>(w.size());
    }
  }
  std::vector<double> m(L, 0.0);
  for (const auto& row : per_trial)
    for (std::size_t l = 0; l < L; ++l) m[l] += row[l] / static_cast<double>(trials);
  return make_profile(std::move(m));
}

}  // namespace edgeprune::pruning

#pragma once

// A small dense-tensor network engine with reverse-mode differentiation:
// fully connected and circular 1D convolutional networks, their residual
// variants, seeded initialization and plain SGD.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "edgeprune/gaussfield.hpp"

namespace edgeprune::nnet {

using gaussfield::Activation;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);

  std::size_t size() const noexcept { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const noexcept { return shape.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  bool operator==(const Tensor&) const = default;
};

std::size_t shape_size(const std::vector<std::size_t>& shape) noexcept;

enum class ArchKind { ffnn, cnn1d, resnet_ffnn, resnet_cnn1d };

ArchKind parse_arch_kind(std::string_view name);
std::string_view to_string(ArchKind kind) noexcept;

/// Geometry of one weight layer. Dense: out x in. Conv: out x in x taps.
struct LayerShape {
  bool conv = false;
  std::size_t out = 0;
  std::size_t in = 0;
  std::size_t taps = 1;

  std::vector<std::size_t> weight_shape() const;
  std::size_t weight_count() const noexcept { return out * in * taps; }
  std::size_t fan_in() const noexcept { return in * taps; }
};

struct ArchSpec {
  ArchKind kind = ArchKind::ffnn;
  /// Hidden layers (ffnn, cnn1d) or blocks (residual kinds).
  std::size_t depth = 1;
  /// Hidden width, or channel count for convolutional kinds.
  std::size_t width = 100;
  /// Optional per-layer widths (plain kinds only); size depth when set.
  std::vector<std::size_t> widths;
  /// Input features (dense kinds) or sequence length (convolutional kinds).
  std::size_t input_dim = 100;
  std::size_t in_channels = 1;
  std::size_t kernel_radius = 1;
  std::size_t classes = 10;
  Activation act = Activation::tanh;
  /// Residual branches scaled by 1/sqrt(depth).
  bool stable = false;
  /// Adds a dense layer from the last hidden layer to `classes` logits.
  /// Without it the last layer's preactivations are the logits.
  bool head = true;
  /// Per weight layer multiplier on the fan-in variance scale; empty means 1.
  std::vector<double> variance_scale;
  /// Residual branch multiplier; NaN selects 1 or 1/sqrt(depth).
  double branch_scale = std::numeric_limits<double>::quiet_NaN();

  void validate() const;
  bool is_conv() const noexcept { return kind == ArchKind::cnn1d || kind == ArchKind::resnet_cnn1d; }
  bool is_residual() const noexcept {
    return kind == ArchKind::resnet_ffnn || kind == ArchKind::resnet_cnn1d;
  }
  std::size_t num_layers() const noexcept { return depth + (head ? 1 : 0); }
  std::size_t hidden_width(std::size_t l) const;
  LayerShape layer(std::size_t l) const;
  /// Weight variance is sigma_w^2 / variance_denominator(l).
  double variance_denominator(std::size_t l) const;
  double residual_scale() const;
  std::size_t total_weights() const;
  std::vector<std::size_t> input_shape(std::size_t batch) const;
};

ArchSpec make_ffnn(std::size_t input_dim, std::size_t depth, std::size_t width, std::size_t classes,
                   Activation act);

struct ParamSet {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  double sigma_w = 1.0;
  double sigma_b = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const ParamSet&) const = default;
};

/// W^l ~ N(0, sigma_w^2 / v_l), B^l ~ N(0, sigma_b^2), drawn from per-layer
/// counter streams so the result depends only on (arch, sigma_w, sigma_b, seed).
ParamSet init_params(const ArchSpec& arch, double sigma_w, double sigma_b, std::uint64_t seed);

ParamSet zeros_like(const ParamSet& p);

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
  /// Regression targets for the squared-error loss, batch x outputs.
  Tensor targets;

  std::size_t size() const noexcept { return inputs.rank() ? inputs.dim(0) : 0; }
};

/// One binary tensor per weight layer.
using Mask = std::vector<Tensor>;
/// One multiplier per output row (dense) or output channel (conv) per layer.
using RowScale = std::vector<std::vector<double>>;

Mask full_mask(const ArchSpec& arch);

/// Reverse-mode tape over coarse tensor ops.
class Tape {
 public:
  using Var = std::size_t;
  static constexpr Var none = static_cast<Var>(-1);

  Var constant(Tensor value);
  Var param(const Tensor& value);
  /// x: batch x in, w: out x in, b: out (or none).
  Var linear(Var x, Var w, Var b);
  /// x: batch x cin x n, w: cout x cin x taps, b: cout (or none).
  Var conv1d(Var x, Var w, Var b);
  Var activation(Var x, Activation act);
  Var add(Var a, Var b);
  Var scale(Var a, double s);
  /// w * mask * row_scale[row]; gradient flows to w as dL/dw_eff * row_scale.
  Var masked_weight(Var w, const Tensor* mask, const std::vector<double>* row_scale);
  Var reshape(Var a, std::vector<std::size_t> shape);
  /// Mean softmax cross-entropy over the batch.
  Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);
  /// Sum over outputs, mean over the batch, of (y - target)^2.
  Var squared_error(Var y, const Tensor& target);

  const Tensor& value(Var v) const { return nodes_.at(v).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v).grad; }
  void backward(Var scalar);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool tracked = false;
    std::function<void(Tape&, Var)> back;
  };
  Var push(Tensor value, bool tracked, std::function<void(Tape&, Var)> back);
  Tensor& grad_of(Var v);
  std::vector<Node> nodes_;
};

struct ForwardResult {
  /// y^1 .. y^depth.
  std::vector<Tensor> preacts;
  Tensor logits;
};

ForwardResult forward(const ArchSpec& arch, const ParamSet& params, const Mask* mask,
                      const RowScale* scale, const Tensor& inputs);

enum class LossKind { cross_entropy, squared_error };

struct LossGrad {
  double loss = 0.0;
  /// Gradients with respect to the stored (unmasked) weights and biases.
  ParamSet grads;
};

LossGrad loss_and_grads(const ArchSpec& arch, const ParamSet& params, const Mask* mask,
                        const RowScale* scale, const Batch& batch,
                        LossKind loss = LossKind::cross_entropy);

double loss_value(const ArchSpec& arch, const ParamSet& params, const Mask* mask,
                  const RowScale* scale, const Batch& batch,
                  LossKind loss = LossKind::cross_entropy);

/// params -= lr * grads; masked weights are held at exactly zero.
void sgd_step(ParamSet& params, const ParamSet& grads, double lr, const Mask* mask = nullptr);

/// Zero pruned weights and fold the row multipliers into the stored weights.
void bake_mask(ParamSet& params, const Mask& mask, const RowScale* scale);

/// Fraction of correct argmax predictions.
double accuracy(const ArchSpec& arch, const ParamSet& params, const Mask* mask,
                const RowScale* scale, const Batch& batch);

/// Largest |a - b| / max(|a|, |b|, 1e-5 * max(1, |loss|)) between reverse-mode gradients and
/// central differences (h = 1e-5) over every parameter, or a seeded sample
/// of `max_entries` of them when nonzero.
double grad_check(const ArchSpec& arch, const ParamSet& params, const Batch& batch,
                  LossKind loss = LossKind::cross_entropy, std::size_t max_entries = 0,
                  std::uint64_t sample_seed = 0);

/// Per dense layer l < depth: mean over samples and units j of
/// phi'(y^l_j)^2 * sum_i (W^{l+1}_ij)^2, using masked weights.
std::vector<double> empirical_chi(const ArchSpec& arch, const ParamSet& params, const Mask* mask,
                                  const Tensor& inputs);

}  // namespace edgeprune::nnet

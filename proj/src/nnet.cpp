#include "edgeprune/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edgeprune/errors.hpp"
#include "edgeprune/kernels.hpp"
#include "edgeprune/rng.hpp"

namespace edgeprune::nnet {

namespace gf = gaussfield;
namespace kp = kernels::parallel;

namespace {

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

void require_shape(const Tensor& t, const std::vector<std::size_t>& shape, const std::string& what) {
  if (t.shape != shape)
    throw ShapeMismatch(what + ": expected " + shape_str(shape) + ", got " + shape_str(t.shape));
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : shape(std::move(dims)), data(shape_size(shape), fill) {}

std::size_t shape_size(const std::vector<std::size_t>& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ArchKind parse_arch_kind(std::string_view name) {
  if (name == "ffnn") return ArchKind::ffnn;
  if (name == "cnn1d") return ArchKind::cnn1d;
  if (name == "resnet_ffnn") return ArchKind::resnet_ffnn;
  if (name == "resnet_cnn1d") return ArchKind::resnet_cnn1d;
  throw InvalidArgument("unknown architecture '" + std::string(name) + "'");
}

std::string_view to_string(ArchKind kind) noexcept {
  switch (kind) {
    case ArchKind::ffnn: return "ffnn";
    case ArchKind::cnn1d: return "cnn1d";
    case ArchKind::resnet_ffnn: return "resnet_ffnn";
    case ArchKind::resnet_cnn1d: return "resnet_cnn1d";
  }
  return "ffnn";
}

std::vector<std::size_t> LayerShape::weight_shape() const {
  if (conv) return {out, in, taps};
  return {out, in};
}

void ArchSpec::validate() const {
  if (depth < 1) throw InvalidArgument("arch: depth must be >= 1");
  if (input_dim < 1 || in_channels < 1) throw InvalidArgument("arch: input size must be positive");
  if (!widths.empty()) {
    if (widths.size() != depth) throw InvalidArgument("arch: widths must have one entry per layer");
    if (is_residual() && std::adjacent_find(widths.begin(), widths.end(), std::not_equal_to<>()) != widths.end())
      throw InvalidArgument("arch: residual architectures need a constant width");
  }
  for (std::size_t l = 0; l < depth; ++l)
    if (hidden_width(l) < 1) throw InvalidArgument("arch: widths must be positive");
  if (head && classes < 1) throw InvalidArgument("arch: classes must be >= 1");
  if (is_conv() && 2 * kernel_radius + 1 > input_dim)
    throw InvalidArgument("arch: kernel 2k+1 exceeds the sequence length");
  if (!variance_scale.empty()) {
    if (variance_scale.size() != num_layers())
      throw InvalidArgument("arch: variance_scale needs one entry per weight layer");
    for (double a : variance_scale)
      if (!(a > 0.0)) throw InvalidArgument("arch: variance_scale entries must be > 0");
  }
}

std::size_t ArchSpec::hidden_width(std::size_t l) const {
  return widths.empty() ? width : widths.at(l);
}

LayerShape ArchSpec::layer(std::size_t l) const {
  if (l >= num_layers()) throw InvalidArgument("arch: layer index out of range");
  LayerShape s;
  if (l == depth) {  // head
    s.out = classes;
    s.in = hidden_width(depth - 1) * (is_conv() ? input_dim : 1);
    return s;
  }
  s.out = hidden_width(l);
  if (is_conv()) {
    s.conv = true;
    s.in = l == 0 ? in_channels : hidden_width(l - 1);
    s.taps = 2 * kernel_radius + 1;
  } else {
    s.in = l == 0 ? input_dim : hidden_width(l - 1);
  }
  return s;
}

double ArchSpec::variance_denominator(std::size_t l) const {
  const double alpha = variance_scale.empty() ? 1.0 : variance_scale.at(l);
  return alpha * static_cast<double>(layer(l).fan_in());
}

double ArchSpec::residual_scale() const {
  if (!std::isnan(branch_scale)) return branch_scale;
  return stable ? 1.0 / std::sqrt(static_cast<double>(depth)) : 1.0;
}

std::size_t ArchSpec::total_weights() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) n += layer(l).weight_count();
  return n;
}

std::vector<std::size_t> ArchSpec::input_shape(std::size_t batch) const {
  if (is_conv()) return {batch, in_channels, input_dim};
  return {batch, input_dim};
}

ArchSpec make_ffnn(std::size_t input_dim, std::size_t depth, std::size_t width, std::size_t classes,
                   Activation act) {
  ArchSpec a;
  a.kind = ArchKind::ffnn;
  a.input_dim = input_dim;
  a.depth = depth;
  a.width = width;
  a.classes = classes;
  a.act = act;
  return a;
}

ParamSet init_params(const ArchSpec& arch, double sigma_w, double sigma_b, std::uint64_t seed) {
  arch.validate();
  if (!(sigma_w > 0.0) || !(sigma_b >= 0.0))
    throw InvalidArgument("init_params: need sigma_w > 0 and sigma_b >= 0");
  ParamSet p;
  p.sigma_w = sigma_w;
  p.sigma_b = sigma_b;
  p.seed = seed;
  const CounterRng root(seed);
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const LayerShape s = arch.layer(l);
    Tensor w(s.weight_shape());
    const double sd = sigma_w / std::sqrt(arch.variance_denominator(l));
    const CounterRng wr = root.split(2 * l);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = sd * wr.normal(i);
    Tensor b({s.out});
    if (sigma_b > 0.0) {
      const CounterRng br = root.split(2 * l + 1);
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = sigma_b * br.normal(i);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

ParamSet zeros_like(const ParamSet& p) {
  ParamSet z;
  z.sigma_w = p.sigma_w;
  z.sigma_b = p.sigma_b;
  z.seed = p.seed;
  for (const auto& w : p.weights) z.weights.emplace_back(w.shape);
  for (const auto& b : p.biases) z.biases.emplace_back(b.shape);
  return z;
}

Mask full_mask(const ArchSpec& arch) {
  Mask m;
  for (std::size_t l = 0; l < arch.num_layers(); ++l) m.emplace_back(arch.layer(l).weight_shape(), 1.0);
  return m;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Var Tape::push(Tensor value, bool tracked, std::function<void(Tape&, Var)> back) {
  Node n;
  n.value = std::move(value);
  n.tracked = tracked;
  if (tracked) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tensor& Tape::grad_of(Var v) {
  Node& n = nodes_.at(v);
  if (n.grad.shape != n.value.shape) n.grad = Tensor(n.value.shape);
  return n.grad;
}

Tape::Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Tape::Var Tape::param(const Tensor& value) {
  Var v = push(value, true, nullptr);
  return v;
}

Tape::Var Tape::linear(Var x, Var w, Var b) {
  const Tensor& X = value(x);
  const Tensor& W = value(w);
  if (X.rank() != 2 || W.rank() != 2 || X.dim(1) != W.dim(1))
    throw ShapeMismatch("linear: input " + shape_str(X.shape) + " vs weight " + shape_str(W.shape));
  const kernels::LinearDims d{X.dim(0), X.dim(1), W.dim(0)};
  if (b != none) require_shape(value(b), {d.out}, "linear bias");
  Tensor Y({d.batch, d.out});
  kp::linear_forward(d, X.data.data(), W.data.data(), b != none ? value(b).data.data() : nullptr,
                     Y.data.data());
  const bool tracked = nodes_[x].tracked || nodes_[w].tracked || (b != none && nodes_[b].tracked);
  return push(std::move(Y), tracked, [x, w, b, d](Tape& t, Var self) {
    const Tensor& dY = t.nodes_[self].grad;
    if (t.nodes_[x].tracked) {
      Tensor dX({d.batch, d.in});
      kp::linear_backward_input(d, dY.data.data(), t.value(w).data.data(), dX.data.data());
      add_into(t.grad_of(x), dX);
    }
    const bool wb = t.nodes_[w].tracked, bb = b != none && t.nodes_[b].tracked;
    if (wb || bb) {
      Tensor scratch;
      double* dw = nullptr;
      if (wb) {
        dw = t.grad_of(w).data.data();
      } else {
        scratch = Tensor({d.out, d.in});
        dw = scratch.data.data();
      }
      kp::linear_backward_params(d, dY.data.data(), t.value(x).data.data(), dw,
                                 bb ? t.grad_of(b).data.data() : nullptr);
    }
  });
}

Tape::Var Tape::conv1d(Var x, Var w, Var b) {
  const Tensor& X = value(x);
  const Tensor& W = value(w);
  if (X.rank() != 3 || W.rank() != 3 || X.dim(1) != W.dim(1) || W.dim(2) % 2 == 0)
    throw ShapeMismatch("conv1d: input " + shape_str(X.shape) + " vs weight " + shape_str(W.shape));
  const kernels::ConvDims d{X.dim(0), X.dim(1), W.dim(0), X.dim(2), W.dim(2) / 2};
  if (d.taps() > d.n) throw ShapeMismatch("conv1d: kernel wider than the sequence");
  if (b != none) require_shape(value(b), {d.cout}, "conv1d bias");
  Tensor Y({d.batch, d.cout, d.n});
  kp::conv_forward(d, X.data.data(), W.data.data(), b != none ? value(b).data.data() : nullptr,
                   Y.data.data());
  const bool tracked = nodes_[x].tracked || nodes_[w].tracked || (b != none && nodes_[b].tracked);
  return push(std::move(Y), tracked, [x, w, b, d](Tape& t, Var self) {
    const Tensor& dY = t.nodes_[self].grad;
    if (t.nodes_[x].tracked) {
      Tensor dX({d.batch, d.cin, d.n});
      kp::conv_backward_input(d, dY.data.data(), t.value(w).data.data(), dX.data.data());
      add_into(t.grad_of(x), dX);
    }
    const bool wb = t.nodes_[w].tracked, bb = b != none && t.nodes_[b].tracked;
    if (wb || bb) {
      Tensor scratch;
      double* dw = nullptr;
      if (wb) {
        dw = t.grad_of(w).data.data();
      } else {
        scratch = Tensor({d.cout, d.cin, d.taps()});
        dw = scratch.data.data();
      }
      kp::conv_backward_params(d, dY.data.data(), t.value(x).data.data(), dw,
                               bb ? t.grad_of(b).data.data() : nullptr);
    }
  });
}

Tape::Var Tape::activation(Var x, Activation act) {
  const Tensor& X = value(x);
  Tensor Y(X.shape);
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = gf::phi(act, X[i]);
  return push(std::move(Y), nodes_[x].tracked, [x, act](Tape& t, Var self) {
    const Tensor& dY = t.nodes_[self].grad;
    Tensor& dX = t.grad_of(x);
    if (act == Activation::tanh) {
      // tanh' = 1 - tanh^2, read off the stored output.
      const Tensor& Y = t.nodes_[self].value;
      for (std::size_t i = 0; i < Y.size(); ++i) dX[i] += dY[i] * (1.0 - Y[i] * Y[i]);
    } else {
      const Tensor& X = t.value(x);
      for (std::size_t i = 0; i < X.size(); ++i) dX[i] += dY[i] * gf::dphi(act, X[i]);
    }
  });
}

Tape::Var Tape::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.shape != B.shape) throw ShapeMismatch("add: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
  Tensor Y(A.shape);
  for (std::size_t i = 0; i < A.size(); ++i) Y[i] = A[i] + B[i];
  return push(std::move(Y), nodes_[a].tracked || nodes_[b].tracked, [a, b](Tape& t, Var self) {
    const Tensor& dY = t.nodes_[self].grad;
    if (t.nodes_[a].tracked) add_into(t.grad_of(a), dY);
    if (t.nodes_[b].tracked) add_into(t.grad_of(b), dY);
  });
}

Tape::Var Tape::scale(Var a, double s) {
  const Tensor& A = value(a);
  Tensor Y(A.shape);
  for (std::size_t i = 0; i < A.size(); ++i) Y[i] = s * A[i];
  return push(std::move(Y), nodes_[a].tracked, [a, s](Tape& t, Var self) {
    const Tensor& dY = t.nodes_[self].grad;
    Tensor& dA = t.grad_of(a);
    for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += s * dY[i];
  });
}

Tape::Var Tape::masked_weight(Var w, const Tensor* mask, const std::vector<double>* row_scale) {
  const Tensor& W = value(w);
  if (mask) require_shape(*mask, W.shape, "mask");
  const std::size_t rows = W.dim(0);
  const std::size_t per_row = W.size() / rows;
  if (row_scale && row_scale->size() != rows)
    throw ShapeMismatch("row scale: expected " + std::to_string(rows) + " entries, got " +
                        std::to_string(row_scale->size()));
  Tensor Y(W.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = row_scale ? (*row_scale)[r] : 1.0;
    for (std::size_t j = r * per_row; j < (r + 1) * per_row; ++j)
      Y[j] = mask ? W[j] * (*mask)[j] * s : W[j] * s;
  }
  return push(std::move(Y), nodes_[w].tracked, [w, row_scale, rows, per_row](Tape& t, Var self) {
    const Tensor& dY = t.nodes_[self].grad;
    Tensor& dW = t.grad_of(w);
    for (std::size_t r = 0; r < rows; ++r) {
      const double s = row_scale ? (*row_scale)[r] : 1.0;
      for (std::size_t j = r * per_row; j < (r + 1) * per_row; ++j) dW[j] += s * dY[j];
    }
  });
}

Tape::Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
  const Tensor& A = value(a);
  if (shape_size(shape) != A.size())
    throw ShapeMismatch("reshape: " + shape_str(A.shape) + " to " + shape_str(shape));
  Tensor Y;
  Y.shape = std::move(shape);
  Y.data = A.data;
  return push(std::move(Y), nodes_[a].tracked, [a](Tape& t, Var self) {
    add_into(t.grad_of(a), t.nodes_[self].grad);
  });
}

Tape::Var Tape::softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
  const Tensor& Z = value(logits);
  if (Z.rank() != 2) throw ShapeMismatch("cross-entropy: logits must be batch x classes");
  const std::size_t B = Z.dim(0), C = Z.dim(1);
  if (labels.size() != B) throw ShapeMismatch("cross-entropy: label count differs from batch");
  std::vector<double> prob(B * C);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw InvalidArgument("cross-entropy: label " + std::to_string(y) + " out of range");
    const double* z = Z.data.data() + b * C;
    const double mx = *std::max_element(z, z + C);
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(z[c] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < C; ++c) prob[b * C + c] = std::exp(z[c] - lse);
    total += lse - z[y];
  }
  Tensor L({1}, total / static_cast<double>(B));
  return push(std::move(L), nodes_[logits].tracked,
              [logits, labels, prob = std::move(prob), B, C](Tape& t, Var self) {
                const double g = t.nodes_[self].grad[0] / static_cast<double>(B);
                Tensor& dZ = t.grad_of(logits);
                for (std::size_t b = 0; b < B; ++b)
                  for (std::size_t c = 0; c < C; ++c)
                    dZ[b * C + c] += g * (prob[b * C + c] - (static_cast<int>(c) == labels[b] ? 1.0 : 0.0));
              });
}

Tape::Var Tape::squared_error(Var y, const Tensor& target) {
  const Tensor& Y = value(y);
  require_shape(target, Y.shape, "squared error target");
  const std::size_t B = Y.dim(0);
  double total = 0.0;
  for (std::size_t i = 0; i < Y.size(); ++i) total += (Y[i] - target[i]) * (Y[i] - target[i]);
  Tensor L({1}, total / static_cast<double>(B));
  return push(std::move(L), nodes_[y].tracked, [y, target, B](Tape& t, Var self) {
    const double g = 2.0 * t.nodes_[self].grad[0] / static_cast<double>(B);
    const Tensor& Y = t.value(y);
    Tensor& dY = t.grad_of(y);
    for (std::size_t i = 0; i < Y.size(); ++i) dY[i] += g * (Y[i] - target[i]);
  });
}

void Tape::backward(Var scalar) {
  if (value(scalar).size() != 1) throw ShapeMismatch("backward: output must be a scalar");
  grad_of(scalar)[0] = 1.0;
  for (Var v = scalar + 1; v-- > 0;) {
    Node& n = nodes_[v];
    if (n.back && n.grad.shape == n.value.shape) n.back(*this, v);
  }
}

// ---------------------------------------------------------------------------
// Networks

namespace {

struct Graph {
  std::vector<Tape::Var> weights, biases, preacts;
  Tape::Var logits = Tape::none;
};

void check_params(const ArchSpec& arch, const ParamSet& params, const Mask* mask,
                  const RowScale* scale) {
  arch.validate();
  const std::size_t n = arch.num_layers();
  if (params.weights.size() != n || params.biases.size() != n)
    throw ShapeMismatch("params: expected " + std::to_string(n) + " layers");
  if (mask && mask->size() != n) throw ShapeMismatch("mask: expected " + std::to_string(n) + " layers");
  if (scale && scale->size() != n) throw ShapeMismatch("scale: expected " + std::to_string(n) + " layers");
  for (std::size_t l = 0; l < n; ++l) {
    const LayerShape s = arch.layer(l);
    require_shape(params.weights[l], s.weight_shape(), "weight " + std::to_string(l));
    require_shape(params.biases[l], {s.out}, "bias " + std::to_string(l));
    if (mask) require_shape((*mask)[l], s.weight_shape(), "mask " + std::to_string(l));
  }
}

Graph build(Tape& tape, const ArchSpec& arch, const ParamSet& params, const Mask* mask,
            const RowScale* scale, const Tensor& inputs, bool track) {
  check_params(arch, params, mask, scale);
  if (inputs.rank() == 0) throw ShapeMismatch("inputs: empty tensor");
  require_shape(inputs, arch.input_shape(inputs.dim(0)), "inputs");
  const std::size_t B = inputs.dim(0);
  Graph g;
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    g.weights.push_back(track ? tape.param(params.weights[l]) : tape.constant(params.weights[l]));
    g.biases.push_back(track ? tape.param(params.biases[l]) : tape.constant(params.biases[l]));
  }
  auto effective = [&](std::size_t l) {
    if (!mask && !scale) return g.weights[l];
    return tape.masked_weight(g.weights[l], mask ? &(*mask)[l] : nullptr,
                              scale ? &(*scale)[l] : nullptr);
  };
  const double branch = arch.residual_scale();
  Tape::Var x = tape.constant(inputs);
  Tape::Var y = Tape::none;
  for (std::size_t l = 0; l < arch.depth; ++l) {
    const Tape::Var h = l == 0 ? x : tape.activation(y, arch.act);
    const Tape::Var w = effective(l);
    const Tape::Var z = arch.is_conv() ? tape.conv1d(h, w, g.biases[l]) : tape.linear(h, w, g.biases[l]);
    if (arch.is_residual() && l > 0)
      y = tape.add(y, branch == 1.0 ? z : tape.scale(z, branch));
    else
      y = z;
    g.preacts.push_back(y);
  }
  const std::size_t flat = tape.value(y).size() / B;
  if (arch.head) {
    Tape::Var h = tape.activation(y, arch.act);
    if (arch.is_conv()) h = tape.reshape(h, {B, flat});
    g.logits = tape.linear(h, effective(arch.depth), g.biases[arch.depth]);
  } else {
    g.logits = arch.is_conv() ? tape.reshape(y, {B, flat}) : y;
  }
  return g;
}

Tape::Var attach_loss(Tape& tape, Tape::Var logits, const Batch& batch, LossKind loss) {
  if (loss == LossKind::cross_entropy) return tape.softmax_cross_entropy(logits, batch.labels);
  return tape.squared_error(logits, batch.targets);
}

}  // namespace

ForwardResult forward(const ArchSpec& arch, const ParamSet& params, const Mask* mask,
                      const RowScale* scale, const Tensor& inputs) {
  Tape tape;
  const Graph g = build(tape, arch, params, mask, scale, inputs, false);
  ForwardResult r;
  for (auto v : g.preacts) r.preacts.push_back(tape.value(v));
  r.logits = tape.value(g.logits);
  return r;
}

LossGrad loss_and_grads(const ArchSpec& arch, const ParamSet& params, const Mask* mask,
                        const RowScale* scale, const Batch& batch, LossKind loss) {
  Tape tape;
  const Graph g = build(tape, arch, params, mask, scale, batch.inputs, true);
  const Tape::Var L = attach_loss(tape, g.logits, batch, loss);
  LossGrad out;
  out.loss = tape.value(L)[0];
  if (!std::isfinite(out.loss)) throw NumericOverflow("loss is not finite");
  tape.backward(L);
  out.grads = zeros_like(params);
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    if (tape.grad(g.weights[l]).size()) out.grads.weights[l] = tape.grad(g.weights[l]);
    if (tape.grad(g.biases[l]).size()) out.grads.biases[l] = tape.grad(g.biases[l]);
  }
  return out;
}

double loss_value(const ArchSpec& arch, const ParamSet& params, const Mask* mask,
                  const RowScale* scale, const Batch& batch, LossKind loss) {
  Tape tape;
  const Graph g = build(tape, arch, params, mask, scale, batch.inputs, false);
  return tape.value(attach_loss(tape, g.logits, batch, loss))[0];
}

void sgd_step(ParamSet& params, const ParamSet& grads, double lr, const Mask* mask) {
  if (!(lr > 0.0)) throw InvalidArgument("sgd_step: lr must be > 0");
  if (grads.weights.size() != params.weights.size() || grads.biases.size() != params.biases.size())
    throw ShapeMismatch("sgd_step: gradient layer count differs");
  if (mask && mask->size() != params.weights.size()) throw ShapeMismatch("sgd_step: mask layer count differs");
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    Tensor& W = params.weights[l];
    require_shape(grads.weights[l], W.shape, "sgd_step weight grad");
    require_shape(grads.biases[l], params.biases[l].shape, "sgd_step bias grad");
    if (mask) require_shape((*mask)[l], W.shape, "sgd_step mask");
    for (std::size_t i = 0; i < W.size(); ++i) {
      if (mask && (*mask)[l][i] == 0.0)
        W[i] = 0.0;
      else
        W[i] -= lr * grads.weights[l][i];
    }
    Tensor& b = params.biases[l];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * grads.biases[l][i];
  }
}

void bake_mask(ParamSet& params, const Mask& mask, const RowScale* scale) {
  if (mask.size() != params.weights.size()) throw ShapeMismatch("bake_mask: layer count differs");
  if (scale && scale->size() != params.weights.size()) throw ShapeMismatch("bake_mask: scale layer count differs");
  for (std::size_t l = 0; l < mask.size(); ++l) {
    Tensor& W = params.weights[l];
    require_shape(mask[l], W.shape, "bake_mask");
    const std::size_t rows = W.dim(0), per_row = W.size() / rows;
    if (scale && (*scale)[l].size() != rows) throw ShapeMismatch("bake_mask: row scale size differs");
    for (std::size_t r = 0; r < rows; ++r) {
      const double s = scale ? (*scale)[l][r] : 1.0;
      for (std::size_t j = r * per_row; j < (r + 1) * per_row; ++j)
        W[j] = mask[l][j] == 0.0 ? 0.0 : W[j] * s;
    }
  }
}

double accuracy(const ArchSpec& arch, const ParamSet& params, const Mask* mask,
                const RowScale* scale, const Batch& batch) {
  const ForwardResult r = forward(arch, params, mask, scale, batch.inputs);
  const std::size_t B = r.logits.dim(0), C = r.logits.dim(1);
  if (batch.labels.size() != B) throw ShapeMismatch("accuracy: label count differs from batch");
  if (B == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* z = r.logits.data.data() + b * C;
    const auto pred = static_cast<int>(std::max_element(z, z + C) - z);
    correct += pred == batch.labels[b];
  }
  return static_cast<double>(correct) / static_cast<double>(B);
}

double grad_check(const ArchSpec& arch, const ParamSet& params, const Batch& batch, LossKind loss,
                  std::size_t max_entries, std::uint64_t sample_seed) {
  const LossGrad lg = loss_and_grads(arch, params, nullptr, nullptr, batch, loss);
  struct Entry {
    std::size_t layer;
    bool bias;
    std::size_t index;
  };
  std::vector<Entry> all;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    for (std::size_t i = 0; i < params.weights[l].size(); ++i) all.push_back({l, false, i});
    for (std::size_t i = 0; i < params.biases[l].size(); ++i) all.push_back({l, true, i});
  }
  std::vector<Entry> picked;
  if (max_entries == 0 || max_entries >= all.size()) {
    picked = all;
  } else {
    const CounterRng rng(sample_seed, 0x6772616463686bULL);
    for (std::size_t i = 0; i < max_entries; ++i)
      picked.push_back(all[static_cast<std::size_t>(rng.uniform(i) * static_cast<double>(all.size()))]);
  }
  constexpr double h = 1e-5;
  ParamSet probe = params;
  double worst = 0.0;
  for (const Entry& e : picked) {
    double& slot = e.bias ? probe.biases[e.layer][e.index] : probe.weights[e.layer][e.index];
    const double saved = slot;
    slot = saved + h;
    const double up = loss_value(arch, probe, nullptr, nullptr, batch, loss);
    slot = saved - h;
    const double down = loss_value(arch, probe, nullptr, nullptr, batch, loss);
    slot = saved;
    const double fd = (up - down) / (2.0 * h);
    const double ad = e.bias ? lg.grads.biases[e.layer][e.index] : lg.grads.weights[e.layer][e.index];
    // The difference quotient carries an absolute error near eps * |loss| / h,
    // so the floor follows the loss scale.
    const double denom = std::max({std::abs(fd), std::abs(ad), 1e-5 * std::max(1.0, std::abs(lg.loss))});
    worst = std::max(worst, std::abs(fd - ad) / denom);
  }
  return worst;
}

std::vector<double> empirical_chi(const ArchSpec& arch, const ParamSet& params, const Mask* mask,
                                  const Tensor& inputs) {
  if (arch.is_conv()) throw InvalidArgument("empirical_chi: dense architectures only");
  const ForwardResult r = forward(arch, params, mask, nullptr, inputs);
  const std::size_t B = inputs.dim(0);
  std::vector<double> out;
  for (std::size_t l = 0; l + 1 < arch.depth; ++l) {
    const Tensor& W = params.weights[l + 1];
    const std::size_t rows = W.dim(0), cols = W.dim(1);
    std::vector<double> col_sq(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const double w = mask ? W[i * cols + j] * (*mask)[l + 1][i * cols + j] : W[i * cols + j];
        col_sq[j] += w * w;
      }
    const Tensor& y = r.preacts[l];
    double acc = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < cols; ++j) {
        const double d = gf::dphi(arch.act, y[b * cols + j]);
        acc += d * d * col_sq[j];
      }
    out.push_back(acc / static_cast<double>(B * cols));
  }
  return out;
}

}  // namespace edgeprune::nnet

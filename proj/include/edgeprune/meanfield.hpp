#pragma once

// Layer-by-layer mean-field recursions and the closed-form sparsity bounds.

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "edgeprune/gaussfield.hpp"

namespace edgeprune::meanfield {

using gaussfield::Activation;
using gaussfield::EdgePoint;

/// Index 0 is the input layer. `gap` holds 1 - c without cancellation.
struct MeanFieldTrace {
  std::vector<double> q;
  std::vector<double> c;
  std::vector<double> gap;
  std::vector<double> qtilde;

  std::size_t size() const noexcept { return q.size(); }
};

/// Forward variance and correlation of two inputs with common variance q0,
/// plus the gradient variance propagated back from qtilde = 1 at the top.
MeanFieldTrace propagate_ffnn(Activation act, double sigma_b, double sigma_w, double q0, double c0,
                              std::size_t L);

/// CSV with columns layer,q,c,qtilde.
void write_trace_csv(std::ostream& os, const MeanFieldTrace& trace);

/// Row-major n x n correlation grid between spatial positions.
using CorrelationGrid = std::vector<double>;

/// Kernel-averaged correlation map on a circular grid, at the edge's q*.
/// Returns L grids, the first being `initial`.
std::vector<CorrelationGrid> propagate_cnn_grid(Activation act, const EdgePoint& edge,
                                                const CorrelationGrid& initial, std::size_t n,
                                                std::size_t k, std::size_t L);

/// q~_l = q~_{l+1} (N_{l+1}/N_l) chi_l, anchored at q~ = qtilde_top for the last layer.
std::vector<double> backprop_variance(const std::vector<double>& chi_per_layer,
                                      const std::vector<double>& widths, double qtilde_top);

/// m_l = A chi^(L-l) for l = 1..L.
std::vector<double> saliency_profile_theory(double chi, std::size_t L, double A);

/// Standard: (1 + sigma_w^2/2)^L. Stable: (1 + sigma_w^2/(2L))^L / L.
double resnet_conditioning_theory(double sigma_w, std::size_t L, bool stable);

enum class LogBase { natural, ten };

struct BoundValue {
  double value = 0.0;
  bool vacuous = false;  // value > 1
};

/// (1/L)(1 + log(kappa L N^2)/kappa).
BoundValue theorem1_bound(double kappa, double L, double N, LogBase base);

struct MbpBound {
  double value = 0.0;
  bool vacuous = false;
  double epsilon = 0.0;  // minimizing epsilon
  double x_eps = 0.0;    // threshold at that epsilon
};

/// Large-depth upper bound on E[s_cr] under magnitude pruning with one
/// privileged layer. The infimum over epsilon is taken on a uniform grid in
/// (0.01, 1.99); x_eps is located on a uniform grid in (0, 1).
MbpBound mbp_bound(double gamma, double zeta_l0, double N, double L, int epsilon_points = 50,
                   int x_points = 2000);

/// c_l = c_{l-1}/(1+lambda) + lambda/(1+lambda) f(c_{l-1}) with the ReLU f.
/// Returns gaps 1 - c_l for l = 0..L.
std::vector<double> pruned_resnet_gap(double lambda, double c0, std::size_t L);

enum class DecayLaw { power, exponential };

struct DecayFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least squares of log y against log x (power) or x (exponential).
DecayFit fit_decay(const std::vector<double>& x, const std::vector<double>& y, DecayLaw law);
/// Same, with x = index over series[first..last].
DecayFit decay_exponent_fit(const std::vector<double>& series, std::size_t first,
                            std::size_t last, DecayLaw law);

/// Sub-unit stable fixed point of f in the chaotic phase (chi > 1).
double chaotic_correlation_limit(Activation act, const EdgePoint& edge);

}  // namespace edgeprune::meanfield

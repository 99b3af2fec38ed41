#pragma once

// Gaussian expectations of activation functions and the quantities built on
// them: the variance map, its fixed point, the correlation map f, the slope
// chi = f'(1) and the edge-of-chaos solver.

#include <string>
#include <string_view>
#include <vector>

namespace edgeprune::gaussfield {

enum class Activation { relu, tanh };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation act) noexcept;

/// True when every expectation below has a closed form for `act`.
constexpr bool has_closed_form(Activation act) noexcept { return act == Activation::relu; }

double phi(Activation act, double x) noexcept;
/// Derivative; ReLU uses 1/2 at the origin.
double dphi(Activation act, double x) noexcept;
double d2phi(Activation act, double x) noexcept;

/// Nodes and weights for the standard normal: sum(w_i g(z_i)) ~ E[g(Z)].
struct QuadratureRule {
  int order = 0;
  std::vector<double> nodes;
  std::vector<double> weights;

  template <class F>
  double expect(F&& g) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * g(nodes[i]);
    return acc;
  }

  /// E[g(Z1, Z2)] for independent standard normals on the tensor grid.
  template <class F>
  double expect2(F&& g) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < nodes.size(); ++j) row += weights[j] * g(nodes[i], nodes[j]);
      acc += weights[i] * row;
    }
    return acc;
  }
};

/// E[g(Z1, Z2)] with a separate rule per axis.
template <class F>
double expect2(const QuadratureRule& r1, const QuadratureRule& r2, F&& g) {
  double acc = 0.0;
  for (std::size_t i = 0; i < r1.nodes.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < r2.nodes.size(); ++j) row += r2.weights[j] * g(r1.nodes[i], r2.nodes[j]);
    acc += r1.weights[i] * row;
  }
  return acc;
}

/// Past this the three-term recurrence overflows near the outermost nodes.
inline constexpr int kMaxQuadratureOrder = 180;

/// Gauss-Hermite, orders 2 .. kMaxQuadratureOrder. Exact for polynomials of
/// degree < 2 * order.
QuadratureRule make_quadrature(int order);

/// Piecewise Gauss-Legendre on [-8.5, 8.5] with panels no wider than
/// 1/scale. Meant for g(z) = h(scale * z) with h analytic in a strip around
/// the real axis (tanh and its derivatives): the error stays near 1e-13 for
/// any scale, where a fixed Gauss-Hermite rule loses digits once scale > 1.
QuadratureRule make_scaled_rule(double scale);

double expect_phi_sq(Activation act, double q);
double expect_dphi_sq(Activation act, double q);
/// E[phi(sqrt(q1) Z1) phi(sqrt(q2) (c Z1 + sqrt(1-c^2) Z2))].
double cross_expectation(Activation act, double q1, double q2, double c);

/// V(q) = sigma_b^2 + sigma_w^2 E[phi(sqrt(q) Z)^2].
double variance_map(Activation act, double sigma_b, double sigma_w, double q);
/// dV/dq, via the Gaussian heat identity d/dq E[h(sqrt(q)Z)] = E[h''(sqrt(q)Z)]/2.
double variance_map_slope(Activation act, double sigma_b, double sigma_w, double q);

struct FixedPointResult {
  double q = 0.0;
  int iterations = 0;
  /// ReLU with sigma_b = 0, sigma_w = sqrt(2): V is the identity and every q is fixed.
  bool degenerate = false;
};

FixedPointResult fixed_point_q(Activation act, double sigma_b, double sigma_w,
                               double q_init = 1.0, double tol = 1e-12, int max_iter = 10000);

/// One point of the (sigma_b, sigma_w) phase diagram.
struct EdgePoint {
  double sigma_b = 0.0;
  double sigma_w = 1.0;
  double q_star = 1.0;
  double chi = 1.0;
  /// q_star is the conventional value 1 rather than a resolved fixed point
  /// (ReLU on the degenerate family, or no finite fixed point exists).
  bool conventional_q = false;
};

/// Resolve q* and chi for a hyperparameter pair.
EdgePoint make_edge(Activation act, double sigma_b, double sigma_w);

double chi(Activation act, double sigma_b, double sigma_w);

/// f(c) at the edge's variance. Uses V(q*) in the denominator, which equals
/// q* at a fixed point and keeps f(1) = 1 for the conventional ReLU q.
double correlation_map(Activation act, const EdgePoint& edge, double c);

/// One layer of the correlation recursion written on the gap u = 1 - c, for
/// inputs with common variance q. Returns 1 - c_next. Accurate for tiny u.
double correlation_gap_step(Activation act, double sigma_b, double sigma_w, double q, double gap);

/// (1/pi)(c asin c + sqrt(1-c^2)) + c/2.
double relu_correlation_closed_form(double c);
/// 1 - f(1 - u) for the ReLU closed form, without cancellation.
double relu_correlation_gap(double u);

/// sigma_w in [1e-3, 10] with chi(sigma_b, sigma_w) = target, by bisection.
EdgePoint solve_sigma_w_for_chi(Activation act, double sigma_b, double target_chi,
                                double lo = 1e-3, double hi = 10.0);
EdgePoint eoc_solve(Activation act, double sigma_b);

double normal_cdf(double x) noexcept;
/// Inverse standard-normal CDF for p in (0, 1).
double normal_quantile(double p);
/// x-quantile of |N(0,1)| for x in [0, 1).
double folded_quantile(double x);
/// Quantile of |N(0,1)| at level 1 - tail, accurate when tail underflows 1 - x.
double folded_quantile_upper(double tail);

}  // namespace edgeprune::gaussfield

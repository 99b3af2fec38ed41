#include "edgeprune/gaussfield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "edgeprune/errors.hpp"

namespace edgeprune::gaussfield {

namespace {

constexpr double kPi = std::numbers::pi;

void require_nonneg_q(double q, const char* what) {
  if (!(q >= 0.0)) throw InvalidArgument(std::string(what) + ": variance must be >= 0");
}

void require_correlation(double c, const char* what) {
  if (!(std::abs(c) <= 1.0)) throw InvalidArgument(std::string(what) + ": |c| must be <= 1");
}

// tanh(a) - tanh(b) with d = a - b supplied exactly.
double tanh_difference(double a, double b, double d) {
  return std::tanh(d) * (1.0 - std::tanh(a) * std::tanh(b));
}

// sin(t) - t cos(t), accurate for small t.
double sin_minus_t_cos(double t) {
  if (std::abs(t) < 1e-2) {
    const double t2 = t * t;
    // t^3/3 - t^5/30 + t^7/840 - t^9/45360
    return t * t2 * (1.0 / 3.0 - t2 * (1.0 / 30.0 - t2 * (1.0 / 840.0 - t2 / 45360.0)));
  }
  return std::sin(t) - t * std::cos(t);
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation act) noexcept {
  return act == Activation::relu ? "relu" : "tanh";
}

double phi(Activation act, double x) noexcept {
  return act == Activation::relu ? std::max(x, 0.0) : std::tanh(x);
}

double dphi(Activation act, double x) noexcept {
  if (act == Activation::relu) return x > 0.0 ? 1.0 : (x < 0.0 ? 0.0 : 0.5);
  const double t = std::tanh(x);
  return 1.0 - t * t;
}

double d2phi(Activation act, double x) noexcept {
  if (act == Activation::relu) return 0.0;
  const double t = std::tanh(x);
  return -2.0 * t * (1.0 - t * t);
}

QuadratureRule make_quadrature(int order) {
  if (order < 2 || order > kMaxQuadratureOrder)
    throw InvalidArgument("make_quadrature: order must be in [2, " + std::to_string(kMaxQuadratureOrder) + "]");
  // Newton iteration on the orthonormal Hermite recurrence (weight exp(-x^2)),
  // then rescale to the standard normal.
  const int n = order;
  std::vector<double> x(n), w(n);
  const double pim4 = std::pow(kPi, -0.25);
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[i - 2];
    }
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = w[n - 1 - i] = 2.0 / (pp * pp);
  }

  QuadratureRule rule;
  rule.order = n;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = std::numbers::sqrt2 * x[n - 1 - i];
    rule.weights[i] = w[n - 1 - i] / std::sqrt(kPi);
    total += rule.weights[i];
  }
  for (double& wi : rule.weights) wi /= total;
  return rule;
}

namespace {

constexpr int kPanelPoints = 10;
constexpr double kTailCut = 8.5;

struct LegendreRule {
  double x[kPanelPoints];
  double w[kPanelPoints];
};

// Gauss-Legendre on [-1, 1] by Newton on P_n.
LegendreRule make_legendre() {
  LegendreRule r{};
  constexpr int n = kPanelPoints;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1);
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-16) break;
    }
    r.x[i] = -z;
    r.x[n - 1 - i] = z;
    r.w[i] = r.w[n - 1 - i] = 2.0 / ((1.0 - z * z) * pp * pp);
  }
  return r;
}

}  // namespace

QuadratureRule make_scaled_rule(double scale) {
  if (!(scale >= 0.0) || !std::isfinite(scale))
    throw InvalidArgument("make_scaled_rule: scale must be finite and >= 0");
  static const LegendreRule gl = make_legendre();
  const double width = std::min(1.0, 1.0 / scale);
  const auto panels = static_cast<int>(std::ceil(2.0 * kTailCut / width));
  const double h = 2.0 * kTailCut / panels;
  QuadratureRule rule;
  rule.order = panels * kPanelPoints;
  rule.nodes.reserve(rule.order);
  rule.weights.reserve(rule.order);
  const double norm = 1.0 / std::sqrt(2.0 * kPi);
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = -kTailCut + (p + 0.5) * h;
    for (int k = 0; k < kPanelPoints; ++k) {
      const double z = mid + 0.5 * h * gl.x[k];
      const double w = 0.5 * h * gl.w[k] * norm * std::exp(-0.5 * z * z);
      rule.nodes.push_back(z);
      rule.weights.push_back(w);
      total += w;
    }
  }
  for (double& w : rule.weights) w /= total;
  return rule;
}

double expect_phi_sq(Activation act, double q) {
  require_nonneg_q(q, "expect_phi_sq");
  if (act == Activation::relu) return 0.5 * q;
  const double s = std::sqrt(q);
  return make_scaled_rule(s).expect([&](double z) {
    const double t = std::tanh(s * z);
    return t * t;
  });
}

double expect_dphi_sq(Activation act, double q) {
  require_nonneg_q(q, "expect_dphi_sq");
  if (act == Activation::relu) return 0.5;
  const double s = std::sqrt(q);
  return make_scaled_rule(s).expect([&](double z) {
    const double d = dphi(act, s * z);
    return d * d;
  });
}

double cross_expectation(Activation act, double q1, double q2, double c) {
  require_nonneg_q(q1, "cross_expectation");
  require_nonneg_q(q2, "cross_expectation");
  require_correlation(c, "cross_expectation");
  if (act == Activation::relu) return 0.5 * std::sqrt(q1 * q2) * relu_correlation_closed_form(c);
  const double s1 = std::sqrt(q1), s2 = std::sqrt(q2);
  const double sc = std::sqrt(std::max(0.0, 1.0 - c * c));
  const auto r1 = make_scaled_rule(std::max(s1, std::abs(c) * s2));
  const auto r2 = make_scaled_rule(sc * s2);
  return expect2(r1, r2, [&](double z1, double z2) {
    return std::tanh(s1 * z1) * std::tanh(s2 * (c * z1 + sc * z2));
  });
}

double variance_map(Activation act, double sigma_b, double sigma_w, double q) {
  return sigma_b * sigma_b + sigma_w * sigma_w * expect_phi_sq(act, q);
}

double variance_map_slope(Activation act, double /*sigma_b*/, double sigma_w, double q) {
  require_nonneg_q(q, "variance_map_slope");
  if (act == Activation::relu) return 0.5 * sigma_w * sigma_w;
  // (phi^2)'' / 2 = phi'^2 + phi phi''
  const double s = std::sqrt(q);
  const double e = make_scaled_rule(s).expect([&](double z) {
    const double x = s * z;
    const double d = dphi(act, x);
    return d * d + phi(act, x) * d2phi(act, x);
  });
  return sigma_w * sigma_w * e;
}

FixedPointResult fixed_point_q(Activation act, double sigma_b, double sigma_w, double q_init,
                               double tol, int max_iter) {
  if (!(q_init > 0.0)) throw InvalidArgument("fixed_point_q: q_init must be > 0");
  if (!(tol > 0.0)) throw InvalidArgument("fixed_point_q: tol must be > 0");
  if (!(sigma_w > 0.0) || !(sigma_b >= 0.0))
    throw InvalidArgument("fixed_point_q: need sigma_w > 0 and sigma_b >= 0");

  const double b2 = sigma_b * sigma_b;
  if (act == Activation::relu) {
    // V(q) = b2 + a q is affine.
    const double a = 0.5 * sigma_w * sigma_w;
    if (std::abs(a - 1.0) <= 1e-15 && b2 == 0.0) return {q_init, 0, true};
    if (a < 1.0) return {b2 / (1.0 - a), 1, false};
    double q = q_init;
    for (int it = 0; it < max_iter && std::isfinite(q); ++it) q = b2 + a * q;
    throw ConvergenceFailure("fixed_point_q: ReLU variance map has no attracting fixed point", q);
  }

  double q = q_init;
  for (int it = 1; it <= max_iter; ++it) {
    const double v = variance_map(act, sigma_b, sigma_w, q);
    const double g = v - q;
    double next = v;  // plain iteration fallback
    const double slope = variance_map_slope(act, sigma_b, sigma_w, q) - 1.0;
    if (slope != 0.0) {
      const double newton = q - g / slope;
      if (newton >= 0.0 && std::isfinite(newton)) {
        const double g_new = variance_map(act, sigma_b, sigma_w, newton) - newton;
        if (std::abs(g_new) < std::abs(g)) next = newton;
      }
    }
    if (std::abs(next - q) <= tol) {
      const double residual = std::abs(variance_map(act, sigma_b, sigma_w, next) - next);
      if (residual <= tol) return {next, it, false};
    }
    q = next;
  }
  throw ConvergenceFailure("fixed_point_q: no convergence within max_iter", q);
}

double chi(Activation act, double sigma_b, double sigma_w) {
  if (!(sigma_w > 0.0) || !(sigma_b >= 0.0))
    throw InvalidArgument("chi: need sigma_w > 0 and sigma_b >= 0");
  if (act == Activation::relu) return 0.5 * sigma_w * sigma_w;
  const double q = fixed_point_q(act, sigma_b, sigma_w).q;
  return sigma_w * sigma_w * expect_dphi_sq(act, q);
}

EdgePoint make_edge(Activation act, double sigma_b, double sigma_w) {
  EdgePoint e;
  e.sigma_b = sigma_b;
  e.sigma_w = sigma_w;
  if (act == Activation::relu) {
    e.chi = 0.5 * sigma_w * sigma_w;
    try {
      const auto fp = fixed_point_q(act, sigma_b, sigma_w);
      e.q_star = fp.degenerate ? 1.0 : fp.q;
      e.conventional_q = fp.degenerate;
    } catch (const ConvergenceFailure&) {
      e.q_star = 1.0;
      e.conventional_q = true;
    }
    return e;
  }
  e.q_star = fixed_point_q(act, sigma_b, sigma_w).q;
  e.chi = sigma_w * sigma_w * expect_dphi_sq(act, e.q_star);
  return e;
}

double relu_correlation_closed_form(double c) {
  require_correlation(c, "relu_correlation_closed_form");
  return (c * std::asin(c) + std::sqrt(std::max(0.0, 1.0 - c * c))) / kPi + 0.5 * c;
}

double relu_correlation_gap(double u) {
  if (!(u >= 0.0 && u <= 2.0)) throw InvalidArgument("relu_correlation_gap: gap must be in [0, 2]");
  // With c = cos(t): f(c) = c - (c t - sin t)/pi, so 1 - f = u - (sin t - t cos t)/pi.
  const double t = 2.0 * std::asin(std::sqrt(0.5 * u));
  return u - sin_minus_t_cos(t) / kPi;
}

double correlation_map(Activation act, const EdgePoint& edge, double c) {
  require_correlation(c, "correlation_map");
  if (!(edge.q_star > 0.0))
    throw DegenerateEdge("correlation_map: edge has q* = 0, correlation is undefined");
  const double q = edge.q_star;
  const double v = variance_map(act, edge.sigma_b, edge.sigma_w, q);
  const double e = cross_expectation(act, q, q, c);
  return (edge.sigma_b * edge.sigma_b + edge.sigma_w * edge.sigma_w * e) / v;
}

double correlation_gap_step(Activation act, double sigma_b, double sigma_w, double q, double gap) {
  if (!(gap >= 0.0 && gap <= 2.0)) throw InvalidArgument("correlation_gap_step: gap must be in [0, 2]");
  if (!(q > 0.0)) throw DegenerateEdge("correlation_gap_step: variance must be > 0");
  const double v = variance_map(act, sigma_b, sigma_w, q);
  const double w2 = sigma_w * sigma_w;
  if (act == Activation::relu) return w2 * 0.5 * q * relu_correlation_gap(gap) / v;
  // E[phi(a)(phi(a) - phi(b))], a = sqrt(q) z1, b = sqrt(q)(c z1 + s z2).
  const double sq = std::sqrt(q);
  const double c = 1.0 - gap;
  const double s = std::sqrt(gap * (2.0 - gap));
  const auto r1 = make_scaled_rule(sq);
  const auto r2 = make_scaled_rule(s * sq);
  const double e = expect2(r1, r2, [&](double z1, double z2) {
    const double a = sq * z1;
    const double b = sq * (c * z1 + s * z2);
    const double d = sq * (gap * z1 - s * z2);
    return std::tanh(a) * tanh_difference(a, b, d);
  });
  return w2 * e / v;
}

EdgePoint solve_sigma_w_for_chi(Activation act, double sigma_b, double target_chi, double lo,
                                double hi) {
  if (!(sigma_b >= 0.0)) throw InvalidArgument("solve_sigma_w_for_chi: sigma_b must be >= 0");
  if (!(target_chi > 0.0)) throw InvalidArgument("solve_sigma_w_for_chi: target must be > 0");
  if (!(lo > 0.0 && hi > lo)) throw InvalidArgument("solve_sigma_w_for_chi: need 0 < lo < hi");
  auto h = [&](double sw) { return chi(act, sigma_b, sw) - target_chi; };
  // chi need not be monotone in sigma_w (tanh with sigma_b > 0 turns back
  // down for large sigma_w), so bracket the smallest crossing on a log grid.
  constexpr int kScan = 256;
  double flo = h(lo);
  if (flo == 0.0) return make_edge(act, sigma_b, lo);
  bool bracketed = false;
  for (int i = 1; i <= kScan; ++i) {
    const double x = i == kScan ? hi : lo * std::pow(hi / lo, static_cast<double>(i) / kScan);
    const double fx = h(x);
    if (fx == 0.0) return make_edge(act, sigma_b, x);
    if ((fx > 0.0) != (flo > 0.0)) {
      hi = x;
      bracketed = true;
      break;
    }
    lo = x;
    flo = fx;
  }
  if (!bracketed)
    throw BracketFailure("solve_sigma_w_for_chi: chi - target has no sign change on the interval");
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = h(mid);
    if (fm == 0.0) {
      lo = hi = mid;
      break;
    }
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return make_edge(act, sigma_b, 0.5 * (lo + hi));
}

EdgePoint eoc_solve(Activation act, double sigma_b) {
  return solve_sigma_w_for_chi(act, sigma_b, 1.0);
}

double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("normal_quantile: p must be in (0, 1)");
  // Acklam's rational approximation as the seed.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Newton refinement on the CDF; work on the nearer tail so the residual
  // keeps its relative precision.
  for (int it = 0; it < 6; ++it) {
    const double tail = p < 0.5 ? normal_cdf(x) - p : (1.0 - p) - normal_cdf(-x);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
    if (pdf == 0.0) break;
    const double step = tail / pdf;
    x -= step;
    if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) break;
  }
  return x;
}

double folded_quantile(double x) {
  if (!(x >= 0.0 && x < 1.0)) throw InvalidArgument("folded_quantile: x must be in [0, 1)");
  if (x == 0.0) return 0.0;
  return -normal_quantile(0.5 * (1.0 - x));
}

double folded_quantile_upper(double tail) {
  if (!(tail >= 0.0 && tail <= 1.0))
    throw InvalidArgument("folded_quantile_upper: tail must be in [0, 1]");
  if (tail == 0.0) return std::numeric_limits<double>::infinity();
  if (tail == 1.0) return 0.0;
  return -normal_quantile(0.5 * tail);
}

}  // namespace edgeprune::gaussfield

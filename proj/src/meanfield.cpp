#include "edgeprune/meanfield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "edgeprune/errors.hpp"

namespace edgeprune::meanfield {

namespace gf = gaussfield;

MeanFieldTrace propagate_ffnn(Activation act, double sigma_b, double sigma_w, double q0, double c0,
                              std::size_t L) {
  if (!(q0 > 0.0)) throw InvalidArgument("propagate_ffnn: q0 must be > 0");
  if (!(std::abs(c0) <= 1.0)) throw InvalidArgument("propagate_ffnn: |c0| must be <= 1");
  if (L == 0) throw InvalidArgument("propagate_ffnn: L must be >= 1");
  MeanFieldTrace t;
  t.q.resize(L);
  t.gap.resize(L);
  t.c.resize(L);
  t.qtilde.resize(L);
  t.q[0] = q0;
  t.gap[0] = 1.0 - c0;
  for (std::size_t l = 1; l < L; ++l) {
    t.q[l] = gf::variance_map(act, sigma_b, sigma_w, t.q[l - 1]);
    if (!(t.q[l] > 0.0)) throw DegenerateEdge("propagate_ffnn: variance collapsed to 0");
    t.gap[l] = gf::correlation_gap_step(act, sigma_b, sigma_w, t.q[l - 1], t.gap[l - 1]);
  }
  for (std::size_t l = 0; l < L; ++l) t.c[l] = 1.0 - t.gap[l];

  std::vector<double> chis(L);
  for (std::size_t l = 0; l < L; ++l)
    chis[l] = sigma_w * sigma_w * gf::expect_dphi_sq(act, t.q[l]);
  t.qtilde = backprop_variance(chis, std::vector<double>(L, 1.0), 1.0);
  return t;
}

void write_trace_csv(std::ostream& os, const MeanFieldTrace& trace) {
  const auto prec = os.precision(17);
  os << "layer,q,c,qtilde\n";
  for (std::size_t l = 0; l < trace.size(); ++l)
    os << l << ',' << trace.q[l] << ',' << trace.c[l] << ',' << trace.qtilde[l] << '\n';
  os.precision(prec);
}

std::vector<CorrelationGrid> propagate_cnn_grid(Activation act, const EdgePoint& edge,
                                                const CorrelationGrid& initial, std::size_t n,
                                                std::size_t k, std::size_t L) {
  if (n == 0 || initial.size() != n * n)
    throw InvalidArgument("propagate_cnn_grid: grid must be n x n");
  if (2 * k + 1 > n) throw InvalidArgument("propagate_cnn_grid: kernel 2k+1 exceeds n");
  if (L == 0) throw InvalidArgument("propagate_cnn_grid: L must be >= 1");
  for (double c : initial)
    if (!(std::abs(c) <= 1.0)) throw InvalidArgument("propagate_cnn_grid: entries must be in [-1, 1]");

  std::vector<CorrelationGrid> out;
  out.reserve(L);
  out.push_back(initial);
  const double inv = 1.0 / static_cast<double>(2 * k + 1);
  const auto width = static_cast<std::ptrdiff_t>(k);
  const auto nn = static_cast<std::ptrdiff_t>(n);
  CorrelationGrid mapped(n * n);
  for (std::size_t l = 1; l < L; ++l) {
    const CorrelationGrid& prev = out.back();
    // Symmetric and circulant grids repeat most entries; map each value once.
    std::vector<double> keys(prev);
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    std::vector<double> values(keys.size());
    const auto nk = static_cast<std::ptrdiff_t>(keys.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < nk; ++i) values[i] = gf::correlation_map(act, edge, keys[i]);
    for (std::ptrdiff_t i = 0; i < nn * nn; ++i) {
      const auto it = std::lower_bound(keys.begin(), keys.end(), prev[i]);
      mapped[i] = values[it - keys.begin()];
    }
    CorrelationGrid next(n * n);
    for (std::ptrdiff_t a = 0; a < nn; ++a) {
      for (std::ptrdiff_t b = 0; b < nn; ++b) {
        double acc = 0.0;
        for (std::ptrdiff_t s = -width; s <= width; ++s) {
          const std::ptrdiff_t aa = ((a + s) % nn + nn) % nn;
          const std::ptrdiff_t bb = ((b + s) % nn + nn) % nn;
          acc += mapped[aa * nn + bb];
        }
        next[a * nn + b] = std::clamp(acc * inv, -1.0, 1.0);
      }
    }
    out.push_back(std::move(next));
  }
  return out;
}

std::vector<double> backprop_variance(const std::vector<double>& chi_per_layer,
                                      const std::vector<double>& widths, double qtilde_top) {
  const std::size_t L = chi_per_layer.size();
  if (L == 0 || widths.size() != L)
    throw InvalidArgument("backprop_variance: chi and widths must have the same nonzero length");
  if (!(qtilde_top > 0.0)) throw InvalidArgument("backprop_variance: qtilde_top must be > 0");
  for (double w : widths)
    if (!(w > 0.0)) throw InvalidArgument("backprop_variance: widths must be positive");
  std::vector<double> qt(L);
  qt[L - 1] = qtilde_top;
  for (std::size_t l = L - 1; l-- > 0;)
    qt[l] = qt[l + 1] * (widths[l + 1] / widths[l]) * chi_per_layer[l];
  return qt;
}

std::vector<double> saliency_profile_theory(double chi, std::size_t L, double A) {
  if (!(chi > 0.0) || !(A > 0.0)) throw InvalidArgument("saliency_profile_theory: need chi, A > 0");
  std::vector<double> m(L);
  for (std::size_t l = 1; l <= L; ++l) m[l - 1] = A * std::pow(chi, static_cast<double>(L - l));
  return m;
}

double resnet_conditioning_theory(double sigma_w, std::size_t L, bool stable) {
  if (!(sigma_w > 0.0) || L == 0)
    throw InvalidArgument("resnet_conditioning_theory: need sigma_w > 0 and L >= 1");
  const double s2 = sigma_w * sigma_w;
  const auto Ld = static_cast<double>(L);
  if (!stable) return std::pow(1.0 + 0.5 * s2, Ld);
  return std::exp(Ld * std::log1p(0.5 * s2 / Ld)) / Ld;
}

BoundValue theorem1_bound(double kappa, double L, double N, LogBase base) {
  if (!(kappa > 0.0) || !(L >= 1.0) || !(N >= 1.0))
    throw InvalidArgument("theorem1_bound: need kappa > 0, L >= 1, N >= 1");
  const double arg = kappa * L * N * N;
  const double lg = base == LogBase::ten ? std::log10(arg) : std::log(arg);
  BoundValue b;
  b.value = (1.0 + lg / kappa) / L;
  b.vacuous = b.value > 1.0;
  return b;
}

namespace {

// log erfc(z) for large z from the asymptotic series.
double log_erfc_large(double z) {
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / (2.0 * z2) + 3.0 / (4.0 * z2 * z2) - 15.0 / (8.0 * z2 * z2 * z2);
  return -z2 - std::log(z * std::sqrt(std::numbers::pi)) + std::log(series);
}

// Quantile of |N(0,1)| at level 1 - exp(log_tail).
double folded_quantile_upper_log(double log_tail) {
  if (log_tail > -600.0) return gf::folded_quantile_upper(std::exp(log_tail));
  // P(|Z| > y) = erfc(y / sqrt 2); solve on a bracket where the series is accurate.
  double lo = 30.0, hi = 1e4;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (log_erfc_large(mid / std::numbers::sqrt2) > log_tail)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

MbpBound mbp_bound(double gamma, double zeta_l0, double N, double /*L*/, int epsilon_points,
                   int x_points) {
  if (!(gamma > 1.0)) throw InvalidArgument("mbp_bound: gamma must be > 1");
  if (!(zeta_l0 > 0.0) || !(N >= 1.0)) throw InvalidArgument("mbp_bound: need zeta > 0, N >= 1");
  if (epsilon_points < 1 || x_points < 2) throw InvalidArgument("mbp_bound: grids too small");

  std::vector<double> xs(x_points), qx(x_points);
  for (int i = 0; i < x_points; ++i) {
    xs[i] = static_cast<double>(i + 1) / (x_points + 1);
    qx[i] = gamma * gf::folded_quantile(xs[i]);
  }

  MbpBound best;
  best.value = std::numeric_limits<double>::infinity();
  for (int e = 0; e < epsilon_points; ++e) {
    const double eps =
        epsilon_points == 1 ? 1.0 : 0.01 + 1.98 * e / static_cast<double>(epsilon_points - 1);
    const double p = std::pow(gamma, 2.0 - eps);
    // x_eps: the infimum of y such that the inequality holds on all grid points above y.
    double x_eps = 0.0;
    bool holds_at_top = true;
    for (int i = x_points; i-- > 0;) {
      const double rhs = folded_quantile_upper_log(p * std::log1p(-xs[i]));
      if (!(qx[i] > rhs)) {
        if (i == x_points - 1) holds_at_top = false;
        x_eps = xs[i];
        break;
      }
    }
    if (!holds_at_top) continue;
    const double value =
        x_eps + zeta_l0 * N * N / (1.0 + p) * std::pow(1.0 - x_eps, 1.0 + p);
    if (value < best.value) {
      best.value = value;
      best.epsilon = eps;
      best.x_eps = x_eps;
    }
  }
  if (!std::isfinite(best.value))
    throw ConvergenceFailure("mbp_bound: inequality never holds on the x grid", best.value);
  best.vacuous = best.value > 1.0;
  return best;
}

std::vector<double> pruned_resnet_gap(double lambda, double c0, std::size_t L) {
  if (!(lambda > 0.0)) throw InvalidArgument("pruned_resnet_gap: lambda must be > 0");
  if (!(std::abs(c0) <= 1.0)) throw InvalidArgument("pruned_resnet_gap: |c0| must be <= 1");
  std::vector<double> gap(L + 1);
  gap[0] = 1.0 - c0;
  const double keep = 1.0 / (1.0 + lambda);
  const double mix = lambda / (1.0 + lambda);
  for (std::size_t l = 1; l <= L; ++l)
    gap[l] = keep * gap[l - 1] + mix * gf::relu_correlation_gap(gap[l - 1]);
  return gap;
}

DecayFit fit_decay(const std::vector<double>& x, const std::vector<double>& y, DecayLaw law) {
  if (x.size() != y.size() || x.size() < 2)
    throw InvalidArgument("fit_decay: need at least two matched points");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(y[i] > 0.0)) throw InvalidArgument("fit_decay: series must be positive in the window");
    if (law == DecayLaw::power && !(x[i] > 0.0))
      throw InvalidArgument("fit_decay: power law needs positive abscissae");
    const double u = law == DecayLaw::power ? std::log(x[i]) : x[i];
    const double v = std::log(y[i]);
    sx += u;
    sy += v;
    sxx += u * u;
    sxy += u * v;
    syy += v * v;
  }
  const double cov = sxy - sx * sy / n;
  const double vx = sxx - sx * sx / n;
  const double vy = syy - sy * sy / n;
  if (!(vx > 0.0)) throw InvalidArgument("fit_decay: abscissae are constant");
  DecayFit f;
  f.slope = cov / vx;
  f.intercept = (sy - f.slope * sx) / n;
  f.r2 = vy > 0.0 ? cov * cov / (vx * vy) : 1.0;
  return f;
}

DecayFit decay_exponent_fit(const std::vector<double>& series, std::size_t first, std::size_t last,
                            DecayLaw law) {
  if (last >= series.size() || first >= last)
    throw InvalidArgument("decay_exponent_fit: window out of range");
  std::vector<double> x, y;
  for (std::size_t i = first; i <= last; ++i) {
    x.push_back(static_cast<double>(i));
    y.push_back(series[i]);
  }
  return fit_decay(x, y, law);
}

double chaotic_correlation_limit(Activation act, const EdgePoint& edge) {
  if (!(edge.chi > 1.0)) throw InvalidArgument("chaotic_correlation_limit: edge is not chaotic");
  const double q = edge.q_star;
  // h(u) = u - gap'(u) is negative for small u (slope chi > 1) and >= 0 at u = 2.
  auto h = [&](double u) { return u - gf::correlation_gap_step(act, edge.sigma_b, edge.sigma_w, q, u); };
  double lo = 1e-10, hi = 2.0;
  if (h(lo) >= 0.0) throw BracketFailure("chaotic_correlation_limit: no sign change near c = 1");
  if (h(hi) < 0.0) throw BracketFailure("chaotic_correlation_limit: no sign change at c = -1");
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (h(mid) < 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 1.0 - 0.5 * (lo + hi);
}

}  // namespace edgeprune::meanfield

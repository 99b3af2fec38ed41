#include "edgeprune/kernels.hpp"

#include <omp.h>

#include <cstddef>
#include <cstring>

namespace edgeprune::kernels {

namespace {

using std::size_t;

inline double dot(const double* a, const double* b, size_t n) {
  double acc = 0.0;
#pragma omp simd reduction(+ : acc)
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy(double alpha, const double* x, double* y, size_t n) {
#pragma omp simd
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// y[a] += alpha * x[(a + shift) mod n], shift in (-n, n).
inline void circular_axpy(double alpha, const double* x, double* y, size_t n, std::ptrdiff_t shift) {
  const size_t s = static_cast<size_t>((shift % static_cast<std::ptrdiff_t>(n) + n) % n);
  axpy(alpha, x + s, y, n - s);
  axpy(alpha, x, y + (n - s), s);
}

inline double circular_dot(const double* a, const double* x, size_t n, std::ptrdiff_t shift) {
  const size_t s = static_cast<size_t>((shift % static_cast<std::ptrdiff_t>(n) + n) % n);
  return dot(a, x + s, n - s) + dot(a + (n - s), x, s);
}

void linear_forward_row(const LinearDims& d, const double* x, const double* w, const double* bias,
                        double* y, size_t b) {
  const double* xb = x + b * d.in;
  double* yb = y + b * d.out;
  size_t o = 0;
  for (; o + 4 <= d.out; o += 4) {
    const double* w0 = w + o * d.in;
    const double* w1 = w0 + d.in;
    const double* w2 = w1 + d.in;
    const double* w3 = w2 + d.in;
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
#pragma omp simd reduction(+ : a0, a1, a2, a3)
    for (size_t i = 0; i < d.in; ++i) {
      a0 += xb[i] * w0[i];
      a1 += xb[i] * w1[i];
      a2 += xb[i] * w2[i];
      a3 += xb[i] * w3[i];
    }
    yb[o] = (bias ? bias[o] : 0.0) + a0;
    yb[o + 1] = (bias ? bias[o + 1] : 0.0) + a1;
    yb[o + 2] = (bias ? bias[o + 2] : 0.0) + a2;
    yb[o + 3] = (bias ? bias[o + 3] : 0.0) + a3;
  }
  for (; o < d.out; ++o) yb[o] = (bias ? bias[o] : 0.0) + dot(xb, w + o * d.in, d.in);
}

void linear_backward_input_row(const LinearDims& d, const double* dy, const double* w, double* dx,
                               size_t b) {
  double* dxb = dx + b * d.in;
  std::memset(dxb, 0, d.in * sizeof(double));
  const double* dyb = dy + b * d.out;
  for (size_t o = 0; o < d.out; ++o) axpy(dyb[o], w + o * d.in, dxb, d.in);
}

void linear_backward_params_row(const LinearDims& d, const double* dy, const double* x, double* dw,
                                double* dbias, size_t o) {
  double* dwo = dw + o * d.in;
  double bsum = 0.0;
  for (size_t b = 0; b < d.batch; ++b) {
    const double g = dy[b * d.out + o];
    bsum += g;
    axpy(g, x + b * d.in, dwo, d.in);
  }
  if (dbias) dbias[o] += bsum;
}

// One (sample, output channel) plane.
void conv_forward_plane(const ConvDims& d, const double* x, const double* w, const double* bias,
                        double* y, size_t b, size_t o) {
  const size_t taps = d.taps();
  double* yp = y + (b * d.cout + o) * d.n;
  const double b0 = bias ? bias[o] : 0.0;
  for (size_t a = 0; a < d.n; ++a) yp[a] = b0;
  for (size_t c = 0; c < d.cin; ++c) {
    const double* xp = x + (b * d.cin + c) * d.n;
    const double* wp = w + (o * d.cin + c) * taps;
    for (size_t t = 0; t < taps; ++t)
      circular_axpy(wp[t], xp, yp, d.n, static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(d.k));
  }
}

// One (sample, input channel) plane of the input gradient.
void conv_backward_input_plane(const ConvDims& d, const double* dy, const double* w, double* dx,
                               size_t b, size_t c) {
  const size_t taps = d.taps();
  double* dxp = dx + (b * d.cin + c) * d.n;
  std::memset(dxp, 0, d.n * sizeof(double));
  for (size_t o = 0; o < d.cout; ++o) {
    const double* dyp = dy + (b * d.cout + o) * d.n;
    const double* wp = w + (o * d.cin + c) * taps;
    // dx[j] += w[t] dy[j - (t - k)]
    for (size_t t = 0; t < taps; ++t)
      circular_axpy(wp[t], dyp, dxp, d.n, static_cast<std::ptrdiff_t>(d.k) - static_cast<std::ptrdiff_t>(t));
  }
}

void conv_backward_params_channel(const ConvDims& d, const double* dy, const double* x, double* dw,
                                  double* dbias, size_t o) {
  const size_t taps = d.taps();
  double bsum = 0.0;
  for (size_t b = 0; b < d.batch; ++b) {
    const double* dyp = dy + (b * d.cout + o) * d.n;
    for (size_t a = 0; a < d.n; ++a) bsum += dyp[a];
    for (size_t c = 0; c < d.cin; ++c) {
      const double* xp = x + (b * d.cin + c) * d.n;
      double* dwp = dw + (o * d.cin + c) * taps;
      for (size_t t = 0; t < taps; ++t)
        dwp[t] += circular_dot(dyp, xp, d.n, static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(d.k));
    }
  }
  if (dbias) dbias[o] += bsum;
}

}  // namespace

namespace serial {

void linear_forward(const LinearDims& d, const double* x, const double* w, const double* bias,
                    double* y) {
  for (size_t b = 0; b < d.batch; ++b) linear_forward_row(d, x, w, bias, y, b);
}

void linear_backward_input(const LinearDims& d, const double* dy, const double* w, double* dx) {
  for (size_t b = 0; b < d.batch; ++b) linear_backward_input_row(d, dy, w, dx, b);
}

void linear_backward_params(const LinearDims& d, const double* dy, const double* x, double* dw,
                            double* dbias) {
  for (size_t o = 0; o < d.out; ++o) linear_backward_params_row(d, dy, x, dw, dbias, o);
}

void conv_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                  double* y) {
  for (size_t b = 0; b < d.batch; ++b)
    for (size_t o = 0; o < d.cout; ++o) conv_forward_plane(d, x, w, bias, y, b, o);
}

void conv_backward_input(const ConvDims& d, const double* dy, const double* w, double* dx) {
  for (size_t b = 0; b < d.batch; ++b)
    for (size_t c = 0; c < d.cin; ++c) conv_backward_input_plane(d, dy, w, dx, b, c);
}

void conv_backward_params(const ConvDims& d, const double* dy, const double* x, double* dw,
                          double* dbias) {
  for (size_t o = 0; o < d.cout; ++o) conv_backward_params_channel(d, dy, x, dw, dbias, o);
}

}  // namespace serial

namespace parallel {

void linear_forward(const LinearDims& d, const double* x, const double* w, const double* bias,
                    double* y) {
  const auto n = static_cast<std::ptrdiff_t>(d.batch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < n; ++b) linear_forward_row(d, x, w, bias, y, b);
}

void linear_backward_input(const LinearDims& d, const double* dy, const double* w, double* dx) {
  const auto n = static_cast<std::ptrdiff_t>(d.batch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < n; ++b) linear_backward_input_row(d, dy, w, dx, b);
}

void linear_backward_params(const LinearDims& d, const double* dy, const double* x, double* dw,
                            double* dbias) {
  const auto n = static_cast<std::ptrdiff_t>(d.out);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t o = 0; o < n; ++o) linear_backward_params_row(d, dy, x, dw, dbias, o);
}

void conv_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                  double* y) {
  const auto n = static_cast<std::ptrdiff_t>(d.batch * d.cout);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) conv_forward_plane(d, x, w, bias, y, i / d.cout, i % d.cout);
}

void conv_backward_input(const ConvDims& d, const double* dy, const double* w, double* dx) {
  const auto n = static_cast<std::ptrdiff_t>(d.batch * d.cin);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    conv_backward_input_plane(d, dy, w, dx, i / d.cin, i % d.cin);
}

void conv_backward_params(const ConvDims& d, const double* dy, const double* x, double* dw,
                          double* dbias) {
  const auto n = static_cast<std::ptrdiff_t>(d.cout);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t o = 0; o < n; ++o) conv_backward_params_channel(d, dy, x, dw, dbias, o);
}

}  // namespace parallel

void set_threads(int n) {
  omp_set_num_threads(n > 0 ? n : omp_get_num_procs());
}

int threads() { return omp_get_max_threads(); }

}  // namespace edgeprune::kernels

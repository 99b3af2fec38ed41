#pragma once

// Dense and circular-convolution kernels used by the network engine. Each
// kernel exists in a serial reference form and an OpenMP form; both split the
// work by output rows and run the same per-row code, so results are bitwise
// identical for any thread count.

#include <cstddef>

namespace edgeprune::kernels {

struct LinearDims {
  std::size_t batch, in, out;
};

/// Circular 1D convolution: x is batch x cin x n, w is cout x cin x (2k+1).
struct ConvDims {
  std::size_t batch, cin, cout, n, k;
  std::size_t taps() const noexcept { return 2 * k + 1; }
};

namespace serial {
// y[b,o] = sum_i x[b,i] w[o,i] + bias[o]; bias may be null.
void linear_forward(const LinearDims& d, const double* x, const double* w, const double* bias,
                    double* y);
// dx[b,i] = sum_o dy[b,o] w[o,i]
void linear_backward_input(const LinearDims& d, const double* dy, const double* w, double* dx);
// dw[o,i] += sum_b dy[b,o] x[b,i]; dbias[o] += sum_b dy[b,o]; dbias may be null.
void linear_backward_params(const LinearDims& d, const double* dy, const double* x, double* dw,
                            double* dbias);
// y[b,o,a] = sum_{c,t} w[o,c,t] x[b,c,(a+t-k) mod n] + bias[o]
void conv_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                  double* y);
void conv_backward_input(const ConvDims& d, const double* dy, const double* w, double* dx);
void conv_backward_params(const ConvDims& d, const double* dy, const double* x, double* dw,
                          double* dbias);
}  // namespace serial

namespace parallel {
void linear_forward(const LinearDims& d, const double* x, const double* w, const double* bias,
                    double* y);
void linear_backward_input(const LinearDims& d, const double* dy, const double* w, double* dx);
void linear_backward_params(const LinearDims& d, const double* dy, const double* x, double* dw,
                            double* dbias);
void conv_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                  double* y);
void conv_backward_input(const ConvDims& d, const double* dy, const double* w, double* dx);
void conv_backward_params(const ConvDims& d, const double* dy, const double* x, double* dw,
                          double* dbias);
}  // namespace parallel

/// Thread count for the parallel kernels (0 restores the OpenMP default).
void set_threads(int n);
int threads();

}  // namespace edgeprune::kernels

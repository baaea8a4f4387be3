#pragma once

// Dense compute kernels behind the autodiff ops. The default entry points
// parallelize over independent output rows/channels with OpenMP, so every
// output element is produced by exactly one thread with a fixed summation
// order and results do not depend on the thread count. `reference::` holds
// naive serial versions used by the tests and the benchmark.

namespace lsm::kernels {

// c[m,n] (+)= a[m,k] * b[k,n]
void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
// c[m,n] (+)= a[m,k] * b[n,k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
// c[m,n] (+)= a[k,m]^T * b[k,n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);

struct ConvGeometry {
    int in_channels = 1;
    int in_h = 1;
    int in_w = 1;
    int out_channels = 1;
    int kernel = 1;
    int stride = 1;
    int pad = 0;

    int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

// y[o,:,:] = b[o] + sum_c w[o,c,:,:] (*) x[c,:,:]   (cross-correlation, zero padding)
void conv2d_forward(const double* x, const double* w, const double* b, double* y, const ConvGeometry& g);
// gx += conv2d^T(gy)
void conv2d_backward_input(const double* gy, const double* w, double* gx, const ConvGeometry& g);
// gw += d/dw, gb += d/db (gb may be null)
void conv2d_backward_weight(const double* x, const double* gy, double* gw, double* gb, const ConvGeometry& g);

// Transposed convolution with kernel == stride and no padding (non-overlapping
// upsampling). w is [in_channels, out_channels, k, k]; output is
// [out_channels, in_h*k, in_w*k].
void conv_transpose2d_forward(const double* x, const double* w, const double* b, double* y, const ConvGeometry& g);
void conv_transpose2d_backward_input(const double* gy, const double* w, double* gx, const ConvGeometry& g);
void conv_transpose2d_backward_weight(const double* x, const double* gy, double* gw, double* gb,
                                      const ConvGeometry& g);

namespace reference {

void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void conv2d_forward(const double* x, const double* w, const double* b, double* y, const ConvGeometry& g);
void conv2d_backward_input(const double* gy, const double* w, double* gx, const ConvGeometry& g);
void conv2d_backward_weight(const double* x, const double* gy, double* gw, double* gb, const ConvGeometry& g);
void conv_transpose2d_forward(const double* x, const double* w, const double* b, double* y, const ConvGeometry& g);
void conv_transpose2d_backward_input(const double* gy, const double* w, double* gx, const ConvGeometry& g);
void conv_transpose2d_backward_weight(const double* x, const double* gy, double* gw, double* gb,
                                      const ConvGeometry& g);

} // namespace reference

} // namespace lsm::kernels

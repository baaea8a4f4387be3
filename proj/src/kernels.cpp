#include "lsm/kernels.hpp"

#include <algorithm>
#include <cstddef>

namespace lsm::kernels {

namespace {

constexpr long kParallelThreshold = 1L << 15;

// Output columns ox with 0 <= ox*stride + offset < limit.
inline void valid_range(int offset, int stride, int limit, int out_extent, int& lo, int& hi) {
    lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
    hi = limit - offset <= 0 ? 0 : (limit - offset - 1) / stride + 1;
    hi = std::min(hi, out_extent);
    if (lo > hi) lo = hi;
}

} // namespace

void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<std::ptrdiff_t>(i) * n;
        if (!accumulate) std::fill(ci, ci + n, 0.0);
        const double* ai = a + static_cast<std::ptrdiff_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<std::ptrdiff_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::ptrdiff_t>(i) * k;
        double* ci = c + static_cast<std::ptrdiff_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<std::ptrdiff_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + s : s;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<std::ptrdiff_t>(i) * n;
        if (!accumulate) std::fill(ci, ci + n, 0.0);
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<std::ptrdiff_t>(p) * m + i];
            const double* bp = b + static_cast<std::ptrdiff_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void conv2d_forward(const double* x, const double* w, const double* b, double* y, const ConvGeometry& g) {
    const int oh = g.out_h(), ow = g.out_w();
    const int k = g.kernel, s = g.stride;
    const std::ptrdiff_t in_plane = static_cast<std::ptrdiff_t>(g.in_h) * g.in_w;
    const std::ptrdiff_t out_plane = static_cast<std::ptrdiff_t>(oh) * ow;
    const long work = static_cast<long>(g.out_channels) * g.in_channels * k * k * out_plane;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int o = 0; o < g.out_channels; ++o) {
        double* yo = y + o * out_plane;
        std::fill(yo, yo + out_plane, b ? b[o] : 0.0);
        for (int c = 0; c < g.in_channels; ++c) {
            const double* xc = x + c * in_plane;
            for (int ky = 0; ky < k; ++ky) {
                int oy0, oy1;
                valid_range(ky - g.pad, s, g.in_h, oh, oy0, oy1);
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = w[((static_cast<std::ptrdiff_t>(o) * g.in_channels + c) * k + ky) * k + kx];
                    int ox0, ox1;
                    valid_range(kx - g.pad, s, g.in_w, ow, ox0, ox1);
                    for (int oy = oy0; oy < oy1; ++oy) {
                        const double* xrow = xc + static_cast<std::ptrdiff_t>(oy * s + ky - g.pad) * g.in_w;
                        double* yrow = yo + static_cast<std::ptrdiff_t>(oy) * ow;
                        if (s == 1) {
                            const double* xs = xrow + kx - g.pad;
                            for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xs[ox];
                        } else {
                            for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xrow[ox * s + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const double* gy, const double* w, double* gx, const ConvGeometry& g) {
    const int oh = g.out_h(), ow = g.out_w();
    const int k = g.kernel, s = g.stride;
    const std::ptrdiff_t in_plane = static_cast<std::ptrdiff_t>(g.in_h) * g.in_w;
    const std::ptrdiff_t out_plane = static_cast<std::ptrdiff_t>(oh) * ow;
    const long work = static_cast<long>(g.out_channels) * g.in_channels * k * k * out_plane;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int c = 0; c < g.in_channels; ++c) {
        double* gxc = gx + c * in_plane;
        for (int o = 0; o < g.out_channels; ++o) {
            const double* gyo = gy + o * out_plane;
            for (int ky = 0; ky < k; ++ky) {
                int oy0, oy1;
                valid_range(ky - g.pad, s, g.in_h, oh, oy0, oy1);
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = w[((static_cast<std::ptrdiff_t>(o) * g.in_channels + c) * k + ky) * k + kx];
                    int ox0, ox1;
                    valid_range(kx - g.pad, s, g.in_w, ow, ox0, ox1);
                    for (int oy = oy0; oy < oy1; ++oy) {
                        double* xrow = gxc + static_cast<std::ptrdiff_t>(oy * s + ky - g.pad) * g.in_w;
                        const double* yrow = gyo + static_cast<std::ptrdiff_t>(oy) * ow;
                        if (s == 1) {
                            double* xs = xrow + kx - g.pad;
                            for (int ox = ox0; ox < ox1; ++ox) xs[ox] += wv * yrow[ox];
                        } else {
                            for (int ox = ox0; ox < ox1; ++ox) xrow[ox * s + kx - g.pad] += wv * yrow[ox];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const double* x, const double* gy, double* gw, double* gb, const ConvGeometry& g) {
    const int oh = g.out_h(), ow = g.out_w();
    const int k = g.kernel, s = g.stride;
    const std::ptrdiff_t in_plane = static_cast<std::ptrdiff_t>(g.in_h) * g.in_w;
    const std::ptrdiff_t out_plane = static_cast<std::ptrdiff_t>(oh) * ow;
    const long work = static_cast<long>(g.out_channels) * g.in_channels * k * k * out_plane;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int o = 0; o < g.out_channels; ++o) {
        const double* gyo = gy + o * out_plane;
        if (gb) {
            double sb = 0.0;
            for (std::ptrdiff_t i = 0; i < out_plane; ++i) sb += gyo[i];
            gb[o] += sb;
        }
        for (int c = 0; c < g.in_channels; ++c) {
            const double* xc = x + c * in_plane;
            for (int ky = 0; ky < k; ++ky) {
                int oy0, oy1;
                valid_range(ky - g.pad, s, g.in_h, oh, oy0, oy1);
                for (int kx = 0; kx < k; ++kx) {
                    int ox0, ox1;
                    valid_range(kx - g.pad, s, g.in_w, ow, ox0, ox1);
                    double acc = 0.0;
                    for (int oy = oy0; oy < oy1; ++oy) {
                        const double* xrow = xc + static_cast<std::ptrdiff_t>(oy * s + ky - g.pad) * g.in_w;
                        const double* yrow = gyo + static_cast<std::ptrdiff_t>(oy) * ow;
                        if (s == 1) {
                            const double* xs = xrow + kx - g.pad;
                            for (int ox = ox0; ox < ox1; ++ox) acc += yrow[ox] * xs[ox];
                        } else {
                            for (int ox = ox0; ox < ox1; ++ox) acc += yrow[ox] * xrow[ox * s + kx - g.pad];
                        }
                    }
                    gw[((static_cast<std::ptrdiff_t>(o) * g.in_channels + c) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
}

void conv_transpose2d_forward(const double* x, const double* w, const double* b, double* y,
                              const ConvGeometry& g) {
    const int k = g.kernel;
    const int oh = g.in_h * k, ow = g.in_w * k;
    const std::ptrdiff_t in_plane = static_cast<std::ptrdiff_t>(g.in_h) * g.in_w;
    const std::ptrdiff_t out_plane = static_cast<std::ptrdiff_t>(oh) * ow;
    const long work = static_cast<long>(g.out_channels) * g.in_channels * out_plane;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int o = 0; o < g.out_channels; ++o) {
        double* yo = y + o * out_plane;
        std::fill(yo, yo + out_plane, b ? b[o] : 0.0);
        for (int c = 0; c < g.in_channels; ++c) {
            const double* xc = x + c * in_plane;
            const double* wco = w + (static_cast<std::ptrdiff_t>(c) * g.out_channels + o) * k * k;
            for (int iy = 0; iy < g.in_h; ++iy) {
                for (int ky = 0; ky < k; ++ky) {
                    double* yrow = yo + static_cast<std::ptrdiff_t>(iy * k + ky) * ow;
                    const double* xrow = xc + static_cast<std::ptrdiff_t>(iy) * g.in_w;
                    for (int ix = 0; ix < g.in_w; ++ix) {
                        const double xv = xrow[ix];
                        for (int kx = 0; kx < k; ++kx) yrow[ix * k + kx] += xv * wco[ky * k + kx];
                    }
                }
            }
        }
    }
}

void conv_transpose2d_backward_input(const double* gy, const double* w, double* gx, const ConvGeometry& g) {
    const int k = g.kernel;
    const int oh = g.in_h * k, ow = g.in_w * k;
    const std::ptrdiff_t in_plane = static_cast<std::ptrdiff_t>(g.in_h) * g.in_w;
    const std::ptrdiff_t out_plane = static_cast<std::ptrdiff_t>(oh) * ow;
    const long work = static_cast<long>(g.out_channels) * g.in_channels * out_plane;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int c = 0; c < g.in_channels; ++c) {
        double* gxc = gx + c * in_plane;
        for (int o = 0; o < g.out_channels; ++o) {
            const double* gyo = gy + o * out_plane;
            const double* wco = w + (static_cast<std::ptrdiff_t>(c) * g.out_channels + o) * k * k;
            for (int iy = 0; iy < g.in_h; ++iy) {
                double* gxrow = gxc + static_cast<std::ptrdiff_t>(iy) * g.in_w;
                for (int ky = 0; ky < k; ++ky) {
                    const double* yrow = gyo + static_cast<std::ptrdiff_t>(iy * k + ky) * ow;
                    for (int ix = 0; ix < g.in_w; ++ix) {
                        double acc = 0.0;
                        for (int kx = 0; kx < k; ++kx) acc += yrow[ix * k + kx] * wco[ky * k + kx];
                        gxrow[ix] += acc;
                    }
                }
            }
        }
    }
}

void conv_transpose2d_backward_weight(const double* x, const double* gy, double* gw, double* gb,
                                      const ConvGeometry& g) {
    const int k = g.kernel;
    const int oh = g.in_h * k, ow = g.in_w * k;
    const std::ptrdiff_t in_plane = static_cast<std::ptrdiff_t>(g.in_h) * g.in_w;
    const std::ptrdiff_t out_plane = static_cast<std::ptrdiff_t>(oh) * ow;
    const long work = static_cast<long>(g.out_channels) * g.in_channels * out_plane;
    if (gb) {
        for (int o = 0; o < g.out_channels; ++o) {
            double sb = 0.0;
            for (std::ptrdiff_t i = 0; i < out_plane; ++i) sb += gy[o * out_plane + i];
            gb[o] += sb;
        }
    }
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int c = 0; c < g.in_channels; ++c) {
        const double* xc = x + c * in_plane;
        for (int o = 0; o < g.out_channels; ++o) {
            const double* gyo = gy + o * out_plane;
            double* gwco = gw + (static_cast<std::ptrdiff_t>(c) * g.out_channels + o) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    double acc = 0.0;
                    for (int iy = 0; iy < g.in_h; ++iy) {
                        const double* yrow = gyo + static_cast<std::ptrdiff_t>(iy * k + ky) * ow;
                        const double* xrow = xc + static_cast<std::ptrdiff_t>(iy) * g.in_w;
                        for (int ix = 0; ix < g.in_w; ++ix) acc += xrow[ix] * yrow[ix * k + kx];
                    }
                    gwco[ky * k + kx] += acc;
                }
            }
        }
    }
}

namespace reference {

void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
}

namespace {

inline double in_at(const double* x, const ConvGeometry& g, int c, int iy, int ix) {
    if (iy < 0 || ix < 0 || iy >= g.in_h || ix >= g.in_w) return 0.0;
    return x[(static_cast<std::ptrdiff_t>(c) * g.in_h + iy) * g.in_w + ix];
}

inline std::ptrdiff_t widx(const ConvGeometry& g, int o, int c, int ky, int kx) {
    return ((static_cast<std::ptrdiff_t>(o) * g.in_channels + c) * g.kernel + ky) * g.kernel + kx;
}

} // namespace

void conv2d_forward(const double* x, const double* w, const double* b, double* y, const ConvGeometry& g) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int o = 0; o < g.out_channels; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double s = b ? b[o] : 0.0;
                for (int c = 0; c < g.in_channels; ++c)
                    for (int ky = 0; ky < g.kernel; ++ky)
                        for (int kx = 0; kx < g.kernel; ++kx)
                            s += w[widx(g, o, c, ky, kx)] *
                                 in_at(x, g, c, oy * g.stride + ky - g.pad, ox * g.stride + kx - g.pad);
                y[(static_cast<std::ptrdiff_t>(o) * oh + oy) * ow + ox] = s;
            }
}

void conv2d_backward_input(const double* gy, const double* w, double* gx, const ConvGeometry& g) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int o = 0; o < g.out_channels; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const double gv = gy[(static_cast<std::ptrdiff_t>(o) * oh + oy) * ow + ox];
                for (int c = 0; c < g.in_channels; ++c)
                    for (int ky = 0; ky < g.kernel; ++ky)
                        for (int kx = 0; kx < g.kernel; ++kx) {
                            const int iy = oy * g.stride + ky - g.pad;
                            const int ix = ox * g.stride + kx - g.pad;
                            if (iy < 0 || ix < 0 || iy >= g.in_h || ix >= g.in_w) continue;
                            gx[(static_cast<std::ptrdiff_t>(c) * g.in_h + iy) * g.in_w + ix] +=
                                gv * w[widx(g, o, c, ky, kx)];
                        }
            }
}

void conv2d_backward_weight(const double* x, const double* gy, double* gw, double* gb, const ConvGeometry& g) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int o = 0; o < g.out_channels; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const double gv = gy[(static_cast<std::ptrdiff_t>(o) * oh + oy) * ow + ox];
                if (gb) gb[o] += gv;
                for (int c = 0; c < g.in_channels; ++c)
                    for (int ky = 0; ky < g.kernel; ++ky)
                        for (int kx = 0; kx < g.kernel; ++kx)
                            gw[widx(g, o, c, ky, kx)] +=
                                gv * in_at(x, g, c, oy * g.stride + ky - g.pad, ox * g.stride + kx - g.pad);
            }
}

void conv_transpose2d_forward(const double* x, const double* w, const double* b, double* y,
                              const ConvGeometry& g) {
    const int k = g.kernel, oh = g.in_h * k, ow = g.in_w * k;
    for (int o = 0; o < g.out_channels; ++o)
        for (int py = 0; py < oh; ++py)
            for (int px = 0; px < ow; ++px) {
                const int iy = py / k, ix = px / k, ky = py % k, kx = px % k;
                double s = b ? b[o] : 0.0;
                for (int c = 0; c < g.in_channels; ++c)
                    s += x[(static_cast<std::ptrdiff_t>(c) * g.in_h + iy) * g.in_w + ix] *
                         w[((static_cast<std::ptrdiff_t>(c) * g.out_channels + o) * k + ky) * k + kx];
                y[(static_cast<std::ptrdiff_t>(o) * oh + py) * ow + px] = s;
            }
}

void conv_transpose2d_backward_input(const double* gy, const double* w, double* gx, const ConvGeometry& g) {
    const int k = g.kernel, oh = g.in_h * k, ow = g.in_w * k;
    for (int o = 0; o < g.out_channels; ++o)
        for (int py = 0; py < oh; ++py)
            for (int px = 0; px < ow; ++px) {
                const int iy = py / k, ix = px / k, ky = py % k, kx = px % k;
                const double gv = gy[(static_cast<std::ptrdiff_t>(o) * oh + py) * ow + px];
                for (int c = 0; c < g.in_channels; ++c)
                    gx[(static_cast<std::ptrdiff_t>(c) * g.in_h + iy) * g.in_w + ix] +=
                        gv * w[((static_cast<std::ptrdiff_t>(c) * g.out_channels + o) * k + ky) * k + kx];
            }
}

void conv_transpose2d_backward_weight(const double* x, const double* gy, double* gw, double* gb,
                                      const ConvGeometry& g) {
    const int k = g.kernel, oh = g.in_h * k, ow = g.in_w * k;
    for (int o = 0; o < g.out_channels; ++o)
        for (int py = 0; py < oh; ++py)
            for (int px = 0; px < ow; ++px) {
                const int iy = py / k, ix = px / k, ky = py % k, kx = px % k;
                const double gv = gy[(static_cast<std::ptrdiff_t>(o) * oh + py) * ow + px];
                if (gb) gb[o] += gv;
                for (int c = 0; c < g.in_channels; ++c)
                    gw[((static_cast<std::ptrdiff_t>(c) * g.out_channels + o) * k + ky) * k + kx] +=
                        gv * x[(static_cast<std::ptrdiff_t>(c) * g.in_h + iy) * g.in_w + ix];
            }
}

} // namespace reference

} // namespace lsm::kernels

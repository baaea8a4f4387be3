#include "lsm/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lsm/error.hpp"

namespace lsm::imaging {

namespace {

using cd = std::complex<double>;

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

void fft_radix2(cd* a, int n, bool inverse) {
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * std::numbers::pi / len * (inverse ? 1.0 : -1.0);
        for (int i = 0; i < n; i += len) {
            for (int k = 0; k < len / 2; ++k) {
                const cd w(std::cos(ang * k), std::sin(ang * k));
                const cd u = a[i + k];
                const cd v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

void dft_direct(cd* a, int n, bool inverse, std::vector<cd>& scratch) {
    scratch.assign(static_cast<std::size_t>(n), cd(0.0, 0.0));
    const double sign = inverse ? 1.0 : -1.0;
    for (int k = 0; k < n; ++k) {
        cd s(0.0, 0.0);
        for (int t = 0; t < n; ++t) {
            const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * t) % n) / n;
            s += a[t] * cd(std::cos(ang), std::sin(ang));
        }
        scratch[static_cast<std::size_t>(k)] = s;
    }
    std::copy(scratch.begin(), scratch.end(), a);
}

void transform_1d(cd* a, int n, bool inverse, std::vector<cd>& scratch) {
    if (is_power_of_two(n))
        fft_radix2(a, n, inverse);
    else
        dft_direct(a, n, inverse, scratch);
}

void check_field(const Tensor& t) {
    require(t.rank() == 2 && t.dim(0) >= 2 && t.dim(1) >= 2, ErrorCode::ShapeMismatch,
            "expected a 2-D field of at least 2x2, got " + shape_string(t.shape));
}

Spectrum to_polar(const ComplexGrid& grid, int h, int w) {
    Spectrum s;
    s.height = h;
    s.width = w;
    s.amplitude.resize(grid.size());
    s.phase.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        s.amplitude[i] = std::abs(grid[i]);
        double ph = std::arg(grid[i]);
        if (ph <= -std::numbers::pi) ph = std::numbers::pi;
        s.phase[i] = ph;
    }
    return s;
}

RealField real_part(const ComplexGrid& grid, int h, int w) {
    RealField out{Tensor({h, w}), 0.0};
    for (std::size_t i = 0; i < grid.size(); ++i) {
        out.values[i] = grid[i].real();
        out.max_imag_residue = std::max(out.max_imag_residue, std::abs(grid[i].imag()));
    }
    return out;
}

ComplexGrid to_complex(const Tensor& field) {
    ComplexGrid g(field.size());
    for (std::size_t i = 0; i < field.size(); ++i) g[i] = cd(field[i], 0.0);
    return g;
}

} // namespace

Image::Image(Tensor pixels) : pixels_(std::move(pixels)) {
    require(pixels_.rank() == 2 && pixels_.dim(0) >= 2 && pixels_.dim(1) >= 2, ErrorCode::InvalidArgument,
            "image must be at least 2x2, got " + shape_string(pixels_.shape));
    for (double v : pixels_.data)
        require(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorCode::InvalidArgument,
                "image values must be finite and within [0, 1]");
}

Image::Image(int height, int width, std::vector<double> values) : Image(Tensor({height, width}, std::move(values))) {}

Image Image::flipped_horizontally() const {
    Tensor out = pixels_;
    const int h = height(), w = width();
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = pixels_.at(r, w - 1 - c);
    return Image(std::move(out));
}

void dft2_inplace(ComplexGrid& grid, int height, int width, bool inverse) {
    require(grid.size() == static_cast<std::size_t>(height) * width, ErrorCode::ShapeMismatch, "dft2 grid size");
#pragma omp parallel if (height * width >= 4096)
    {
        std::vector<cd> scratch;
#pragma omp for schedule(static)
        for (int r = 0; r < height; ++r)
            transform_1d(grid.data() + static_cast<std::ptrdiff_t>(r) * width, width, inverse, scratch);
    }
#pragma omp parallel if (height * width >= 4096)
    {
        std::vector<cd> column(static_cast<std::size_t>(height));
        std::vector<cd> scratch;
#pragma omp for schedule(static)
        for (int c = 0; c < width; ++c) {
            for (int r = 0; r < height; ++r) column[static_cast<std::size_t>(r)] = grid[static_cast<std::size_t>(r) * width + c];
            transform_1d(column.data(), height, inverse, scratch);
            for (int r = 0; r < height; ++r) grid[static_cast<std::size_t>(r) * width + c] = column[static_cast<std::size_t>(r)];
        }
    }
    if (inverse) {
        const double inv = 1.0 / (static_cast<double>(height) * width);
        for (cd& v : grid) v *= inv;
    }
}

Image equalize_histogram(const Image& img, int levels) {
    require(levels >= 2, ErrorCode::InvalidArgument, "levels must be >= 2");
    const Tensor& px = img.pixels();
    const std::size_t n = px.size();
    std::vector<int> q(n);
    std::vector<long> hist(static_cast<std::size_t>(levels), 0);
    for (std::size_t i = 0; i < n; ++i) {
        q[i] = static_cast<int>(std::lround(px[i] * (levels - 1)));
        ++hist[static_cast<std::size_t>(q[i])];
    }
    std::vector<double> cdf(static_cast<std::size_t>(levels));
    long running = 0;
    double cdf_min = -1.0;
    for (int l = 0; l < levels; ++l) {
        running += hist[static_cast<std::size_t>(l)];
        cdf[static_cast<std::size_t>(l)] = static_cast<double>(running) / static_cast<double>(n);
        if (cdf_min < 0.0 && hist[static_cast<std::size_t>(l)] > 0) cdf_min = cdf[static_cast<std::size_t>(l)];
    }
    // A single occupied level has a degenerate CDF; leave the image alone.
    if (cdf_min >= 1.0) return img;
    Tensor out({img.height(), img.width()});
    for (std::size_t i = 0; i < n; ++i) {
        const double v = (cdf[static_cast<std::size_t>(q[i])] - cdf_min) / (1.0 - cdf_min);
        out[i] = std::clamp(v, 0.0, 1.0);
    }
    return Image(std::move(out));
}

Spectrum fft2(const Tensor& field) {
    check_field(field);
    ComplexGrid g = to_complex(field);
    dft2_inplace(g, field.dim(0), field.dim(1), false);
    return to_polar(g, field.dim(0), field.dim(1));
}

Spectrum fft2(const Image& img) { return fft2(img.pixels()); }

RealField ifft2(const Spectrum& spec) {
    require(spec.amplitude.size() == static_cast<std::size_t>(spec.height) * spec.width &&
                spec.phase.size() == spec.amplitude.size(),
            ErrorCode::ShapeMismatch, "spectrum arrays do not match its extent");
    ComplexGrid g(spec.amplitude.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::polar(spec.amplitude[i], spec.phase[i]);
    dft2_inplace(g, spec.height, spec.width, true);
    return real_part(g, spec.height, spec.width);
}

RealField amplitude_only_reconstruct(const Image& img) {
    Spectrum s = fft2(img);
    std::fill(s.phase.begin(), s.phase.end(), 0.0);
    return ifft2(s);
}

Tensor high_pass_filter(const Image& img, double cutoff_ratio) {
    require(cutoff_ratio >= 0.0 && cutoff_ratio < 1.0, ErrorCode::InvalidArgument, "cutoff_ratio must be in [0, 1)");
    const int h = img.height(), w = img.width();
    ComplexGrid g = to_complex(img.pixels());
    dft2_inplace(g, h, w, false);
    const double radius = cutoff_ratio * std::min(h, w) / 2.0;
    for (int u = 0; u < h; ++u) {
        const int fu = u <= h / 2 ? u : u - h;
        for (int v = 0; v < w; ++v) {
            const int fv = v <= w / 2 ? v : v - w;
            if (std::sqrt(static_cast<double>(fu * fu + fv * fv)) < radius)
                g[static_cast<std::size_t>(u) * w + v] = cd(0.0, 0.0);
        }
    }
    dft2_inplace(g, h, w, true);
    return real_part(g, h, w).values;
}

Tensor min_max_normalize(const Tensor& field) {
    Tensor out = Tensor::zeros_like(field);
    if (field.empty()) return out;
    const auto [lo, hi] = std::minmax_element(field.data.begin(), field.data.end());
    const double range = *hi - *lo;
    if (!(range > 1e-12)) return out;
    for (std::size_t i = 0; i < field.size(); ++i) out[i] = (field[i] - *lo) / range;
    return out;
}

} // namespace lsm::imaging

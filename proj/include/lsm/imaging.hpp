#pragma once

#include <complex>
#include <vector>

#include "lsm/tensor.hpp"

namespace lsm::imaging {

/// Grayscale image with values in [0, 1], at least 2x2.
class Image {
public:
    Image() = default;
    /// Throws InvalidArgument when the invariants do not hold.
    explicit Image(Tensor pixels);
    Image(int height, int width, std::vector<double> values);

    int height() const { return pixels_.dim(0); }
    int width() const { return pixels_.dim(1); }
    double at(int r, int c) const { return pixels_.at(r, c); }
    const Tensor& pixels() const { return pixels_; }

    Image flipped_horizontally() const;

private:
    Tensor pixels_;
};

/// Polar form of a 2-D DFT: F(u,v) = amplitude * exp(i * phase).
struct Spectrum {
    int height = 0;
    int width = 0;
    std::vector<double> amplitude; // row-major, >= 0
    std::vector<double> phase;     // row-major, in (-pi, pi]

    double amplitude_at(int u, int v) const { return amplitude[static_cast<std::size_t>(u) * width + v]; }
    double phase_at(int u, int v) const { return phase[static_cast<std::size_t>(u) * width + v]; }
};

/// Real part of an inverse transform plus the largest |imaginary| part that was discarded.
struct RealField {
    Tensor values; // [H, W]
    double max_imag_residue = 0.0;
};

using ComplexGrid = std::vector<std::complex<double>>;

/// In-place 2-D DFT of a row-major grid. Forward is unnormalized; inverse divides by H*W.
void dft2_inplace(ComplexGrid& grid, int height, int width, bool inverse);

Image equalize_histogram(const Image& img, int levels = 256);

Spectrum fft2(const Image& img);
Spectrum fft2(const Tensor& field);
RealField ifft2(const Spectrum& spec);

/// Inverse transform of the spectrum with all phases set to zero.
RealField amplitude_only_reconstruct(const Image& img);

/// Ideal radial high-pass: bins with centered radius < cutoff_ratio * min(H, W) / 2
/// are removed. cutoff_ratio == 0 keeps every bin.
Tensor high_pass_filter(const Image& img, double cutoff_ratio = 0.25);

/// Maps a field linearly onto [0, 1]; a constant field maps to all zeros.
Tensor min_max_normalize(const Tensor& field);

} // namespace lsm::imaging

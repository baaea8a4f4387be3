#include <algorithm>
#include <map>

#include "doctest.h"
#include "lsm/error.hpp"
#include "lsm/imaging.hpp"
#include "support.hpp"

using namespace lsm;
using namespace lsm::imaging;
using testing::brute_dft2;
using testing::cd;

namespace {

Image random_image(int h, int w, std::mt19937_64& rng) {
    return Image(testing::random_tensor({h, w}, rng, 0.0, 1.0));
}

Image tone(int h, int w, bool sine, int freq = 1) {
    Tensor t({h, w});
    for (int x = 0; x < h; ++x)
        for (int y = 0; y < w; ++y) {
            const double a = 2.0 * std::numbers::pi * freq * x / h;
            t.at(x, y) = 0.5 + 0.5 * (sine ? std::sin(a) : std::cos(a));
        }
    return Image(t);
}

// Raw cosine/sine without the offset, as a field.
Tensor raw_tone(int h, int w, bool sine) {
    Tensor t({h, w});
    for (int x = 0; x < h; ++x)
        for (int y = 0; y < w; ++y) {
            const double a = 2.0 * std::numbers::pi * x / h;
            t.at(x, y) = sine ? std::sin(a) : std::cos(a);
        }
    return t;
}

// fft -> zero phase -> inverse, all by brute force.
Tensor oracle_amplitude_only(const Tensor& field) {
    auto spec = brute_dft2(field);
    for (cd& v : spec) v = cd(std::abs(v), 0.0);
    auto back = brute_dft2(spec, field.dim(0), field.dim(1), true);
    Tensor out(field.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = back[i].real();
    return out;
}

Image circular_shift(const Image& img, int dr, int dc) {
    const int h = img.height(), w = img.width();
    Tensor t({h, w});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) t.at((r + dr) % h, (c + dc) % w) = img.at(r, c);
    return Image(t);
}

} // namespace

TEST_CASE("image invariants are enforced") {
    CHECK_THROWS_AS(Image(1, 3, {0, 0, 0}), Error);
    CHECK_THROWS_AS(Image(2, 2, {0, 0, 0, 1.5}), Error);
    CHECK_THROWS_AS(Image(2, 2, {0, 0, 0, std::nan("")}), Error);
    CHECK_NOTHROW(Image(2, 2, {0, 0.5, 1, 0.25}));
}

TEST_CASE("fft2 of a constant image is DC only") {
    const double c = 0.3;
    Spectrum s = fft2(Image(Tensor({6, 8}, c)));
    CHECK(s.amplitude_at(0, 0) == doctest::Approx(c * 48).epsilon(1e-12));
    CHECK(s.phase_at(0, 0) == 0.0);
    for (std::size_t i = 1; i < s.amplitude.size(); ++i) CHECK(s.amplitude[i] < 1e-12);
}

TEST_CASE("fft2 of a cosine has two bins of H*W/2") {
    const int h = 8, w = 8;
    Spectrum s = fft2(raw_tone(h, w, false));
    auto oracle = brute_dft2(raw_tone(h, w, false));
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            const bool peak = v == 0 && (u == 1 || u == h - 1);
            CHECK(s.amplitude_at(u, v) == doctest::Approx(peak ? h * w / 2.0 : 0.0).epsilon(1e-12));
            CHECK(std::abs(s.amplitude_at(u, v) - std::abs(oracle[static_cast<std::size_t>(u) * w + v])) < 1e-9);
        }
}

TEST_CASE("fft2 matches the brute force DFT per bin") {
    std::mt19937_64 rng(11);
    for (auto [h, w] : {std::pair{8, 8}, {4, 16}, {6, 10}, {5, 3}}) {
        for (int rep = 0; rep < 5; ++rep) {
            Image img = random_image(h, w, rng);
            Spectrum s = fft2(img);
            auto oracle = brute_dft2(img.pixels());
            double worst = 0.0;
            for (std::size_t i = 0; i < oracle.size(); ++i)
                worst = std::max(worst, std::abs(std::polar(s.amplitude[i], s.phase[i]) - oracle[i]));
            CHECK(worst <= 1e-9);
        }
    }
}

TEST_CASE("spectrum invariants: amplitude non-negative, conjugate symmetric, phase range") {
    std::mt19937_64 rng(12);
    Image img = random_image(8, 12, rng);
    Spectrum s = fft2(img);
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 12; ++v) {
            CHECK(s.amplitude_at(u, v) >= 0.0);
            CHECK(s.amplitude_at(u, v) == doctest::Approx(s.amplitude_at((8 - u) % 8, (12 - v) % 12)).epsilon(1e-12));
            CHECK(s.phase_at(u, v) > -std::numbers::pi);
            CHECK(s.phase_at(u, v) <= std::numbers::pi);
        }
}

TEST_CASE("ifft2 inverts fft2 on 1000 random images") {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> side(2, 64);
    double worst = 0.0, worst_imag = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const int h = rep < 500 ? 1 << std::uniform_int_distribution<int>(1, 6)(rng) : side(rng);
        const int w = rep < 500 ? 1 << std::uniform_int_distribution<int>(1, 6)(rng) : side(rng);
        Image img = random_image(h, w, rng);
        RealField back = ifft2(fft2(img));
        worst = std::max(worst, max_abs_diff(back.values, img.pixels()));
        worst_imag = std::max(worst_imag, back.max_imag_residue);
    }
    CHECK(worst <= 1e-6);
    CHECK(worst_imag <= 1e-6);
}

TEST_CASE("ifft2 of a DC spectrum is constant") {
    Spectrum s{4, 6, std::vector<double>(24, 0.0), std::vector<double>(24, 0.0)};
    s.amplitude[0] = 0.7 * 24;
    RealField f = ifft2(s);
    for (double v : f.values.data) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("ifft2 matches the brute force inverse on conjugate symmetric spectra") {
    std::mt19937_64 rng(14);
    for (auto [h, w] : {std::pair{8, 8}, {6, 5}}) {
        // A spectrum of a random real field is conjugate symmetric by construction;
        // perturb it symmetrically so it is not one we produced ourselves.
        auto base = brute_dft2(testing::random_tensor({h, w}, rng));
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < w; ++v) {
                const double k = 1.0 + 0.1 * std::cos(u + v) * std::cos(((h - u) % h) + ((w - v) % w));
                base[static_cast<std::size_t>(u) * w + v] *= k;
            }
        Spectrum s{h, w, {}, {}};
        for (const cd& z : base) {
            s.amplitude.push_back(std::abs(z));
            s.phase.push_back(std::arg(z));
        }
        RealField f = ifft2(s);
        auto oracle = brute_dft2(base, h, w, true);
        for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(std::abs(f.values[i] - oracle[i].real()) <= 1e-9);
        CHECK(f.max_imag_residue <= 1e-6);
    }
}

TEST_CASE("Parseval holds") {
    std::mt19937_64 rng(15);
    for (int rep = 0; rep < 50; ++rep) {
        const int h = 2 + rep % 31, w = 2 + (rep * 7) % 29;
        Image img = random_image(h, w, rng);
        Spectrum s = fft2(img);
        double lhs = 0.0, rhs = 0.0;
        for (double v : img.pixels().data) lhs += v * v;
        for (double a : s.amplitude) rhs += a * a;
        rhs /= h * w;
        CHECK(std::abs(lhs - rhs) <= 1e-6 * lhs);
    }
}

TEST_CASE("equalize_histogram leaves a constant image unchanged") {
    Image img(Tensor({5, 5}, 0.3));
    Image out = equalize_histogram(img);
    CHECK(max_abs_diff(out.pixels(), img.pixels()) == 0.0);
}

TEST_CASE("equalize_histogram on four distinct levels follows the CDF rule") {
    Image img(2, 2, {0.0, 85.0 / 255, 170.0 / 255, 1.0});
    Image out = equalize_histogram(img, 256);
    // cdf = 1/4, 2/4, 3/4, 1; cdf_min = 1/4.
    const double expected[] = {0.0, (0.5 - 0.25) / 0.75, (0.75 - 0.25) / 0.75, 1.0};
    for (int i = 0; i < 4; ++i) CHECK(out.pixels()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("equalize_histogram properties on random images") {
    std::mt19937_64 rng(16);
    for (int rep = 0; rep < 50; ++rep) {
        const int h = 4 + rep % 13, w = 3 + rep % 11;
        Tensor t = testing::random_tensor({h, w}, rng, 0.0, 1.0);
        // Skewed histograms are the interesting case.
        for (double& v : t.data) v = v * v * v;
        Image img(t);
        Image out = equalize_histogram(img);
        const std::size_t n = t.size();

        // Reference CDF from quantized levels.
        std::map<int, int> hist;
        std::vector<int> q(n);
        for (std::size_t i = 0; i < n; ++i) ++hist[q[i] = static_cast<int>(std::lround(t[i] * 255))];
        int running = 0, max_bin = 0;
        std::map<int, double> cdf;
        for (auto [l, c] : hist) {
            running += c;
            cdf[l] = static_cast<double>(running) / n;
            max_bin = std::max(max_bin, c);
        }
        const double cmin = cdf.begin()->second;
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(out.pixels()[i] == doctest::Approx((cdf[q[i]] - cmin) / (1 - cmin)).epsilon(1e-12));
            CHECK(out.pixels()[i] >= 0.0);
            CHECK(out.pixels()[i] <= 1.0);
            for (std::size_t j = 0; j < n; ++j)
                if (q[i] < q[j]) CHECK(out.pixels()[i] < out.pixels()[j]);
        }
        // Output CDF vs uniform, within the largest input bin mass.
        std::vector<double> vals = out.pixels().data;
        std::sort(vals.begin(), vals.end());
        double dev = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double emp = static_cast<double>(std::upper_bound(vals.begin(), vals.end(), vals[i]) - vals.begin()) / n;
            dev = std::max(dev, std::abs(emp - vals[i]));
        }
        CHECK(dev <= static_cast<double>(max_bin) / n + 1e-12);

        Image twice = equalize_histogram(out);
        CHECK(max_abs_diff(twice.pixels(), out.pixels()) <= 1.0 / 255 + 1e-12);
    }
}

TEST_CASE("amplitude-only reconstruction: constant, cosine and sine") {
    Image c(Tensor({8, 8}, 0.42));
    RealField rc = amplitude_only_reconstruct(c);
    for (double v : rc.values.data) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));

    for (auto [h, w] : {std::pair{8, 8}, {16, 12}, {10, 6}}) {
        Image cosine = tone(h, w, false), sine = tone(h, w, true);
        RealField rcos = amplitude_only_reconstruct(cosine);
        RealField rsin = amplitude_only_reconstruct(sine);
        CHECK(max_abs_diff(rcos.values, cosine.pixels()) <= 1e-6);
        CHECK(max_abs_diff(rsin.values, cosine.pixels()) <= 1e-6);
        CHECK(max_abs_diff(rsin.values, oracle_amplitude_only(sine.pixels())) <= 1e-9);
        CHECK(rsin.max_imag_residue <= 1e-6);
    }
}

TEST_CASE("amplitude-only reconstruction is invariant to circular translation") {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 20; ++rep) {
        Image img = random_image(16, 16, rng);
        Image moved = circular_shift(img, rep % 16, (3 * rep + 1) % 16);
        RealField a = amplitude_only_reconstruct(img), b = amplitude_only_reconstruct(moved);
        CHECK(max_abs_diff(a.values, b.values) <= 1e-6);
        CHECK(max_abs_diff(a.values, oracle_amplitude_only(img.pixels())) <= 1e-9);
        CHECK(a.max_imag_residue <= 1e-6);
    }
}

TEST_CASE("high-pass filter: DC removal, identity limit, masked DFT oracle, zero mean") {
    Image c(Tensor({8, 8}, 0.6));
    for (double cut : {0.01, 0.25, 0.9})
        for (double v : high_pass_filter(c, cut).data) CHECK(std::abs(v) < 1e-12);

    std::mt19937_64 rng(18);
    Image img = random_image(16, 16, rng);
    CHECK(max_abs_diff(high_pass_filter(img, 0.0), img.pixels()) <= 1e-6);
    CHECK_THROWS_AS(high_pass_filter(img, 1.0), Error);

    for (double cut : {0.5, 0.25, 0.1}) {
        Tensor hp = high_pass_filter(img, cut);
        auto spec = brute_dft2(img.pixels());
        const double radius = cut * 16 / 2.0;
        for (int u = 0; u < 16; ++u)
            for (int v = 0; v < 16; ++v) {
                const int fu = std::min(u, 16 - u), fv = std::min(v, 16 - v);
                if (std::hypot(fu, fv) < radius) spec[static_cast<std::size_t>(u) * 16 + v] = 0.0;
            }
        auto back = brute_dft2(spec, 16, 16, true);
        double mean = 0.0;
        for (std::size_t i = 0; i < back.size(); ++i) {
            CHECK(std::abs(hp[i] - back[i].real()) <= 1e-9);
            mean += hp[i];
        }
        CHECK(std::abs(mean / 256) <= 1e-6);
    }
}

TEST_CASE("min-max normalization") {
    Tensor t({2, 2}, {-1.0, 3.0, 1.0, 0.0});
    Tensor n = min_max_normalize(t);
    CHECK(n[0] == 0.0);
    CHECK(n[1] == 1.0);
    CHECK(n[2] == 0.5);
    for (double v : min_max_normalize(Tensor({3, 3}, 5.0)).data) CHECK(v == 0.0);
}

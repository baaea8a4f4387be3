#include <random>

#include "doctest.h"
#include "lsm/kernels.hpp"
#include "support.hpp"

using namespace lsm;
namespace k = lsm::kernels;

namespace {

std::vector<double> randv(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST_CASE("matmul variants agree with the serial reference") {
    std::mt19937_64 rng(1);
    for (auto [m, kk, n] : {std::tuple{1, 1, 1}, {3, 5, 7}, {17, 9, 33}, {64, 32, 48}}) {
        auto a = randv(static_cast<std::size_t>(m) * kk, rng);
        auto b = randv(static_cast<std::size_t>(kk) * n, rng);
        auto bt = randv(static_cast<std::size_t>(n) * kk, rng);
        auto at = randv(static_cast<std::size_t>(kk) * m, rng);
        for (bool acc : {false, true}) {
            auto init = randv(static_cast<std::size_t>(m) * n, rng);
            auto c1 = init, c2 = init;
            k::matmul(a.data(), b.data(), c1.data(), m, kk, n, acc);
            k::reference::matmul(a.data(), b.data(), c2.data(), m, kk, n, acc);
            CHECK(max_diff(c1, c2) < 1e-12);
            c1 = init, c2 = init;
            k::matmul_nt(a.data(), bt.data(), c1.data(), m, kk, n, acc);
            k::reference::matmul_nt(a.data(), bt.data(), c2.data(), m, kk, n, acc);
            CHECK(max_diff(c1, c2) < 1e-12);
            c1 = init, c2 = init;
            k::matmul_tn(at.data(), b.data(), c1.data(), m, kk, n, acc);
            k::reference::matmul_tn(at.data(), b.data(), c2.data(), m, kk, n, acc);
            CHECK(max_diff(c1, c2) < 1e-12);
        }
    }
}

TEST_CASE("matmul matches a hand computed product") {
    const double a[] = {1, 2, 3, 4, 5, 6};       // 2x3
    const double b[] = {7, 8, 9, 10, 11, 12};    // 3x2
    double c[4] = {};
    k::matmul(a, b, c, 2, 3, 2, false);
    CHECK(c[0] == 58);
    CHECK(c[1] == 64);
    CHECK(c[2] == 139);
    CHECK(c[3] == 154);
}

TEST_CASE("conv kernels agree with the serial reference") {
    std::mt19937_64 rng(2);
    for (auto geo : {k::ConvGeometry{1, 8, 8, 3, 3, 1, 1}, k::ConvGeometry{4, 9, 7, 5, 3, 2, 1},
                     k::ConvGeometry{2, 16, 16, 8, 4, 4, 0}, k::ConvGeometry{3, 6, 6, 2, 1, 1, 0}}) {
        const std::size_t nx = static_cast<std::size_t>(geo.in_channels) * geo.in_h * geo.in_w;
        const std::size_t nw = static_cast<std::size_t>(geo.out_channels) * geo.in_channels * geo.kernel * geo.kernel;
        const std::size_t ny = static_cast<std::size_t>(geo.out_channels) * geo.out_h() * geo.out_w();
        auto x = randv(nx, rng), w = randv(nw, rng), b = randv(static_cast<std::size_t>(geo.out_channels), rng);
        std::vector<double> y1(ny), y2(ny);
        k::conv2d_forward(x.data(), w.data(), b.data(), y1.data(), geo);
        k::reference::conv2d_forward(x.data(), w.data(), b.data(), y2.data(), geo);
        CHECK(max_diff(y1, y2) < 1e-12);

        auto gy = randv(ny, rng);
        std::vector<double> gx1(nx, 0.5), gx2(nx, 0.5);
        k::conv2d_backward_input(gy.data(), w.data(), gx1.data(), geo);
        k::reference::conv2d_backward_input(gy.data(), w.data(), gx2.data(), geo);
        CHECK(max_diff(gx1, gx2) < 1e-12);

        std::vector<double> gw1(nw, 0.25), gw2(nw, 0.25), gb1(b.size()), gb2(b.size());
        k::conv2d_backward_weight(x.data(), gy.data(), gw1.data(), gb1.data(), geo);
        k::reference::conv2d_backward_weight(x.data(), gy.data(), gw2.data(), gb2.data(), geo);
        CHECK(max_diff(gw1, gw2) < 1e-12);
        CHECK(max_diff(gb1, gb2) < 1e-12);
    }
}

TEST_CASE("transposed conv kernels agree with the serial reference") {
    std::mt19937_64 rng(3);
    for (auto geo : {k::ConvGeometry{4, 3, 5, 2, 2, 2, 0}, k::ConvGeometry{8, 8, 8, 4, 2, 2, 0},
                     k::ConvGeometry{1, 2, 2, 3, 4, 4, 0}}) {
        const std::size_t nx = static_cast<std::size_t>(geo.in_channels) * geo.in_h * geo.in_w;
        const std::size_t nw = static_cast<std::size_t>(geo.in_channels) * geo.out_channels * geo.kernel * geo.kernel;
        const std::size_t ny =
            static_cast<std::size_t>(geo.out_channels) * geo.in_h * geo.kernel * geo.in_w * geo.kernel;
        auto x = randv(nx, rng), w = randv(nw, rng), b = randv(static_cast<std::size_t>(geo.out_channels), rng);
        std::vector<double> y1(ny), y2(ny);
        k::conv_transpose2d_forward(x.data(), w.data(), b.data(), y1.data(), geo);
        k::reference::conv_transpose2d_forward(x.data(), w.data(), b.data(), y2.data(), geo);
        CHECK(max_diff(y1, y2) < 1e-12);

        auto gy = randv(ny, rng);
        std::vector<double> gx1(nx), gx2(nx);
        k::conv_transpose2d_backward_input(gy.data(), w.data(), gx1.data(), geo);
        k::reference::conv_transpose2d_backward_input(gy.data(), w.data(), gx2.data(), geo);
        CHECK(max_diff(gx1, gx2) < 1e-12);

        std::vector<double> gw1(nw), gw2(nw), gb1(b.size()), gb2(b.size());
        k::conv_transpose2d_backward_weight(x.data(), gy.data(), gw1.data(), gb1.data(), geo);
        k::reference::conv_transpose2d_backward_weight(x.data(), gy.data(), gw2.data(), gb2.data(), geo);
        CHECK(max_diff(gw1, gw2) < 1e-12);
        CHECK(max_diff(gb1, gb2) < 1e-12);
    }
}

TEST_CASE("conv2d with a 1x1 identity kernel copies its input") {
    k::ConvGeometry geo{1, 3, 3, 1, 1, 1, 0};
    const double x[9] = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    const double w[1] = {1.0};
    const double b[1] = {0.5};
    double y[9];
    k::conv2d_forward(x, w, b, y, geo);
    for (int i = 0; i < 9; ++i) CHECK(y[i] == x[i] + 0.5);
}

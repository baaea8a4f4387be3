#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "lsm/autodiff.hpp"
#include "lsm/tensor.hpp"

namespace testing {

using lsm::Graph;
using lsm::Parameter;
using lsm::Tensor;
using lsm::Var;

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.data) v = d(rng);
    return t;
}

struct GradcheckResult {
    double max_rel = 0.0;
    int probes = 0;
};

// Compares analytic parameter gradients of a scalar function with central
// differences. The error of each coordinate is |a - n| / max(floor, |a|, |n|).
inline GradcheckResult gradcheck(const std::function<Var(Graph&)>& f, const std::vector<Parameter*>& params,
                                 double h = 1e-4, int max_probes_per_param = 1 << 30, double floor = 1e-6) {
    for (Parameter* p : params) p->zero_grad();
    {
        Graph g;
        Var out = f(g);
        g.backward(out);
    }
    GradcheckResult r;
    auto eval = [&] {
        Graph g;
        g.set_grad_enabled(false);
        return f(g).value()[0];
    };
    for (Parameter* p : params) {
        const int n = static_cast<int>(p->value.size());
        const int stride = std::max(1, n / std::max(1, max_probes_per_param));
        for (int i = 0; i < n; i += stride) {
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double up = eval();
            p->value[i] = keep - h;
            const double down = eval();
            p->value[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p->grad[i];
            const double denom = std::max({floor, std::abs(analytic), std::abs(numeric)});
            r.max_rel = std::max(r.max_rel, std::abs(analytic - numeric) / denom);
            ++r.probes;
        }
    }
    return r;
}

// Weighted sum with fixed random weights, so every output element is probed.
inline Var probe_sum(Var x, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    Tensor w = random_tensor(x.shape(), rng);
    return lsm::ops::sum(lsm::ops::mul(x, x.graph().constant(std::move(w))));
}

using cd = std::complex<double>;

// O(N^2) 2-D DFT straight from the definition.
inline std::vector<cd> brute_dft2(const std::vector<cd>& in, int h, int w, bool inverse) {
    std::vector<cd> out(in.size());
    const double sign = inverse ? 1.0 : -1.0;
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            cd s(0.0, 0.0);
            for (int x = 0; x < h; ++x)
                for (int y = 0; y < w; ++y) {
                    const double ang = sign * 2.0 * std::numbers::pi *
                                       (static_cast<double>(u * x) / h + static_cast<double>(v * y) / w);
                    s += in[static_cast<std::size_t>(x) * w + y] * std::polar(1.0, ang);
                }
            out[static_cast<std::size_t>(u) * w + v] = inverse ? s / static_cast<double>(h * w) : s;
        }
    return out;
}

inline std::vector<cd> brute_dft2(const Tensor& field) {
    std::vector<cd> in(field.size());
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = cd(field[i], 0.0);
    return brute_dft2(in, field.dim(0), field.dim(1), false);
}

} // namespace testing

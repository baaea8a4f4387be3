#include "lsm/layers.hpp"

#include <cmath>

#include "lsm/error.hpp"

namespace lsm {

namespace {

Tensor uniform(std::vector<int> shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.data) v = dist(rng);
    return t;
}

} // namespace

Linear::Linear(const std::string& name, int in, int out, Rng& rng, Init init, bool with_bias) : has_bias_(with_bias) {
    const double bound = std::sqrt(6.0 / (in + out));
    weight = Parameter(name + ".weight", init == Init::Zero ? Tensor({in, out}) : uniform({in, out}, bound, rng));
    if (has_bias_) bias = Parameter(name + ".bias", Tensor({out}));
}

Var Linear::forward(Graph& g, Var x) {
    return ops::linear(x, g.param(weight), has_bias_ ? g.param(bias) : Var());
}

void Linear::collect(ParameterList& out) {
    out.push_back(&weight);
    if (has_bias_) out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& name, int width)
    : gamma(name + ".gamma", Tensor({width}, 1.0)), beta(name + ".beta", Tensor({width})) {}

Var LayerNorm::forward(Graph& g, Var x) { return ops::layer_norm(x, g.param(gamma), g.param(beta)); }

void LayerNorm::collect(ParameterList& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

Mlp::Mlp(const std::string& name, int in, int hidden, int out, Rng& rng, Init last)
    : fc1(name + ".fc1", in, hidden, rng), fc2(name + ".fc2", hidden, out, rng, last) {}

Var Mlp::forward(Graph& g, Var x) { return fc2.forward(g, ops::gelu(fc1.forward(g, x))); }

void Mlp::collect(ParameterList& out) {
    fc1.collect(out);
    fc2.collect(out);
}

Conv2d::Conv2d(const std::string& name, int in, int out, int kernel, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
    const double bound = std::sqrt(6.0 / (in * kernel * kernel));
    weight = Parameter(name + ".weight", uniform({out, in, kernel, kernel}, bound, rng));
    bias = Parameter(name + ".bias", Tensor({out}));
}

Var Conv2d::forward(Graph& g, Var x) { return ops::conv2d(x, g.param(weight), g.param(bias), stride, pad); }

void Conv2d::collect(ParameterList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

ConvTranspose2d::ConvTranspose2d(const std::string& name, int in, int out, int kernel, Rng& rng) {
    const double bound = std::sqrt(6.0 / (in + out));
    weight = Parameter(name + ".weight", uniform({in, out, kernel, kernel}, bound, rng));
    bias = Parameter(name + ".bias", Tensor({out}));
}

Var ConvTranspose2d::forward(Graph& g, Var x) { return ops::conv_transpose2d(x, g.param(weight), g.param(bias)); }

void ConvTranspose2d::collect(ParameterList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

Attention::Attention(const std::string& name, int width, int heads_, Rng& rng)
    : q(name + ".q", width, width, rng),
      k(name + ".k", width, width, rng),
      v(name + ".v", width, width, rng),
      o(name + ".o", width, width, rng),
      heads(heads_) {}

Var Attention::forward(Graph& g, Var queries, Var keys_values) {
    Var qq = q.forward(g, queries);
    Var kk = k.forward(g, keys_values);
    Var vv = v.forward(g, keys_values);
    return o.forward(g, ops::attention(qq, kk, vv, heads));
}

void Attention::collect(ParameterList& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
}

Tensor patchify(const Tensor& image, int patch) {
    require(image.rank() == 2, ErrorCode::ShapeMismatch, "patchify expects [H, W]");
    const int h = image.dim(0), w = image.dim(1);
    require(patch >= 1 && h % patch == 0 && w % patch == 0, ErrorCode::ShapeMismatch,
            "patch size " + std::to_string(patch) + " does not divide " + shape_string(image.shape));
    const int gh = h / patch, gw = w / patch;
    Tensor out({gh * gw, patch * patch});
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px)
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    out.at(py * gw + px, y * patch + x) = image.at(py * patch + y, px * patch + x);
    return out;
}

Var tokens_to_map(Var tokens, int grid_h, int grid_w) {
    require(tokens.value().dim(0) == grid_h * grid_w, ErrorCode::ShapeMismatch, "token count vs grid");
    const int d = tokens.value().dim(1);
    return ops::reshape(ops::transpose(tokens), {d, grid_h, grid_w});
}

Var map_to_tokens(Var map) {
    const int d = map.value().dim(0), h = map.value().dim(1), w = map.value().dim(2);
    return ops::transpose(ops::reshape(map, {d, h * w}));
}

std::size_t parameter_count(const ParameterList& params) {
    std::size_t n = 0;
    for (const Parameter* p : params) n += p->value.size();
    return n;
}

} // namespace lsm

#pragma once

#include <random>
#include <string>
#include <vector>

#include "lsm/autodiff.hpp"

namespace lsm {

using Rng = std::mt19937_64;

enum class Init { Xavier, Zero };

struct Linear {
    Parameter weight; // [in, out]
    Parameter bias;   // [out]

    Linear() = default;
    Linear(const std::string& name, int in, int out, Rng& rng, Init init = Init::Xavier, bool with_bias = true);

    Var forward(Graph& g, Var x);
    void collect(ParameterList& out);
    int in_features() const { return weight.value.dim(0); }
    int out_features() const { return weight.value.dim(1); }

private:
    bool has_bias_ = true;
};

struct LayerNorm {
    Parameter gamma;
    Parameter beta;

    LayerNorm() = default;
    LayerNorm(const std::string& name, int width);

    Var forward(Graph& g, Var x);
    void collect(ParameterList& out);
};

/// Two-layer perceptron: Linear -> GELU -> Linear.
struct Mlp {
    Linear fc1;
    Linear fc2;

    Mlp() = default;
    Mlp(const std::string& name, int in, int hidden, int out, Rng& rng, Init last = Init::Xavier);

    Var forward(Graph& g, Var x);
    void collect(ParameterList& out);
};

struct Conv2d {
    Parameter weight; // [out, in, k, k]
    Parameter bias;   // [out]
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(const std::string& name, int in, int out, int kernel, int stride, int pad, Rng& rng);

    Var forward(Graph& g, Var x);
    void collect(ParameterList& out);
};

/// Non-overlapping upsampling convolution (kernel == stride).
struct ConvTranspose2d {
    Parameter weight; // [in, out, k, k]
    Parameter bias;   // [out]

    ConvTranspose2d() = default;
    ConvTranspose2d(const std::string& name, int in, int out, int kernel, Rng& rng);

    Var forward(Graph& g, Var x);
    void collect(ParameterList& out);
};

/// Q/K/V/output projections around ops::attention.
struct Attention {
    Linear q, k, v, o;
    int heads = 1;

    Attention() = default;
    Attention(const std::string& name, int width, int heads, Rng& rng);

    Var forward(Graph& g, Var queries, Var keys_values);
    void collect(ParameterList& out);
};

/// Splits an [H, W] image into row-major [ (H/p)*(W/p), p*p ] patch rows.
Tensor patchify(const Tensor& image, int patch);
/// [T, D] token grid -> [D, gh, gw] feature map and back.
Var tokens_to_map(Var tokens, int grid_h, int grid_w);
Var map_to_tokens(Var map);

std::size_t parameter_count(const ParameterList& params);

} // namespace lsm

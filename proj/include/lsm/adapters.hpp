#pragma once

#include <vector>

#include "lsm/imaging.hpp"
#include "lsm/layers.hpp"

namespace lsm {

struct HEAdaptConfig {
    int num_blocks = 2;
    int patch_size = 8;
    int embed_dim = 32;
    double cutoff_ratio = 0.25;
};

/// One [tokens, D] correction per encoder block.
struct AdapterFeatures {
    std::vector<Var> per_block;

    int size() const { return static_cast<int>(per_block.size()); }
};

/// Histogram-equalized, high-pass filtered copy of the image that feeds the adapter.
Tensor adapter_input(const imaging::Image& img, double cutoff_ratio);

class HEAdapter {
public:
    HEAdapter() = default;
    HEAdapter(const std::string& name, const HEAdaptConfig& cfg, Rng& rng);

    /// `patch_embedding` is the encoder's patch embedding of the original image, [tokens, D].
    AdapterFeatures forward(Graph& g, const imaging::Image& img, Var patch_embedding);
    /// Same, with adapter_input() precomputed.
    AdapterFeatures forward(Graph& g, const Tensor& filtered, Var patch_embedding);

    void collect(ParameterList& out);
    void set_frozen(bool frozen);
    const HEAdaptConfig& config() const { return cfg_; }

    Linear freq_embed;          // p*p -> D/2
    Linear reduce;              // D -> D/2
    std::vector<Mlp> individual; // D/2 -> D/2
    Mlp shared;                 // D/2 -> D, last layer zero-initialized

private:
    HEAdaptConfig cfg_;
};

/// tokens + features.per_block[block_index]
Var inject(const AdapterFeatures& features, int block_index, Var tokens);

} // namespace lsm

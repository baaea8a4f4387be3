#pragma once

#include "lsm/prompters.hpp"

namespace lsm {

/// Learnable per-channel weights for the spatial, semantic and style blocks
/// plus a learnable block of adaptive tokens.
struct DPCState {
    Parameter w1;       // [Dp]
    Parameter w2;       // [Dp]
    Parameter w3;       // [Dp]
    Parameter adaptive; // [Ta, Dp]

    DPCState() = default;
    /// Weights start at 1, adaptive tokens at N(0, 0.02).
    DPCState(const std::string& name, int width, int adaptive_tokens, Rng& rng);

    /// w = 1, adaptive tokens = 0.
    void reset_identity();
    void set_frozen(bool frozen);
    void collect(ParameterList& out);
    int adaptive_tokens() const { return adaptive.value.dim(0); }
};

/// e_P = concat(w1*e_spa, w2*e_sem, w3*e_sty, e_ada) along the token axis.
PromptEmbedding combine(const PromptEmbedding& spatial, const PromptEmbedding& semantic, const PromptEmbedding& style,
                        const DPCState& state);

/// Decoder input. A dense spatial prompt is weighted like any other block but
/// is added to the image embedding instead of joining the token sequence.
struct DecoderPrompt {
    Var tokens; // [T, Dp]
    Var dense;  // [cells, Dp] or invalid
};

/// Graph form of combine; any block may be null (absent).
DecoderPrompt combine(Graph& g, const PromptTokens* spatial, const PromptTokens* semantic, const PromptTokens* style,
                      DPCState& state);

} // namespace lsm

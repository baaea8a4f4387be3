#include "lsm/combiner.hpp"

#include "lsm/error.hpp"

namespace lsm {

DPCState::DPCState(const std::string& name, int width, int adaptive_tokens, Rng& rng) {
    require(width > 0 && adaptive_tokens > 0, ErrorCode::InvalidArgument, "combiner extent");
    w1 = Parameter(name + ".w1", Tensor({width}, 1.0));
    w2 = Parameter(name + ".w2", Tensor({width}, 1.0));
    w3 = Parameter(name + ".w3", Tensor({width}, 1.0));
    Tensor ada({adaptive_tokens, width});
    std::normal_distribution<double> normal(0.0, 0.02);
    for (double& v : ada.data) v = normal(rng);
    adaptive = Parameter(name + ".adaptive", std::move(ada));
}

void DPCState::reset_identity() {
    w1.value.fill(1.0);
    w2.value.fill(1.0);
    w3.value.fill(1.0);
    adaptive.value.fill(0.0);
}

void DPCState::set_frozen(bool frozen) {
    for (Parameter* p : {&w1, &w2, &w3, &adaptive}) p->frozen = frozen;
}

void DPCState::collect(ParameterList& out) {
    out.push_back(&w1);
    out.push_back(&w2);
    out.push_back(&w3);
    out.push_back(&adaptive);
}

namespace {

bool is_spatial(PromptKind k) { return k == PromptKind::SpatialSparse || k == PromptKind::SpatialDense; }

void check_width(const Tensor& tokens, const Parameter& w, const char* block) {
    require(tokens.rank() == 2, ErrorCode::ShapeMismatch, std::string(block) + " prompt must be [T, Dp]");
    require(tokens.dim(1) == static_cast<int>(w.value.size()), ErrorCode::WidthMismatch,
            std::string(block) + " prompt width " + std::to_string(tokens.dim(1)) + " vs weight width " +
                std::to_string(w.value.size()));
}

} // namespace

PromptEmbedding combine(const PromptEmbedding& spatial, const PromptEmbedding& semantic, const PromptEmbedding& style,
                        const DPCState& state) {
    require(is_spatial(spatial.kind), ErrorCode::InvalidArgument, "first block must be a spatial prompt");
    require(semantic.kind == PromptKind::Semantic, ErrorCode::InvalidArgument, "second block must be semantic");
    require(style.kind == PromptKind::Style, ErrorCode::InvalidArgument, "third block must be style");
    check_width(spatial.tokens, state.w1, "spatial");
    check_width(semantic.tokens, state.w2, "semantic");
    check_width(style.tokens, state.w3, "style");
    check_width(state.adaptive.value, state.w1, "adaptive");

    const int width = spatial.tokens.dim(1);
    const int total = spatial.token_count() + semantic.token_count() + style.token_count() + state.adaptive_tokens();
    Tensor out({total, width});
    int row = 0;
    auto put = [&](const Tensor& block, const Tensor* w) {
        for (int t = 0; t < block.dim(0); ++t, ++row)
            for (int d = 0; d < width; ++d) out.at(row, d) = w ? (*w)[static_cast<std::size_t>(d)] * block.at(t, d)
                                                                : block.at(t, d);
    };
    put(spatial.tokens, &state.w1.value);
    put(semantic.tokens, &state.w2.value);
    put(style.tokens, &state.w3.value);
    put(state.adaptive.value, nullptr);
    return {std::move(out), PromptKind::Combined};
}

DecoderPrompt combine(Graph& g, const PromptTokens* spatial, const PromptTokens* semantic, const PromptTokens* style,
                      DPCState& state) {
    DecoderPrompt out;
    std::vector<Var> parts;
    if (spatial) {
        require(is_spatial(spatial->kind), ErrorCode::InvalidArgument, "first block must be a spatial prompt");
        check_width(spatial->tokens.value(), state.w1, "spatial");
        Var weighted = ops::mul_row(spatial->tokens, g.param(state.w1));
        if (spatial->kind == PromptKind::SpatialDense)
            out.dense = weighted;
        else
            parts.push_back(weighted);
    }
    if (semantic) {
        require(semantic->kind == PromptKind::Semantic, ErrorCode::InvalidArgument, "second block must be semantic");
        check_width(semantic->tokens.value(), state.w2, "semantic");
        parts.push_back(ops::mul_row(semantic->tokens, g.param(state.w2)));
    }
    if (style) {
        require(style->kind == PromptKind::Style, ErrorCode::InvalidArgument, "third block must be style");
        check_width(style->tokens.value(), state.w3, "style");
        parts.push_back(ops::mul_row(style->tokens, g.param(state.w3)));
    }
    check_width(state.adaptive.value, state.w1, "adaptive");
    parts.push_back(g.param(state.adaptive));
    out.tokens = parts.size() == 1 ? parts.front() : ops::concat_rows(parts);
    return out;
}

} // namespace lsm

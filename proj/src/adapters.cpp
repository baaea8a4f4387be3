#include "lsm/adapters.hpp"

#include "lsm/error.hpp"

namespace lsm {

Tensor adapter_input(const imaging::Image& img, double cutoff_ratio) {
    return imaging::high_pass_filter(imaging::equalize_histogram(img), cutoff_ratio);
}

HEAdapter::HEAdapter(const std::string& name, const HEAdaptConfig& cfg, Rng& rng) : cfg_(cfg) {
    require(cfg.num_blocks >= 1, ErrorCode::InvalidArgument, "adapter needs at least one block");
    require(cfg.embed_dim >= 2 && cfg.embed_dim % 2 == 0, ErrorCode::InvalidArgument, "adapter width must be even");
    require(cfg.cutoff_ratio >= 0.0 && cfg.cutoff_ratio < 1.0, ErrorCode::InvalidArgument, "cutoff ratio");
    const int d = cfg.embed_dim, h = d / 2;
    freq_embed = Linear(name + ".freq_embed", cfg.patch_size * cfg.patch_size, h, rng);
    reduce = Linear(name + ".reduce", d, h, rng);
    for (int i = 0; i < cfg.num_blocks; ++i)
        individual.emplace_back(name + ".mlp" + std::to_string(i), h, h, h, rng);
    shared = Mlp(name + ".shared", h, h, d, rng, Init::Zero);
}

AdapterFeatures HEAdapter::forward(Graph& g, const imaging::Image& img, Var patch_embedding) {
    return forward(g, adapter_input(img, cfg_.cutoff_ratio), patch_embedding);
}

AdapterFeatures HEAdapter::forward(Graph& g, const Tensor& filtered, Var patch_embedding) {
    require(filtered.rank() == 2 && filtered.dim(0) % cfg_.patch_size == 0 && filtered.dim(1) % cfg_.patch_size == 0,
            ErrorCode::ShapeMismatch, "patch size must divide the adapter input");
    Tensor patches = patchify(filtered, cfg_.patch_size);
    require(patches.dim(0) == patch_embedding.value().dim(0), ErrorCode::ShapeMismatch,
            "adapter patch grid " + std::to_string(patches.dim(0)) + " vs encoder tokens " +
                std::to_string(patch_embedding.value().dim(0)));
    Var fused = ops::add(freq_embed.forward(g, g.constant(std::move(patches))), reduce.forward(g, patch_embedding));
    AdapterFeatures out;
    for (Mlp& m : individual) out.per_block.push_back(shared.forward(g, m.forward(g, fused)));
    return out;
}

void HEAdapter::collect(ParameterList& out) {
    freq_embed.collect(out);
    reduce.collect(out);
    for (Mlp& m : individual) m.collect(out);
    shared.collect(out);
}

void HEAdapter::set_frozen(bool frozen) {
    ParameterList ps;
    collect(ps);
    for (Parameter* p : ps) p->frozen = frozen;
}

Var inject(const AdapterFeatures& features, int block_index, Var tokens) {
    require(block_index >= 0 && block_index < features.size(), ErrorCode::InvalidArgument, "adapter block index");
    const Var& f = features.per_block[static_cast<std::size_t>(block_index)];
    require(f.value().same_shape(tokens.value()), ErrorCode::ShapeMismatch,
            "adapter feature " + shape_string(f.shape()) + " vs tokens " + shape_string(tokens.shape()));
    return ops::add(tokens, f);
}

} // namespace lsm

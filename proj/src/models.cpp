#include "lsm/models.hpp"

#include <algorithm>
#include <cmath>

#include "lsm/error.hpp"

namespace lsm {

namespace {

void freeze_all(ParameterList ps, bool frozen) {
    for (Parameter* p : ps) p->frozen = frozen;
}

// Zero mean, unit variance per image; constant images map to zeros.
Tensor standardized(const Tensor& image) {
    double mean = 0.0, sq = 0.0;
    for (double v : image.data) mean += v;
    mean /= static_cast<double>(image.size());
    for (double v : image.data) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(image.size()));
    Tensor out = image;
    for (double& v : out.data) v = sd > 1e-12 ? (v - mean) / sd : 0.0;
    return out;
}

Rng module_rng(std::uint64_t seed, std::uint64_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tag)};
    return Rng(seq);
}

} // namespace

// ---- encoder ---------------------------------------------------------------

ImageEncoder::ImageEncoder(const std::string& name, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    require(cfg.depth >= 1 && cfg.num_heads >= 1, ErrorCode::InvalidArgument, "encoder depth and heads");
    require(cfg.image_side % cfg.patch_size == 0, ErrorCode::ShapeMismatch, "patch size must divide the image side");
    require(cfg.embed_dim % cfg.num_heads == 0, ErrorCode::InvalidArgument, "heads must divide the embedding width");
    const int d = cfg.embed_dim;
    patch_embed = Linear(name + ".patch_embed", cfg.patch_size * cfg.patch_size, d, rng);
    Tensor pos({cfg.tokens(), d});
    std::normal_distribution<double> normal(0.0, 0.02);
    for (double& v : pos.data) v = normal(rng);
    pos_embed = Parameter(name + ".pos_embed", std::move(pos));
    for (int i = 0; i < cfg.depth; ++i) {
        const std::string b = name + ".block" + std::to_string(i);
        blocks.push_back({LayerNorm(b + ".ln1", d), Attention(b + ".attn", d, cfg.num_heads, rng),
                          LayerNorm(b + ".ln2", d), Mlp(b + ".mlp", d, 4 * d, d, rng)});
    }
    neck = LayerNorm(name + ".neck", d);
}

Var ImageEncoder::patch_embedding(Graph& g, const imaging::Image& img) {
    require(img.height() == cfg_.image_side && img.width() == cfg_.image_side, ErrorCode::ShapeMismatch,
            "encoder expects " + std::to_string(cfg_.image_side) + "x" + std::to_string(cfg_.image_side) + " images");
    return patch_embed.forward(g, g.constant(patchify(standardized(img.pixels()), cfg_.patch_size)));
}

Var ImageEncoder::forward(Graph& g, Var patch_tokens, const AdapterFeatures* adapter) {
    require(patch_tokens.value().rank() == 2 && patch_tokens.value().dim(0) == cfg_.tokens() &&
                patch_tokens.value().dim(1) == cfg_.embed_dim,
            ErrorCode::ShapeMismatch, "patch tokens " + shape_string(patch_tokens.shape()));
    require(!adapter || adapter->size() == cfg_.depth, ErrorCode::ShapeMismatch,
            "adapter block count differs from encoder depth");
    Var x = ops::add(patch_tokens, g.param(pos_embed));
    for (int i = 0; i < cfg_.depth; ++i) {
        EncoderBlock& b = blocks[static_cast<std::size_t>(i)];
        Var h = b.ln1.forward(g, x);
        x = ops::add(x, b.attn.forward(g, h, h));
        x = ops::add(x, b.mlp.forward(g, b.ln2.forward(g, x)));
        if (adapter) x = inject(*adapter, i, x);
    }
    return neck.forward(g, x);
}

Var ImageEncoder::forward(Graph& g, const imaging::Image& img, const AdapterFeatures* adapter) {
    return forward(g, patch_embedding(g, img), adapter);
}

void ImageEncoder::collect(ParameterList& out) {
    patch_embed.collect(out);
    out.push_back(&pos_embed);
    for (EncoderBlock& b : blocks) {
        b.ln1.collect(out);
        b.attn.collect(out);
        b.ln2.collect(out);
        b.mlp.collect(out);
    }
    neck.collect(out);
}

void ImageEncoder::set_frozen(bool frozen) {
    ParameterList ps;
    collect(ps);
    freeze_all(ps, frozen);
}

ImageEmbedding encode_image(ImageEncoder& encoder, const imaging::Image& img, HEAdapter* adapter) {
    Graph g;
    g.set_grad_enabled(false);
    Var x0 = encoder.patch_embedding(g, img);
    AdapterFeatures feats;
    if (adapter) feats = adapter->forward(g, img, x0);
    Var z = encoder.forward(g, x0, adapter ? &feats : nullptr);
    const int grid = encoder.config().grid();
    return ImageEmbedding(grid, grid, z.value());
}

// ---- decoder ---------------------------------------------------------------

MaskDecoder::MaskDecoder(const std::string& name, const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    require(cfg.num_layers >= 1, ErrorCode::InvalidArgument, "decoder needs at least one layer");
    const int f = cfg.upsample_factor;
    require(f >= 2 && (f & (f - 1)) == 0, ErrorCode::InvalidArgument, "upsample factor must be a power of two");
    const int d = cfg.embed_dim, h = cfg.num_heads;
    Tensor mt({1, d});
    std::normal_distribution<double> normal(0.0, 0.02);
    for (double& v : mt.data) v = normal(rng);
    mask_token = Parameter(name + ".mask_token", std::move(mt));
    for (int i = 0; i < cfg.num_layers; ++i) {
        const std::string l = name + ".layer" + std::to_string(i);
        layers.push_back({Attention(l + ".self_attn", d, h, rng), LayerNorm(l + ".ln1", d),
                          Attention(l + ".t2i", d, h, rng), LayerNorm(l + ".ln2", d),
                          Mlp(l + ".mlp", d, 2 * d, d, rng), LayerNorm(l + ".ln3", d),
                          Attention(l + ".i2t", d, h, rng), LayerNorm(l + ".ln4", d)});
    }
    final_attn = Attention(name + ".final_attn", d, h, rng);
    final_ln = LayerNorm(name + ".final_ln", d);
    int in = d, s = 0;
    for (int r = f; r > 1; r >>= 1, ++s) {
        const int out = std::max(4, d >> (s + 1));
        upsample.emplace_back(name + ".up" + std::to_string(s), in, out, 2, rng);
        in = out;
    }
    hyper = Mlp(name + ".hyper", d, d, in, rng);
    out_bias = Parameter(name + ".out_bias", Tensor({1}));
}

Var MaskDecoder::forward(Graph& g, Var z, const DecoderPrompt& prompt) {
    const int grid = cfg_.grid;
    require(z.value().rank() == 2 && z.value().dim(0) == grid * grid && z.value().dim(1) == cfg_.embed_dim,
            ErrorCode::ShapeMismatch, "decoder embedding " + shape_string(z.shape()));
    require(prompt.tokens.valid() && prompt.tokens.value().rank() == 2 &&
                prompt.tokens.value().dim(1) == cfg_.embed_dim,
            ErrorCode::ShapeMismatch, "decoder prompt tokens must be [T, " + std::to_string(cfg_.embed_dim) + "]");
    Var keys = z;
    if (prompt.dense.valid()) {
        require(prompt.dense.value().same_shape(z.value()), ErrorCode::ShapeMismatch, "dense prompt vs embedding");
        keys = ops::add(z, prompt.dense);
    }
    Var q = ops::concat_rows({g.param(mask_token), prompt.tokens});
    for (TwoWayLayer& l : layers) {
        q = l.ln1.forward(g, ops::add(q, l.self_attn.forward(g, q, q)));
        q = l.ln2.forward(g, ops::add(q, l.token_to_image.forward(g, q, keys)));
        q = l.ln3.forward(g, ops::add(q, l.mlp.forward(g, q)));
        keys = l.ln4.forward(g, ops::add(keys, l.image_to_token.forward(g, keys, q)));
    }
    q = final_ln.forward(g, ops::add(q, final_attn.forward(g, q, keys)));
    Var weights = hyper.forward(g, ops::slice_rows(q, 0, 1));

    Var map = tokens_to_map(keys, grid, grid);
    for (ConvTranspose2d& up : upsample) map = ops::gelu(up.forward(g, map));
    const int c = map.value().dim(0), side = map.value().dim(1);
    Var flat = ops::matmul(weights, ops::reshape(map, {c, side * side}));
    Var logits = ops::add_row(ops::reshape(flat, {side * side, 1}), g.param(out_bias));
    return ops::reshape(logits, {side, side});
}

void MaskDecoder::collect(ParameterList& out) {
    out.push_back(&mask_token);
    for (TwoWayLayer& l : layers) {
        l.self_attn.collect(out);
        l.ln1.collect(out);
        l.token_to_image.collect(out);
        l.ln2.collect(out);
        l.mlp.collect(out);
        l.ln3.collect(out);
        l.image_to_token.collect(out);
        l.ln4.collect(out);
    }
    final_attn.collect(out);
    final_ln.collect(out);
    for (ConvTranspose2d& u : upsample) u.collect(out);
    hyper.collect(out);
    out.push_back(&out_bias);
}

// ---- small model -----------------------------------------------------------

SmallCnn::SmallCnn(const std::string& name, const SmallModelConfig& cfg, Rng& rng) {
    const auto& w = cfg.widths;
    require(!w.empty(), ErrorCode::InvalidArgument, "small model needs at least one stage");
    for (int c : w) require(c >= 1, ErrorCode::InvalidArgument, "small model widths must be positive");
    const std::string n = name + ".";
    down_.push_back({Conv2d(n + "down0", 1, w[0], 3, 1, 1, rng)});
    for (std::size_t i = 1; i < w.size(); ++i) {
        const std::string s = n + "down" + std::to_string(i);
        down_.push_back({Conv2d(s + "a", w[i - 1], w[i], 3, 1, 1, rng), Conv2d(s + "b", w[i], w[i], 3, 1, 1, rng)});
    }
    for (std::size_t j = 0; j + 1 < w.size(); ++j) {
        up_.emplace_back(n + "up" + std::to_string(j), w[j + 1], w[j], 2, rng);
        if (j >= 1) fuse_.emplace_back(n + "fuse" + std::to_string(j), w[j], w[j], 3, 1, 1, rng);
    }
    head_ = Conv2d(n + "head", w[0], 1, 3, 1, 1, rng);
}

Var SmallCnn::forward(Graph& g, const Tensor& image) {
    require(image.rank() == 2, ErrorCode::ShapeMismatch, "small model expects [H, W]");
    const int levels = static_cast<int>(down_.size());
    const int h = image.dim(0), w = image.dim(1);
    require(h % (1 << (levels - 1)) == 0 && w % (1 << (levels - 1)) == 0, ErrorCode::ShapeMismatch,
            "image side must be divisible by 2^(stages-1)");
    std::vector<Var> skips;
    Var x = g.constant(standardized(image).reshaped({1, h, w}));
    skips.push_back(ops::gelu(down_[0][0].forward(g, x)));
    for (int i = 1; i < levels; ++i) {
        x = ops::avg_pool(skips.back(), 2);
        for (Conv2d& c : down_[static_cast<std::size_t>(i)]) x = ops::gelu(c.forward(g, x));
        skips.push_back(x);
    }
    Var y = skips.back();
    for (int j = levels - 2; j >= 0; --j) {
        y = ops::add(ops::gelu(up_[static_cast<std::size_t>(j)].forward(g, y)), skips[static_cast<std::size_t>(j)]);
        if (j >= 1) y = ops::gelu(fuse_[static_cast<std::size_t>(j - 1)].forward(g, y));
    }
    return ops::reshape(head_.forward(g, y), {h, w});
}

SmallMask SmallCnn::predict(const imaging::Image& img) {
    Graph g;
    g.set_grad_enabled(false);
    return SmallMask(sigmoid(forward(g, img.pixels()).value()));
}

void SmallCnn::collect(ParameterList& out) {
    for (auto& level : down_)
        for (Conv2d& c : level) c.collect(out);
    for (ConvTranspose2d& u : up_) u.collect(out);
    for (Conv2d& c : fuse_) c.collect(out);
    head_.collect(out);
}

void SmallCnn::set_frozen(bool frozen) {
    ParameterList ps;
    collect(ps);
    freeze_all(ps, frozen);
}

Tensor sigmoid(const Tensor& logits) {
    Tensor out = logits;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return out;
}

Tensor binarize_logits(const Tensor& logits) {
    Tensor out = logits;
    for (double& v : out.data) v = v >= 0.0 ? 1.0 : 0.0;
    return out;
}

// ---- pipeline --------------------------------------------------------------

PreparedInput PreparedInput::from(const imaging::Image& img, double cutoff_ratio) {
    return {img, adapter_input(img, cutoff_ratio), StylePromptEncoder::style_field(img)};
}

PreparedInput PreparedInput::flipped() const {
    auto flip = [](const Tensor& t) {
        Tensor out = t;
        const int h = t.dim(0), w = t.dim(1);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) out.at(r, c) = t.at(r, w - 1 - c);
        return out;
    };
    // Both derived fields commute with a horizontal flip.
    return {image.flipped_horizontally(), flip(filtered), flip(style_field)};
}

LsmModel::LsmModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    EncoderConfig ec{cfg.encoder_depth, cfg.patch_size, cfg.embed_dim, cfg.num_heads, cfg.image_side};
    DecoderConfig dc{cfg.decoder_layers, cfg.embed_dim, cfg.num_heads, cfg.patch_size, ec.grid()};
    HEAdaptConfig ac{cfg.encoder_depth, cfg.patch_size, cfg.embed_dim, cfg.cutoff_ratio};
    Rng r0 = module_rng(seed, 0), r1 = module_rng(seed, 1), r2 = module_rng(seed, 2), r3 = module_rng(seed, 3),
        r4 = module_rng(seed, 4), r5 = module_rng(seed, 5), r6 = module_rng(seed, 6), r7 = module_rng(seed, 7);
    encoder = ImageEncoder("encoder", ec, r0);
    adapter = HEAdapter("adapter", ac, r1);
    decoder = MaskDecoder("decoder", dc, r2);
    small = SmallCnn("small", cfg.small, r3);
    spatial = SpatialPromptEncoder("spatial", cfg.image_side, cfg.patch_size, cfg.embed_dim, r4);
    semantic = SemanticPrompter("semantic", cfg.embed_dim, cfg.classes, cfg.prototypes_per_class, cfg.momentum, r5);
    style = StylePromptEncoder("style", cfg.image_side, cfg.embed_dim, r6);
    dpc = DPCState("dpc", cfg.embed_dim, cfg.adaptive_tokens, r7);
}

ForwardResult LsmModel::forward(Graph& g, const PreparedInput& in, PromptMode mode, bool use_adapter,
                                bool small_on_graph) {
    ForwardResult out;
    Var x0 = encoder.patch_embedding(g, in.image);
    AdapterFeatures feats;
    if (use_adapter) feats = adapter.forward(g, in.filtered, x0);
    out.z = encoder.forward(g, x0, use_adapter ? &feats : nullptr);

    const bool need_small = mode == PromptMode::Full && components.spatial;
    if (small_on_graph) {
        out.small_logits = small.forward(g, in.image.pixels());
        out.small_probs = sigmoid(out.small_logits.value());
    } else if (need_small) {
        out.small_probs = small.predict(in.image).probs();
    }

    DecoderPrompt prompt;
    if (mode == PromptMode::Default) {
        prompt.tokens = g.constant(Tensor({cfg_.adaptive_tokens, cfg_.embed_dim}));
    } else {
        std::optional<PromptTokens> spa, sty;
        if (need_small) {
            try {
                spa = spatial.forward(g, SmallMask(out.small_probs), spatial_cfg);
            } catch (const Error& e) {
                // An empty small-model mask yields no box; the block is then absent.
                if (e.code() != ErrorCode::NoForeground) throw;
            }
        }
        if (components.semantic) out.semantic = semantic.forward(g, out.z);
        if (components.style) sty = style.forward(g, in.style_field);
        prompt = combine(g, spa ? &*spa : nullptr, out.semantic ? &out.semantic->prompt : nullptr,
                         sty ? &*sty : nullptr, dpc);
    }
    out.logits = decoder.forward(g, out.z, prompt);
    return out;
}

Tensor LsmModel::predict_logits(const PreparedInput& in, PromptMode mode, bool use_adapter) {
    Graph g;
    g.set_grad_enabled(false);
    return forward(g, in, mode, use_adapter, false).logits.value();
}

ParameterList LsmModel::parameters() {
    ParameterList ps;
    encoder.collect(ps);
    adapter.collect(ps);
    decoder.collect(ps);
    small.collect(ps);
    spatial.collect(ps);
    semantic.collect(ps);
    style.collect(ps);
    dpc.collect(ps);
    return ps;
}

} // namespace lsm

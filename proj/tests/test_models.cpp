#include "doctest.h"
#include "lsm/error.hpp"
#include "lsm/models.hpp"
#include "support.hpp"

using namespace lsm;
using testing::random_tensor;

namespace {

imaging::Image random_image(int side, std::mt19937_64& rng) {
    return imaging::Image(random_tensor({side, side}, rng, 0.0, 1.0));
}

void randomize(ParameterList ps, std::mt19937_64& rng, double scale = 0.3) {
    for (Parameter* p : ps) p->value = random_tensor(p->value.shape, rng, -scale, scale);
}

ModelConfig probe_config() {
    ModelConfig c;
    c.image_side = 16;
    c.patch_size = 4;
    c.embed_dim = 8;
    c.num_heads = 2;
    c.encoder_depth = 2;
    c.decoder_layers = 1;
    c.small.widths = {4, 6};
    c.prototypes_per_class = 2;
    return c;
}

ParameterList collect(auto& module) {
    ParameterList ps;
    module.collect(ps);
    return ps;
}

} // namespace

TEST_CASE("encoder output shape") {
    Rng rng(1);
    ImageEncoder enc("encoder", EncoderConfig{}, rng);
    std::mt19937_64 r(2);
    ImageEmbedding z = encode_image(enc, random_image(64, r));
    CHECK(z.height == 8);
    CHECK(z.width == 8);
    CHECK(z.dim == 32);
    CHECK(z.data.shape == std::vector<int>{64, 32});
    CHECK_THROWS_AS(encode_image(enc, random_image(32, r)), Error);
}

TEST_CASE("zero adapter leaves the encoder bit-identical, also after randomizing the encoder") {
    std::mt19937_64 r(3);
    for (int rep = 0; rep < 3; ++rep) {
        Rng rng(10 + rep);
        EncoderConfig ec;
        ImageEncoder enc("encoder", ec, rng);
        if (rep > 0) randomize(collect(enc), r);
        HEAdapter adapter("he", HEAdaptConfig{ec.depth, ec.patch_size, ec.embed_dim, 0.25}, rng);
        imaging::Image img = random_image(64, r);
        ImageEmbedding plain = encode_image(enc, img);
        ImageEmbedding adapted = encode_image(enc, img, &adapter);
        CHECK(max_abs_diff(plain.data, adapted.data) == 0.0);
        CHECK(max_abs_diff(plain.data, encode_image(enc, img).data) == 0.0);
    }
}

TEST_CASE("without positions the encoder is permutation equivariant over patches") {
    Rng rng(4);
    EncoderConfig ec;
    ec.image_side = 32;
    ImageEncoder enc("encoder", ec, rng);
    enc.pos_embed.value.fill(0.0);
    std::mt19937_64 r(5);
    Tensor img = random_tensor({32, 32}, r, 0.0, 1.0), swapped = img;
    // Swap patch (0,0) with patch (2,3).
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) std::swap(swapped.at(y, x), swapped.at(16 + y, 24 + x));
    Tensor a = encode_image(enc, imaging::Image(img)).data, b = encode_image(enc, imaging::Image(swapped)).data;
    const int grid = 4, p = 0, q = 2 * grid + 3;
    for (int t = 0; t < grid * grid; ++t) {
        const int src = t == p ? q : t == q ? p : t;
        for (int d = 0; d < ec.embed_dim; ++d) CHECK(std::abs(b.at(t, d) - a.at(src, d)) < 1e-12);
    }
}

TEST_CASE("decoder shape, determinism and prompt sensitivity") {
    Rng rng(6);
    MaskDecoder dec("decoder", DecoderConfig{}, rng);
    std::mt19937_64 r(7);
    randomize({&dec.mask_token}, r);
    Tensor z = random_tensor({64, 32}, r);
    Tensor tokens = random_tensor({10, 32}, r);
    auto run = [&](const Tensor& toks) {
        Graph g;
        g.set_grad_enabled(false);
        return dec.forward(g, g.constant(z), DecoderPrompt{g.constant(toks), Var()}).value();
    };
    Tensor out = run(tokens);
    CHECK(out.shape == std::vector<int>{64, 64});
    CHECK(max_abs_diff(out, run(tokens)) == 0.0);
    for (int t = 0; t < 10; ++t) {
        Tensor perturbed = tokens;
        for (int d = 0; d < 32; ++d) perturbed.at(t, d) += 0.1 * std::sin(3.0 * d + t);
        CHECK(max_abs_diff(out, run(perturbed)) > 0.0);
    }
    // A dense prompt also changes the output.
    Graph g;
    g.set_grad_enabled(false);
    Tensor dense = dec.forward(g, g.constant(z), DecoderPrompt{g.constant(tokens), g.constant(random_tensor({64, 32}, r))}).value();
    CHECK(max_abs_diff(out, dense) > 0.0);
}

TEST_CASE("small model output range, shape and determinism") {
    Rng rng(8);
    SmallCnn small("small", SmallModelConfig{}, rng);
    std::mt19937_64 r(9);
    imaging::Image img = random_image(64, r);
    SmallMask m = small.predict(img);
    CHECK(m.height() == 64);
    CHECK(m.width() == 64);
    for (double v : m.probs().data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK(max_abs_diff(m.probs(), small.predict(img).probs()) == 0.0);
}

TEST_CASE("binarization follows the logit >= 0 convention") {
    Tensor hi({4, 4}, 10.0), lo({4, 4}, -10.0), zero({2, 2}, 0.0);
    for (double v : binarize_logits(hi).data) CHECK(v == 1.0);
    for (double v : binarize_logits(lo).data) CHECK(v == 0.0);
    for (double v : binarize_logits(zero).data) CHECK(v == 1.0);
    CHECK(sigmoid(zero)[0] == 0.5);
    Tensor tiny({1, 2}, {-1e-300, 1e-300});
    CHECK(binarize_logits(tiny)[0] == 0.0);
    CHECK(binarize_logits(tiny)[1] == 1.0);
}

TEST_CASE("full pipeline shapes, determinism and modes") {
    ModelConfig cfg;
    LsmModel model(cfg, 11);
    std::mt19937_64 r(12);
    PreparedInput in = PreparedInput::from(random_image(64, r), cfg.cutoff_ratio);
    for (SpatialMode mode : {SpatialMode::Mask, SpatialMode::Box, SpatialMode::Point}) {
        model.spatial_cfg.mode = mode;
        Tensor a = model.predict_logits(in, PromptMode::Full, true);
        CHECK(a.shape == std::vector<int>{64, 64});
        CHECK(max_abs_diff(a, model.predict_logits(in, PromptMode::Full, true)) == 0.0);
        for (double v : a.data) CHECK(std::isfinite(v));
    }
    Tensor d = model.predict_logits(in, PromptMode::Default, false);
    CHECK(d.shape == std::vector<int>{64, 64});
    // Same seed, same model.
    LsmModel twin(cfg, 11);
    CHECK(max_abs_diff(d, twin.predict_logits(in, PromptMode::Default, false)) == 0.0);
}

TEST_CASE("encoder parameters pass finite differences") {
    ModelConfig cfg = probe_config();
    LsmModel model(cfg, 13);
    std::mt19937_64 r(14);
    randomize(collect(model.adapter), r);
    imaging::Image img = random_image(16, r);
    Tensor filtered = adapter_input(img, cfg.cutoff_ratio);
    ParameterList ps = collect(model.encoder);
    auto res = testing::gradcheck(
        [&](Graph& g) {
            Var x0 = model.encoder.patch_embedding(g, img);
            AdapterFeatures f = model.adapter.forward(g, filtered, x0);
            return testing::probe_sum(model.encoder.forward(g, x0, &f));
        },
        ps, 1e-4, 6);
    CHECK(res.probes >= 20);
    CHECK(res.max_rel < 1e-3);
    for (Parameter* p : ps) {
        double n = 0;
        for (double v : p->grad.data) n += std::abs(v);
        CHECK_MESSAGE(n > 0.0, p->name);
    }
}

TEST_CASE("decoder parameters pass finite differences, with sparse and dense prompts") {
    ModelConfig cfg = probe_config();
    LsmModel model(cfg, 15);
    std::mt19937_64 r(16);
    randomize({&model.decoder.mask_token}, r);
    Tensor z = random_tensor({16, 8}, r), toks = random_tensor({3, 8}, r), dense = random_tensor({16, 8}, r);
    ParameterList ps = collect(model.decoder);
    for (bool with_dense : {false, true}) {
        auto res = testing::gradcheck(
            [&](Graph& g) {
                DecoderPrompt p{g.constant(toks), with_dense ? g.constant(dense) : Var()};
                return testing::probe_sum(model.decoder.forward(g, g.constant(z), p));
            },
            ps, 1e-4, 6);
        CHECK(res.probes >= 20);
        CHECK(res.max_rel < 1e-3);
    }
    for (Parameter* p : ps) {
        double n = 0;
        for (double v : p->grad.data) n += std::abs(v);
        CHECK_MESSAGE(n > 0.0, p->name);
    }
}

TEST_CASE("small model parameters pass finite differences") {
    ModelConfig cfg = probe_config();
    LsmModel model(cfg, 17);
    std::mt19937_64 r(18);
    Tensor img = random_tensor({16, 16}, r, 0.0, 1.0);
    ParameterList ps = collect(model.small);
    auto res = testing::gradcheck([&](Graph& g) { return testing::probe_sum(model.small.forward(g, img)); }, ps, 1e-4, 8);
    CHECK(res.probes >= 20);
    CHECK(res.max_rel < 1e-3);
}

TEST_CASE("prompt encoders and combiner pass finite differences through the full pipeline") {
    ModelConfig cfg = probe_config();
    LsmModel model(cfg, 19);
    std::mt19937_64 r(20);
    randomize(collect(model.dpc), r, 1.0);
    randomize({&model.decoder.mask_token}, r);
    PreparedInput in = PreparedInput::from(random_image(16, r), cfg.cutoff_ratio);
    for (SpatialMode mode : {SpatialMode::Mask, SpatialMode::Point}) {
        model.spatial_cfg.mode = mode;
        model.spatial_cfg.grid_size = 2;
        ParameterList ps;
        model.spatial.collect(ps);
        model.style.collect(ps);
        model.semantic.collect(ps);
        model.dpc.collect(ps);
        auto res = testing::gradcheck(
            [&](Graph& g) { return testing::probe_sum(model.forward(g, in, PromptMode::Full, true, false).logits); }, ps,
            1e-4, 6);
        CHECK(res.probes >= 20);
        CHECK(res.max_rel < 1e-3);
    }
}

TEST_CASE("encoder and small model ignore a positive affine change of brightness") {
    ModelConfig cfg = probe_config();
    LsmModel model(cfg, 21);
    std::mt19937_64 r(22);
    Tensor base = random_tensor({16, 16}, r, 0.2, 0.6);
    Tensor shifted = base;
    for (double& v : shifted.data) v = 0.5 * v + 0.3;
    const imaging::Image a(base), b(shifted);
    CHECK(max_abs_diff(encode_image(model.encoder, a).data, encode_image(model.encoder, b).data) <= 1e-9);
    CHECK(max_abs_diff(model.small.predict(a).probs(), model.small.predict(b).probs()) <= 1e-9);
    // Constant images are defined.
    Tensor flat = model.small.predict(imaging::Image(Tensor({16, 16}, 0.7))).probs();
    for (double v : flat.data) CHECK(std::isfinite(v));
}

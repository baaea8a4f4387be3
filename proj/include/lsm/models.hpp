#pragma once

#include <cstdint>
#include <vector>

#include "lsm/adapters.hpp"
#include "lsm/combiner.hpp"
#include "lsm/imaging.hpp"
#include "lsm/prompters.hpp"

namespace lsm {

struct EncoderConfig {
    int depth = 2;
    int patch_size = 8;
    int embed_dim = 32;
    int num_heads = 2;
    int image_side = 64;

    int grid() const { return image_side / patch_size; }
    int tokens() const { return grid() * grid(); }
};

struct DecoderConfig {
    int num_layers = 2;
    int embed_dim = 32;
    int num_heads = 2;
    int upsample_factor = 8; // equals the encoder patch size
    int grid = 8;
};

struct SmallModelConfig {
    std::vector<int> widths{8, 16};
};

struct EncoderBlock {
    LayerNorm ln1;
    Attention attn;
    LayerNorm ln2;
    Mlp mlp;
};

class ImageEncoder {
public:
    ImageEncoder() = default;
    ImageEncoder(const std::string& name, const EncoderConfig& cfg, Rng& rng);

    /// Linear embedding of the raw patches, before positions are added.
    Var patch_embedding(Graph& g, const imaging::Image& img);
    /// Positions, transformer blocks (with optional adapter injection after each) and the neck. [tokens, D]
    Var forward(Graph& g, Var patch_tokens, const AdapterFeatures* adapter = nullptr);
    Var forward(Graph& g, const imaging::Image& img, const AdapterFeatures* adapter = nullptr);

    void collect(ParameterList& out);
    void set_frozen(bool frozen);
    const EncoderConfig& config() const { return cfg_; }

    Linear patch_embed;
    Parameter pos_embed; // [tokens, D]
    std::vector<EncoderBlock> blocks;
    LayerNorm neck;

private:
    EncoderConfig cfg_;
};

/// Encoder output as an embedding grid, adapter optional.
ImageEmbedding encode_image(ImageEncoder& encoder, const imaging::Image& img, HEAdapter* adapter = nullptr);

struct TwoWayLayer {
    Attention self_attn;
    LayerNorm ln1;
    Attention token_to_image;
    LayerNorm ln2;
    Mlp mlp;
    LayerNorm ln3;
    Attention image_to_token;
    LayerNorm ln4;
};

class MaskDecoder {
public:
    MaskDecoder() = default;
    MaskDecoder(const std::string& name, const DecoderConfig& cfg, Rng& rng);

    /// z is [grid*grid, D]; returns [grid*f, grid*f] logits.
    Var forward(Graph& g, Var z, const DecoderPrompt& prompt);

    void collect(ParameterList& out);
    const DecoderConfig& config() const { return cfg_; }

    Parameter mask_token; // [1, D]
    std::vector<TwoWayLayer> layers;
    Attention final_attn;
    LayerNorm final_ln;
    std::vector<ConvTranspose2d> upsample;
    Mlp hyper;
    Parameter out_bias; // [1]

private:
    DecoderConfig cfg_;
};

/// Encoder-decoder CNN with skip connections; logits at input resolution.
class SmallCnn {
public:
    SmallCnn() = default;
    SmallCnn(const std::string& name, const SmallModelConfig& cfg, Rng& rng);

    Var forward(Graph& g, const Tensor& image);
    SmallMask predict(const imaging::Image& img);

    void collect(ParameterList& out);
    void set_frozen(bool frozen);

private:
    std::vector<std::vector<Conv2d>> down_;
    std::vector<ConvTranspose2d> up_;
    std::vector<Conv2d> fuse_;
    Conv2d head_;
};

Tensor sigmoid(const Tensor& logits);
/// sigmoid(logit) >= 0.5, i.e. logit >= 0, gives 1.
Tensor binarize_logits(const Tensor& logits);

struct ModelConfig {
    int image_side = 64;
    int patch_size = 8;
    int embed_dim = 32;
    int num_heads = 2;
    int encoder_depth = 2;
    int decoder_layers = 2;
    SmallModelConfig small;
    int classes = 2;
    int prototypes_per_class = 3;
    double momentum = 0.999;
    int adaptive_tokens = 1;
    double cutoff_ratio = 0.25;
};

/// Which pieces take part in the full forward pass.
struct Components {
    bool he_adapt = true;
    bool spatial = true;
    bool semantic = true;
    bool style = true;
    bool dpc = true;
};

enum class PromptMode {
    Default, // T_a zero tokens, adapter per Components, no prompt machinery
    Full,
};

/// An image plus the derived fields the pipeline reads from it.
struct PreparedInput {
    imaging::Image image;
    Tensor filtered;    // adapter input
    Tensor style_field; // amplitude-only field

    static PreparedInput from(const imaging::Image& img, double cutoff_ratio);
    PreparedInput flipped() const;
};

struct ForwardResult {
    Var logits;       // [H, W]
    Var small_logits; // valid when the small model ran on the graph
    Tensor small_probs;
    Var z;
    std::optional<SemanticOutput> semantic;
};

class LsmModel {
public:
    LsmModel() = default;
    LsmModel(const ModelConfig& cfg, std::uint64_t seed);

    /// `small_on_graph` records the small model on g (for its own loss); its
    /// mask always reaches the prompters as a constant.
    ForwardResult forward(Graph& g, const PreparedInput& in, PromptMode mode, bool use_adapter, bool small_on_graph);

    Tensor predict_logits(const PreparedInput& in, PromptMode mode, bool use_adapter);

    /// Every parameter tensor in a stable order (the prototype bank is not a parameter).
    ParameterList parameters();
    const ModelConfig& config() const { return cfg_; }

    ImageEncoder encoder;
    HEAdapter adapter;
    MaskDecoder decoder;
    SmallCnn small;
    SpatialPromptEncoder spatial;
    SemanticPrompter semantic;
    StylePromptEncoder style;
    DPCState dpc;

    Components components;
    SpatialPromptConfig spatial_cfg;

private:
    ModelConfig cfg_;
};

} // namespace lsm

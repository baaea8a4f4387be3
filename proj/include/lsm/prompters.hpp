#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lsm/imaging.hpp"
#include "lsm/layers.hpp"

namespace lsm {

enum class PromptKind { SpatialSparse, SpatialDense, Semantic, Style, Adaptive, Combined };
enum class SpatialMode { Mask, Box, Point };

const char* to_string(PromptKind kind);
const char* to_string(SpatialMode mode);
SpatialMode parse_spatial_mode(const std::string& text);

/// Per-pixel foreground confidence of the small model, values in [0, 1].
class SmallMask {
public:
    SmallMask() = default;
    explicit SmallMask(Tensor probs);

    int height() const { return probs_.dim(0); }
    int width() const { return probs_.dim(1); }
    double at(int r, int c) const { return probs_.at(r, c); }
    const Tensor& probs() const { return probs_; }

private:
    Tensor probs_;
};

struct PixelCoord {
    int row = 0;
    int col = 0;
    bool operator==(const PixelCoord&) const = default;
};

struct BoxPrompt {
    PixelCoord top_left;
    PixelCoord bottom_right;
};

struct PointPrompts {
    std::vector<PixelCoord> points;
    std::vector<int> labels; // 1 = positive, 0 = negative
    int grid_size = 0;
};

/// Embedding grid Z in token layout: data is [height * width, dim], row-major cells.
struct ImageEmbedding {
    int height = 0;
    int width = 0;
    int dim = 0;
    Tensor data;

    ImageEmbedding() = default;
    ImageEmbedding(int h, int w, Tensor tokens);
};

/// C*K unit-norm prototypes; row j = c * K + k.
struct Prototypes {
    int classes = 0;
    int per_class = 0;
    double momentum = 0.999;
    Tensor vectors; // [C*K, D]

    int count() const { return classes * per_class; }
    int dim() const { return vectors.dim(1); }
    static Prototypes random(int classes, int per_class, int dim, double momentum, Rng& rng);
};

struct PseudoMask {
    int classes = 0;
    int per_class = 0;
    std::vector<int> labels;   // c*
    std::vector<int> chosen_k; // k*
    Tensor similarity;         // [cells, C*K]
};

struct PromptEmbedding {
    Tensor tokens; // [T, Dp]
    PromptKind kind = PromptKind::Combined;

    int token_count() const { return tokens.dim(0); }
    int width() const { return tokens.dim(1); }
};

/// Graph-side counterpart of PromptEmbedding.
struct PromptTokens {
    Var tokens;
    PromptKind kind = PromptKind::Combined;

    int token_count() const { return tokens.value().dim(0); }
};

// ---- spatial prompter ----------------------------------------------------

/// Tight box around all pixels with probability >= bin_threshold. Throws NoForeground.
BoxPrompt mask_to_box(const SmallMask& mask, double bin_threshold = 0.5);

/// One point per cell of a g x g grid (edge cells absorb remainders): the most
/// confident pixel (label 1) if any pixel reaches tau, else the least confident
/// pixel (label 0). Ties go to the row-major first pixel.
PointPrompts mask_to_grid_points(const SmallMask& mask, int grid_size, double tau);

/// Sinusoidal encoding of a normalized (row, col) position into `width` channels.
std::vector<double> positional_encoding(double row01, double col01, int width);

struct SpatialPromptConfig {
    SpatialMode mode = SpatialMode::Mask;
    int grid_size = 4;
    double tau = 0.4;
    double box_threshold = 0.5;
};

/// Prompt encoder for the spatial prompt: a strided conv stack for dense masks
/// and positional + learned type embeddings for boxes and points.
class SpatialPromptEncoder {
public:
    SpatialPromptEncoder() = default;
    SpatialPromptEncoder(const std::string& name, int image_side, int patch, int width, Rng& rng);

    /// The mask is treated as a constant input (no gradient reaches the small model).
    PromptTokens forward(Graph& g, const SmallMask& mask, const SpatialPromptConfig& cfg);
    PromptEmbedding encode(const SmallMask& mask, const SpatialPromptConfig& cfg);

    void collect(ParameterList& out);
    int width() const { return width_; }

private:
    Var dense(Graph& g, const SmallMask& mask);
    Var sparse(Graph& g, const std::vector<PixelCoord>& coords, const std::vector<int>& type_ids, Parameter& types,
               int height, int width);

    std::vector<Conv2d> dense_stack_;
    Parameter label_embed_;  // [2, width]: negative, positive
    Parameter corner_embed_; // [2, width]: top-left, bottom-right
    int width_ = 0;
};

// ---- semantic prompter ---------------------------------------------------

/// Cosine similarity of each projected cell against every prototype and the
/// lexicographically first argmax. Throws ZeroNormEmbedding.
PseudoMask pseudo_mask(const ImageEmbedding& projected, const Prototypes& protos);
PseudoMask pseudo_mask_from_similarity(const Tensor& similarity, int classes, int per_class);

/// Mean of the cells of Z labelled c; zero vector when no cell carries c.
std::vector<double> masked_average_pooling(const ImageEmbedding& z, const PseudoMask& pseudo, int c);

/// p <- normalize(mu * p + (1 - mu) * mean(assigned projected cells)); unassigned prototypes are kept.
Prototypes update_prototypes(const Prototypes& protos, const ImageEmbedding& projected, const PseudoMask& pseudo);

struct SemanticOutput {
    PromptTokens prompt;  // C tokens
    Var similarity;       // [cells, C*K], differentiable w.r.t. the projector
    PseudoMask pseudo;
    Tensor projected;     // values of Z-bar, [cells, D]
};

class SemanticPrompter {
public:
    SemanticPrompter() = default;
    SemanticPrompter(const std::string& name, int dim, int classes, int per_class, double momentum, Rng& rng);

    SemanticOutput forward(Graph& g, Var z);
    PromptEmbedding prompt(const ImageEmbedding& z);

    void collect(ParameterList& out);
    Parameter& projector() { return projector_.weight; }
    Prototypes& prototypes() { return protos_; }
    const Prototypes& prototypes() const { return protos_; }

private:
    Linear projector_;
    Prototypes protos_;
};

// ---- style prompter ------------------------------------------------------

/// Amplitude-only reconstruction, min-max normalized, then a small conv block
/// pooled to a fixed token grid.
class StylePromptEncoder {
public:
    StylePromptEncoder() = default;
    StylePromptEncoder(const std::string& name, int image_side, int width, Rng& rng);

    PromptTokens forward(Graph& g, const imaging::Image& img);
    /// Same, with style_field() precomputed.
    PromptTokens forward(Graph& g, const Tensor& field);
    PromptEmbedding encode(const imaging::Image& img);

    /// Normalized amplitude-only field fed to the conv block.
    static Tensor style_field(const imaging::Image& img);

    void collect(ParameterList& out);
    int token_count() const { return tokens_side_ * tokens_side_; }

private:
    Conv2d conv1_;
    Conv2d conv2_;
    int pool_ = 1;
    int tokens_side_ = 1;
};

} // namespace lsm

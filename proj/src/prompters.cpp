#include "lsm/prompters.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lsm/error.hpp"

namespace lsm {

const char* to_string(PromptKind kind) {
    switch (kind) {
    case PromptKind::SpatialSparse: return "spatial-sparse";
    case PromptKind::SpatialDense: return "spatial-dense";
    case PromptKind::Semantic: return "semantic";
    case PromptKind::Style: return "style";
    case PromptKind::Adaptive: return "adaptive";
    case PromptKind::Combined: return "combined";
    }
    return "unknown";
}

const char* to_string(SpatialMode mode) {
    switch (mode) {
    case SpatialMode::Mask: return "mask";
    case SpatialMode::Box: return "box";
    case SpatialMode::Point: return "point";
    }
    return "unknown";
}

SpatialMode parse_spatial_mode(const std::string& text) {
    if (text == "mask") return SpatialMode::Mask;
    if (text == "box") return SpatialMode::Box;
    if (text == "point") return SpatialMode::Point;
    throw Error(ErrorCode::InvalidArgument, "unknown spatial mode '" + text + "' (expected mask|box|point)");
}

SmallMask::SmallMask(Tensor probs) : probs_(std::move(probs)) {
    require(probs_.rank() == 2, ErrorCode::ShapeMismatch, "small mask must be [H, W]");
    for (double v : probs_.data)
        require(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorCode::InvalidArgument,
                "small mask probabilities must lie in [0, 1]");
}

ImageEmbedding::ImageEmbedding(int h, int w, Tensor tokens) : height(h), width(w), data(std::move(tokens)) {
    require(data.rank() == 2 && data.dim(0) == h * w, ErrorCode::ShapeMismatch,
            "embedding tokens " + shape_string(data.shape) + " do not match a " + std::to_string(h) + "x" +
                std::to_string(w) + " grid");
    dim = data.dim(1);
    require(all_finite(data.values()), ErrorCode::InvalidArgument, "embedding has non-finite values");
}

Prototypes Prototypes::random(int classes, int per_class, int dim, double momentum, Rng& rng) {
    require(classes >= 1 && per_class >= 1 && dim >= 1, ErrorCode::InvalidArgument, "prototype bank extent");
    require(momentum >= 0.0 && momentum <= 1.0, ErrorCode::InvalidArgument, "momentum must be in [0, 1]");
    Prototypes p;
    p.classes = classes;
    p.per_class = per_class;
    p.momentum = momentum;
    p.vectors = Tensor({classes * per_class, dim});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int j = 0; j < p.count(); ++j) {
        double norm = 0.0;
        do {
            norm = 0.0;
            for (int d = 0; d < dim; ++d) {
                p.vectors.at(j, d) = normal(rng);
                norm += p.vectors.at(j, d) * p.vectors.at(j, d);
            }
        } while (norm < 1e-12);
        norm = std::sqrt(norm);
        for (int d = 0; d < dim; ++d) p.vectors.at(j, d) /= norm;
    }
    return p;
}

// ---- spatial ---------------------------------------------------------------

BoxPrompt mask_to_box(const SmallMask& mask, double bin_threshold) {
    require(bin_threshold > 0.0 && bin_threshold < 1.0, ErrorCode::InvalidArgument, "bin_threshold must be in (0, 1)");
    int r0 = mask.height(), c0 = mask.width(), r1 = -1, c1 = -1;
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c)
            if (mask.at(r, c) >= bin_threshold) {
                r0 = std::min(r0, r);
                c0 = std::min(c0, c);
                r1 = std::max(r1, r);
                c1 = std::max(c1, c);
            }
    if (r1 < 0) throw Error(ErrorCode::NoForeground, "no pixel reaches the box threshold");
    return BoxPrompt{{r0, c0}, {r1, c1}};
}

PointPrompts mask_to_grid_points(const SmallMask& mask, int grid_size, double tau) {
    const int h = mask.height(), w = mask.width();
    require(grid_size >= 1 && grid_size <= std::min(h, w), ErrorCode::InvalidArgument,
            "grid size must be in [1, min(H, W)]");
    require(tau > 0.0 && tau < 1.0, ErrorCode::InvalidArgument, "tau must be in (0, 1)");
    const int cell_h = h / grid_size, cell_w = w / grid_size;
    PointPrompts out;
    out.grid_size = grid_size;
    for (int gy = 0; gy < grid_size; ++gy) {
        const int rb = gy * cell_h, re = gy == grid_size - 1 ? h : rb + cell_h;
        for (int gx = 0; gx < grid_size; ++gx) {
            const int cb = gx * cell_w, ce = gx == grid_size - 1 ? w : cb + cell_w;
            PixelCoord best{rb, cb}, worst{rb, cb};
            double best_v = mask.at(rb, cb), worst_v = best_v;
            for (int r = rb; r < re; ++r)
                for (int c = cb; c < ce; ++c) {
                    const double v = mask.at(r, c);
                    if (v > best_v) {
                        best_v = v;
                        best = {r, c};
                    }
                    if (v < worst_v) {
                        worst_v = v;
                        worst = {r, c};
                    }
                }
            if (best_v >= tau) {
                out.points.push_back(best);
                out.labels.push_back(1);
            } else {
                out.points.push_back(worst);
                out.labels.push_back(0);
            }
        }
    }
    return out;
}

std::vector<double> positional_encoding(double row01, double col01, int width) {
    require(width % 4 == 0, ErrorCode::InvalidArgument, "positional encoding width must be a multiple of 4");
    std::vector<double> pe(static_cast<std::size_t>(width));
    const int bands = width / 4;
    for (int f = 0; f < bands; ++f) {
        const double freq = 0.5 * std::pow(2.0, 0.5 * f);
        const double ar = 2.0 * std::numbers::pi * freq * row01;
        const double ac = 2.0 * std::numbers::pi * freq * col01;
        pe[4 * f + 0] = std::sin(ar);
        pe[4 * f + 1] = std::cos(ar);
        pe[4 * f + 2] = std::sin(ac);
        pe[4 * f + 3] = std::cos(ac);
    }
    return pe;
}

SpatialPromptEncoder::SpatialPromptEncoder(const std::string& name, int image_side, int patch, int width, Rng& rng)
    : width_(width) {
    require(patch >= 2 && (patch & (patch - 1)) == 0, ErrorCode::InvalidArgument,
            "dense prompt encoder needs a power-of-two patch size >= 2");
    require(image_side % patch == 0, ErrorCode::ShapeMismatch, "patch must divide the image side");
    int stages = 0;
    for (int p = patch; p > 1; p >>= 1) ++stages;
    int in = 1;
    for (int s = 0; s < stages; ++s) {
        const int out = s == stages - 1 ? width : std::min(width, 4 << (2 * s));
        dense_stack_.emplace_back(name + ".dense" + std::to_string(s), in, out, 2, 2, 0, rng);
        in = out;
    }
    std::normal_distribution<double> normal(0.0, 0.02);
    Tensor labels({2, width}), corners({2, width});
    for (double& v : labels.data) v = normal(rng);
    for (double& v : corners.data) v = normal(rng);
    label_embed_ = Parameter(name + ".label_embed", std::move(labels));
    corner_embed_ = Parameter(name + ".corner_embed", std::move(corners));
}

Var SpatialPromptEncoder::dense(Graph& g, const SmallMask& mask) {
    Var x = g.constant(mask.probs().reshaped({1, mask.height(), mask.width()}));
    for (std::size_t s = 0; s < dense_stack_.size(); ++s) {
        x = dense_stack_[s].forward(g, x);
        if (s + 1 < dense_stack_.size()) x = ops::gelu(x);
    }
    return map_to_tokens(x);
}

Var SpatialPromptEncoder::sparse(Graph& g, const std::vector<PixelCoord>& coords, const std::vector<int>& type_ids,
                                 Parameter& types, int height, int width) {
    const int n = static_cast<int>(coords.size());
    Tensor pe({n, width_});
    for (int i = 0; i < n; ++i) {
        const auto enc = positional_encoding((coords[static_cast<std::size_t>(i)].row + 0.5) / height,
                                             (coords[static_cast<std::size_t>(i)].col + 0.5) / width, width_);
        for (int d = 0; d < width_; ++d) pe.at(i, d) = enc[static_cast<std::size_t>(d)];
    }
    Var table = g.param(types);
    std::vector<Var> rows;
    rows.reserve(type_ids.size());
    for (int id : type_ids) rows.push_back(ops::slice_rows(table, id, id + 1));
    return ops::add(g.constant(std::move(pe)), ops::concat_rows(rows));
}

PromptTokens SpatialPromptEncoder::forward(Graph& g, const SmallMask& mask, const SpatialPromptConfig& cfg) {
    switch (cfg.mode) {
    case SpatialMode::Mask: return {dense(g, mask), PromptKind::SpatialDense};
    case SpatialMode::Box: {
        const BoxPrompt box = mask_to_box(mask, cfg.box_threshold);
        return {sparse(g, {box.top_left, box.bottom_right}, {0, 1}, corner_embed_, mask.height(), mask.width()),
                PromptKind::SpatialSparse};
    }
    case SpatialMode::Point: {
        const PointPrompts pts = mask_to_grid_points(mask, cfg.grid_size, cfg.tau);
        return {sparse(g, pts.points, pts.labels, label_embed_, mask.height(), mask.width()),
                PromptKind::SpatialSparse};
    }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown spatial mode");
}

PromptEmbedding SpatialPromptEncoder::encode(const SmallMask& mask, const SpatialPromptConfig& cfg) {
    Graph g;
    g.set_grad_enabled(false);
    PromptTokens t = forward(g, mask, cfg);
    return {t.tokens.value(), t.kind};
}

void SpatialPromptEncoder::collect(ParameterList& out) {
    for (Conv2d& c : dense_stack_) c.collect(out);
    out.push_back(&label_embed_);
    out.push_back(&corner_embed_);
}

// ---- semantic --------------------------------------------------------------

PseudoMask pseudo_mask_from_similarity(const Tensor& similarity, int classes, int per_class) {
    require(similarity.rank() == 2 && similarity.dim(1) == classes * per_class, ErrorCode::ShapeMismatch,
            "similarity width must equal C*K");
    PseudoMask pm;
    pm.classes = classes;
    pm.per_class = per_class;
    pm.similarity = similarity;
    const int cells = similarity.dim(0);
    pm.labels.resize(static_cast<std::size_t>(cells));
    pm.chosen_k.resize(static_cast<std::size_t>(cells));
    for (int t = 0; t < cells; ++t) {
        int best = 0;
        for (int j = 1; j < classes * per_class; ++j)
            if (similarity.at(t, j) > similarity.at(t, best)) best = j;
        pm.labels[static_cast<std::size_t>(t)] = best / per_class;
        pm.chosen_k[static_cast<std::size_t>(t)] = best % per_class;
    }
    return pm;
}

PseudoMask pseudo_mask(const ImageEmbedding& projected, const Prototypes& protos) {
    require(projected.dim == protos.dim(), ErrorCode::ShapeMismatch, "embedding and prototype widths differ");
    Graph g;
    g.set_grad_enabled(false);
    Var s = ops::cosine_similarity(g.constant(projected.data), protos.vectors);
    return pseudo_mask_from_similarity(s.value(), protos.classes, protos.per_class);
}

std::vector<double> masked_average_pooling(const ImageEmbedding& z, const PseudoMask& pseudo, int c) {
    require(c >= 0 && c < pseudo.classes, ErrorCode::InvalidArgument, "class index out of range");
    require(static_cast<int>(pseudo.labels.size()) == z.height * z.width, ErrorCode::ShapeMismatch,
            "pseudo mask does not cover the embedding grid");
    std::vector<double> acc(static_cast<std::size_t>(z.dim), 0.0);
    int count = 0;
    for (int t = 0; t < z.height * z.width; ++t) {
        if (pseudo.labels[static_cast<std::size_t>(t)] != c) continue;
        ++count;
        for (int d = 0; d < z.dim; ++d) acc[static_cast<std::size_t>(d)] += z.data.at(t, d);
    }
    if (count > 0)
        for (double& v : acc) v /= count;
    return acc;
}

Prototypes update_prototypes(const Prototypes& protos, const ImageEmbedding& projected, const PseudoMask& pseudo) {
    require(projected.dim == protos.dim(), ErrorCode::ShapeMismatch, "embedding and prototype widths differ");
    require(pseudo.labels.size() == static_cast<std::size_t>(projected.data.dim(0)), ErrorCode::ShapeMismatch,
            "pseudo mask does not cover the embedding");
    const int d = protos.dim();
    Tensor sums({protos.count(), d});
    std::vector<int> counts(static_cast<std::size_t>(protos.count()), 0);
    for (std::size_t t = 0; t < pseudo.labels.size(); ++t) {
        const int j = pseudo.labels[t] * protos.per_class + pseudo.chosen_k[t];
        ++counts[static_cast<std::size_t>(j)];
        for (int k = 0; k < d; ++k) sums.at(j, k) += projected.data.at(static_cast<int>(t), k);
    }
    Prototypes out = protos;
    const double mu = protos.momentum;
    for (int j = 0; j < protos.count(); ++j) {
        const int n = counts[static_cast<std::size_t>(j)];
        if (n == 0) continue;
        double norm = 0.0;
        std::vector<double> v(static_cast<std::size_t>(d));
        for (int k = 0; k < d; ++k) {
            v[static_cast<std::size_t>(k)] = mu * protos.vectors.at(j, k) + (1.0 - mu) * sums.at(j, k) / n;
            norm += v[static_cast<std::size_t>(k)] * v[static_cast<std::size_t>(k)];
        }
        norm = std::sqrt(norm);
        // A blend that cancels exactly keeps the old prototype.
        if (norm < 1e-12) continue;
        for (int k = 0; k < d; ++k) out.vectors.at(j, k) = v[static_cast<std::size_t>(k)] / norm;
    }
    return out;
}

SemanticPrompter::SemanticPrompter(const std::string& name, int dim, int classes, int per_class, double momentum,
                                   Rng& rng)
    : projector_(name + ".projector", dim, dim, rng, Init::Xavier, false) {
    projector_.weight.value.fill(0.0);
    for (int i = 0; i < dim; ++i) projector_.weight.value.at(i, i) = 1.0;
    protos_ = Prototypes::random(classes, per_class, dim, momentum, rng);
}

SemanticOutput SemanticPrompter::forward(Graph& g, Var z) {
    SemanticOutput out;
    Var zbar = projector_.forward(g, z);
    out.similarity = ops::cosine_similarity(zbar, protos_.vectors);
    out.pseudo = pseudo_mask_from_similarity(out.similarity.value(), protos_.classes, protos_.per_class);
    out.projected = zbar.value();
    out.prompt = {ops::masked_average_pool(z, out.pseudo.labels, protos_.classes), PromptKind::Semantic};
    return out;
}

PromptEmbedding SemanticPrompter::prompt(const ImageEmbedding& z) {
    Graph g;
    g.set_grad_enabled(false);
    SemanticOutput out = forward(g, g.constant(z.data));
    return {out.prompt.tokens.value(), PromptKind::Semantic};
}

void SemanticPrompter::collect(ParameterList& out) { projector_.collect(out); }

// ---- style -----------------------------------------------------------------

StylePromptEncoder::StylePromptEncoder(const std::string& name, int image_side, int width, Rng& rng)
    : conv1_(name + ".conv1", 1, 8, 4, 4, 0, rng), conv2_(name + ".conv2", 8, width, 4, 4, 0, rng) {
    require(image_side % 16 == 0, ErrorCode::ShapeMismatch, "style encoder needs an image side divisible by 16");
    const int reduced = image_side / 16;
    tokens_side_ = std::min(2, reduced);
    require(reduced % tokens_side_ == 0, ErrorCode::ShapeMismatch, "style token grid does not divide the feature map");
    pool_ = reduced / tokens_side_;
}

Tensor StylePromptEncoder::style_field(const imaging::Image& img) {
    return imaging::min_max_normalize(imaging::amplitude_only_reconstruct(img).values);
}

PromptTokens StylePromptEncoder::forward(Graph& g, const imaging::Image& img) {
    return forward(g, style_field(img));
}

PromptTokens StylePromptEncoder::forward(Graph& g, const Tensor& field) {
    require(field.rank() == 2, ErrorCode::ShapeMismatch, "style field must be [H, W]");
    Var x = g.constant(field.reshaped({1, field.dim(0), field.dim(1)}));
    x = ops::gelu(conv1_.forward(g, x));
    x = conv2_.forward(g, x);
    if (pool_ > 1) x = ops::avg_pool(x, pool_);
    return {map_to_tokens(x), PromptKind::Style};
}

PromptEmbedding StylePromptEncoder::encode(const imaging::Image& img) {
    Graph g;
    g.set_grad_enabled(false);
    PromptTokens t = forward(g, img);
    return {t.tokens.value(), t.kind};
}

void StylePromptEncoder::collect(ParameterList& out) {
    conv1_.collect(out);
    conv2_.collect(out);
}

} // namespace lsm

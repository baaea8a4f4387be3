#pragma once

#include <optional>
#include <vector>

#include "lsm/autodiff.hpp"

namespace lsm {

// All pixel losses take logits [H, W] and a binary target of the same shape and
// return a scalar Var (shape {1}) averaged over pixels.

Var focal_loss(Var logits, const Tensor& target, double gamma = 2.0, double alpha = 1.0);
Var ce_loss(Var logits, const Tensor& target);
/// 1 - sum(p*y) / (sum(p) + sum(y) - sum(p*y)); 0 when the union is empty.
Var iou_loss(Var logits, const Tensor& target);

/// Cross-entropy over per-class logits max_k S[t, c*K+k] / temperature against
/// grid labels, averaged over cells. S is [cells, C*K].
Var proto_loss(Var similarity, const std::vector<int>& labels, int classes, int per_class, double temperature = 0.1);

/// Majority vote of the binary mask inside each patch (ties go to foreground).
std::vector<int> grid_labels(const Tensor& mask, int patch);

enum class Stage { OneStage, Stage1, Stage2 };
const char* to_string(Stage s);

struct LossParts {
    std::optional<double> focal, ce, iou, proto, small;
};

struct LossReport {
    Stage stage = Stage::OneStage;
    double focal = 0.0;
    double ce = 0.0;
    double iou = 0.0;
    double proto = 0.0;
    double small = 0.0;
    double total = 0.0;

    double large() const { return focal + ce + iou + proto; }
};

/// One-stage: focal+ce+iou+proto + lambda*small. Stage 1: focal+ce+iou (proto
/// is zero by definition) + small, whose parameters are disjoint. Stage 2:
/// focal+ce+iou+proto. Throws MissingComponent, NonFiniteLoss.
LossReport compose(Stage stage, const LossParts& parts, double lambda = 1.0);

} // namespace lsm

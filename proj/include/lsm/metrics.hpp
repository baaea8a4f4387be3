#pragma once

#include <cstdint>
#include <vector>

#include "lsm/tensor.hpp"

namespace lsm {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    bool operator==(const ConfusionCounts&) const = default;
};

struct Metrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double iou = 0.0;
};

/// Pixels > 0.5 count as foreground in both masks. Throws ShapeMismatch.
ConfusionCounts confusion_counts(const Tensor& pred, const Tensor& gt);
/// Zero denominators give 0.
Metrics metrics(const ConfusionCounts& c);

struct PRPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

using PRCurve = std::vector<PRPoint>;

/// Pooled-pixel precision/recall of (score >= t) at each threshold; thresholds
/// must be strictly increasing in [0, 1]. Throws ShapeMismatch, InvalidArgument.
PRCurve pr_curve(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts, const std::vector<double>& thresholds);
/// n uniformly spaced thresholds over [0, 1] (n >= 2).
PRCurve pr_curve(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts, int num_thresholds);

} // namespace lsm

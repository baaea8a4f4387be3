#include "lsm/metrics.hpp"

#include "lsm/error.hpp"

namespace lsm {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

ConfusionCounts confusion_counts(const Tensor& pred, const Tensor& gt) {
    require(pred.same_shape(gt), ErrorCode::ShapeMismatch,
            "prediction " + shape_string(pred.shape) + " vs ground truth " + shape_string(gt.shape));
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > 0.5, g = gt[i] > 0.5;
        if (p && g)
            ++c.tp;
        else if (p)
            ++c.fp;
        else if (g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

namespace {
double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }
} // namespace

Metrics metrics(const ConfusionCounts& c) {
    Metrics m;
    const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    m.iou = ratio(tp, tp + fp + fn);
    return m;
}

PRCurve pr_curve(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts,
                 const std::vector<double>& thresholds) {
    require(!scores.empty() && scores.size() == gts.size(), ErrorCode::InvalidArgument,
            "pr_curve needs matching, non-empty score and mask lists");
    require(!thresholds.empty(), ErrorCode::InvalidArgument, "pr_curve needs thresholds");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        require(thresholds[i] >= 0.0 && thresholds[i] <= 1.0, ErrorCode::InvalidArgument, "threshold outside [0, 1]");
        require(i == 0 || thresholds[i] > thresholds[i - 1], ErrorCode::InvalidArgument,
                "thresholds must be strictly increasing");
    }
    for (std::size_t k = 0; k < scores.size(); ++k)
        require(scores[k].same_shape(gts[k]), ErrorCode::ShapeMismatch, "score map vs mask " + std::to_string(k));

    PRCurve curve;
    for (double t : thresholds) {
        ConfusionCounts c;
        for (std::size_t k = 0; k < scores.size(); ++k)
            for (std::size_t i = 0; i < scores[k].size(); ++i) {
                const bool p = scores[k][i] >= t, g = gts[k][i] > 0.5;
                if (p && g)
                    ++c.tp;
                else if (p)
                    ++c.fp;
                else if (g)
                    ++c.fn;
                else
                    ++c.tn;
            }
        const Metrics m = metrics(c);
        curve.push_back({t, m.precision, m.recall});
    }
    return curve;
}

PRCurve pr_curve(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts, int num_thresholds) {
    require(num_thresholds >= 2, ErrorCode::InvalidArgument, "need at least two thresholds");
    std::vector<double> t(static_cast<std::size_t>(num_thresholds));
    for (int i = 0; i < num_thresholds; ++i) t[static_cast<std::size_t>(i)] = static_cast<double>(i) / (num_thresholds - 1);
    return pr_curve(scores, gts, t);
}

} // namespace lsm

#include "lsm/losses.hpp"

#include <algorithm>
#include <cmath>

#include "lsm/error.hpp"

namespace lsm {

namespace {

constexpr double kLogFloor = 1e-12;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_pair(Var logits, const Tensor& target, const char* what) {
    require(logits.value().same_shape(target), ErrorCode::ShapeMismatch,
            std::string(what) + ": logits " + shape_string(logits.shape()) + " vs target " +
                shape_string(target.shape));
    for (double y : target.data)
        require(y == 0.0 || y == 1.0, ErrorCode::InvalidArgument, std::string(what) + ": target must be binary");
}

} // namespace

Var focal_loss(Var logits, const Tensor& target, double gamma, double alpha) {
    check_pair(logits, target, "focal_loss");
    require(gamma >= 0.0, ErrorCode::InvalidArgument, "focal gamma must be >= 0");
    require(alpha > 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument, "focal alpha must be in (0, 1]");
    const std::size_t n = target.size();
    Tensor dl({static_cast<int>(n)});
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = sigmoid(logits.value()[i]);
        const bool pos = target[i] == 1.0;
        const double pt = pos ? p : 1.0 - p;
        const double q = 1.0 - pt;
        const double lp = std::log(std::max(pt, kLogFloor));
        const double mod = std::pow(q, gamma);
        total += -alpha * mod * lp;
        // d pt / d logit = +-p(1-p) = +-pt*q
        const double dpt = (pos ? 1.0 : -1.0) * pt * q;
        const double dmod = gamma == 0.0 || q == 0.0 ? 0.0 : -gamma * std::pow(q, gamma - 1.0);
        const double dlp = pt > kLogFloor ? 1.0 / pt : 0.0;
        dl[i] = -alpha * (dmod * lp + mod * dlp) * dpt / static_cast<double>(n);
    }
    Node* nl = logits.node();
    return logits.graph().make(Tensor({1}, total / static_cast<double>(n)), logits.requires_grad(),
                               [nl, dl](Node& self) {
                                   Tensor& g = nl->ensure_grad();
                                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dl[i];
                               });
}

Var ce_loss(Var logits, const Tensor& target) {
    check_pair(logits, target, "ce_loss");
    const std::size_t n = target.size();
    Tensor dl({static_cast<int>(n)});
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = sigmoid(logits.value()[i]);
        const double y = target[i];
        total += -(y * std::log(std::max(p, kLogFloor)) + (1.0 - y) * std::log(std::max(1.0 - p, kLogFloor)));
        dl[i] = (p - y) / static_cast<double>(n);
    }
    Node* nl = logits.node();
    return logits.graph().make(Tensor({1}, total / static_cast<double>(n)), logits.requires_grad(),
                               [nl, dl](Node& self) {
                                   Tensor& g = nl->ensure_grad();
                                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dl[i];
                               });
}

Var iou_loss(Var logits, const Tensor& target) {
    check_pair(logits, target, "iou_loss");
    const std::size_t n = target.size();
    std::vector<double> p(n);
    double inter = 0.0, sp = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = sigmoid(logits.value()[i]);
        inter += p[i] * target[i];
        sp += p[i];
        sy += target[i];
    }
    const double uni = sp + sy - inter;
    Tensor dl({static_cast<int>(n)});
    double loss = 0.0;
    if (uni > 0.0) {
        loss = 1.0 - inter / uni;
        // d(I/U)/dp_i = (y_i*U - I*(1 - y_i)) / U^2
        for (std::size_t i = 0; i < n; ++i) {
            const double y = target[i];
            const double dratio = (y * uni - inter * (1.0 - y)) / (uni * uni);
            dl[i] = -dratio * p[i] * (1.0 - p[i]);
        }
    }
    Node* nl = logits.node();
    return logits.graph().make(Tensor({1}, loss), logits.requires_grad(), [nl, dl](Node& self) {
        Tensor& g = nl->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dl[i];
    });
}

Var proto_loss(Var similarity, const std::vector<int>& labels, int classes, int per_class, double temperature) {
    const Tensor& s = similarity.value();
    require(s.rank() == 2 && s.dim(1) == classes * per_class, ErrorCode::ShapeMismatch,
            "similarity must be [cells, C*K]");
    require(static_cast<int>(labels.size()) == s.dim(0), ErrorCode::ShapeMismatch,
            "ground-truth grid has " + std::to_string(labels.size()) + " cells, similarity " + std::to_string(s.dim(0)));
    require(temperature > 0.0, ErrorCode::InvalidArgument, "temperature must be positive");
    const int cells = s.dim(0);
    Tensor ds = Tensor::zeros_like(s);
    double total = 0.0;
    std::vector<double> logit(static_cast<std::size_t>(classes));
    std::vector<int> arg(static_cast<std::size_t>(classes));
    for (int t = 0; t < cells; ++t) {
        const int y = labels[static_cast<std::size_t>(t)];
        require(y >= 0 && y < classes, ErrorCode::InvalidArgument, "grid label out of range");
        double mx = -1e300;
        for (int c = 0; c < classes; ++c) {
            int best = c * per_class;
            for (int k = 1; k < per_class; ++k)
                if (s.at(t, c * per_class + k) > s.at(t, best)) best = c * per_class + k;
            arg[static_cast<std::size_t>(c)] = best;
            logit[static_cast<std::size_t>(c)] = s.at(t, best) / temperature;
            mx = std::max(mx, logit[static_cast<std::size_t>(c)]);
        }
        double z = 0.0;
        for (double l : logit) z += std::exp(l - mx);
        total += -(logit[static_cast<std::size_t>(y)] - mx - std::log(z));
        for (int c = 0; c < classes; ++c) {
            const double prob = std::exp(logit[static_cast<std::size_t>(c)] - mx) / z;
            ds.at(t, arg[static_cast<std::size_t>(c)]) += (prob - (c == y ? 1.0 : 0.0)) / (temperature * cells);
        }
    }
    Node* ns = similarity.node();
    return similarity.graph().make(Tensor({1}, total / cells), similarity.requires_grad(), [ns, ds](Node& self) {
        Tensor& g = ns->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * ds[i];
    });
}

std::vector<int> grid_labels(const Tensor& mask, int patch) {
    require(mask.rank() == 2 && patch >= 1 && mask.dim(0) % patch == 0 && mask.dim(1) % patch == 0,
            ErrorCode::ShapeMismatch, "patch must divide the mask");
    const int gh = mask.dim(0) / patch, gw = mask.dim(1) / patch;
    std::vector<int> out(static_cast<std::size_t>(gh * gw));
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            int fg = 0;
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x) fg += mask.at(py * patch + y, px * patch + x) > 0.5 ? 1 : 0;
            out[static_cast<std::size_t>(py * gw + px)] = 2 * fg >= patch * patch ? 1 : 0;
        }
    return out;
}

const char* to_string(Stage s) {
    switch (s) {
    case Stage::OneStage: return "one-stage";
    case Stage::Stage1: return "stage-1";
    case Stage::Stage2: return "stage-2";
    }
    return "unknown";
}

LossReport compose(Stage stage, const LossParts& parts, double lambda) {
    auto need = [&](const std::optional<double>& v, const char* name) {
        if (!v) throw Error(ErrorCode::MissingComponent, std::string(to_string(stage)) + " loss needs " + name);
        if (!std::isfinite(*v) || *v < 0.0)
            throw Error(ErrorCode::NonFiniteLoss, std::string(name) + " = " + std::to_string(*v));
        return *v;
    };
    require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::InvalidArgument, "lambda must be >= 0");
    LossReport r;
    r.stage = stage;
    r.focal = need(parts.focal, "focal");
    r.ce = need(parts.ce, "ce");
    r.iou = need(parts.iou, "iou");
    switch (stage) {
    case Stage::OneStage:
        r.proto = need(parts.proto, "proto");
        r.small = need(parts.small, "small");
        r.total = r.large() + lambda * r.small;
        break;
    case Stage::Stage1:
        r.small = need(parts.small, "small");
        r.total = r.large() + r.small;
        break;
    case Stage::Stage2:
        r.proto = need(parts.proto, "proto");
        r.total = r.large();
        break;
    }
    return r;
}

} // namespace lsm

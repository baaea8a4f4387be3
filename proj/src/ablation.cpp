#include "lsm/ablation.hpp"

#include <iomanip>
#include <sstream>

#include "lsm/error.hpp"
#include "lsm/training.hpp"

namespace lsm {

AblationAxis parse_ablation_axis(const std::string& text) {
    if (text == "components") return AblationAxis::Components;
    if (text == "tau") return AblationAxis::Tau;
    if (text == "lambda") return AblationAxis::Lambda;
    if (text == "ratio") return AblationAxis::Ratio;
    throw Error(ErrorCode::InvalidArgument, "unknown ablation axis '" + text + "'");
}

const char* to_string(AblationAxis a) {
    switch (a) {
    case AblationAxis::Components: return "components";
    case AblationAxis::Tau: return "tau";
    case AblationAxis::Lambda: return "lambda";
    case AblationAxis::Ratio: return "ratio";
    }
    return "unknown";
}

namespace {
std::string num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}
} // namespace

std::vector<std::pair<std::string, TrainConfig>> ablation_grid(AblationAxis axis, const TrainConfig& base) {
    std::vector<std::pair<std::string, TrainConfig>> rows;
    switch (axis) {
    case AblationAxis::Components: {
        TrainConfig c = base;
        c.components = {false, false, false, false, false};
        rows.emplace_back("baseline", c);
        c.components.he_adapt = true;
        rows.emplace_back("+HE", c);
        c.components.spatial = true;
        rows.emplace_back("+SpaP", c);
        c.components.semantic = true;
        rows.emplace_back("+SemP", c);
        c.components.style = true;
        rows.emplace_back("+StyP", c);
        c.components.dpc = true;
        rows.emplace_back("+DPC", c);
        break;
    }
    case AblationAxis::Tau:
        for (double t : {0.3, 0.4, 0.5, 0.6, 0.7}) {
            TrainConfig c = base;
            c.spatial.mode = SpatialMode::Point;
            c.spatial.tau = t;
            rows.emplace_back(num(t), c);
        }
        break;
    case AblationAxis::Lambda:
        for (double l : {10.0, 1.0, 0.1, 0.01}) {
            TrainConfig c = base;
            c.strategy = Strategy::OneStage;
            c.lambda = l;
            rows.emplace_back(num(l), c);
        }
        break;
    case AblationAxis::Ratio:
        for (double r : {0.25, 0.5, 1.0}) {
            TrainConfig c = base;
            c.ratio = r;
            rows.emplace_back(num(r), c);
        }
        break;
    }
    return rows;
}

std::vector<AblationRow> run_ablation(AblationAxis axis, const TrainConfig& base, const std::vector<Sample>& train,
                                      const std::vector<Sample>& test,
                                      const std::function<void(const AblationRow&)>& on_row) {
    std::vector<AblationRow> out;
    for (const auto& [label, cfg] : ablation_grid(axis, base)) {
        AblationRow row{to_string(axis), label, {}, "ok"};
        try {
            Trainer t(cfg, train);
            t.run();
            row.metrics = evaluate(t.model(), test, inference_settings(cfg, t.last_completed())).metrics;
        } catch (const std::exception& e) {
            row.status = e.what();
        }
        if (on_row) on_row(row);
        out.push_back(std::move(row));
    }
    return out;
}

std::string ablation_csv_header() { return "axis,value,precision,recall,f1,iou,status"; }

std::string ablation_csv_line(const AblationRow& row) {
    std::string status = row.status;
    for (char& ch : status)
        if (ch == ',' || ch == '\n') ch = ';';
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << row.axis << ',' << row.value << ',' << row.metrics.precision << ','
       << row.metrics.recall << ',' << row.metrics.f1 << ',' << row.metrics.iou << ',' << status;
    return os.str();
}

} // namespace lsm

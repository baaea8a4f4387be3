#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lsm/config.hpp"
#include "lsm/dataset.hpp"
#include "lsm/metrics.hpp"

namespace lsm {

enum class AblationAxis { Components, Tau, Lambda, Ratio };
AblationAxis parse_ablation_axis(const std::string& text);
const char* to_string(AblationAxis a);

struct AblationRow {
    std::string axis;
    std::string value;
    Metrics metrics;
    std::string status; // "ok" or the error message
};

/// Row labels and their configurations. Components is cumulative:
/// baseline, +HE, +SpaP, +SemP, +StyP, +DPC. Tau runs in point mode and Lambda
/// with the one-stage strategy.
std::vector<std::pair<std::string, TrainConfig>> ablation_grid(AblationAxis axis, const TrainConfig& base);

/// Trains and evaluates every row with the base seed; a failing row records
/// its error and the remaining rows still run.
std::vector<AblationRow> run_ablation(AblationAxis axis, const TrainConfig& base, const std::vector<Sample>& train,
                                      const std::vector<Sample>& test,
                                      const std::function<void(const AblationRow&)>& on_row = {});

std::string ablation_csv_header();
std::string ablation_csv_line(const AblationRow& row);

} // namespace lsm

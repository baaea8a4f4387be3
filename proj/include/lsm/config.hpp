#pragma once

#include <cstdint>
#include <string>

#include "lsm/models.hpp"

namespace lsm {

enum class Strategy { OneStage, TwoStage };

struct TrainConfig {
    Strategy strategy = Strategy::TwoStage;
    int pretrain_epochs = 20; // encoder warm-up before it is frozen
    int stage1_epochs = 40;
    int stage2_epochs = 20;
    int one_stage_epochs = 40;
    int batch_size = 4;
    double lr = 5e-4;
    double weight_decay = 0.01;
    double lambda = 1.0;
    double temperature = 0.1;
    double focal_gamma = 2.0;
    double focal_alpha = 1.0;
    std::uint64_t seed = 42;
    double ratio = 1.0;
    bool flip = true;

    ModelConfig model;
    Components components;
    SpatialPromptConfig spatial;

    std::string data_root = "data";
    std::string out_dir = "run";

    /// Throws InvalidArgument.
    void validate() const;
};

const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& text);

/// Sets one `key = value` field. Throws InvalidArgument for unknown keys or bad values.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
/// Flat `key = value` lines; blank lines and '#' comments are ignored.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::string& path, TrainConfig base = {});
/// Every key, one per line, in a fixed order; parse_config(to_text(c)) == c.
std::string to_text(const TrainConfig& cfg);

} // namespace lsm

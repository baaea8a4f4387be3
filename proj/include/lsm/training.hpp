#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lsm/checkpoint.hpp"
#include "lsm/config.hpp"
#include "lsm/dataset.hpp"
#include "lsm/losses.hpp"
#include "lsm/metrics.hpp"
#include "lsm/models.hpp"
#include "lsm/optimizer.hpp"

namespace lsm {

/// Training runs as a sequence of phases. Pretrain stands in for loading a
/// pretrained encoder: it fits encoder + decoder on the default prompt and the
/// encoder is frozen from then on.
enum class Phase { Pretrain = 0, Stage1 = 1, Stage2 = 2, OneStage = 3, Done = 4 };
const char* to_string(Phase p);

struct LogRow {
    long step = 0;
    std::string stage;
    double lr = 0.0;
    LossReport report;
};

std::string log_header();
std::string log_line(const LogRow& row);

struct TrainOptions {
    /// When non-empty, a checkpoint is written here after every epoch
    /// (<phase>_e<epoch>.ckpt) and at the end of every phase (<phase>.ckpt).
    std::string checkpoint_dir;
    /// Stop (with the state intact) once this many epochs have run in this call; < 0 runs to the end.
    int max_epochs = -1;
    std::function<void(Phase, LsmModel&)> on_phase_end;
    std::function<void(const LogRow&)> on_step;
};

/// How a model trained up to `phase` is evaluated.
struct InferenceSettings {
    PromptMode mode = PromptMode::Full;
    bool use_adapter = true;
};
InferenceSettings inference_settings(const TrainConfig& cfg, Phase last_completed);

class Trainer {
public:
    /// Applies the ratio subset. Throws EmptyDataset, InvalidArgument.
    Trainer(const TrainConfig& cfg, const std::vector<Sample>& train);
    /// Continues from a checkpoint written by checkpoint().
    Trainer(const Checkpoint& ckpt, const std::vector<Sample>& train);

    void run(const TrainOptions& opts = {});
    bool finished() const { return phase_ == Phase::Done; }

    Checkpoint checkpoint() const;

    LsmModel& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<LogRow>& log() const { return log_; }
    Phase phase() const { return phase_; }
    Phase last_completed() const { return last_completed_; }
    long global_step() const { return global_step_; }

private:
    struct Prepared {
        PreparedInput input;
        Tensor mask;
        std::vector<int> grid;
    };

    std::vector<Phase> plan() const;
    int epochs_for(Phase p) const;
    long steps_per_epoch() const;
    void enter_phase(Phase p);
    void configure_freezing(Phase p);
    void run_epoch(const TrainOptions& opts);
    void next_phase();
    Rng epoch_rng() const;

    TrainConfig cfg_;
    std::vector<Prepared> data_;
    std::vector<Prepared> flipped_;
    LsmModel model_;
    AdamW opt_;
    Phase phase_ = Phase::Pretrain;
    Phase last_completed_ = Phase::Pretrain;
    bool any_completed_ = false;
    int epoch_ = 0;
    long global_step_ = 0;
    Rng rng_;
    std::vector<LogRow> log_;
};

/// Builds the model a checkpoint describes, with its parameters, frozen flags and prototypes.
LsmModel model_from_checkpoint(const Checkpoint& ckpt, TrainConfig* cfg_out = nullptr, Phase* last_completed = nullptr);

struct EvalResult {
    ConfusionCounts counts;
    Metrics metrics;
    std::vector<Tensor> probabilities;
};

/// Predicts every sample (OpenMP over images) and pools the confusion counts in index order.
EvalResult evaluate(LsmModel& model, const std::vector<Sample>& samples, const InferenceSettings& how,
                    bool keep_probabilities = false);

/// Small-model mean IoU over samples (mask = sigmoid >= 0.5).
double small_model_iou(LsmModel& model, const std::vector<Sample>& samples);

} // namespace lsm

#include "lsm/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "lsm/error.hpp"

namespace lsm {

const char* to_string(Phase p) {
    switch (p) {
    case Phase::Pretrain: return "pretrain";
    case Phase::Stage1: return "stage1";
    case Phase::Stage2: return "stage2";
    case Phase::OneStage: return "onestage";
    case Phase::Done: return "done";
    }
    return "unknown";
}

std::string log_header() { return "step,stage,lr,focal,ce,iou,proto,small,total"; }

std::string log_line(const LogRow& row) {
    std::ostringstream os;
    os << std::setprecision(17) << row.step << ',' << row.stage << ',' << row.lr << ',' << row.report.focal << ','
       << row.report.ce << ',' << row.report.iou << ',' << row.report.proto << ',' << row.report.small << ','
       << row.report.total;
    return os.str();
}

InferenceSettings inference_settings(const TrainConfig& cfg, Phase last_completed) {
    switch (last_completed) {
    case Phase::Pretrain: return {PromptMode::Default, false};
    case Phase::Stage1: return {PromptMode::Default, cfg.components.he_adapt};
    default: return {PromptMode::Full, cfg.components.he_adapt};
    }
}

namespace {

void set_frozen(ParameterList ps, bool frozen) {
    for (Parameter* p : ps) p->frozen = frozen;
}

template <typename M>
ParameterList params_of(M& m) {
    ParameterList ps;
    m.collect(ps);
    return ps;
}

std::string rng_text(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

} // namespace

// ---- construction ----------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg, const std::vector<Sample>& train) : cfg_(cfg) {
    cfg_.validate();
    if (train.empty()) throw Error(ErrorCode::EmptyDataset, "training set is empty");
    const std::vector<Sample> used = subset_by_ratio(train, cfg_.ratio, cfg_.seed);
    const int patch = cfg_.model.patch_size;
    for (const Sample& s : used) {
        require(s.image.height() == cfg_.model.image_side && s.image.width() == cfg_.model.image_side,
                ErrorCode::ShapeMismatch, "sample " + s.stem + " does not match image_side");
        Prepared p{PreparedInput::from(s.image, cfg_.model.cutoff_ratio), s.mask, grid_labels(s.mask, patch)};
        Tensor fm = flip_horizontal(s.mask);
        Prepared f{p.input.flipped(), fm, grid_labels(fm, patch)};
        data_.push_back(std::move(p));
        flipped_.push_back(std::move(f));
    }
    model_ = LsmModel(cfg_.model, cfg_.seed);
    model_.components = cfg_.components;
    model_.spatial_cfg = cfg_.spatial;
    if (!cfg_.components.dpc) model_.dpc.reset_identity();
    phase_ = plan().front();
    enter_phase(phase_);
}

Trainer::Trainer(const Checkpoint& ckpt, const std::vector<Sample>& train)
    : Trainer(parse_config(ckpt.text("meta.config")), train) {
    model_ = model_from_checkpoint(ckpt);
    const auto progress = ckpt.i64("meta.progress");
    require(progress.size() == 4, ErrorCode::CorruptFile, "meta.progress must hold 4 values");
    phase_ = static_cast<Phase>(progress[0]);
    epoch_ = static_cast<int>(progress[1]);
    global_step_ = progress[2];
    any_completed_ = progress[3] >= 0;
    if (any_completed_) last_completed_ = static_cast<Phase>(progress[3]);
    if (phase_ == Phase::Done) return;
    configure_freezing(phase_);
    opt_ = AdamW({cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}, epochs_for(phase_) * steps_per_epoch());
    opt_.set_steps(ckpt.i64("opt.step").at(0));
    for (const auto& [name, e] : ckpt.entries()) {
        if (name.rfind("opt.m/", 0) == 0) opt_.first_moments()[name.substr(6)] = ckpt.tensor(name);
        if (name.rfind("opt.v/", 0) == 0) opt_.second_moments()[name.substr(6)] = ckpt.tensor(name);
    }
    std::istringstream is(ckpt.text("meta.rng"));
    is >> rng_;
    if (!is) throw Error(ErrorCode::CorruptFile, "unreadable RNG state");
}

std::vector<Phase> Trainer::plan() const {
    std::vector<Phase> out;
    if (cfg_.pretrain_epochs > 0) out.push_back(Phase::Pretrain);
    if (cfg_.strategy == Strategy::TwoStage) {
        out.push_back(Phase::Stage1);
        out.push_back(Phase::Stage2);
    } else {
        out.push_back(Phase::OneStage);
    }
    out.push_back(Phase::Done);
    return out;
}

int Trainer::epochs_for(Phase p) const {
    switch (p) {
    case Phase::Pretrain: return cfg_.pretrain_epochs;
    case Phase::Stage1: return cfg_.stage1_epochs;
    case Phase::Stage2: return cfg_.stage2_epochs;
    case Phase::OneStage: return cfg_.one_stage_epochs;
    case Phase::Done: return 0;
    }
    return 0;
}

long Trainer::steps_per_epoch() const {
    const long n = static_cast<long>(data_.size());
    return (n + cfg_.batch_size - 1) / cfg_.batch_size;
}

Rng Trainer::epoch_rng() const {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                      static_cast<std::uint32_t>(phase_), static_cast<std::uint32_t>(epoch_)};
    return Rng(seq);
}

void Trainer::enter_phase(Phase p) {
    phase_ = p;
    epoch_ = 0;
    if (p == Phase::Done) return;
    configure_freezing(p);
    opt_ = AdamW({cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}, epochs_for(p) * steps_per_epoch());
    rng_ = epoch_rng();
}

void Trainer::configure_freezing(Phase p) {
    set_frozen(model_.parameters(), true);
    const Components& c = cfg_.components;
    auto prompt_machinery = [&] {
        if (c.spatial) set_frozen(params_of(model_.spatial), false);
        if (c.semantic) set_frozen(params_of(model_.semantic), false);
        if (c.style) set_frozen(params_of(model_.style), false);
        if (c.dpc) model_.dpc.set_frozen(false);
    };
    switch (p) {
    case Phase::Pretrain:
        model_.encoder.set_frozen(false);
        set_frozen(params_of(model_.decoder), false);
        break;
    case Phase::Stage1:
        set_frozen(params_of(model_.decoder), false);
        model_.small.set_frozen(false);
        if (c.he_adapt) model_.adapter.set_frozen(false);
        break;
    case Phase::Stage2:
        set_frozen(params_of(model_.decoder), false);
        prompt_machinery();
        break;
    case Phase::OneStage:
        set_frozen(params_of(model_.decoder), false);
        // With lambda == 0 the small model has no objective; weight decay alone would still move it.
        if (cfg_.lambda > 0.0) model_.small.set_frozen(false);
        if (c.he_adapt) model_.adapter.set_frozen(false);
        prompt_machinery();
        break;
    case Phase::Done: break;
    }
}

void Trainer::next_phase() {
    last_completed_ = phase_;
    any_completed_ = true;
    const auto order = plan();
    const auto it = std::find(order.begin(), order.end(), phase_);
    enter_phase(*(it + 1));
}

// ---- loop ------------------------------------------------------------------

void Trainer::run(const TrainOptions& opts) {
    if (!opts.checkpoint_dir.empty()) std::filesystem::create_directories(opts.checkpoint_dir);
    int done = 0;
    while (phase_ != Phase::Done) {
        if (opts.max_epochs >= 0 && done >= opts.max_epochs) return;
        const Phase current = phase_;
        run_epoch(opts);
        ++done;
        ++epoch_;
        rng_ = epoch_rng();
        const int finished_epoch = epoch_;
        const bool phase_over = epoch_ >= epochs_for(current);
        if (phase_over) {
            if (opts.on_phase_end) opts.on_phase_end(current, model_);
            next_phase();
        }
        if (!opts.checkpoint_dir.empty()) {
            const Checkpoint ck = checkpoint();
            std::ostringstream name;
            name << to_string(current) << "_e" << std::setw(3) << std::setfill('0') << finished_epoch << ".ckpt";
            save_checkpoint(ck, (std::filesystem::path(opts.checkpoint_dir) / name.str()).string());
            if (phase_over)
                save_checkpoint(ck, (std::filesystem::path(opts.checkpoint_dir) /
                                     (std::string(to_string(current)) + ".ckpt"))
                                        .string());
        }
    }
}

void Trainer::run_epoch(const TrainOptions& opts) {
    const std::size_t n = data_.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    std::vector<char> flip(n, 0);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < n; ++i) flip[i] = cfg_.flip && coin(rng_) ? 1 : 0;

    const Phase phase = phase_;
    const bool small_on_graph = phase == Phase::Stage1 || phase == Phase::OneStage;
    const bool full = phase == Phase::Stage2 || phase == Phase::OneStage;
    const bool use_adapter = phase != Phase::Pretrain && cfg_.components.he_adapt;
    const Stage stage = phase == Phase::Stage2 ? Stage::Stage2 : phase == Phase::OneStage ? Stage::OneStage : Stage::Stage1;
    const double small_weight = phase == Phase::OneStage ? cfg_.lambda : 1.0;
    const bool with_proto = full && cfg_.components.semantic;
    const int classes = cfg_.model.classes, per_class = cfg_.model.prototypes_per_class;
    ParameterList params = model_.parameters();

    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(cfg_.batch_size)) {
        const std::size_t end = std::min(n, begin + static_cast<std::size_t>(cfg_.batch_size));
        const double inv_b = 1.0 / static_cast<double>(end - begin);
        for (Parameter* p : params) p->zero_grad();
        LossReport mean;
        mean.stage = stage;
        PseudoMask pooled;
        pooled.classes = classes;
        pooled.per_class = per_class;
        std::vector<double> proj_rows;
        int proj_width = 0;

        for (std::size_t k = begin; k < end; ++k) {
            const std::size_t idx = order[k];
            const Prepared& ex = flip[k] ? flipped_[idx] : data_[idx];
            Graph g;
            ForwardResult fr =
                model_.forward(g, ex.input, full ? PromptMode::Full : PromptMode::Default, use_adapter, small_on_graph);
            Var focal = focal_loss(fr.logits, ex.mask, cfg_.focal_gamma, cfg_.focal_alpha);
            Var ce = ce_loss(fr.logits, ex.mask);
            Var iou = iou_loss(fr.logits, ex.mask);
            Var total = ops::add(ops::add(focal, ce), iou);
            LossParts parts{focal.value()[0], ce.value()[0], iou.value()[0], std::nullopt, std::nullopt};
            if (full) {
                parts.proto = 0.0;
                if (with_proto) {
                    Var pl = proto_loss(fr.semantic->similarity, ex.grid, classes, per_class, cfg_.temperature);
                    parts.proto = pl.value()[0];
                    total = ops::add(total, pl);
                    const SemanticOutput& so = *fr.semantic;
                    proj_width = so.projected.dim(1);
                    proj_rows.insert(proj_rows.end(), so.projected.data.begin(), so.projected.data.end());
                    pooled.labels.insert(pooled.labels.end(), so.pseudo.labels.begin(), so.pseudo.labels.end());
                    pooled.chosen_k.insert(pooled.chosen_k.end(), so.pseudo.chosen_k.begin(), so.pseudo.chosen_k.end());
                }
            }
            if (small_on_graph) {
                Var small = ops::add(ce_loss(fr.small_logits, ex.mask), iou_loss(fr.small_logits, ex.mask));
                parts.small = small.value()[0];
                total = ops::add(total, ops::scale(small, small_weight));
            } else if (stage == Stage::Stage1) {
                parts.small = 0.0;
            }
            LossReport r;
            try {
                r = compose(stage, parts, cfg_.lambda);
            } catch (const Error& e) {
                throw Error(e.code(), std::string(to_string(phase)) + " step " + std::to_string(global_step_ + 1) +
                                          " sample " + std::to_string(idx) + ": " + e.what());
            }
            mean.focal += r.focal * inv_b;
            mean.ce += r.ce * inv_b;
            mean.iou += r.iou * inv_b;
            mean.proto += r.proto * inv_b;
            mean.small += r.small * inv_b;
            mean.total += r.total * inv_b;
            g.backward(ops::scale(total, inv_b));
        }
        opt_.step(params);
        ++global_step_;
        if (with_proto && !pooled.labels.empty()) {
            const int rows = static_cast<int>(pooled.labels.size());
            ImageEmbedding cells(rows, 1, Tensor({rows, proj_width}, std::move(proj_rows)));
            model_.semantic.prototypes() = update_prototypes(model_.semantic.prototypes(), cells, pooled);
        }
        LogRow row{global_step_, to_string(phase), opt_.current_lr(), mean};
        log_.push_back(row);
        if (opts.on_step) opts.on_step(row);
    }
}

// ---- persistence -----------------------------------------------------------

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    auto& model = const_cast<LsmModel&>(model_);
    for (const Parameter* p : model.parameters()) ck.put(p->name, p->value, p->frozen);
    ck.put("semantic.prototypes", model_.semantic.prototypes().vectors, true, true);
    for (const auto& [name, t] : opt_.first_moments()) ck.put("opt.m/" + name, t, false, true);
    for (const auto& [name, t] : opt_.second_moments()) ck.put("opt.v/" + name, t, false, true);
    ck.put_i64("opt.step", {opt_.steps()});
    ck.put_text("meta.config", to_text(cfg_));
    ck.put_i64("meta.progress", {static_cast<std::int64_t>(phase_), epoch_, global_step_,
                                 any_completed_ ? static_cast<std::int64_t>(last_completed_) : -1});
    ck.put_text("meta.rng", rng_text(rng_));
    return ck;
}

LsmModel model_from_checkpoint(const Checkpoint& ckpt, TrainConfig* cfg_out, Phase* last_completed) {
    const TrainConfig cfg = parse_config(ckpt.text("meta.config"));
    LsmModel model(cfg.model, cfg.seed);
    model.components = cfg.components;
    model.spatial_cfg = cfg.spatial;
    for (Parameter* p : model.parameters()) {
        Tensor t = ckpt.tensor(p->name);
        require(t.same_shape(p->value), ErrorCode::ShapeMismatch,
                p->name + ": checkpoint " + shape_string(t.shape) + " vs model " + shape_string(p->value.shape));
        p->value = std::move(t);
        p->grad = Tensor::zeros_like(p->value);
        p->frozen = ckpt.entry(p->name).frozen;
    }
    Tensor protos = ckpt.tensor("semantic.prototypes");
    require(protos.same_shape(model.semantic.prototypes().vectors), ErrorCode::ShapeMismatch, "prototype bank shape");
    model.semantic.prototypes().vectors = std::move(protos);
    if (cfg_out) *cfg_out = cfg;
    if (last_completed) {
        const auto progress = ckpt.i64("meta.progress");
        require(progress.size() == 4, ErrorCode::CorruptFile, "meta.progress must hold 4 values");
        *last_completed = progress[3] >= 0 ? static_cast<Phase>(progress[3]) : Phase::Pretrain;
    }
    return model;
}

// ---- evaluation ------------------------------------------------------------

EvalResult evaluate(LsmModel& model, const std::vector<Sample>& samples, const InferenceSettings& how,
                    bool keep_probabilities) {
    if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "nothing to evaluate");
    const int n = static_cast<int>(samples.size());
    std::vector<ConfusionCounts> counts(samples.size());
    std::vector<Tensor> probs(samples.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        try {
            const Sample& s = samples[static_cast<std::size_t>(i)];
            const PreparedInput in = PreparedInput::from(s.image, model.config().cutoff_ratio);
            const Tensor logits = model.predict_logits(in, how.mode, how.use_adapter);
            counts[static_cast<std::size_t>(i)] = confusion_counts(binarize_logits(logits), s.mask);
            if (keep_probabilities) probs[static_cast<std::size_t>(i)] = sigmoid(logits);
        } catch (...) {
#pragma omp critical(lsm_eval_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    EvalResult out;
    for (const ConfusionCounts& c : counts) out.counts += c;
    out.metrics = metrics(out.counts);
    if (keep_probabilities) out.probabilities = std::move(probs);
    return out;
}

double small_model_iou(LsmModel& model, const std::vector<Sample>& samples) {
    if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "nothing to evaluate");
    double sum = 0.0;
    for (const Sample& s : samples) {
        const SmallMask m = model.small.predict(s.image);
        Tensor pred = m.probs();
        for (double& v : pred.data) v = v >= 0.5 ? 1.0 : 0.0;
        sum += metrics(confusion_counts(pred, s.mask)).iou;
    }
    return sum / static_cast<double>(samples.size());
}

} // namespace lsm

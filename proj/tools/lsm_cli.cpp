#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "lsm/ablation.hpp"
#include "lsm/error.hpp"
#include "lsm/training.hpp"

namespace fs = std::filesystem;
using namespace lsm;

namespace {

struct Overrides {
    std::optional<std::string> strategy, spatial_mode, data, out;
    std::optional<double> ratio, tau;
    std::optional<int> grid_size, prototypes, depth, dim;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--strategy", o.strategy, "one|two");
    cmd->add_option("--ratio", o.ratio, "fraction of the training set in (0, 1]");
    cmd->add_option("--spatial-mode", o.spatial_mode, "mask|box|point");
    cmd->add_option("--grid-size", o.grid_size, "point grid size g");
    cmd->add_option("--tau", o.tau, "point confidence threshold");
    cmd->add_option("--num-prototypes-per-class", o.prototypes, "prototypes per class K");
    cmd->add_option("--encoder-depth", o.depth, "encoder blocks N");
    cmd->add_option("--embed-dim", o.dim, "embedding width D");
    cmd->add_option("--data", o.data, "dataset root");
    cmd->add_option("--out", o.out, "output directory");
}

TrainConfig resolve(const std::string& config_path, const Overrides& o) {
    TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config(config_path);
    if (o.strategy) cfg.strategy = parse_strategy(*o.strategy);
    if (o.ratio) cfg.ratio = *o.ratio;
    if (o.spatial_mode) cfg.spatial.mode = parse_spatial_mode(*o.spatial_mode);
    if (o.grid_size) cfg.spatial.grid_size = *o.grid_size;
    if (o.tau) cfg.spatial.tau = *o.tau;
    if (o.prototypes) cfg.model.prototypes_per_class = *o.prototypes;
    if (o.depth) cfg.model.encoder_depth = *o.depth;
    if (o.dim) cfg.model.embed_dim = *o.dim;
    if (o.data) cfg.data_root = *o.data;
    if (o.out) cfg.out_dir = *o.out;
    cfg.validate();
    return cfg;
}

void print_metrics(const std::string& label, const Metrics& m) {
    std::cout << std::fixed << std::setprecision(4) << label << " precision=" << m.precision << " recall=" << m.recall
              << " f1=" << m.f1 << " iou=" << m.iou << "\n";
}

int cmd_gen_data(const std::string& out, const GeneratorConfig& g) {
    const GeneratedDataset d = generate_synthetic_dataset(out, g);
    std::cout << "wrote " << d.train.size() << " train and " << d.test.size() << " test pairs (" << d.hard.size()
              << " hard) to " << out << "\n";
    return 0;
}

int cmd_train(const TrainConfig& cfg, const std::string& resume, bool every_epoch) {
    const auto train = load_samples(index_split(cfg.data_root, Split::Train));
    fs::create_directories(cfg.out_dir);
    std::optional<Trainer> trainer;
    if (resume.empty())
        trainer.emplace(cfg, train);
    else
        trainer.emplace(load_checkpoint(resume), train);
    const fs::path log_path = fs::path(cfg.out_dir) / "train_log.csv";
    const bool fresh = resume.empty() || !fs::exists(log_path);
    std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw Error(ErrorCode::IoError, "cannot write " + log_path.string());
    if (fresh) log << log_header() << "\n";
    {
        std::ofstream snap(fs::path(cfg.out_dir) / "config.txt");
        snap << to_text(trainer->config());
    }
    TrainOptions opts;
    if (every_epoch) opts.checkpoint_dir = (fs::path(cfg.out_dir) / "checkpoints").string();
    opts.on_step = [&](const LogRow& row) { log << log_line(row) << "\n"; };
    opts.on_phase_end = [&](Phase p, LsmModel&) {
        std::cerr << "finished " << to_string(p) << " at step " << trainer->global_step() << "\n";
        log.flush();
    };
    const auto t0 = std::chrono::steady_clock::now();
    trainer->run(opts);
    const Checkpoint ck = trainer->checkpoint();
    const std::string final_path = (fs::path(cfg.out_dir) / "final.ckpt").string();
    save_checkpoint(ck, final_path);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "trained " << trainer->global_step() << " steps in " << std::setprecision(1) << std::fixed << secs
              << " s; checkpoint " << final_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& split,
             const std::string& pr_out, int thresholds) {
    TrainConfig cfg;
    Phase last = Phase::Pretrain;
    LsmModel model = model_from_checkpoint(load_checkpoint(ckpt_path), &cfg, &last);
    const std::string root = data.empty() ? cfg.data_root : data;
    const auto samples = load_samples(index_split(root, parse_split(split)));
    const EvalResult r = evaluate(model, samples, inference_settings(cfg, last), !pr_out.empty());
    print_metrics(split + " (" + std::to_string(samples.size()) + " images)", r.metrics);
    if (!pr_out.empty()) {
        std::vector<Tensor> gts;
        for (const Sample& s : samples) gts.push_back(s.mask);
        const PRCurve curve = pr_curve(r.probabilities, gts, thresholds);
        std::ofstream f(pr_out);
        if (!f) throw Error(ErrorCode::IoError, "cannot write " + pr_out);
        f << "threshold,precision,recall\n" << std::setprecision(6) << std::fixed;
        for (const PRPoint& p : curve) f << p.threshold << ',' << p.precision << ',' << p.recall << "\n";
        std::cout << "PR curve (" << curve.size() << " thresholds) written to " << pr_out << "\n";
    }
    return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image, const std::string& out) {
    TrainConfig cfg;
    Phase last = Phase::Pretrain;
    LsmModel model = model_from_checkpoint(load_checkpoint(ckpt_path), &cfg, &last);
    const imaging::Image img(read_png_gray(image));
    const InferenceSettings how = inference_settings(cfg, last);
    const Tensor logits = model.predict_logits(PreparedInput::from(img, cfg.model.cutoff_ratio), how.mode, how.use_adapter);
    write_png_gray(out, binarize_logits(logits));
    std::cout << "mask written to " << out << "\n";
    return 0;
}

int cmd_ablate(const TrainConfig& cfg, const std::string& axis_name, const std::string& csv) {
    const AblationAxis axis = parse_ablation_axis(axis_name);
    const auto train = load_samples(index_split(cfg.data_root, Split::Train));
    const auto test = load_samples(index_split(cfg.data_root, Split::TestAll));
    std::ofstream f(csv);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + csv);
    f << ablation_csv_header() << "\n";
    std::cout << ablation_csv_header() << "\n";
    run_ablation(axis, cfg, train, test, [&](const AblationRow& row) {
        f << ablation_csv_line(row) << "\n";
        f.flush();
        std::cout << ablation_csv_line(row) << "\n" << std::flush;
    });
    return 0;
}

int cmd_efficiency(const std::string& ckpt_path, const TrainConfig& fallback, int runs) {
    TrainConfig cfg = fallback;
    Phase last = Phase::Stage2;
    LsmModel model = ckpt_path.empty() ? LsmModel(cfg.model, cfg.seed)
                                       : model_from_checkpoint(load_checkpoint(ckpt_path), &cfg, &last);
    if (ckpt_path.empty()) {
        model.components = cfg.components;
        model.spatial_cfg = cfg.spatial;
    }
    struct Group {
        const char* name;
        ParameterList params;
    };
    auto of = [](auto& m) {
        ParameterList ps;
        m.collect(ps);
        return ps;
    };
    std::vector<Group> groups = {{"encoder", of(model.encoder)}, {"he-adapt", of(model.adapter)},
                                 {"decoder", of(model.decoder)}, {"small", of(model.small)},
                                 {"spatial", of(model.spatial)}, {"semantic", of(model.semantic)},
                                 {"style", of(model.style)},     {"dpc", of(model.dpc)}};
    std::size_t total = 0, trainable = 0;
    std::cout << std::left << std::setw(10) << "component" << std::right << std::setw(10) << "params" << "\n";
    for (const Group& g : groups) {
        const std::size_t n = parameter_count(g.params);
        total += n;
        if (g.name != std::string("encoder")) trainable += n;
        std::cout << std::left << std::setw(10) << g.name << std::right << std::setw(10) << n << "\n";
    }
    std::cout << "trainable (excluding frozen encoder) / total: " << trainable << " / " << total << "\n";

    GeneratorConfig gen;
    gen.side = cfg.model.image_side;
    const InferenceSettings how = inference_settings(cfg, last);
    double secs = 0.0;
    for (int i = 0; i < runs; ++i) {
        const Sample s = synthesize_sample(gen, Split::TestAll, i, false);
        const auto t0 = std::chrono::steady_clock::now();
        model.predict_logits(PreparedInput::from(s.image, cfg.model.cutoff_ratio), how.mode, how.use_adapter);
        secs += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    std::cout << "mean inference time: " << std::fixed << std::setprecision(5) << secs / runs << " s/image over "
              << runs << " images\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Large-small model segmentation toolkit"};
    app.require_subcommand(1);

    std::string gen_out = "data";
    GeneratorConfig gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic benchmark");
    gen_cmd->add_option("--out", gen_out, "dataset root");
    gen_cmd->add_option("--seed", gen.seed);
    gen_cmd->add_option("--n-train", gen.n_train);
    gen_cmd->add_option("--n-test", gen.n_test);
    gen_cmd->add_option("--side", gen.side);

    std::string config_path, resume;
    bool every_epoch = false;
    Overrides train_over;
    auto* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", config_path, "flat key = value config file");
    train_cmd->add_option("--resume", resume, "checkpoint to continue from");
    train_cmd->add_flag("--checkpoint-every-epoch", every_epoch);
    add_overrides(train_cmd, train_over);

    std::string ckpt, data, split = "all", pr_out;
    int thresholds = 101;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", ckpt)->required();
    eval_cmd->add_option("--data", data, "dataset root (default: from the checkpoint config)");
    eval_cmd->add_option("--split", split, "all|hard")->check(CLI::IsMember({"all", "hard"}));
    eval_cmd->add_option("--pr-out", pr_out, "write a PR curve CSV");
    eval_cmd->add_option("--thresholds", thresholds, "PR curve resolution");

    std::string image, mask_out;
    auto* predict_cmd = app.add_subcommand("predict", "segment one PNG");
    predict_cmd->add_option("--checkpoint", ckpt)->required();
    predict_cmd->add_option("--image", image)->required();
    predict_cmd->add_option("--out", mask_out)->required();

    std::string axis = "components", csv = "ablation.csv";
    Overrides ablate_over;
    auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate an ablation grid");
    ablate_cmd->add_option("--axis", axis, "components|tau|lambda|ratio")
        ->check(CLI::IsMember({"components", "tau", "lambda", "ratio"}));
    ablate_cmd->add_option("--config", config_path);
    ablate_cmd->add_option("--csv", csv, "output table");
    add_overrides(ablate_cmd, ablate_over);

    int runs = 20;
    auto* eff_cmd = app.add_subcommand("report-efficiency", "parameter counts and inference time");
    eff_cmd->add_option("--checkpoint", ckpt);
    eff_cmd->add_option("--config", config_path);
    eff_cmd->add_option("--runs", runs);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen_cmd) return cmd_gen_data(gen_out, gen);
        if (*train_cmd) return cmd_train(resolve(config_path, train_over), resume, every_epoch);
        if (*eval_cmd) return cmd_eval(ckpt, data, split, pr_out, thresholds);
        if (*predict_cmd) return cmd_predict(ckpt, image, mask_out);
        if (*ablate_cmd) return cmd_ablate(resolve(config_path, ablate_over), axis, csv);
        if (*eff_cmd) return cmd_efficiency(ckpt, resolve(config_path, {}), std::max(1, runs));
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

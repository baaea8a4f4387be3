#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lsm/error.hpp"
#include "lsm/training.hpp"
#include "support.hpp"

using namespace lsm;
namespace fs = std::filesystem;
using testing::random_tensor;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return ErrorCode::InvalidArgument;
}

std::vector<Sample> tiny_dataset(int n, int side = 32) {
    GeneratorConfig g;
    g.side = side;
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i) out.push_back(synthesize_sample(g, Split::Train, i, i % 3 == 0));
    return out;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.model.image_side = 32;
    c.model.patch_size = 8;
    c.model.embed_dim = 16;
    c.model.num_heads = 2;
    c.model.encoder_depth = 1;
    c.model.decoder_layers = 1;
    c.model.small.widths = {4, 8};
    c.model.prototypes_per_class = 2;
    c.pretrain_epochs = 1;
    c.stage1_epochs = 2;
    c.stage2_epochs = 2;
    c.one_stage_epochs = 2;
    c.batch_size = 4;
    c.lr = 2e-3;
    return c;
}

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("lsm_test_training_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<std::string> names_with_prefix(const ParameterList& ps, const std::vector<std::string>& prefixes) {
    std::vector<std::string> out;
    for (const Parameter* p : ps)
        for (const auto& pre : prefixes)
            if (p->name.rfind(pre, 0) == 0) out.push_back(p->name);
    return out;
}

} // namespace

TEST_CASE("cosine schedule endpoints") {
    CosineSchedule s(1e-3, 10);
    CHECK(s.lr(0) == 1e-3);
    CHECK(s.lr(5) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(s.lr(10) == 0.0);
    CHECK(s.lr(11) == 0.0);
    for (long t = 1; t < 10; ++t) CHECK(s.lr(t) < s.lr(t - 1));
    CHECK_THROWS_AS(CosineSchedule(0.0, 10), Error);
}

TEST_CASE("AdamW follows a hand-rolled scalar reference") {
    AdamWConfig cfg{0.01, 0.9, 0.999, 1e-8, 0.05};
    const long total = 40;
    AdamW opt(cfg, total);
    Parameter p("w", Tensor({1}, 0.7));
    double w = 0.7, m = 0.0, v = 0.0;
    for (long t = 1; t < total; ++t) {
        const double g = std::sin(0.37 * t) + 0.2 * (t % 3);
        p.grad[0] = g;
        opt.step({&p});
        const double lr = 0.01 * 0.5 * (1 + std::cos(std::numbers::pi * t / total));
        w = w - lr * 0.05 * w;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        w = w - lr * mh / (std::sqrt(vh) + 1e-8);
        CHECK(std::abs(p.value[0] - w) <= 1e-12);
        CHECK(opt.current_lr() == doctest::Approx(lr).epsilon(1e-12));
    }
    // Final step: lr 0, no update.
    const double before = p.value[0];
    p.grad[0] = 5.0;
    opt.step({&p});
    CHECK(opt.current_lr() == 0.0);
    CHECK(p.value[0] == before);
}

TEST_CASE("AdamW: zero gradients without decay, frozen tensors and non-finite gradients") {
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(cfg, 100);
    std::mt19937_64 rng(1);
    Parameter a("a", random_tensor({3, 3}, rng)), b("b", random_tensor({4}, rng));
    const Tensor a0 = a.value, b0 = b.value;
    for (int i = 0; i < 10; ++i) opt.step({&a, &b});
    CHECK(max_abs_diff(a.value, a0) == 0.0);

    b.frozen = true;
    Parameter c("c", random_tensor({2}, rng));
    c.frozen = true;
    const Tensor c0 = c.value;
    a.grad.fill(1.0);
    b.grad.fill(1.0);
    c.grad.fill(1.0);
    opt.step({&a, &b, &c});
    CHECK(max_abs_diff(b.value, b0) == 0.0);
    CHECK(max_abs_diff(c.value, c0) == 0.0);
    CHECK(max_abs_diff(a.value, a0) > 0.0);
    CHECK(opt.first_moments().count("c") == 0);

    b.frozen = false;
    const Tensor a1 = a.value;
    b.grad[2] = std::nan("");
    CHECK(code_of([&] { opt.step({&a, &b}); }) == ErrorCode::NonFiniteGradient);
    CHECK(max_abs_diff(a.value, a1) == 0.0);
}

TEST_CASE("checkpoint round trip is exact and byte stable") {
    std::mt19937_64 rng(2);
    Checkpoint ck;
    ck.put("b.weight", random_tensor({3, 4}, rng), true);
    ck.put("a.bias", random_tensor({4}, rng));
    ck.put("buf", random_tensor({2, 2, 2}, rng), false, true);
    ck.put_text("meta.config", "x = 1\ny = two\n");
    ck.put_i64("meta.progress", {1, 2, -3, 4});
    const auto bytes = ck.serialize();
    Checkpoint back = Checkpoint::deserialize(bytes);
    CHECK(back.serialize() == bytes);
    for (const auto& [name, e] : ck.entries()) {
        const CheckpointEntry& f = back.entry(name);
        CHECK(f.dims == e.dims);
        CHECK(f.f64 == e.f64);
        CHECK(f.frozen == e.frozen);
        CHECK(f.buffer == e.buffer);
    }
    CHECK(back.text("meta.config") == "x = 1\ny = two\n");
    CHECK(back.i64("meta.progress") == std::vector<std::int64_t>{1, 2, -3, 4});
    CHECK(code_of([&] { (void)back.tensor("missing"); }) == ErrorCode::MissingComponent);

    const fs::path dir = scratch("ckpt");
    save_checkpoint(ck, (dir / "a.ckpt").string());
    save_checkpoint(load_checkpoint((dir / "a.ckpt").string()), (dir / "b.ckpt").string());
    CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
    CHECK(code_of([&] { load_checkpoint((dir / "nope.ckpt").string()); }) == ErrorCode::IoError);
}

TEST_CASE("damaged checkpoints are rejected") {
    Checkpoint ck;
    ck.put("w", Tensor({8}, 0.5));
    const auto bytes = ck.serialize();
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{11}, bytes.size() / 2, bytes.size() - 1}) {
        std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        CHECK(code_of([&] { Checkpoint::deserialize(t); }) == ErrorCode::CorruptFile);
    }
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    CHECK(code_of([&] { Checkpoint::deserialize(flipped); }) == ErrorCode::CorruptFile);
    auto versioned = bytes;
    versioned[4] = 9;
    CHECK(code_of([&] { Checkpoint::deserialize(versioned); }) == ErrorCode::VersionMismatch);
    auto magic = bytes;
    magic[0] = 'X';
    CHECK(code_of([&] { Checkpoint::deserialize(magic); }) == ErrorCode::CorruptFile);
}

TEST_CASE("config text round trip and validation") {
    TrainConfig c = tiny_config();
    c.strategy = Strategy::OneStage;
    c.lambda = 0.01;
    c.ratio = 0.25;
    c.spatial.mode = SpatialMode::Point;
    c.spatial.tau = 0.3;
    c.components.style = false;
    c.model.small.widths = {3, 5, 7};
    c.lr = 1.0 / 3.0;
    c.data_root = "some/where";
    const std::string text = to_text(c);
    TrainConfig back = parse_config(text);
    CHECK(to_text(back) == text);
    CHECK(back.lr == c.lr);
    CHECK(back.model.small.widths == c.model.small.widths);
    CHECK(back.spatial.mode == SpatialMode::Point);
    CHECK_FALSE(back.components.style);

    TrainConfig d = parse_config("# comment\n\nlr = 0.001\n  strategy = one  \n");
    CHECK(d.lr == 0.001);
    CHECK(d.strategy == Strategy::OneStage);
    CHECK(code_of([] { parse_config("no_such_key = 1\n"); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { parse_config("lr = fast\n"); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { parse_config("ratio = 1.5\n").validate(); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { parse_config("lr = 0\n").validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("inference settings by completed phase") {
    TrainConfig c;
    CHECK(inference_settings(c, Phase::Pretrain).mode == PromptMode::Default);
    CHECK_FALSE(inference_settings(c, Phase::Pretrain).use_adapter);
    CHECK(inference_settings(c, Phase::Stage1).mode == PromptMode::Default);
    CHECK(inference_settings(c, Phase::Stage1).use_adapter);
    CHECK(inference_settings(c, Phase::Stage2).mode == PromptMode::Full);
    CHECK(inference_settings(c, Phase::OneStage).mode == PromptMode::Full);
}

TEST_CASE("horizontal flips keep image and mask aligned") {
    auto data = tiny_dataset(3);
    for (const Sample& s : data) {
        PreparedInput in = PreparedInput::from(s.image, 0.25);
        PreparedInput ff = in.flipped().flipped();
        CHECK(max_abs_diff(ff.image.pixels(), in.image.pixels()) == 0.0);
        CHECK(max_abs_diff(ff.filtered, in.filtered) == 0.0);
        CHECK(max_abs_diff(flip_horizontal(flip_horizontal(s.mask)), s.mask) == 0.0);
        // Pixel (r, c) of the flipped pair is pixel (r, W-1-c) of the original, for image and mask alike.
        Tensor fm = flip_horizontal(s.mask);
        const imaging::Image fi = in.flipped().image;
        for (int r = 0; r < 32; ++r)
            for (int c = 0; c < 32; ++c) {
                CHECK(fi.at(r, c) == s.image.at(r, 31 - c));
                CHECK(fm.at(r, c) == s.mask.at(r, 31 - c));
            }
    }
}

TEST_CASE("two-stage run: deterministic, stage losses, freeze contracts, prototype updates") {
    auto data = tiny_dataset(12);
    TrainConfig cfg = tiny_config();
    const fs::path d1 = scratch("two_a"), d2 = scratch("two_b");

    std::vector<Tensor> proto_after_step;
    std::vector<std::string> step_stage;
    Trainer a(cfg, data);
    TrainOptions oa;
    oa.checkpoint_dir = d1.string();
    oa.on_step = [&](const LogRow& row) {
        proto_after_step.push_back(a.model().semantic.prototypes().vectors);
        step_stage.push_back(row.stage);
    };
    a.run(oa);
    CHECK(a.finished());
    CHECK(a.last_completed() == Phase::Stage2);

    Trainer b(cfg, data);
    TrainOptions ob;
    ob.checkpoint_dir = d2.string();
    b.run(ob);
    REQUIRE(a.log().size() == b.log().size());
    for (std::size_t i = 0; i < a.log().size(); ++i) CHECK(log_line(a.log()[i]) == log_line(b.log()[i]));
    for (const auto& e : fs::directory_iterator(d1))
        CHECK(read_bytes(e.path()) == read_bytes(d2 / e.path().filename()));

    // 12 images, batch 4: 3 steps per epoch; 1 + 2 + 2 epochs.
    CHECK(a.log().size() == 15);
    for (const LogRow& r : a.log()) {
        if (r.stage == "stage2") {
            CHECK(r.report.stage == Stage::Stage2);
            CHECK(r.report.proto > 0.0);
            CHECK(r.report.small == 0.0);
        } else {
            CHECK(r.report.stage == Stage::Stage1);
            CHECK(r.report.proto == 0.0);
        }
        if (r.stage == "stage1") CHECK(r.report.small > 0.0);
        CHECK(std::abs(r.report.total - (r.report.large() + r.report.small)) <= 1e-9);
    }
    CHECK(a.log().back().lr == 0.0);

    // Prototypes move on every stage-2 step and never before.
    for (std::size_t i = 1; i < proto_after_step.size(); ++i) {
        const double moved = max_abs_diff(proto_after_step[i], proto_after_step[i - 1]);
        if (step_stage[i] == "stage2")
            CHECK(moved > 0.0);
        else
            CHECK(moved == 0.0);
    }

    // Freeze contracts across checkpoints.
    LsmModel probe(cfg.model, cfg.seed);
    ParameterList ps = probe.parameters();
    auto same = [&](const std::string& x, const std::string& y, const std::vector<std::string>& groups) {
        Checkpoint cx = load_checkpoint((d1 / x).string()), cy = load_checkpoint((d1 / y).string());
        int n = 0;
        for (const auto& name : names_with_prefix(ps, groups)) {
            CHECK_MESSAGE(cx.entry(name).f64 == cy.entry(name).f64, name);
            ++n;
        }
        return n;
    };
    CHECK(same("stage1.ckpt", "stage2_e001.ckpt", {"encoder.", "adapter.", "small."}) > 10);
    CHECK(same("stage2_e001.ckpt", "stage2_e002.ckpt", {"encoder.", "adapter.", "small."}) > 10);
    CHECK(same("pretrain.ckpt", "stage2.ckpt", {"encoder."}) > 5);
    // And the trainable groups did move.
    Checkpoint s1 = load_checkpoint((d1 / "stage1.ckpt").string()), s2 = load_checkpoint((d1 / "stage2.ckpt").string());
    CHECK(s1.entry("decoder.hyper.fc1.weight").f64 != s2.entry("decoder.hyper.fc1.weight").f64);
    CHECK(s1.entry("dpc.w1").f64 != s2.entry("dpc.w1").f64);
    CHECK(s2.entry("encoder.patch_embed.weight").frozen);
}

TEST_CASE("resuming from a checkpoint equals uninterrupted training") {
    auto data = tiny_dataset(8);
    TrainConfig cfg = tiny_config();
    cfg.batch_size = 3;
    Trainer full(cfg, data);
    full.run();

    for (int split : {1, 2, 4}) {
        Trainer first(cfg, data);
        TrainOptions o;
        o.max_epochs = split;
        first.run(o);
        CHECK_FALSE(first.finished());
        const auto bytes = first.checkpoint().serialize();
        Trainer second(Checkpoint::deserialize(bytes), data);
        second.run();
        REQUIRE(second.finished());
        std::vector<LogRow> joined = first.log();
        joined.insert(joined.end(), second.log().begin(), second.log().end());
        REQUIRE(joined.size() == full.log().size());
        for (std::size_t i = 0; i < joined.size(); ++i) {
            CHECK(joined[i].step == full.log()[i].step);
            CHECK(std::abs(joined[i].report.total - full.log()[i].report.total) <= 1e-12);
            CHECK(log_line(joined[i]) == log_line(full.log()[i]));
        }
        CHECK(second.checkpoint().serialize() == full.checkpoint().serialize());
    }
}

TEST_CASE("one-stage run: encoder frozen, loss decreases, lambda 0 leaves the small model alone") {
    auto data = tiny_dataset(32);
    TrainConfig cfg = tiny_config();
    cfg.strategy = Strategy::OneStage;
    cfg.one_stage_epochs = 7; // 56 steps
    LsmModel init(cfg.model, cfg.seed);
    Trainer t(cfg, data);
    const fs::path dir = scratch("one");
    TrainOptions o;
    o.checkpoint_dir = dir.string();
    t.run(o);
    REQUIRE(t.log().size() == 8 + 56);

    // The one-stage plan also warms the encoder up first, then freezes it for the whole one-stage phase.
    ParameterList ps = init.parameters();
    Checkpoint first = load_checkpoint((dir / "pretrain.ckpt").string());
    Checkpoint last = load_checkpoint((dir / "onestage.ckpt").string());
    for (const auto& name : names_with_prefix(ps, {"encoder."})) CHECK(first.entry(name).f64 == last.entry(name).f64);

    double head = 0, tail = 0;
    std::vector<double> one;
    for (const LogRow& r : t.log())
        if (r.stage == "onestage") one.push_back(r.report.total);
    REQUIRE(one.size() == 56);
    for (int i = 0; i < 8; ++i) head += one[static_cast<std::size_t>(i)], tail += one[one.size() - 1 - static_cast<std::size_t>(i)];
    CHECK(tail < head);
    for (const LogRow& r : t.log())
        if (r.stage == "onestage")
            CHECK(std::abs(r.report.total - (r.report.large() + cfg.lambda * r.report.small)) <= 1e-9);

    TrainConfig z = cfg;
    z.lambda = 0.0;
    z.one_stage_epochs = 1;
    Trainer tz(z, tiny_dataset(8));
    Tensor small_before;
    TrainOptions oz;
    oz.on_phase_end = [&](Phase p, LsmModel& m) {
        if (p == Phase::Pretrain) small_before = m.small.predict(imaging::Image(Tensor({32, 32}, 0.5))).probs();
    };
    tz.run(oz);
    Tensor small_after = tz.model().small.predict(imaging::Image(Tensor({32, 32}, 0.5))).probs();
    CHECK(max_abs_diff(small_before, small_after) == 0.0);
}

TEST_CASE("empty datasets are rejected") {
    CHECK(code_of([] { Trainer t(tiny_config(), {}); }) == ErrorCode::EmptyDataset);
}

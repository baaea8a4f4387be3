#include "lsm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <png.h>

#include "lsm/error.hpp"

namespace fs = std::filesystem;

namespace lsm {

const char* to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::TestAll: return "all";
    case Split::TestHard: return "hard";
    }
    return "unknown";
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::Train;
    if (text == "all" || text == "test") return Split::TestAll;
    if (text == "hard") return Split::TestHard;
    throw Error(ErrorCode::InvalidArgument, "unknown split '" + text + "' (expected train|all|hard)");
}

namespace {

using Rng = std::mt19937_64;

// Smoothly interpolated lattice noise, roughly in [0, 1].
Tensor value_noise(int side, int cell, Rng& rng) {
    const int n = side / cell + 2;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> lattice(static_cast<std::size_t>(n * n));
    for (double& v : lattice) v = u(rng);
    auto fade = [](double t) { return t * t * (3.0 - 2.0 * t); };
    Tensor out({side, side});
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
            const double y = static_cast<double>(r) / cell, x = static_cast<double>(c) / cell;
            const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
            const double fy = fade(y - y0), fx = fade(x - x0);
            auto at = [&](int i, int j) { return lattice[static_cast<std::size_t>(i * n + j)]; };
            const double top = at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx;
            const double bot = at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx;
            out.at(r, c) = top * (1 - fy) + bot * fy;
        }
    return out;
}

Tensor octaves(int side, std::initializer_list<std::pair<int, double>> spec, Rng& rng) {
    Tensor out({side, side});
    for (auto [cell, amp] : spec) {
        Tensor n = value_noise(side, cell, rng);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += amp * (n[i] - 0.5);
    }
    return out;
}

// Threshold of `field` whose super-level set covers `target` of the pixels.
double level_for_fraction(const Tensor& field, double target) {
    std::vector<double> v = field.data;
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size() - static_cast<std::size_t>(std::lround(target * static_cast<double>(v.size())));
    const std::size_t idx = std::min(k, v.size() - 1);
    return idx == 0 ? v[0] - 1.0 : 0.5 * (v[idx - 1] + v[idx]);
}

} // namespace

Sample synthesize_sample(const GeneratorConfig& cfg, Split split, int index, bool hard) {
    require(cfg.side >= 32, ErrorCode::InvalidArgument, "synthetic images need side >= 32");
    require(cfg.min_fraction > 0.0 && cfg.min_fraction <= cfg.max_fraction && cfg.max_fraction < 1.0,
            ErrorCode::InvalidArgument, "foreground fraction band");
    const int side = cfg.side;
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index)};
    Rng rng(seq);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> grain(0.0, 1.0);

    // Water support: a few radial bumps warped by low-frequency noise.
    const int blobs = 1 + static_cast<int>(u(rng) * 3.0);
    Tensor field({side, side});
    for (int b = 0; b < blobs; ++b) {
        const double cy = side * (0.15 + 0.7 * u(rng)), cx = side * (0.15 + 0.7 * u(rng));
        const double ry = side * (0.12 + 0.18 * u(rng)), rx = side * (0.12 + 0.18 * u(rng));
        const double weight = 0.6 + 0.4 * u(rng);
        for (int r = 0; r < side; ++r)
            for (int c = 0; c < side; ++c) {
                const double dy = (r - cy) / ry, dx = (c - cx) / rx;
                field.at(r, c) += weight * std::exp(-(dy * dy + dx * dx));
            }
    }
    Tensor warp = octaves(side, {{16, 0.5}, {8, 0.2}}, rng);
    for (std::size_t i = 0; i < field.size(); ++i) field[i] += warp[i];
    const double target = cfg.min_fraction + (cfg.max_fraction - cfg.min_fraction) * u(rng);
    const double level = level_for_fraction(field, target);
    Tensor mask({side, side});
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = field[i] > level ? 1.0 : 0.0;

    // Road: coarse shading plus rough asphalt texture. Water: smoother, offset intensity.
    const double base = 0.45 + 0.15 * (u(rng) - 0.5);
    Tensor shade = octaves(side, {{32, 0.25}}, rng);
    Tensor rough = octaves(side, {{4, 0.22}, {2, 0.14}}, rng);
    Tensor calm = octaves(side, {{16, 0.12}}, rng);
    const double sign = u(rng) < 0.7 ? -1.0 : 1.0; // mostly darker, sometimes sky-bright
    double offset = sign * (0.16 + 0.08 * u(rng));
    if (hard) offset *= cfg.hardness.contrast_keep;
    Tensor img({side, side});
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
            const std::size_t i = static_cast<std::size_t>(r * side + c);
            const bool wet = mask[i] > 0.5;
            double v = base + shade[i];
            v += wet ? offset + calm[i] + 0.25 * rough[i] : rough[i];
            v += (wet ? 0.01 : 0.035) * grain(rng);
            img[i] = v;
        }

    if (hard) {
        if (u(rng) < cfg.hardness.streak_probability) {
            const int streaks = 1 + static_cast<int>(u(rng) * 3.0);
            for (int s = 0; s < streaks; ++s) {
                const double angle = u(rng) * 3.14159265358979;
                const double ny = std::cos(angle), nx = -std::sin(angle);
                const double off = (u(rng) - 0.5) * side, width = 1.0 + 2.5 * u(rng);
                const double gain = 0.25 + 0.3 * u(rng);
                for (int r = 0; r < side; ++r)
                    for (int c = 0; c < side; ++c) {
                        const double d = (r - side / 2.0) * ny + (c - side / 2.0) * nx - off;
                        img.at(r, c) += gain * std::exp(-d * d / (width * width));
                    }
            }
        }
        if (u(rng) < 0.5) {
            for (double& v : img.data) v = std::pow(std::clamp(v, 0.0, 1.0), cfg.hardness.gamma);
        }
    }
    for (double& v : img.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;

    char stem[16];
    std::snprintf(stem, sizeof stem, "%04d", index);
    return {stem, imaging::Image(std::move(img)), std::move(mask), hard};
}

Tensor flip_horizontal(const Tensor& field) {
    require(field.rank() == 2, ErrorCode::ShapeMismatch, "flip expects [H, W]");
    Tensor out = field;
    const int h = field.dim(0), w = field.dim(1);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = field.at(r, w - 1 - c);
    return out;
}

// ---- PNG -------------------------------------------------------------------

Tensor read_png_gray(const std::string& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw Error(ErrorCode::IoError, path + ": " + image.message);
    image.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw Error(ErrorCode::IoError, path + ": " + image.message);
    }
    const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
    Tensor out({h, w});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i] / 255.0;
    return out;
}

Tensor read_png_mask(const std::string& path) {
    Tensor t = read_png_gray(path);
    for (double& v : t.data) v = v * 255.0 > 127.5 ? 1.0 : 0.0;
    return t;
}

void write_png_gray(const std::string& path, const Tensor& values) {
    require(values.rank() == 2, ErrorCode::ShapeMismatch, "PNG writer expects [H, W]");
    std::vector<png_byte> buf(values.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<png_byte>(std::lround(std::clamp(values[i], 0.0, 1.0) * 255.0));
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(values.dim(1));
    image.height = static_cast<png_uint_32>(values.dim(0));
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
        throw Error(ErrorCode::IoError, path + ": " + image.message);
}

// ---- on-disk dataset -------------------------------------------------------

namespace {

void make_dirs(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + p.string() + ": " + ec.message());
}

} // namespace

GeneratedDataset generate_synthetic_dataset(const std::string& root, const GeneratorConfig& cfg) {
    require(cfg.n_train >= 1 && cfg.n_test >= 1, ErrorCode::InvalidArgument, "need at least one train and test image");
    const fs::path base(root);
    for (const char* part : {"train", "test"}) {
        make_dirs(base / part / "images");
        make_dirs(base / part / "masks");
    }
    std::seed_seq flag_seq{static_cast<std::uint32_t>(cfg.seed), 0x4a11u};
    Rng flags(flag_seq);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::string> hard_stems;
    auto emit = [&](Split split, int n, double hard_fraction) {
        const char* part = split == Split::Train ? "train" : "test";
        for (int i = 0; i < n; ++i) {
            const bool hard = u(flags) < hard_fraction;
            Sample s = synthesize_sample(cfg, split, i, hard);
            write_png_gray((base / part / "images" / (s.stem + ".png")).string(), s.image.pixels());
            write_png_gray((base / part / "masks" / (s.stem + ".png")).string(), s.mask);
            if (split == Split::TestAll && hard) hard_stems.push_back(s.stem);
        }
    };
    emit(Split::Train, cfg.n_train, cfg.hardness.train_fraction);
    emit(Split::TestAll, cfg.n_test, cfg.hardness.test_fraction);
    {
        std::ofstream f(base / "test" / "hard.txt", std::ios::trunc);
        if (!f) throw Error(ErrorCode::IoError, "cannot write hard.txt");
        for (const auto& s : hard_stems) f << s << "\n";
    }
    return {index_split(root, Split::Train), index_split(root, Split::TestAll), index_split(root, Split::TestHard)};
}

DatasetIndex index_split(const std::string& root, Split split) {
    const fs::path dir = fs::path(root) / (split == Split::Train ? "train" : "test");
    const fs::path images = dir / "images", masks = dir / "masks";
    if (!fs::is_directory(images) || !fs::is_directory(masks))
        throw Error(ErrorCode::IoError, "missing " + images.string() + " or " + masks.string());
    std::set<std::string> stems;
    for (const auto& e : fs::directory_iterator(images))
        if (e.path().extension() == ".png") stems.insert(e.path().stem().string());
    if (split == Split::TestHard) {
        std::ifstream f(dir / "hard.txt");
        if (!f) throw Error(ErrorCode::IoError, "missing " + (dir / "hard.txt").string());
        std::set<std::string> hard;
        for (std::string line; std::getline(f, line);)
            if (!line.empty()) hard.insert(line);
        for (const auto& h : hard)
            require(stems.count(h) != 0, ErrorCode::InvalidArgument, "hard.txt lists unknown stem " + h);
        stems = hard;
    }
    DatasetIndex idx;
    idx.root = root;
    idx.split = split;
    for (const auto& s : stems) {
        const fs::path m = masks / (s + ".png");
        require(fs::exists(m), ErrorCode::InvalidArgument, "image " + s + " has no mask");
        idx.stems.push_back(s);
        idx.pairs.emplace_back((images / (s + ".png")).string(), m.string());
    }
    if (idx.pairs.empty()) throw Error(ErrorCode::EmptyDataset, "no image/mask pairs under " + dir.string());
    return idx;
}

std::vector<Sample> load_samples(const DatasetIndex& index) {
    std::set<std::string> hard;
    if (index.split != Split::Train) {
        std::ifstream f(fs::path(index.root) / "test" / "hard.txt");
        for (std::string line; std::getline(f, line);)
            if (!line.empty()) hard.insert(line);
    }
    std::vector<Sample> out;
    for (std::size_t i = 0; i < index.pairs.size(); ++i) {
        Tensor img = read_png_gray(index.pairs[i].first);
        Tensor mask = read_png_mask(index.pairs[i].second);
        require(img.same_shape(mask), ErrorCode::ShapeMismatch, index.stems[i] + ": image and mask sizes differ");
        out.push_back({index.stems[i], imaging::Image(std::move(img)), std::move(mask), hard.count(index.stems[i]) > 0});
    }
    return out;
}

std::vector<Sample> subset_by_ratio(const std::vector<Sample>& samples, double ratio, std::uint64_t seed) {
    require(ratio > 0.0 && ratio <= 1.0, ErrorCode::InvalidArgument, "ratio must be in (0, 1]");
    if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "cannot subset an empty dataset");
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu};
    Rng rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(ratio * samples.size() - 1e-9)));
    order.resize(n);
    std::sort(order.begin(), order.end());
    std::vector<Sample> out;
    for (std::size_t i : order) out.push_back(samples[i]);
    return out;
}

} // namespace lsm

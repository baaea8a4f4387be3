#include "lsm/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "lsm/error.hpp"

namespace lsm {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw Error(ErrorCode::InvalidArgument, "bad value '" + v + "' for " + key);
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw Error(ErrorCode::InvalidArgument, "bad boolean '" + v + "' for " + key);
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

struct Field {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

#define LSM_NUM(member, path)                                                                              \
    Field {                                                                                                \
        [](TrainConfig& c, const std::string& v) { c.path = parse_number<decltype(c.path)>(#member, v); }, \
            [](const TrainConfig& c) {                                                                     \
                if constexpr (std::is_floating_point_v<decltype(c.path)>)                                  \
                    return fmt(c.path);                                                                    \
                else                                                                                       \
                    return std::to_string(c.path);                                                         \
            }                                                                                              \
    }

#define LSM_BOOL(member, path)                                                              \
    Field {                                                                                 \
        [](TrainConfig& c, const std::string& v) { c.path = parse_bool(#member, v); },      \
            [](const TrainConfig& c) { return std::string(c.path ? "true" : "false"); }     \
    }

#define LSM_STR(path)                                                 \
    Field {                                                           \
        [](TrainConfig& c, const std::string& v) { c.path = v; },     \
            [](const TrainConfig& c) { return c.path; }               \
    }

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"strategy", {[](TrainConfig& c, const std::string& v) { c.strategy = parse_strategy(v); },
                      [](const TrainConfig& c) { return std::string(c.strategy == Strategy::OneStage ? "one" : "two"); }}},
        {"pretrain_epochs", LSM_NUM(pretrain_epochs, pretrain_epochs)},
        {"stage1_epochs", LSM_NUM(stage1_epochs, stage1_epochs)},
        {"stage2_epochs", LSM_NUM(stage2_epochs, stage2_epochs)},
        {"one_stage_epochs", LSM_NUM(one_stage_epochs, one_stage_epochs)},
        {"batch_size", LSM_NUM(batch_size, batch_size)},
        {"lr", LSM_NUM(lr, lr)},
        {"weight_decay", LSM_NUM(weight_decay, weight_decay)},
        {"lambda", LSM_NUM(lambda, lambda)},
        {"temperature", LSM_NUM(temperature, temperature)},
        {"focal_gamma", LSM_NUM(focal_gamma, focal_gamma)},
        {"focal_alpha", LSM_NUM(focal_alpha, focal_alpha)},
        {"seed", LSM_NUM(seed, seed)},
        {"ratio", LSM_NUM(ratio, ratio)},
        {"flip", LSM_BOOL(flip, flip)},
        {"image_side", LSM_NUM(image_side, model.image_side)},
        {"patch_size", LSM_NUM(patch_size, model.patch_size)},
        {"embed_dim", LSM_NUM(embed_dim, model.embed_dim)},
        {"num_heads", LSM_NUM(num_heads, model.num_heads)},
        {"encoder_depth", LSM_NUM(encoder_depth, model.encoder_depth)},
        {"decoder_layers", LSM_NUM(decoder_layers, model.decoder_layers)},
        {"small_widths",
         {[](TrainConfig& c, const std::string& v) {
              std::vector<int> w;
              std::stringstream ss(v);
              std::string item;
              while (std::getline(ss, item, ',')) w.push_back(parse_number<int>("small_widths", trim(item)));
              c.model.small.widths = w;
          },
          [](const TrainConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.model.small.widths.size(); ++i)
                  s += (i ? "," : "") + std::to_string(c.model.small.widths[i]);
              return s;
          }}},
        {"num_prototypes_per_class", LSM_NUM(num_prototypes_per_class, model.prototypes_per_class)},
        {"momentum", LSM_NUM(momentum, model.momentum)},
        {"adaptive_tokens", LSM_NUM(adaptive_tokens, model.adaptive_tokens)},
        {"cutoff_ratio", LSM_NUM(cutoff_ratio, model.cutoff_ratio)},
        {"use_he_adapt", LSM_BOOL(use_he_adapt, components.he_adapt)},
        {"use_spatial", LSM_BOOL(use_spatial, components.spatial)},
        {"use_semantic", LSM_BOOL(use_semantic, components.semantic)},
        {"use_style", LSM_BOOL(use_style, components.style)},
        {"use_dpc", LSM_BOOL(use_dpc, components.dpc)},
        {"spatial_mode", {[](TrainConfig& c, const std::string& v) { c.spatial.mode = parse_spatial_mode(v); },
                          [](const TrainConfig& c) { return std::string(to_string(c.spatial.mode)); }}},
        {"grid_size", LSM_NUM(grid_size, spatial.grid_size)},
        {"tau", LSM_NUM(tau, spatial.tau)},
        {"box_threshold", LSM_NUM(box_threshold, spatial.box_threshold)},
        {"data_root", LSM_STR(data_root)},
        {"out_dir", LSM_STR(out_dir)},
    };
    return table;
}

} // namespace

const char* to_string(Strategy s) { return s == Strategy::OneStage ? "one-stage" : "two-stage"; }

Strategy parse_strategy(const std::string& text) {
    if (text == "one" || text == "one-stage") return Strategy::OneStage;
    if (text == "two" || text == "two-stage") return Strategy::TwoStage;
    throw Error(ErrorCode::InvalidArgument, "unknown strategy '" + text + "' (expected one|two)");
}

void TrainConfig::validate() const {
    auto check = [](bool ok, const std::string& what) { require(ok, ErrorCode::InvalidArgument, what); };
    check(lr > 0.0 && std::isfinite(lr), "lr must be > 0");
    check(ratio > 0.0 && ratio <= 1.0, "ratio must be in (0, 1]");
    check(batch_size >= 1, "batch_size must be >= 1");
    check(pretrain_epochs >= 0, "pretrain_epochs must be >= 0");
    if (strategy == Strategy::TwoStage)
        check(stage1_epochs >= 1 && stage2_epochs >= 1, "two-stage training needs stage1_epochs and stage2_epochs >= 1");
    else
        check(one_stage_epochs >= 1, "one-stage training needs one_stage_epochs >= 1");
    check(lambda >= 0.0, "lambda must be >= 0");
    check(temperature > 0.0, "temperature must be > 0");
    check(spatial.tau > 0.0 && spatial.tau < 1.0, "tau must be in (0, 1)");
    check(spatial.grid_size >= 1 && spatial.grid_size <= model.image_side, "grid_size out of range");
    check(model.image_side >= 32 && model.image_side % 16 == 0, "image_side must be a multiple of 16, >= 32");
    check(model.patch_size >= 2 && model.image_side % model.patch_size == 0, "patch_size must divide image_side");
    check(model.embed_dim % 4 == 0 && model.embed_dim % model.num_heads == 0,
          "embed_dim must be a multiple of 4 and of num_heads");
    check(model.prototypes_per_class >= 1, "num_prototypes_per_class must be >= 1");
    check(model.momentum >= 0.0 && model.momentum <= 1.0, "momentum must be in [0, 1]");
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& [name, field] : fields())
        if (name == key) {
            field.set(cfg, value);
            return;
        }
    throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::InvalidArgument, "line " + std::to_string(lineno) + ": expected key = value");
        set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCode::IoError, "cannot read config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

std::string to_text(const TrainConfig& cfg) {
    std::string out;
    for (const auto& [name, field] : fields()) out += name + " = " + field.get(cfg) + "\n";
    return out;
}

} // namespace lsm

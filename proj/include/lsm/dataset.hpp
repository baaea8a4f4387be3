#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lsm/imaging.hpp"

namespace lsm {

enum class Split { Train, TestAll, TestHard };
const char* to_string(Split s);
Split parse_split(const std::string& text);

/// Image/mask path pairs of one split. Layout: root/{train,test}/{images,masks}/NNNN.png,
/// with root/test/hard.txt listing the stems of the hard test subset.
struct DatasetIndex {
    std::string root;
    Split split = Split::Train;
    std::vector<std::string> stems;
    std::vector<std::pair<std::string, std::string>> pairs; // (image, mask)

    std::size_t size() const { return pairs.size(); }
};

struct Sample {
    std::string stem;
    imaging::Image image;
    Tensor mask; // [H, W], values in {0, 1}
    bool hard = false;
};

struct HardnessProfile {
    double train_fraction = 0.3;
    double test_fraction = 0.4;
    double contrast_keep = 0.35;     // water/background contrast is scaled by this
    double streak_probability = 0.7; // chance of specular streaks on a hard image
    double gamma = 1.8;              // darkening exponent on low-light hard images
};

struct GeneratorConfig {
    std::uint64_t seed = 7;
    int n_train = 200;
    int n_test = 50;
    int side = 64;
    double min_fraction = 0.08;
    double max_fraction = 0.35;
    HardnessProfile hardness;
};

/// One synthetic road image with its exact water mask; already quantized to 8 bits.
Sample synthesize_sample(const GeneratorConfig& cfg, Split split, int index, bool hard);

struct GeneratedDataset {
    DatasetIndex train;
    DatasetIndex test;
    DatasetIndex hard;
};

/// Writes the PNG pairs and hard.txt under root. Throws IoError.
GeneratedDataset generate_synthetic_dataset(const std::string& root, const GeneratorConfig& cfg);

/// Throws IoError, EmptyDataset (no pairs), InvalidArgument (image without mask).
DatasetIndex index_split(const std::string& root, Split split);
std::vector<Sample> load_samples(const DatasetIndex& index);

/// First ceil(r * n) samples of a seeded permutation, at least one.
std::vector<Sample> subset_by_ratio(const std::vector<Sample>& samples, double ratio, std::uint64_t seed);

/// 8-bit grayscale PNG IO; values are v/255. Throws IoError.
Tensor read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const Tensor& values);
/// Mask pixels > 127 become 1.
Tensor read_png_mask(const std::string& path);

Tensor flip_horizontal(const Tensor& field);

} // namespace lsm

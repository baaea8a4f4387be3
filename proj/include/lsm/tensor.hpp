#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lsm {

/// Dense row-major float64 array. Token sequences are [T, D]; feature maps
/// are [C, H, W]; images are [H, W].
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> dims, double fill = 0.0);
    Tensor(std::vector<int> dims, std::vector<double> values);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape); }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // 2-D accessors.
    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

    std::span<double> values() { return data; }
    std::span<const double> values() const { return data; }

    Tensor reshaped(std::vector<int> dims) const;
    void fill(double v);
};

std::size_t element_count(const std::vector<int>& dims);
std::string shape_string(const std::vector<int>& dims);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(std::span<const double> v);

} // namespace lsm

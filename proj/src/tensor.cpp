#include "lsm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lsm/error.hpp"

namespace lsm {

std::size_t element_count(const std::vector<int>& dims) {
    std::size_t n = 1;
    for (int d : dims) {
        require(d >= 0, ErrorCode::InvalidArgument, "negative dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const std::vector<int>& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<int> dims, double fill_value)
    : shape(std::move(dims)), data(element_count(shape), fill_value) {}

Tensor::Tensor(std::vector<int> dims, std::vector<double> values) : shape(std::move(dims)), data(std::move(values)) {
    require(data.size() == element_count(shape), ErrorCode::ShapeMismatch,
            "value count does not match shape " + shape_string(shape));
}

Tensor Tensor::reshaped(std::vector<int> dims) const {
    require(element_count(dims) == data.size(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_string(shape) + " to " + shape_string(dims));
    return Tensor(std::move(dims), data);
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require(a.size() == b.size(), ErrorCode::ShapeMismatch, "max_abs_diff size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

} // namespace lsm

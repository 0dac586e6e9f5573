#include "percival/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace percival {

std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

static void check_dims(const Shape& dims) {
    if (dims.empty() || dims.size() > 4) {
        throw ShapeError("tensor rank must be 1..4, got " + shape_to_string(dims));
    }
    for (auto d : dims) {
        if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_to_string(dims));
    }
}

Tensor::Tensor(Shape dims) : Tensor(std::move(dims), 0.0f) {}

Tensor::Tensor(Shape dims, float fill) : dims_(std::move(dims)) {
    check_dims(dims_);
    data_.assign(shape_numel(dims_), fill);
}

Tensor::Tensor(Shape dims, std::vector<float> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims(dims_);
    if (shape_numel(dims_) != data_.size()) {
        throw ShapeError("tensor dims " + shape_to_string(dims_) + " hold " +
                         std::to_string(shape_numel(dims_)) + " values, got " +
                         std::to_string(data_.size()));
    }
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace percival

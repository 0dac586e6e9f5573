#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace percival {

/// Raised when tensor or layer shapes do not line up. The message names the
/// offending layer and the dims involved.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense float32 array. Activations use [channels, height, width] with width
/// varying fastest.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape dims);
    Tensor(Shape dims, float fill);
    Tensor(Shape dims, std::vector<float> data);

    const Shape& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // CHW accessors; only meaningful for rank-3 tensors.
    float& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * dims_[1] + y) * dims_[2] + x];
    }
    float at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * dims_[1] + y) * dims_[2] + x];
    }

    std::size_t channels() const { return dims_.at(0); }
    std::size_t height() const { return dims_.at(1); }
    std::size_t width() const { return dims_.at(2); }

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape dims_;
    std::vector<float> data_;
};

}  // namespace percival

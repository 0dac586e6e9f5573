#pragma once

#include <string>
#include <vector>

#include "percival/tensor.hpp"

namespace percival::nn {

/// A 2-D convolution layer. Weights are laid out [out, in, kh, kw] and the
/// layer computes cross-correlation (no kernel flip) plus bias.
struct ConvSpec {
    std::string name;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::vector<float> weights;
    std::vector<float> bias;

    std::size_t weight_count() const { return out_channels * in_channels * kernel_h * kernel_w; }
    Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
    std::size_t param_count() const { return weight_count() + out_channels; }

    /// Throws ShapeError when the weight/bias buffers disagree with the declared dims.
    void validate() const;
};

struct FireSpec {
    std::string name;
    ConvSpec squeeze;  // 1x1
    ConvSpec expand1;  // 1x1
    ConvSpec expand3;  // 3x3, padding 1

    std::size_t in_channels() const { return squeeze.in_channels; }
    std::size_t out_channels() const { return expand1.out_channels + expand3.out_channels; }
    std::size_t param_count() const {
        return squeeze.param_count() + expand1.param_count() + expand3.param_count();
    }
    void validate() const;
};

/// Builds a zero-weight conv layer with the given geometry.
ConvSpec make_conv(std::string name, std::size_t in, std::size_t out, std::size_t kernel,
                   std::size_t stride = 1, std::size_t padding = 0);

/// Builds a zero-weight fire module. The 3x3 expand pads by one.
FireSpec make_fire(std::string name, std::size_t in, std::size_t squeeze, std::size_t expand1,
                   std::size_t expand3);

Shape conv_output_shape(const Shape& input, const ConvSpec& spec);
Shape maxpool_output_shape(const Shape& input, std::size_t k, std::size_t stride);

Tensor conv2d(const Tensor& input, const ConvSpec& spec);
Tensor relu(Tensor input);
void relu_inplace(Tensor& t);
Tensor maxpool2d(const Tensor& input, std::size_t k, std::size_t stride);
Tensor global_avgpool(const Tensor& input);
Tensor channel_concat(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& logits);
Tensor fire_forward(const Tensor& input, const FireSpec& spec);

}  // namespace percival::nn

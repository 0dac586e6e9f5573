#include "percival/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace percival::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

std::string layer_label(const ConvSpec& spec) {
    return spec.name.empty() ? std::string("conv") : spec.name;
}

void require_chw(const Tensor& t, const std::string& layer) {
    if (t.rank() != 3) {
        throw ShapeError(layer + ": expected [C,H,W] input, got " + shape_to_string(t.dims()));
    }
}

// Unfolds [C,H,W] into a [C*kh*kw, Ho*Wo] patch matrix.
void im2col(const Tensor& input, const ConvSpec& spec, std::size_t out_h, std::size_t out_w,
            std::vector<float>& cols) {
    const std::size_t h = input.height();
    const std::size_t w = input.width();
    const std::size_t kh = spec.kernel_h;
    const std::size_t kw = spec.kernel_w;
    const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
    const std::size_t plane = out_h * out_w;
    cols.assign(spec.in_channels * kh * kw * plane, 0.0f);
    const float* src = input.data().data();
    for (std::size_t c = 0; c < spec.in_channels; ++c) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                float* row = cols.data() + ((c * kh + ky) * kw + kx) * plane;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    const float* in_row = src + (c * h + static_cast<std::size_t>(iy)) * w;
                    float* out_row = row + oy * out_w;
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) {
                            out_row[ox] = in_row[ix];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

void ConvSpec::validate() const {
    const std::string label = layer_label(*this);
    if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0) {
        throw ShapeError(label + ": channels, kernel and stride must be positive");
    }
    if (weights.size() != weight_count()) {
        throw ShapeError(label + ": weight buffer holds " + std::to_string(weights.size()) +
                         " values, expected " + shape_to_string(weight_shape()));
    }
    if (bias.size() != out_channels) {
        throw ShapeError(label + ": bias holds " + std::to_string(bias.size()) + " values, expected " +
                         std::to_string(out_channels));
    }
}

void FireSpec::validate() const {
    squeeze.validate();
    expand1.validate();
    expand3.validate();
    if (expand1.in_channels != squeeze.out_channels || expand3.in_channels != squeeze.out_channels) {
        throw ShapeError(name + ": expand layers must consume the " +
                         std::to_string(squeeze.out_channels) + " squeeze channels");
    }
    if (squeeze.kernel_h != 1 || squeeze.kernel_w != 1 || expand1.kernel_h != 1 ||
        expand1.kernel_w != 1) {
        throw ShapeError(name + ": squeeze and expand1 must be 1x1");
    }
    if (expand3.kernel_h != 3 || expand3.kernel_w != 3 || expand3.padding != 1 ||
        expand3.stride != 1) {
        throw ShapeError(name + ": expand3 must be 3x3, stride 1, padding 1");
    }
}

ConvSpec make_conv(std::string name, std::size_t in, std::size_t out, std::size_t kernel,
                   std::size_t stride, std::size_t padding) {
    ConvSpec spec;
    spec.name = std::move(name);
    spec.in_channels = in;
    spec.out_channels = out;
    spec.kernel_h = kernel;
    spec.kernel_w = kernel;
    spec.stride = stride;
    spec.padding = padding;
    spec.weights.assign(spec.weight_count(), 0.0f);
    spec.bias.assign(out, 0.0f);
    return spec;
}

FireSpec make_fire(std::string name, std::size_t in, std::size_t squeeze, std::size_t expand1,
                   std::size_t expand3) {
    FireSpec spec;
    spec.squeeze = make_conv(name + ".squeeze", in, squeeze, 1);
    spec.expand1 = make_conv(name + ".expand1", squeeze, expand1, 1);
    spec.expand3 = make_conv(name + ".expand3", squeeze, expand3, 3, 1, 1);
    spec.name = std::move(name);
    return spec;
}

Shape conv_output_shape(const Shape& input, const ConvSpec& spec) {
    const std::string label = layer_label(spec);
    if (input.size() != 3) {
        throw ShapeError(label + ": expected [C,H,W] input, got " + shape_to_string(input));
    }
    if (input[0] != spec.in_channels) {
        throw ShapeError(label + ": input " + shape_to_string(input) + " has " +
                         std::to_string(input[0]) + " channels, layer expects " +
                         std::to_string(spec.in_channels));
    }
    const std::size_t padded_h = input[1] + 2 * spec.padding;
    const std::size_t padded_w = input[2] + 2 * spec.padding;
    if (padded_h < spec.kernel_h || padded_w < spec.kernel_w) {
        throw ShapeError(label + ": input " + shape_to_string(input) + " smaller than " +
                         std::to_string(spec.kernel_h) + "x" + std::to_string(spec.kernel_w) +
                         " kernel");
    }
    return {spec.out_channels, (padded_h - spec.kernel_h) / spec.stride + 1,
            (padded_w - spec.kernel_w) / spec.stride + 1};
}

Shape maxpool_output_shape(const Shape& input, std::size_t k, std::size_t stride) {
    if (k < 1 || stride < 1) {
        throw ShapeError("maxpool: kernel and stride must be >= 1");
    }
    if (input.size() != 3) {
        throw ShapeError("maxpool: expected [C,H,W] input, got " + shape_to_string(input));
    }
    if (input[1] < k || input[2] < k) {
        throw ShapeError("maxpool: input " + shape_to_string(input) + " smaller than window " +
                         std::to_string(k));
    }
    return {input[0], (input[1] - k) / stride + 1, (input[2] - k) / stride + 1};
}

Tensor conv2d(const Tensor& input, const ConvSpec& spec) {
    require_chw(input, layer_label(spec));
    spec.validate();
    const Shape out_shape = conv_output_shape(input.dims(), spec);
    const std::size_t out_h = out_shape[1];
    const std::size_t out_w = out_shape[2];
    const std::size_t plane = out_h * out_w;
    const std::size_t patch = spec.in_channels * spec.kernel_h * spec.kernel_w;

    Tensor out(out_shape);
    ConstMatrixMap weights(spec.weights.data(), static_cast<Eigen::Index>(spec.out_channels),
                           static_cast<Eigen::Index>(patch));
    MatrixMap result(out.data().data(), static_cast<Eigen::Index>(spec.out_channels),
                     static_cast<Eigen::Index>(plane));

    const bool direct = spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 &&
                        spec.padding == 0;
    if (direct) {
        ConstMatrixMap cols(input.data().data(), static_cast<Eigen::Index>(patch),
                            static_cast<Eigen::Index>(plane));
        result.noalias() = weights * cols;
    } else {
        std::vector<float> buffer;
        im2col(input, spec, out_h, out_w, buffer);
        ConstMatrixMap cols(buffer.data(), static_cast<Eigen::Index>(patch),
                            static_cast<Eigen::Index>(plane));
        result.noalias() = weights * cols;
    }
    for (std::size_t o = 0; o < spec.out_channels; ++o) {
        result.row(static_cast<Eigen::Index>(o)).array() += spec.bias[o];
    }
    return out;
}

void relu_inplace(Tensor& t) {
    for (float& v : t.data()) v = std::max(v, 0.0f);
}

Tensor relu(Tensor input) {
    relu_inplace(input);
    return input;
}

Tensor maxpool2d(const Tensor& input, std::size_t k, std::size_t stride) {
    const Shape out_shape = maxpool_output_shape(input.dims(), k, stride);
    Tensor out(out_shape);
    const std::size_t channels = out_shape[0];
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t oy = 0; oy < out_shape[1]; ++oy) {
            for (std::size_t ox = 0; ox < out_shape[2]; ++ox) {
                float best = -std::numeric_limits<float>::infinity();
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        best = std::max(best, input.at(c, oy * stride + ky, ox * stride + kx));
                    }
                }
                out.at(c, oy, ox) = best;
            }
        }
    }
    return out;
}

Tensor global_avgpool(const Tensor& input) {
    require_chw(input, "global_avgpool");
    const std::size_t plane = input.height() * input.width();
    Tensor out({input.channels()});
    const float* src = input.data().data();
    for (std::size_t c = 0; c < input.channels(); ++c) {
        double sum = 0.0;
        for (std::size_t i = 0; i < plane; ++i) sum += src[c * plane + i];
        out[c] = static_cast<float>(sum / static_cast<double>(plane));
    }
    return out;
}

Tensor channel_concat(const Tensor& a, const Tensor& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    require_chw(a, "concat");
    require_chw(b, "concat");
    if (a.height() != b.height() || a.width() != b.width()) {
        throw ShapeError("concat: spatial mismatch " + shape_to_string(a.dims()) + " vs " +
                         shape_to_string(b.dims()));
    }
    std::vector<float> data;
    data.reserve(a.size() + b.size());
    data.insert(data.end(), a.data().begin(), a.data().end());
    data.insert(data.end(), b.data().begin(), b.data().end());
    return Tensor({a.channels() + b.channels(), a.height(), a.width()}, std::move(data));
}

Tensor softmax(const Tensor& logits) {
    if (logits.empty()) throw ShapeError("softmax: empty input");
    const auto values = logits.data();
    const float peak = *std::max_element(values.begin(), values.end());
    std::vector<double> exps(values.size());
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        exps[i] = std::exp(static_cast<double>(values[i]) - static_cast<double>(peak));
        total += exps[i];
    }
    Tensor out(logits.dims());
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = static_cast<float>(exps[i] / total);
    }
    return out;
}

Tensor fire_forward(const Tensor& input, const FireSpec& spec) {
    spec.validate();
    Tensor squeezed = conv2d(input, spec.squeeze);
    relu_inplace(squeezed);
    Tensor left = conv2d(squeezed, spec.expand1);
    relu_inplace(left);
    Tensor right = conv2d(squeezed, spec.expand3);
    relu_inplace(right);
    return channel_concat(left, right);
}

}  // namespace percival::nn

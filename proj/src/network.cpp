#include "percival/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace percival {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Visits every conv inside the spec in declaration order.
template <class Spec, class Fn>
void for_each_conv(Spec& spec, Fn&& fn) {
    for (auto& layer : spec.layers) {
        if (auto* conv = std::get_if<ConvLayer>(&layer)) {
            fn(conv->conv);
        } else if (auto* fire = std::get_if<FireLayer>(&layer)) {
            fn(fire->fire.squeeze);
            fn(fire->fire.expand1);
            fn(fire->fire.expand3);
        }
    }
}

}  // namespace

NetworkSpec reference_network() {
    NetworkSpec spec;
    spec.layers.emplace_back(ConvLayer{nn::make_conv("conv1", kInputChannels, 64, 3, 2, 0), true});
    spec.layers.emplace_back(MaxPoolLayer{3, 2});
    spec.layers.emplace_back(FireLayer{nn::make_fire("fire1", 64, 16, 64, 64)});
    spec.layers.emplace_back(FireLayer{nn::make_fire("fire2", 128, 16, 64, 64)});
    spec.layers.emplace_back(MaxPoolLayer{3, 2});
    spec.layers.emplace_back(FireLayer{nn::make_fire("fire3", 128, 32, 128, 128)});
    spec.layers.emplace_back(FireLayer{nn::make_fire("fire4", 256, 32, 128, 128)});
    spec.layers.emplace_back(MaxPoolLayer{3, 2});
    spec.layers.emplace_back(FireLayer{nn::make_fire("fire5", 256, 48, 192, 192)});
    spec.layers.emplace_back(FireLayer{nn::make_fire("fire6", 384, 48, 192, 192)});
    spec.layers.emplace_back(MaxPoolLayer{3, 2});
    // Classifier head: no ReLU so logits can go negative.
    spec.layers.emplace_back(ConvLayer{nn::make_conv("conv2", 384, 2, 1), false});
    spec.layers.emplace_back(GlobalAvgPoolLayer{});
    spec.layers.emplace_back(SoftmaxLayer{});
    return spec;
}

std::vector<ParamInfo> parameter_table(const NetworkSpec& spec) {
    std::vector<ParamInfo> table;
    for_each_conv(spec, [&](const nn::ConvSpec& conv) {
        table.push_back({conv.name + ".w", conv.weight_shape()});
        table.push_back({conv.name + ".b", {conv.out_channels}});
    });
    return table;
}

std::size_t parameter_count(const NetworkSpec& spec) {
    std::size_t total = 0;
    for_each_conv(spec, [&](const nn::ConvSpec& conv) { total += conv.param_count(); });
    return total;
}

Shape infer_output_shape(const NetworkSpec& spec) {
    Shape shape = spec.input_shape;
    for (const auto& layer : spec.layers) {
        std::visit(overloaded{
                       [&](const ConvLayer& l) { shape = nn::conv_output_shape(shape, l.conv); },
                       [&](const MaxPoolLayer& l) {
                           shape = nn::maxpool_output_shape(shape, l.kernel, l.stride);
                       },
                       [&](const FireLayer& l) {
                           l.fire.validate();
                           Shape squeezed = nn::conv_output_shape(shape, l.fire.squeeze);
                           Shape left = nn::conv_output_shape(squeezed, l.fire.expand1);
                           Shape right = nn::conv_output_shape(squeezed, l.fire.expand3);
                           if (left[1] != right[1] || left[2] != right[2]) {
                               throw ShapeError(l.fire.name + ": expand branches disagree " +
                                                shape_to_string(left) + " vs " +
                                                shape_to_string(right));
                           }
                           shape = {left[0] + right[0], left[1], left[2]};
                       },
                       [&](const GlobalAvgPoolLayer&) {
                           if (shape.size() != 3) {
                               throw ShapeError("global_avgpool: expected [C,H,W], got " +
                                                shape_to_string(shape));
                           }
                           shape = {shape[0]};
                       },
                       [&](const SoftmaxLayer&) {
                           if (shape.size() != 1) {
                               throw ShapeError("softmax: expected [N], got " + shape_to_string(shape));
                           }
                       },
                   },
                   layer);
    }
    return shape;
}

WeightSet extract_weights(const NetworkSpec& spec) {
    WeightSet weights;
    for_each_conv(spec, [&](const nn::ConvSpec& conv) {
        weights.emplace(conv.name + ".w", Tensor(conv.weight_shape(), conv.weights));
        weights.emplace(conv.name + ".b", Tensor({conv.out_channels}, conv.bias));
    });
    return weights;
}

void bind_weights(NetworkSpec& spec, const WeightSet& weights) {
    std::set<std::string> used;
    auto take = [&](const std::string& name, const Shape& shape) -> const Tensor& {
        auto it = weights.find(name);
        if (it == weights.end()) {
            throw WeightMismatch(name, "missing tensor '" + name + "'");
        }
        if (it->second.dims() != shape) {
            throw WeightMismatch(name, "tensor '" + name + "' has shape " +
                                           shape_to_string(it->second.dims()) + ", expected " +
                                           shape_to_string(shape));
        }
        used.insert(name);
        return it->second;
    };
    // Validate everything before mutating the spec.
    for (const auto& info : parameter_table(spec)) take(info.name, info.shape);
    for (const auto& [name, tensor] : weights) {
        if (!used.contains(name)) {
            throw WeightMismatch(name, "unexpected tensor '" + name + "'");
        }
    }
    for_each_conv(spec, [&](nn::ConvSpec& conv) {
        conv.weights = weights.at(conv.name + ".w").values();
        conv.bias = weights.at(conv.name + ".b").values();
    });
}

void init_random_weights(NetworkSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for_each_conv(spec, [&](nn::ConvSpec& conv) {
        const double fan_in = static_cast<double>(conv.in_channels * conv.kernel_h * conv.kernel_w);
        std::normal_distribution<float> weight_dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
        std::uniform_real_distribution<float> bias_dist(-0.05f, 0.05f);
        for (auto& w : conv.weights) w = weight_dist(rng);
        for (auto& b : conv.bias) b = bias_dist(rng);
    });
}

void init_channel_probe_weights(NetworkSpec& spec, std::size_t channel, float gain, float bias) {
    std::vector<nn::ConvSpec*> convs;
    for_each_conv(spec, [&](nn::ConvSpec& conv) {
        std::fill(conv.weights.begin(), conv.weights.end(), 0.0f);
        std::fill(conv.bias.begin(), conv.bias.end(), 0.0f);
        convs.push_back(&conv);
    });
    if (convs.size() < 2) throw std::invalid_argument("probe weights need at least two convolutions");
    if (channel >= convs.front()->in_channels) throw std::invalid_argument("probe channel out of range");
    if (spec.num_classes < 2) throw std::invalid_argument("probe weights need two classes");

    auto at = [](nn::ConvSpec& c, std::size_t o, std::size_t i, std::size_t y, std::size_t x) -> float& {
        return c.weights[((o * c.in_channels + i) * c.kernel_h + y) * c.kernel_w + x];
    };
    nn::ConvSpec& first = *convs.front();
    const float area = static_cast<float>(first.kernel_h * first.kernel_w);
    for (std::size_t y = 0; y < first.kernel_h; ++y)
        for (std::size_t x = 0; x < first.kernel_w; ++x) at(first, 0, channel, y, x) = 1.0f / area;

    // Fire expand3 convs stay zero; channel 0 of every block carries the signal.
    for (std::size_t k = 1; k + 1 < convs.size(); ++k) {
        nn::ConvSpec& c = *convs[k];
        if (c.kernel_h != 1 || c.kernel_w != 1) continue;
        at(c, 0, 0, 0, 0) = 1.0f;
    }
    nn::ConvSpec& last = *convs.back();
    at(last, kAdClass, 0, 0, 0) = gain;
    last.bias[kAdClass] = bias;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
    for_each_conv(spec_, [](const nn::ConvSpec& conv) { conv.validate(); });
    const Shape out = infer_output_shape(spec_);
    if (out != Shape{spec_.num_classes}) {
        throw ShapeError("network output " + shape_to_string(out) + " does not match " +
                         std::to_string(spec_.num_classes) + " classes");
    }
}

void Network::check_input(const Tensor& input) const {
    if (input.dims() != spec_.input_shape) {
        throw ShapeError("network input must be " + shape_to_string(spec_.input_shape) + ", got " +
                         shape_to_string(input.dims()));
    }
}

Tensor Network::logits(const Tensor& input) const {
    check_input(input);
    Tensor x = input;
    for (const auto& layer : spec_.layers) {
        if (std::holds_alternative<SoftmaxLayer>(layer)) break;
        std::visit(overloaded{
                       [&](const ConvLayer& l) {
                           x = nn::conv2d(x, l.conv);
                           if (l.relu) nn::relu_inplace(x);
                       },
                       [&](const MaxPoolLayer& l) { x = nn::maxpool2d(x, l.kernel, l.stride); },
                       [&](const FireLayer& l) { x = nn::fire_forward(x, l.fire); },
                       [&](const GlobalAvgPoolLayer&) { x = nn::global_avgpool(x); },
                       [&](const SoftmaxLayer&) {},
                   },
                   layer);
    }
    return x;
}

Tensor Network::forward(const Tensor& input) const { return nn::softmax(logits(input)); }

}  // namespace percival

#pragma once

// Straight-loop reference implementations of the layer ops, in double
// precision. Nothing here calls into the library's compute code; only the
// plain data structs (ConvSpec, NetworkSpec) are shared.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <variant>
#include <vector>

#include "percival/network.hpp"

namespace oracle {

struct Volume {
    std::size_t c = 0, h = 0, w = 0;
    std::vector<double> v;

    double& at(std::size_t ci, std::size_t y, std::size_t x) { return v[(ci * h + y) * w + x]; }
    double at(std::size_t ci, std::size_t y, std::size_t x) const { return v[(ci * h + y) * w + x]; }
};

inline Volume from_tensor(const percival::Tensor& t) {
    Volume out{t.dim(0), t.dim(1), t.dim(2), {}};
    out.v.assign(t.data().begin(), t.data().end());
    return out;
}

inline Volume conv(const Volume& in, const percival::nn::ConvSpec& s) {
    const std::size_t oh = (in.h + 2 * s.padding - s.kernel_h) / s.stride + 1;
    const std::size_t ow = (in.w + 2 * s.padding - s.kernel_w) / s.stride + 1;
    Volume out{s.out_channels, oh, ow, std::vector<double>(s.out_channels * oh * ow)};
    for (std::size_t o = 0; o < s.out_channels; ++o) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = s.bias[o];
                for (std::size_t i = 0; i < s.in_channels; ++i) {
                    for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
                        for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
                            const long iy = static_cast<long>(y * s.stride + ky) - static_cast<long>(s.padding);
                            const long ix = static_cast<long>(x * s.stride + kx) - static_cast<long>(s.padding);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.h) || ix >= static_cast<long>(in.w)) {
                                continue;
                            }
                            const double w =
                                s.weights[((o * s.in_channels + i) * s.kernel_h + ky) * s.kernel_w + kx];
                            acc += w * in.at(i, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                        }
                    }
                }
                out.at(o, y, x) = acc;
            }
        }
    }
    return out;
}

inline Volume relu(Volume in) {
    for (auto& x : in.v) x = x > 0.0 ? x : 0.0;
    return in;
}

inline Volume maxpool(const Volume& in, std::size_t k, std::size_t stride) {
    const std::size_t oh = (in.h - k) / stride + 1;
    const std::size_t ow = (in.w - k) / stride + 1;
    Volume out{in.c, oh, ow, std::vector<double>(in.c * oh * ow)};
    for (std::size_t c = 0; c < in.c; ++c)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double best = -std::numeric_limits<double>::infinity();
                for (std::size_t dy = 0; dy < k; ++dy)
                    for (std::size_t dx = 0; dx < k; ++dx)
                        best = std::max(best, in.at(c, y * stride + dy, x * stride + dx));
                out.at(c, y, x) = best;
            }
    return out;
}

inline std::vector<double> avgpool(const Volume& in) {
    std::vector<double> out(in.c, 0.0);
    for (std::size_t c = 0; c < in.c; ++c) {
        double sum = 0.0;
        for (std::size_t y = 0; y < in.h; ++y)
            for (std::size_t x = 0; x < in.w; ++x) sum += in.at(c, y, x);
        out[c] = sum / static_cast<double>(in.h * in.w);
    }
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
    double peak = *std::max_element(z.begin(), z.end());
    std::vector<double> out(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) total += (out[i] = std::exp(z[i] - peak));
    for (auto& v : out) v /= total;
    return out;
}

inline Volume concat(const Volume& a, const Volume& b) {
    Volume out{a.c + b.c, a.h, a.w, a.v};
    out.v.insert(out.v.end(), b.v.begin(), b.v.end());
    return out;
}

inline Volume fire(const Volume& in, const percival::nn::FireSpec& f) {
    Volume s = relu(conv(in, f.squeeze));
    return concat(relu(conv(s, f.expand1)), relu(conv(s, f.expand3)));
}

/// Pre-softmax logits of the whole network.
inline std::vector<double> network_logits(const percival::NetworkSpec& net, const percival::Tensor& input) {
    Volume x = from_tensor(input);
    std::vector<double> flat;
    for (const auto& layer : net.layers) {
        if (auto* c = std::get_if<percival::ConvLayer>(&layer)) {
            x = conv(x, c->conv);
            if (c->relu) x = relu(std::move(x));
        } else if (auto* p = std::get_if<percival::MaxPoolLayer>(&layer)) {
            x = maxpool(x, p->kernel, p->stride);
        } else if (auto* f = std::get_if<percival::FireLayer>(&layer)) {
            x = fire(x, f->fire);
        } else if (std::holds_alternative<percival::GlobalAvgPoolLayer>(layer)) {
            flat = avgpool(x);
        }
    }
    return flat;
}

// Random helpers shared by the oracle-driven tests.
inline percival::Tensor random_tensor(std::mt19937_64& rng, percival::Shape dims, float lo = -1.0f,
                                      float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    percival::Tensor t(std::move(dims));
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

inline void randomize(percival::nn::ConvSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (auto& w : spec.weights) w = dist(rng);
    for (auto& b : spec.bias) b = dist(rng);
}

/// |a - b| <= tol * max(1, |b|)
inline bool close_rel(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max(1.0, std::abs(b));
}

}  // namespace oracle

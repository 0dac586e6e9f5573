#include "percival/classifier.hpp"

#include <chrono>
#include <stdexcept>

namespace percival {

bool should_bypass(std::uint32_t width, std::uint32_t height) {
    return width < kBypassBelow || height < kBypassBelow;
}

Tensor preprocess(const Bitmap& bitmap) {
    if (!bitmap.valid()) throw std::invalid_argument("preprocess: invalid bitmap");
    constexpr std::uint32_t size = kInputSize;
    const auto xs = bilinear_taps(bitmap.width, size);
    const auto ys = bilinear_taps(bitmap.height, size);
    Tensor out({kInputChannels, size, size});
    float* planes = out.data().data();
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    for (std::uint32_t y = 0; y < size; ++y) {
        const auto& ty = ys[y];
        for (std::uint32_t x = 0; x < size; ++x) {
            const auto& tx = xs[x];
            const std::uint8_t* p00 = bitmap.pixel(tx.i0, ty.i0);
            const std::uint8_t* p01 = bitmap.pixel(tx.i1, ty.i0);
            const std::uint8_t* p10 = bitmap.pixel(tx.i0, ty.i1);
            const std::uint8_t* p11 = bitmap.pixel(tx.i1, ty.i1);
            const std::size_t at = static_cast<std::size_t>(y) * size + x;
            for (std::size_t c = 0; c < kInputChannels; ++c) {
                const float top = (1.0f - tx.frac) * p00[c] + tx.frac * p01[c];
                const float bottom = (1.0f - tx.frac) * p10[c] + tx.frac * p11[c];
                const float v = (1.0f - ty.frac) * top + ty.frac * bottom;
                planes[c * plane + at] = v / 255.0f;
            }
        }
    }
    return out;
}

Verdict bypass_verdict() {
    Verdict v;
    v.bypassed = true;
    return v;
}

Verdict classify(const Bitmap& bitmap, const Network& model, float threshold) {
    if (should_bypass(bitmap.width, bitmap.height)) return bypass_verdict();
    const auto start = std::chrono::steady_clock::now();
    const Tensor probs = model.forward(preprocess(bitmap));
    const auto stop = std::chrono::steady_clock::now();
    Verdict v;
    v.p_ad = probs[kAdClass];
    v.is_ad = v.p_ad >= threshold;
    v.inference_micros = std::chrono::duration_cast<std::chrono::microseconds>(stop - start).count();
    return v;
}

Classifier::Classifier(NetworkPtr model, float threshold) : model_(std::move(model)), threshold_(threshold) {
    if (!model_) throw std::invalid_argument("classifier requires a loaded model");
    if (!(threshold_ >= 0.0f && threshold_ <= 1.0f)) {
        throw std::invalid_argument("threshold must lie in [0,1]");
    }
}

}  // namespace percival

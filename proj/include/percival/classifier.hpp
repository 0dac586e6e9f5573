#pragma once

#include <cstdint>

#include "percival/image.hpp"
#include "percival/network.hpp"
#include "percival/tensor.hpp"

namespace percival {

/// Frames narrower or shorter than this skip classification.
inline constexpr std::uint32_t kBypassBelow = 100;
inline constexpr float kDefaultThreshold = 0.5f;

bool should_bypass(std::uint32_t width, std::uint32_t height);

/// Bilinear resize to 224x224 (half-pixel centres, aspect not preserved),
/// split into R,G,B,A planes and scaled by 1/255. Interpolation happens on
/// the raw 8-bit values in float before scaling; no rounding in between.
Tensor preprocess(const Bitmap& bitmap);

struct Verdict {
    bool is_ad = false;
    float p_ad = 0.0f;
    bool bypassed = false;
    std::int64_t inference_micros = 0;

    /// Equality on the decision fields only (timing ignored).
    bool same_decision(const Verdict& other) const {
        return is_ad == other.is_ad && p_ad == other.p_ad && bypassed == other.bypassed;
    }
};

Verdict bypass_verdict();

/// Runs the detector on one decoded frame. Bypassed frames are never
/// classified; otherwise is_ad == (p_ad >= threshold).
Verdict classify(const Bitmap& bitmap, const Network& model, float threshold = kDefaultThreshold);

/// A loaded model plus its decision threshold. Immutable and shareable.
class Classifier {
public:
    Classifier(NetworkPtr model, float threshold = kDefaultThreshold);

    Verdict classify(const Bitmap& bitmap) const { return percival::classify(bitmap, *model_, threshold_); }
    float threshold() const noexcept { return threshold_; }
    const NetworkPtr& model() const noexcept { return model_; }

private:
    NetworkPtr model_;
    float threshold_;
};

}  // namespace percival

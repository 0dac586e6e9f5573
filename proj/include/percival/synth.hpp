#pragma once

#include <cstdint>

#include "percival/pipeline.hpp"

namespace percival {

/// Synthetic page generator for tests, benchmarks and demos. Frames are PNGs
/// with a flat background plus mild noise; "ad" frames are predominantly
/// red, which the channel-probe model (channel 0) flags.
struct SynthOptions {
    std::size_t frames = 100;
    std::size_t small_frames = 0;  // frames with a side < 100, spread evenly
    double ad_fraction = 0.3;
    std::size_t distinct = 0;      // 0 = every frame unique; else cycle this many images
    std::uint32_t min_side = 100;
    std::uint32_t max_side = 240;
    std::uint64_t seed = 1;
};

PageFixture synth_page(const SynthOptions& opt);

/// Weights for a model that calls strongly red frames ads.
NetworkPtr red_probe_model();

}  // namespace percival

#include "percival/synth.hpp"

#include <algorithm>
#include <random>

namespace percival {

namespace {

std::vector<std::uint8_t> synth_image(std::mt19937_64& rng, std::uint32_t w, std::uint32_t h, bool ad) {
    std::uniform_int_distribution<int> base(0, 90);
    const int r = ad ? 200 + base(rng) % 56 : base(rng);
    const int g = base(rng) + (ad ? 0 : 100);
    const int b = base(rng) + (ad ? 0 : 120);
    std::uniform_int_distribution<int> noise(-12, 12);
    Bitmap bmp(w, h);
    auto clamp = [](int v) { return static_cast<std::uint8_t>(std::min(255, std::max(0, v))); };
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            std::uint8_t* p = bmp.pixel(x, y);
            p[0] = clamp(r + noise(rng));
            p[1] = clamp(g + noise(rng));
            p[2] = clamp(b + noise(rng));
            p[3] = 255;
        }
    return encode_png(bmp);
}

}  // namespace

PageFixture synth_page(const SynthOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    std::uniform_int_distribution<std::uint32_t> side(opt.min_side, std::max(opt.min_side, opt.max_side));
    std::uniform_int_distribution<std::uint32_t> small_side(8, 99);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    const std::size_t pool_size = opt.distinct == 0 ? opt.frames : opt.distinct;
    std::vector<std::vector<std::uint8_t>> pool;
    std::size_t small_left = opt.small_frames;
    PageFixture page;
    for (std::size_t i = 0; i < opt.frames; ++i) {
        const bool small = small_left > 0 && (i * opt.small_frames) / opt.frames !=
                                                 ((i + 1) * opt.small_frames) / opt.frames;
        std::vector<std::uint8_t> bytes;
        if (small) {
            --small_left;
            const bool narrow = coin(rng) < 0.5;
            bytes = synth_image(rng, narrow ? small_side(rng) : side(rng), narrow ? side(rng) : small_side(rng),
                                coin(rng) < opt.ad_fraction);
        } else if (pool.size() < pool_size) {
            pool.push_back(synth_image(rng, side(rng), side(rng), coin(rng) < opt.ad_fraction));
            bytes = pool.back();
        } else {
            bytes = pool[i % pool_size];
        }
        const auto id = static_cast<std::int64_t>(i);
        page.frames.push_back(ImageFrame::make(id, std::move(bytes), "https://example.test/img/" + std::to_string(i) + ".png",
                                               "frame_" + std::to_string(i) + ".png"));
    }
    return page;
}

NetworkPtr red_probe_model() {
    NetworkSpec spec = reference_network();
    init_channel_probe_weights(spec, 0, 20.0f, -10.0f);
    return std::make_shared<const Network>(std::move(spec));
}

}  // namespace percival

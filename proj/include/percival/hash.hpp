#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

namespace percival {

/// 128-bit content key: the first 16 bytes of SHA-256.
using ContentHash = std::array<std::uint8_t, 16>;

ContentHash content_hash(std::span<const std::uint8_t> bytes);
std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);

struct ContentHashHasher {
    std::size_t operator()(const ContentHash& h) const noexcept {
        std::size_t v = 0;
        for (int i = 0; i < 8; ++i) v = (v << 8) | h[i];
        return v;
    }
};

}  // namespace percival

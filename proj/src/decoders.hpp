#pragma once

#include <cstdint>
#include <span>

#include "percival/image.hpp"

namespace percival::detail {

// Upper bound on decoded canvas size; larger headers are treated as corrupt.
inline constexpr std::uint64_t kMaxDecodedPixels = 64ull * 1024 * 1024;

Bitmap decode_jpeg(std::span<const std::uint8_t> bytes);
Bitmap decode_gif(std::span<const std::uint8_t> bytes);

}  // namespace percival::detail

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace percival {

/// Decoded image: 8-bit RGBA, row-major, no padding between rows.
struct Bitmap {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> pixels;

    Bitmap() = default;
    Bitmap(std::uint32_t w, std::uint32_t h);
    Bitmap(std::uint32_t w, std::uint32_t h, std::vector<std::uint8_t> rgba);

    bool valid() const noexcept {
        return width > 0 && height > 0 &&
               pixels.size() == static_cast<std::size_t>(width) * height * 4;
    }
    std::uint8_t* pixel(std::uint32_t x, std::uint32_t y) {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 4;
    }
    const std::uint8_t* pixel(std::uint32_t x, std::uint32_t y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 4;
    }

    static Bitmap filled(std::uint32_t w, std::uint32_t h, std::uint8_t r, std::uint8_t g,
                         std::uint8_t b, std::uint8_t a = 255);

    friend bool operator==(const Bitmap&, const Bitmap&) = default;
};

enum class ImageFormat { Png, Jpeg, Gif, Unknown };

const char* to_string(ImageFormat format);

class DecodeError : public std::runtime_error {
public:
    enum class Kind { UnsupportedFormat, Corrupt };

    DecodeError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Identifies the container from its leading bytes.
ImageFormat sniff_format(std::span<const std::uint8_t> bytes);

/// Maps a MIME type, extension or bare name ("image/png", ".jpg", "gif") to a
/// format. Anything recognisably an image but not decodable here (webp, avif,
/// bmp, ...) maps to Unknown; nullopt means the hint carries no information.
std::optional<ImageFormat> format_from_hint(std::string_view hint);

/// Decodes PNG, JPEG or GIF (first frame) to RGBA. Images without alpha get
/// alpha 255. Throws DecodeError.
Bitmap decode_image(std::span<const std::uint8_t> bytes, std::optional<std::string_view> hint = {});

std::vector<std::uint8_t> encode_png(const Bitmap& bitmap);

/// Source sample for one destination coordinate under half-pixel-centre
/// bilinear resampling: src = (dst + 0.5) * src_len / dst_len - 0.5, clamped
/// to [0, src_len - 1]; the value is lerp(src[i0], src[i1], frac).
struct BilinearTap {
    std::uint32_t i0 = 0;
    std::uint32_t i1 = 0;
    float frac = 0.0f;
};

std::vector<BilinearTap> bilinear_taps(std::uint32_t src_len, std::uint32_t dst_len);

/// Bilinear resize with rounding to the nearest 8-bit value.
Bitmap resize_bilinear(const Bitmap& src, std::uint32_t width, std::uint32_t height);

}  // namespace percival

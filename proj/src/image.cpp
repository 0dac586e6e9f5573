#include "percival/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "decoders.hpp"

namespace percival {

namespace {

constexpr std::uint8_t kPngMagic[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

bool starts_with(std::span<const std::uint8_t> bytes, std::span<const std::uint8_t> prefix) {
    return bytes.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), bytes.begin());
}

bool starts_with(std::span<const std::uint8_t> bytes, std::string_view prefix) {
    return bytes.size() >= prefix.size() &&
           std::memcmp(bytes.data(), prefix.data(), prefix.size()) == 0;
}

// Formats we recognise but do not decode.
bool looks_like_other_image(std::span<const std::uint8_t> bytes) {
    if (starts_with(bytes, std::string_view("BM"))) return true;
    if (bytes.size() >= 12 && starts_with(bytes, std::string_view("RIFF")) &&
        std::memcmp(bytes.data() + 8, "WEBP", 4) == 0) {
        return true;
    }
    if (bytes.size() >= 12 && std::memcmp(bytes.data() + 4, "ftyp", 4) == 0) return true;  // avif/heic
    if (starts_with(bytes, std::string_view("II*\0")) || starts_with(bytes, std::string_view("MM\0*"))) {
        return true;
    }
    return false;
}

Bitmap decode_png(std::span<const std::uint8_t> bytes) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw DecodeError(DecodeError::Kind::Corrupt, std::string("png: ") + image.message);
    }
    if (image.width == 0 || image.height == 0 ||
        static_cast<std::uint64_t>(image.width) * image.height > detail::kMaxDecodedPixels) {
        png_image_free(&image);
        throw DecodeError(DecodeError::Kind::Corrupt, "png: unreasonable dimensions");
    }
    image.format = PNG_FORMAT_RGBA;
    Bitmap out(image.width, image.height);
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw DecodeError(DecodeError::Kind::Corrupt, "png: " + msg);
    }
    return out;
}

}  // namespace

Bitmap::Bitmap(std::uint32_t w, std::uint32_t h)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 4, 0) {}

Bitmap::Bitmap(std::uint32_t w, std::uint32_t h, std::vector<std::uint8_t> rgba)
    : width(w), height(h), pixels(std::move(rgba)) {
    if (pixels.size() != static_cast<std::size_t>(w) * h * 4) {
        throw std::invalid_argument("bitmap buffer does not match " + std::to_string(w) + "x" +
                                    std::to_string(h) + " RGBA");
    }
}

Bitmap Bitmap::filled(std::uint32_t w, std::uint32_t h, std::uint8_t r, std::uint8_t g,
                      std::uint8_t b, std::uint8_t a) {
    Bitmap out(w, h);
    for (std::size_t i = 0; i < out.pixels.size(); i += 4) {
        out.pixels[i] = r;
        out.pixels[i + 1] = g;
        out.pixels[i + 2] = b;
        out.pixels[i + 3] = a;
    }
    return out;
}

const char* to_string(ImageFormat format) {
    switch (format) {
        case ImageFormat::Png: return "png";
        case ImageFormat::Jpeg: return "jpeg";
        case ImageFormat::Gif: return "gif";
        case ImageFormat::Unknown: return "unknown";
    }
    return "unknown";
}

ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
    if (starts_with(bytes, kPngMagic)) return ImageFormat::Png;
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
        return ImageFormat::Jpeg;
    }
    if (starts_with(bytes, std::string_view("GIF87a")) || starts_with(bytes, std::string_view("GIF89a"))) {
        return ImageFormat::Gif;
    }
    return ImageFormat::Unknown;
}

std::optional<ImageFormat> format_from_hint(std::string_view hint) {
    std::string h;
    for (char c : hint) {
        if (c == ';') break;
        if (!std::isspace(static_cast<unsigned char>(c))) h += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (h.starts_with("image/")) h = h.substr(6);
    if (h.starts_with(".")) h = h.substr(1);
    if (h.empty() || h == "*" || h == "application/octet-stream") return std::nullopt;
    if (h == "png" || h == "apng" || h == "x-png") return ImageFormat::Png;
    if (h == "jpeg" || h == "jpg" || h == "pjpeg" || h == "jpe") return ImageFormat::Jpeg;
    if (h == "gif") return ImageFormat::Gif;
    return ImageFormat::Unknown;
}

Bitmap decode_image(std::span<const std::uint8_t> bytes, std::optional<std::string_view> hint) {
    std::optional<ImageFormat> hinted;
    if (hint) hinted = format_from_hint(*hint);
    if (hinted == ImageFormat::Unknown) {
        throw DecodeError(DecodeError::Kind::UnsupportedFormat,
                          "unsupported image type '" + std::string(*hint) + "'");
    }
    const ImageFormat sniffed = sniff_format(bytes);
    switch (sniffed) {
        case ImageFormat::Png: return decode_png(bytes);
        case ImageFormat::Jpeg: return detail::decode_jpeg(bytes);
        case ImageFormat::Gif: return detail::decode_gif(bytes);
        case ImageFormat::Unknown: break;
    }
    if (looks_like_other_image(bytes)) {
        throw DecodeError(DecodeError::Kind::UnsupportedFormat, "unsupported image container");
    }
    if (hinted) {
        throw DecodeError(DecodeError::Kind::Corrupt,
                          std::string("bad ") + to_string(*hinted) + " header");
    }
    throw DecodeError(DecodeError::Kind::UnsupportedFormat, "unrecognised image data");
}

std::vector<std::uint8_t> encode_png(const Bitmap& bitmap) {
    if (!bitmap.valid()) throw std::invalid_argument("encode_png: invalid bitmap");
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = bitmap.width;
    image.height = bitmap.height;
    image.format = PNG_FORMAT_RGBA;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, bitmap.pixels.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("png encode: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, bitmap.pixels.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("png encode: ") + image.message);
    }
    out.resize(size);
    return out;
}

std::vector<BilinearTap> bilinear_taps(std::uint32_t src_len, std::uint32_t dst_len) {
    std::vector<BilinearTap> taps(dst_len);
    const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
    const double last = static_cast<double>(src_len - 1);
    for (std::uint32_t d = 0; d < dst_len; ++d) {
        const double s = std::clamp((d + 0.5) * scale - 0.5, 0.0, last);
        const auto i0 = static_cast<std::uint32_t>(std::floor(s));
        taps[d].i0 = i0;
        taps[d].i1 = std::min(i0 + 1, src_len - 1);
        taps[d].frac = static_cast<float>(s - i0);
    }
    return taps;
}

Bitmap resize_bilinear(const Bitmap& src, std::uint32_t width, std::uint32_t height) {
    if (!src.valid() || width == 0 || height == 0) {
        throw std::invalid_argument("resize_bilinear: invalid geometry");
    }
    if (src.width == width && src.height == height) return src;
    const auto xs = bilinear_taps(src.width, width);
    const auto ys = bilinear_taps(src.height, height);
    Bitmap out(width, height);
    for (std::uint32_t y = 0; y < height; ++y) {
        const auto& ty = ys[y];
        for (std::uint32_t x = 0; x < width; ++x) {
            const auto& tx = xs[x];
            const std::uint8_t* p00 = src.pixel(tx.i0, ty.i0);
            const std::uint8_t* p01 = src.pixel(tx.i1, ty.i0);
            const std::uint8_t* p10 = src.pixel(tx.i0, ty.i1);
            const std::uint8_t* p11 = src.pixel(tx.i1, ty.i1);
            std::uint8_t* dst = out.pixel(x, y);
            for (int c = 0; c < 4; ++c) {
                const float top = (1.0f - tx.frac) * p00[c] + tx.frac * p01[c];
                const float bottom = (1.0f - tx.frac) * p10[c] + tx.frac * p11[c];
                const float v = (1.0f - ty.frac) * top + ty.frac * bottom;
                dst[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return out;
}

}  // namespace percival

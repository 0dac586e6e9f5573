#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <string>

#include <jpeglib.h>

#include "decoders.hpp"

namespace percival::detail {

namespace {

struct ErrorManager {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void on_error(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<ErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

void on_message(j_common_ptr, int) {}

// Owns the decompressor so every exit path releases it.
struct Decompressor {
    jpeg_decompress_struct cinfo{};
    ErrorManager err{};
    Decompressor() {
        cinfo.err = jpeg_std_error(&err.pub);
        err.pub.error_exit = on_error;
        err.pub.emit_message = on_message;
        jpeg_create_decompress(&cinfo);
    }
    ~Decompressor() { jpeg_destroy_decompress(&cinfo); }
    Decompressor(const Decompressor&) = delete;
    Decompressor& operator=(const Decompressor&) = delete;
};

}  // namespace

Bitmap decode_jpeg(std::span<const std::uint8_t> bytes) {
    Decompressor d;
    Bitmap out;
    std::vector<std::uint8_t> row;
    // Nothing with a non-trivial destructor may be created between setjmp and longjmp.
    if (setjmp(d.err.jump)) {
        throw DecodeError(DecodeError::Kind::Corrupt, std::string("jpeg: ") + d.err.message);
    }
    jpeg_mem_src(&d.cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&d.cinfo, TRUE);
    const bool cmyk = d.cinfo.jpeg_color_space == JCS_CMYK || d.cinfo.jpeg_color_space == JCS_YCCK;
    d.cinfo.out_color_space = cmyk ? JCS_CMYK : JCS_RGB;
    jpeg_start_decompress(&d.cinfo);
    const std::uint32_t w = d.cinfo.output_width;
    const std::uint32_t h = d.cinfo.output_height;
    if (w == 0 || h == 0 || static_cast<std::uint64_t>(w) * h > kMaxDecodedPixels) {
        std::strcpy(d.err.message, "unreasonable dimensions");
        std::longjmp(d.err.jump, 1);
    }
    out = Bitmap(w, h);
    row.resize(static_cast<std::size_t>(w) * d.cinfo.output_components);
    while (d.cinfo.output_scanline < h) {
        const std::uint32_t y = d.cinfo.output_scanline;
        JSAMPROW rows[1] = {row.data()};
        jpeg_read_scanlines(&d.cinfo, rows, 1);
        std::uint8_t* dst = out.pixel(0, y);
        for (std::uint32_t x = 0; x < w; ++x) {
            if (cmyk) {
                // Adobe writes inverted CMYK.
                const unsigned k = row[x * 4 + 3];
                dst[x * 4 + 0] = static_cast<std::uint8_t>(row[x * 4 + 0] * k / 255);
                dst[x * 4 + 1] = static_cast<std::uint8_t>(row[x * 4 + 1] * k / 255);
                dst[x * 4 + 2] = static_cast<std::uint8_t>(row[x * 4 + 2] * k / 255);
            } else {
                dst[x * 4 + 0] = row[x * 3 + 0];
                dst[x * 4 + 1] = row[x * 3 + 1];
                dst[x * 4 + 2] = row[x * 3 + 2];
            }
            dst[x * 4 + 3] = 255;
        }
    }
    jpeg_finish_decompress(&d.cinfo);
    return out;
}

}  // namespace percival::detail

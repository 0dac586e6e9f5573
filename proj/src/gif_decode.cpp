// GIF87a/89a decoder for the first image frame.

#include <array>
#include <cstring>
#include <string>
#include <vector>

#include "decoders.hpp"

namespace percival::detail {

namespace {

[[noreturn]] void corrupt(const std::string& what) {
    throw DecodeError(DecodeError::Kind::Corrupt, "gif: " + what);
}

class Cursor {
public:
    explicit Cursor(std::span<const std::uint8_t> b) : bytes_(b) {}

    std::uint8_t u8() {
        if (pos_ >= bytes_.size()) corrupt("unexpected end of stream");
        return bytes_[pos_++];
    }
    std::uint16_t u16() {
        const std::uint16_t lo = u8();
        const std::uint16_t hi = u8();
        return static_cast<std::uint16_t>(lo | (hi << 8));
    }
    std::span<const std::uint8_t> take(std::size_t n) {
        if (n > bytes_.size() - pos_) corrupt("unexpected end of stream");
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    void skip_sub_blocks() {
        for (std::uint8_t len = u8(); len != 0; len = u8()) take(len);
    }
    std::vector<std::uint8_t> read_sub_blocks() {
        std::vector<std::uint8_t> data;
        for (std::uint8_t len = u8(); len != 0; len = u8()) {
            auto chunk = take(len);
            data.insert(data.end(), chunk.begin(), chunk.end());
        }
        return data;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

using Palette = std::vector<std::array<std::uint8_t, 3>>;

Palette read_palette(Cursor& c, unsigned size_bits) {
    Palette p(1u << (size_bits + 1));
    for (auto& entry : p) {
        entry[0] = c.u8();
        entry[1] = c.u8();
        entry[2] = c.u8();
    }
    return p;
}

// Variable-width LZW as used by GIF. Returns colour indices in stream order;
// stops at the end-of-information code or once `limit` indices exist.
std::vector<std::uint8_t> lzw_decode(const std::vector<std::uint8_t>& data, unsigned min_code_size,
                                     std::size_t limit) {
    if (min_code_size < 1 || min_code_size > 11) corrupt("bad LZW code size");
    constexpr unsigned kMaxCodes = 4096;
    const unsigned clear_code = 1u << min_code_size;
    const unsigned end_code = clear_code + 1;

    std::array<std::uint16_t, kMaxCodes> prefix{};
    std::array<std::uint8_t, kMaxCodes> suffix{};
    std::array<std::uint8_t, kMaxCodes> first{};
    std::vector<std::uint8_t> stack;
    stack.reserve(kMaxCodes);
    for (unsigned i = 0; i < clear_code; ++i) {
        suffix[i] = static_cast<std::uint8_t>(i);
        first[i] = static_cast<std::uint8_t>(i);
    }

    std::vector<std::uint8_t> out;
    out.reserve(limit);
    unsigned code_size = min_code_size + 1;
    unsigned next_code = end_code + 1;
    int previous = -1;
    std::uint32_t bit_buffer = 0;
    unsigned bit_count = 0;
    std::size_t byte_pos = 0;

    while (out.size() < limit) {
        while (bit_count < code_size) {
            if (byte_pos >= data.size()) return out;
            bit_buffer |= static_cast<std::uint32_t>(data[byte_pos++]) << bit_count;
            bit_count += 8;
        }
        const unsigned code = bit_buffer & ((1u << code_size) - 1);
        bit_buffer >>= code_size;
        bit_count -= code_size;

        if (code == clear_code) {
            code_size = min_code_size + 1;
            next_code = end_code + 1;
            previous = -1;
            continue;
        }
        if (code == end_code) break;

        unsigned walk;
        std::uint8_t head;
        if (code < next_code && (code < clear_code || code > end_code)) {
            walk = code;
            head = first[code];
        } else if (code == next_code && previous >= 0) {
            // KwKwK: the new entry is previous + first(previous).
            stack.push_back(first[previous]);
            walk = static_cast<unsigned>(previous);
            head = first[previous];
        } else {
            corrupt("invalid LZW code " + std::to_string(code));
        }
        while (walk > end_code) {
            stack.push_back(suffix[walk]);
            walk = prefix[walk];
        }
        stack.push_back(suffix[walk]);
        while (!stack.empty() && out.size() < limit) {
            out.push_back(stack.back());
            stack.pop_back();
        }
        stack.clear();

        if (previous >= 0 && next_code < kMaxCodes) {
            prefix[next_code] = static_cast<std::uint16_t>(previous);
            suffix[next_code] = head;
            first[next_code] = first[previous];
            ++next_code;
            if (next_code == (1u << code_size) && code_size < 12) ++code_size;
        }
        previous = static_cast<int>(code);
    }
    return out;
}

}  // namespace

Bitmap decode_gif(std::span<const std::uint8_t> bytes) {
    Cursor c(bytes);
    c.take(6);  // signature checked by the sniffer
    const std::uint16_t screen_w = c.u16();
    const std::uint16_t screen_h = c.u16();
    const std::uint8_t flags = c.u8();
    c.u8();  // background colour index
    c.u8();  // aspect ratio
    Palette global;
    if (flags & 0x80) global = read_palette(c, flags & 0x07);

    int transparent = -1;
    for (;;) {
        const std::uint8_t block = c.u8();
        if (block == 0x3B) corrupt("no image frame before trailer");
        if (block == 0x21) {
            const std::uint8_t label = c.u8();
            if (label == 0xF9) {
                const std::uint8_t len = c.u8();
                if (len < 4) corrupt("short graphic control extension");
                auto gce = c.take(len);
                transparent = (gce[0] & 0x01) ? gce[3] : -1;
                c.skip_sub_blocks();
            } else {
                c.skip_sub_blocks();
            }
            continue;
        }
        if (block != 0x2C) corrupt("unknown block 0x" + std::to_string(block));

        const std::uint16_t left = c.u16();
        const std::uint16_t top = c.u16();
        const std::uint16_t fw = c.u16();
        const std::uint16_t fh = c.u16();
        const std::uint8_t fflags = c.u8();
        if (fw == 0 || fh == 0) corrupt("empty frame");
        Palette local;
        if (fflags & 0x80) local = read_palette(c, fflags & 0x07);
        const Palette& palette = local.empty() ? global : local;
        if (palette.empty()) corrupt("frame without a colour table");
        const bool interlaced = (fflags & 0x40) != 0;

        const unsigned min_code_size = c.u8();
        const auto data = c.read_sub_blocks();
        const std::size_t frame_pixels = static_cast<std::size_t>(fw) * fh;
        const auto indices = lzw_decode(data, min_code_size, frame_pixels);
        if (indices.empty()) corrupt("frame carries no pixel data");

        const std::uint32_t canvas_w = screen_w ? screen_w : fw;
        const std::uint32_t canvas_h = screen_h ? screen_h : fh;
        if (static_cast<std::uint64_t>(canvas_w) * canvas_h > kMaxDecodedPixels) {
            corrupt("unreasonable dimensions");
        }
        Bitmap out(canvas_w, canvas_h);  // transparent black background

        // Row order for interlaced frames: passes start at 0,4,2,1 with steps 8,8,4,2.
        std::vector<std::uint32_t> rows;
        rows.reserve(fh);
        if (interlaced) {
            constexpr std::uint32_t starts[] = {0, 4, 2, 1};
            constexpr std::uint32_t steps[] = {8, 8, 4, 2};
            for (int pass = 0; pass < 4; ++pass) {
                for (std::uint32_t y = starts[pass]; y < fh; y += steps[pass]) rows.push_back(y);
            }
        } else {
            for (std::uint32_t y = 0; y < fh; ++y) rows.push_back(y);
        }

        // Short streams leave the remaining pixels transparent, as browsers do.
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const std::uint32_t fy = rows[i / fw];
            const std::uint32_t fx = static_cast<std::uint32_t>(i % fw);
            const std::uint32_t x = left + fx;
            const std::uint32_t y = top + fy;
            if (x >= canvas_w || y >= canvas_h) continue;
            const std::uint8_t idx = indices[i];
            if (static_cast<int>(idx) == transparent) continue;
            if (idx >= palette.size()) continue;
            std::uint8_t* px = out.pixel(x, y);
            px[0] = palette[idx][0];
            px[1] = palette[idx][1];
            px[2] = palette[idx][2];
            px[3] = 255;
        }
        return out;
    }
}

}  // namespace percival::detail

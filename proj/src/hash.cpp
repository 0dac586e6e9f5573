#include "percival/hash.hpp"

#include <openssl/sha.h>

#include <algorithm>

namespace percival {

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> bytes) {
    std::array<std::uint8_t, 32> out{};
    SHA256(bytes.data(), bytes.size(), out.data());
    return out;
}

ContentHash content_hash(std::span<const std::uint8_t> bytes) {
    const auto full = sha256(bytes);
    ContentHash h{};
    std::copy_n(full.begin(), h.size(), h.begin());
    return h;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xF]);
    }
    return s;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) { return to_hex(sha256(bytes)); }

}  // namespace percival

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "percival/network.hpp"
#include "percival/tensor.hpp"

namespace percival::model_io {

// Container layout (all integers little-endian):
//   magic[4] | version u32 | tensor_count u32 |
//   records: name_len u16, name, ndim u8, dims u32 x ndim, f32 x prod(dims) |
//   crc32 u32 over every preceding byte
inline constexpr char kModelMagic[4] = {'P', 'M', 'D', 'L'};
inline constexpr char kGoldenMagic[4] = {'P', 'G', 'L', 'D'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class ErrorKind {
    BadMagic,
    VersionMismatch,
    Truncated,
    CrcMismatch,
    MalformedRecord,
    DuplicateTensor,
    MissingTensor,
    UnexpectedTensor,
    ShapeMismatch,
    Io,
};

const char* to_string(ErrorKind kind);

class FormatError : public std::runtime_error {
public:
    FormatError(ErrorKind kind, std::string record, const std::string& what)
        : std::runtime_error(what), kind_(kind), record_(std::move(record)) {}
    ErrorKind kind() const noexcept { return kind_; }
    /// Name of the record at fault, empty for container-level errors.
    const std::string& record() const noexcept { return record_; }

private:
    ErrorKind kind_;
    std::string record_;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

std::vector<std::uint8_t> encode_container(std::span<const char, 4> magic,
                                           std::span<const NamedTensor> records);
std::vector<NamedTensor> decode_container(std::span<const char, 4> magic,
                                          std::span<const std::uint8_t> bytes);

/// Serialises a weight set; records are written in name order so equal
/// weights always give identical bytes.
std::vector<std::uint8_t> save_model(const WeightSet& weights);
void save_model_file(const WeightSet& weights, const std::filesystem::path& path);

/// Decodes and validates against `spec`. Nothing is returned on any error.
NetworkPtr load_model(std::span<const std::uint8_t> bytes, NetworkSpec spec = reference_network());
NetworkPtr load_model_file(const std::filesystem::path& path,
                           NetworkSpec spec = reference_network());

/// Reference input and the logits a given model produced for it.
struct GoldenFixture {
    Tensor input;   // [4,224,224]
    Tensor logits;  // [2]
};

std::vector<std::uint8_t> save_golden(const GoldenFixture& fixture);
GoldenFixture load_golden(std::span<const std::uint8_t> bytes);
GoldenFixture load_golden_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace percival::model_io

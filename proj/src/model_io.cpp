#include "percival/model_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace percival::model_io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "PMDL encoding assumes a little-endian host");
static_assert(sizeof(float) == 4);

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { bytes(&v, sizeof v); }
    void u32(std::uint32_t v) { bytes(&v, sizeof v); }
    std::vector<std::uint8_t> take() { return std::move(out_); }
    const std::vector<std::uint8_t>& buffer() const { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

// Bounds-checked cursor; never reads past `end`.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    bool has(std::size_t n) const { return n <= bytes_.size() - pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    void read(void* dst, std::size_t n, const std::string& record) {
        if (!has(n)) {
            throw FormatError(ErrorKind::MalformedRecord, record,
                              "record '" + record + "' runs past the end of the payload");
        }
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    template <class T>
    T get(const std::string& record) {
        T v;
        read(&v, sizeof v, record);
        return v;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks.
    std::size_t off = 0;
    while (off < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        crc = crc32(crc, bytes.data() + off, chunk);
        off += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

constexpr std::size_t kHeaderSize = 12;
constexpr std::size_t kTrailerSize = 4;

}  // namespace

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::BadMagic: return "bad-magic";
        case ErrorKind::VersionMismatch: return "version-mismatch";
        case ErrorKind::Truncated: return "truncated";
        case ErrorKind::CrcMismatch: return "crc-mismatch";
        case ErrorKind::MalformedRecord: return "malformed-record";
        case ErrorKind::DuplicateTensor: return "duplicate-tensor";
        case ErrorKind::MissingTensor: return "missing-tensor";
        case ErrorKind::UnexpectedTensor: return "unexpected-tensor";
        case ErrorKind::ShapeMismatch: return "shape-mismatch";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

std::vector<std::uint8_t> encode_container(std::span<const char, 4> magic,
                                           std::span<const NamedTensor> records) {
    Writer w;
    w.bytes(magic.data(), 4);
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(records.size()));
    for (const auto& rec : records) {
        if (rec.name.empty() || rec.name.size() > 0xFFFF) {
            throw FormatError(ErrorKind::MalformedRecord, rec.name, "record name length out of range");
        }
        w.u16(static_cast<std::uint16_t>(rec.name.size()));
        w.bytes(rec.name.data(), rec.name.size());
        const auto& dims = rec.tensor.dims();
        w.u8(static_cast<std::uint8_t>(dims.size()));
        for (auto d : dims) w.u32(static_cast<std::uint32_t>(d));
        const auto values = rec.tensor.data();
        w.bytes(values.data(), values.size_bytes());
    }
    w.u32(crc32_of(w.buffer()));
    return w.take();
}

std::vector<NamedTensor> decode_container(std::span<const char, 4> magic,
                                          std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), magic.data(), 4) != 0) {
        if (bytes.size() < 4) {
            throw FormatError(ErrorKind::Truncated, "", "file shorter than the magic number");
        }
        throw FormatError(ErrorKind::BadMagic, "",
                          "expected magic '" + std::string(magic.data(), 4) + "'");
    }
    if (bytes.size() < kHeaderSize + kTrailerSize) {
        throw FormatError(ErrorKind::Truncated, "",
                          "file is " + std::to_string(bytes.size()) + " bytes, header needs " +
                              std::to_string(kHeaderSize + kTrailerSize));
    }
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    if (version != kFormatVersion) {
        throw FormatError(ErrorKind::VersionMismatch, "",
                          "unsupported version " + std::to_string(version) + " (reader supports " +
                              std::to_string(kFormatVersion) + ")");
    }
    const auto payload = bytes.first(bytes.size() - kTrailerSize);
    std::uint32_t stored_crc = 0;
    std::memcpy(&stored_crc, bytes.data() + payload.size(), 4);
    if (crc32_of(payload) != stored_crc) {
        throw FormatError(ErrorKind::CrcMismatch, "", "CRC32 mismatch (file truncated or corrupt)");
    }

    std::uint32_t count = 0;
    std::memcpy(&count, bytes.data() + 8, 4);
    Reader r(payload.subspan(kHeaderSize));
    std::vector<NamedTensor> records;
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string slot = "#" + std::to_string(i);
        const auto name_len = r.get<std::uint16_t>(slot);
        if (name_len == 0) {
            throw FormatError(ErrorKind::MalformedRecord, slot, "record " + slot + " has an empty name");
        }
        std::string name(name_len, '\0');
        r.read(name.data(), name_len, slot);
        const auto ndim = r.get<std::uint8_t>(name);
        if (ndim == 0 || ndim > 4) {
            throw FormatError(ErrorKind::MalformedRecord, name,
                              "record '" + name + "' has rank " + std::to_string(ndim));
        }
        Shape dims(ndim);
        std::size_t numel = 1;
        for (auto& d : dims) {
            d = r.get<std::uint32_t>(name);
            if (d == 0) {
                throw FormatError(ErrorKind::MalformedRecord, name, "record '" + name + "' has a zero dim");
            }
            // Reject counts that cannot fit in what is left of the payload.
            if (numel > r.remaining() / d) {
                throw FormatError(ErrorKind::MalformedRecord, name,
                                  "record '" + name + "' declares more data than the file holds");
            }
            numel *= d;
        }
        if (numel > r.remaining() / sizeof(float)) {
            throw FormatError(ErrorKind::MalformedRecord, name,
                              "record '" + name + "' declares more data than the file holds");
        }
        std::vector<float> values(numel);
        r.read(values.data(), numel * sizeof(float), name);
        if (!seen.insert(name).second) {
            throw FormatError(ErrorKind::DuplicateTensor, name, "tensor '" + name + "' appears twice");
        }
        records.push_back({name, Tensor(std::move(dims), std::move(values))});
    }
    if (r.remaining() != 0) {
        throw FormatError(ErrorKind::MalformedRecord, "",
                          std::to_string(r.remaining()) + " trailing bytes after the last record");
    }
    return records;
}

std::vector<std::uint8_t> save_model(const WeightSet& weights) {
    std::vector<NamedTensor> records;
    records.reserve(weights.size());
    for (const auto& [name, tensor] : weights) records.push_back({name, tensor});
    return encode_container(kModelMagic, records);
}

void save_model_file(const WeightSet& weights, const std::filesystem::path& path) {
    write_file(path, save_model(weights));
}

NetworkPtr load_model(std::span<const std::uint8_t> bytes, NetworkSpec spec) {
    WeightSet weights;
    for (auto& rec : decode_container(kModelMagic, bytes)) {
        weights.emplace(rec.name, std::move(rec.tensor));
    }
    try {
        bind_weights(spec, weights);
    } catch (const WeightMismatch& e) {
        ErrorKind kind = ErrorKind::ShapeMismatch;
        if (!weights.contains(e.tensor())) {
            kind = ErrorKind::MissingTensor;
        } else {
            const auto table = parameter_table(spec);
            const bool expected = std::any_of(table.begin(), table.end(),
                                              [&](const ParamInfo& p) { return p.name == e.tensor(); });
            if (!expected) kind = ErrorKind::UnexpectedTensor;
        }
        throw FormatError(kind, e.tensor(), e.what());
    }
    return std::make_shared<const Network>(std::move(spec));
}

NetworkPtr load_model_file(const std::filesystem::path& path, NetworkSpec spec) {
    return load_model(read_file(path), std::move(spec));
}

std::vector<std::uint8_t> save_golden(const GoldenFixture& fixture) {
    const NamedTensor records[] = {{"input", fixture.input}, {"logits", fixture.logits}};
    return encode_container(kGoldenMagic, records);
}

GoldenFixture load_golden(std::span<const std::uint8_t> bytes) {
    GoldenFixture fixture;
    bool have_input = false;
    bool have_logits = false;
    for (auto& rec : decode_container(kGoldenMagic, bytes)) {
        if (rec.name == "input") {
            if (rec.tensor.dims() != Shape{kInputChannels, kInputSize, kInputSize}) {
                throw FormatError(ErrorKind::ShapeMismatch, rec.name,
                                  "golden input has shape " + shape_to_string(rec.tensor.dims()));
            }
            fixture.input = std::move(rec.tensor);
            have_input = true;
        } else if (rec.name == "logits") {
            if (rec.tensor.dims() != Shape{2}) {
                throw FormatError(ErrorKind::ShapeMismatch, rec.name,
                                  "golden logits have shape " + shape_to_string(rec.tensor.dims()));
            }
            fixture.logits = std::move(rec.tensor);
            have_logits = true;
        } else {
            throw FormatError(ErrorKind::UnexpectedTensor, rec.name,
                              "unexpected golden record '" + rec.name + "'");
        }
    }
    if (!have_input) throw FormatError(ErrorKind::MissingTensor, "input", "golden file lacks 'input'");
    if (!have_logits) throw FormatError(ErrorKind::MissingTensor, "logits", "golden file lacks 'logits'");
    return fixture;
}

GoldenFixture load_golden_file(const std::filesystem::path& path) { return load_golden(read_file(path)); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(ErrorKind::Io, "", "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(ErrorKind::Io, "", "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(ErrorKind::Io, "", "short write to " + path.string());
}

}  // namespace percival::model_io

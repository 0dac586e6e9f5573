#include "doctest.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <random>

#include <zlib.h>

#include "percival/model_io.hpp"

using namespace percival;
namespace mio = percival::model_io;

namespace {

// Conv 1x1 4->2, average, softmax on [4,4,4]: small enough for exhaustive bit flips.
NetworkSpec tiny_network() {
    NetworkSpec spec;
    spec.input_shape = {4, 4, 4};
    spec.layers.emplace_back(ConvLayer{nn::make_conv("head", 4, 2, 1), false});
    spec.layers.emplace_back(GlobalAvgPoolLayer{});
    spec.layers.emplace_back(SoftmaxLayer{});
    return spec;
}

mio::ErrorKind load_error(std::span<const std::uint8_t> bytes, NetworkSpec spec = reference_network()) {
    try {
        mio::load_model(bytes, std::move(spec));
    } catch (const mio::FormatError& e) {
        return e.kind();
    }
    FAIL("load unexpectedly succeeded");
    return mio::ErrorKind::Io;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t off, std::uint32_t v) { std::memcpy(b.data() + off, &v, 4); }

// Re-stamps the trailing CRC so structural checks run past the integrity check.
void fix_crc(std::vector<std::uint8_t>& bytes) {
    const auto crc = crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size() - 4));
    put_u32(bytes, bytes.size() - 4, static_cast<std::uint32_t>(crc));
}

}  // namespace

TEST_CASE("save then load is bitwise identity") {
    NetworkSpec spec = reference_network();
    init_random_weights(spec, 99);
    WeightSet original = extract_weights(spec);
    auto bytes = mio::save_model(original);
    NetworkPtr net = mio::load_model(bytes);
    WeightSet reloaded = extract_weights(net->spec());
    REQUIRE(reloaded.size() == original.size());
    for (const auto& [name, tensor] : original) {
        const auto& other = reloaded.at(name);
        REQUIRE(other.dims() == tensor.dims());
        CHECK(std::memcmp(other.data().data(), tensor.data().data(), tensor.data().size_bytes()) == 0);
    }
}

TEST_CASE("two saves of the same weights are byte-identical") {
    NetworkSpec spec = reference_network();
    init_random_weights(spec, 5);
    CHECK(mio::save_model(extract_weights(spec)) == mio::save_model(extract_weights(spec)));
}

TEST_CASE("reference model file size") {
    NetworkSpec spec = reference_network();
    auto bytes = mio::save_model(extract_weights(spec));
    std::size_t expected = 12 + 4;
    for (const auto& p : parameter_table(spec)) {
        expected += 2 + p.name.size() + 1 + 4 * p.shape.size() + 4 * shape_numel(p.shape);
    }
    CHECK(bytes.size() == expected);
    CHECK(bytes.size() <= 2'000'000);
}

TEST_CASE("container level errors are distinct") {
    auto good = mio::save_model(extract_weights(reference_network()));

    auto magic = good;
    magic[0] = 'X';
    CHECK(load_error(magic) == mio::ErrorKind::BadMagic);

    auto version = good;
    put_u32(version, 4, 2);
    CHECK(load_error(version) == mio::ErrorKind::VersionMismatch);

    std::vector<std::uint8_t> truncated(good.begin(), good.begin() + static_cast<long>(good.size() / 2));
    CHECK(load_error(truncated) == mio::ErrorKind::CrcMismatch);
    std::vector<std::uint8_t> stub(good.begin(), good.begin() + 10);
    CHECK(load_error(stub) == mio::ErrorKind::Truncated);
    CHECK(load_error(std::span<const std::uint8_t>{}) == mio::ErrorKind::Truncated);
}

TEST_CASE("record level errors name the tensor") {
    NetworkSpec spec = reference_network();
    WeightSet weights = extract_weights(spec);

    WeightSet swapped = weights;
    swapped["fire2.expand1.w"] = Tensor({16, 64, 1, 1});
    try {
        mio::load_model(mio::save_model(swapped));
        FAIL("expected error");
    } catch (const mio::FormatError& e) {
        CHECK(e.kind() == mio::ErrorKind::ShapeMismatch);
        CHECK(e.record() == "fire2.expand1.w");
    }

    WeightSet missing = weights;
    missing.erase("conv2.b");
    try {
        mio::load_model(mio::save_model(missing));
        FAIL("expected error");
    } catch (const mio::FormatError& e) {
        CHECK(e.kind() == mio::ErrorKind::MissingTensor);
        CHECK(e.record() == "conv2.b");
    }

    WeightSet extra = weights;
    extra.emplace("aux.w", Tensor({3}));
    try {
        mio::load_model(mio::save_model(extra));
        FAIL("expected error");
    } catch (const mio::FormatError& e) {
        CHECK(e.kind() == mio::ErrorKind::UnexpectedTensor);
        CHECK(e.record() == "aux.w");
    }

    std::vector<mio::NamedTensor> dup = {{"a", Tensor({1})}, {"a", Tensor({1})}};
    auto dup_bytes = mio::encode_container(mio::kModelMagic, dup);
    CHECK(load_error(dup_bytes) == mio::ErrorKind::DuplicateTensor);
}

TEST_CASE("declared lengths beyond the payload are rejected") {
    std::vector<mio::NamedTensor> recs = {{"head.w", Tensor({2, 4, 1, 1})}};
    auto bytes = mio::encode_container(mio::kModelMagic, recs);
    // dims start after header(12) + name_len(2) + name(6) + ndim(1)
    put_u32(bytes, 12 + 2 + 6 + 1, 0x7fffffff);
    fix_crc(bytes);
    CHECK(load_error(bytes, tiny_network()) == mio::ErrorKind::MalformedRecord);

    auto count = mio::encode_container(mio::kModelMagic, recs);
    put_u32(count, 8, 5);
    fix_crc(count);
    CHECK(load_error(count, tiny_network()) == mio::ErrorKind::MalformedRecord);
}

TEST_CASE("every single-bit flip is rejected") {
    NetworkSpec spec = tiny_network();
    init_random_weights(spec, 1);
    auto good = mio::save_model(extract_weights(spec));
    REQUIRE_NOTHROW(mio::load_model(good, tiny_network()));
    std::size_t rejected = 0;
    for (std::size_t byte = 0; byte < good.size(); ++byte) {
        for (int bit = 0; bit < 8; ++bit) {
            auto bad = good;
            bad[byte] ^= static_cast<std::uint8_t>(1u << bit);
            try {
                mio::load_model(bad, tiny_network());
            } catch (const mio::FormatError&) {
                ++rejected;
            }
        }
    }
    CHECK(rejected == good.size() * 8);
}

TEST_CASE("golden fixture round trip") {
    mio::GoldenFixture g{Tensor({4, 224, 224}, 0.5f), Tensor({2}, {1.25f, -0.75f})};
    auto bytes = mio::save_golden(g);
    auto back = mio::load_golden(bytes);
    CHECK(back.input == g.input);
    CHECK(back.logits == g.logits);

    std::vector<mio::NamedTensor> wrong = {{"input", Tensor({4, 10, 10})}, {"logits", Tensor({2})}};
    CHECK_THROWS_AS(mio::load_golden(mio::encode_container(mio::kGoldenMagic, wrong)), mio::FormatError);
    CHECK_THROWS_AS(mio::load_golden(mio::save_model({})), mio::FormatError);
}

TEST_CASE("file produced by the independent Python writer loads equal to its source arrays") {
    const char* dir = std::getenv("PERCIVAL_FIXTURE_DIR");
    if (dir == nullptr) {
        MESSAGE("PERCIVAL_FIXTURE_DIR not set; skipping");
        return;
    }
    const std::filesystem::path path = std::filesystem::path(dir) / "pattern.pmdl";
    NetworkPtr net = mio::load_model_file(path);
    // The writer fills tensor k, element i with ((i*7919 + k*104729) % 2001 - 1000) / 1024,
    // k counting tensors in canonical parameter order.
    const auto table = parameter_table(net->spec());
    const WeightSet weights = extract_weights(net->spec());
    for (std::size_t k = 0; k < table.size(); ++k) {
        const Tensor& t = weights.at(table[k].name);
        bool all_equal = true;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const long long code = (static_cast<long long>(i) * 7919 + static_cast<long long>(k) * 104729) % 2001;
            const float want = static_cast<float>(code - 1000) / 1024.0f;
            all_equal = all_equal && t[i] == want;
        }
        CHECK_MESSAGE(all_equal, table[k].name);
    }
}

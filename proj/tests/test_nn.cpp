#include "doctest.h"

#include "oracles/naive_nn.hpp"
#include "percival/nn.hpp"

using namespace percival;

TEST_CASE("conv2d identity and constant-bias cases") {
    std::mt19937_64 rng(1);
    Tensor x = oracle::random_tensor(rng, {3, 5, 7});

    nn::ConvSpec id = nn::make_conv("id", 3, 3, 1);
    for (std::size_t c = 0; c < 3; ++c) id.weights[c * 3 + c] = 1.0f;
    CHECK(nn::conv2d(x, id) == x);

    nn::ConvSpec zero = nn::make_conv("zero", 3, 2, 3, 1, 1);
    zero.bias = {0.25f, -4.0f};
    Tensor out = nn::conv2d(x, zero);
    CHECK(out.dims() == Shape{2, 5, 7});
    for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x2 = 0; x2 < 7; ++x2) {
            CHECK(out.at(0, y, x2) == 0.25f);
            CHECK(out.at(1, y, x2) == -4.0f);
        }
}

TEST_CASE("conv2d 1x4x4 with a 3x3 kernel matches the naive loop") {
    std::mt19937_64 rng(7);
    Tensor x = oracle::random_tensor(rng, {1, 4, 4});
    nn::ConvSpec k = nn::make_conv("k", 1, 1, 3);
    oracle::randomize(k, rng);
    Tensor got = nn::conv2d(x, k);
    oracle::Volume want = oracle::conv(oracle::from_tensor(x), k);
    REQUIRE(got.dims() == Shape{1, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) CHECK(oracle::close_rel(got[i], want.v[i], 1e-5));
}

TEST_CASE("conv2d output geometry uses floor semantics") {
    nn::ConvSpec s = nn::make_conv("s", 2, 4, 3, 2, 0);
    CHECK(nn::conv_output_shape({2, 224, 224}, s) == Shape{4, 111, 111});
    CHECK(nn::conv_output_shape({2, 8, 9}, s) == Shape{4, 3, 4});
    nn::ConvSpec p = nn::make_conv("p", 2, 4, 3, 1, 1);
    CHECK(nn::conv_output_shape({2, 6, 6}, p) == Shape{4, 6, 6});
}

TEST_CASE("conv2d shape errors name the layer and dims") {
    nn::ConvSpec s = nn::make_conv("fire9.squeeze", 8, 4, 1);
    Tensor x({3, 4, 4});
    try {
        nn::conv2d(x, s);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("fire9.squeeze") != std::string::npos);
        CHECK(msg.find("[3,4,4]") != std::string::npos);
    }
    nn::ConvSpec big = nn::make_conv("big", 1, 1, 5);
    CHECK_THROWS_AS(nn::conv2d(Tensor({1, 3, 3}), big), ShapeError);
    nn::ConvSpec bad = nn::make_conv("bad", 1, 1, 3);
    bad.bias.clear();
    CHECK_THROWS_AS(nn::conv2d(Tensor({1, 3, 3}), bad), ShapeError);
}

TEST_CASE("relu") {
    CHECK(nn::relu(Tensor({3}, {-1.0f, 0.0f, 2.0f})) == Tensor({3}, {0.0f, 0.0f, 2.0f}));
    CHECK(nn::relu(Tensor({2, 2, 2}, -3.0f)) == Tensor({2, 2, 2}, 0.0f));
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
        Tensor t = oracle::random_tensor(rng, {2, 3, 3});
        Tensor once = nn::relu(t);
        CHECK(nn::relu(once) == once);
    }
}

TEST_CASE("maxpool2d") {
    CHECK(nn::maxpool2d(Tensor({2, 7, 7}, 7.0f), 3, 2) == Tensor({2, 3, 3}, 7.0f));
    Tensor quad({1, 2, 2}, {1, 2, 3, 4});
    CHECK(nn::maxpool2d(quad, 2, 2) == Tensor({1, 1, 1}, {4.0f}));
    CHECK_THROWS_AS(nn::maxpool2d(quad, 0, 1), ShapeError);
    CHECK_THROWS_AS(nn::maxpool2d(quad, 2, 0), ShapeError);
    CHECK_THROWS_AS(nn::maxpool2d(quad, 3, 1), ShapeError);

    std::mt19937_64 rng(11);
    Tensor x = oracle::random_tensor(rng, {3, 9, 9});
    Tensor got = nn::maxpool2d(x, 3, 2);
    oracle::Volume want = oracle::maxpool(oracle::from_tensor(x), 3, 2);
    REQUIRE(got.dims() == Shape{3, 4, 4});
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == static_cast<float>(want.v[i]));
}

TEST_CASE("global_avgpool") {
    CHECK(nn::global_avgpool(Tensor({1, 3, 5}, 2.5f)) == Tensor({1}, {2.5f}));
    CHECK(nn::global_avgpool(Tensor({1, 2, 2}, {1, 3, 5, 7})) == Tensor({1}, {4.0f}));
    std::mt19937_64 rng(5);
    Tensor x = oracle::random_tensor(rng, {4, 6, 5});
    auto want = oracle::avgpool(oracle::from_tensor(x));
    Tensor got = nn::global_avgpool(x);
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(got[c] - want[c]) <= 1e-6);
}

TEST_CASE("channel_concat") {
    std::mt19937_64 rng(9);
    Tensor a = oracle::random_tensor(rng, {16, 5, 5});
    Tensor b = oracle::random_tensor(rng, {48, 5, 5});
    CHECK(nn::channel_concat(a, Tensor{}) == a);
    Tensor ab = nn::channel_concat(a, b);
    CHECK(ab.dims() == Shape{64, 5, 5});
    for (std::size_t c = 0; c < 48; ++c) CHECK(ab.at(16 + c, 2, 3) == b.at(c, 2, 3));
    CHECK_THROWS_AS(nn::channel_concat(a, Tensor({1, 4, 5})), ShapeError);
}

TEST_CASE("softmax") {
    Tensor half = nn::softmax(Tensor({2}, {0.0f, 0.0f}));
    CHECK(half[0] == 0.5f);
    CHECK(half[1] == 0.5f);

    Tensor extreme = nn::softmax(Tensor({2}, {1000.0f, 0.0f}));
    CHECK(extreme.all_finite());
    CHECK(extreme[0] == doctest::Approx(1.0));
    CHECK(extreme[1] == doctest::Approx(0.0));

    std::mt19937_64 rng(13);
    for (int i = 0; i < 50; ++i) {
        Tensor z = oracle::random_tensor(rng, {5}, -20.0f, 20.0f);
        Tensor shifted = z;
        for (auto& v : shifted.data()) v += 17.0f;
        Tensor p = nn::softmax(z);
        Tensor q = nn::softmax(shifted);
        for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(p[k] - q[k]) <= 1e-6);
    }
}

TEST_CASE("fire_forward") {
    nn::FireSpec zero = nn::make_fire("f", 8, 2, 4, 4);
    Tensor out = nn::fire_forward(Tensor({8, 6, 6}, 1.0f), zero);
    CHECK(out == Tensor({8, 6, 6}, 0.0f));

    nn::FireSpec wide = nn::make_fire("w", 8, 3, 5, 7);
    CHECK(nn::fire_forward(Tensor({8, 4, 4}), wide).dims() == Shape{12, 4, 4});

    std::mt19937_64 rng(21);
    nn::FireSpec f = nn::make_fire("f", 8, 2, 4, 4);
    oracle::randomize(f.squeeze, rng);
    oracle::randomize(f.expand1, rng);
    oracle::randomize(f.expand3, rng);
    Tensor x = oracle::random_tensor(rng, {8, 6, 6});
    Tensor got = nn::fire_forward(x, f);
    oracle::Volume want = oracle::fire(oracle::from_tensor(x), f);
    REQUIRE(got.size() == want.v.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(oracle::close_rel(got[i], want.v[i], 1e-5));

    nn::FireSpec broken = f;
    broken.expand3.in_channels = 3;
    CHECK_THROWS_AS(nn::fire_forward(x, broken), ShapeError);
}

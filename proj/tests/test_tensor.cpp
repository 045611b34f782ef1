#include <doctest.h>

#include <cmath>

#include "mmnet/error.hpp"
#include "mmnet/nn.hpp"
#include "mmnet/rng.hpp"
#include "mmnet/tensor.hpp"
#include "oracles.hpp"

using namespace mmnet;

TEST_CASE("shape invariants")
{
    CHECK(Shape{2, 3, 4, 5}.numel() == 120);
    CHECK_THROWS_AS(Shape({2, 0, 4}), ShapeError);
    CHECK_THROWS_AS(Shape({1, 1, 1, 1, 1}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>(3)), ShapeError);
}

TEST_CASE("tensor_create fill rules")
{
    Rng rng(5);
    const Tensor c = Tensor::create(Shape{3, 3}, Init::constant(2.5));
    for (float v : c.data())
        CHECK(v == 2.5f);
    const Tensor u = Tensor::create(Shape{1000}, Init::uniform(-0.5, 0.25), &rng);
    for (float v : u.data()) {
        CHECK(v >= -0.5f);
        CHECK(v < 0.25f);
    }
    const Tensor k = Tensor::create(Shape{20000}, Init::kaiming_normal(50), &rng);
    double s2 = 0;
    for (float v : k.data())
        s2 += static_cast<double>(v) * v;
    CHECK(s2 / 20000 == doctest::Approx(2.0 / 50).epsilon(0.05));
    CHECK_THROWS_AS(Tensor::create(Shape{4}, Init::uniform(0, 1), nullptr), UsageError);
}

TEST_CASE("rng streams are reproducible and keyed")
{
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i)
        CHECK(a.next_u64() == b.next_u64());
    Rng base(7);
    const auto first = base.derive("augment", {3, 9}).next_u64();
    for (int i = 0; i < 10; ++i)
        base.next_u64();
    CHECK(base.derive("augment", {3, 9}).next_u64() == first);
    CHECK(base.derive("augment", {9, 3}).next_u64() != first);
    CHECK(base.derive("dropout", {3, 9}).next_u64() != first);
    CHECK(Rng::algorithm == "xoshiro256ss-splitmix64");
}

TEST_CASE("rng matches a from-scratch xoshiro256** seeded by splitmix64")
{
    auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    for (std::uint64_t seed : {0ULL, 1ULL, 0xdeadbeefULL}) {
        std::uint64_t sm = seed, s[4];
        for (auto& w : s) {
            std::uint64_t z = (sm += 0x9e3779b97f4a7c15ULL);
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            w = z ^ (z >> 31);
        }
        Rng r(seed);
        for (int i = 0; i < 50; ++i) {
            const std::uint64_t expect = rotl(s[1] * 5, 7) * 9;
            const std::uint64_t t = s[1] << 17;
            s[2] ^= s[0];
            s[3] ^= s[1];
            s[1] ^= s[2];
            s[0] ^= s[3];
            s[2] ^= t;
            s[3] = rotl(s[3], 45);
            CHECK(r.next_u64() == expect);
        }
    }
}

TEST_CASE("rng uniform and below stay in range")
{
    Rng r(11);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        CHECK(r.below(7) < 7);
    }
}

TEST_CASE("elementwise ops are shape preserving and commutative where expected")
{
    Rng rng(2);
    const Tensor a = oracle::random_tensor(Shape{2, 3, 4, 4}, rng);
    const Tensor b = oracle::random_tensor(Shape{2, 3, 4, 4}, rng);
    for (auto op : {BinaryOp::add, BinaryOp::mul, BinaryOp::max}) {
        const Tensor ab = elementwise(op, a, b), ba = elementwise(op, b, a);
        CHECK(ab.shape() == a.shape());
        for (std::size_t i = 0; i < ab.numel(); ++i)
            CHECK(ab[i] == ba[i]);
    }
    CHECK(elementwise(BinaryOp::sub, a, b).shape() == a.shape());
    const Tensor per_channel(Shape{1, 3, 1, 1}, {1.0f, 2.0f, 3.0f});
    const Tensor s = elementwise(BinaryOp::mul, a, per_channel);
    CHECK(s.at(1, 2, 3, 1) == a.at(1, 2, 3, 1) * 3.0f);
    CHECK_THROWS_AS(elementwise(BinaryOp::div, a, Tensor(a.shape())), NumericError);
    CHECK_THROWS_AS(elementwise(BinaryOp::add, a, Tensor(Shape{2, 3})), ShapeError);
}

TEST_CASE("matmul")
{
    const Tensor a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b(Shape{3, 2}, {7, 8, 9, 10, 11, 12});
    const Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 2});
    CHECK(c[0] == 58.0f);
    CHECK(c[1] == 64.0f);
    CHECK(c[2] == 139.0f);
    CHECK(c[3] == 154.0f);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("im2col with a 1x1 kernel is the flattened input")
{
    const Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor cols = im2col(x, ConvGeometry{1, 1, 1, 0, 0, 0});
    CHECK(cols.shape() == Shape{1, 4});
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(cols[i] == x[i]);
}

TEST_CASE("im2col centre column of a padded 3x3 is the whole patch")
{
    Tensor x(Shape{1, 1, 3, 3});
    for (std::size_t i = 0; i < 9; ++i)
        x[i] = static_cast<float>(i + 1);
    const Tensor cols = im2col(x, ConvGeometry{3, 3, 1, 1, 1, 1});
    CHECK(cols.shape() == Shape{9, 9});
    for (std::size_t r = 0; r < 9; ++r)
        CHECK(cols[r * 9 + 4] == static_cast<float>(r + 1));
}

TEST_CASE("col2im is the adjoint of im2col")
{
    Rng rng(8);
    const Tensor x = oracle::random_tensor(Shape{2, 3, 5, 6}, rng);
    const ConvGeometry g{3, 3, 2, 1, 1, 0};
    const Tensor cols = im2col(x, g);
    const Tensor r = oracle::random_tensor(cols.shape(), rng);
    Tensor back(x.shape());
    col2im(r.data(), g, 0, 3, back);
    // <im2col(x), r> == <x, col2im(r)>
    CHECK(oracle::weighted_sum(cols, r) == doctest::Approx(oracle::weighted_sum(x, back)).epsilon(1e-6));
}

TEST_CASE("geometry rejects non-integral output extents")
{
    CHECK_THROWS_AS(ConvGeometry({3, 3, 2, 1, 1, 1}).out_extent(6, 3), ShapeError);
    ConvGeometry trimmed{3, 3, 2, 1, 0, 0};
    CHECK(trimmed.out_extent(6, 3) == 3);
    ConvGeometry mixed{3, 3, 2, 1, 0, 1};
    CHECK(mixed.out_h(6) == 3);
    CHECK(mixed.out_w(5) == 3);
    CHECK_THROWS_AS(mixed.out_w(6), ShapeError);
}

TEST_CASE("ensure_finite names the offender")
{
    Tensor t(Shape{2}, {1.0f, NAN});
    CHECK_THROWS_WITH_AS(ensure_finite(t, "logits"), doctest::Contains("logits"), NumericError);
}

TEST_CASE("im2col convolution equals the nested-loop oracle")
{
    Rng rng(2024);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t N = 1 + rng.below(2), C = 1 + rng.below(8), H = 3 + rng.below(6), W = 3 + rng.below(6);
        const bool depthwise = rng.bernoulli(0.5);
        const std::size_t groups = depthwise ? C : 1;
        const std::size_t K = depthwise ? C : 1 + rng.below(8);
        const std::size_t k = rng.bernoulli(0.5) ? 3 : 1, stride = 1 + rng.below(2);
        const std::size_t pad = k / 2;
        // Trim trailing padding per axis until each extent is integral.
        auto trailing = [&](std::size_t in) {
            std::size_t end = pad;
            while (end > 0 && (in + pad + end - k) % stride)
                --end;
            return end;
        };
        const std::size_t end_h = trailing(H), end_w = trailing(W);
        if ((H + pad + end_h - k) % stride || (W + pad + end_w - k) % stride)
            continue;
        const Tensor x = oracle::random_tensor(Shape{N, C, H, W}, rng);
        const Tensor w = oracle::random_tensor(Shape{K, C / groups, k, k}, rng);
        auto [y, tape] = nn::conv2d(x, w, ConvGeometry{k, k, stride, pad, end_h, end_w}, groups, false);
        const Tensor ref = oracle::naive_conv(x, w, stride, pad, end_h, end_w, groups);
        REQUIRE(y.shape() == ref.shape());
        for (std::size_t i = 0; i < y.numel(); ++i)
            CHECK(std::abs(y[i] - ref[i]) <= 1e-5);
    }
}

#include <doctest.h>

#include <cmath>

#include "gradcheck_report.hpp"
#include "mmnet/error.hpp"
#include "mmnet/nn.hpp"
#include "oracles.hpp"

using namespace mmnet;

namespace {

bool is_composite(const std::string& layer) { return layer.starts_with("inverted_residual"); }

} // namespace

TEST_CASE("primitive layer backward matches central differences per coordinate")
{
    for (std::uint64_t seed = 0; seed < 50; ++seed)
        for (const auto& r : gradcheck_double(seed)) {
            if (is_composite(r.layer))
                continue;
            CAPTURE(seed);
            CAPTURE(r.layer);
            CHECK(r.rel_error <= 1e-3);
            CHECK(r.skipped * 10 <= r.checked + r.skipped);
        }
}

TEST_CASE("block backward converges to central differences at second order")
{
    // A single central difference carries an O(h^2) truncation term; inside a
    // block with train-mode BN over a handful of values it can exceed 1e-3 at
    // h=1e-3. A correct backward shows that term shrinking ~100x per 10x in h.
    // Norms are used because per-coordinate ratios at h=1e-4 pick up roundoff
    // on gradients that are exactly zero.
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto coarse = gradcheck_double(seed, 1e-3);
        const auto fine = gradcheck_double(seed, 1e-4);
        for (std::size_t i = 0; i < coarse.size(); ++i) {
            if (!is_composite(coarse[i].layer))
                continue;
            CAPTURE(seed);
            CAPTURE(coarse[i].layer);
            CHECK(coarse[i].norm_error <= 1e-2);
            CHECK((fine[i].norm_error <= 1e-6 || fine[i].norm_error * 30 <= coarse[i].norm_error));
            CHECK(fine[i].norm_error <= 1e-4);
        }
    }
}

TEST_CASE("float kernels agree with central differences up to storage rounding")
{
    for (std::uint64_t seed = 100; seed < 105; ++seed)
        for (const auto& r : gradcheck_float(seed)) {
            CAPTURE(seed);
            CAPTURE(r.layer);
            CHECK(r.norm_error <= 1e-2);
        }
}

TEST_CASE("batchnorm train output has zero mean and unit variance per channel")
{
    Rng rng(3);
    nn::BatchNorm bn(3);
    const Tensor x = oracle::random_tensor(Shape{2, 3, 4, 4}, rng, 5.0);
    auto [y, tape] = bn.forward(x, nn::Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0, s2 = 0;
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < 16; ++i) {
                const double v = y.at(n, c, i / 4, i % 4);
                s += v;
                s2 += v * v;
            }
        CHECK(s / 32 == doctest::Approx(0.0).epsilon(1e-5));
        CHECK(s2 / 32 == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("batchnorm running buffers follow momentum 0.1 with unbiased variance")
{
    nn::BatchNorm bn(1);
    const Tensor x(Shape{2, 1, 1, 2}, {1.0f, 2.0f, 3.0f, 6.0f});
    (void)bn.forward(x, nn::Mode::train, false);
    // mean 3, unbiased var (4 + 1 + 0 + 9) / 3
    CHECK(bn.running_mean[0] == doctest::Approx(0.1 * 3.0));
    CHECK(bn.running_var[0] == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0));
}

TEST_CASE("batchnorm refuses single-value batch statistics")
{
    nn::BatchNorm bn(2);
    const Tensor x(Shape{1, 2, 1, 1}, 1.0f);
    CHECK_THROWS_AS(bn.forward(x, nn::Mode::train), NumericError);
    CHECK_NOTHROW(bn.infer(x));
}

TEST_CASE("relu6 passes no gradient at its kinks")
{
    const Tensor x(Shape{1, 1, 1, 4}, {0.0f, 6.0f, 3.0f, -1.0f});
    auto [y, tape] = nn::activation(nn::Activation::relu6, x);
    CHECK(y[0] == 0.0f);
    CHECK(y[1] == 6.0f);
    const Tensor g = nn::activation_backward(tape, Tensor(x.shape(), 1.0f));
    CHECK(g[0] == 0.0f);
    CHECK(g[1] == 0.0f);
    CHECK(g[2] == 1.0f);
    CHECK(g[3] == 0.0f);
}

TEST_CASE("sigmoid is stable for large magnitudes")
{
    const Tensor x(Shape{1, 1, 1, 2}, {-1000.0f, 1000.0f});
    auto [y, tape] = nn::activation(nn::Activation::sigmoid, x, false);
    CHECK(y[0] == 0.0f);
    CHECK(y[1] == 1.0f);
}

TEST_CASE("tapes are single use")
{
    Rng rng(1);
    nn::Conv2d conv(2, 2, 3, 1, 1);
    conv.init(rng);
    const Tensor x = oracle::random_tensor(Shape{1, 2, 4, 4}, rng);
    auto [y, tape] = conv.forward(x);
    conv.backward(tape, y);
    CHECK_THROWS_AS(conv.backward(tape, y), UsageError);

    auto [y2, unrecorded] = conv.forward(x, false);
    CHECK_THROWS_AS(conv.backward(unrecorded, y2), UsageError);
}

TEST_CASE("dropout is the identity at inference and scales survivors in training")
{
    Rng rng(9);
    const Tensor x(Shape{1, 1, 10, 10}, 1.0f);
    auto [inf, t0] = nn::dropout(x, 0.5, nn::Mode::infer, nullptr);
    CHECK(inf.data()[0] == 1.0f);
    CHECK(inf.sum() == doctest::Approx(100.0));
    auto [tr, t1] = nn::dropout(x, 0.5, nn::Mode::train, &rng);
    for (float v : tr.data())
        CHECK((v == 0.0f || v == 2.0f));
}

TEST_CASE("squeeze width never drops below one")
{
    CHECK(nn::se_squeeze_width(96, 8) == 12);
    CHECK(nn::se_squeeze_width(4, 8) == 1);
}

TEST_CASE("inverted residual skip only when stride 1 and channels match")
{
    CHECK(nn::InvertedResidual({8, 8, 6, 1, true, 8}).has_residual());
    CHECK_FALSE(nn::InvertedResidual({8, 8, 6, 2, true, 8}).has_residual());
    CHECK_FALSE(nn::InvertedResidual({8, 16, 6, 1, true, 8}).has_residual());
    CHECK_FALSE(nn::InvertedResidual({8, 8, 1, 1, false, 8}).expand.has_value());
    CHECK(nn::InvertedResidual({8, 8, 6, 1, false, 8}).hidden_channels() == 48);
}

TEST_CASE("block inference equals train-mode forward when buffers hold the batch statistics")
{
    // With momentum 1 the running buffers become the batch statistics, except
    // running_var is unbiased; a large batch makes the gap negligible.
    Rng rng(4);
    nn::InvertedResidual block({4, 4, 2, 1, true, 2});
    block.init(rng);
    std::vector<nn::NamedParam> ps;
    std::vector<nn::NamedBuffer> bs;
    block.collect("b", ps, bs);
    for (auto* bn : {&*block.expand_bn, &block.depthwise_bn, &block.project_bn})
        bn->momentum = 1.0;
    const Tensor x = oracle::random_tensor(Shape{2, 4, 6, 6}, rng);
    auto [y_train, tape] = block.forward(x, nn::Mode::train, false);
    const Tensor y_inf = block.infer(x);
    double worst = 0;
    for (std::size_t i = 0; i < y_inf.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(y_inf[i]) - y_train[i]));
    CHECK(worst < 0.1);
    CHECK(bs.size() == 6);
}

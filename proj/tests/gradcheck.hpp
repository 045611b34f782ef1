#pragma once

// Finite-difference checks of every layer's backward pass on randomized
// shapes up to (2,8,6,6).

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mmnet/nn.hpp"
#include "oracles.hpp"

namespace gradcheck {

using namespace mmnet;

struct LayerResult {
    std::string layer;
    oracle::GradCheck input;
    oracle::GradCheck params;

    double worst() const { return std::max(input.rel_error, params.rel_error); }
    double worst_norm() const { return std::max(input.norm_error, params.norm_error); }
};

// Region of a ReLU/ReLU6 input: below 0, linear, at or above 6.
inline std::vector<signed char> kink_pattern(const std::vector<const nn::ActivationTape*>& tapes)
{
    std::vector<signed char> out;
    for (const auto* t : tapes) {
        if (!t || t->kind == nn::Activation::sigmoid)
            continue;
        for (real v : t->saved.data())
            out.push_back(v <= 0.0f ? 0 : (t->kind == nn::Activation::relu6 && v >= 6.0f ? 2 : 1));
    }
    return out;
}

// forward() must run a recording forward pass on `x` and keep its tape;
// backward(r) consumes that tape and returns dL/dx; pattern() reports the
// kink regions of the last forward.
inline LayerResult check_layer(const std::string& name, Tensor& x, const std::vector<nn::Parameter*>& params,
                               const std::function<Tensor()>& forward,
                               const std::function<Tensor(const Tensor&)>& backward,
                               const std::function<std::vector<signed char>()>& pattern, Rng& rng,
                               double h = 1e-3)
{
    LayerResult res;
    res.layer = name;
    const Tensor y = forward();
    const auto baseline = pattern ? pattern() : std::vector<signed char>{};
    const Tensor r = oracle::random_tensor(y.shape(), rng);
    for (auto* p : params)
        p->zero_grad();
    const Tensor gx = backward(r);

    auto eval = [&] { return oracle::weighted_sum(forward(), r); };
    std::function<bool()> valid;
    if (pattern)
        valid = [&] { return pattern() == baseline; };

    std::vector<real*> xs;
    std::vector<double> gxs;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        xs.push_back(&x[i]);
        gxs.push_back(gx[i]);
    }
    res.input = oracle::finite_difference(eval, xs, gxs, h, valid);

    std::vector<real*> ps;
    std::vector<double> gps;
    for (auto* p : params)
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            ps.push_back(&p->value[i]);
            gps.push_back(p->grad[i]);
        }
    if (!ps.empty())
        res.params = oracle::finite_difference(eval, ps, gps, h, valid);
    return res;
}

inline void randomize(nn::Parameter& p, Rng& rng, double sd = 0.5, double centre = 0.0)
{
    p.value = oracle::random_tensor(p.value.shape(), rng, sd);
    for (auto& v : p.value.data())
        v += static_cast<real>(centre);
    p.grad = Tensor(p.value.shape());
}

// BN scales drawn around their initial value of 1; a scale near zero makes a
// following train-mode BN so curved that h=1e-3 no longer resolves it.
inline void randomize_named(const nn::NamedParam& np, Rng& rng)
{
    const bool bn_scale = np.name.ends_with(".gamma");
    randomize(*np.param, rng, bn_scale ? 0.25 : 0.5, bn_scale ? 1.0 : 0.0);
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi)
{
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

// Every layer type, one randomized instance each.
inline std::vector<LayerResult> check_all_layers(std::uint64_t seed, double h = 1e-3)
{
    Rng rng(seed);
    std::vector<LayerResult> out;
    const std::size_t N = pick(rng, 1, 2), C = pick(rng, 1, 8), H = pick(rng, 3, 6), W = pick(rng, 3, 6);
    const Shape xs{N, C, H, W};

    { // standard conv
        const std::size_t K = pick(rng, 1, 8), k = rng.bernoulli(0.5) ? 3 : 1;
        const std::size_t s = k == 3 ? pick(rng, 1, 2) : 1; // a strided 1x1 cannot tile every extent
        nn::Conv2d conv(C, K, k, s, 1);
        randomize(conv.weight, rng);
        Tensor x = oracle::random_tensor(xs, rng);
        std::optional<nn::ConvTape> tape;
        out.push_back(check_layer(
            "conv2d", x, {&conv.weight},
            [&] {
                auto [y, t] = conv.forward(x);
                tape = std::move(t);
                return y;
            },
            [&](const Tensor& g) { return conv.backward(*tape, g); }, {}, rng, h));
    }
    { // depthwise conv
        const std::size_t s = pick(rng, 1, 2);
        nn::Conv2d conv(C, C, 3, s, C);
        randomize(conv.weight, rng);
        Tensor x = oracle::random_tensor(xs, rng);
        std::optional<nn::ConvTape> tape;
        out.push_back(check_layer(
            "depthwise_conv2d", x, {&conv.weight},
            [&] {
                auto [y, t] = conv.forward(x);
                tape = std::move(t);
                return y;
            },
            [&](const Tensor& g) { return conv.backward(*tape, g); }, {}, rng, h));
    }
    { // batch norm, train mode
        nn::BatchNorm bn(C);
        randomize(bn.gamma, rng, 0.25, 1.0);
        randomize(bn.beta, rng);
        Tensor x = oracle::random_tensor(xs, rng, 2.0);
        std::optional<nn::BatchNormTape> tape;
        out.push_back(check_layer(
            "batchnorm", x, {&bn.gamma, &bn.beta},
            [&] {
                auto [y, t] = bn.forward(x, nn::Mode::train);
                tape = std::move(t);
                return y;
            },
            [&](const Tensor& g) { return bn.backward(*tape, g); }, {}, rng, h));
    }
    for (auto kind : {nn::Activation::relu, nn::Activation::relu6, nn::Activation::sigmoid}) {
        Tensor x = oracle::random_tensor(xs, rng, 4.0);
        for (auto& v : x.data()) // keep every input clear of the kinks
            if (std::abs(v) < 0.05f || std::abs(v - 6.0f) < 0.05f)
                v += 0.2f;
        std::optional<nn::ActivationTape> tape;
        const char* names[] = {"relu", "relu6", "sigmoid"};
        out.push_back(check_layer(
            names[static_cast<int>(kind)], x, {},
            [&] {
                auto [y, t] = nn::activation(kind, x);
                tape = std::move(t);
                return y;
            },
            [&](const Tensor& g) { return nn::activation_backward(*tape, g); },
            [&] { return kink_pattern({&*tape}); }, rng, h));
    }
    { // global average pool
        Tensor x = oracle::random_tensor(xs, rng);
        std::optional<nn::PoolTape> tape;
        out.push_back(check_layer(
            "global_avg_pool", x, {},
            [&] {
                auto [y, t] = nn::global_avg_pool(x);
                tape = std::move(t);
                return y;
            },
            [&](const Tensor& g) { return nn::global_avg_pool_backward(*tape, g); }, {}, rng, h));
    }
    { // fully connected on (N,C,1,1)
        const std::size_t K = pick(rng, 1, 8);
        nn::Linear fc(C, K);
        randomize(fc.weight, rng);
        randomize(fc.bias, rng);
        Tensor x = oracle::random_tensor(Shape{N, C, 1, 1}, rng);
        std::optional<nn::LinearTape> tape;
        out.push_back(check_layer(
            "linear", x, {&fc.weight, &fc.bias},
            [&] {
                auto [y, t] = fc.forward(x);
                tape = std::move(t);
                return y;
            },
            [&](const Tensor& g) { return fc.backward(*tape, g); }, {}, rng, h));
    }
    { // dropout with a mask fixed by its stream
        Tensor x = oracle::random_tensor(xs, rng);
        const std::uint64_t mask_seed = rng.next_u64();
        std::optional<nn::DropoutTape> tape;
        out.push_back(check_layer(
            "dropout", x, {},
            [&] {
                Rng m(mask_seed);
                auto [y, t] = nn::dropout(x, 0.3, nn::Mode::train, &m);
                tape = std::move(t);
                return y;
            },
            [&](const Tensor& g) { return nn::dropout_backward(*tape, g); }, {}, rng, h));
    }
    { // squeeze-excite
        const std::size_t sq = pick(rng, 1, std::max<std::size_t>(1, C / 2));
        nn::SqueezeExcite se(C, sq);
        for (auto* p : {&se.reduce.weight, &se.reduce.bias, &se.expand.weight, &se.expand.bias})
            randomize(*p, rng);
        Tensor x = oracle::random_tensor(xs, rng);
        std::optional<nn::SqueezeExciteTape> tape;
        out.push_back(check_layer(
            "squeeze_excite", x, {&se.reduce.weight, &se.reduce.bias, &se.expand.weight, &se.expand.bias},
            [&] {
                auto [y, t] = se.forward(x);
                tape = std::move(t);
                return y;
            },
            [&](const Tensor& g) { return se.backward(*tape, g); },
            [&] { return kink_pattern({&tape->relu}); }, rng, h));
    }
    for (int variant = 0; variant < 2; ++variant) { // inverted residual
        nn::InvertedResidualConfig cfg;
        cfg.in_channels = C;
        cfg.expand_ratio = variant == 0 ? 1 : 2;
        cfg.stride = variant == 0 ? 1 : pick(rng, 1, 2);
        cfg.out_channels = variant == 0 ? C : pick(rng, 1, 8); // variant 0 keeps the skip
        cfg.use_se = rng.bernoulli(0.5) || variant == 0;
        cfg.se_reduction = 2;
        nn::InvertedResidual block(cfg);
        std::vector<nn::NamedParam> named;
        std::vector<nn::NamedBuffer> buffers;
        block.collect("b", named, buffers);
        std::vector<nn::Parameter*> ps;
        for (auto& np : named) {
            randomize_named(np, rng);
            ps.push_back(np.param);
        }
        Tensor x = oracle::random_tensor(xs, rng);
        std::optional<nn::InvertedResidualTape> tape;
        out.push_back(check_layer(
            variant == 0 ? "inverted_residual_skip" : "inverted_residual", x, ps,
            [&] {
                auto [y, t] = block.forward(x, nn::Mode::train);
                tape = std::move(t);
                return y;
            },
            [&](const Tensor& g) { return block.backward(*tape, g); },
            [&] {
                std::vector<const nn::ActivationTape*> acts{&tape->depthwise_act};
                if (tape->expand_act)
                    acts.push_back(&*tape->expand_act);
                if (tape->se)
                    acts.push_back(&tape->se->relu);
                return kink_pattern(acts);
            },
            rng, h));
    }
    return out;
}

} // namespace gradcheck

#include "mmnet/nn.hpp"

#include <algorithm>
#include <cmath>

#include "mmnet/error.hpp"

namespace mmnet::nn {

namespace {

void require_rank4(const Tensor& t, const char* what)
{
    if (t.rank() != 4)
        throw ShapeError(std::string(what) + " expects an NCHW tensor, got " + t.shape().str());
}

void require_same_shape(const Tensor& a, const Shape& s, const char* what)
{
    if (a.shape() != s)
        throw ShapeError(std::string(what) + ": gradient shape " + a.shape().str() +
                         " does not match forward output " + s.str());
}

void accumulate(Tensor& dst, const Tensor& src)
{
    if (dst.shape() != src.shape())
        throw ShapeError("gradient shape " + src.shape().str() + " does not match parameter " +
                         dst.shape().str());
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i)
        d[i] += s[i];
}

double sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

Parameter::Parameter(Tensor v, bool decays) : value(std::move(v)), grad(value.shape()), decay(decays) {}

void Parameter::zero_grad()
{
    std::fill(grad.data().begin(), grad.data().end(), 0.0f);
}

void Tape::consume(const char* layer)
{
    if (!recorded_)
        throw UsageError(std::string(layer) + " backward: tape was not recorded");
    if (consumed_)
        throw UsageError(std::string(layer) + " backward: tape already consumed");
    consumed_ = true;
}

// ---------------------------------------------------------------------------
// conv2d

std::pair<Tensor, ConvTape> conv2d(const Tensor& input, const Tensor& weight, ConvGeometry geometry,
                                   std::size_t groups, bool record)
{
    require_rank4(input, "conv2d");
    require_rank4(weight, "conv2d weight");
    const std::size_t N = input.n(), C = input.c();
    const std::size_t Cout = weight.shape()[0];
    if (groups == 0 || C % groups != 0 || Cout % groups != 0)
        throw ShapeError("conv2d: channels " + std::to_string(C) + "->" + std::to_string(Cout) +
                         " not divisible by groups " + std::to_string(groups));
    const std::size_t cin_g = C / groups, cout_g = Cout / groups;
    if (weight.shape()[1] != cin_g)
        throw ShapeError("conv2d: weight " + weight.shape().str() + " inconsistent with " +
                         std::to_string(C) + " input channels and " + std::to_string(groups) +
                         " groups");
    geometry.kh = weight.shape()[2];
    geometry.kw = weight.shape()[3];
    const std::size_t Ho = geometry.out_h(input.h());
    const std::size_t Wo = geometry.out_w(input.w());
    const std::size_t plane = Ho * Wo, cols = N * plane, K = cin_g * geometry.kh * geometry.kw;

    Tensor out(Shape{N, Cout, Ho, Wo});
    std::vector<real> col(K * cols), outmat(cout_g * cols);
    for (std::size_t g = 0; g < groups; ++g) {
        im2col(input, geometry, g * cin_g, cin_g, col);
        gemm(false, false, cout_g, cols, K, weight.ptr() + g * cout_g * K, col.data(), outmat.data());
        for (std::size_t co = 0; co < cout_g; ++co)
            for (std::size_t n = 0; n < N; ++n)
                std::copy_n(outmat.data() + co * cols + n * plane, plane,
                            out.ptr() + (n * Cout + g * cout_g + co) * plane);
    }

    ConvTape tape;
    if (record) {
        tape.input = input;
        tape.weight_shape = weight.shape();
        tape.geometry = geometry;
        tape.groups = groups;
        tape.output_shape = out.shape();
        tape.mark_recorded();
    }
    return {std::move(out), std::move(tape)};
}

ConvGrads conv2d_backward(ConvTape& tape, const Tensor& weight, const Tensor& grad_out)
{
    tape.consume("conv2d");
    require_same_shape(grad_out, tape.output_shape, "conv2d");
    if (weight.shape() != tape.weight_shape)
        throw ShapeError("conv2d backward: weight shape changed since forward");
    const Tensor& input = tape.input;
    const std::size_t N = input.n(), C = input.c(), groups = tape.groups;
    const std::size_t Cout = weight.shape()[0];
    const std::size_t cin_g = C / groups, cout_g = Cout / groups;
    const auto& geo = tape.geometry;
    const std::size_t plane = grad_out.h() * grad_out.w(), cols = N * plane;
    const std::size_t K = cin_g * geo.kh * geo.kw;

    ConvGrads grads{Tensor(input.shape()), Tensor(weight.shape())};
    std::vector<real> col(K * cols), gmat(cout_g * cols), gcol(K * cols);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t co = 0; co < cout_g; ++co)
            for (std::size_t n = 0; n < N; ++n)
                std::copy_n(grad_out.ptr() + (n * Cout + g * cout_g + co) * plane, plane,
                            gmat.data() + co * cols + n * plane);
        im2col(input, geo, g * cin_g, cin_g, col);
        gemm(false, true, cout_g, K, cols, gmat.data(), col.data(), grads.weight.ptr() + g * cout_g * K);
        gemm(true, false, K, cols, cout_g, weight.ptr() + g * cout_g * K, gmat.data(), gcol.data());
        col2im(gcol, geo, g * cin_g, cin_g, grads.input);
    }
    tape.input = Tensor();
    return grads;
}

// ---------------------------------------------------------------------------
// batchnorm

std::pair<Tensor, BatchNormTape> batchnorm(const Tensor& input, const Tensor& gamma,
                                           const Tensor& beta, Tensor& running_mean,
                                           Tensor& running_var, Mode mode, double momentum,
                                           double eps, bool record)
{
    require_rank4(input, "batchnorm");
    const std::size_t N = input.n(), C = input.c(), plane = input.h() * input.w();
    const Tensor* per_channel[] = {&gamma, &beta, &running_mean, &running_var};
    for (const Tensor* t : per_channel)
        if (t->numel() != C)
            throw ShapeError("batchnorm: parameter length " + std::to_string(t->numel()) +
                             " does not match " + std::to_string(C) + " channels");
    const std::size_t M = N * plane;
    if (mode == Mode::train && M < 2)
        throw NumericError("batchnorm: batch statistics undefined for a single value per channel "
                           "(N*H*W == 1) in train mode");

    std::vector<double> mean(C), inv_std(C);
    if (mode == Mode::train) {
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const real* p = input.ptr() + (n * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    s += p[i];
            }
            const double mu = s / static_cast<double>(M);
            double ss = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const real* p = input.ptr() + (n * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    ss += d * d;
                }
            }
            const double var = ss / static_cast<double>(M);
            mean[c] = mu;
            inv_std[c] = 1.0 / std::sqrt(var + eps);
            const double unbiased = ss / static_cast<double>(M - 1);
            running_mean[c] = static_cast<real>((1.0 - momentum) * running_mean[c] + momentum * mu);
            running_var[c] = static_cast<real>((1.0 - momentum) * running_var[c] + momentum * unbiased);
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            if (!(running_var[c] > 0.0f))
                throw NumericError("batchnorm: running variance must be positive");
            mean[c] = running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
        }
    }

    Tensor out(input.shape());
    BatchNormTape tape;
    if (record) {
        tape.mode = mode;
        tape.xhat = Tensor(input.shape());
        tape.inv_std = inv_std;
        tape.mark_recorded();
    }
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * plane;
            const double g = gamma[c], b = beta[c];
            for (std::size_t i = 0; i < plane; ++i) {
                const double xh = (input[off + i] - mean[c]) * inv_std[c];
                if (record)
                    tape.xhat[off + i] = static_cast<real>(xh);
                out[off + i] = static_cast<real>(g * xh + b);
            }
        }
    }
    return {std::move(out), std::move(tape)};
}

BatchNormGrads batchnorm_backward(BatchNormTape& tape, const Tensor& gamma, const Tensor& grad_out)
{
    tape.consume("batchnorm");
    require_same_shape(grad_out, tape.xhat.shape(), "batchnorm");
    const std::size_t N = grad_out.n(), C = grad_out.c(), plane = grad_out.h() * grad_out.w();
    const double M = static_cast<double>(N * plane);
    BatchNormGrads grads{Tensor(grad_out.shape()), Tensor(gamma.shape()), Tensor(gamma.shape())};
    for (std::size_t c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += grad_out[off + i];
                sum_dy_xhat += static_cast<double>(grad_out[off + i]) * tape.xhat[off + i];
            }
        }
        grads.gamma[c] = static_cast<real>(sum_dy_xhat);
        grads.beta[c] = static_cast<real>(sum_dy);
        const double g = gamma[c], is = tape.inv_std[c];
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                double dx;
                if (tape.mode == Mode::train) {
                    dx = g * is / M *
                         (M * grad_out[off + i] - sum_dy - tape.xhat[off + i] * sum_dy_xhat);
                } else {
                    dx = g * is * grad_out[off + i];
                }
                grads.input[off + i] = static_cast<real>(dx);
            }
        }
    }
    tape.xhat = Tensor();
    return grads;
}

Tensor batchnorm_infer(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var, double eps)
{
    require_rank4(input, "batchnorm");
    const std::size_t N = input.n(), C = input.c(), plane = input.h() * input.w();
    for (const Tensor* t : {&gamma, &beta, &running_mean, &running_var})
        if (t->numel() != C)
            throw ShapeError("batchnorm: parameter length " + std::to_string(t->numel()) +
                             " does not match " + std::to_string(C) + " channels");
    Tensor out(input.shape());
    for (std::size_t c = 0; c < C; ++c) {
        if (!(running_var[c] > 0.0f))
            throw NumericError("batchnorm: running variance must be positive");
        const double mean = running_mean[c];
        const double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
        const double g = gamma[c], b = beta[c];
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                out[off + i] = static_cast<real>(g * ((input[off + i] - mean) * inv_std) + b);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations

std::pair<Tensor, ActivationTape> activation(Activation kind, const Tensor& input, bool record)
{
    Tensor out(input.shape());
    const auto x = input.data();
    auto y = out.data();
    switch (kind) {
    case Activation::relu:
        for (std::size_t i = 0; i < x.size(); ++i)
            y[i] = std::max(x[i], real{0});
        break;
    case Activation::relu6:
        for (std::size_t i = 0; i < x.size(); ++i)
            y[i] = std::min(std::max(x[i], real{0}), real{6});
        break;
    case Activation::sigmoid:
        for (std::size_t i = 0; i < x.size(); ++i)
            y[i] = static_cast<real>(sigmoid(x[i]));
        break;
    }
    ActivationTape tape;
    if (record) {
        tape.kind = kind;
        tape.saved = kind == Activation::sigmoid ? out : input;
        tape.mark_recorded();
    }
    return {std::move(out), std::move(tape)};
}

Tensor activation_backward(ActivationTape& tape, const Tensor& grad_out)
{
    tape.consume("activation");
    require_same_shape(grad_out, tape.saved.shape(), "activation");
    Tensor grad(grad_out.shape());
    const auto s = tape.saved.data();
    const auto dy = grad_out.data();
    auto dx = grad.data();
    switch (tape.kind) {
    case Activation::relu:
        for (std::size_t i = 0; i < s.size(); ++i)
            dx[i] = s[i] > 0.0f ? dy[i] : 0.0f;
        break;
    case Activation::relu6:
        for (std::size_t i = 0; i < s.size(); ++i)
            dx[i] = (s[i] > 0.0f && s[i] < 6.0f) ? dy[i] : 0.0f;
        break;
    case Activation::sigmoid:
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double y = s[i];
            dx[i] = static_cast<real>(dy[i] * y * (1.0 - y));
        }
        break;
    }
    tape.saved = Tensor();
    return grad;
}

// ---------------------------------------------------------------------------
// global average pooling

std::pair<Tensor, PoolTape> global_avg_pool(const Tensor& input, bool record)
{
    require_rank4(input, "global_avg_pool");
    const std::size_t N = input.n(), C = input.c(), plane = input.h() * input.w();
    Tensor out(Shape{N, C, 1, 1});
    for (std::size_t i = 0; i < N * C; ++i) {
        const real* p = input.ptr() + i * plane;
        double s = 0.0;
        for (std::size_t k = 0; k < plane; ++k)
            s += p[k];
        out[i] = static_cast<real>(s / static_cast<double>(plane));
    }
    PoolTape tape;
    if (record) {
        tape.input_shape = input.shape();
        tape.mark_recorded();
    }
    return {std::move(out), std::move(tape)};
}

Tensor global_avg_pool_backward(PoolTape& tape, const Tensor& grad_out)
{
    tape.consume("global_avg_pool");
    const Shape& in = tape.input_shape;
    if (grad_out.numel() != in[0] * in[1])
        throw ShapeError("global_avg_pool backward: gradient " + grad_out.shape().str() +
                         " does not match pooled shape of " + in.str());
    const std::size_t plane = in[2] * in[3];
    Tensor grad(in);
    const double scale = 1.0 / static_cast<double>(plane);
    for (std::size_t i = 0; i < in[0] * in[1]; ++i) {
        const real v = static_cast<real>(grad_out[i] * scale);
        std::fill_n(grad.ptr() + i * plane, plane, v);
    }
    return grad;
}

// ---------------------------------------------------------------------------
// fully connected

std::pair<Tensor, LinearTape> fully_connected(const Tensor& input, const Tensor& weight,
                                              const Tensor& bias, bool record)
{
    if (weight.rank() != 2)
        throw ShapeError("fully_connected: weight must be (K,C), got " + weight.shape().str());
    const std::size_t K = weight.shape()[0], C = weight.shape()[1];
    const std::size_t N = input.shape()[0];
    if (input.numel() != N * C)
        throw ShapeError("fully_connected: input " + input.shape().str() + " incompatible with weight " +
                         weight.shape().str());
    if (bias.numel() != K)
        throw ShapeError("fully_connected: bias length " + std::to_string(bias.numel()) +
                         " does not match " + std::to_string(K) + " outputs");
    Tensor out(Shape{N, K});
    gemm(false, true, N, K, C, input.ptr(), weight.ptr(), out.ptr());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < K; ++k)
            out[n * K + k] += bias[k];
    LinearTape tape;
    if (record) {
        tape.input = input.reshaped(Shape{N, C});
        tape.input_shape = input.shape();
        tape.mark_recorded();
    }
    return {std::move(out), std::move(tape)};
}

LinearGrads fully_connected_backward(LinearTape& tape, const Tensor& weight, const Tensor& grad_out)
{
    tape.consume("fully_connected");
    const std::size_t N = tape.input.shape()[0], C = tape.input.shape()[1];
    const std::size_t K = weight.shape()[0];
    require_same_shape(grad_out, Shape{N, K}, "fully_connected");
    LinearGrads grads{Tensor(tape.input_shape), Tensor(weight.shape()), Tensor(Shape{K})};
    gemm(true, false, K, C, N, grad_out.ptr(), tape.input.ptr(), grads.weight.ptr());
    gemm(false, false, N, C, K, grad_out.ptr(), weight.ptr(), grads.input.ptr());
    for (std::size_t k = 0; k < K; ++k) {
        double s = 0.0;
        for (std::size_t n = 0; n < N; ++n)
            s += grad_out[n * K + k];
        grads.bias[k] = static_cast<real>(s);
    }
    tape.input = Tensor();
    return grads;
}

// ---------------------------------------------------------------------------
// dropout

std::pair<Tensor, DropoutTape> dropout(const Tensor& input, double rate, Mode mode, Rng* rng,
                                       bool record)
{
    if (!(rate >= 0.0 && rate < 1.0))
        throw UsageError("dropout rate must lie in [0, 1)");
    DropoutTape tape;
    if (record)
        tape.mark_recorded();
    if (mode == Mode::infer || rate == 0.0)
        return {input, std::move(tape)};
    if (!rng)
        throw UsageError("dropout in train mode requires an rng");
    const real scale = static_cast<real>(1.0 / (1.0 - rate));
    Tensor out(input.shape());
    std::vector<real> mask(input.numel());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng->bernoulli(rate) ? 0.0f : scale;
        out[i] = input[i] * mask[i];
    }
    if (record)
        tape.mask = std::move(mask);
    return {std::move(out), std::move(tape)};
}

Tensor dropout_backward(DropoutTape& tape, const Tensor& grad_out)
{
    tape.consume("dropout");
    if (tape.mask.empty())
        return grad_out;
    if (tape.mask.size() != grad_out.numel())
        throw ShapeError("dropout backward: gradient size does not match mask");
    Tensor grad(grad_out.shape());
    for (std::size_t i = 0; i < tape.mask.size(); ++i)
        grad[i] = grad_out[i] * tape.mask[i];
    tape.mask.clear();
    return grad;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t groups)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), groups_(groups)
{
    if (groups == 0 || in_channels % groups != 0 || out_channels % groups != 0)
        throw ShapeError("Conv2d: channels not divisible by groups");
    if (stride != 1 && stride != 2)
        throw ShapeError("Conv2d: stride must be 1 or 2");
    weight = Parameter(Tensor(Shape{out_channels, in_channels / groups, kernel, kernel}), true);
}

void Conv2d::init(Rng& rng)
{
    // Kaiming-normal, fan-out mode as in the MobileNetV2 reference init.
    const std::size_t fan = out_ / groups_ * kernel_ * kernel_;
    weight.value = Tensor::create(weight.value.shape(), Init::kaiming_normal(fan), &rng);
}

ConvGeometry Conv2d::geometry_for(std::size_t h, std::size_t w) const
{
    ConvGeometry g;
    g.kh = g.kw = kernel_;
    g.stride = stride_;
    g.pad = (kernel_ - 1) / 2;
    auto remainder = [&](std::size_t in) {
        if (in + 2 * g.pad < kernel_)
            throw ShapeError("Conv2d: input smaller than kernel");
        return (in + 2 * g.pad - kernel_) % stride_;
    };
    const std::size_t rh = remainder(h), rw = remainder(w);
    if (rh > g.pad || rw > g.pad)
        throw ShapeError("Conv2d: cannot choose padding for " + std::to_string(h) + "x" +
                         std::to_string(w) + " input at stride " + std::to_string(stride_));
    g.pad_end = g.pad - rh;
    g.pad_end_w = g.pad - rw;
    return g;
}

std::size_t Conv2d::out_extent(std::size_t in) const
{
    const auto g = geometry_for(in, in);
    return g.out_extent(in, kernel_);
}

std::pair<Tensor, ConvTape> Conv2d::forward(const Tensor& x, bool record) const
{
    require_rank4(x, "Conv2d");
    if (x.c() != in_)
        throw ShapeError("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                         std::to_string(x.c()));
    return conv2d(x, weight.value, geometry_for(x.h(), x.w()), groups_, record);
}

Tensor Conv2d::backward(ConvTape& tape, const Tensor& grad_out)
{
    auto g = conv2d_backward(tape, weight.value, grad_out);
    accumulate(weight.grad, g.weight);
    return std::move(g.input);
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParam>& out)
{
    out.push_back({prefix + ".weight", &weight});
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::size_t channels)
    : gamma(Tensor(Shape{channels}, 1.0f), false), beta(Tensor(Shape{channels}, 0.0f), false),
      running_mean(Shape{channels}, 0.0f), running_var(Shape{channels}, 1.0f)
{
}

std::pair<Tensor, BatchNormTape> BatchNorm::forward(const Tensor& x, Mode mode, bool record)
{
    return batchnorm(x, gamma.value, beta.value, running_mean, running_var, mode, momentum, eps, record);
}

Tensor BatchNorm::infer(const Tensor& x) const
{
    return batchnorm_infer(x, gamma.value, beta.value, running_mean, running_var, eps);
}

Tensor BatchNorm::backward(BatchNormTape& tape, const Tensor& grad_out)
{
    auto g = batchnorm_backward(tape, gamma.value, grad_out);
    accumulate(gamma.grad, g.gamma);
    accumulate(beta.grad, g.beta);
    return std::move(g.input);
}

void BatchNorm::collect(const std::string& prefix, std::vector<NamedParam>& params,
                        std::vector<NamedBuffer>& buffers)
{
    params.push_back({prefix + ".gamma", &gamma});
    params.push_back({prefix + ".beta", &beta});
    buffers.push_back({prefix + ".running_mean", &running_mean});
    buffers.push_back({prefix + ".running_var", &running_var});
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::size_t in_features, std::size_t out_features)
    : weight(Tensor(Shape{out_features, in_features}), true), bias(Tensor(Shape{out_features}), false)
{
}

void Linear::init(Rng& rng)
{
    weight.value = Tensor::create(weight.value.shape(), Init::kaiming_normal(weight.value.shape()[1]), &rng);
    std::fill(bias.value.data().begin(), bias.value.data().end(), 0.0f);
}

std::pair<Tensor, LinearTape> Linear::forward(const Tensor& x, bool record) const
{
    return fully_connected(x, weight.value, bias.value, record);
}

Tensor Linear::backward(LinearTape& tape, const Tensor& grad_out)
{
    auto g = fully_connected_backward(tape, weight.value, grad_out);
    accumulate(weight.grad, g.weight);
    accumulate(bias.grad, g.bias);
    return std::move(g.input);
}

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out)
{
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
}

// ---------------------------------------------------------------------------
// SqueezeExcite

std::size_t se_squeeze_width(std::size_t channels, std::size_t reduction)
{
    if (reduction == 0)
        throw ShapeError("SE reduction must be positive");
    return std::max<std::size_t>(1, channels / reduction);
}

SqueezeExcite::SqueezeExcite(std::size_t channels, std::size_t squeeze_channels)
    : reduce(channels, squeeze_channels), expand(squeeze_channels, channels), channels_(channels),
      squeeze_(squeeze_channels)
{
}

void SqueezeExcite::init(Rng& rng)
{
    reduce.init(rng);
    expand.init(rng);
}

std::pair<Tensor, SqueezeExciteTape> SqueezeExcite::forward(const Tensor& x, bool record) const
{
    require_rank4(x, "SqueezeExcite");
    if (x.c() != channels_)
        throw ShapeError("SqueezeExcite: expected " + std::to_string(channels_) + " channels, got " +
                         std::to_string(x.c()));
    SqueezeExciteTape tape;
    auto [pooled, pool_tape] = global_avg_pool(x, record);
    auto [hidden, reduce_tape] = reduce.forward(pooled, record);
    auto [act, relu_tape] = activation(Activation::relu, hidden, record);
    auto [logits, expand_tape] = expand.forward(act, record);
    auto [gate, sigmoid_tape] = activation(Activation::sigmoid, logits, record);

    const std::size_t N = x.n(), C = x.c(), plane = x.h() * x.w();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < N * C; ++i) {
        const real g = gate[i];
        const real* src = x.ptr() + i * plane;
        real* dst = out.ptr() + i * plane;
        for (std::size_t k = 0; k < plane; ++k)
            dst[k] = src[k] * g;
    }
    if (record) {
        tape.input = x;
        tape.gate = gate;
        tape.pool = std::move(pool_tape);
        tape.reduce = std::move(reduce_tape);
        tape.relu = std::move(relu_tape);
        tape.expand = std::move(expand_tape);
        tape.sigmoid = std::move(sigmoid_tape);
        tape.mark_recorded();
    }
    return {std::move(out), std::move(tape)};
}

Tensor SqueezeExcite::backward(SqueezeExciteTape& tape, const Tensor& grad_out)
{
    tape.consume("SqueezeExcite");
    require_same_shape(grad_out, tape.input.shape(), "SqueezeExcite");
    const Tensor& x = tape.input;
    const std::size_t N = x.n(), C = x.c(), plane = x.h() * x.w();
    Tensor grad_in(x.shape());
    Tensor grad_gate(Shape{N, C});
    for (std::size_t i = 0; i < N * C; ++i) {
        const real g = tape.gate[i];
        const real* dy = grad_out.ptr() + i * plane;
        const real* src = x.ptr() + i * plane;
        real* dx = grad_in.ptr() + i * plane;
        double s = 0.0;
        for (std::size_t k = 0; k < plane; ++k) {
            dx[k] = dy[k] * g;
            s += static_cast<double>(dy[k]) * src[k];
        }
        grad_gate[i] = static_cast<real>(s);
    }
    Tensor d = activation_backward(tape.sigmoid, grad_gate);
    d = expand.backward(tape.expand, d);
    d = activation_backward(tape.relu, d);
    d = reduce.backward(tape.reduce, d);
    d = global_avg_pool_backward(tape.pool, d);
    auto acc = grad_in.data();
    auto add = d.data();
    for (std::size_t i = 0; i < acc.size(); ++i)
        acc[i] += add[i];
    tape.input = Tensor();
    return grad_in;
}

void SqueezeExcite::collect(const std::string& prefix, std::vector<NamedParam>& out)
{
    reduce.collect(prefix + ".reduce", out);
    expand.collect(prefix + ".expand", out);
}

// ---------------------------------------------------------------------------
// InvertedResidual

InvertedResidual::InvertedResidual(const InvertedResidualConfig& config) : config_(config)
{
    if (config.stride != 1 && config.stride != 2)
        throw ShapeError("InvertedResidual: stride must be 1 or 2");
    if (config.expand_ratio == 0 || config.in_channels == 0 || config.out_channels == 0)
        throw ShapeError("InvertedResidual: channel counts and expand ratio must be positive");
    hidden_ = config.in_channels * config.expand_ratio;
    if (config.expand_ratio != 1) {
        expand.emplace(config.in_channels, hidden_, 1, 1, 1);
        expand_bn.emplace(hidden_);
    }
    depthwise = Conv2d(hidden_, hidden_, 3, config.stride, hidden_);
    depthwise_bn = BatchNorm(hidden_);
    if (config.use_se)
        se.emplace(hidden_, se_squeeze_width(hidden_, config.se_reduction));
    project = Conv2d(hidden_, config.out_channels, 1, 1, 1);
    project_bn = BatchNorm(config.out_channels);
    residual_ = config.stride == 1 && config.in_channels == config.out_channels;
}

void InvertedResidual::init(Rng& rng)
{
    if (expand)
        expand->init(rng);
    depthwise.init(rng);
    if (se)
        se->init(rng);
    project.init(rng);
}

std::pair<Tensor, InvertedResidualTape> InvertedResidual::forward(const Tensor& x, Mode mode, bool record)
{
    InvertedResidualTape tape;
    Tensor h = x;
    if (expand) {
        auto [a, t1] = expand->forward(h, record);
        auto [b, t2] = expand_bn->forward(a, mode, record);
        auto [c, t3] = activation(Activation::relu6, b, record);
        h = std::move(c);
        if (record) {
            tape.expand = std::move(t1);
            tape.expand_bn = std::move(t2);
            tape.expand_act = std::move(t3);
        }
    }
    auto [d, t4] = depthwise.forward(h, record);
    auto [e, t5] = depthwise_bn.forward(d, mode, record);
    auto [f, t6] = activation(Activation::relu6, e, record);
    h = std::move(f);
    if (se) {
        auto [g, t7] = se->forward(h, record);
        h = std::move(g);
        if (record)
            tape.se = std::move(t7);
    }
    auto [p, t8] = project.forward(h, record);
    auto [out, t9] = project_bn.forward(p, mode, record);
    if (residual_) {
        auto o = out.data();
        auto in = x.data();
        for (std::size_t i = 0; i < o.size(); ++i)
            o[i] += in[i];
    }
    if (record) {
        tape.depthwise = std::move(t4);
        tape.depthwise_bn = std::move(t5);
        tape.depthwise_act = std::move(t6);
        tape.project = std::move(t8);
        tape.project_bn = std::move(t9);
        tape.mark_recorded();
    }
    return {std::move(out), std::move(tape)};
}

Tensor InvertedResidual::infer(const Tensor& x) const
{
    Tensor h = x;
    if (expand)
        h = activation(Activation::relu6, expand_bn->infer(expand->forward(h, false).first), false).first;
    h = activation(Activation::relu6, depthwise_bn.infer(depthwise.forward(h, false).first), false).first;
    if (se)
        h = se->forward(h, false).first;
    Tensor out = project_bn.infer(project.forward(h, false).first);
    if (residual_) {
        auto o = out.data();
        auto in = x.data();
        for (std::size_t i = 0; i < o.size(); ++i)
            o[i] += in[i];
    }
    return out;
}

Tensor InvertedResidual::backward(InvertedResidualTape& tape, const Tensor& grad_out)
{
    tape.consume("InvertedResidual");
    Tensor d = project_bn.backward(tape.project_bn, grad_out);
    d = project.backward(tape.project, d);
    if (se)
        d = se->backward(*tape.se, d);
    d = activation_backward(tape.depthwise_act, d);
    d = depthwise_bn.backward(tape.depthwise_bn, d);
    d = depthwise.backward(tape.depthwise, d);
    if (expand) {
        d = activation_backward(*tape.expand_act, d);
        d = expand_bn->backward(*tape.expand_bn, d);
        d = expand->backward(*tape.expand, d);
    }
    if (residual_) {
        auto acc = d.data();
        auto skip = grad_out.data();
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc[i] += skip[i];
    }
    return d;
}

void InvertedResidual::collect(const std::string& prefix, std::vector<NamedParam>& params,
                               std::vector<NamedBuffer>& buffers)
{
    if (expand) {
        expand->collect(prefix + ".expand", params);
        expand_bn->collect(prefix + ".expand_bn", params, buffers);
    }
    depthwise.collect(prefix + ".depthwise", params);
    depthwise_bn.collect(prefix + ".depthwise_bn", params, buffers);
    if (se)
        se->collect(prefix + ".se", params);
    project.collect(prefix + ".project", params);
    project_bn.collect(prefix + ".project_bn", params, buffers);
}

} // namespace mmnet::nn

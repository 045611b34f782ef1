#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmnet/rng.hpp"
#include "mmnet/tensor.hpp"

namespace mmnet::nn {

enum class Mode { train, infer };

// Trainable tensor plus its gradient slot. `decay` is false for BN
// affine terms and biases, which are exempt from weight decay.
struct Parameter {
    Tensor value;
    Tensor grad;
    bool decay = true;

    Parameter() = default;
    Parameter(Tensor v, bool decays);
    void zero_grad();
};

struct NamedParam {
    std::string name;
    Parameter* param;
};

struct NamedBuffer {
    std::string name;
    Tensor* buffer;
};

// Every tape may be consumed by exactly one backward call.
class Tape {
public:
    bool recorded() const noexcept { return recorded_; }
    bool consumed() const noexcept { return consumed_; }

    void mark_recorded() noexcept { recorded_ = true; }
    // Throws UsageError if the tape was never recorded or was already used.
    void consume(const char* layer);

private:
    bool recorded_ = false;
    bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Functional kernels

struct ConvTape : Tape {
    Tensor input;
    Shape weight_shape;
    ConvGeometry geometry;
    std::size_t groups = 1;
    Shape output_shape;
};

struct ConvGrads {
    Tensor input;
    Tensor weight;
};

// Grouped 2-D convolution without bias. Weight is (C_out, C_in/groups, kh, kw).
// groups == 1 is a standard conv, groups == C_in a depthwise conv.
std::pair<Tensor, ConvTape> conv2d(const Tensor& input, const Tensor& weight, ConvGeometry geometry,
                                   std::size_t groups, bool record = true);
ConvGrads conv2d_backward(ConvTape& tape, const Tensor& weight, const Tensor& grad_out);

struct BatchNormTape : Tape {
    Mode mode = Mode::infer;
    Tensor xhat;
    std::vector<double> inv_std;
};

struct BatchNormGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};

// Train mode normalizes with batch statistics and updates the running
// buffers in place; infer mode uses the buffers only.
std::pair<Tensor, BatchNormTape> batchnorm(const Tensor& input, const Tensor& gamma,
                                           const Tensor& beta, Tensor& running_mean,
                                           Tensor& running_var, Mode mode, double momentum = 0.1,
                                           double eps = 1e-5, bool record = true);
BatchNormGrads batchnorm_backward(BatchNormTape& tape, const Tensor& gamma, const Tensor& grad_out);
// Inference-only normalization with fixed buffers; never records a tape.
Tensor batchnorm_infer(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var, double eps = 1e-5);

enum class Activation { relu, relu6, sigmoid };

struct ActivationTape : Tape {
    Activation kind = Activation::relu6;
    Tensor saved; // input for relu/relu6, output for sigmoid
};

std::pair<Tensor, ActivationTape> activation(Activation kind, const Tensor& input, bool record = true);
// Kinks (x == 0, x == 6) pass no gradient.
Tensor activation_backward(ActivationTape& tape, const Tensor& grad_out);

struct PoolTape : Tape {
    Shape input_shape;
};

// Mean over H x W; (N,C,H,W) -> (N,C,1,1).
std::pair<Tensor, PoolTape> global_avg_pool(const Tensor& input, bool record = true);
Tensor global_avg_pool_backward(PoolTape& tape, const Tensor& grad_out);

struct LinearTape : Tape {
    Tensor input; // flattened (N, C)
    Shape input_shape;
};

struct LinearGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

// out = input . weight^T + bias. Input is (N,C) or (N,C,1,1); weight is (K,C).
std::pair<Tensor, LinearTape> fully_connected(const Tensor& input, const Tensor& weight,
                                              const Tensor& bias, bool record = true);
LinearGrads fully_connected_backward(LinearTape& tape, const Tensor& weight, const Tensor& grad_out);

struct DropoutTape : Tape {
    std::vector<real> mask; // 0 or 1/(1-rate); empty means identity
};

// Inverted dropout: survivors are scaled by 1/(1-rate) at train time.
std::pair<Tensor, DropoutTape> dropout(const Tensor& input, double rate, Mode mode, Rng* rng,
                                       bool record = true);
Tensor dropout_backward(DropoutTape& tape, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Layers owning parameters. backward() accumulates into Parameter::grad.

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           std::size_t stride, std::size_t groups);

    void init(Rng& rng);
    // Symmetric (k-1)/2 padding; the trailing pad is trimmed when needed so
    // that the output extent is ceil(in / stride).
    ConvGeometry geometry_for(std::size_t h, std::size_t w) const;
    std::size_t out_extent(std::size_t in) const;

    std::pair<Tensor, ConvTape> forward(const Tensor& x, bool record = true) const;
    Tensor backward(ConvTape& tape, const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    std::size_t in_channels() const noexcept { return in_; }
    std::size_t out_channels() const noexcept { return out_; }
    std::size_t kernel() const noexcept { return kernel_; }
    std::size_t stride() const noexcept { return stride_; }
    std::size_t groups() const noexcept { return groups_; }

    Parameter weight;

private:
    std::size_t in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, groups_ = 1;
};

class BatchNorm {
public:
    static constexpr double default_momentum = 0.1;
    static constexpr double default_eps = 1e-5;

    BatchNorm() = default;
    explicit BatchNorm(std::size_t channels);

    std::pair<Tensor, BatchNormTape> forward(const Tensor& x, Mode mode, bool record = true);
    Tensor infer(const Tensor& x) const;
    Tensor backward(BatchNormTape& tape, const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<NamedParam>& params,
                 std::vector<NamedBuffer>& buffers);

    Parameter gamma;
    Parameter beta;
    Tensor running_mean;
    Tensor running_var;
    double momentum = default_momentum;
    double eps = default_eps;
};

class Linear {
public:
    Linear() = default;
    Linear(std::size_t in_features, std::size_t out_features);

    void init(Rng& rng);
    std::pair<Tensor, LinearTape> forward(const Tensor& x, bool record = true) const;
    Tensor backward(LinearTape& tape, const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    Parameter weight;
    Parameter bias;
};

struct SqueezeExciteTape : Tape {
    Tensor input;
    Tensor gate; // (N, C)
    PoolTape pool;
    LinearTape reduce;
    ActivationTape relu;
    LinearTape expand;
    ActivationTape sigmoid;
};

// gate = sigmoid(expand(relu(reduce(gap(x))))); out = x * gate per channel.
class SqueezeExcite {
public:
    SqueezeExcite() = default;
    SqueezeExcite(std::size_t channels, std::size_t squeeze_channels);

    void init(Rng& rng);
    std::pair<Tensor, SqueezeExciteTape> forward(const Tensor& x, bool record = true) const;
    Tensor backward(SqueezeExciteTape& tape, const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t squeeze_channels() const noexcept { return squeeze_; }

    Linear reduce;
    Linear expand;

private:
    std::size_t channels_ = 0, squeeze_ = 0;
};

// Squeeze width used for an SE block on `channels` inputs: floor(channels /
// reduction), never below 1.
std::size_t se_squeeze_width(std::size_t channels, std::size_t reduction);

struct InvertedResidualTape : Tape {
    std::optional<ConvTape> expand;
    std::optional<BatchNormTape> expand_bn;
    std::optional<ActivationTape> expand_act;
    ConvTape depthwise;
    BatchNormTape depthwise_bn;
    ActivationTape depthwise_act;
    std::optional<SqueezeExciteTape> se;
    ConvTape project;
    BatchNormTape project_bn;
};

struct InvertedResidualConfig {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t expand_ratio = 1;
    std::size_t stride = 1;
    bool use_se = true;
    std::size_t se_reduction = 8;
};

// Linear bottleneck: [1x1 expand -> BN -> ReLU6] -> 3x3 depthwise -> BN ->
// ReLU6 -> [SE] -> 1x1 project -> BN, plus identity skip when stride is 1
// and the channel count is preserved.
class InvertedResidual {
public:
    InvertedResidual() = default;
    explicit InvertedResidual(const InvertedResidualConfig& config);

    void init(Rng& rng);
    std::pair<Tensor, InvertedResidualTape> forward(const Tensor& x, Mode mode, bool record = true);
    Tensor infer(const Tensor& x) const;
    Tensor backward(InvertedResidualTape& tape, const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<NamedParam>& params,
                 std::vector<NamedBuffer>& buffers);

    const InvertedResidualConfig& config() const noexcept { return config_; }
    std::size_t hidden_channels() const noexcept { return hidden_; }
    bool has_residual() const noexcept { return residual_; }

    std::optional<Conv2d> expand;
    std::optional<BatchNorm> expand_bn;
    Conv2d depthwise;
    BatchNorm depthwise_bn;
    std::optional<SqueezeExcite> se;
    Conv2d project;
    BatchNorm project_bn;

private:
    InvertedResidualConfig config_;
    std::size_t hidden_ = 0;
    bool residual_ = false;
};

} // namespace mmnet::nn

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmnet/nn.hpp"
#include "mmnet/rng.hpp"
#include "mmnet/tensor.hpp"

namespace mmnet {

// One row of the inverted-residual plan: expand ratio t, base output
// channels c, repeat count n, stride of the first repeat s.
struct BlockStage {
    std::size_t expand_ratio;
    std::size_t channels;
    std::size_t repeats;
    std::size_t stride;

    bool operator==(const BlockStage&) const = default;
};

// MobileNetV2 backbone plan (stem 32, head 1280).
std::vector<BlockStage> mobilenet_v2_plan();

struct ModelSpec {
    double width_multiplier = 1.0;
    std::size_t num_classes = 2;
    std::size_t stem_channels = 32;
    std::vector<BlockStage> block_plan = mobilenet_v2_plan();
    std::size_t head_channels = 1280;
    bool use_se = true;
    // SE squeeze width = expanded channels / se_reduction.
    std::size_t se_reduction = 8;
    std::size_t channel_round = 8;
    std::size_t input_size = 224;
    double dropout = 0.0;
    // Reserved: per-block dropout is accepted in the schema but must stay false.
    bool per_block_dropout = false;

    // round_to_multiple(base * width, channel_round), half rounds up, never
    // below channel_round.
    std::size_t scaled(std::size_t base) const;
    // Throws ConfigError describing the first invalid field.
    void validate() const;

    // Spatial extent after the stem and after every inverted-residual block.
    std::vector<std::size_t> spatial_trace() const;

    nlohmann::json to_json() const;
    static ModelSpec from_json(const nlohmann::json& j);

    bool operator==(const ModelSpec&) const = default;
};

struct LayerCount {
    std::string name;
    std::size_t params = 0;
};

struct ParamStats {
    std::size_t param_count = 0;
    std::size_t bytes_f32 = 0;
    std::size_t buffer_count = 0;
    std::vector<LayerCount> per_layer;
};

struct ModelTape {
    nn::ConvTape stem;
    nn::BatchNormTape stem_bn;
    nn::ActivationTape stem_act;
    std::vector<nn::InvertedResidualTape> blocks;
    nn::ConvTape head;
    nn::BatchNormTape head_bn;
    nn::ActivationTape head_act;
    nn::PoolTape pool;
    nn::DropoutTape dropout;
    nn::LinearTape classifier;
};

class Model {
public:
    // Layers are shaped from `spec` with zero weights; see build_model.
    explicit Model(ModelSpec spec);

    const ModelSpec& spec() const noexcept { return spec_; }

    // Deterministic inference; BN uses running buffers, dropout is identity.
    Tensor infer(const Tensor& batch) const;

    struct TrainOutput {
        Tensor logits;
        ModelTape tape;
    };
    // Train-mode forward: batch statistics, dropout drawn from `rng`.
    TrainOutput forward_train(const Tensor& batch, Rng& rng);
    // Accumulates parameter gradients for the recorded forward.
    void backward(ModelTape& tape, const Tensor& grad_logits);

    std::vector<nn::NamedParam> parameters();
    std::vector<nn::NamedBuffer> buffers();
    void zero_grad();

    nn::Conv2d stem;
    nn::BatchNorm stem_bn;
    std::vector<nn::InvertedResidual> blocks;
    nn::Conv2d head;
    nn::BatchNorm head_bn;
    nn::Linear classifier;

private:
    void check_input(const Tensor& batch) const;

    ModelSpec spec_;
};

// Kaiming-normal conv/FC weights, BN gamma=1 beta=0, buffers (0,1).
Model build_model(const ModelSpec& spec, Rng& rng);

// Exact counts from layer shapes alone; nothing is allocated.
ParamStats param_stats(const ModelSpec& spec);
// Counts taken from the instantiated tensors.
ParamStats param_stats(Model& model);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char checkpoint_magic[8] = {'M', 'M', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t checkpoint_version = 1;

struct CheckpointMeta {
    std::string rng_algorithm;
    std::uint64_t seed = 0;
    std::string config_digest;
    // Free-form extras (normalization profile, training config...).
    nlohmann::json extra = nlohmann::json::object();
};

struct LoadedCheckpoint {
    Model model;
    CheckpointMeta meta;
};

// Byte layout: magic | u32 version | u32 tensor count | per tensor
// (u16 name length, name, u8 rank, u32 extents, u32 CRC32, f32 payload) |
// u32 length + UTF-8 JSON block holding the spec and metadata. Little-endian.
std::string serialize_checkpoint(Model& model, const CheckpointMeta& meta);
LoadedCheckpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(Model& model, const CheckpointMeta& meta, const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

} // namespace mmnet

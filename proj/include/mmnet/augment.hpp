#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmnet/rng.hpp"
#include "mmnet/tensor.hpp"

namespace mmnet::data {

struct NormProfile {
    std::string name;
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};

    void validate() const;
    nlohmann::json to_json() const;
    static NormProfile from_json(const nlohmann::json& j);
};

NormProfile imagenet_profile();

struct AugmentPolicy {
    NormProfile profile;
    double hflip_prob = 0.5;
    double rotation_max_deg = 15.0;
    double brightness_delta_max = 0.1;
    bool hflip_enabled = true;
    bool rotation_enabled = true;
    bool brightness_enabled = true;

    // Probabilities in [0,1], rotation in [0,30] degrees, brightness in [0,0.5].
    void validate() const;
    bool any_enabled() const noexcept { return hflip_enabled || rotation_enabled || brightness_enabled; }
};

struct Sample {
    std::string id;
    Tensor image; // (3,H,W), values in [0,1]
    int label = 0; // 0 ungradable, 1 gradable
};

struct Dataset {
    std::vector<Sample> samples;
    std::string split;

    std::size_t size() const noexcept { return samples.size(); }
    // {label-0 count, label-1 count}
    std::array<std::size_t, 2> class_counts() const;
    // Square extent shared by every image; throws DataError otherwise.
    std::size_t image_size() const;
    // Labels in {0,1}, ids unique, images (3,S,S) within [0,1].
    void validate() const;
};

// Per-channel mean/std over every pixel of `train`.
NormProfile dataset_profile(const Dataset& train);

// Augment profile ids: "imagenet" / "dataset" (light flip, rotation and
// brightness jitter) and "imagenet-plain" / "dataset-plain" (no transforms).
// "dataset" statistics come from `train`.
AugmentPolicy resolve_policy(const std::string& id, const Dataset& train);
// Normalization part only; "dataset" requires `train` or stored statistics.
bool is_known_profile(const std::string& id);

// out[c] = (in[c] - mean[c]) / std[c]
Tensor normalize(const Tensor& image, const NormProfile& profile);
Tensor denormalize(const Tensor& image, const NormProfile& profile);

Tensor hflip(const Tensor& image);
// Nearest-neighbour rotation about the image centre with zero fill.
Tensor rotate(const Tensor& image, double degrees);
Tensor adjust_brightness(const Tensor& image, double delta);

// hflip(p) -> rotate(U(-max,max)) -> brightness(U(-d,d)), output clamped to
// [0,1]. Three draws are always taken so the stream layout is fixed.
Tensor augment_sample(const Tensor& image, const AugmentPolicy& policy, Rng& rng);

// Stacks (3,H,W) images into (N,3,H,W).
Tensor stack(const std::vector<const Tensor*>& images);

// PPM (P6, maxval 255) decode/encode. Decoded values are scaled to [0,1].
Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const Tensor& image, const std::filesystem::path& path);
// Bilinear, half-pixel centres.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

// labels CSV header `id,label`; images at <image_dir>/<id>.ppm, resized to
// image_size x image_size.
Dataset load_dataset(const std::filesystem::path& image_dir, const std::filesystem::path& labels_csv,
                     std::size_t image_size = 224);
// Writes labels.csv and <id>.ppm files into `dir`.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

// Crude fundus-like images. Label 1: bright disc, optic disc and vessels.
// Label 0: the same base degraded by heavy blur, glare or an occlusion band.
// round(n * balance) samples (clamped to [1, n-1]) carry label 0.
Dataset gen_synthetic(std::size_t n, double balance, std::uint64_t seed, std::size_t image_size = 224);

} // namespace mmnet::data

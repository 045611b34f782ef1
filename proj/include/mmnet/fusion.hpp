#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "mmnet/augment.hpp"
#include "mmnet/model.hpp"

namespace mmnet::fusion {

using Probs = std::vector<double>;

// Componentwise mean. Every member must be a probability vector (sum 1 within 1e-5).
Probs fuse_average(const std::vector<Probs>& members);
// Componentwise max, renormalized to sum 1. All-zero maxima are an error.
Probs fuse_max(const std::vector<Probs>& members);
// The single member whose top probability is highest (ties: lower member index).
Probs argmax_confidence(const std::vector<Probs>& members);

// Index of the largest entry; ties resolve to the lower index.
std::size_t argmax_class(const Probs& p);

enum class FusionMode { average, max, argmax_confidence };
// What is combined: softmax outputs, raw logits (softmaxed after fusion), or
// one-hot hard votes.
enum class FuseOn { probs, logits, labels };

FusionMode parse_mode(const std::string& s);
FuseOn parse_fuse_on(const std::string& s);
std::string to_string(FusionMode m);
std::string to_string(FuseOn f);

// Combines one row per member under `mode`, applying the fuse_on reading.
// `member_logits` rows are raw logits.
Probs fuse(const std::vector<Probs>& member_logits, FusionMode mode, FuseOn on);

struct EnsembleMember {
    std::filesystem::path checkpoint;
    std::string profile;
};

struct EnsembleSpec {
    std::vector<EnsembleMember> members;
    FusionMode mode = FusionMode::average;
    FuseOn fuse_on = FuseOn::probs;

    void validate() const;
    std::string to_text() const;
};

// Lines `member=<path>,<profile>`, `mode=...`, `fuse_on=...`; '#' comments.
// Relative member paths resolve against `base_dir`.
EnsembleSpec parse_ensemble_spec(const std::string& text, const std::filesystem::path& base_dir = {});
EnsembleSpec load_ensemble_spec(const std::filesystem::path& path);

// Widths of the canonical ensemble: two lightweight members and one medium one.
std::vector<double> canonical_widths();

// Normalization for profile `id` applied to a checkpoint: "imagenet*" uses the
// fixed constants, "dataset*" the statistics stored at training time.
data::NormProfile checkpoint_profile(const std::string& id, const CheckpointMeta& meta);

struct LoadedMember {
    Model model;
    data::NormProfile profile;
};

// Loads every checkpoint and resolves its normalization profile. "dataset"
// profiles come from the statistics stored in the checkpoint. Failures name
// the member index. All members must share num_classes and input size.
std::vector<LoadedMember> load_members(const EnsembleSpec& spec);

struct FusedPrediction {
    std::vector<Probs> member_probs;
    Probs fused;
    std::size_t predicted = 0;
    double score = 0.0; // fused probability of class 1
};

// Per image: normalize with each member's profile -> infer -> fuse.
// parallel runs members on separate threads; output is identical.
// member_seconds, when given, receives each member's inference wall time.
std::vector<FusedPrediction> ensemble_predict(const std::vector<LoadedMember>& members, FusionMode mode,
                                              FuseOn on, const data::Dataset& images, bool parallel = false,
                                              std::size_t batch_size = 16,
                                              std::vector<double>* member_seconds = nullptr);

// header `id,score,pred,member0,...`; scores with 6 fractional digits.
std::string predictions_csv(const data::Dataset& images, const std::vector<FusedPrediction>& preds);

} // namespace mmnet::fusion

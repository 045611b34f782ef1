#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mmnet/augment.hpp"
#include "mmnet/metrics.hpp"
#include "mmnet/model.hpp"
#include "mmnet/nn.hpp"
#include "mmnet/tensor.hpp"

namespace mmnet::train {

// Row-wise softmax of (N,K) logits with max subtraction.
Tensor softmax(const Tensor& logits);

struct LossResult {
    double loss = 0.0;
    Tensor grad; // (softmax - onehot) / N
};

// Mean negative log-likelihood. Throws DataError for labels outside [0,K).
LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi t / T))
double cosine_lr(double t, double T, double lr_max, double lr_min);

// ---------------------------------------------------------------------------
// AdamP

struct AdamPHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // -infinity disables the projection.
    double delta = 0.1;
    double wd_ratio = 0.1;
};

struct AdamPSlot {
    std::vector<double> m;
    std::vector<double> v;
};

struct AdamPState {
    AdamPHyper hyper;
    std::size_t step = 0;
    std::vector<AdamPSlot> slots; // parallel to the parameter list

    explicit AdamPState(AdamPHyper h = {}) : hyper(h) {}
};

enum class ProjectionView { none, channel, layer };

// Per-parameter record of one step, for inspection in tests.
struct AdamPTrace {
    ProjectionView view = ProjectionView::none;
    double decay_factor = 1.0;      // 1 - lr * wd * (wd_ratio if projected)
    std::vector<double> direction;  // m_hat-style step direction after projection
    double step_size = 0.0;         // lr / (1 - beta1^t)
};

// One optimizer step over `params` using their accumulated grads.
// Moments are kept in double; each weight is updated as
//   w <- w * (1 - lr * wd * ratio) - (lr / bc1) * direction
// where direction = m / (sqrt(v) / sqrt(bc2) + eps), projected for rank > 1
// tensors whose |cos(w, g)| falls below delta / sqrt(view width), checking the
// per-output-channel view first and the whole-tensor view second. Parameters
// with decay == false get no weight decay.
void adamp_step(AdamPState& state, const std::vector<nn::Parameter*>& params, double lr,
                double weight_decay, std::vector<AdamPTrace>* trace = nullptr);

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
    std::size_t batch_size = 8;
    double lr_max = 1e-5;
    double lr_min_ratio = 0.01;
    double weight_decay = 0.005;
    double dropout = 0.01;
    std::size_t epochs = 500;
    double width = 1.0;
    metrics::SelectionMetric metric = metrics::SelectionMetric::auc;
    std::string augment_profile = "imagenet";
    std::uint64_t seed = 0;

    double lr_min() const noexcept { return lr_max * lr_min_ratio; }

    // Sanity bounds always apply; the configuration grid applies unless
    // allow_off_grid is set.
    void validate(bool allow_off_grid) const;
    // Flat key=value text, one key per line, fixed key order.
    std::string to_text() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);

    ModelSpec model_spec(std::size_t image_size) const;
};

// Parses key=value lines (blank lines and '#' comments skipped). Every key must
// appear at most once; unknown keys and bad values are reported with their
// line number.
TrainConfig parse_train_config(const std::string& text, bool allow_off_grid = false);
TrainConfig load_train_config(const std::filesystem::path& path, bool allow_off_grid = false);

// ---------------------------------------------------------------------------
// Epoch loop

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    double train_accuracy = 0.0;
    metrics::MetricsReport val;
};

struct TrainHistory {
    metrics::SelectionMetric metric = metrics::SelectionMetric::auc;
    std::vector<EpochRecord> epochs;

    // Index maximizing the selection metric; ties go to the earliest epoch.
    std::size_t best_epoch() const;
    std::string to_csv() const;
};

// argmax with ties resolved to the lowest index.
std::size_t argmax_first(const std::vector<double>& values);

struct FitResult {
    TrainHistory history;
    std::size_t best_epoch = 0;
    std::string best_checkpoint; // serialized checkpoint bytes
};

struct FitOptions {
    // Called after every epoch (progress reporting).
    std::function<void(const EpochRecord&)> on_epoch;
    std::size_t eval_batch = 16;
};

// shuffle(seed, epoch) -> batches (a trailing singleton is merged into the
// previous batch) -> augment -> normalize -> forward -> cross entropy ->
// backward -> AdamP with cosine_lr(epoch) -> validation report. The model
// is left holding the final-epoch weights; the best epoch's checkpoint is
// returned as bytes with `meta` plus the resolved profile and config.
FitResult fit(const TrainConfig& config, Model& model, const data::Dataset& train_set,
              const data::Dataset& val_set, const data::AugmentPolicy& policy,
              const CheckpointMeta& meta, const FitOptions& options = {});

// Softmax probabilities (N,K) of the normalized dataset images.
Tensor predict_probs(const Model& model, const data::Dataset& dataset, const data::NormProfile& profile,
                     std::size_t batch_size = 16);

// Column of class-1 probabilities.
std::vector<double> positive_scores(const Tensor& probs);
std::vector<int> labels_of(const data::Dataset& dataset);

} // namespace mmnet::train

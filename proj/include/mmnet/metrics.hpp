#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mmnet::metrics {

// Positive-class scores (class 1 = gradable) paired with {0,1} labels.
struct ScoredLabels {
    std::vector<double> scores;
    std::vector<int> labels;

    std::size_t size() const noexcept { return scores.size(); }
    std::size_t positives() const;
    std::size_t negatives() const;
    // Throws DataError on length mismatch, empty input, or labels outside {0,1}.
    void validate() const;
};

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double threshold = 0.5;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
};

// Predicts class 1 iff score >= threshold.
ConfusionCounts confusion(const ScoredLabels& scored, double threshold = 0.5);

// Each rate throws NumericError when its denominator is zero.
double accuracy(const ConfusionCounts& c);
double sensitivity(const ConfusionCounts& c);
double specificity(const ConfusionCounts& c);

struct BinaryRates {
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};
BinaryRates binary_rates(const ConfusionCounts& c);

// Mann-Whitney: (concordant + 0.5 * tied) / (P * N). Needs both classes.
double auroc(const ScoredLabels& scored);
// Average precision over descending unique thresholds: sum (R_k - R_{k-1}) * P_k.
double auprc(const ScoredLabels& scored);

enum class SelectionMetric { acc, auc, average };

SelectionMetric parse_selection_metric(const std::string& name);
std::string to_string(SelectionMetric m);

struct MetricsReport {
    double accuracy = 0.0;
    double auroc = 0.0;
    double auprc = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    SelectionMetric metric_kind = SelectionMetric::auc;
    double metric_value = 0.0;
    ConfusionCounts counts;
    std::optional<double> ranking_score;
};

// "average" is (accuracy + auroc) / 2.
double selection_value(const MetricsReport& r, SelectionMetric kind);

MetricsReport evaluate(const ScoredLabels& scored, SelectionMetric kind, double threshold = 0.5);

// Weighted mean of named report metrics (accuracy, auroc, auprc,
// sensitivity, specificity). Weights must be non-negative with a positive sum.
double ranking_score(const MetricsReport& report, const std::map<std::string, double>& weights);
// Parses "auroc=0.5,auprc=0.5".
std::map<std::string, double> parse_weights(const std::string& text);

// Flat key=value text, shortest round-trip decimal for reals.
std::string format_report(const MetricsReport& report);

} // namespace mmnet::metrics

#include "mmnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "mmnet/error.hpp"

namespace mmnet::metrics {

std::size_t ScoredLabels::positives() const
{
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::size_t ScoredLabels::negatives() const
{
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 0));
}

void ScoredLabels::validate() const
{
    if (scores.size() != labels.size())
        throw DataError("metrics: " + std::to_string(scores.size()) + " scores but " +
                        std::to_string(labels.size()) + " labels");
    if (scores.empty())
        throw DataError("metrics: no samples");
    for (int l : labels)
        if (l != 0 && l != 1)
            throw DataError("metrics: label " + std::to_string(l) + " is not 0 or 1");
    for (double s : scores)
        if (!std::isfinite(s))
            throw NumericError("metrics: non-finite score");
}

ConfusionCounts confusion(const ScoredLabels& scored, double threshold)
{
    scored.validate();
    ConfusionCounts c;
    c.threshold = threshold;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        const bool predicted = scored.scores[i] >= threshold;
        if (scored.labels[i] == 1)
            predicted ? ++c.tp : ++c.fn;
        else
            predicted ? ++c.fp : ++c.tn;
    }
    return c;
}

double accuracy(const ConfusionCounts& c)
{
    if (c.total() == 0)
        throw NumericError("accuracy undefined for zero samples");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double sensitivity(const ConfusionCounts& c)
{
    if (c.tp + c.fn == 0)
        throw NumericError("sensitivity undefined: no positive samples");
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double specificity(const ConfusionCounts& c)
{
    if (c.tn + c.fp == 0)
        throw NumericError("specificity undefined: no negative samples");
    return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

BinaryRates binary_rates(const ConfusionCounts& c)
{
    return {accuracy(c), sensitivity(c), specificity(c)};
}

namespace {

// Indices sorted by descending score; ties keep input order (irrelevant to
// the results, which only depend on tie groups).
std::vector<std::size_t> descending_order(const ScoredLabels& s)
{
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
    return idx;
}

} // namespace

double auroc(const ScoredLabels& scored)
{
    scored.validate();
    const std::size_t P = scored.positives(), N = scored.negatives();
    if (P == 0 || N == 0)
        throw NumericError("auroc undefined: need at least one positive and one negative");
    // Walk tie groups from the lowest score upward, tracking negatives below.
    auto order = descending_order(scored);
    std::reverse(order.begin(), order.end());
    double concordant = 0.0, tied = 0.0;
    std::size_t neg_below = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i, pos = 0, neg = 0;
        while (j < order.size() && scored.scores[order[j]] == scored.scores[order[i]]) {
            scored.labels[order[j]] == 1 ? ++pos : ++neg;
            ++j;
        }
        concordant += static_cast<double>(pos) * static_cast<double>(neg_below);
        tied += static_cast<double>(pos) * static_cast<double>(neg);
        neg_below += neg;
        i = j;
    }
    return (concordant + 0.5 * tied) / (static_cast<double>(P) * static_cast<double>(N));
}

double auprc(const ScoredLabels& scored)
{
    scored.validate();
    const std::size_t P = scored.positives();
    if (P == 0)
        throw NumericError("auprc undefined: no positive samples");
    const auto order = descending_order(scored);
    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scored.scores[order[j]] == scored.scores[order[i]]) {
            scored.labels[order[j]] == 1 ? ++tp : ++fp;
            ++j;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(P);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

SelectionMetric parse_selection_metric(const std::string& name)
{
    if (name == "acc")
        return SelectionMetric::acc;
    if (name == "auc")
        return SelectionMetric::auc;
    if (name == "average")
        return SelectionMetric::average;
    throw ConfigError("unknown selection metric '" + name + "' (expected acc, auc or average)");
}

std::string to_string(SelectionMetric m)
{
    switch (m) {
    case SelectionMetric::acc: return "acc";
    case SelectionMetric::auc: return "auc";
    case SelectionMetric::average: return "average";
    }
    return "auc";
}

double selection_value(const MetricsReport& r, SelectionMetric kind)
{
    switch (kind) {
    case SelectionMetric::acc: return r.accuracy;
    case SelectionMetric::auc: return r.auroc;
    case SelectionMetric::average: return (r.accuracy + r.auroc) / 2.0;
    }
    return r.auroc;
}

MetricsReport evaluate(const ScoredLabels& scored, SelectionMetric kind, double threshold)
{
    MetricsReport r;
    r.counts = confusion(scored, threshold);
    const auto rates = binary_rates(r.counts);
    r.accuracy = rates.accuracy;
    r.sensitivity = rates.sensitivity;
    r.specificity = rates.specificity;
    r.auroc = auroc(scored);
    r.auprc = auprc(scored);
    r.metric_kind = kind;
    r.metric_value = selection_value(r, kind);
    return r;
}

double ranking_score(const MetricsReport& report, const std::map<std::string, double>& weights)
{
    double total = 0.0, weighted = 0.0;
    for (const auto& [name, w] : weights) {
        if (!(w >= 0.0) || !std::isfinite(w))
            throw ConfigError("ranking weight for '" + name + "' must be a non-negative number");
        double v;
        if (name == "accuracy")
            v = report.accuracy;
        else if (name == "auroc")
            v = report.auroc;
        else if (name == "auprc")
            v = report.auprc;
        else if (name == "sensitivity")
            v = report.sensitivity;
        else if (name == "specificity")
            v = report.specificity;
        else
            throw ConfigError("ranking weight references unknown metric '" + name + "'");
        total += w;
        weighted += w * v;
    }
    if (!(total > 0.0))
        throw ConfigError("ranking weights must have a positive sum");
    return weighted / total;
}

std::map<std::string, double> parse_weights(const std::string& text)
{
    std::map<std::string, double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("ranking weight '" + item + "' is not name=value");
        const std::string name = item.substr(0, eq);
        try {
            std::size_t used = 0;
            const double w = std::stod(item.substr(eq + 1), &used);
            if (used != item.size() - eq - 1)
                throw std::invalid_argument("trailing characters");
            out[name] = w;
        } catch (const std::exception&) {
            throw ConfigError("ranking weight for '" + name + "' is not a number");
        }
    }
    if (out.empty())
        throw ConfigError("no ranking weights given");
    return out;
}

std::string format_report(const MetricsReport& r)
{
    std::string out;
    out += fmt::format("# positive_class=1 (gradable); predicted positive iff score >= {}\n",
                       r.counts.threshold);
    out += fmt::format("accuracy={}\n", r.accuracy);
    out += fmt::format("auroc={}\n", r.auroc);
    out += fmt::format("auprc={}\n", r.auprc);
    out += fmt::format("sensitivity={}\n", r.sensitivity);
    out += fmt::format("specificity={}\n", r.specificity);
    out += fmt::format("metric_kind={}\n", to_string(r.metric_kind));
    out += fmt::format("metric_value={}\n", r.metric_value);
    out += fmt::format("threshold={}\n", r.counts.threshold);
    out += fmt::format("tp={}\nfp={}\ntn={}\nfn={}\n", r.counts.tp, r.counts.fp, r.counts.tn, r.counts.fn);
    if (r.ranking_score)
        out += fmt::format("ranking_score={}\n", *r.ranking_score);
    return out;
}

} // namespace mmnet::metrics

#include "mmnet/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "mmnet/error.hpp"

namespace mmnet::train {

Tensor softmax(const Tensor& logits)
{
    if (logits.rank() != 2)
        throw ShapeError("softmax expects (N,K) logits, got " + logits.shape().str());
    const std::size_t N = logits.shape()[0], K = logits.shape()[1];
    Tensor out(logits.shape());
    std::vector<double> e(K);
    for (std::size_t i = 0; i < N; ++i) {
        const float* row = logits.ptr() + i * K;
        const double mx = *std::max_element(row, row + K);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k)
            z += (e[k] = std::exp(static_cast<double>(row[k]) - mx));
        for (std::size_t k = 0; k < K; ++k)
            out[i * K + k] = static_cast<float>(e[k] / z);
    }
    return out;
}

LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels)
{
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy expects (N,K) logits, got " + logits.shape().str());
    const std::size_t N = logits.shape()[0], K = logits.shape()[1];
    if (labels.size() != N)
        throw ShapeError(fmt::format("cross_entropy: {} labels for {} rows", labels.size(), N));
    LossResult r;
    r.grad = Tensor(logits.shape());
    std::vector<double> e(K);
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= K)
            throw DataError(fmt::format("label {} at row {} is outside [0,{})", labels[i], i, K));
        const float* row = logits.ptr() + i * K;
        const double mx = *std::max_element(row, row + K);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k)
            z += (e[k] = std::exp(static_cast<double>(row[k]) - mx));
        const auto y = static_cast<std::size_t>(labels[i]);
        total += std::log(z) - (static_cast<double>(row[y]) - mx);
        for (std::size_t k = 0; k < K; ++k)
            r.grad[i * K + k] =
                static_cast<float>((e[k] / z - (k == y ? 1.0 : 0.0)) / static_cast<double>(N));
    }
    r.loss = total / static_cast<double>(N);
    return r;
}

double cosine_lr(double t, double T, double lr_max, double lr_min)
{
    if (!(T >= 1.0))
        throw ConfigError("cosine schedule needs T >= 1");
    if (!(t >= 0.0 && t <= T))
        throw ConfigError(fmt::format("cosine schedule step {} outside [0,{}]", t, T));
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t / T));
}

// ---------------------------------------------------------------------------
// AdamP

namespace {

// |cos| between rows of x and y viewed as (rows, width).
double max_abs_cosine(const float* x, const float* y, std::size_t rows, std::size_t width, double eps)
{
    double worst = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0, xx = 0.0, yy = 0.0;
        for (std::size_t i = r * width; i < (r + 1) * width; ++i) {
            dot += static_cast<double>(x[i]) * y[i];
            xx += static_cast<double>(x[i]) * x[i];
            yy += static_cast<double>(y[i]) * y[i];
        }
        worst = std::max(worst, std::abs(dot) / std::sqrt(std::max(xx * yy, eps * eps)));
    }
    return worst;
}

// direction_row -= w_hat * <w_hat, direction_row>, w_hat = w_row / (|w_row| + eps)
void project_rows(const float* w, std::vector<double>& dir, std::size_t rows, std::size_t width, double eps)
{
    for (std::size_t r = 0; r < rows; ++r) {
        double nn = 0.0;
        for (std::size_t i = r * width; i < (r + 1) * width; ++i)
            nn += static_cast<double>(w[i]) * w[i];
        const double scale = 1.0 / (std::sqrt(nn) + eps);
        double dot = 0.0;
        for (std::size_t i = r * width; i < (r + 1) * width; ++i)
            dot += w[i] * scale * dir[i];
        for (std::size_t i = r * width; i < (r + 1) * width; ++i)
            dir[i] -= w[i] * scale * dot;
    }
}

} // namespace

void adamp_step(AdamPState& state, const std::vector<nn::Parameter*>& params, double lr, double weight_decay,
                std::vector<AdamPTrace>* trace)
{
    if (!(lr > 0.0) || !std::isfinite(lr))
        throw ConfigError("adamp_step: learning rate must be positive");
    if (!(weight_decay >= 0.0))
        throw ConfigError("adamp_step: weight decay must be non-negative");
    const AdamPHyper& h = state.hyper;
    if (state.slots.empty()) {
        state.slots.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.slots[i].m.assign(params[i]->value.numel(), 0.0);
            state.slots[i].v.assign(params[i]->value.numel(), 0.0);
        }
    }
    if (state.slots.size() != params.size())
        throw ShapeError(fmt::format("adamp_step: state tracks {} tensors, got {}", state.slots.size(),
                                     params.size()));
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(h.beta1, t);
    const double bc2 = 1.0 - std::pow(h.beta2, t);
    const double step_size = lr / bc1;
    const double sqrt_bc2 = std::sqrt(bc2);
    if (trace)
        trace->assign(params.size(), {});

    std::vector<double> dir;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        nn::Parameter& p = *params[pi];
        AdamPSlot& s = state.slots[pi];
        const std::size_t n = p.value.numel();
        if (p.grad.shape() != p.value.shape() || s.m.size() != n)
            throw ShapeError(fmt::format("adamp_step: tensor {} has value {} and grad {}", pi,
                                         p.value.shape().str(), p.grad.shape().str()));
        dir.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double g = p.grad[i];
            s.m[i] = h.beta1 * s.m[i] + (1.0 - h.beta1) * g;
            s.v[i] = h.beta2 * s.v[i] + (1.0 - h.beta2) * g * g;
            dir[i] = s.m[i] / (std::sqrt(s.v[i]) / sqrt_bc2 + h.eps);
        }

        ProjectionView view = ProjectionView::none;
        double ratio = 1.0;
        if (p.value.rank() > 1 && h.delta > -std::numeric_limits<double>::infinity()) {
            const std::size_t rows = p.value.shape()[0];
            const std::size_t width = n / rows;
            if (max_abs_cosine(p.grad.ptr(), p.value.ptr(), rows, width, h.eps) <
                h.delta / std::sqrt(static_cast<double>(width))) {
                project_rows(p.value.ptr(), dir, rows, width, h.eps);
                view = ProjectionView::channel;
            } else if (max_abs_cosine(p.grad.ptr(), p.value.ptr(), 1, n, h.eps) <
                       h.delta / std::sqrt(static_cast<double>(n))) {
                project_rows(p.value.ptr(), dir, 1, n, h.eps);
                view = ProjectionView::layer;
            }
            if (view != ProjectionView::none)
                ratio = h.wd_ratio;
        }

        const double decay = p.decay ? 1.0 - lr * weight_decay * ratio : 1.0;
        for (std::size_t i = 0; i < n; ++i)
            p.value[i] = static_cast<float>(static_cast<double>(p.value[i]) * decay - step_size * dir[i]);
        if (trace)
            (*trace)[pi] = {view, decay, dir, step_size};
    }
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

constexpr std::size_t grid_batch[] = {8, 16, 32};
constexpr double grid_lr[] = {1e-3, 1e-4, 1e-5, 1e-6};
constexpr double grid_width[] = {1.0, 3.0};

bool near(double a, double b)
{
    return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b));
}

template <class T, std::size_t N>
bool in_grid(const T (&grid)[N], T value)
{
    return std::any_of(std::begin(grid), std::end(grid), [&](T g) {
        if constexpr (std::is_floating_point_v<T>)
            return near(g, value);
        else
            return g == value;
    });
}

double parse_real(const std::string& s)
{
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
        throw ConfigError("'" + s + "' is not a finite number");
    return v;
}

std::uint64_t parse_uint(const std::string& s)
{
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ConfigError("'" + s + "' is not a non-negative integer");
    return v;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Checks one field. Returns an empty string when valid.
std::string field_problem(const TrainConfig& c, const std::string& key, bool allow_off_grid)
{
    if (key == "batch_size") {
        if (c.batch_size < 2)
            return "batch_size must be at least 2 (batch statistics need two samples)";
        if (!allow_off_grid && !in_grid(grid_batch, c.batch_size))
            return fmt::format("batch_size {} is not in {{8,16,32}}", c.batch_size);
    } else if (key == "lr_max") {
        if (!(c.lr_max > 0.0))
            return "lr_max must be positive";
        if (!allow_off_grid && !in_grid(grid_lr, c.lr_max))
            return fmt::format("lr_max {} is not in {{1e-3,1e-4,1e-5,1e-6}}", c.lr_max);
    } else if (key == "lr_min_ratio") {
        if (!(c.lr_min_ratio >= 0.0 && c.lr_min_ratio <= 1.0))
            return "lr_min_ratio must lie in [0,1]";
        if (!allow_off_grid && !near(c.lr_min_ratio, 0.01))
            return fmt::format("lr_min_ratio {} differs from 0.01", c.lr_min_ratio);
    } else if (key == "weight_decay") {
        if (!(c.weight_decay >= 0.0))
            return "weight_decay must be non-negative";
        if (!allow_off_grid && !near(c.weight_decay, 0.005))
            return fmt::format("weight_decay {} differs from 0.005", c.weight_decay);
    } else if (key == "dropout") {
        if (!(c.dropout >= 0.0 && c.dropout <= 0.10 + 1e-12))
            return fmt::format("dropout {} is outside [0,0.10]", c.dropout);
    } else if (key == "epochs") {
        if (c.epochs < 1)
            return "epochs must be at least 1";
        if (!allow_off_grid && c.epochs != 500)
            return fmt::format("epochs {} differs from 500", c.epochs);
    } else if (key == "width") {
        if (!(c.width > 0.0 && c.width <= 8.0))
            return "width must lie in (0,8]";
        if (!allow_off_grid && !in_grid(grid_width, c.width))
            return fmt::format("width {} is not in {{1.0,3.0}}", c.width);
    } else if (key == "augment_profile") {
        if (!data::is_known_profile(c.augment_profile))
            return "unknown augment_profile '" + c.augment_profile + "'";
    }
    return {};
}

const std::vector<std::string>& config_keys()
{
    static const std::vector<std::string> keys{"batch_size", "lr_max", "lr_min_ratio", "weight_decay",
                                               "dropout",    "epochs", "width",        "metric",
                                               "augment_profile", "seed"};
    return keys;
}

} // namespace

void TrainConfig::validate(bool allow_off_grid) const
{
    for (const auto& key : config_keys())
        if (auto problem = field_problem(*this, key, allow_off_grid); !problem.empty())
            throw ConfigError(problem);
}

std::string TrainConfig::to_text() const
{
    return fmt::format("batch_size={}\nlr_max={}\nlr_min_ratio={}\nweight_decay={}\ndropout={}\n"
                       "epochs={}\nwidth={}\nmetric={}\naugment_profile={}\nseed={}\n",
                       batch_size, lr_max, lr_min_ratio, weight_decay, dropout, epochs, width,
                       metrics::to_string(metric), augment_profile, seed);
}

nlohmann::json TrainConfig::to_json() const
{
    return {{"batch_size", batch_size},   {"lr_max", lr_max},
            {"lr_min_ratio", lr_min_ratio}, {"weight_decay", weight_decay},
            {"dropout", dropout},         {"epochs", epochs},
            {"width", width},             {"metric", metrics::to_string(metric)},
            {"augment_profile", augment_profile}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j)
{
    TrainConfig c;
    try {
        c.batch_size = j.at("batch_size").get<std::size_t>();
        c.lr_max = j.at("lr_max").get<double>();
        c.lr_min_ratio = j.at("lr_min_ratio").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.dropout = j.at("dropout").get<double>();
        c.epochs = j.at("epochs").get<std::size_t>();
        c.width = j.at("width").get<double>();
        c.metric = metrics::parse_selection_metric(j.at("metric").get<std::string>());
        c.augment_profile = j.at("augment_profile").get<std::string>();
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed training config: ") + e.what());
    }
    return c;
}

ModelSpec TrainConfig::model_spec(std::size_t image_size) const
{
    ModelSpec spec;
    spec.width_multiplier = width;
    spec.dropout = dropout;
    spec.input_size = image_size;
    spec.validate();
    return spec;
}

TrainConfig parse_train_config(const std::string& text, bool allow_off_grid)
{
    TrainConfig c;
    std::map<std::string, std::size_t> seen;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = trim(raw);
        if (line.empty() || line.front() == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(fmt::format("line {}: expected key=value, got '{}'", lineno, line));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto& keys = config_keys();
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
            throw ConfigError(fmt::format("line {}: unknown key '{}'", lineno, key));
        if (auto [it, fresh] = seen.emplace(key, lineno); !fresh)
            throw ConfigError(fmt::format("line {}: key '{}' already set on line {}", lineno, key, it->second));
        try {
            if (key == "batch_size")
                c.batch_size = parse_uint(value);
            else if (key == "lr_max")
                c.lr_max = parse_real(value);
            else if (key == "lr_min_ratio")
                c.lr_min_ratio = parse_real(value);
            else if (key == "weight_decay")
                c.weight_decay = parse_real(value);
            else if (key == "dropout")
                c.dropout = parse_real(value);
            else if (key == "epochs")
                c.epochs = parse_uint(value);
            else if (key == "width")
                c.width = parse_real(value);
            else if (key == "metric")
                c.metric = metrics::parse_selection_metric(value);
            else if (key == "augment_profile")
                c.augment_profile = value;
            else
                c.seed = parse_uint(value);
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("line {}: {}: {}", lineno, key, e.what()));
        }
        if (auto problem = field_problem(c, key, allow_off_grid); !problem.empty())
            throw ConfigError(fmt::format("line {}: {}", lineno, problem));
    }
    c.validate(allow_off_grid);
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path, bool allow_off_grid)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw ConfigError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    try {
        return parse_train_config(ss.str(), allow_off_grid);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// History

std::size_t argmax_first(const std::vector<double>& values)
{
    if (values.empty())
        throw UsageError("argmax of an empty sequence");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best])
            best = i;
    return best;
}

std::size_t TrainHistory::best_epoch() const
{
    std::vector<double> v;
    v.reserve(epochs.size());
    for (const auto& e : epochs)
        v.push_back(metrics::selection_value(e.val, metric));
    return argmax_first(v);
}

std::string TrainHistory::to_csv() const
{
    std::string out = "epoch,loss,lr,train_accuracy,val_accuracy,val_auroc,val_auprc,val_sensitivity,"
                      "val_specificity,val_metric\n";
    for (const auto& e : epochs)
        out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", e.epoch, e.loss, e.lr, e.train_accuracy,
                           e.val.accuracy, e.val.auroc, e.val.auprc, e.val.sensitivity, e.val.specificity,
                           e.val.metric_value);
    return out;
}

// ---------------------------------------------------------------------------
// Epoch loop

std::vector<int> labels_of(const data::Dataset& dataset)
{
    std::vector<int> out;
    out.reserve(dataset.size());
    for (const auto& s : dataset.samples)
        out.push_back(s.label);
    return out;
}

std::vector<double> positive_scores(const Tensor& probs)
{
    if (probs.rank() != 2 || probs.shape()[1] < 2)
        throw ShapeError("positive_scores expects (N,K>=2) probabilities, got " + probs.shape().str());
    const std::size_t N = probs.shape()[0], K = probs.shape()[1];
    std::vector<double> out(N);
    for (std::size_t i = 0; i < N; ++i)
        out[i] = probs[i * K + 1];
    return out;
}

Tensor predict_probs(const Model& model, const data::Dataset& dataset, const data::NormProfile& profile,
                     std::size_t batch_size)
{
    if (dataset.samples.empty())
        throw DataError("empty dataset");
    batch_size = std::max<std::size_t>(batch_size, 1);
    const std::size_t N = dataset.size(), K = model.spec().num_classes;
    Tensor out(Shape{N, K});
    for (std::size_t start = 0; start < N; start += batch_size) {
        const std::size_t end = std::min(N, start + batch_size);
        std::vector<Tensor> normed;
        normed.reserve(end - start);
        for (std::size_t i = start; i < end; ++i)
            normed.push_back(data::normalize(dataset.samples[i].image, profile));
        std::vector<const Tensor*> ptrs;
        for (const auto& t : normed)
            ptrs.push_back(&t);
        const Tensor probs = softmax(model.infer(data::stack(ptrs)));
        std::copy_n(probs.ptr(), probs.numel(), out.ptr() + start * K);
    }
    return out;
}

namespace {

void check_dataset(const data::Dataset& ds, const Model& model, const char* which)
{
    if (ds.samples.empty())
        throw DataError(std::string(which) + ": empty dataset");
    ds.validate();
    const std::size_t size = ds.image_size();
    if (size != model.spec().input_size)
        throw ShapeError(fmt::format("{}: images are {}x{}, model expects {}x{}", which, size, size,
                                     model.spec().input_size, model.spec().input_size));
    for (const auto& s : ds.samples)
        if (static_cast<std::size_t>(s.label) >= model.spec().num_classes)
            throw DataError(fmt::format("{}: label {} of {} exceeds num_classes", which, s.label, s.id));
}

// [start, end) batch bounds; a trailing singleton joins the previous batch.
std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t batch)
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t s = 0; s < n; s += batch)
        out.emplace_back(s, std::min(n, s + batch));
    if (out.size() > 1 && out.back().second - out.back().first == 1) {
        out.pop_back();
        out.back().second = n;
    }
    return out;
}

} // namespace

FitResult fit(const TrainConfig& config, Model& model, const data::Dataset& train_set,
              const data::Dataset& val_set, const data::AugmentPolicy& policy, const CheckpointMeta& meta,
              const FitOptions& options)
{
    config.validate(true);
    policy.validate();
    check_dataset(train_set, model, "training set");
    check_dataset(val_set, model, "validation set");
    if (train_set.size() < 2)
        throw DataError("training set needs at least two samples");
    const auto val_labels = labels_of(val_set);
    {
        const auto counts = val_set.class_counts();
        if (counts[0] == 0 || counts[1] == 0)
            throw DataError("validation set must contain both classes");
    }

    const Rng root(config.seed);
    const auto params_named = model.parameters();
    std::vector<nn::Parameter*> params;
    for (const auto& np : params_named)
        params.push_back(np.param);
    AdamPState opt;

    FitResult result;
    result.history.metric = config.metric;
    double best_value = -std::numeric_limits<double>::infinity();

    const auto train_labels = labels_of(train_set);
    const std::size_t N = train_set.size();
    const auto bounds = batch_bounds(N, config.batch_size);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = cosine_lr(static_cast<double>(epoch), static_cast<double>(config.epochs),
                                    config.lr_max, config.lr_min());
        std::vector<std::size_t> order(N);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle = root.derive("shuffle", {epoch});
        for (std::size_t i = N - 1; i > 0; --i)
            std::swap(order[i], order[shuffle.below(i + 1)]);

        double loss_sum = 0.0;
        for (std::size_t b = 0; b < bounds.size(); ++b) {
            const auto [start, end] = bounds[b];
            std::vector<Tensor> images;
            std::vector<int> labels;
            images.reserve(end - start);
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t idx = order[k];
                Rng aug = root.derive("augment", {epoch, idx});
                images.push_back(data::normalize(
                    data::augment_sample(train_set.samples[idx].image, policy, aug), policy.profile));
                labels.push_back(train_labels[idx]);
            }
            std::vector<const Tensor*> ptrs;
            for (const auto& t : images)
                ptrs.push_back(&t);
            Rng drop = root.derive("dropout", {epoch, b});
            model.zero_grad();
            auto out = model.forward_train(data::stack(ptrs), drop);
            const LossResult ce = cross_entropy(out.logits, labels);
            if (!std::isfinite(ce.loss))
                throw NumericError(fmt::format("non-finite loss at epoch {} batch {} (lr {})", epoch, b, lr));
            model.backward(out.tape, ce.grad);
            adamp_step(opt, params, lr, config.weight_decay);
            loss_sum += ce.loss * static_cast<double>(end - start);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(N);
        rec.lr = lr;
        {
            const auto train_scores = positive_scores(predict_probs(model, train_set, policy.profile,
                                                                    options.eval_batch));
            rec.train_accuracy = metrics::accuracy(metrics::confusion({train_scores, train_labels}));
        }
        const auto val_scores = positive_scores(predict_probs(model, val_set, policy.profile, options.eval_batch));
        rec.val = metrics::evaluate({val_scores, val_labels}, config.metric);
        result.history.epochs.push_back(rec);

        if (rec.val.metric_value > best_value) {
            best_value = rec.val.metric_value;
            result.best_epoch = epoch;
            CheckpointMeta m = meta;
            m.rng_algorithm = std::string(Rng::algorithm);
            m.seed = config.seed;
            m.extra["profile"] = policy.profile.to_json();
            m.extra["augment_profile"] = config.augment_profile;
            m.extra["train_config"] = config.to_json();
            m.extra["epoch"] = epoch;
            result.best_checkpoint = serialize_checkpoint(model, m);
        }
        if (options.on_epoch)
            options.on_epoch(rec);
    }
    return result;
}

} // namespace mmnet::train

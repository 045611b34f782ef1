#include "cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "mmnet/augment.hpp"
#include "mmnet/error.hpp"
#include "mmnet/fusion.hpp"
#include "mmnet/metrics.hpp"
#include "mmnet/model.hpp"
#include "mmnet/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mmnet::cli {

namespace {

constexpr const char* tool_version = "0.1.0";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_file(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    if (!f)
        throw DataError("cannot read " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes)
{
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f)
        throw DataError("cannot write " + p.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f)
        throw DataError("failed writing " + p.string());
}

// Refuses a non-empty directory unless forced; creates it otherwise.
void prepare_out_dir(const fs::path& dir, bool force)
{
    if (dir.empty())
        throw UsageError("--out is required");
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir))
            throw UsageError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir) && !force)
            throw UsageError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
    }
    fs::create_directories(dir);
}

// Digest of a dataset directory: labels.csv plus every referenced image,
// in manifest order.
std::string dataset_digest(const fs::path& dir, const data::Dataset& ds)
{
    std::string acc = sha256_hex(read_file(dir / "labels.csv"));
    for (const auto& s : ds.samples)
        acc += s.id + ":" + sha256_hex(read_file(dir / (s.id + ".ppm")));
    return sha256_hex(acc);
}

data::Dataset load_dir(const fs::path& dir, std::size_t image_size)
{
    return data::load_dataset(dir, dir / "labels.csv", image_size);
}

double round6(double v)
{
    return std::stod(fmt::format("{:.6f}", v));
}

struct Manifest {
    std::string command;
    json config = json::object();
    json inputs = json::array();
    std::vector<std::string> outputs;
    json timings = json::object();
    std::uint64_t seed = 0;

    void write(const fs::path& dir) const
    {
        json outs = json::array();
        for (const auto& o : outputs)
            outs.push_back({{"path", o}, {"sha256", sha256_hex(read_file(dir / o))}});
        const std::string run_id =
            sha256_hex(command + config.dump() + inputs.dump() + std::to_string(seed)).substr(0, 16);
        json m = {{"run_id", run_id},   {"command", command}, {"tool_version", tool_version},
                  {"seed", seed},       {"rng", std::string(Rng::algorithm)},
                  {"config", config},   {"inputs", inputs},   {"outputs", outs},
                  {"timings_seconds", timings}};
        write_file(dir / "manifest.json", m.dump(2) + "\n");
    }
};

std::string timing_text(const json& timings)
{
    std::string out;
    for (const auto& [k, v] : timings.items())
        out += fmt::format("{}={}\n", k, v.get<double>());
    return out;
}

// ---------------------------------------------------------------------------
// commands

struct Globals {
    std::optional<std::uint64_t> seed;
    bool force = false;
    std::string out;
    bool verbose = false;
};

struct GensynthArgs {
    std::size_t n = 434;
    double balance = 205.0 / 434.0;
    std::size_t image_size = 224;
};

int cmd_gensynth(const Globals& g, const GensynthArgs& a, std::ostream& out)
{
    const auto t0 = Clock::now();
    const fs::path dir = g.out;
    prepare_out_dir(dir, g.force);
    const std::uint64_t seed = g.seed.value_or(0);
    const auto ds = data::gen_synthetic(a.n, a.balance, seed, a.image_size);
    data::write_dataset(ds, dir);
    const auto counts = ds.class_counts();
    Manifest m;
    m.command = "gensynth";
    m.seed = seed;
    m.config = {{"n", a.n}, {"balance", a.balance}, {"image_size", a.image_size}};
    m.outputs = {"labels.csv"};
    for (const auto& s : ds.samples)
        m.outputs.push_back(s.id + ".ppm");
    m.timings["total"] = seconds_since(t0);
    m.write(dir);
    out << fmt::format("wrote {} samples to {} (label 0: {}, label 1: {})\n", ds.size(), dir.string(), counts[0],
                       counts[1]);
    return exit_ok;
}

struct TrainArgs {
    std::string config;
    std::string data;
    std::string val;
    bool allow_off_grid = false;
    std::size_t image_size = 224;
};

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out, std::ostream& err)
{
    const auto t0 = Clock::now();
    auto config = train::load_train_config(a.config, a.allow_off_grid);
    if (g.seed)
        config.seed = *g.seed;
    const fs::path dir = g.out;
    prepare_out_dir(dir, g.force);

    const auto train_set = load_dir(a.data, a.image_size);
    const auto val_set = load_dir(a.val, a.image_size);
    const auto policy = data::resolve_policy(config.augment_profile, train_set);
    const ModelSpec spec = config.model_spec(a.image_size);
    Rng init = Rng(config.seed).derive("init");
    Model model = build_model(spec, init);

    CheckpointMeta meta;
    meta.config_digest = sha256_hex(config.to_text() + fmt::format("image_size={}\n", a.image_size));
    const double load_s = seconds_since(t0);

    train::FitOptions opts;
    if (g.verbose)
        opts.on_epoch = [&](const train::EpochRecord& r) {
            err << fmt::format("epoch {} loss={} lr={} train_acc={} val_{}={}\n", r.epoch, r.loss, r.lr,
                               r.train_accuracy, metrics::to_string(config.metric), r.val.metric_value);
        };
    const auto t_fit = Clock::now();
    const auto result = train::fit(config, model, train_set, val_set, policy, meta, opts);
    const double fit_s = seconds_since(t_fit);

    write_file(dir / "best.ckpt", result.best_checkpoint);
    write_file(dir / "history.csv", result.history.to_csv());
    write_file(dir / "config.txt", config.to_text());
    write_file(dir / "metrics.txt", metrics::format_report(result.history.epochs[result.best_epoch].val));

    Manifest m;
    m.command = "train";
    m.seed = config.seed;
    m.config = config.to_json();
    m.config["image_size"] = a.image_size;
    m.config["allow_off_grid"] = a.allow_off_grid;
    m.config["best_epoch"] = result.best_epoch;
    m.config["profile"] = policy.profile.to_json();
    m.inputs = json::array({{{"role", "config"}, {"path", a.config}, {"sha256", sha256_hex(read_file(a.config))}},
                            {{"role", "train"}, {"path", a.data}, {"sha256", dataset_digest(a.data, train_set)}},
                            {{"role", "val"}, {"path", a.val}, {"sha256", dataset_digest(a.val, val_set)}}});
    m.outputs = {"best.ckpt", "history.csv", "config.txt", "metrics.txt", "timing.txt"};
    m.timings = {{"load", load_s}, {"fit", fit_s}, {"total", seconds_since(t0)}};
    write_file(dir / "timing.txt", timing_text(m.timings));
    m.write(dir);
    const auto& best = result.history.epochs[result.best_epoch];
    out << fmt::format("best epoch {} of {}: val {}={}\n", result.best_epoch, config.epochs,
                       metrics::to_string(config.metric), best.val.metric_value);
    return exit_ok;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string profile;
    std::string metric;
    std::string rank_weights;
    std::size_t batch = 16;
};

metrics::SelectionMetric metric_for(const std::string& flag, const CheckpointMeta* meta)
{
    if (!flag.empty())
        return metrics::parse_selection_metric(flag);
    if (meta && meta->extra.contains("train_config"))
        return metrics::parse_selection_metric(meta->extra["train_config"].value("metric", "auc"));
    return metrics::SelectionMetric::auc;
}

// Scores are re-read from their 6-decimal CSV form so that re-scoring the
// emitted file reproduces metrics.txt exactly.
metrics::MetricsReport score_report(const std::vector<double>& scores, const std::vector<int>& labels,
                                    metrics::SelectionMetric kind, const std::string& rank_weights)
{
    std::vector<double> rounded;
    rounded.reserve(scores.size());
    for (double s : scores)
        rounded.push_back(round6(s));
    auto report = metrics::evaluate({rounded, labels}, kind);
    if (!rank_weights.empty())
        report.ranking_score = metrics::ranking_score(report, metrics::parse_weights(rank_weights));
    return report;
}

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out)
{
    const auto t0 = Clock::now();
    auto ck = load_checkpoint(a.checkpoint);
    const std::string profile_id =
        !a.profile.empty() ? a.profile : ck.meta.extra.value("augment_profile", std::string("imagenet"));
    const auto profile = fusion::checkpoint_profile(profile_id, ck.meta);
    const auto kind = metric_for(a.metric, &ck.meta);
    const fs::path dir = g.out;
    prepare_out_dir(dir, g.force);

    const auto ds = load_dir(a.data, ck.model.spec().input_size);
    for (const auto& s : ds.samples)
        if (static_cast<std::size_t>(s.label) >= ck.model.spec().num_classes)
            throw DataError(fmt::format("label {} of {} does not fit a {}-class checkpoint", s.label, s.id,
                                        ck.model.spec().num_classes));
    const auto t_inf = Clock::now();
    const Tensor probs = train::predict_probs(ck.model, ds, profile, a.batch);
    const double infer_s = seconds_since(t_inf);
    const auto scores = train::positive_scores(probs);
    const std::size_t K = ck.model.spec().num_classes;

    std::string csv = "id,score,pred\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::vector<double> row(probs.ptr() + i * K, probs.ptr() + (i + 1) * K);
        csv += fmt::format("{},{:.6f},{}\n", ds.samples[i].id, scores[i], fusion::argmax_class(row));
    }
    write_file(dir / "predictions.csv", csv);
    const auto report = score_report(scores, train::labels_of(ds), kind, a.rank_weights);
    write_file(dir / "metrics.txt", metrics::format_report(report));

    Manifest m;
    m.command = "eval";
    m.seed = ck.meta.seed;
    m.config = {{"profile", profile.to_json()}, {"metric", metrics::to_string(kind)}, {"batch", a.batch}};
    if (!a.rank_weights.empty())
        m.config["rank_weights"] = a.rank_weights;
    m.inputs = json::array(
        {{{"role", "checkpoint"}, {"path", a.checkpoint}, {"sha256", sha256_hex(read_file(a.checkpoint))}},
         {{"role", "data"}, {"path", a.data}, {"sha256", dataset_digest(a.data, ds)}}});
    m.outputs = {"predictions.csv", "metrics.txt", "timing.txt"};
    m.timings = {{"inference", infer_s},
                 {"per_image", infer_s / static_cast<double>(ds.size())},
                 {"total", seconds_since(t0)}};
    write_file(dir / "timing.txt", timing_text(m.timings));
    m.write(dir);
    out << metrics::format_report(report);
    return exit_ok;
}

struct FuseArgs {
    std::string ensemble;
    std::string data;
    std::string metric;
    std::string rank_weights;
    std::string mode;
    bool parallel = false;
    std::size_t batch = 16;
};

int cmd_fuse(const Globals& g, const FuseArgs& a, std::ostream& out)
{
    const auto t0 = Clock::now();
    auto spec = fusion::load_ensemble_spec(a.ensemble);
    if (!a.mode.empty())
        spec.mode = fusion::parse_mode(a.mode);
    const auto members = fusion::load_members(spec);
    const auto kind = metric_for(a.metric, nullptr);
    const fs::path dir = g.out;
    prepare_out_dir(dir, g.force);

    const auto ds = load_dir(a.data, members.front().model.spec().input_size);
    std::vector<double> member_s;
    const auto t_inf = Clock::now();
    const auto preds = fusion::ensemble_predict(members, spec.mode, spec.fuse_on, ds, a.parallel, a.batch, &member_s);
    const double infer_s = seconds_since(t_inf);
    const auto labels = train::labels_of(ds);

    write_file(dir / "predictions.csv", fusion::predictions_csv(ds, preds));
    std::vector<std::string> outputs{"predictions.csv"};
    std::vector<double> fused_scores;
    for (const auto& p : preds)
        fused_scores.push_back(p.score);
    for (std::size_t mi = 0; mi < members.size(); ++mi) {
        std::string csv = "id,score,pred\n";
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const auto& mp = preds[i].member_probs[mi];
            csv += fmt::format("{},{:.6f},{}\n", ds.samples[i].id, mp.size() > 1 ? mp[1] : mp[0],
                               fusion::argmax_class(mp));
        }
        const std::string name = fmt::format("member{}_predictions.csv", mi);
        write_file(dir / name, csv);
        outputs.push_back(name);
    }
    const auto report = score_report(fused_scores, labels, kind, a.rank_weights);
    write_file(dir / "metrics.txt", metrics::format_report(report));
    outputs.push_back("metrics.txt");

    const double n = static_cast<double>(ds.size());
    json timings = json::object();
    double member_total = 0.0;
    for (std::size_t mi = 0; mi < member_s.size(); ++mi) {
        timings[fmt::format("member{}_per_image", mi)] = member_s[mi] / n;
        member_total += member_s[mi];
    }
    // Sequential cost of the fused prediction: every member's forward plus the vote.
    timings["member_mean_per_image"] = member_total / static_cast<double>(member_s.size()) / n;
    timings["fused_per_image"] = a.parallel ? infer_s / n : std::max(infer_s, member_total) / n;
    timings["total"] = seconds_since(t0);
    write_file(dir / "timing.txt", timing_text(timings));
    outputs.push_back("timing.txt");

    Manifest m;
    m.command = "fuse";
    m.config = {{"mode", fusion::to_string(spec.mode)},
                {"fuse_on", fusion::to_string(spec.fuse_on)},
                {"metric", metrics::to_string(kind)},
                {"parallel", a.parallel}};
    json ins = json::array();
    ins.push_back({{"role", "ensemble"}, {"path", a.ensemble}, {"sha256", sha256_hex(read_file(a.ensemble))}});
    for (std::size_t mi = 0; mi < spec.members.size(); ++mi)
        ins.push_back({{"role", fmt::format("member{}", mi)},
                       {"path", spec.members[mi].checkpoint.string()},
                       {"profile", spec.members[mi].profile},
                       {"sha256", sha256_hex(read_file(spec.members[mi].checkpoint))}});
    ins.push_back({{"role", "data"}, {"path", a.data}, {"sha256", dataset_digest(a.data, ds)}});
    m.inputs = ins;
    m.outputs = outputs;
    m.timings = timings;
    m.write(dir);
    out << metrics::format_report(report);
    return exit_ok;
}

struct SweepArgs {
    std::string data;
    std::string val;
    std::string profile = "imagenet";
    std::size_t image_size = 224;
    std::optional<std::size_t> epochs;
    std::size_t limit = 0;
    bool dry_run = false;
};

int cmd_sweep(const Globals& g, const SweepArgs& a, std::ostream& out, std::ostream& err)
{
    const fs::path dir = g.out;
    prepare_out_dir(dir, g.force);
    std::vector<train::TrainConfig> grid;
    for (double width : {1.0, 3.0})
        for (std::size_t batch : {8, 16, 32})
            for (double lr : {1e-3, 1e-4, 1e-5, 1e-6})
                for (double dropout : {0.01, 0.02, 0.05})
                    for (auto metric : {metrics::SelectionMetric::acc, metrics::SelectionMetric::auc,
                                        metrics::SelectionMetric::average}) {
                        train::TrainConfig c;
                        c.width = width;
                        c.batch_size = batch;
                        c.lr_max = lr;
                        c.dropout = dropout;
                        c.metric = metric;
                        c.augment_profile = a.profile;
                        c.seed = g.seed.value_or(0);
                        if (a.epochs)
                            c.epochs = *a.epochs;
                        grid.push_back(c);
                    }
    const bool off_grid = a.epochs.has_value() && *a.epochs != 500;
    std::string index = "run,batch_size,lr_max,dropout,width,metric\n";
    const std::size_t count = a.limit ? std::min(a.limit, grid.size()) : grid.size();
    for (std::size_t i = 0; i < count; ++i) {
        const auto& c = grid[i];
        c.validate(off_grid);
        const std::string name = fmt::format("run_{:03d}", i);
        index += fmt::format("{},{},{},{},{},{}\n", name, c.batch_size, c.lr_max, c.dropout, c.width,
                             metrics::to_string(c.metric));
        fs::create_directories(dir / name);
        write_file(dir / name / "config.txt", c.to_text());
        if (a.dry_run)
            continue;
        Globals sub = g;
        sub.out = (dir / name / "run").string();
        TrainArgs t{(dir / name / "config.txt").string(), a.data, a.val, off_grid, a.image_size};
        std::ostringstream sink;
        const int rc = cmd_train(sub, t, sink, err);
        out << name << ": " << sink.str();
        if (rc != exit_ok)
            return rc;
    }
    write_file(dir / "sweep.csv", index);
    out << fmt::format("{} of {} grid configurations {}\n", count, grid.size(), a.dry_run ? "listed" : "trained");
    return exit_ok;
}

struct InspectArgs {
    std::string checkpoint;
    std::optional<double> width;
    std::size_t image_size = 224;
    bool layers = false;
};

int cmd_inspect(const InspectArgs& a, std::ostream& out)
{
    ParamStats stats;
    ModelSpec spec;
    if (!a.checkpoint.empty()) {
        auto ck = load_checkpoint(a.checkpoint);
        spec = ck.model.spec();
        stats = param_stats(ck.model);
    } else if (a.width) {
        spec.width_multiplier = *a.width;
        spec.input_size = a.image_size;
        spec.validate();
        stats = param_stats(spec);
    } else {
        throw UsageError("inspect needs --checkpoint or --width");
    }
    out << fmt::format("width={}\nparam_count={}\nbytes_f32={}\nmegabytes={:.3f}\nbuffer_count={}\n",
                       spec.width_multiplier, stats.param_count, stats.bytes_f32,
                       static_cast<double>(stats.bytes_f32) / 1e6, stats.buffer_count);
    if (a.layers)
        for (const auto& l : stats.per_layer)
            out << fmt::format("{} {}\n", l.name, l.params);
    return exit_ok;
}

} // namespace

std::string sha256_hex(const std::string& bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    std::string hex;
    hex.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i)
        hex += fmt::format("{:02x}", md[i]);
    return hex;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Width-scaled MobileNet ensembles for fundus image quality"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Seed for all randomness in the run");
    app.add_flag("--force", g.force, "Overwrite a non-empty output directory");
    app.add_option("--out", g.out, "Output directory");
    app.add_flag("--verbose", g.verbose, "Per-epoch progress on stderr");
    // Global flags may also follow the subcommand.
    auto globals = [&](CLI::App* sub) {
        sub->fallthrough();
    };

    GensynthArgs gs;
    auto* c_gen = app.add_subcommand("gensynth", "Write a synthetic labelled image set");
    c_gen->add_option("--n", gs.n, "Number of samples")->check(CLI::PositiveNumber);
    c_gen->add_option("--balance", gs.balance, "Fraction of label-0 (ungradable) samples");
    c_gen->add_option("--image-size", gs.image_size, "Square image extent");
    globals(c_gen);

    TrainArgs ta;
    auto* c_train = app.add_subcommand("train", "Train one configuration");
    c_train->add_option("--config", ta.config, "key=value training config")->required();
    c_train->add_option("--data", ta.data, "Training set directory")->required();
    c_train->add_option("--val", ta.val, "Validation set directory")->required();
    c_train->add_flag("--allow-off-grid", ta.allow_off_grid, "Accept values outside the configuration grid");
    c_train->add_option("--image-size", ta.image_size, "Square input extent (multiple of 32)");
    globals(c_train);

    EvalArgs ea;
    auto* c_eval = app.add_subcommand("eval", "Score a checkpoint on a labelled set");
    c_eval->add_option("--checkpoint", ea.checkpoint)->required();
    c_eval->add_option("--data", ea.data)->required();
    c_eval->add_option("--profile", ea.profile, "Normalization profile (default: the training profile)");
    c_eval->add_option("--metric", ea.metric, "Selection metric reported as metric_kind");
    c_eval->add_option("--rank-weights", ea.rank_weights, "e.g. auroc=0.5,auprc=0.5");
    c_eval->add_option("--batch", ea.batch);
    globals(c_eval);

    FuseArgs fa;
    auto* c_fuse = app.add_subcommand("fuse", "Run an ensemble and vote");
    c_fuse->add_option("--ensemble", fa.ensemble, "Ensemble spec file")->required();
    c_fuse->add_option("--data", fa.data)->required();
    c_fuse->add_option("--mode", fa.mode, "Override the spec's fusion mode");
    c_fuse->add_option("--metric", fa.metric);
    c_fuse->add_option("--rank-weights", fa.rank_weights);
    c_fuse->add_flag("--parallel", fa.parallel, "Run members on separate threads");
    c_fuse->add_option("--batch", fa.batch);
    globals(c_fuse);

    SweepArgs sa;
    std::size_t sweep_epochs = 0;
    auto* c_sweep = app.add_subcommand("sweep", "Train the full configuration grid");
    c_sweep->add_option("--data", sa.data)->required();
    c_sweep->add_option("--val", sa.val)->required();
    c_sweep->add_option("--profile", sa.profile);
    c_sweep->add_option("--image-size", sa.image_size);
    auto* epochs_opt = c_sweep->add_option("--epochs", sweep_epochs, "Override the epoch count (off-grid)");
    c_sweep->add_option("--limit", sa.limit, "Only the first N configurations");
    c_sweep->add_flag("--dry-run", sa.dry_run, "Write configs without training");
    globals(c_sweep);

    InspectArgs ia;
    double inspect_width = 1.0;
    auto* c_inspect = app.add_subcommand("inspect", "Print parameter statistics");
    c_inspect->add_option("--checkpoint", ia.checkpoint);
    auto* width_opt = c_inspect->add_option("--width", inspect_width, "Spec-only width multiplier");
    c_inspect->add_option("--image-size", ia.image_size);
    c_inspect->add_flag("--layers", ia.layers, "Per-layer counts");
    globals(c_inspect);

    std::vector<const char*> argv{"mmnet"};
    for (const auto& a : args)
        argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? exit_ok : exit_usage;
    }
    if (seed_opt->count() > 0)
        g.seed = seed;
    if (epochs_opt->count() > 0)
        sa.epochs = sweep_epochs;
    if (width_opt->count() > 0)
        ia.width = inspect_width;

    try {
        if (c_gen->parsed())
            return cmd_gensynth(g, gs, out);
        if (c_train->parsed())
            return cmd_train(g, ta, out, err);
        if (c_eval->parsed())
            return cmd_eval(g, ea, out);
        if (c_fuse->parsed())
            return cmd_fuse(g, fa, out);
        if (c_sweep->parsed())
            return cmd_sweep(g, sa, out, err);
        return cmd_inspect(ia, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_usage;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const ShapeError& e) {
        err << "shape error: " << e.what() << '\n';
        return exit_data;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_failure;
    }
}

} // namespace mmnet::cli

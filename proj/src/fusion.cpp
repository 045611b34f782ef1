#include "mmnet/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "mmnet/error.hpp"

namespace mmnet::fusion {

namespace {

void check_members(const std::vector<Probs>& members, bool simplex)
{
    if (members.empty())
        throw UsageError("fusion needs at least one member");
    const std::size_t K = members.front().size();
    if (K == 0)
        throw ShapeError("fusion: empty output vector");
    for (std::size_t i = 0; i < members.size(); ++i) {
        if (members[i].size() != K)
            throw ShapeError(fmt::format("fusion: member {} has {} outputs, member 0 has {}", i,
                                         members[i].size(), K));
        for (double v : members[i])
            if (!std::isfinite(v))
                throw NumericError(fmt::format("fusion: member {} has a non-finite output", i));
        if (simplex) {
            double s = 0.0;
            for (double v : members[i]) {
                if (v < 0.0)
                    throw NumericError(fmt::format("fusion: member {} has a negative probability", i));
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-5)
                throw NumericError(fmt::format("fusion: member {} sums to {}, not 1", i, s));
        }
    }
}

Probs mean_of(const std::vector<Probs>& members)
{
    Probs out(members.front().size(), 0.0);
    for (const auto& m : members)
        for (std::size_t k = 0; k < out.size(); ++k)
            out[k] += m[k];
    for (double& v : out)
        v /= static_cast<double>(members.size());
    return out;
}

Probs max_of(const std::vector<Probs>& members)
{
    Probs out = members.front();
    for (const auto& m : members)
        for (std::size_t k = 0; k < out.size(); ++k)
            out[k] = std::max(out[k], m[k]);
    return out;
}

Probs renormalized(Probs p)
{
    double s = 0.0;
    for (double v : p)
        s += v;
    if (!(s > 0.0))
        throw NumericError("fusion: fused vector is all zero and cannot be renormalized");
    for (double& v : p)
        v /= s;
    return p;
}

Probs softmax_row(const Probs& logits)
{
    const double mx = *std::max_element(logits.begin(), logits.end());
    Probs out(logits.size());
    double z = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k)
        z += (out[k] = std::exp(logits[k] - mx));
    for (double& v : out)
        v /= z;
    return out;
}

Probs one_hot(std::size_t k, std::size_t K)
{
    Probs out(K, 0.0);
    out[k] = 1.0;
    return out;
}

} // namespace

Probs fuse_average(const std::vector<Probs>& members)
{
    check_members(members, true);
    return mean_of(members);
}

Probs fuse_max(const std::vector<Probs>& members)
{
    check_members(members, true);
    return renormalized(max_of(members));
}

Probs argmax_confidence(const std::vector<Probs>& members)
{
    check_members(members, true);
    std::size_t best = 0;
    double best_conf = *std::max_element(members[0].begin(), members[0].end());
    for (std::size_t i = 1; i < members.size(); ++i) {
        const double conf = *std::max_element(members[i].begin(), members[i].end());
        if (conf > best_conf) {
            best_conf = conf;
            best = i;
        }
    }
    return members[best];
}

std::size_t argmax_class(const Probs& p)
{
    if (p.empty())
        throw ShapeError("argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k)
        if (p[k] > p[best])
            best = k;
    return best;
}

FusionMode parse_mode(const std::string& s)
{
    if (s == "average")
        return FusionMode::average;
    if (s == "max")
        return FusionMode::max;
    if (s == "argmax_confidence")
        return FusionMode::argmax_confidence;
    throw ConfigError("unknown fusion mode '" + s + "' (expected max, average or argmax_confidence)");
}

FuseOn parse_fuse_on(const std::string& s)
{
    if (s == "probs")
        return FuseOn::probs;
    if (s == "logits")
        return FuseOn::logits;
    if (s == "labels")
        return FuseOn::labels;
    throw ConfigError("unknown fuse_on '" + s + "' (expected probs, logits or labels)");
}

std::string to_string(FusionMode m)
{
    switch (m) {
    case FusionMode::average: return "average";
    case FusionMode::max: return "max";
    case FusionMode::argmax_confidence: return "argmax_confidence";
    }
    return "average";
}

std::string to_string(FuseOn f)
{
    switch (f) {
    case FuseOn::probs: return "probs";
    case FuseOn::logits: return "logits";
    case FuseOn::labels: return "labels";
    }
    return "probs";
}

Probs fuse(const std::vector<Probs>& member_logits, FusionMode mode, FuseOn on)
{
    check_members(member_logits, false);
    if (on == FuseOn::logits) {
        // Fuse raw scores, then map to probabilities.
        if (mode == FusionMode::average)
            return softmax_row(mean_of(member_logits));
        if (mode == FusionMode::max)
            return softmax_row(max_of(member_logits));
        std::vector<Probs> probs;
        for (const auto& l : member_logits)
            probs.push_back(softmax_row(l));
        return argmax_confidence(probs);
    }
    std::vector<Probs> rows;
    rows.reserve(member_logits.size());
    for (const auto& l : member_logits) {
        Probs p = softmax_row(l);
        rows.push_back(on == FuseOn::labels ? one_hot(argmax_class(p), p.size()) : std::move(p));
    }
    switch (mode) {
    case FusionMode::average: return fuse_average(rows);
    case FusionMode::max: return fuse_max(rows);
    case FusionMode::argmax_confidence: return argmax_confidence(rows);
    }
    return fuse_average(rows);
}

// ---------------------------------------------------------------------------
// spec files

void EnsembleSpec::validate() const
{
    if (members.size() < 2)
        throw ConfigError("an ensemble needs at least two members");
    for (std::size_t i = 0; i < members.size(); ++i)
        if (!data::is_known_profile(members[i].profile))
            throw ConfigError(fmt::format("member {}: unknown profile '{}'", i, members[i].profile));
}

std::string EnsembleSpec::to_text() const
{
    std::string out;
    for (const auto& m : members)
        out += fmt::format("member={},{}\n", m.checkpoint.string(), m.profile);
    out += fmt::format("mode={}\nfuse_on={}\n", to_string(mode), to_string(fuse_on));
    return out;
}

EnsembleSpec parse_ensemble_spec(const std::string& text, const std::filesystem::path& base_dir)
{
    EnsembleSpec spec;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool saw_mode = false, saw_on = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line.front() == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(fmt::format("ensemble line {}: expected key=value", lineno));
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        try {
            if (key == "member") {
                const auto comma = value.rfind(',');
                if (comma == std::string::npos || comma == 0 || comma + 1 == value.size())
                    throw ConfigError("member needs '<checkpoint>,<profile>'");
                std::filesystem::path p = value.substr(0, comma);
                if (p.is_relative() && !base_dir.empty())
                    p = base_dir / p;
                spec.members.push_back({p, value.substr(comma + 1)});
            } else if (key == "mode") {
                if (saw_mode)
                    throw ConfigError("mode given twice");
                saw_mode = true;
                spec.mode = parse_mode(value);
            } else if (key == "fuse_on") {
                if (saw_on)
                    throw ConfigError("fuse_on given twice");
                saw_on = true;
                spec.fuse_on = parse_fuse_on(value);
            } else {
                throw ConfigError("unknown key '" + key + "'");
            }
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("ensemble line {}: {}", lineno, e.what()));
        }
    }
    spec.validate();
    return spec;
}

EnsembleSpec load_ensemble_spec(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw ConfigError("cannot open ensemble spec " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_ensemble_spec(ss.str(), path.parent_path());
}

std::vector<double> canonical_widths()
{
    return {1.0, 1.0, 3.0};
}

data::NormProfile checkpoint_profile(const std::string& id, const CheckpointMeta& meta)
{
    if (!data::is_known_profile(id))
        throw ConfigError("unknown profile '" + id + "'");
    if (id.starts_with("imagenet"))
        return data::imagenet_profile();
    if (!meta.extra.contains("profile"))
        throw DataError("checkpoint stores no dataset statistics for profile '" + id + "'");
    auto profile = data::NormProfile::from_json(meta.extra.at("profile"));
    if (profile.name != "dataset")
        throw DataError("checkpoint was trained with profile '" + profile.name + "', not dataset statistics");
    return profile;
}

std::vector<LoadedMember> load_members(const EnsembleSpec& spec)
{
    spec.validate();
    std::vector<LoadedMember> out;
    for (std::size_t i = 0; i < spec.members.size(); ++i) {
        const auto& m = spec.members[i];
        try {
            LoadedCheckpoint ck = load_checkpoint(m.checkpoint);
            data::NormProfile profile = checkpoint_profile(m.profile, ck.meta);
            out.push_back({std::move(ck.model), std::move(profile)});
        } catch (const Error& e) {
            throw DataError(fmt::format("ensemble member {} ({}): {}", i, m.checkpoint.string(), e.what()));
        }
        const auto& first = out.front().model.spec();
        const auto& cur = out.back().model.spec();
        if (cur.num_classes != first.num_classes)
            throw DataError(fmt::format("ensemble member {}: {} classes, member 0 has {}", i, cur.num_classes,
                                        first.num_classes));
        if (cur.input_size != first.input_size)
            throw DataError(fmt::format("ensemble member {}: input size {}, member 0 has {}", i,
                                        cur.input_size, first.input_size));
    }
    return out;
}

std::vector<FusedPrediction> ensemble_predict(const std::vector<LoadedMember>& members, FusionMode mode,
                                              FuseOn on, const data::Dataset& images, bool parallel,
                                              std::size_t batch_size, std::vector<double>* member_seconds)
{
    if (members.empty())
        throw UsageError("ensemble_predict needs at least one member");
    if (images.samples.empty())
        throw DataError("empty dataset");
    const std::size_t N = images.size();
    const std::size_t M = members.size();

    // Raw logits per member, (N,K) each.
    std::vector<Tensor> logits(M);
    std::vector<double> seconds(M, 0.0);
    auto run_member = [&](std::size_t m) {
        const auto t0 = std::chrono::steady_clock::now();
        const Model& model = members[m].model;
        Tensor out(Shape{N, model.spec().num_classes});
        const std::size_t K = model.spec().num_classes;
        const std::size_t step = std::max<std::size_t>(batch_size, 1);
        for (std::size_t start = 0; start < N; start += step) {
            const std::size_t end = std::min(N, start + step);
            std::vector<Tensor> normed;
            for (std::size_t i = start; i < end; ++i)
                normed.push_back(data::normalize(images.samples[i].image, members[m].profile));
            std::vector<const Tensor*> ptrs;
            for (const auto& t : normed)
                ptrs.push_back(&t);
            const Tensor l = model.infer(data::stack(ptrs));
            std::copy_n(l.ptr(), l.numel(), out.ptr() + start * K);
        }
        logits[m] = std::move(out);
        seconds[m] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    if (parallel && M > 1) {
        std::vector<std::exception_ptr> errors(M);
        std::vector<std::thread> workers;
        for (std::size_t m = 0; m < M; ++m)
            workers.emplace_back([&, m] {
                try {
                    run_member(m);
                } catch (...) {
                    errors[m] = std::current_exception();
                }
            });
        for (auto& w : workers)
            w.join();
        for (auto& e : errors)
            if (e)
                std::rethrow_exception(e);
    } else {
        for (std::size_t m = 0; m < M; ++m)
            run_member(m);
    }

    if (member_seconds)
        *member_seconds = seconds;

    const std::size_t K = members.front().model.spec().num_classes;
    std::vector<FusedPrediction> preds(N);
    for (std::size_t i = 0; i < N; ++i) {
        std::vector<Probs> rows(M, Probs(K));
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t k = 0; k < K; ++k)
                rows[m][k] = logits[m][i * K + k];
        auto& p = preds[i];
        for (const auto& r : rows)
            p.member_probs.push_back(softmax_row(r));
        p.fused = fuse(rows, mode, on);
        p.predicted = argmax_class(p.fused);
        p.score = K > 1 ? p.fused[1] : p.fused[0];
    }
    return preds;
}

std::string predictions_csv(const data::Dataset& images, const std::vector<FusedPrediction>& preds)
{
    if (images.size() != preds.size())
        throw ShapeError(fmt::format("{} images but {} predictions", images.size(), preds.size()));
    std::string out = "id,score,pred";
    const std::size_t M = preds.empty() ? 0 : preds.front().member_probs.size();
    for (std::size_t m = 0; m < M; ++m)
        out += fmt::format(",member{}", m);
    out += '\n';
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& p = preds[i];
        out += fmt::format("{},{:.6f},{}", images.samples[i].id, p.score, p.predicted);
        for (const auto& mp : p.member_probs)
            out += fmt::format(",{:.6f}", mp.size() > 1 ? mp[1] : mp[0]);
        out += '\n';
    }
    return out;
}

} // namespace mmnet::fusion

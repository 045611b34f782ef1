#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "cli.hpp"
#include "mmnet/metrics.hpp"

namespace fs = std::filesystem;
using namespace mmnet;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text)
{
    std::ofstream(p, std::ios::binary) << text;
}

// Every regular file under `dir`, path relative to it, mapped to its bytes.
std::map<std::string, std::string> tree(const fs::path& dir)
{
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file())
            files[fs::relative(e.path(), dir).string()] = slurp(e.path());
    return files;
}

std::map<std::string, std::string> key_values(const std::string& text)
{
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        const auto eq = line.find('=');
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

// One shared workspace: a small training set, a hold-out set and a config.
struct Workspace {
    fs::path root = fs::temp_directory_path() / "mmnet_test_cli";
    fs::path train = root / "train", val = root / "val", config = root / "tiny.cfg";

    Workspace()
    {
        fs::remove_all(root);
        fs::create_directories(root);
        REQUIRE(run({"gensynth", "--n", "10", "--seed", "1", "--image-size", "32", "--out", train.string()}).code ==
                0);
        REQUIRE(run({"gensynth", "--n", "6", "--seed", "2", "--image-size", "32", "--out", val.string()}).code == 0);
        spit(config, "batch_size=8\nlr_max=1e-3\nlr_min_ratio=0.01\nweight_decay=0.005\ndropout=0.01\n"
                     "epochs=2\nwidth=0.25\nmetric=auc\naugment_profile=dataset\nseed=3\n");
    }
    ~Workspace() { fs::remove_all(root); }

    Result train_run(const fs::path& out, std::vector<std::string> extra = {})
    {
        std::vector<std::string> args{"train", "--config", config.string(), "--data", train.string(),
                                      "--val", val.string(), "--image-size", "32", "--allow-off-grid",
                                      "--out", out.string()};
        args.insert(args.end(), extra.begin(), extra.end());
        return run(args);
    }
};

} // namespace

TEST_CASE("usage errors exit with 2")
{
    CHECK(run({}).code == cli::exit_usage);
    CHECK(run({"frobnicate"}).code == cli::exit_usage);
    CHECK(run({"train"}).code == cli::exit_usage);
    CHECK(run({"inspect"}).code == cli::exit_usage);
    CHECK(run({"--help"}).code == cli::exit_ok);
}

TEST_CASE("the installed binary reports the same exit codes")
{
    const std::string tool = MMNET_TOOL_PATH;
    const auto status = [&](const std::string& args) {
        const int raw = std::system((tool + " " + args + " >/dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    CHECK(status("inspect --width 1") == 0);
    CHECK(status("bogus") == 2);
    CHECK(status("eval --checkpoint /nonexistent.ckpt --data /nonexistent --out /tmp/mmnet_never") == 3);
}

TEST_CASE("inspect prints the size arithmetic")
{
    const auto r = run({"inspect", "--width", "1"});
    REQUIRE(r.code == 0);
    const auto kv = key_values(r.out);
    CHECK(kv.at("param_count") == "3362526");
    CHECK(kv.at("bytes_f32") == "13450104");
    CHECK(run({"inspect", "--width", "0"}).code == cli::exit_usage);
}

TEST_CASE("gensynth")
{
    const fs::path a = fs::temp_directory_path() / "mmnet_test_gensynth_a";
    const fs::path b = fs::temp_directory_path() / "mmnet_test_gensynth_b";
    fs::remove_all(a);
    fs::remove_all(b);
    const std::vector<std::string> common{"gensynth", "--n", "434", "--balance", "0.4724", "--seed", "9",
                                          "--image-size", "8"};
    auto args = common;
    args.insert(args.end(), {"--out", a.string()});
    REQUIRE(run(args).code == 0);
    const std::string labels = slurp(a / "labels.csv");
    CHECK(labels.starts_with("id,label\n"));
    std::size_t zeros = 0, rows = 0;
    std::istringstream in(labels);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        ++rows;
        zeros += line.ends_with(",0");
    }
    CHECK(rows == 434);
    CHECK(zeros == 205);

    // Rerun elsewhere and in place: identical image and label bytes.
    auto args_b = common;
    args_b.insert(args_b.end(), {"--out", b.string()});
    REQUIRE(run(args_b).code == 0);
    auto ta = tree(a), tb = tree(b);
    ta.erase("manifest.json");
    tb.erase("manifest.json");
    CHECK(ta == tb);
    CHECK(run(args).code == cli::exit_usage); // non-empty without --force
    args.push_back("--force");
    CHECK(run(args).code == 0);
    CHECK(slurp(a / "labels.csv") == labels);

    CHECK(run({"gensynth", "--n", "1", "--out", (a / "one").string()}).code == cli::exit_data);
    CHECK(run({"gensynth", "--n", "4", "--balance", "1.5", "--out", (a / "bad").string()}).code == cli::exit_usage);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("train, eval and fuse end to end")
{
    Workspace ws;
    const auto inputs_before = tree(ws.root);

    // Off-grid values need the flag; the error names the line.
    auto strict = run({"train", "--config", ws.config.string(), "--data", ws.train.string(), "--val",
                       ws.val.string(), "--out", (ws.root / "strict").string()});
    CHECK(strict.code == cli::exit_usage);
    CHECK(strict.err.find("line 6") != std::string::npos);

    const fs::path r1 = ws.root / "run1", r2 = ws.root / "run2";
    const auto first = ws.train_run(r1);
    REQUIRE_MESSAGE(first.code == 0, first.err);
    REQUIRE(ws.train_run(r2).code == 0);
    for (const char* f : {"best.ckpt", "history.csv", "config.txt", "metrics.txt"}) {
        CAPTURE(f);
        CHECK(slurp(r1 / f) == slurp(r2 / f));
    }
    CHECK(fs::exists(r1 / "manifest.json"));
    CHECK(fs::exists(r1 / "timing.txt"));
    CHECK(ws.train_run(r1).code == cli::exit_usage);
    CHECK(ws.train_run(r1, {"--force"}).code == 0);
    CHECK(slurp(r1 / "history.csv") == slurp(r2 / "history.csv"));

    // Eval: metrics schema and re-scoring the emitted scores.
    const fs::path ev = ws.root / "eval";
    const auto e = run({"eval", "--checkpoint", (r1 / "best.ckpt").string(), "--data", ws.val.string(), "--out",
                        ev.string()});
    REQUIRE_MESSAGE(e.code == 0, e.err);
    const auto kv = key_values(slurp(ev / "metrics.txt"));
    for (const char* key : {"accuracy", "auroc", "auprc", "sensitivity", "specificity", "metric_kind", "metric_value",
                            "tp", "fp", "tn", "fn", "threshold"})
        CHECK(kv.count(key) == 1);
    CHECK(kv.size() == 12);
    CHECK(kv.at("metric_kind") == "auc");

    std::map<std::string, int> labels;
    {
        std::istringstream in(slurp(ws.val / "labels.csv"));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line))
            labels[line.substr(0, line.find(','))] = line.back() - '0';
    }
    metrics::ScoredLabels rescored;
    {
        std::istringstream in(slurp(ev / "predictions.csv"));
        std::string line;
        std::getline(in, line);
        CHECK(line == "id,score,pred");
        while (std::getline(in, line)) {
            const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
            const std::string score = line.substr(c1 + 1, c2 - c1 - 1);
            CHECK(score.size() - score.find('.') - 1 == 6);
            rescored.scores.push_back(std::stod(score));
            rescored.labels.push_back(labels.at(line.substr(0, c1)));
        }
    }
    CHECK(metrics::format_report(metrics::evaluate(rescored, metrics::SelectionMetric::auc)) ==
          slurp(ev / "metrics.txt"));

    // Fuse: average and max agree on identical members; three forwards cost more than one.
    const fs::path spec = ws.root / "pair.ens";
    spit(spec, "member=" + (r1 / "best.ckpt").string() + ",dataset\nmember=" + (r2 / "best.ckpt").string() +
                   ",dataset\nmember=" + (r1 / "best.ckpt").string() + ",dataset\n");
    const fs::path fa = ws.root / "fuse_avg", fm = ws.root / "fuse_max", fp = ws.root / "fuse_par";
    REQUIRE(run({"fuse", "--ensemble", spec.string(), "--data", ws.val.string(), "--out", fa.string()}).code == 0);
    REQUIRE(run({"fuse", "--ensemble", spec.string(), "--data", ws.val.string(), "--mode", "max", "--out",
                 fm.string()})
                .code == 0);
    REQUIRE(run({"fuse", "--ensemble", spec.string(), "--data", ws.val.string(), "--parallel", "--out",
                 fp.string()})
                .code == 0);
    CHECK(slurp(fa / "predictions.csv") == slurp(fm / "predictions.csv"));
    CHECK(slurp(fa / "predictions.csv") == slurp(fp / "predictions.csv"));
    CHECK(slurp(fa / "metrics.txt") == slurp(fp / "metrics.txt"));
    CHECK(slurp(fa / "predictions.csv").starts_with("id,score,pred,member0,member1,member2\n"));
    CHECK(slurp(fa / "member0_predictions.csv") == slurp(ev / "predictions.csv"));
    const auto timing = key_values(slurp(fa / "timing.txt"));
    CHECK(std::stod(timing.at("fused_per_image")) > std::stod(timing.at("member_mean_per_image")));

    // Member failures name the index.
    spit(spec, "member=" + (r1 / "best.ckpt").string() + ",dataset\nmember=" + (ws.root / "nope.ckpt").string() +
                   ",dataset\n");
    const auto bad = run({"fuse", "--ensemble", spec.string(), "--data", ws.val.string(), "--out",
                          (ws.root / "fuse_bad").string()});
    CHECK(bad.code == cli::exit_data);
    CHECK(bad.err.find("member 1") != std::string::npos);

    // Eval labels outside the checkpoint's classes are a data error.
    const fs::path odd = ws.root / "odd";
    fs::create_directories(odd);
    fs::copy(ws.val, odd, fs::copy_options::recursive);
    std::string csv = slurp(odd / "labels.csv");
    csv.replace(csv.rfind(',') + 1, 1, "5");
    spit(odd / "labels.csv", csv);
    CHECK(run({"eval", "--checkpoint", (r1 / "best.ckpt").string(), "--data", odd.string(), "--out",
               (ws.root / "eval_odd").string()})
              .code == cli::exit_data);

    // Inputs are untouched.
    auto inputs_after = tree(ws.root);
    for (const auto& [path, bytes] : inputs_before) {
        CAPTURE(path);
        CHECK(inputs_after.at(path) == bytes);
    }
}

TEST_CASE("divergent training exits with 4")
{
    Workspace ws;
    spit(ws.config, "batch_size=8\nlr_max=1e12\nlr_min_ratio=0.01\nweight_decay=0.005\ndropout=0.01\n"
                    "epochs=3\nwidth=0.25\nmetric=auc\naugment_profile=imagenet\nseed=3\n");
    const auto r = ws.train_run(ws.root / "diverge");
    CHECK(r.code == cli::exit_numeric);
}

TEST_CASE("sweep dry run lists the grid")
{
    Workspace ws;
    const fs::path out = ws.root / "sweep";
    const auto r = run({"sweep", "--data", ws.train.string(), "--val", ws.val.string(), "--dry-run", "--out",
                        out.string()});
    REQUIRE(r.code == 0);
    const std::string index = slurp(out / "sweep.csv");
    CHECK(std::count(index.begin(), index.end(), '\n') == 1 + 216);
    CHECK(fs::exists(out / "run_000" / "config.txt"));
}

#include "mmnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "mmnet/error.hpp"

namespace mmnet::data {

namespace {

void require_image(const Tensor& t, const char* what)
{
    if (t.rank() != 3 || t.shape()[0] != 3)
        throw ShapeError(std::string(what) + " expects a (3,H,W) image, got " + t.shape().str());
}

float clamp01(double v)
{
    return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

} // namespace

// ---------------------------------------------------------------------------
// profiles

void NormProfile::validate() const
{
    for (double s : std)
        if (!(s > 0.0) || !std::isfinite(s))
            throw ConfigError("normalization profile '" + name + "': std must be positive");
    for (double m : mean)
        if (!std::isfinite(m))
            throw ConfigError("normalization profile '" + name + "': mean must be finite");
}

nlohmann::json NormProfile::to_json() const
{
    return {{"name", name}, {"mean", mean}, {"std", std}};
}

NormProfile NormProfile::from_json(const nlohmann::json& j)
{
    NormProfile p;
    try {
        p.name = j.at("name").get<std::string>();
        p.mean = j.at("mean").get<std::array<double, 3>>();
        p.std = j.at("std").get<std::array<double, 3>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed normalization profile: ") + e.what());
    }
    p.validate();
    return p;
}

NormProfile imagenet_profile()
{
    return {"imagenet", {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
}

void AugmentPolicy::validate() const
{
    profile.validate();
    if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0))
        throw ConfigError("augment policy: hflip probability must lie in [0,1]");
    if (!(rotation_max_deg >= 0.0 && rotation_max_deg <= 30.0))
        throw ConfigError("augment policy: rotation bound must lie in [0,30] degrees");
    if (!(brightness_delta_max >= 0.0 && brightness_delta_max <= 0.5))
        throw ConfigError("augment policy: brightness delta must lie in [0,0.5]");
}

std::array<std::size_t, 2> Dataset::class_counts() const
{
    std::array<std::size_t, 2> c{0, 0};
    for (const auto& s : samples)
        ++c.at(static_cast<std::size_t>(s.label));
    return c;
}

std::size_t Dataset::image_size() const
{
    if (samples.empty())
        throw DataError("empty dataset");
    const Shape& first = samples.front().image.shape();
    for (const auto& s : samples)
        if (s.image.shape() != first || first.rank() != 3 || first[1] != first[2])
            throw DataError("dataset images must share one square (3,S,S) shape");
    return first[1];
}

void Dataset::validate() const
{
    if (samples.empty())
        throw DataError("empty dataset");
    std::set<std::string> ids;
    for (const auto& s : samples) {
        if (s.label != 0 && s.label != 1)
            throw DataError("sample " + s.id + ": label " + std::to_string(s.label) + " is not 0 or 1");
        if (!ids.insert(s.id).second)
            throw DataError("duplicate id " + s.id);
        require_image(s.image, "dataset");
        for (float v : s.image.data())
            if (!(v >= 0.0f && v <= 1.0f))
                throw DataError("sample " + s.id + ": pixel outside [0,1]");
    }
    image_size();
}

NormProfile dataset_profile(const Dataset& train)
{
    if (train.samples.empty())
        throw DataError("cannot compute dataset statistics of an empty dataset");
    std::array<double, 3> sum{}, sq{};
    double count = 0.0;
    for (const auto& s : train.samples) {
        require_image(s.image, "dataset_profile");
        const std::size_t plane = s.image.shape()[1] * s.image.shape()[2];
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = s.image[c * plane + i];
                sum[c] += v;
                sq[c] += v * v;
            }
        count += static_cast<double>(plane);
    }
    NormProfile p{"dataset", {}, {}};
    for (std::size_t c = 0; c < 3; ++c) {
        p.mean[c] = sum[c] / count;
        const double var = std::max(sq[c] / count - p.mean[c] * p.mean[c], 0.0);
        // A constant channel would give std 0; keep the map invertible.
        p.std[c] = std::max(std::sqrt(var), 1e-3);
    }
    return p;
}

bool is_known_profile(const std::string& id)
{
    return id == "imagenet" || id == "dataset" || id == "imagenet-plain" || id == "dataset-plain";
}

AugmentPolicy resolve_policy(const std::string& id, const Dataset& train)
{
    if (!is_known_profile(id))
        throw ConfigError("unknown augment profile '" + id +
                          "' (expected imagenet, dataset, imagenet-plain or dataset-plain)");
    AugmentPolicy policy;
    const bool plain = id.ends_with("-plain");
    const std::string norm = plain ? id.substr(0, id.size() - 6) : id;
    policy.profile = norm == "imagenet" ? imagenet_profile() : dataset_profile(train);
    if (plain)
        policy.hflip_enabled = policy.rotation_enabled = policy.brightness_enabled = false;
    policy.validate();
    return policy;
}

// ---------------------------------------------------------------------------
// transforms

Tensor normalize(const Tensor& image, const NormProfile& profile)
{
    require_image(image, "normalize");
    profile.validate();
    Tensor out(image.shape());
    const std::size_t plane = image.shape()[1] * image.shape()[2];
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            out[c * plane + i] =
                static_cast<float>((image[c * plane + i] - profile.mean[c]) / profile.std[c]);
    return out;
}

Tensor denormalize(const Tensor& image, const NormProfile& profile)
{
    require_image(image, "denormalize");
    profile.validate();
    Tensor out(image.shape());
    const std::size_t plane = image.shape()[1] * image.shape()[2];
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            out[c * plane + i] =
                static_cast<float>(image[c * plane + i] * profile.std[c] + profile.mean[c]);
    return out;
}

Tensor hflip(const Tensor& image)
{
    require_image(image, "hflip");
    const std::size_t H = image.shape()[1], W = image.shape()[2];
    Tensor out(image.shape());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                out[(c * H + y) * W + x] = image[(c * H + y) * W + (W - 1 - x)];
    return out;
}

Tensor rotate(const Tensor& image, double degrees)
{
    require_image(image, "rotate");
    const std::size_t H = image.shape()[1], W = image.shape()[2];
    if (degrees == 0.0)
        return image;
    const double rad = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cx = (static_cast<double>(W) - 1.0) / 2.0, cy = (static_cast<double>(H) - 1.0) / 2.0;
    Tensor out(image.shape());
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            // Inverse map: rotate the output coordinate by -angle.
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            const double sx = cs * dx + sn * dy + cx;
            const double sy = -sn * dx + cs * dy + cy;
            const auto ix = static_cast<std::ptrdiff_t>(std::lround(sx));
            const auto iy = static_cast<std::ptrdiff_t>(std::lround(sy));
            if (ix < 0 || iy < 0 || ix >= static_cast<std::ptrdiff_t>(W) || iy >= static_cast<std::ptrdiff_t>(H))
                continue;
            for (std::size_t c = 0; c < 3; ++c)
                out[(c * H + y) * W + x] = image[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
        }
    }
    return out;
}

Tensor adjust_brightness(const Tensor& image, double delta)
{
    require_image(image, "adjust_brightness");
    Tensor out(image.shape());
    for (std::size_t i = 0; i < image.numel(); ++i)
        out[i] = clamp01(image[i] + delta);
    return out;
}

Tensor augment_sample(const Tensor& image, const AugmentPolicy& policy, Rng& rng)
{
    require_image(image, "augment_sample");
    const double flip_draw = rng.uniform();
    const double angle = rng.uniform(-policy.rotation_max_deg, policy.rotation_max_deg);
    const double delta = rng.uniform(-policy.brightness_delta_max, policy.brightness_delta_max);
    Tensor out = image;
    if (policy.hflip_enabled && flip_draw < policy.hflip_prob)
        out = hflip(out);
    if (policy.rotation_enabled)
        out = rotate(out, angle);
    if (policy.brightness_enabled)
        out = adjust_brightness(out, delta);
    return out;
}

Tensor stack(const std::vector<const Tensor*>& images)
{
    if (images.empty())
        throw ShapeError("stack: no images");
    const Shape& s = images.front()->shape();
    if (s.rank() != 3)
        throw ShapeError("stack expects (C,H,W) images, got " + s.str());
    Tensor out(Shape{images.size(), s[0], s[1], s[2]});
    const std::size_t per = s.numel();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->shape() != s)
            throw ShapeError("stack: image " + std::to_string(i) + " has shape " +
                             images[i]->shape().str() + ", expected " + s.str());
        std::copy_n(images[i]->ptr(), per, out.ptr() + i * per);
    }
    return out;
}

// ---------------------------------------------------------------------------
// PPM

namespace {

std::string next_token(std::istream& in)
{
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty())
                break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

std::size_t parse_header_int(std::istream& in, const std::filesystem::path& path, const char* what)
{
    const std::string tok = next_token(in);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        throw DataError(path.string() + ": bad PPM " + what);
    return std::stoul(tok);
}

} // namespace

Tensor read_ppm(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open image " + path.string());
    if (next_token(in) != "P6")
        throw DataError(path.string() + ": not a binary PPM (P6) file");
    const std::size_t w = parse_header_int(in, path, "width");
    const std::size_t h = parse_header_int(in, path, "height");
    const std::size_t maxval = parse_header_int(in, path, "maxval");
    if (w == 0 || h == 0)
        throw DataError(path.string() + ": empty image");
    if (maxval != 255)
        throw DataError(path.string() + ": only maxval 255 is supported");
    std::vector<unsigned char> raw(w * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw DataError(path.string() + ": truncated pixel data");
    Tensor img(Shape{3, h, w});
    for (std::size_t i = 0; i < w * h; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            img[c * w * h + i] = static_cast<float>(raw[i * 3 + c]) / 255.0f;
    return img;
}

void write_ppm(const Tensor& image, const std::filesystem::path& path)
{
    require_image(image, "write_ppm");
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    std::string out = fmt::format("P6\n{} {}\n255\n", w, h);
    const std::size_t header = out.size();
    out.resize(header + w * h * 3);
    for (std::size_t i = 0; i < w * h; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            out[header + i * 3 + c] = static_cast<char>(
                static_cast<unsigned char>(std::lround(std::clamp(image[c * w * h + i], 0.0f, 1.0f) * 255.0f)));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw DataError("cannot write image " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width)
{
    require_image(image, "resize_bilinear");
    const std::size_t H = image.shape()[1], W = image.shape()[2];
    if (H == height && W == width)
        return image;
    Tensor out(Shape{3, height, width});
    const double sy = static_cast<double>(H) / static_cast<double>(height);
    const double sx = static_cast<double>(W) / static_cast<double>(width);
    for (std::size_t y = 0; y < height; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const float* p = image.ptr() + c * H * W;
                const double top = p[y0 * W + x0] * (1.0 - wx) + p[y0 * W + x1] * wx;
                const double bot = p[y1 * W + x0] * (1.0 - wx) + p[y1 * W + x1] * wx;
                out[(c * height + y) * width + x] = clamp01(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// manifests

Dataset load_dataset(const std::filesystem::path& image_dir, const std::filesystem::path& labels_csv,
                     std::size_t image_size)
{
    std::ifstream in(labels_csv, std::ios::binary);
    if (!in)
        throw DataError("cannot open labels file " + labels_csv.string());
    std::string line;
    if (!std::getline(in, line))
        throw DataError("empty dataset");
    if (line != "id,label")
        throw DataError(labels_csv.string() + ": header must be exactly 'id,label'");

    Dataset ds;
    ds.split = labels_csv.stem().string();
    std::set<std::string> seen;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw DataError(fmt::format("{}:{}: expected exactly two columns", labels_csv.string(), lineno));
        Sample s;
        s.id = line.substr(0, comma);
        const std::string label = line.substr(comma + 1);
        if (s.id.empty())
            throw DataError(fmt::format("{}:{}: empty id", labels_csv.string(), lineno));
        if (label != "0" && label != "1")
            throw DataError(fmt::format("{}:{}: label '{}' for id {} is not 0 or 1", labels_csv.string(),
                                        lineno, label, s.id));
        s.label = label == "1" ? 1 : 0;
        if (!seen.insert(s.id).second)
            throw DataError("duplicate id " + s.id + " in " + labels_csv.string());
        const auto path = image_dir / (s.id + ".ppm");
        if (!std::filesystem::exists(path))
            throw DataError("missing image for id " + s.id + " (" + path.string() + ")");
        s.image = resize_bilinear(read_ppm(path), image_size, image_size);
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty())
        throw DataError("empty dataset");
    return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    std::string csv = "id,label\n";
    for (const auto& s : dataset.samples) {
        write_ppm(s.image, dir / (s.id + ".ppm"));
        csv += fmt::format("{},{}\n", s.id, s.label);
    }
    std::ofstream f(dir / "labels.csv", std::ios::binary | std::ios::trunc);
    if (!f)
        throw DataError("cannot write " + (dir / "labels.csv").string());
    f << csv;
}

// ---------------------------------------------------------------------------
// synthetic generator

namespace {

struct Canvas {
    std::size_t size;
    std::vector<std::array<double, 3>> px;

    explicit Canvas(std::size_t s) : size(s), px(s * s, {0.0, 0.0, 0.0}) {}
    std::array<double, 3>& at(std::size_t x, std::size_t y) { return px[y * size + x]; }
};

void stamp_disc(Canvas& cv, double cx, double cy, double radius, const std::array<double, 3>& tint,
                double strength)
{
    const auto S = static_cast<std::ptrdiff_t>(cv.size);
    const auto x0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(cx - radius - 1)));
    const auto x1 = std::min<std::ptrdiff_t>(S - 1, static_cast<std::ptrdiff_t>(std::ceil(cx + radius + 1)));
    const auto y0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(cy - radius - 1)));
    const auto y1 = std::min<std::ptrdiff_t>(S - 1, static_cast<std::ptrdiff_t>(std::ceil(cy + radius + 1)));
    for (auto y = y0; y <= y1; ++y)
        for (auto x = x0; x <= x1; ++x) {
            const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
            const double cover = std::clamp(radius + 0.5 - d, 0.0, 1.0) * strength;
            if (cover <= 0.0)
                continue;
            auto& p = cv.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
            for (std::size_t c = 0; c < 3; ++c)
                p[c] = p[c] * (1.0 - cover) + tint[c] * cover;
        }
}

void box_blur(Canvas& cv, std::size_t radius)
{
    const std::size_t S = cv.size;
    std::vector<std::array<double, 3>> tmp(cv.px.size());
    for (int pass = 0; pass < 2; ++pass) {
        const bool horizontal = pass == 0;
        for (std::size_t a = 0; a < S; ++a)
            for (std::size_t b = 0; b < S; ++b) {
                std::array<double, 3> acc{};
                double count = 0.0;
                const std::size_t lo = b >= radius ? b - radius : 0;
                const std::size_t hi = std::min(S - 1, b + radius);
                for (std::size_t k = lo; k <= hi; ++k) {
                    const auto& p = horizontal ? cv.px[a * S + k] : cv.px[k * S + a];
                    for (std::size_t c = 0; c < 3; ++c)
                        acc[c] += p[c];
                    count += 1.0;
                }
                auto& dst = horizontal ? tmp[a * S + b] : tmp[b * S + a];
                for (std::size_t c = 0; c < 3; ++c)
                    dst[c] = acc[c] / count;
            }
        cv.px.swap(tmp);
    }
}

Tensor render(std::size_t S, int label, Rng& rng)
{
    Canvas cv(S);
    const double s = static_cast<double>(S);
    const double cx = s / 2.0 + rng.uniform(-0.03, 0.03) * s;
    const double cy = s / 2.0 + rng.uniform(-0.03, 0.03) * s;
    const double rx = 0.44 * s * rng.uniform(0.95, 1.03);
    const double ry = 0.40 * s * rng.uniform(0.95, 1.03);
    const double gain = rng.uniform(0.85, 1.1);
    const std::array<double, 3> base{0.72 * gain, 0.33 * gain, 0.16 * gain};

    // Fundus disc with radial falloff and a soft rim.
    for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
            const double ex = (static_cast<double>(x) + 0.5 - cx) / rx;
            const double ey = (static_cast<double>(y) + 0.5 - cy) / ry;
            const double r2 = ex * ex + ey * ey;
            if (r2 >= 1.0)
                continue;
            const double shade = 1.0 - 0.35 * r2;
            const double rim = std::clamp((1.0 - std::sqrt(r2)) * 12.0, 0.0, 1.0);
            for (std::size_t c = 0; c < 3; ++c)
                cv.at(x, y)[c] = base[c] * shade * rim;
        }

    // Optic disc left or right of centre.
    const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double ox = cx + side * rng.uniform(0.14, 0.22) * s;
    const double oy = cy + rng.uniform(-0.05, 0.05) * s;
    const double orad = std::max(1.5, 0.07 * s * rng.uniform(0.9, 1.15));

    // Vessels: quadratic curves fanning out from the optic disc.
    const std::array<double, 3> vessel{0.40 * gain, 0.10 * gain, 0.06 * gain};
    const double thick = std::max(0.6, 0.012 * s);
    const auto n_vessels = 4 + rng.below(3);
    for (std::uint64_t v = 0; v < n_vessels; ++v) {
        const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double ex = cx + std::cos(ang) * rx * 0.9, ey = cy + std::sin(ang) * ry * 0.9;
        const double mx = (ox + ex) / 2.0 + rng.uniform(-0.15, 0.15) * s;
        const double my = (oy + ey) / 2.0 + rng.uniform(-0.15, 0.15) * s;
        const std::size_t steps = 4 * S;
        for (std::size_t k = 0; k <= steps; ++k) {
            const double t = static_cast<double>(k) / static_cast<double>(steps);
            const double px = (1 - t) * (1 - t) * ox + 2 * (1 - t) * t * mx + t * t * ex;
            const double py = (1 - t) * (1 - t) * oy + 2 * (1 - t) * t * my + t * t * ey;
            stamp_disc(cv, px, py, thick * (1.0 - 0.5 * t), vessel, 0.8);
        }
    }
    stamp_disc(cv, ox, oy, orad, {0.98, 0.88, 0.60}, 1.0);

    if (label == 0) {
        switch (rng.below(3)) {
        case 0: // out of focus
            box_blur(cv, std::max<std::size_t>(1, S / 16));
            box_blur(cv, std::max<std::size_t>(1, S / 16));
            break;
        case 1: { // glare washing out one side
            const double gx = rng.bernoulli(0.5) ? 0.0 : s, gy = rng.uniform(0.0, s);
            const double strength = rng.uniform(0.65, 0.9);
            for (std::size_t y = 0; y < S; ++y)
                for (std::size_t x = 0; x < S; ++x) {
                    const double d = std::hypot(static_cast<double>(x) - gx, static_cast<double>(y) - gy);
                    const double g = strength * std::clamp(1.0 - d / (0.9 * s), 0.0, 1.0);
                    auto& p = cv.at(x, y);
                    const std::array<double, 3> glare{1.0, 0.95, 0.9};
                    for (std::size_t c = 0; c < 3; ++c)
                        p[c] = p[c] * (1.0 - g) + glare[c] * g;
                }
            break;
        }
        default: { // eyelid/eyelash occlusion band
            const double height = rng.uniform(0.32, 0.42) * s;
            const bool top = rng.bernoulli(0.5);
            const double start = top ? 0.0 : s - height;
            for (std::size_t y = 0; y < S; ++y) {
                const double fy = static_cast<double>(y) + 0.5;
                if (fy < start || fy > start + height)
                    continue;
                for (std::size_t x = 0; x < S; ++x) {
                    auto& p = cv.at(x, y);
                    const double texture = 0.08 + 0.04 * std::sin(0.9 * static_cast<double>(x));
                    p = {texture * 1.2, texture, texture * 0.8};
                }
            }
            break;
        }
        }
    }

    Tensor img(Shape{3, S, S});
    for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img[(c * S + y) * S + x] = clamp01(cv.at(x, y)[c] + 0.01 * rng.normal());
    return img;
}

} // namespace

Dataset gen_synthetic(std::size_t n, double balance, std::uint64_t seed, std::size_t image_size)
{
    if (n < 2)
        throw DataError("synthetic dataset needs n >= 2 so both classes are present");
    if (!(balance > 0.0 && balance < 1.0))
        throw ConfigError("class balance must lie strictly between 0 and 1");
    if (image_size < 8)
        throw ConfigError("synthetic image size must be at least 8");
    const auto zeros = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::floor(static_cast<double>(n) * balance + 0.5)), 1, n - 1);
    std::vector<int> labels(n, 1);
    std::fill_n(labels.begin(), zeros, 0);
    Rng root(seed);
    Rng shuffle = root.derive("synthetic-labels");
    for (std::size_t i = n - 1; i > 0; --i)
        std::swap(labels[i], labels[shuffle.below(i + 1)]);

    Dataset ds;
    ds.split = "synthetic";
    ds.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng r = root.derive("synthetic-image", {i});
        ds.samples.push_back({fmt::format("syn_{:05d}", i), render(image_size, labels[i], r), labels[i]});
    }
    return ds;
}

} // namespace mmnet::data

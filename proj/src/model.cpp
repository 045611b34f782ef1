#include "mmnet/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <zlib.h>

#include "mmnet/error.hpp"

namespace mmnet {

std::vector<BlockStage> mobilenet_v2_plan()
{
    return {{1, 16, 1, 1},  {6, 24, 2, 2},  {6, 32, 3, 2}, {6, 64, 4, 2},
            {6, 96, 3, 1},  {6, 160, 3, 2}, {6, 320, 1, 1}};
}

std::size_t ModelSpec::scaled(std::size_t base) const
{
    const double v = static_cast<double>(base) * width_multiplier;
    const double d = static_cast<double>(channel_round);
    const auto rounded = static_cast<std::size_t>(std::floor(v / d + 0.5)) * channel_round;
    return std::max(rounded, channel_round);
}

void ModelSpec::validate() const
{
    if (!(width_multiplier > 0.0) || !std::isfinite(width_multiplier))
        throw ConfigError("model spec: width_multiplier must be positive");
    if (num_classes < 2)
        throw ConfigError("model spec: num_classes must be at least 2");
    if (stem_channels == 0 || head_channels == 0)
        throw ConfigError("model spec: stem and head channels must be positive");
    if (channel_round == 0)
        throw ConfigError("model spec: channel_round must be positive");
    if (se_reduction == 0)
        throw ConfigError("model spec: se_reduction must be positive");
    if (block_plan.empty())
        throw ConfigError("model spec: block plan is empty");
    for (const auto& st : block_plan) {
        if (st.stride != 1 && st.stride != 2)
            throw ConfigError("model spec: block strides must be 1 or 2");
        if (st.expand_ratio == 0 || st.channels == 0 || st.repeats == 0)
            throw ConfigError("model spec: block plan entries must be positive");
    }
    if (input_size == 0)
        throw ConfigError("model spec: input_size must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0))
        throw ConfigError("model spec: dropout must lie in [0, 1)");
    if (per_block_dropout)
        throw ConfigError("model spec: per-block dropout is reserved and not implemented");
    std::size_t total = 2;
    for (const auto& st : block_plan)
        total *= st.stride;
    if (input_size % total != 0)
        throw ConfigError("model spec: input_size " + std::to_string(input_size) +
                          " is not divisible by the total stride " + std::to_string(total));
}

std::vector<std::size_t> ModelSpec::spatial_trace() const
{
    std::vector<std::size_t> trace;
    std::size_t s = input_size / 2;
    trace.push_back(s);
    for (const auto& st : block_plan)
        for (std::size_t i = 0; i < st.repeats; ++i) {
            if (i == 0 && st.stride == 2)
                s /= 2;
            trace.push_back(s);
        }
    return trace;
}

nlohmann::json ModelSpec::to_json() const
{
    nlohmann::json plan = nlohmann::json::array();
    for (const auto& st : block_plan)
        plan.push_back({st.expand_ratio, st.channels, st.repeats, st.stride});
    return {{"width_multiplier", width_multiplier},
            {"num_classes", num_classes},
            {"stem_channels", stem_channels},
            {"block_plan", plan},
            {"head_channels", head_channels},
            {"use_se", use_se},
            {"se_reduction", se_reduction},
            {"channel_round", channel_round},
            {"input_size", input_size},
            {"dropout", dropout},
            {"per_block_dropout", per_block_dropout}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j)
{
    try {
        ModelSpec s;
        s.width_multiplier = j.at("width_multiplier").get<double>();
        s.num_classes = j.at("num_classes").get<std::size_t>();
        s.stem_channels = j.at("stem_channels").get<std::size_t>();
        s.block_plan.clear();
        for (const auto& row : j.at("block_plan"))
            s.block_plan.push_back({row.at(0).get<std::size_t>(), row.at(1).get<std::size_t>(),
                                    row.at(2).get<std::size_t>(), row.at(3).get<std::size_t>()});
        s.head_channels = j.at("head_channels").get<std::size_t>();
        s.use_se = j.at("use_se").get<bool>();
        s.se_reduction = j.at("se_reduction").get<std::size_t>();
        s.channel_round = j.at("channel_round").get<std::size_t>();
        s.input_size = j.at("input_size").get<std::size_t>();
        s.dropout = j.at("dropout").get<double>();
        s.per_block_dropout = j.value("per_block_dropout", false);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model spec: malformed JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

Model::Model(ModelSpec spec) : spec_(std::move(spec))
{
    spec_.validate();
    const std::size_t stem_out = spec_.scaled(spec_.stem_channels);
    stem = nn::Conv2d(3, stem_out, 3, 2, 1);
    stem_bn = nn::BatchNorm(stem_out);
    std::size_t cin = stem_out;
    for (const auto& st : spec_.block_plan) {
        const std::size_t cout = spec_.scaled(st.channels);
        for (std::size_t i = 0; i < st.repeats; ++i) {
            nn::InvertedResidualConfig cfg;
            cfg.in_channels = cin;
            cfg.out_channels = cout;
            cfg.expand_ratio = st.expand_ratio;
            cfg.stride = i == 0 ? st.stride : 1;
            cfg.use_se = spec_.use_se;
            cfg.se_reduction = spec_.se_reduction;
            blocks.emplace_back(cfg);
            cin = cout;
        }
    }
    const std::size_t head_out = spec_.scaled(spec_.head_channels);
    head = nn::Conv2d(cin, head_out, 1, 1, 1);
    head_bn = nn::BatchNorm(head_out);
    classifier = nn::Linear(head_out, spec_.num_classes);
}

void Model::check_input(const Tensor& batch) const
{
    const std::size_t s = spec_.input_size;
    if (batch.rank() != 4 || batch.c() != 3 || batch.h() != s || batch.w() != s)
        throw ShapeError("model expects input (N,3," + std::to_string(s) + "," + std::to_string(s) +
                         "), got " + batch.shape().str());
}

Tensor Model::infer(const Tensor& batch) const
{
    check_input(batch);
    using nn::Activation;
    Tensor h = nn::activation(Activation::relu6, stem_bn.infer(stem.forward(batch, false).first), false).first;
    for (const auto& b : blocks)
        h = b.infer(h);
    h = nn::activation(Activation::relu6, head_bn.infer(head.forward(h, false).first), false).first;
    h = nn::global_avg_pool(h, false).first;
    Tensor logits = classifier.forward(h, false).first;
    ensure_finite(logits, "model logits");
    return logits;
}

Model::TrainOutput Model::forward_train(const Tensor& batch, Rng& rng)
{
    check_input(batch);
    using nn::Activation;
    using nn::Mode;
    TrainOutput out;
    auto& tp = out.tape;
    auto [s0, t0] = stem.forward(batch);
    auto [s1, t1] = stem_bn.forward(s0, Mode::train);
    auto [h, t2] = nn::activation(Activation::relu6, s1);
    tp.stem = std::move(t0);
    tp.stem_bn = std::move(t1);
    tp.stem_act = std::move(t2);
    tp.blocks.reserve(blocks.size());
    for (auto& b : blocks) {
        auto [y, t] = b.forward(h, Mode::train);
        h = std::move(y);
        tp.blocks.push_back(std::move(t));
    }
    auto [h0, t3] = head.forward(h);
    auto [h1, t4] = head_bn.forward(h0, Mode::train);
    auto [h2, t5] = nn::activation(Activation::relu6, h1);
    auto [pooled, t6] = nn::global_avg_pool(h2);
    auto [dropped, t7] = nn::dropout(pooled, spec_.dropout, Mode::train, &rng);
    auto [logits, t8] = classifier.forward(dropped);
    tp.head = std::move(t3);
    tp.head_bn = std::move(t4);
    tp.head_act = std::move(t5);
    tp.pool = std::move(t6);
    tp.dropout = std::move(t7);
    tp.classifier = std::move(t8);
    ensure_finite(logits, "model logits");
    out.logits = std::move(logits);
    return out;
}

void Model::backward(ModelTape& tape, const Tensor& grad_logits)
{
    Tensor d = classifier.backward(tape.classifier, grad_logits);
    d = nn::dropout_backward(tape.dropout, d);
    d = nn::global_avg_pool_backward(tape.pool, d);
    d = nn::activation_backward(tape.head_act, d);
    d = head_bn.backward(tape.head_bn, d);
    d = head.backward(tape.head, d);
    for (std::size_t i = blocks.size(); i-- > 0;)
        d = blocks[i].backward(tape.blocks[i], d);
    d = nn::activation_backward(tape.stem_act, d);
    d = stem_bn.backward(tape.stem_bn, d);
    stem.backward(tape.stem, d);
}

std::vector<nn::NamedParam> Model::parameters()
{
    std::vector<nn::NamedParam> params;
    std::vector<nn::NamedBuffer> ignored;
    stem.collect("stem.conv", params);
    stem_bn.collect("stem.bn", params, ignored);
    for (std::size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect("blocks." + std::to_string(i), params, ignored);
    head.collect("head.conv", params);
    head_bn.collect("head.bn", params, ignored);
    classifier.collect("classifier", params);
    return params;
}

std::vector<nn::NamedBuffer> Model::buffers()
{
    std::vector<nn::NamedParam> ignored;
    std::vector<nn::NamedBuffer> bufs;
    stem_bn.collect("stem.bn", ignored, bufs);
    for (std::size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect("blocks." + std::to_string(i), ignored, bufs);
    head_bn.collect("head.bn", ignored, bufs);
    return bufs;
}

void Model::zero_grad()
{
    for (auto& p : parameters())
        p.param->zero_grad();
}

Model build_model(const ModelSpec& spec, Rng& rng)
{
    Model m(spec);
    m.stem.init(rng);
    for (auto& b : m.blocks)
        b.init(rng);
    m.head.init(rng);
    m.classifier.init(rng);
    return m;
}

// ---------------------------------------------------------------------------

namespace {

struct Counter {
    ParamStats stats;
    void add(std::string name, std::size_t n)
    {
        stats.param_count += n;
        stats.per_layer.push_back({std::move(name), n});
    }
    void conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t groups)
    {
        add(name, cout * (cin / groups) * k * k);
    }
    void bn(const std::string& name, std::size_t c)
    {
        add(name, 2 * c);
        stats.buffer_count += 2 * c;
    }
    void linear(const std::string& name, std::size_t in, std::size_t out) { add(name, in * out + out); }
};

} // namespace

ParamStats param_stats(const ModelSpec& spec)
{
    spec.validate();
    Counter c;
    const std::size_t stem_out = spec.scaled(spec.stem_channels);
    c.conv("stem.conv", 3, stem_out, 3, 1);
    c.bn("stem.bn", stem_out);
    std::size_t cin = stem_out, idx = 0;
    for (const auto& st : spec.block_plan) {
        const std::size_t cout = spec.scaled(st.channels);
        for (std::size_t i = 0; i < st.repeats; ++i, ++idx) {
            const std::string p = "blocks." + std::to_string(idx);
            const std::size_t hidden = cin * st.expand_ratio;
            if (st.expand_ratio != 1) {
                c.conv(p + ".expand", cin, hidden, 1, 1);
                c.bn(p + ".expand_bn", hidden);
            }
            c.conv(p + ".depthwise", hidden, hidden, 3, hidden);
            c.bn(p + ".depthwise_bn", hidden);
            if (spec.use_se) {
                const std::size_t sq = nn::se_squeeze_width(hidden, spec.se_reduction);
                c.linear(p + ".se.reduce", hidden, sq);
                c.linear(p + ".se.expand", sq, hidden);
            }
            c.conv(p + ".project", hidden, cout, 1, 1);
            c.bn(p + ".project_bn", cout);
            cin = cout;
        }
    }
    const std::size_t head_out = spec.scaled(spec.head_channels);
    c.conv("head.conv", cin, head_out, 1, 1);
    c.bn("head.bn", head_out);
    c.linear("classifier", head_out, spec.num_classes);
    c.stats.bytes_f32 = 4 * c.stats.param_count;
    return c.stats;
}

ParamStats param_stats(Model& model)
{
    ParamStats s;
    for (const auto& p : model.parameters()) {
        const std::size_t n = p.param->value.numel();
        s.param_count += n;
        std::string layer = p.name.substr(0, p.name.rfind('.'));
        if (!s.per_layer.empty() && s.per_layer.back().name == layer)
            s.per_layer.back().params += n;
        else
            s.per_layer.push_back({std::move(layer), n});
    }
    for (const auto& b : model.buffers())
        s.buffer_count += b.buffer->numel();
    s.bytes_f32 = 4 * s.param_count;
    return s;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization

namespace {

template <typename T>
void put(std::string& out, T v)
{
    static_assert(std::is_integral_v<T> || std::is_same_v<T, float>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(std::begin(bytes), std::end(bytes));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& s) : s_(s) {}

    template <typename T>
    T get(const char* what)
    {
        need(sizeof(T), what);
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, s_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big)
            std::reverse(std::begin(bytes), std::end(bytes));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, bytes, sizeof(T));
        return v;
    }

    std::string_view bytes(std::size_t n, const char* what)
    {
        need(n, what);
        std::string_view v(s_.data() + pos_, n);
        pos_ += n;
        return v;
    }

    bool at_end() const noexcept { return pos_ == s_.size(); }

private:
    void need(std::size_t n, const char* what) const
    {
        if (s_.size() - pos_ < n)
            throw DataError(std::string("checkpoint truncated while reading ") + what);
    }

    const std::string& s_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view payload)
{
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
}

void put_tensor(std::string& out, const std::string& name, const Tensor& t)
{
    if (name.size() > 0xffff)
        throw UsageError("checkpoint tensor name too long: " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape().dims())
        put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    std::string payload;
    payload.reserve(t.numel() * 4);
    for (real v : t.data())
        put<float>(payload, static_cast<float>(v)); // stored as f32 regardless of build
    put<std::uint32_t>(out, crc_of(payload));
    out += payload;
}

} // namespace

std::string serialize_checkpoint(Model& model, const CheckpointMeta& meta)
{
    std::vector<std::pair<std::string, const Tensor*>> entries;
    for (const auto& p : model.parameters())
        entries.emplace_back(p.name, &p.param->value);
    for (const auto& b : model.buffers())
        entries.emplace_back(b.name, b.buffer);

    std::string out(checkpoint_magic, sizeof(checkpoint_magic));
    put<std::uint32_t>(out, checkpoint_version);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries)
        put_tensor(out, name, *t);

    nlohmann::json block = {{"spec", model.spec().to_json()},
                            {"rng", {{"algorithm", meta.rng_algorithm}, {"seed", meta.seed}}},
                            {"config_digest", meta.config_digest},
                            {"extra", meta.extra}};
    const std::string text = block.dump();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    return out;
}

LoadedCheckpoint deserialize_checkpoint(const std::string& bytes)
{
    Reader r(bytes);
    const auto magic = r.bytes(sizeof(checkpoint_magic), "magic");
    if (magic != std::string_view(checkpoint_magic, sizeof(checkpoint_magic)))
        throw DataError("not a checkpoint file (bad magic)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != checkpoint_version)
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                        std::to_string(checkpoint_version) + ")");
    const auto count = r.get<std::uint32_t>("tensor count");

    std::map<std::string, Tensor> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint16_t>("name length");
        std::string name(r.bytes(name_len, "tensor name"));
        const auto rank = r.get<std::uint8_t>("rank");
        if (rank == 0 || rank > 4)
            throw DataError("checkpoint tensor " + name + " has invalid rank " + std::to_string(rank));
        std::vector<std::size_t> dims;
        for (std::uint8_t k = 0; k < rank; ++k)
            dims.push_back(r.get<std::uint32_t>("extent"));
        Shape shape(dims);
        const auto crc = r.get<std::uint32_t>("checksum");
        const auto payload = r.bytes(shape.numel() * 4, "tensor payload");
        if (crc_of(payload) != crc)
            throw DataError("checkpoint tensor " + name + " failed its CRC32 check");
        std::vector<float> data(shape.numel());
        for (std::size_t k = 0; k < data.size(); ++k) {
            unsigned char b[4];
            std::memcpy(b, payload.data() + 4 * k, 4);
            if constexpr (std::endian::native == std::endian::big)
                std::reverse(std::begin(b), std::end(b));
            std::memcpy(&data[k], b, 4);
        }
        if (!tensors.emplace(name, Tensor(shape, std::vector<real>(data.begin(), data.end()))).second)
            throw DataError("checkpoint has duplicate tensor " + name);
    }
    const auto text_len = r.get<std::uint32_t>("metadata length");
    const std::string text(r.bytes(text_len, "metadata block"));
    if (!r.at_end())
        throw DataError("checkpoint has trailing bytes after the metadata block");

    nlohmann::json block;
    try {
        block = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }
    LoadedCheckpoint loaded{Model(ModelSpec::from_json(block.at("spec"))), CheckpointMeta{}};
    loaded.meta.rng_algorithm = block.at("rng").at("algorithm").get<std::string>();
    loaded.meta.seed = block.at("rng").at("seed").get<std::uint64_t>();
    loaded.meta.config_digest = block.at("config_digest").get<std::string>();
    loaded.meta.extra = block.value("extra", nlohmann::json::object());

    auto assign = [&](const std::string& name, Tensor& dst) {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw DataError("checkpoint is missing tensor " + name);
        if (it->second.shape() != dst.shape())
            throw DataError("checkpoint tensor " + name + " has shape " + it->second.shape().str() +
                            " but the embedded spec requires " + dst.shape().str());
        dst = std::move(it->second);
        tensors.erase(it);
    };
    for (auto& p : loaded.model.parameters()) {
        assign(p.name, p.param->value);
        p.param->grad = Tensor(p.param->value.shape());
    }
    for (auto& b : loaded.model.buffers())
        assign(b.name, *b.buffer);
    if (!tensors.empty())
        throw DataError("checkpoint has unexpected tensor " + tensors.begin()->first);
    return loaded;
}

void save_checkpoint(Model& model, const CheckpointMeta& meta, const std::filesystem::path& path)
{
    const std::string bytes = serialize_checkpoint(model, meta);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw DataError("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f)
        throw DataError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw DataError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize_checkpoint(ss.str());
}

} // namespace mmnet

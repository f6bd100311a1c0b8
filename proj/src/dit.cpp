#include "mate/dit.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>

#include "mate/rng.hpp"

namespace mate::dit {

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw RangeError("model config: " + msg); };
    if (image_size == 0 || patch_size == 0 || channels == 0 || embed_dim == 0 || heads == 0 || num_blocks == 0 ||
        mlp_ratio == 0)
        fail("all sizes must be positive");
    if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
    if (embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
    if (head_dim() % 4 != 0) fail("head dim must be divisible by 4 for 2-D RoPE");
    if (embed_dim % 2 != 0) fail("embed_dim must be even for the timestep embedding");
    if (lora_rank > embed_dim) fail("lora_rank cannot exceed embed_dim");
}

namespace {

template <typename Params, typename F>
void visit_model(Params& p, F&& f) {
    f("patch.weight", p.patch_w);
    f("patch.bias", p.patch_b);
    f("time.w1", p.time_w1);
    f("time.b1", p.time_b1);
    f("time.w2", p.time_w2);
    f("time.b2", p.time_b2);
    f("null_token", p.null_token);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        const std::string pre = "blocks." + std::to_string(i) + ".";
        f(pre + "norm1.gain", b.norm1_gain);
        f(pre + "norm1.bias", b.norm1_bias);
        f(pre + "q.weight", b.q_w);
        f(pre + "q.bias", b.q_b);
        f(pre + "k.weight", b.k_w);
        f(pre + "k.bias", b.k_b);
        f(pre + "v.weight", b.v_w);
        f(pre + "v.bias", b.v_b);
        f(pre + "out.weight", b.out_w);
        f(pre + "out.bias", b.out_b);
        f(pre + "norm2.gain", b.norm2_gain);
        f(pre + "norm2.bias", b.norm2_bias);
        f(pre + "mlp_in.weight", b.mlp_in_w);
        f(pre + "mlp_in.bias", b.mlp_in_b);
        f(pre + "mlp_out.weight", b.mlp_out_w);
        f(pre + "mlp_out.bias", b.mlp_out_b);
        f(pre + "mod.weight", b.mod_w);
        f(pre + "mod.bias", b.mod_b);
    }
    f("final.gain", p.final_gain);
    f("final.bias", p.final_bias);
    f("final_mod.weight", p.final_mod_w);
    f("final_mod.bias", p.final_mod_b);
    f("head.weight", p.head_w);
    f("head.bias", p.head_b);
}

template <typename Params, typename F>
void visit_lora(Params& p, F&& f) {
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        const std::string pre = "blocks." + std::to_string(i) + ".";
        for (auto [tag, ad] : {std::pair{"q", &b.q}, std::pair{"k", &b.k}, std::pair{"v", &b.v}, std::pair{"out", &b.out}}) {
            f(pre + tag + ".lora_b", ad->b);
            f(pre + tag + ".lora_a", ad->a);
        }
    }
}

enum class Init { normal, zero, one };

template <typename T>
ModelParams<T> model_skeleton(const ModelConfig& c, std::vector<Init>* kinds) {
    c.validate();
    const std::size_t d = c.embed_dim, p = c.patch_dim(), h = d * c.mlp_ratio;
    ModelParams<T> m;
    m.config = c;
    auto make = [&](Shape s, Init k) {
        if (kinds) kinds->push_back(k);
        return Tensor<T>::zeros(std::move(s));
    };
    // Construction order must match visit_model.
    m.patch_w = make({p, d}, Init::normal);
    m.patch_b = make({d}, Init::zero);
    m.time_w1 = make({d, d}, Init::normal);
    m.time_b1 = make({d}, Init::zero);
    m.time_w2 = make({d, d}, Init::normal);
    m.time_b2 = make({d}, Init::zero);
    m.null_token = make({1, d}, Init::normal);
    m.blocks.resize(c.num_blocks);
    for (auto& b : m.blocks) {
        b.norm1_gain = make({d}, Init::one);
        b.norm1_bias = make({d}, Init::zero);
        b.q_w = make({d, d}, Init::normal);
        b.q_b = make({d}, Init::zero);
        b.k_w = make({d, d}, Init::normal);
        b.k_b = make({d}, Init::zero);
        b.v_w = make({d, d}, Init::normal);
        b.v_b = make({d}, Init::zero);
        b.out_w = make({d, d}, Init::normal);
        b.out_b = make({d}, Init::zero);
        b.norm2_gain = make({d}, Init::one);
        b.norm2_bias = make({d}, Init::zero);
        b.mlp_in_w = make({d, h}, Init::normal);
        b.mlp_in_b = make({h}, Init::zero);
        b.mlp_out_w = make({h, d}, Init::normal);
        b.mlp_out_b = make({d}, Init::zero);
        b.mod_w = make({d, 6 * d}, Init::zero);
        b.mod_b = make({6 * d}, Init::zero);
    }
    m.final_gain = make({d}, Init::one);
    m.final_bias = make({d}, Init::zero);
    m.final_mod_w = make({d, 2 * d}, Init::zero);
    m.final_mod_b = make({2 * d}, Init::zero);
    m.head_w = make({d, p}, Init::zero);
    m.head_b = make({p}, Init::zero);
    return m;
}

template <typename T>
LoraParams<T> lora_skeleton(const ModelConfig& c) {
    c.validate();
    if (c.lora_rank == 0) throw RangeError("model config: lora_rank must be positive to build adapters");
    const std::size_t d = c.embed_dim, r = c.lora_rank;
    LoraParams<T> l;
    l.config = c;
    l.blocks.resize(c.num_blocks);
    for (auto& b : l.blocks)
        for (auto* ad : {&b.q, &b.k, &b.v, &b.out}) {
            ad->b = Tensor<T>::zeros({d, r});
            ad->a = Tensor<T>::zeros({r, d});
        }
    return l;
}

template <typename T>
void fill_truncated_normal(Tensor<T>& t, Rng& rng, double stddev) {
    for (auto& v : t.mutable_data()) {
        double z;
        do {
            z = rng.normal();
        } while (std::abs(z) > 2.0);
        v = static_cast<T>(z * stddev);
    }
}

constexpr double kInitStd = 0.02;

}  // namespace

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> ModelParams<T>::named() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    visit_model(*this, [&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, &t); });
    return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> ModelParams<T>::named() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    visit_model(*this, [&](const std::string& n, const Tensor<T>& t) { out.emplace_back(n, &t); });
    return out;
}

template <typename T>
void ModelParams<T>::set_requires_grad(bool on) {
    for (auto& [name, t] : named()) t->set_requires_grad(on);
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
    ModelParams<U> out = model_skeleton<U>(config, nullptr);
    auto dst = out.named();
    auto src = named();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
    return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> LoraParams<T>::named() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    visit_lora(*this, [&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, &t); });
    return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> LoraParams<T>::named() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    visit_lora(*this, [&](const std::string& n, const Tensor<T>& t) { out.emplace_back(n, &t); });
    return out;
}

template <typename T>
void LoraParams<T>::set_requires_grad(bool on) {
    for (auto& [name, t] : named()) t->set_requires_grad(on);
}

template <typename T>
template <typename U>
LoraParams<U> LoraParams<T>::cast() const {
    LoraParams<U> out = lora_skeleton<U>(config);
    auto dst = out.named();
    auto src = named();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
    return out;
}

template <typename T>
ModelParams<T> init_model(const ModelConfig& config, std::uint64_t seed) {
    std::vector<Init> kinds;
    ModelParams<T> m = model_skeleton<T>(config, &kinds);
    Rng rng(seed);
    auto named = m.named();
    for (std::size_t i = 0; i < named.size(); ++i) {
        Tensor<T>& t = *named[i].second;
        switch (kinds[i]) {
            case Init::normal:
                fill_truncated_normal(t, rng, kInitStd);
                break;
            case Init::one:
                for (auto& v : t.mutable_data()) v = T(1);
                break;
            case Init::zero:
                break;
        }
    }
    return m;
}

template <typename T>
LoraParams<T> init_lora(const ModelConfig& config, std::uint64_t seed) {
    LoraParams<T> l = lora_skeleton<T>(config);
    Rng rng(seed);
    for (auto& b : l.blocks)
        for (auto* ad : {&b.q, &b.k, &b.v, &b.out}) fill_truncated_normal(ad->b, rng, kInitStd);
    return l;
}

std::vector<GridPos> grid_positions(const ModelConfig& config) {
    conditioning::SequenceLayout layout;
    layout.image = config.tokens();
    return conditioning::stream_positions(layout, config.grid());
}

template <typename T>
Tensor<T> patchify(const imaging::ImagePlane& img, const ModelConfig& config) {
    config.validate();
    if (img.width != static_cast<int>(config.image_size) || img.height != static_cast<int>(config.image_size) ||
        img.channels != static_cast<int>(config.channels))
        throw DimensionError("patchify: image " + std::to_string(img.width) + "x" + std::to_string(img.height) + "x" +
                             std::to_string(img.channels) + " does not match model " +
                             std::to_string(config.image_size) + "x" + std::to_string(config.image_size) + "x" +
                             std::to_string(config.channels));
    const std::size_t g = config.grid(), ps = config.patch_size, ch = config.channels, pd = config.patch_dim();
    std::vector<T> out(config.tokens() * pd);
    for (std::size_t gy = 0; gy < g; ++gy)
        for (std::size_t gx = 0; gx < g; ++gx) {
            T* tok = out.data() + (gy * g + gx) * pd;
            for (std::size_t y = 0; y < ps; ++y)
                for (std::size_t x = 0; x < ps; ++x)
                    for (std::size_t c = 0; c < ch; ++c) {
                        const auto s = img.at(static_cast<int>(gx * ps + x), static_cast<int>(gy * ps + y), static_cast<int>(c));
                        tok[(y * ps + x) * ch + c] = static_cast<T>(static_cast<float>(s) / 127.5f - 1.0f);
                    }
        }
    return Tensor<T>({config.tokens(), pd}, std::move(out));
}

std::vector<float> unpatchify_values(const Tensor<float>& tokens, const ModelConfig& config) {
    if (tokens.rank() != 2 || tokens.rows() != config.tokens() || tokens.cols() != config.patch_dim())
        throw DimensionError("unpatchify: tokens " + shape_string(tokens.shape()) + " do not match model config");
    const std::size_t g = config.grid(), ps = config.patch_size, ch = config.channels, pd = config.patch_dim();
    const std::size_t w = config.image_size;
    std::vector<float> out(w * w * ch);
    auto src = tokens.data();
    for (std::size_t gy = 0; gy < g; ++gy)
        for (std::size_t gx = 0; gx < g; ++gx)
            for (std::size_t y = 0; y < ps; ++y)
                for (std::size_t x = 0; x < ps; ++x)
                    for (std::size_t c = 0; c < ch; ++c)
                        out[((gy * ps + y) * w + gx * ps + x) * ch + c] = src[(gy * g + gx) * pd + (y * ps + x) * ch + c];
    return out;
}

imaging::ImagePlane unpatchify(const Tensor<float>& tokens, const ModelConfig& config) {
    const int w = static_cast<int>(config.image_size);
    return imaging::from_unit_range(unpatchify_values(tokens, config), w, w, static_cast<int>(config.channels));
}

imaging::ImagePlane depth_as_image(const imaging::ImagePlane& depth, const ModelConfig& config) {
    if (depth.channels == static_cast<int>(config.channels)) return depth;
    if (depth.channels == 1 && config.channels == 3) return imaging::gray_to_rgb(depth);
    throw DimensionError("depth map channels do not match the model");
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const conditioning::LoraAdapter<T>* lora,
                 double lora_weight) {
    const Tensor<T>& eff = (lora != nullptr && lora_weight != 0.0) ? conditioning::apply_lora(w, *lora, lora_weight) : w;
    return add_row(matmul(x, eff), b);
}

template <typename T>
Tensor<T> mma(const Tensor<T>& tokens, const RopeTable<T>& rope, const AttentionBias<T>& bias,
              const BlockParams<T>& block, std::size_t heads, const BlockLora<T>* lora, double lora_weight) {
    if (bias.dense && (bias.dense->rows() != tokens.rows()))
        throw DimensionError("mma: bias " + shape_string(bias.dense->shape()) + " for " +
                             std::to_string(tokens.rows()) + " tokens");
    auto q = linear(tokens, block.q_w, block.q_b, lora ? &lora->q : nullptr, lora_weight);
    auto k = linear(tokens, block.k_w, block.k_b, lora ? &lora->k : nullptr, lora_weight);
    auto v = linear(tokens, block.v_w, block.v_b, lora ? &lora->v : nullptr, lora_weight);
    q = rope_rotate(q, rope, heads);
    k = rope_rotate(k, rope, heads);
    auto a = attention(q, k, v, heads, bias);
    return linear(a, block.out_w, block.out_b, lora ? &lora->out : nullptr, lora_weight);
}

template <typename T>
Tensor<T> timestep_embedding(double t, std::size_t dim) {
    const std::size_t half = dim / 2;
    std::vector<T> e(dim, T(0));
    const double arg = t * 1000.0;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e[i] = static_cast<T>(std::cos(arg * freq));
        e[i + half] = static_cast<T>(std::sin(arg * freq));
    }
    return Tensor<T>({1, dim}, std::move(e));
}

template <typename T>
Tensor<T> time_conditioning(const ModelParams<T>& params, double t) {
    auto e = timestep_embedding<T>(t, params.config.embed_dim);
    auto h = silu(linear(e, params.time_w1, params.time_b1));
    return silu(linear(h, params.time_w2, params.time_b2));
}

namespace {

template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scl) {
    return add_row(mul_row(x, add_scalar(scl, T(1))), shift);
}

}  // namespace

template <typename T>
Tensor<T> dit_block(const Tensor<T>& tokens, const Tensor<T>& time_cond, const RopeTable<T>& rope,
                    const AttentionBias<T>& bias, const BlockParams<T>& block, std::size_t heads,
                    const BlockLora<T>* lora, double lora_weight) {
    const std::size_t d = tokens.cols();
    auto mod = reshape(linear(time_cond, block.mod_w, block.mod_b), {6, d});
    auto row = [&](std::size_t i) { return slice_rows(mod, i, 1); };

    auto h = layer_norm(tokens, &block.norm1_gain, &block.norm1_bias);
    h = modulate(h, row(0), row(1));
    auto x = add(tokens, mul_row(mma(h, rope, bias, block, heads, lora, lora_weight), row(2)));

    auto h2 = modulate(layer_norm(x, &block.norm2_gain, &block.norm2_bias), row(3), row(4));
    auto m = linear(gelu(linear(h2, block.mlp_in_w, block.mlp_in_b)), block.mlp_out_w, block.mlp_out_b);
    return add(x, mul_row(m, row(5)));
}

template <typename T>
Tensor<T> predict_velocity(const ModelParams<T>& params, const LoraParams<T>* lora, const Tensor<T>& x_tokens,
                           double t, const Conditions<T>& conditions, const VelocityOptions& options) {
    const ModelConfig& cfg = params.config;
    if (x_tokens.rank() != 2 || x_tokens.rows() != cfg.tokens() || x_tokens.cols() != cfg.patch_dim())
        throw DimensionError("predict_velocity: x tokens " + shape_string(x_tokens.shape()) + " do not match model");
    conditioning::check_gamma(options.gamma);
    if (lora && lora->blocks.size() != params.blocks.size())
        throw DimensionError("predict_velocity: adapter has " + std::to_string(lora->blocks.size()) + " blocks, model " +
                             std::to_string(params.blocks.size()));

    auto embed = [&](const Tensor<T>& patches) { return linear(patches, params.patch_w, params.patch_b); };
    auto nulls = [&](std::size_t n) {
        std::vector<std::size_t> idx(n, 0);
        return gather_rows(params.null_token, std::span<const std::size_t>(idx));
    };
    auto stream = [&](const Tensor<T>& patches) -> Tensor<T> {
        if (!patches.defined()) return {};
        if (patches.rank() != 2 || patches.cols() != cfg.patch_dim())
            throw DimensionError("predict_velocity: condition patches " + shape_string(patches.shape()));
        return conditions.drop ? nulls(patches.rows()) : embed(patches);
    };

    auto seq = conditioning::assemble_sequence(stream(conditions.material), embed(x_tokens), stream(conditions.depth),
                                               cfg.grid());
    AttentionBias<T> bias;
    if (seq.layout.material > 0) bias = conditioning::cross_bias_structured<T>(options.gamma, seq.layout);
    const RopeTable<T> rope(seq.positions, cfg.head_dim());
    const auto tc = time_conditioning(params, t);

    Tensor<T> x = seq.tokens;
    for (std::size_t b = 0; b < params.blocks.size(); ++b)
        x = dit_block(x, tc, rope, bias, params.blocks[b], cfg.heads, lora ? &lora->blocks[b] : nullptr,
                      options.lora_weight);

    if (seq.layout.total() != seq.layout.image) x = slice_rows(x, seq.layout.image_begin(), seq.layout.image);
    auto fm = reshape(linear(tc, params.final_mod_w, params.final_mod_b), {2, std::size_t(cfg.embed_dim)});
    auto h = modulate(layer_norm(x, &params.final_gain, &params.final_bias), slice_rows(fm, 0, 1), slice_rows(fm, 1, 1));
    return linear(h, params.head_w, params.head_b);
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    bool done() const { return pos == bytes.size(); }
    void need(std::size_t n, const char* what) const {
        if (bytes.size() - pos < n) throw FormatError(std::string("checkpoint: truncated ") + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
};

constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxName = 4096;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out(ckpt.magic, ckpt.magic + 4);
    put_u32(out, ckpt.version);
    const auto& c = ckpt.config;
    for (std::uint32_t v : {c.image_size, c.patch_size, c.channels, c.embed_dim, c.heads, c.num_blocks, c.mlp_ratio,
                            c.lora_rank})
        put_u32(out, v);
    for (const auto& blob : ckpt.blobs) {
        put_u32(out, static_cast<std::uint32_t>(blob.name.size()));
        out.insert(out.end(), blob.name.begin(), blob.name.end());
        put_u32(out, static_cast<std::uint32_t>(blob.shape.size()));
        for (auto e : blob.shape) put_u32(out, e);
        for (float f : blob.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    Checkpoint ck;
    r.need(4, "magic");
    std::copy(bytes.begin(), bytes.begin() + 4, ck.magic);
    r.pos = 4;
    if (!std::equal(ck.magic, ck.magic + 4, kModelMagic) && !std::equal(ck.magic, ck.magic + 4, kLoraMagic))
        throw FormatError("checkpoint: bad magic");
    ck.version = r.u32("version");
    if (ck.version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(ck.version));
    auto& c = ck.config;
    for (std::uint32_t* f : {&c.image_size, &c.patch_size, &c.channels, &c.embed_dim, &c.heads, &c.num_blocks,
                             &c.mlp_ratio, &c.lora_rank})
        *f = r.u32("config");
    while (!r.done()) {
        NamedBlob blob;
        const std::uint32_t name_len = r.u32("name length");
        if (name_len == 0 || name_len > kMaxName) throw FormatError("checkpoint: bad blob name length");
        r.need(name_len, "name");
        blob.name.assign(bytes.begin() + r.pos, bytes.begin() + r.pos + name_len);
        r.pos += name_len;
        const std::uint32_t rank = r.u32("rank");
        if (rank == 0 || rank > kMaxRank) throw FormatError("checkpoint: bad rank for " + blob.name);
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            blob.shape.push_back(r.u32("extent"));
            if (blob.shape.back() == 0) throw FormatError("checkpoint: zero extent in " + blob.name);
            n *= blob.shape.back();
        }
        r.need(n * 4, "tensor data");
        blob.data.resize(n);
        for (auto& f : blob.data) f = std::bit_cast<float>(r.u32("tensor data"));
        ck.blobs.push_back(std::move(blob));
    }
    return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

namespace {

template <typename Named>
std::vector<NamedBlob> to_blobs(const Named& named) {
    std::vector<NamedBlob> blobs;
    for (const auto& [name, t] : named) {
        NamedBlob b;
        b.name = name;
        for (auto e : t->shape()) b.shape.push_back(static_cast<std::uint32_t>(e));
        b.data.assign(t->data().begin(), t->data().end());
        blobs.push_back(std::move(b));
    }
    return blobs;
}

template <typename Named>
void from_blobs(const Checkpoint& ck, Named named) {
    std::map<std::string, const NamedBlob*> by_name;
    for (const auto& b : ck.blobs)
        if (!by_name.emplace(b.name, &b).second) throw FormatError("checkpoint: duplicate tensor " + b.name);
    if (by_name.size() != named.size())
        throw FormatError("checkpoint: expected " + std::to_string(named.size()) + " tensors, found " +
                          std::to_string(by_name.size()));
    for (auto& [name, t] : named) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint: missing tensor " + name);
        Shape s(it->second->shape.begin(), it->second->shape.end());
        if (s != t->shape())
            throw FormatError("checkpoint: tensor " + name + " has shape " + shape_string(s) + ", expected " +
                              shape_string(t->shape()));
        *t = Tensor<float>(std::move(s), it->second->data);
    }
}

}  // namespace

Checkpoint to_checkpoint(const ModelParams<float>& params) {
    Checkpoint ck;
    std::copy(kModelMagic, kModelMagic + 4, ck.magic);
    ck.config = params.config;
    ck.blobs = to_blobs(params.named());
    return ck;
}

Checkpoint to_checkpoint(const LoraParams<float>& lora) {
    Checkpoint ck;
    std::copy(kLoraMagic, kLoraMagic + 4, ck.magic);
    ck.config = lora.config;
    ck.blobs = to_blobs(lora.named());
    return ck;
}

ModelParams<float> model_from_checkpoint(const Checkpoint& ck) {
    if (!std::equal(ck.magic, ck.magic + 4, kModelMagic)) throw FormatError("checkpoint: not a model checkpoint");
    ModelParams<float> m = model_skeleton<float>(ck.config, nullptr);
    from_blobs(ck, m.named());
    return m;
}

LoraParams<float> lora_from_checkpoint(const Checkpoint& ck) {
    if (!std::equal(ck.magic, ck.magic + 4, kLoraMagic)) throw FormatError("checkpoint: not a LoRA checkpoint");
    LoraParams<float> l = lora_skeleton<float>(ck.config);
    from_blobs(ck, l.named());
    return l;
}

void save_model(const ModelParams<float>& params, const std::filesystem::path& path) {
    write_checkpoint(to_checkpoint(params), path);
}

ModelParams<float> load_model(const std::filesystem::path& path) { return model_from_checkpoint(read_checkpoint(path)); }

void save_lora(const LoraParams<float>& lora, const std::filesystem::path& path) {
    write_checkpoint(to_checkpoint(lora), path);
}

LoraParams<float> load_lora(const std::filesystem::path& path) { return lora_from_checkpoint(read_checkpoint(path)); }

#define MATE_INSTANTIATE_DIT(T)                                                                                  \
    template struct ModelParams<T>;                                                                             \
    template struct LoraParams<T>;                                                                              \
    template ModelParams<T> init_model(const ModelConfig&, std::uint64_t);                                      \
    template LoraParams<T> init_lora(const ModelConfig&, std::uint64_t);                                        \
    template Tensor<T> patchify(const imaging::ImagePlane&, const ModelConfig&);                                \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                            \
                              const conditioning::LoraAdapter<T>*, double);                                     \
    template Tensor<T> mma(const Tensor<T>&, const RopeTable<T>&, const AttentionBias<T>&, const BlockParams<T>&, \
                           std::size_t, const BlockLora<T>*, double);                                           \
    template Tensor<T> timestep_embedding(double, std::size_t);                                                 \
    template Tensor<T> time_conditioning(const ModelParams<T>&, double);                                        \
    template Tensor<T> dit_block(const Tensor<T>&, const Tensor<T>&, const RopeTable<T>&, const AttentionBias<T>&, \
                                 const BlockParams<T>&, std::size_t, const BlockLora<T>*, double);              \
    template Tensor<T> predict_velocity(const ModelParams<T>&, const LoraParams<T>*, const Tensor<T>&, double,  \
                                        const Conditions<T>&, const VelocityOptions&);

MATE_INSTANTIATE_DIT(float)
MATE_INSTANTIATE_DIT(double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template LoraParams<double> LoraParams<float>::cast<double>() const;
template LoraParams<float> LoraParams<double>::cast<float>() const;

}  // namespace mate::dit

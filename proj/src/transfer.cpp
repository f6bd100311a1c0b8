#include "mate/transfer.hpp"

#include <cstdio>

#include "mate/conditioning.hpp"
#include "mate/rng.hpp"

namespace mate::transfer {

namespace {
constexpr std::uint64_t kBlendTag = 0x626c656e64ULL;  // "blend"
}

std::string to_string(InitMode m) {
    switch (m) {
        case InitMode::illumination: return "illumination";
        case InitMode::raw_input: return "raw-input";
        case InitMode::pure_noise: return "pure-noise";
    }
    return "?";
}

InitMode parse_init_mode(const std::string& s) {
    for (auto m : {InitMode::illumination, InitMode::raw_input, InitMode::pure_noise})
        if (to_string(m) == s) return m;
    throw RangeError("unknown init mode '" + s + "'");
}

imaging::ImagePlane run_transfer(const dit::ModelParams<float>& model, const dit::LoraParams<float>* lora,
                                 const TransferInputs& in, const TransferOptions& opt) {
    const auto& cfg = model.config;
    conditioning::check_gamma(opt.gamma);
    in.mask.validate();
    if (in.mask.width != in.input.width || in.mask.height != in.input.height)
        throw DimensionError("transfer: mask and input sizes differ");
    if (lora && !(lora->config == cfg)) throw FormatError("transfer: adapter was trained for a different model");

    const auto x_in = dit::patchify<float>(in.input, cfg);
    const auto material = dit::patchify<float>(in.material, cfg);
    Tensor<float> depth;
    if (lora && in.depth.width > 0) depth = dit::patchify<float>(dit::depth_as_image(in.depth, cfg), cfg);

    Tensor<float> z;
    double t_start = opt.t_start;
    switch (opt.init) {
        case InitMode::illumination:
            z = dit::patchify<float>(imaging::illumination_composite(in.input, in.mask), cfg);
            break;
        case InitMode::raw_input:
            z = x_in;
            break;
        case InitMode::pure_noise:
            z = x_in;
            t_start = 1.0;
            break;
    }
    const auto state = flow::init_from_illumination(z, t_start, opt.seed);

    flow::FlowConfig fc;
    fc.num_steps = opt.steps;
    fc.cfg_scale = opt.cfg_scale;
    fc.t_start = t_start;

    flow::LatentBlend<float> blend;
    blend.x_in = x_in;
    blend.token_mask = imaging::downsample_mask_to_tokens(in.mask, static_cast<int>(cfg.patch_size));
    blend.seed = derive_seed(opt.seed, {kBlendTag});

    const dit::VelocityOptions vo{opt.gamma, opt.lora_weight};
    auto velocity = [&](const Tensor<float>& x_t, double t, bool conditional) {
        dit::Conditions<float> c;
        if (opt.material_stream) c.material = material;
        c.depth = depth;
        c.drop = !conditional;
        return dit::predict_velocity<float>(model, lora, x_t, t, c, vo);
    };
    const auto x0 = flow::sample<float>(velocity, state, fc, &blend);
    return imaging::final_background_replace(dit::unpatchify(x0, cfg), in.input, in.mask);
}

std::vector<SweepSetting> ablation_sweep(const std::string& name, const TransferOptions& base) {
    std::vector<SweepSetting> out;
    auto label = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    auto add = [&](std::string l, auto apply) {
        SweepSetting s{std::move(l), base};
        apply(s.options);
        out.push_back(std::move(s));
    };
    if (name == "gamma") {
        for (double g : {0.01, 0.5, 1.0, 1.8, 2.5}) add(label(g), [&](auto& o) { o.gamma = g; });
    } else if (name == "lora") {
        for (double w : {0.7, 0.8, 0.9, 1.0}) add(label(w), [&](auto& o) { o.lora_weight = w; });
    } else if (name == "cfg") {
        for (double c : {10.0, 20.0, 30.0, 40.0, 50.0}) add(label(c), [&](auto& o) { o.cfg_scale = c; });
    } else if (name == "init") {
        for (auto m : {InitMode::illumination, InitMode::raw_input, InitMode::pure_noise})
            add(to_string(m), [&](auto& o) { o.init = m; });
    } else {
        throw RangeError("unknown sweep '" + name + "' (expected gamma, lora, cfg or init)");
    }
    return out;
}

SweepResult run_sweep(const dit::ModelParams<float>& model, const dit::LoraParams<float>* lora,
                      const TransferInputs& in, const std::vector<SweepSetting>& settings) {
    SweepResult r;
    for (const auto& s : settings) r.images.push_back(run_transfer(model, lora, in, s.options));
    r.sheet = imaging::tile_grid(r.images, static_cast<int>(r.images.size()));
    return r;
}

}  // namespace mate::transfer

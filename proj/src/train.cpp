#include "mate/train.hpp"

#include <cmath>
#include <numeric>

#include "mate/flow.hpp"
#include "mate/rng.hpp"

namespace mate::synth {

namespace {

constexpr std::uint64_t kBatchTag = 0x6261746368ULL;  // "batch"
constexpr std::uint64_t kNoiseTag = 0x6e6f697365ULL;  // "noise"
constexpr std::uint64_t kLoraTag = 0x6c6f7261ULL;     // "lora"

template <typename Params, typename Velocity>
void run_training(std::span<const TrainExample> data, const TrainConfig& cfg, Params& trainable, bool with_depth,
                  const Velocity& velocity, const LossCallback& on_loss) {
    cfg.validate();
    if (cfg.steps > 0 && data.empty()) throw ContractError("train: empty dataset");
    auto named = trainable.named();
    std::vector<Tensor<float>*> ptrs;
    for (auto& [name, t] : named) ptrs.push_back(t);
    Adam adam(ptrs, cfg);

    for (int step = 1; step <= cfg.steps; ++step) {
        Rng rng(derive_seed(cfg.seed, {kBatchTag, std::uint64_t(step)}));
        std::vector<Tensor<float>> x0(cfg.batch);
        std::vector<const TrainExample*> items(cfg.batch);
        std::vector<bool> drop(cfg.batch);
        for (int b = 0; b < cfg.batch; ++b) {
            items[b] = &data[rng.below(data.size())];
            drop[b] = rng.uniform() < cfg.cond_dropout;
            x0[b] = items[b]->target;
        }
        auto model = [&](const Tensor<float>& x_t, double t, std::size_t item) {
            dit::Conditions<float> c;
            c.material = items[item]->material;
            if (with_depth) c.depth = items[item]->depth;
            c.drop = drop[item];
            return velocity(x_t, t, c);
        };
        double loss_value = 0.0;
        try {
            GradTape<float> tape;
            auto loss = flow::cfm_loss<float>(model, std::span<const Tensor<float>>(x0), derive_seed(cfg.seed, {kNoiseTag, std::uint64_t(step)}));
            loss_value = loss.item();
            tape.backward(loss);
            adam.step();
        } catch (const NumericsError& e) {
            throw DivergenceError(std::string("training diverged: ") + e.what(), step);
        }
        if (on_loss) on_loss(step, loss_value);
    }
}

}  // namespace

std::string to_string(Stage s) { return s == Stage::base ? "base" : "depth_lora"; }

Stage parse_stage(const std::string& s) {
    if (s == "base") return Stage::base;
    if (s == "depth_lora") return Stage::depth_lora;
    throw RangeError("unknown stage '" + s + "' (expected base or depth_lora)");
}

void TrainConfig::validate() const {
    if (steps < 0) throw RangeError("train: steps must be >= 0");
    if (batch <= 0) throw RangeError("train: batch must be positive");
    if (!(lr > 0) || !std::isfinite(lr)) throw RangeError("train: lr must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw RangeError("train: betas must lie in [0, 1)");
    if (!(eps > 0)) throw RangeError("train: eps must be positive");
    if (!(cond_dropout >= 0 && cond_dropout <= 1)) throw RangeError("train: condition dropout must lie in [0, 1]");
}

TrainExample make_example(const TrainSample& sample, const dit::ModelConfig& config) {
    TrainExample e;
    e.target = dit::patchify<float>(sample.target, config);
    e.material = dit::patchify<float>(sample.material, config);
    e.depth = dit::patchify<float>(dit::depth_as_image(sample.depth, config), config);
    return e;
}

Adam::Adam(std::vector<Tensor<float>*> params, const TrainConfig& cfg)
    : params_(std::move(params)), lr_(cfg.lr), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps) {
    for (auto* p : params_) {
        p->set_requires_grad(true);
        m_.emplace_back(p->numel(), 0.0f);
        v_.emplace_back(p->numel(), 0.0f);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    const float b1 = float(beta1_), b2 = float(beta2_);
    const float step_size = float(lr_ / c1);
    const float inv_c2 = float(1.0 / c2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto* p = params_[i];
        if (!p->has_grad()) continue;
        auto g = p->grad();
        auto w = p->mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (1 - b1) * g[j];
            v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
            w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_c2) + float(eps_));
        }
        p->zero_grad();
    }
}

dit::ModelParams<float> train_base(std::span<const TrainExample> data, const dit::ModelConfig& model,
                                   const TrainConfig& cfg, const LossCallback& on_loss) {
    if (cfg.stage != Stage::base) throw ContractError("train_base: config stage is not base");
    auto params = dit::init_model<float>(model, cfg.seed);
    const dit::VelocityOptions opts;
    run_training(data, cfg, params, false,
                 [&](const Tensor<float>& x_t, double t, const dit::Conditions<float>& c) {
                     return dit::predict_velocity<float>(params, nullptr, x_t, t, c, opts);
                 },
                 on_loss);
    params.set_requires_grad(false);
    return params;
}

dit::LoraParams<float> train_depth_lora(const dit::ModelParams<float>& base, std::span<const TrainExample> data,
                                        const TrainConfig& cfg, const LossCallback& on_loss) {
    if (cfg.stage != Stage::depth_lora) throw ContractError("train_depth_lora: config stage is not depth_lora");
    auto lora = dit::init_lora<float>(base.config, derive_seed(cfg.seed, {kLoraTag}));
    const dit::VelocityOptions opts;
    run_training(data, cfg, lora, true,
                 [&](const Tensor<float>& x_t, double t, const dit::Conditions<float>& c) {
                     return dit::predict_velocity<float>(base, &lora, x_t, t, c, opts);
                 },
                 on_loss);
    lora.set_requires_grad(false);
    return lora;
}

std::pair<double, double> smoothed_endpoints(std::span<const double> losses, std::size_t window) {
    if (losses.empty() || window == 0) throw ContractError("smoothed_endpoints: empty loss log");
    const std::size_t w = std::min(window, losses.size());
    const double first = std::accumulate(losses.begin(), losses.begin() + w, 0.0) / double(w);
    const double last = std::accumulate(losses.end() - w, losses.end(), 0.0) / double(w);
    return {first, last};
}

}  // namespace mate::synth

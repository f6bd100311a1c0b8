#include "mate/flow.hpp"

#include <cmath>
#include <string>

#include "mate/imaging.hpp"
#include "mate/ops.hpp"
#include "mate/rng.hpp"

namespace mate::flow {

namespace {

constexpr std::uint64_t kInitNoiseTag = 0x696e6974;   // "init"
constexpr std::uint64_t kBlendNoiseTag = 0x626c6e64;  // "blnd"

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
    for (T v : x.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

Weighting parse_weighting(const std::string& tag) {
    if (tag == "uniform") return Weighting::uniform;
    throw RangeError("unknown flow weighting policy '" + tag + "'");
}

std::string to_string(Weighting w) {
    switch (w) {
        case Weighting::uniform:
            break;
    }
    return "uniform";
}

void FlowConfig::validate() const {
    if (num_steps < 1) throw RangeError("num_steps must be >= 1, got " + std::to_string(num_steps));
    if (!(t_start > 0.0 && t_start <= 1.0)) throw RangeError("t_start must lie in (0, 1], got " + std::to_string(t_start));
    if (!(cfg_scale >= 0.0) || !std::isfinite(cfg_scale))
        throw RangeError("cfg scale must be a finite non-negative number, got " + std::to_string(cfg_scale));
}

template <typename T>
Tensor<T> forward_process(const Tensor<T>& x0, const Tensor<T>& eps, double t) {
    require_same_shape(x0, eps, "forward_process");
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("forward_process: t must lie in [0, 1], got " + std::to_string(t));
    return add(scale(x0, static_cast<T>(1.0 - t)), scale(eps, static_cast<T>(t)));
}

template <typename T>
Tensor<T> velocity_target(const Tensor<T>& x0, const Tensor<T>& eps) {
    require_same_shape(x0, eps, "velocity_target");
    return sub(eps, x0);
}

template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& v_cond, const Tensor<T>& v_uncond, double s) {
    require_same_shape(v_cond, v_uncond, "cfg_combine");
    if (s == 1.0) return v_cond;
    if (s == 0.0) return v_uncond;
    return add(v_uncond, scale(sub(v_cond, v_uncond), static_cast<T>(s)));
}

template <typename T>
FlowState<T> init_from_illumination(const Tensor<T>& z_illum, double t_start, std::uint64_t seed) {
    if (!(t_start > 0.0 && t_start <= 1.0))
        throw RangeError("init_from_illumination: t_start must lie in (0, 1], got " + std::to_string(t_start));
    auto eps = Tensor<T>::randn(z_illum.shape(), derive_seed(seed, {kInitNoiseTag}));
    return FlowState<T>{forward_process(z_illum, eps, t_start), t_start, seed};
}

template <typename T>
Tensor<T> cfm_loss(const TrainVelocityFn<T>& model, std::span<const Tensor<T>> x0_batch, std::uint64_t seed,
                   Weighting weighting) {
    if (x0_batch.empty()) throw ContractError("cfm_loss: empty batch");
    (void)weighting;  // uniform: w_t·λ'_t is constant and folds into plain velocity MSE
    Tensor<T> total;
    for (std::size_t b = 0; b < x0_batch.size(); ++b) {
        const Tensor<T>& x0 = x0_batch[b];
        if (x0.rank() != 2) throw DimensionError("cfm_loss: items must be [tokens x dim] matrices");
        Rng rng(derive_seed(seed, {b}));
        const double t = rng.uniform();
        auto eps = Tensor<T>::randn(x0.shape(), rng);
        auto x_t = forward_process(x0, eps, t);
        auto target = velocity_target(x0, eps);
        auto v = model(x_t, t, b);
        auto r = sub(v, target);
        auto item = scale(sum(mul(r, r)), T(1) / static_cast<T>(x0.rows()));
        total = total.defined() ? add(total, item) : item;
    }
    auto loss = scale(total, T(1) / static_cast<T>(x0_batch.size()));
    if (!std::isfinite(loss.item())) throw NumericsError("cfm_loss: non-finite loss");
    return loss;
}

template <typename T>
Tensor<T> sample(const GuidedVelocityFn<T>& model, const FlowState<T>& state, const FlowConfig& config,
                 const LatentBlend<T>* blend) {
    config.validate();
    if (!(state.t > 0.0 && state.t <= 1.0)) throw RangeError("sample: state time must lie in (0, 1]");
    if (blend) {
        if (blend->x_in.shape() != state.x.shape())
            throw DimensionError("sample: blend latent " + shape_string(blend->x_in.shape()) + " vs state " +
                                 shape_string(state.x.shape()));
        if (blend->token_mask.size() != state.x.rows())
            throw DimensionError("sample: token mask has " + std::to_string(blend->token_mask.size()) +
                                 " entries for " + std::to_string(state.x.rows()) + " tokens");
    }
    const int steps = config.num_steps;
    const double s = config.cfg_scale;
    Tensor<T> x = state.x;
    for (int i = 0; i < steps; ++i) {
        // t_i = t_start·(1 - i/steps), exact at both ends.
        const double t_now = state.t * static_cast<double>(steps - i) / steps;
        const double t_next = state.t * static_cast<double>(steps - i - 1) / steps;
        try {
            Tensor<T> v;
            if (s == 0.0) {
                v = model(x, t_now, false);
            } else if (s == 1.0) {
                v = model(x, t_now, true);
            } else {
                v = cfg_combine(model(x, t_now, true), model(x, t_now, false), s);
            }
            Tensor<T> x_gen = sub(x, scale(v, static_cast<T>(t_now - t_next)));
            if (blend) {
                auto eps = Tensor<T>::randn(x.shape(), derive_seed(blend->seed, {kBlendNoiseTag, std::uint64_t(i)}));
                auto x_in = forward_process(blend->x_in, eps, t_next);
                x = imaging::blend_step(x_gen, x_in, std::span<const T>(blend->token_mask));
            } else {
                x = x_gen;
            }
        } catch (const NumericsError& e) {
            throw DivergenceError(std::string("sampling diverged: ") + e.what(), static_cast<std::size_t>(i));
        }
        if (!all_finite(x)) throw DivergenceError("sampling diverged", static_cast<std::size_t>(i));
    }
    return x;
}

#define MATE_INSTANTIATE_FLOW(T)                                                                               \
    template Tensor<T> forward_process(const Tensor<T>&, const Tensor<T>&, double);                           \
    template Tensor<T> velocity_target(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> cfg_combine(const Tensor<T>&, const Tensor<T>&, double);                               \
    template FlowState<T> init_from_illumination(const Tensor<T>&, double, std::uint64_t);                    \
    template Tensor<T> cfm_loss(const TrainVelocityFn<T>&, std::span<const Tensor<T>>, std::uint64_t, Weighting); \
    template Tensor<T> sample(const GuidedVelocityFn<T>&, const FlowState<T>&, const FlowConfig&,             \
                              const LatentBlend<T>*);

MATE_INSTANTIATE_FLOW(float)
MATE_INSTANTIATE_FLOW(double)

}  // namespace mate::flow

#pragma once

// Rectified-flow forward process, flow-matching loss, and the guided Euler
// sampler with optional per-step latent blending.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mate/tensor.hpp"

namespace mate::flow {

enum class Weighting { uniform };

Weighting parse_weighting(const std::string& tag);
std::string to_string(Weighting w);

struct FlowConfig {
    int num_steps = 8;
    double cfg_scale = 30.0;
    double t_start = 0.9;
    Weighting weighting = Weighting::uniform;

    void validate() const;
};

template <typename T>
struct FlowState {
    Tensor<T> x;
    double t = 1.0;
    std::uint64_t rng_seed = 0;
};

// (1 - t)·x0 + t·eps
template <typename T>
Tensor<T> forward_process(const Tensor<T>& x0, const Tensor<T>& eps, double t);

// eps - x0, the constant d x_t / dt along the straight path.
template <typename T>
Tensor<T> velocity_target(const Tensor<T>& x0, const Tensor<T>& eps);

// v_uncond + s·(v_cond - v_uncond); s = 0 and s = 1 return the matching
// input unchanged.
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& v_cond, const Tensor<T>& v_uncond, double s);

template <typename T>
FlowState<T> init_from_illumination(const Tensor<T>& z_illum, double t_start, std::uint64_t seed);

// Velocity for batch item `item` at (x_t, t). Conditions are bound by the
// caller.
template <typename T>
using TrainVelocityFn = std::function<Tensor<T>(const Tensor<T>& x_t, double t, std::size_t item)>;

/// Flow-matching objective over a batch of clean token matrices [tokens×dim].
/// Per item, t ~ U(0,1) and eps ~ N(0, I) come from derive_seed(seed, {item});
/// the per-item loss is the squared velocity error summed over features and
/// averaged over tokens, then averaged over the batch.
template <typename T>
Tensor<T> cfm_loss(const TrainVelocityFn<T>& model, std::span<const Tensor<T>> x0_batch, std::uint64_t seed,
                   Weighting weighting = Weighting::uniform);

// Velocity at (x_t, t) with (conditional = true) or without conditions.
template <typename T>
using GuidedVelocityFn = std::function<Tensor<T>(const Tensor<T>& x_t, double t, bool conditional)>;

/// Background-preserving blend applied after every Euler step: the clean
/// input latent is noised to the step's target time with fresh noise drawn
/// from derive_seed(seed, {step}) and mixed in where token_mask < 1.
template <typename T>
struct LatentBlend {
    Tensor<T> x_in;            // clean input latent, same shape as the state
    std::vector<T> token_mask; // one weight per token row, 1 = generated
    std::uint64_t seed = 0;
};

// Euler integration with uniform steps from state.t to 0.
template <typename T>
Tensor<T> sample(const GuidedVelocityFn<T>& model, const FlowState<T>& state, const FlowConfig& config,
                 const LatentBlend<T>* blend = nullptr);

}  // namespace mate::flow

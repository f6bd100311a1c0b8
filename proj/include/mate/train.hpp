#pragma once

// Two-stage training: the base velocity network on (material, image) tokens,
// then depth LoRA adapters with the base frozen and depth tokens present.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mate/dit.hpp"
#include "mate/synth.hpp"

namespace mate::synth {

enum class Stage { base, depth_lora };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

struct TrainConfig {
    Stage stage = Stage::base;
    int steps = 500;
    int batch = 8;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double cond_dropout = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

// Token matrices for one scene, values in [-1, 1].
struct TrainExample {
    Tensor<float> target;
    Tensor<float> material;
    Tensor<float> depth;
};

TrainExample make_example(const TrainSample& sample, const dit::ModelConfig& config);

class Adam {
public:
    Adam(std::vector<Tensor<float>*> params, const TrainConfig& cfg);
    // Applies one update from the accumulated gradients, then clears them.
    void step();

private:
    std::vector<Tensor<float>*> params_;
    std::vector<std::vector<float>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

using LossCallback = std::function<void(int step, double loss)>;

// Losses are reported for steps 1..steps; a zero-step run returns the
// initialization untouched.
dit::ModelParams<float> train_base(std::span<const TrainExample> data, const dit::ModelConfig& model,
                                   const TrainConfig& cfg, const LossCallback& on_loss = {});

dit::LoraParams<float> train_depth_lora(const dit::ModelParams<float>& base, std::span<const TrainExample> data,
                                        const TrainConfig& cfg, const LossCallback& on_loss = {});

// Mean of the first and of the last `window` entries.
std::pair<double, double> smoothed_endpoints(std::span<const double> losses, std::size_t window = 50);

}  // namespace mate::synth

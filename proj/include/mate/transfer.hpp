#pragma once

// End-to-end material transfer for one masked object.

#include <cstdint>
#include <string>
#include <vector>

#include "mate/dit.hpp"
#include "mate/flow.hpp"
#include "mate/imaging.hpp"

namespace mate::transfer {

enum class InitMode { illumination, raw_input, pure_noise };
std::string to_string(InitMode m);
InitMode parse_init_mode(const std::string& s);

struct TransferOptions {
    double gamma = 1.8;
    double lora_weight = 1.0;
    double cfg_scale = 30.0;
    int steps = 8;
    double t_start = 0.9;
    std::uint64_t seed = 0;
    InitMode init = InitMode::illumination;
    bool material_stream = true;  // false runs without material tokens at all
};

struct TransferInputs {
    imaging::ImagePlane input;     // RGB image containing the object
    imaging::ImagePlane material;  // RGB swatch, model-sized
    imaging::Mask mask;
    imaging::ImagePlane depth;     // optional; used only with an adapter
};

/// Composite -> noised init -> guided Euler sampling with per-step
/// background blending -> final background replacement.
imaging::ImagePlane run_transfer(const dit::ModelParams<float>& model, const dit::LoraParams<float>* lora,
                                 const TransferInputs& in, const TransferOptions& opt);

struct SweepSetting {
    std::string label;  // "%.6f" of the swept value, or the init mode name
    TransferOptions options;
};

// Settings for the "gamma", "lora", "cfg" or "init" sweep around `base`.
// Unknown names raise RangeError.
std::vector<SweepSetting> ablation_sweep(const std::string& name, const TransferOptions& base);

// One output per setting plus the one-row contact sheet of all of them.
struct SweepResult {
    std::vector<imaging::ImagePlane> images;
    imaging::ImagePlane sheet;
};

SweepResult run_sweep(const dit::ModelParams<float>& model, const dit::LoraParams<float>* lora,
                      const TransferInputs& in, const std::vector<SweepSetting>& settings);

}  // namespace mate::transfer

#pragma once

// Miniature diffusion transformer over pixel-patch tokens.
//
// The velocity network embeds image, material and depth patches with one
// shared projection, runs them as a single sequence through adaLN-modulated
// blocks of multi-modal attention + MLP, and reads the velocity back from
// the image-stream rows.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mate/conditioning.hpp"
#include "mate/imaging.hpp"
#include "mate/ops.hpp"
#include "mate/tensor.hpp"

namespace mate::dit {

struct ModelConfig {
    std::uint32_t image_size = 32;
    std::uint32_t patch_size = 4;
    std::uint32_t channels = 3;
    std::uint32_t embed_dim = 64;
    std::uint32_t heads = 4;
    std::uint32_t num_blocks = 6;
    std::uint32_t mlp_ratio = 4;
    std::uint32_t lora_rank = 8;

    void validate() const;
    std::size_t grid() const { return image_size / patch_size; }
    std::size_t tokens() const { return grid() * grid(); }
    std::size_t patch_dim() const { return std::size_t(patch_size) * patch_size * channels; }
    std::size_t head_dim() const { return embed_dim / heads; }
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct BlockParams {
    Tensor<T> norm1_gain, norm1_bias;
    Tensor<T> q_w, q_b, k_w, k_b, v_w, v_b, out_w, out_b;
    Tensor<T> norm2_gain, norm2_bias;
    Tensor<T> mlp_in_w, mlp_in_b, mlp_out_w, mlp_out_b;
    Tensor<T> mod_w, mod_b;  // timestep embedding -> 6 modulation rows
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    Tensor<T> patch_w, patch_b;
    Tensor<T> time_w1, time_b1, time_w2, time_b2;
    Tensor<T> null_token;
    std::vector<BlockParams<T>> blocks;
    Tensor<T> final_gain, final_bias;
    Tensor<T> final_mod_w, final_mod_b;
    Tensor<T> head_w, head_b;

    // Fixed order; this is also the checkpoint blob order.
    std::vector<std::pair<std::string, Tensor<T>*>> named();
    std::vector<std::pair<std::string, const Tensor<T>*>> named() const;
    void set_requires_grad(bool on);

    template <typename U>
    ModelParams<U> cast() const;
};

enum class LoraTarget { q, k, v, out };

template <typename T>
struct BlockLora {
    conditioning::LoraAdapter<T> q, k, v, out;
};

// Depth adapters on every attention projection.
template <typename T>
struct LoraParams {
    ModelConfig config;
    std::vector<BlockLora<T>> blocks;

    std::vector<std::pair<std::string, Tensor<T>*>> named();
    std::vector<std::pair<std::string, const Tensor<T>*>> named() const;
    void set_requires_grad(bool on);

    template <typename U>
    LoraParams<U> cast() const;
};

/// Truncated normal (σ = 0.02, cut at 2σ) weights, zero biases, unit norm
/// gains. Every adaLN modulation and the velocity head start at zero, so
/// each block starts as the identity and the initial velocity is zero.
template <typename T>
ModelParams<T> init_model(const ModelConfig& config, std::uint64_t seed);

// B ~ truncated normal, A = 0: the initial delta is exactly zero.
template <typename T>
LoraParams<T> init_lora(const ModelConfig& config, std::uint64_t seed);

// Image plane -> [tokens × patch_dim] in [-1, 1], patches row-major,
// samples within a patch ordered (y, x, channel).
template <typename T>
Tensor<T> patchify(const imaging::ImagePlane& img, const ModelConfig& config);

// Raw [-1, 1] values; inverse of patchify before quantization.
std::vector<float> unpatchify_values(const Tensor<float>& tokens, const ModelConfig& config);
imaging::ImagePlane unpatchify(const Tensor<float>& tokens, const ModelConfig& config);

// Depth maps are single-channel; replicate to the model's channel count.
imaging::ImagePlane depth_as_image(const imaging::ImagePlane& depth, const ModelConfig& config);

std::vector<GridPos> grid_positions(const ModelConfig& config);

// x·W + b, with W replaced by W + w·B·A when an adapter is given and w ≠ 0.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const conditioning::LoraAdapter<T>* lora = nullptr, double lora_weight = 0.0);

/// Multi-modal attention over a whole token sequence: QKV projections, RoPE
/// on Q and K, per-head softmax(QKᵀ/√head_dim + bias)·V, output projection.
template <typename T>
Tensor<T> mma(const Tensor<T>& tokens, const RopeTable<T>& rope, const AttentionBias<T>& bias,
              const BlockParams<T>& block, std::size_t heads, const BlockLora<T>* lora = nullptr,
              double lora_weight = 0.0);

// Sinusoidal embedding of t·1000 (cos half, sin half).
template <typename T>
Tensor<T> timestep_embedding(double t, std::size_t dim);

// silu(MLP(sinusoid(t))): the vector every block's modulation reads.
template <typename T>
Tensor<T> time_conditioning(const ModelParams<T>& params, double t);

/// Pre-norm residual block with adaptive layer norm:
///   x += gate1 ⊙ MMA(modulate(LN1(x), shift1, scale1))
///   x += gate2 ⊙ MLP(modulate(LN2(x), shift2, scale2))
template <typename T>
Tensor<T> dit_block(const Tensor<T>& tokens, const Tensor<T>& time_cond, const RopeTable<T>& rope,
                    const AttentionBias<T>& bias, const BlockParams<T>& block, std::size_t heads,
                    const BlockLora<T>* lora = nullptr, double lora_weight = 0.0);

template <typename T>
struct Conditions {
    Tensor<T> material;  // [M × patch_dim]; undefined = no material stream
    Tensor<T> depth;     // [N × patch_dim]; undefined = no depth stream
    bool drop = false;   // replace every condition token with the null token
};

struct VelocityOptions {
    double gamma = 1.0;        // cross-bias strength
    double lora_weight = 1.0;  // depth adapter weight w
};

template <typename T>
Tensor<T> predict_velocity(const ModelParams<T>& params, const LoraParams<T>* lora, const Tensor<T>& x_tokens,
                           double t, const Conditions<T>& conditions, const VelocityOptions& options);

// Checkpoints: magic, u32 version, ModelConfig as 8 little-endian u32, then
// (name, shape, f32 data) blobs until end of file.
inline constexpr char kModelMagic[4] = {'M', 'A', 'T', 'E'};
inline constexpr char kLoraMagic[4] = {'L', 'O', 'R', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedBlob {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<float> data;
};

struct Checkpoint {
    char magic[4]{};
    std::uint32_t version = kCheckpointVersion;
    ModelConfig config;
    std::vector<NamedBlob> blobs;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
Checkpoint read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

Checkpoint to_checkpoint(const ModelParams<float>& params);
Checkpoint to_checkpoint(const LoraParams<float>& lora);
ModelParams<float> model_from_checkpoint(const Checkpoint& ckpt);
LoraParams<float> lora_from_checkpoint(const Checkpoint& ckpt);

void save_model(const ModelParams<float>& params, const std::filesystem::path& path);
ModelParams<float> load_model(const std::filesystem::path& path);
void save_lora(const LoraParams<float>& lora, const std::filesystem::path& path);
LoraParams<float> load_lora(const std::filesystem::path& path);

}  // namespace mate::dit

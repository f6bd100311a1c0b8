#pragma once

// Unified token sequence [material; image; depth], the cross-stream bias
// B(γ), and low-rank weight deltas.

#include <cstddef>
#include <cstdint>
#include <tuple>
#include <vector>

#include "mate/ops.hpp"
#include "mate/tensor.hpp"

namespace mate::conditioning {

// Smallest accepted γ; log(γ) ≈ -13.8 suppresses cross-stream attention to
// within float rounding of removing the material tokens.
inline constexpr double kGammaMin = 1e-6;

enum class Stream : std::uint8_t { material = 0, image = 1, depth = 2 };

/// Segment sizes of the unified sequence, always ordered material, image,
/// depth. Either condition stream may be empty (material = 0 is the
/// unconditional mode, depth = 0 is the base model without depth tokens).
struct SequenceLayout {
    std::size_t material = 0;
    std::size_t image = 0;
    std::size_t depth = 0;

    std::size_t total() const noexcept { return material + image + depth; }
    std::size_t image_begin() const noexcept { return material; }
    std::size_t depth_begin() const noexcept { return material + image; }
    std::vector<std::uint8_t> stream_labels() const;
    friend bool operator==(const SequenceLayout&, const SequenceLayout&) = default;
};

template <typename T>
struct TokenSequence {
    Tensor<T> tokens;  // [total × d]
    SequenceLayout layout;
    std::vector<GridPos> positions;
};

/// Grid positions for a layout whose image tokens tile a grid of `grid_width`
/// columns in row-major order. Depth tokens share the image positions; the
/// material grid is shifted right by one full grid width.
std::vector<GridPos> stream_positions(const SequenceLayout& layout, std::size_t grid_width);

// Row concatenation [c_m; x_img; c_d]. c_m / c_d may be undefined tensors for
// absent streams; c_d, when present, must have as many rows as x_img.
template <typename T>
TokenSequence<T> assemble_sequence(const Tensor<T>& c_m, const Tensor<T>& x_img, const Tensor<T>& c_d,
                                   std::size_t grid_width);

// Inverse of assemble_sequence; absent streams come back undefined.
template <typename T>
std::tuple<Tensor<T>, Tensor<T>, Tensor<T>> split_sequence(const TokenSequence<T>& seq);

void check_gamma(double gamma);

// Dense T×T matrix: log γ on material↔image and material↔depth blocks,
// zero on diagonal blocks and image↔depth blocks.
template <typename T>
Tensor<T> cross_bias(double gamma, const SequenceLayout& layout);

// The same bias in the structured form consumed by attention().
template <typename T>
AttentionBias<T> cross_bias_structured(double gamma, const SequenceLayout& layout);

/// Low-rank delta for a weight W[n×m]: W' = W + w·B·A with B[n×r], A[r×m].
template <typename T>
struct LoraAdapter {
    Tensor<T> a;  // r × m
    Tensor<T> b;  // n × r

    std::size_t rank() const { return a.rows(); }
    void validate(const Tensor<T>& w) const;
};

template <typename T>
Tensor<T> apply_lora(const Tensor<T>& w, const LoraAdapter<T>& adapter, double weight);

}  // namespace mate::conditioning

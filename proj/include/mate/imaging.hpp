#pragma once

// 8-bit rasters, netpbm I/O, illumination compositing, and the mask
// operations used for background preservation.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mate/tensor.hpp"

namespace mate::imaging {

struct ImagePlane {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 or 3
    std::vector<std::uint8_t> samples;

    ImagePlane() = default;
    ImagePlane(int w, int h, int c, std::uint8_t fill = 0);
    ImagePlane(int w, int h, int c, std::vector<std::uint8_t> s);

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::uint8_t& at(int x, int y, int c = 0) { return samples[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    std::uint8_t at(int x, int y, int c = 0) const {
        return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    void validate() const;
    friend bool operator==(const ImagePlane&, const ImagePlane&) = default;
};

/// Per-pixel weight in [0, 1]; 1 marks the foreground object. Stored as
/// float so soft masks survive arithmetic; 8-bit files map v -> v/255.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<float> values;

    Mask() = default;
    Mask(int w, int h, float fill = 0.0f);

    float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    void validate() const;
    friend bool operator==(const Mask&, const Mask&) = default;
};

// Half-up rounding of a value already clamped to [0, 255].
std::uint8_t round_half_up(double v);

// P6 (3 channels) or P5 (1 channel), maxval 255.
ImagePlane load_image(const std::filesystem::path& path);
void save_image(const ImagePlane& img, const std::filesystem::path& path);
ImagePlane decode_netpbm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_netpbm(const ImagePlane& img);

Mask mask_from_image(const ImagePlane& gray);
ImagePlane mask_to_image(const Mask& mask);
Mask load_mask(const std::filesystem::path& path);

// Luma 0.299 R + 0.587 G + 0.114 B, rounded half-up (exact integer arithmetic).
ImagePlane to_grayscale(const ImagePlane& rgb);
ImagePlane gray_to_rgb(const ImagePlane& gray);

// f·gray(input) + (1 - f)·input per channel, rounded half-up.
ImagePlane illumination_composite(const ImagePlane& input, const Mask& f);

// Pixels with f < 0.5 are copied from input_img; the rest from output_img.
ImagePlane final_background_replace(const ImagePlane& output_img, const ImagePlane& input_img, const Mask& f);

// Mean mask value per patch_size×patch_size patch, row-major token order.
std::vector<float> downsample_mask_to_tokens(const Mask& f, int patch_size);

// x_gen ⊙ m + x_in ⊙ (1 - m) with one weight per token row; m = 1 and m = 0
// return the respective input element unchanged.
template <typename T>
Tensor<T> blend_step(const Tensor<T>& x_gen, const Tensor<T>& x_in_noised, std::span<const T> token_mask);

// Raster conversion between 8-bit planes and [-1, 1] floats, channel-interleaved.
std::vector<float> to_unit_range(const ImagePlane& img);
ImagePlane from_unit_range(std::span<const float> values, int width, int height, int channels);

// Horizontal/vertical contact sheet; all tiles must share size and channels.
ImagePlane tile_grid(std::span<const ImagePlane> tiles, int columns, int gap = 1, std::uint8_t gap_value = 255);

}  // namespace mate::imaging

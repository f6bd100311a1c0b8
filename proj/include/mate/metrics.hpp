#pragma once

// Image-quality metrics on 8-bit planes.

#include "mate/imaging.hpp"

namespace mate::metrics {

inline constexpr int kSsimWindow = 8;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr double kSsimRange = 255.0;

// Luma as floats; RGB weights 0.299/0.587/0.114 without rounding.
std::vector<double> luma(const imaging::ImagePlane& img);

/// Mean SSIM over every 8×8 window (stride 1) of the luma planes, with
/// uniform weights and population variances.
double ssim(const imaging::ImagePlane& a, const imaging::ImagePlane& b);

// Mean SSIM over the windows that contain at least one pixel with f >= 0.5.
// Throws RangeError when no window qualifies.
double masked_ssim(const imaging::ImagePlane& a, const imaging::ImagePlane& b, const imaging::Mask& f);

double mse(const imaging::ImagePlane& a, const imaging::ImagePlane& b);

// 10·log10(255² / MSE); +infinity for identical images.
double psnr(const imaging::ImagePlane& a, const imaging::ImagePlane& b);

// Σ f·(a - b)² / (Σ f · channels); zero-weight masks raise RangeError.
double masked_mse(const imaging::ImagePlane& a, const imaging::ImagePlane& b, const imaging::Mask& f);

}  // namespace mate::metrics

#include "mate/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "mate/error.hpp"

namespace mate::metrics {

using imaging::ImagePlane;
using imaging::Mask;

namespace {

void check_pair(const ImagePlane& a, const ImagePlane& b, const char* op) {
    a.validate();
    b.validate();
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw DimensionError(std::string(op) + ": images " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                             "x" + std::to_string(a.channels) + " and " + std::to_string(b.width) + "x" +
                             std::to_string(b.height) + "x" + std::to_string(b.channels) + " differ");
}

void check_mask(const ImagePlane& a, const Mask& f, const char* op) {
    f.validate();
    if (f.width != a.width || f.height != a.height) throw DimensionError(std::string(op) + ": mask size differs");
}

// Local SSIM of the window with top-left corner (x0, y0).
double window_ssim(const std::vector<double>& a, const std::vector<double>& b, int width, int x0, int y0) {
    constexpr double c1 = (kSsimK1 * kSsimRange) * (kSsimK1 * kSsimRange);
    constexpr double c2 = (kSsimK2 * kSsimRange) * (kSsimK2 * kSsimRange);
    constexpr double n = kSsimWindow * kSsimWindow;
    double sa = 0, sb = 0;
    for (int y = y0; y < y0 + kSsimWindow; ++y)
        for (int x = x0; x < x0 + kSsimWindow; ++x) {
            sa += a[std::size_t(y) * width + x];
            sb += b[std::size_t(y) * width + x];
        }
    const double ma = sa / n, mb = sb / n;
    double va = 0, vb = 0, cov = 0;
    for (int y = y0; y < y0 + kSsimWindow; ++y)
        for (int x = x0; x < x0 + kSsimWindow; ++x) {
            const double da = a[std::size_t(y) * width + x] - ma, db = b[std::size_t(y) * width + x] - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
    va /= n;
    vb /= n;
    cov /= n;
    return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

template <typename Keep>
double mean_ssim(const ImagePlane& a, const ImagePlane& b, const Keep& keep, const char* op) {
    check_pair(a, b, op);
    if (a.width < kSsimWindow || a.height < kSsimWindow)
        throw DimensionError(std::string(op) + ": image smaller than the 8x8 window");
    const auto la = luma(a), lb = luma(b);
    double total = 0;
    std::size_t count = 0;
    for (int y = 0; y + kSsimWindow <= a.height; ++y)
        for (int x = 0; x + kSsimWindow <= a.width; ++x) {
            if (!keep(x, y)) continue;
            total += window_ssim(la, lb, a.width, x, y);
            ++count;
        }
    if (count == 0) throw RangeError(std::string(op) + ": no window overlaps the mask");
    return total / double(count);
}

}  // namespace

std::vector<double> luma(const ImagePlane& img) {
    img.validate();
    std::vector<double> out(img.pixel_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (img.channels == 1) {
            out[i] = img.samples[i];
        } else {
            const auto* p = &img.samples[i * 3];
            out[i] = (299.0 * p[0] + 587.0 * p[1] + 114.0 * p[2]) / 1000.0;
        }
    }
    return out;
}

double ssim(const ImagePlane& a, const ImagePlane& b) {
    return mean_ssim(a, b, [](int, int) { return true; }, "ssim");
}

double masked_ssim(const ImagePlane& a, const ImagePlane& b, const Mask& f) {
    check_mask(a, f, "masked_ssim");
    return mean_ssim(
        a, b,
        [&](int x0, int y0) {
            for (int y = y0; y < y0 + kSsimWindow; ++y)
                for (int x = x0; x < x0 + kSsimWindow; ++x)
                    if (f.at(x, y) >= 0.5f) return true;
            return false;
        },
        "masked_ssim");
}

double mse(const ImagePlane& a, const ImagePlane& b) {
    check_pair(a, b, "mse");
    double acc = 0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const double d = double(a.samples[i]) - double(b.samples[i]);
        acc += d * d;
    }
    return acc / double(a.samples.size());
}

double psnr(const ImagePlane& a, const ImagePlane& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(kSsimRange * kSsimRange / m);
}

double masked_mse(const ImagePlane& a, const ImagePlane& b, const Mask& f) {
    check_pair(a, b, "masked_mse");
    check_mask(a, f, "masked_mse");
    double acc = 0, weight = 0;
    for (std::size_t p = 0; p < a.pixel_count(); ++p) {
        const double w = f.values[p];
        weight += w;
        for (int c = 0; c < a.channels; ++c) {
            const double d = double(a.samples[p * a.channels + c]) - double(b.samples[p * a.channels + c]);
            acc += w * d * d;
        }
    }
    if (weight == 0.0) throw RangeError("masked_mse: mask has zero total weight");
    return acc / (weight * a.channels);
}

}  // namespace mate::metrics

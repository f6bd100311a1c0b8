#include <doctest.h>

#include <cmath>
#include <limits>

#include "mate/metrics.hpp"
#include "mate/rng.hpp"

using namespace mate;
using namespace mate::imaging;
using namespace mate::metrics;

namespace {

ImagePlane random_image(int w, int h, int c, std::uint64_t seed) {
    Rng rng(seed);
    ImagePlane img(w, h, c);
    for (auto& s : img.samples) s = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

}  // namespace

TEST_CASE("ssim identities") {
    auto x = random_image(16, 12, 3, 1);
    CHECK(ssim(x, x) == 1.0);
    CHECK(ssim(ImagePlane(8, 8, 1, 0), ImagePlane(8, 8, 1, 0)) == 1.0);
}

TEST_CASE("ssim of constant 0 vs 255 matches the single-window formula") {
    const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
    const double direct = ((2 * 0.0 * 255.0 + c1) * (0.0 + c2)) / ((0.0 + 255.0 * 255.0 + c1) * (0.0 + 0.0 + c2));
    for (int c : {1, 3}) {
        const double s = ssim(ImagePlane(8, 8, c, 0), ImagePlane(8, 8, c, 255));
        CHECK(std::abs(s - direct) < 1e-12);
        CHECK(std::abs(s - 1.0002e-4) < 1e-6);
        CHECK(ssim(ImagePlane(20, 9, c, 0), ImagePlane(20, 9, c, 255)) == doctest::Approx(direct).epsilon(1e-12));
    }
}

TEST_CASE("ssim symmetry and bounds") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto a = random_image(12, 12, 3, s), b = random_image(12, 12, 3, s + 100);
        CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-9);
        CHECK(ssim(a, b) <= 1.0);
        CHECK(ssim(a, b) >= -1.0);
    }
    CHECK_THROWS_AS(ssim(ImagePlane(8, 8, 1), ImagePlane(8, 9, 1)), DimensionError);
    CHECK_THROWS_AS(ssim(ImagePlane(7, 8, 1), ImagePlane(7, 8, 1)), DimensionError);
}

TEST_CASE("masked ssim only averages windows touching the mask") {
    auto a = random_image(16, 16, 1, 3);
    auto b = a;
    // Damage the right half only; a mask on the far left sees windows that
    // never reach it.
    for (int y = 0; y < 16; ++y)
        for (int x = 12; x < 16; ++x) b.at(x, y) = 255 - b.at(x, y);
    Mask left(16, 16);
    left.at(0, 0) = 1.0f;
    CHECK(masked_ssim(a, b, left) == 1.0);
    CHECK(masked_ssim(a, b, Mask(16, 16, 1.0f)) == doctest::Approx(ssim(a, b)).epsilon(1e-12));
    CHECK_THROWS_AS(masked_ssim(a, b, Mask(16, 16)), RangeError);
}

TEST_CASE("psnr and mse") {
    auto x = random_image(8, 8, 3, 4);
    CHECK(mse(x, x) == 0.0);
    CHECK(psnr(x, x) == std::numeric_limits<double>::infinity());
    ImagePlane zero(8, 8, 3, 0), full(8, 8, 3, 255);
    CHECK(mse(zero, full) == 65025.0);
    CHECK(psnr(zero, full) == 0.0);
}

TEST_CASE("masked mse equals the plain mse of the foreground region") {
    auto a = random_image(8, 8, 3, 5), b = random_image(8, 8, 3, 6);
    Mask half(8, 8);
    double acc = 0;
    int n = 0;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 4; ++x) {
            half.at(x, y) = 1.0f;
            for (int c = 0; c < 3; ++c) {
                const double d = double(a.at(x, y, c)) - b.at(x, y, c);
                acc += d * d;
                ++n;
            }
        }
    CHECK(masked_mse(a, b, half) == doctest::Approx(acc / n).epsilon(1e-12));
    CHECK(masked_mse(a, b, Mask(8, 8, 1.0f)) == doctest::Approx(mse(a, b)).epsilon(1e-12));
    CHECK_THROWS_AS(masked_mse(a, b, Mask(8, 8)), RangeError);
}

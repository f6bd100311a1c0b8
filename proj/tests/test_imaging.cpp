#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mate/imaging.hpp"
#include "mate/rng.hpp"

using namespace mate;
using namespace mate::imaging;

namespace {

ImagePlane random_image(int w, int h, int c, std::uint64_t seed) {
    Rng rng(seed);
    ImagePlane img(w, h, c);
    for (auto& s : img.samples) s = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "mate_imaging_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::vector<std::uint8_t> bytes(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("netpbm round trip and parsing") {
    for (int c : {1, 3}) {
        auto img = random_image(7, 5, c, 40 + c);
        auto path = temp_path(c == 1 ? "rt.pgm" : "rt.ppm");
        save_image(img, path);
        CHECK(load_image(path) == img);
    }
    std::string p6 = "P6\n2 1\n255\n";
    p6 += std::string("\xff\x00\x00\x00\x00\xff", 6);
    auto img = decode_netpbm(bytes(p6));
    CHECK(img.width == 2);
    CHECK(img.channels == 3);
    CHECK(img.samples == std::vector<std::uint8_t>{255, 0, 0, 0, 0, 255});

    // comments and arbitrary whitespace in the header
    std::string commented = "P5 # gray\n# another\n 3\t1\n255\n";
    commented += std::string("\x01\x02\x03", 3);
    CHECK(decode_netpbm(bytes(commented)).samples == std::vector<std::uint8_t>{1, 2, 3});

    CHECK_THROWS_AS(decode_netpbm(bytes("P3\n1 1\n255\n")), FormatError);
    CHECK_THROWS_AS(decode_netpbm(bytes("P5\n2 2\n65535\n")), FormatError);
    CHECK_THROWS_AS(decode_netpbm(bytes("P5\n2 2\n255\nab")), FormatError);
    CHECK_THROWS_AS(decode_netpbm(bytes("P5\n2")), FormatError);
    CHECK_THROWS_AS(load_image(temp_path("does_not_exist.ppm")), IoError);
}

TEST_CASE("mask normalization") {
    std::string p5 = "P5\n3 1\n255\n";
    p5 += std::string("\xff\x00\x80", 3);
    auto m = mask_from_image(decode_netpbm(bytes(p5)));
    CHECK(m.values[0] == 1.0f);
    CHECK(m.values[1] == 0.0f);
    CHECK(m.values[2] == 128.0f / 255.0f);
    CHECK(mask_to_image(m) == decode_netpbm(bytes(p5)));
}

TEST_CASE("grayscale") {
    ImagePlane px(3, 1, 3, std::vector<std::uint8_t>{255, 255, 255, 0, 0, 0, 255, 0, 0});
    auto g = to_grayscale(px);
    CHECK(g.channels == 1);
    CHECK(g.samples == std::vector<std::uint8_t>{255, 0, 76});
    CHECK(to_grayscale(ImagePlane(1, 1, 3, std::vector<std::uint8_t>{200, 100, 0})).samples[0] == 119);
    CHECK_THROWS_AS(to_grayscale(ImagePlane(1, 1, 1)), DimensionError);
}

TEST_CASE("illumination composite") {
    auto img = random_image(6, 4, 3, 1);
    CHECK(illumination_composite(img, Mask(6, 4, 0.0f)) == img);
    CHECK(illumination_composite(img, Mask(6, 4, 1.0f)) == gray_to_rgb(to_grayscale(img)));

    ImagePlane one(1, 1, 3, std::vector<std::uint8_t>{200, 100, 0});
    auto half = illumination_composite(one, Mask(1, 1, 0.5f));
    CHECK(half.samples == std::vector<std::uint8_t>{160, 110, 60});

    Mask binary(6, 4);
    for (int i = 0; i < 24; i += 3) binary.values[i] = 1.0f;
    auto once = illumination_composite(img, binary);
    CHECK(illumination_composite(once, binary) == once);
    CHECK_THROWS_AS(illumination_composite(img, Mask(5, 4)), DimensionError);
}

TEST_CASE("blend_step") {
    Tensor<float> gen({2, 3}, {1, 2, 3, 4, 5, 6}), in({2, 3}, {7, 8, 9, 10, 11, 12});
    std::vector<float> ones{1, 1}, zeros{0, 0};
    auto a = blend_step(gen, in, std::span<const float>(ones));
    CHECK(std::equal(a.data().begin(), a.data().end(), gen.data().begin()));
    auto b = blend_step(gen, in, std::span<const float>(zeros));
    CHECK(std::equal(b.data().begin(), b.data().end(), in.data().begin()));
    std::vector<double> quarter{0.25};
    auto c = blend_step(Tensor<double>({1, 1}, {4.0}), Tensor<double>({1, 1}, {0.0}), std::span<const double>(quarter));
    CHECK(c.item() == 1.0);
    CHECK_THROWS_AS(blend_step(gen, in, std::span<const float>(ones.data(), 1)),
                    DimensionError);
}

TEST_CASE("final background replace") {
    auto out = random_image(8, 8, 3, 2), in = random_image(8, 8, 3, 3);
    CHECK(final_background_replace(out, in, Mask(8, 8, 0.0f)) == in);
    CHECK(final_background_replace(out, in, Mask(8, 8, 1.0f)) == out);
    Mask checker(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) checker.at(x, y) = ((x + y) % 2) ? 0.7f : 0.3f;
    auto r = final_background_replace(out, in, checker);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c) CHECK(r.at(x, y, c) == (checker.at(x, y) < 0.5f ? in : out).at(x, y, c));
}

TEST_CASE("downsample mask to tokens") {
    CHECK(downsample_mask_to_tokens(Mask(8, 8, 0.25f), 4) == std::vector<float>(4, 0.25f));
    Mask half(4, 4);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x) half.at(x, y) = 1.0f;
    CHECK(downsample_mask_to_tokens(half, 4) == std::vector<float>{0.5f});
    Mask single(8, 8);
    for (int y = 4; y < 8; ++y)
        for (int x = 0; x < 4; ++x) single.at(x, y) = 1.0f;
    CHECK(downsample_mask_to_tokens(single, 4) == std::vector<float>{0, 0, 1, 0});
    CHECK_THROWS_AS(downsample_mask_to_tokens(Mask(6, 6), 4), DimensionError);
}

TEST_CASE("unit range conversion and contact sheets") {
    auto img = random_image(4, 4, 3, 9);
    auto v = to_unit_range(img);
    CHECK(from_unit_range(v, 4, 4, 3) == img);
    CHECK(v.front() == static_cast<float>(img.samples.front()) / 127.5f - 1.0f);
    std::vector<float> clamp{-3.0f, 3.0f, 0.0f};
    CHECK(from_unit_range(clamp, 1, 1, 3).samples == std::vector<std::uint8_t>{0, 255, 128});

    std::vector<ImagePlane> tiles{random_image(3, 2, 3, 1), random_image(3, 2, 3, 2), random_image(3, 2, 3, 3)};
    auto sheet = tile_grid(tiles, 2);
    CHECK(sheet.width == 2 * 3 + 1);
    CHECK(sheet.height == 2 * 2 + 1);
    CHECK(sheet.at(4, 0, 0) == tiles[1].at(0, 0, 0));
    CHECK(sheet.at(0, 3, 2) == tiles[2].at(0, 0, 2));
    CHECK(sheet.at(3, 0, 0) == 255);
}

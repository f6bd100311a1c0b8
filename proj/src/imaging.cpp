#include "mate/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace mate::imaging {

ImagePlane::ImagePlane(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c), samples(static_cast<std::size_t>(w) * h * c, fill) {
    validate();
}

ImagePlane::ImagePlane(int w, int h, int c, std::vector<std::uint8_t> s)
    : width(w), height(h), channels(c), samples(std::move(s)) {
    validate();
}

void ImagePlane::validate() const {
    if (width <= 0 || height <= 0) throw DimensionError("image dimensions must be positive");
    if (channels != 1 && channels != 3) throw DimensionError("image must have 1 or 3 channels, got " + std::to_string(channels));
    if (samples.size() != static_cast<std::size_t>(width) * height * channels)
        throw DimensionError("image sample count " + std::to_string(samples.size()) + " does not match " +
                             std::to_string(width) + "x" + std::to_string(height) + "x" + std::to_string(channels));
}

Mask::Mask(int w, int h, float fill) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {
    validate();
}

void Mask::validate() const {
    if (width <= 0 || height <= 0) throw DimensionError("mask dimensions must be positive");
    if (values.size() != static_cast<std::size_t>(width) * height) throw DimensionError("mask value count mismatch");
    for (float v : values)
        if (!(v >= 0.0f && v <= 1.0f)) throw RangeError("mask values must lie in [0, 1]");
}

std::uint8_t round_half_up(double v) {
    const double r = std::floor(v + 0.5);
    return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

namespace {

void require_same_size(int w0, int h0, int w1, int h1, const char* op) {
    if (w0 != w1 || h0 != h1)
        throw DimensionError(std::string(op) + ": size mismatch " + std::to_string(w0) + "x" + std::to_string(h0) +
                             " vs " + std::to_string(w1) + "x" + std::to_string(h1));
}

// Reads one header token, skipping whitespace and '#' comments.
std::string next_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    for (;;) {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        if (pos < bytes.size() && bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') tok.push_back(static_cast<char>(bytes[pos++]));
    if (tok.empty()) throw FormatError("netpbm: truncated header");
    return tok;
}

int parse_positive(const std::string& tok, const char* what) {
    if (tok.empty() || tok.size() > 9 || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        throw FormatError(std::string("netpbm: malformed ") + what + " '" + tok + "'");
    const int v = std::stoi(tok);
    if (v <= 0) throw FormatError(std::string("netpbm: non-positive ") + what);
    return v;
}

}  // namespace

ImagePlane decode_netpbm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    const std::string magic = next_token(bytes, pos);
    int channels = 0;
    if (magic == "P6") {
        channels = 3;
    } else if (magic == "P5") {
        channels = 1;
    } else {
        throw FormatError("netpbm: unsupported magic '" + magic + "' (expected P5 or P6)");
    }
    const int w = parse_positive(next_token(bytes, pos), "width");
    const int h = parse_positive(next_token(bytes, pos), "height");
    const int maxval = parse_positive(next_token(bytes, pos), "maxval");
    if (maxval != 255) throw FormatError("netpbm: maxval " + std::to_string(maxval) + " unsupported (need 255)");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("netpbm: missing separator after header");
    ++pos;
    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (bytes.size() - pos < need)
        throw FormatError("netpbm: truncated payload, " + std::to_string(bytes.size() - pos) + " of " +
                          std::to_string(need) + " bytes");
    return ImagePlane(w, h, channels, std::vector<std::uint8_t>(bytes.begin() + pos, bytes.begin() + pos + need));
}

std::vector<std::uint8_t> encode_netpbm(const ImagePlane& img) {
    img.validate();
    const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.samples.begin(), img.samples.end());
    return out;
}

ImagePlane load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_netpbm(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_image(const ImagePlane& img, const std::filesystem::path& path) {
    const auto bytes = encode_netpbm(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

Mask mask_from_image(const ImagePlane& gray) {
    if (gray.channels != 1) throw DimensionError("mask images must be single-channel (P5)");
    Mask m(gray.width, gray.height);
    for (std::size_t i = 0; i < gray.samples.size(); ++i) m.values[i] = static_cast<float>(gray.samples[i]) / 255.0f;
    return m;
}

ImagePlane mask_to_image(const Mask& mask) {
    ImagePlane img(mask.width, mask.height, 1);
    for (std::size_t i = 0; i < mask.values.size(); ++i) img.samples[i] = round_half_up(mask.values[i] * 255.0);
    return img;
}

Mask load_mask(const std::filesystem::path& path) { return mask_from_image(load_image(path)); }

ImagePlane to_grayscale(const ImagePlane& rgb) {
    if (rgb.channels != 3) throw DimensionError("to_grayscale: expected 3 channels, got " + std::to_string(rgb.channels));
    ImagePlane out(rgb.width, rgb.height, 1);
    for (std::size_t p = 0; p < rgb.pixel_count(); ++p) {
        const unsigned r = rgb.samples[3 * p], g = rgb.samples[3 * p + 1], b = rgb.samples[3 * p + 2];
        out.samples[p] = static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
    }
    return out;
}

ImagePlane gray_to_rgb(const ImagePlane& gray) {
    if (gray.channels != 1) throw DimensionError("gray_to_rgb: expected 1 channel");
    ImagePlane out(gray.width, gray.height, 3);
    for (std::size_t p = 0; p < gray.pixel_count(); ++p)
        out.samples[3 * p] = out.samples[3 * p + 1] = out.samples[3 * p + 2] = gray.samples[p];
    return out;
}

ImagePlane illumination_composite(const ImagePlane& input, const Mask& f) {
    if (input.channels != 3) throw DimensionError("illumination_composite: input must have 3 channels");
    require_same_size(input.width, input.height, f.width, f.height, "illumination_composite");
    const ImagePlane gray = to_grayscale(input);
    ImagePlane out(input.width, input.height, 3);
    for (std::size_t p = 0; p < input.pixel_count(); ++p) {
        const double w = f.values[p];
        for (int c = 0; c < 3; ++c) {
            const double v = w * gray.samples[p] + (1.0 - w) * input.samples[3 * p + c];
            out.samples[3 * p + c] = round_half_up(v);
        }
    }
    return out;
}

ImagePlane final_background_replace(const ImagePlane& output_img, const ImagePlane& input_img, const Mask& f) {
    require_same_size(output_img.width, output_img.height, input_img.width, input_img.height, "final_background_replace");
    require_same_size(output_img.width, output_img.height, f.width, f.height, "final_background_replace");
    if (output_img.channels != input_img.channels) throw DimensionError("final_background_replace: channel mismatch");
    ImagePlane out = output_img;
    const int c = out.channels;
    for (std::size_t p = 0; p < out.pixel_count(); ++p)
        if (f.values[p] < 0.5f)
            for (int k = 0; k < c; ++k) out.samples[p * c + k] = input_img.samples[p * c + k];
    return out;
}

std::vector<float> downsample_mask_to_tokens(const Mask& f, int patch_size) {
    if (patch_size <= 0 || f.width % patch_size != 0 || f.height % patch_size != 0)
        throw DimensionError("downsample_mask_to_tokens: " + std::to_string(f.width) + "x" + std::to_string(f.height) +
                             " not divisible by patch " + std::to_string(patch_size));
    const int gw = f.width / patch_size, gh = f.height / patch_size;
    std::vector<float> out(static_cast<std::size_t>(gw) * gh);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            double acc = 0.0;
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x) acc += f.at(gx * patch_size + x, gy * patch_size + y);
            out[static_cast<std::size_t>(gy) * gw + gx] = static_cast<float>(acc / (patch_size * patch_size));
        }
    return out;
}

template <typename T>
Tensor<T> blend_step(const Tensor<T>& x_gen, const Tensor<T>& x_in_noised, std::span<const T> token_mask) {
    if (x_gen.shape() != x_in_noised.shape())
        throw DimensionError("blend_step: shape mismatch " + shape_string(x_gen.shape()) + " vs " +
                             shape_string(x_in_noised.shape()));
    if (x_gen.rank() != 2 || token_mask.size() != x_gen.rows())
        throw DimensionError("blend_step: need one mask weight per token row");
    const std::size_t n = x_gen.rows(), d = x_gen.cols();
    auto g = x_gen.data(), in = x_in_noised.data();
    std::vector<T> out(g.size());
    for (std::size_t i = 0; i < n; ++i) {
        const T m = token_mask[i];
        if (!(m >= T(0) && m <= T(1))) throw RangeError("blend_step: mask weight outside [0, 1]");
        for (std::size_t j = 0; j < d; ++j) {
            const std::size_t k = i * d + j;
            out[k] = m == T(1) ? g[k] : m == T(0) ? in[k] : g[k] * m + in[k] * (T(1) - m);
        }
    }
    return Tensor<T>(x_gen.shape(), std::move(out));
}

template Tensor<float> blend_step(const Tensor<float>&, const Tensor<float>&, std::span<const float>);
template Tensor<double> blend_step(const Tensor<double>&, const Tensor<double>&, std::span<const double>);

std::vector<float> to_unit_range(const ImagePlane& img) {
    std::vector<float> out(img.samples.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(img.samples[i]) / 127.5f - 1.0f;
    return out;
}

ImagePlane from_unit_range(std::span<const float> values, int width, int height, int channels) {
    ImagePlane out(width, height, channels);
    if (values.size() != out.samples.size()) throw DimensionError("from_unit_range: value count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::clamp(static_cast<double>(values[i]), -1.0, 1.0);
        out.samples[i] = round_half_up((v + 1.0) * 127.5);
    }
    return out;
}

ImagePlane tile_grid(std::span<const ImagePlane> tiles, int columns, int gap, std::uint8_t gap_value) {
    if (tiles.empty()) throw DimensionError("tile_grid: no tiles");
    if (columns <= 0) throw RangeError("tile_grid: columns must be positive");
    const int w = tiles[0].width, h = tiles[0].height, c = tiles[0].channels;
    for (const auto& t : tiles)
        if (t.width != w || t.height != h || t.channels != c) throw DimensionError("tile_grid: tiles differ in size");
    const int cols = std::min<int>(columns, static_cast<int>(tiles.size()));
    const int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
    ImagePlane sheet(cols * w + (cols - 1) * gap, rows * h + (rows - 1) * gap, c, gap_value);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const int ox = static_cast<int>(i % columns) * (w + gap);
        const int oy = static_cast<int>(i / columns) * (h + gap);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int k = 0; k < c; ++k) sheet.at(ox + x, oy + y, k) = tiles[i].at(x, y, k);
    }
    return sheet;
}

}  // namespace mate::imaging

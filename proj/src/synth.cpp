#include "mate/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "mate/error.hpp"
#include "mate/rng.hpp"

namespace mate::synth {

using imaging::ImagePlane;
using imaging::Mask;
using imaging::round_half_up;

namespace {

constexpr std::array<std::pair<ShapeKind, MaterialKind>, 3> kHeldoutCombos = {{
    {ShapeKind::circle, MaterialKind::noise},
    {ShapeKind::square, MaterialKind::radial},
    {ShapeKind::triangle, MaterialKind::checker},
}};

double luma(Rgb c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

Rgb random_color(Rng& rng) {
    return Rgb{static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256)),
               static_cast<std::uint8_t>(rng.below(256))};
}

double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

double floor_mod2(double v) {
    const double m = std::fmod(std::floor(v), 2.0);
    return m < 0 ? m + 2.0 : m;
}

class ValueNoise {
public:
    ValueNoise(std::uint64_t seed, double period) : period_(period) {
        n_ = static_cast<int>(std::ceil(2.0 * kCanvas / period)) + 3;
        Rng rng(seed);
        lattice_.resize(static_cast<std::size_t>(n_) * n_);
        for (auto& v : lattice_) v = rng.uniform();
    }

    double operator()(double x, double y) const {
        const double gx = x / period_, gy = y / period_;
        const int ix = static_cast<int>(std::floor(gx)), iy = static_cast<int>(std::floor(gy));
        const double fx = smoothstep(gx - ix), fy = smoothstep(gy - iy);
        auto l = [&](int i, int j) {
            i = ((i % n_) + n_) % n_;
            j = ((j % n_) + n_) % n_;
            return lattice_[static_cast<std::size_t>(j) * n_ + i];
        };
        const double top = l(ix, iy) * (1 - fx) + l(ix + 1, iy) * fx;
        const double bot = l(ix, iy + 1) * (1 - fx) + l(ix + 1, iy + 1) * fx;
        return top * (1 - fy) + bot * fy;
    }

private:
    double period_;
    int n_;
    std::vector<double> lattice_;
};

double texture_value(const SceneSpec& s, const ValueNoise& noise, double px, double py) {
    const double x = px - s.tex_x, y = py - s.tex_y;
    switch (s.material) {
        case MaterialKind::stripes:
            return floor_mod2(2.0 * (x * std::cos(s.orientation) + y * std::sin(s.orientation)) / s.period);
        case MaterialKind::checker:
            return floor_mod2(std::floor(2.0 * x / s.period) + std::floor(2.0 * y / s.period));
        case MaterialKind::radial:
            return 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * std::hypot(x, y) / s.period);
        case MaterialKind::noise:
            return noise(px + s.tex_x, py + s.tex_y);
    }
    return 0.0;
}

std::array<std::pair<double, double>, 3> triangle_vertices(const SceneSpec& s) {
    std::array<std::pair<double, double>, 3> v;
    for (int k = 0; k < 3; ++k) {
        const double a = -std::numbers::pi / 2 + 2.0 * std::numbers::pi * k / 3.0;
        v[k] = {s.cx + s.size * std::cos(a), s.cy + s.size * std::sin(a)};
    }
    return v;
}

void put_rgb(ImagePlane& img, int x, int y, std::array<std::uint8_t, 3> c) {
    for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch];
}

}  // namespace

std::string to_string(ShapeKind s) {
    switch (s) {
        case ShapeKind::circle: return "circle";
        case ShapeKind::square: return "square";
        case ShapeKind::triangle: return "triangle";
    }
    return "?";
}

std::string to_string(MaterialKind m) {
    switch (m) {
        case MaterialKind::stripes: return "stripes";
        case MaterialKind::checker: return "checker";
        case MaterialKind::radial: return "radial";
        case MaterialKind::noise: return "noise";
    }
    return "?";
}

std::string to_string(Split s) { return s == Split::train ? "train" : "heldout"; }

ShapeKind parse_shape(const std::string& s) {
    for (auto k : {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle})
        if (to_string(k) == s) return k;
    throw FormatError("unknown shape '" + s + "'");
}

MaterialKind parse_material(const std::string& s) {
    for (auto k : {MaterialKind::stripes, MaterialKind::checker, MaterialKind::radial, MaterialKind::noise})
        if (to_string(k) == s) return k;
    throw FormatError("unknown material '" + s + "'");
}

void SceneSpec::validate() const {
    if (!(size > 0) || !std::isfinite(cx) || !std::isfinite(cy)) throw RangeError("scene: bad shape parameters");
    if (cx - size < 0 || cy - size < 0 || cx + size > kCanvas || cy + size > kCanvas)
        throw RangeError("scene: shape extends outside the canvas");
    if (!(period >= 2.0) || !std::isfinite(period)) throw RangeError("scene: texture period must be >= 2 px");
    if (!std::isfinite(orientation) || !std::isfinite(light_angle) || !std::isfinite(tex_x) || !std::isfinite(tex_y))
        throw RangeError("scene: non-finite angle or texture origin");
}

bool inside_shape(const SceneSpec& s, double px, double py) {
    switch (s.shape) {
        case ShapeKind::circle:
            return (px - s.cx) * (px - s.cx) + (py - s.cy) * (py - s.cy) <= s.size * s.size;
        case ShapeKind::square:
            return std::abs(px - s.cx) <= s.size && std::abs(py - s.cy) <= s.size;
        case ShapeKind::triangle: {
            const auto v = triangle_vertices(s);
            auto edge = [&](int i, int j) {
                return (v[j].first - v[i].first) * (py - v[i].second) - (v[j].second - v[i].second) * (px - v[i].first);
            };
            const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
            return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        }
    }
    return false;
}

double shading(const SceneSpec& s, int x, int y) {
    const double dx = (x + 0.5 - s.cx) / s.size, dy = (y + 0.5 - s.cy) / s.size;
    const double d = dx * std::cos(s.light_angle) + dy * std::sin(s.light_angle);
    return std::clamp(0.7 + 0.3 * d, 0.4, 1.0);
}

TrainSample generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int n = kCanvas;
    TrainSample out;
    out.mask = Mask(n, n);
    out.material = ImagePlane(n, n, 3);
    out.target = ImagePlane(n, n, 3);
    out.source = ImagePlane(n, n, 3);
    out.depth = ImagePlane(n, n, 1);

    const ValueNoise noise(seed, spec.period);
    const std::array<std::uint8_t, 3> bg = {spec.background.r, spec.background.g, spec.background.b};
    const std::array<double, 3> a = {double(spec.color_a.r), double(spec.color_a.g), double(spec.color_a.b)};
    const std::array<double, 3> b = {double(spec.color_b.r), double(spec.color_b.g), double(spec.color_b.b)};
    const std::array<double, 3> src = {double(spec.source_color.r), double(spec.source_color.g),
                                       double(spec.source_color.b)};

    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double t = texture_value(spec, noise, x + 0.5, y + 0.5);
            std::array<std::uint8_t, 3> tex{};
            for (int c = 0; c < 3; ++c) tex[c] = round_half_up(a[c] + (b[c] - a[c]) * t);
            put_rgb(out.material, x, y, tex);
            if (inside_shape(spec, x + 0.5, y + 0.5)) {
                out.mask.at(x, y) = 1.0f;
                const double s = shading(spec, x, y);
                std::array<std::uint8_t, 3> tgt{}, obj{};
                for (int c = 0; c < 3; ++c) {
                    tgt[c] = round_half_up(tex[c] * s);
                    obj[c] = round_half_up(src[c] * s);
                }
                put_rgb(out.target, x, y, tgt);
                put_rgb(out.source, x, y, obj);
            } else {
                put_rgb(out.target, x, y, bg);
                put_rgb(out.source, x, y, bg);
            }
        }

    // Distance from each inside pixel center to the nearest outside pixel
    // center, treating everything beyond the canvas as outside.
    std::vector<double> dist(static_cast<std::size_t>(n) * n, 0.0);
    double dmax = 0.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            if (out.mask.at(x, y) < 0.5f) continue;
            double best = std::min({x + 1.0, y + 1.0, double(n - x), double(n - y)});
            for (int v = 0; v < n; ++v)
                for (int u = 0; u < n; ++u)
                    if (out.mask.at(u, v) < 0.5f) best = std::min(best, std::hypot(double(u - x), double(v - y)));
            dist[static_cast<std::size_t>(y) * n + x] = best;
            dmax = std::max(dmax, best);
        }
    if (dmax > 0)
        for (std::size_t i = 0; i < dist.size(); ++i) out.depth.samples[i] = round_half_up(255.0 * dist[i] / dmax);

    out.illumination = imaging::illumination_composite(out.source, out.mask);
    return out;
}

void validate_sample(const TrainSample& s, const SceneSpec& spec) {
    auto fail = [](const std::string& msg) { throw FormatError("sample invariant: " + msg); };
    const int n = kCanvas;
    auto sized = [&](const ImagePlane& p, int ch) { return p.width == n && p.height == n && p.channels == ch; };
    if (!sized(s.illumination, 3) || !sized(s.material, 3) || !sized(s.target, 3) || !sized(s.depth, 1) ||
        s.mask.width != n || s.mask.height != n)
        fail("wrong image dimensions");
    std::size_t area = 0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const float f = s.mask.at(x, y);
            if (f != 0.0f && f != 1.0f) fail("mask is not binary");
            const bool in = f == 1.0f;
            if (in != inside_shape(spec, x + 0.5, y + 0.5)) fail("mask disagrees with the analytic shape");
            if (in) {
                ++area;
                const double sh = shading(spec, x, y);
                for (int c = 0; c < 3; ++c)
                    if (s.target.at(x, y, c) != round_half_up(s.material.at(x, y, c) * sh))
                        fail("foreground is not the shaded material");
                if (s.depth.at(x, y) == 0) fail("zero depth inside the mask");
            } else {
                for (int c = 0; c < 3; ++c)
                    if (s.target.at(x, y, c) != s.illumination.at(x, y, c))
                        fail("target background differs from the illumination background");
                if (s.depth.at(x, y) != 0) fail("nonzero depth outside the mask");
            }
        }
    if (area == 0) fail("empty mask");
}

bool is_heldout_combo(ShapeKind shape, MaterialKind material) {
    return std::any_of(kHeldoutCombos.begin(), kHeldoutCombos.end(),
                       [&](const auto& c) { return c.first == shape && c.second == material; });
}

SceneSpec random_spec(std::uint64_t seed, Split split) {
    Rng rng(seed);
    SceneSpec s;
    if (split == Split::heldout) {
        const auto& c = kHeldoutCombos[rng.below(kHeldoutCombos.size())];
        s.shape = c.first;
        s.material = c.second;
    } else {
        do {
            s.shape = static_cast<ShapeKind>(rng.below(3));
            s.material = static_cast<MaterialKind>(rng.below(4));
        } while (is_heldout_combo(s.shape, s.material));
    }
    s.size = rng.uniform(7.0, 11.0);
    s.cx = rng.uniform(s.size + 1.0, kCanvas - s.size - 1.0);
    s.cy = rng.uniform(s.size + 1.0, kCanvas - s.size - 1.0);
    do {
        s.color_a = random_color(rng);
        s.color_b = random_color(rng);
    } while (std::abs(luma(s.color_a) - luma(s.color_b)) < 80.0);
    s.period = rng.uniform(4.0, 10.0);
    s.orientation = rng.uniform(0.0, std::numbers::pi);
    s.tex_x = rng.uniform(0.0, double(kCanvas));
    s.tex_y = rng.uniform(0.0, double(kCanvas));
    s.light_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s.source_color = random_color(rng);
    s.background = random_color(rng);
    return s;
}

std::vector<SceneRecord> plan_dataset(std::size_t count, std::uint64_t seed) {
    std::vector<SceneRecord> out;
    const std::size_t n_train = count * 8 / 10;
    for (std::size_t i = 0; i < count; ++i) {
        SceneRecord r;
        r.seed = derive_seed(seed, {i});
        r.split = i < n_train ? Split::train : Split::heldout;
        r.spec = random_spec(r.seed, r.split);
        out.push_back(r);
    }
    return out;
}

std::string scene_dir_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%05zu", index);
    return buf;
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_rgb(Rgb c) { return std::to_string(c.r) + "," + std::to_string(c.g) + "," + std::to_string(c.b); }

double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0') throw FormatError("spec: bad number for " + key + ": '" + v + "'");
    return d;
}

Rgb parse_rgb(const std::string& key, const std::string& v) {
    int r, g, b;
    char tail;
    if (std::sscanf(v.c_str(), "%d,%d,%d%c", &r, &g, &b, &tail) != 3 || r < 0 || g < 0 || b < 0 || r > 255 ||
        g > 255 || b > 255)
        throw FormatError("spec: bad color for " + key + ": '" + v + "'");
    return Rgb{std::uint8_t(r), std::uint8_t(g), std::uint8_t(b)};
}

}  // namespace

std::string encode_spec(const SceneRecord& rec) {
    const auto& s = rec.spec;
    std::ostringstream o;
    o << "shape=" << to_string(s.shape) << "\n"
      << "cx=" << fmt_double(s.cx) << "\n"
      << "cy=" << fmt_double(s.cy) << "\n"
      << "size=" << fmt_double(s.size) << "\n"
      << "material=" << to_string(s.material) << "\n"
      << "color_a=" << fmt_rgb(s.color_a) << "\n"
      << "color_b=" << fmt_rgb(s.color_b) << "\n"
      << "period=" << fmt_double(s.period) << "\n"
      << "orientation=" << fmt_double(s.orientation) << "\n"
      << "tex_x=" << fmt_double(s.tex_x) << "\n"
      << "tex_y=" << fmt_double(s.tex_y) << "\n"
      << "light_angle=" << fmt_double(s.light_angle) << "\n"
      << "source_color=" << fmt_rgb(s.source_color) << "\n"
      << "background=" << fmt_rgb(s.background) << "\n"
      << "seed=" << rec.seed << "\n"
      << "split=" << to_string(rec.split) << "\n";
    return o.str();
}

SceneRecord decode_spec(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("spec: line without '=': '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw FormatError("spec: missing key '" + k + "'");
        return it->second;
    };
    SceneRecord r;
    auto& s = r.spec;
    s.shape = parse_shape(get("shape"));
    s.cx = parse_double("cx", get("cx"));
    s.cy = parse_double("cy", get("cy"));
    s.size = parse_double("size", get("size"));
    s.material = parse_material(get("material"));
    s.color_a = parse_rgb("color_a", get("color_a"));
    s.color_b = parse_rgb("color_b", get("color_b"));
    s.period = parse_double("period", get("period"));
    s.orientation = parse_double("orientation", get("orientation"));
    s.tex_x = parse_double("tex_x", get("tex_x"));
    s.tex_y = parse_double("tex_y", get("tex_y"));
    s.light_angle = parse_double("light_angle", get("light_angle"));
    s.source_color = parse_rgb("source_color", get("source_color"));
    s.background = parse_rgb("background", get("background"));
    const auto& seed = get("seed");
    char* end = nullptr;
    r.seed = std::strtoull(seed.c_str(), &end, 10);
    if (seed.empty() || *end != '\0') throw FormatError("spec: bad seed '" + seed + "'");
    const auto& split = get("split");
    if (split == "train") r.split = Split::train;
    else if (split == "heldout") r.split = Split::heldout;
    else throw FormatError("spec: bad split '" + split + "'");
    try {
        s.validate();
    } catch (const RangeError& e) {
        throw FormatError(std::string("spec: ") + e.what());
    }
    return r;
}

void write_scene(const std::filesystem::path& dir, const SceneRecord& rec, const TrainSample& sample) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    imaging::save_image(sample.illumination, dir / "illum.ppm");
    imaging::save_image(sample.material, dir / "material.ppm");
    imaging::save_image(sample.depth, dir / "depth.pgm");
    imaging::save_image(imaging::mask_to_image(sample.mask), dir / "mask.pgm");
    imaging::save_image(sample.target, dir / "target.ppm");
    std::ofstream out(dir / "spec.txt", std::ios::binary | std::ios::trunc);
    out << encode_spec(rec);
    if (!out) throw IoError("cannot write '" + (dir / "spec.txt").string() + "'");
}

LoadedScene load_scene(const std::filesystem::path& dir) {
    LoadedScene s;
    s.dir = dir;
    std::ifstream in(dir / "spec.txt", std::ios::binary);
    if (!in) throw IoError("cannot open '" + (dir / "spec.txt").string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    s.record = decode_spec(buf.str());
    s.sample.illumination = imaging::load_image(dir / "illum.ppm");
    s.sample.material = imaging::load_image(dir / "material.ppm");
    s.sample.depth = imaging::load_image(dir / "depth.pgm");
    s.sample.mask = imaging::load_mask(dir / "mask.pgm");
    s.sample.target = imaging::load_image(dir / "target.ppm");
    return s;
}

std::vector<LoadedScene> load_dataset(const std::filesystem::path& root, std::optional<Split> split) {
    if (!std::filesystem::is_directory(root)) throw IoError("dataset directory '" + root.string() + "' not found");
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(root))
        if (e.is_directory() && e.path().filename().string().rfind("scene_", 0) == 0) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    std::vector<LoadedScene> out;
    for (const auto& d : dirs) {
        auto s = load_scene(d);
        if (!split || s.record.split == *split) out.push_back(std::move(s));
    }
    return out;
}

}  // namespace mate::synth

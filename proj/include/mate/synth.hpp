#pragma once

// Procedural material-transfer scenes: an analytic shape lit from one side,
// a tileable material texture, and the ground-truth re-textured object.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mate/imaging.hpp"

namespace mate::synth {

inline constexpr int kCanvas = 32;

enum class ShapeKind { circle, square, triangle };
enum class MaterialKind { stripes, checker, radial, noise };

std::string to_string(ShapeKind s);
std::string to_string(MaterialKind m);
ShapeKind parse_shape(const std::string& s);
MaterialKind parse_material(const std::string& s);

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct SceneSpec {
    ShapeKind shape = ShapeKind::circle;
    double cx = 16.0, cy = 16.0;  // canvas pixel units
    double size = 8.0;            // radius / half-side / circumradius

    MaterialKind material = MaterialKind::stripes;
    Rgb color_a, color_b;
    double period = 6.0;       // pixels, >= 2
    double orientation = 0.0;  // stripe direction, radians
    double tex_x = 0.0, tex_y = 0.0;  // texture origin (radial center, noise offset)

    double light_angle = 0.0;  // radians
    Rgb source_color;          // flat base color of the object being re-textured
    Rgb background;

    void validate() const;
    friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct TrainSample {
    imaging::ImagePlane illumination;  // composite of the source render
    imaging::ImagePlane material;      // unshaded texture over the full canvas
    imaging::ImagePlane depth;         // 1 channel, distance to the silhouette edge
    imaging::Mask mask;
    imaging::ImagePlane target;        // ground truth
    imaging::ImagePlane source;        // flat-colored object before compositing
};

/// Deterministic render. `seed` only drives the value-noise lattice.
TrainSample generate_scene(const SceneSpec& spec, std::uint64_t seed);

// Shading factor in [0.4, 1] at pixel center (x + 0.5, y + 0.5).
double shading(const SceneSpec& spec, int x, int y);
bool inside_shape(const SceneSpec& spec, double px, double py);

// Throws FormatError describing the first violated construction invariant.
void validate_sample(const TrainSample& sample, const SceneSpec& spec);

enum class Split { train, heldout };
std::string to_string(Split s);

// Shape/material pairs that only ever appear in the held-out split.
bool is_heldout_combo(ShapeKind shape, MaterialKind material);

SceneSpec random_spec(std::uint64_t seed, Split split);

struct SceneRecord {
    SceneSpec spec;
    std::uint64_t seed = 0;
    Split split = Split::train;
};

// Scene i uses derive_seed(seed, {i}); the first 80% are the training split.
std::vector<SceneRecord> plan_dataset(std::size_t count, std::uint64_t seed);

std::string scene_dir_name(std::size_t index);
std::string encode_spec(const SceneRecord& rec);
SceneRecord decode_spec(const std::string& text);

void write_scene(const std::filesystem::path& dir, const SceneRecord& rec, const TrainSample& sample);

struct LoadedScene {
    std::filesystem::path dir;
    SceneRecord record;
    TrainSample sample;  // source is not stored on disk and stays empty
};

LoadedScene load_scene(const std::filesystem::path& dir);

// All scene_* directories in name order; `split` filters when given.
std::vector<LoadedScene> load_dataset(const std::filesystem::path& root, std::optional<Split> split = std::nullopt);

}  // namespace mate::synth

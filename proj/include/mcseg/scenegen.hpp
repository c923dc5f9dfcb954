#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mcseg/maps.hpp"
#include "mcseg/rng.hpp"
#include "mcseg/tensor.hpp"

namespace mcseg {

enum class Domain { Source, Target };

inline std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

// Pinhole camera looking horizontally; y is down in image coordinates, so
// gravity_up is the -y axis. focal is in pixels.
struct SceneCamera {
  double height_above_floor = 1.4;
  double focal = 64.0;
};

// Appearance knobs for one domain. Geometry is domain-independent; only the
// RGB pipeline consumes these (plus the sensor range, which caps disparity).
struct DomainParams {
  std::vector<double> class_frequencies;  // K entries; objects are drawn from ids >= 3
  double palette_hue_shift = 0.0;         // degrees of hue rotation on the base palette
  double noise_sigma = 0.0;
  int blur_radius = 0;
  double brightness_gradient = 0.0;       // horizontal additive ramp amplitude
  int object_count_min = 2;
  int object_count_max = 5;
  double sensor_max_range = 10.0;         // meters; depths beyond are clamped, disparity 0
};

struct Sample {
  Tensor rgb;             // [3,H,W] in [0,1]
  Tensor depth;           // [H,W] meters in [0.5, 10]
  Tensor hha;             // [3,H,W] in [0,1]
  LabelMap labels;        // K classes
  BoundaryMap boundaries; // binary
  Domain domain = Domain::Source;
  std::string id;
};

// Everything needed to re-derive coverage and depth per pixel; used by tests
// as an independent occlusion/label oracle.
struct SceneDebugInfo {
  struct Instance {
    int instance_id = 0;  // 1 floor, 2 wall, 3 ceiling, objects from 4
    int class_id = 0;
    bool is_ellipse = false;
    double cy = 0, cx = 0, ry = 0, rx = 0;  // pixel-space footprint
    double depth0 = 0, slope_x = 0, slope_y = 0;
  };
  double cam_height = 0, ceil_height = 0, wall_depth = 0, focal = 0;
  std::vector<Instance> objects;
};

// Layered scene: floor/wall/ceiling planes plus layered rectangles/ellipses
// with per-instance constant-or-sloped depth; nearer instances occlude.
// Labels, boundaries and depth are mutually consistent. The shift parameters
// affect RGB only, drawn from a sub-stream that never disturbs geometry.
Sample generate_scene(Rng& rng, const DomainParams& params, int height, int width,
                      int num_classes, Domain domain, SceneDebugInfo* debug = nullptr);

// Simplified HHA: disparity (fixed 0.5..10 m normalization), height above
// ground (normalized by 3 m), and (1 + cos angle(normal, gravity_up)) / 2
// with normals from central differences of backprojected points.
Tensor encode_hha(const Tensor& depth, const SceneCamera& camera,
                  double sensor_max_range = 10.0);

struct DatasetConfig {
  int height = 64;
  int width = 64;
  int num_classes = 6;
  int n_source = 512;
  int n_target_train = 128;
  int n_target_test = 64;
  std::uint64_t seed = 1;
  std::vector<std::string> class_names;  // filled with defaults when empty
  DomainParams source_params;
  DomainParams target_params;
};

// Desk-scale defaults: clean source, appearance-shifted target.
DatasetConfig default_dataset_config();

DatasetConfig dataset_config_from_json_text(const std::string& text);
std::string dataset_config_to_json_text(const DatasetConfig& cfg);

struct WriteResult {
  std::string manifest_path;
  int samples_written = 0;
};

// Emits source/train, target/train, target/test plus manifest.json.
// Target-train labels are written but flagged eval-only in the manifest.
WriteResult write_dataset(const DatasetConfig& cfg, const std::string& out_dir);

// Per-class pixel fractions (sums to 1) over the non-ignored pixels of a
// split: "source_train", "target_train" or "target_test".
std::vector<double> class_distribution(const std::string& dataset_dir,
                                       const std::string& split);

// Base palette entry for class k (shared by rendering and documentation).
void base_palette_color(int class_id, double* r, double* g, double* b);

}  // namespace mcseg

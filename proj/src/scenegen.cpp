#include "mcseg/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mcseg/dataset.hpp"
#include "mcseg/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mcseg {

namespace {

constexpr double kDepthNear = 0.5;   // global depth range, meters
constexpr double kDepthFar = 10.0;
constexpr double kHeightNorm = 3.0;  // max room height for HHA channel 2

double clamp01(double v) { return v < 0 ? 0 : (v > 1 ? 1 : v); }

void rgb_to_hsv(double r, double g, double b, double* h, double* s, double* v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  *v = mx;
  *s = mx <= 0 ? 0 : d / mx;
  if (d <= 0) {
    *h = 0;
    return;
  }
  double hue;
  if (mx == r) {
    hue = std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    hue = (b - r) / d + 2.0;
  } else {
    hue = (r - g) / d + 4.0;
  }
  hue /= 6.0;
  if (hue < 0) hue += 1.0;
  *h = hue;
}

void hsv_to_rgb(double h, double s, double v, double* r, double* g, double* b) {
  h = std::fmod(h, 1.0);
  if (h < 0) h += 1.0;
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double rr = 0, gg = 0, bb = 0;
  if (hp < 1) { rr = c; gg = x; }
  else if (hp < 2) { rr = x; gg = c; }
  else if (hp < 3) { gg = c; bb = x; }
  else if (hp < 4) { gg = x; bb = c; }
  else if (hp < 5) { rr = x; bb = c; }
  else { rr = c; bb = x; }
  const double m = v - c;
  *r = rr + m;
  *g = gg + m;
  *b = bb + m;
}

void hue_rotate(double deg, double* r, double* g, double* b) {
  if (deg == 0.0) return;
  double h, s, v;
  rgb_to_hsv(*r, *g, *b, &h, &s, &v);
  hsv_to_rgb(h + deg / 360.0, s, v, r, g, b);
}

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

struct Rgb {
  double r = 0, g = 0, b = 0;
};

std::string default_class_name(int k) {
  static const char* kNames[] = {"floor", "wall", "ceiling", "crate", "table", "screen"};
  if (k < 6) return kNames[k];
  return cat("object", k);
}

void validate_domain_params(const DomainParams& p, int num_classes, const char* which) {
  if (static_cast<int>(p.class_frequencies.size()) != num_classes) {
    throw ConfigError(cat(which, ": class_frequencies must have K=", num_classes, " entries"));
  }
  double sum = 0;
  for (double f : p.class_frequencies) {
    if (f < 0) throw ConfigError(cat(which, ": class frequencies must be non-negative"));
    sum += f;
  }
  if (!(sum > 0)) throw ConfigError(cat(which, ": class frequencies must not all be zero"));
  if (p.object_count_min < 0 || p.object_count_max < p.object_count_min) {
    throw ConfigError(cat(which, ": invalid object_count range"));
  }
  if (p.noise_sigma < 0 || p.blur_radius < 0 || p.blur_radius > 8) {
    throw ConfigError(cat(which, ": invalid noise/blur parameters"));
  }
  if (p.sensor_max_range <= kDepthNear) {
    throw ConfigError(cat(which, ": sensor_max_range must exceed ", kDepthNear));
  }
}

}  // namespace

void base_palette_color(int class_id, double* r, double* g, double* b) {
  static const double kBase[6][3] = {
      {0.55, 0.35, 0.12},  // floor: brown
      {0.35, 0.55, 0.75},  // wall: steel blue
      {0.85, 0.80, 0.55},  // ceiling: warm cream
      {0.80, 0.20, 0.20},  // red
      {0.20, 0.65, 0.25},  // green
      {0.60, 0.25, 0.70},  // purple
  };
  if (class_id < 6) {
    *r = kBase[class_id][0];
    *g = kBase[class_id][1];
    *b = kBase[class_id][2];
    return;
  }
  // golden-angle hues beyond the named classes
  const double h = std::fmod(0.11 + 0.61803398875 * (class_id - 6), 1.0);
  hsv_to_rgb(h, 0.65, 0.8, r, g, b);
}

Sample generate_scene(Rng& rng, const DomainParams& params, int height, int width,
                      int num_classes, Domain domain, SceneDebugInfo* debug) {
  if (num_classes < 4) {
    throw ContractError(cat("generate_scene: need K >= 4 (floor/wall/ceiling + objects), got ",
                            num_classes));
  }
  if (height < 32 || width < 32) {
    throw ContractError(cat("generate_scene: minimum size is 32x32, got ", height, "x", width));
  }
  if (static_cast<int>(params.class_frequencies.size()) != num_classes) {
    throw ContractError("generate_scene: class_frequencies size must equal K");
  }

  // Two sub-streams: geometry must be identical across domains with the same
  // seed; the appearance shift draws only from its own stream.
  Rng geom(rng.next_u64());
  Rng shift(rng.next_u64());

  const int H = height, W = width;
  const double f = static_cast<double>(W);
  const double cam_h = geom.uniform(1.2, 1.6);
  const double ceil_h = geom.uniform(2.3, 2.9);
  const double ceil_above = ceil_h - cam_h;
  const double wall_d = geom.uniform(3.5, 8.0);

  struct Instance {
    int instance_id;
    int class_id;
    bool is_ellipse;
    double cy, cx, ry, rx;
    double depth0, slope_x, slope_y;
  };

  // Per-instance color jitter, structural instances first. Instance 0 unused.
  std::vector<Rgb> jitter(4);
  for (int i = 1; i <= 3; ++i) {
    jitter[static_cast<std::size_t>(i)] = {geom.uniform(-0.06, 0.06), geom.uniform(-0.06, 0.06),
                                           geom.uniform(-0.06, 0.06)};
  }

  double object_freq_total = 0;
  for (int k = 3; k < num_classes; ++k) object_freq_total += params.class_frequencies[static_cast<std::size_t>(k)];

  const int requested = static_cast<int>(geom.uniform_int(params.object_count_min, params.object_count_max));
  const int n_objects = object_freq_total > 0 ? requested : 0;

  std::vector<Instance> objects;
  objects.reserve(static_cast<std::size_t>(n_objects));
  for (int i = 0; i < n_objects; ++i) {
    Instance inst;
    inst.instance_id = 4 + i;
    double x = geom.uniform(0.0, object_freq_total);
    int cls = num_classes - 1;
    for (int k = 3; k < num_classes; ++k) {
      x -= params.class_frequencies[static_cast<std::size_t>(k)];
      if (x < 0) {
        cls = k;
        break;
      }
    }
    inst.class_id = cls;
    inst.is_ellipse = geom.coin();
    inst.cy = geom.uniform(0.15, 0.85) * H;
    inst.cx = geom.uniform(0.15, 0.85) * W;
    inst.ry = geom.uniform(0.08, 0.22) * H;
    inst.rx = geom.uniform(0.08, 0.22) * W;
    inst.depth0 = geom.uniform(1.0, 0.9 * wall_d);
    if (geom.coin()) {
      inst.slope_x = geom.uniform(-0.015, 0.015);
      inst.slope_y = geom.uniform(-0.015, 0.015);
    } else {
      inst.slope_x = inst.slope_y = 0;
    }
    objects.push_back(inst);
    jitter.push_back({geom.uniform(-0.06, 0.06), geom.uniform(-0.06, 0.06),
                      geom.uniform(-0.06, 0.06)});
  }

  Sample s;
  s.domain = domain;
  s.depth = Tensor({H, W});
  s.labels = LabelMap(H, W);
  s.boundaries = BoundaryMap(H, W);
  std::vector<int> instance_map(static_cast<std::size_t>(H) * W, 0);

  auto object_depth = [](const Instance& o, int r, int c) {
    double d = o.depth0 + o.slope_x * (c - o.cx) + o.slope_y * (r - o.cy);
    return std::min(std::max(d, 0.55), 9.8);
  };
  auto covers = [](const Instance& o, int r, int c) {
    const double dy = (r - o.cy) / o.ry;
    const double dx = (c - o.cx) / o.rx;
    if (o.is_ellipse) return dy * dy + dx * dx <= 1.0;
    return std::abs(r - o.cy) <= o.ry && std::abs(c - o.cx) <= o.rx;
  };

  for (int r = 0; r < H; ++r) {
    const double v = r + 0.5 - H / 2.0;
    // structural surfaces: wall unless the floor/ceiling plane is nearer
    double d = wall_d;
    int cls = 1, inst = 2;
    if (v > 0) {
      const double floor_d = cam_h * f / v;
      if (floor_d <= d) {
        d = floor_d;
        cls = 0;
        inst = 1;
      }
    } else if (v < 0) {
      const double ceil_d = ceil_above * f / (-v);
      if (ceil_d <= d) {
        d = ceil_d;
        cls = 2;
        inst = 3;
      }
    }
    for (int c = 0; c < W; ++c) {
      double best_d = d;
      int best_cls = cls, best_inst = inst;
      for (const Instance& o : objects) {
        if (!covers(o, r, c)) continue;
        const double od = object_depth(o, r, c);
        if (od < best_d) {
          best_d = od;
          best_cls = o.class_id;
          best_inst = o.instance_id;
        }
      }
      s.depth.at2(r, c) = static_cast<float>(std::min(std::max(best_d, kDepthNear), kDepthFar));
      s.labels.at(r, c) = static_cast<std::uint8_t>(best_cls);
      instance_map[static_cast<std::size_t>(r) * W + c] = best_inst;
    }
  }

  // Boundaries: the nearer side of every instance interface (ties break to
  // the smaller instance id).
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const int i0 = instance_map[static_cast<std::size_t>(r) * W + c];
      const float d0 = s.depth.at2(r, c);
      const int neigh[2][2] = {{r, c + 1}, {r + 1, c}};
      for (const auto& q : neigh) {
        if (q[0] >= H || q[1] >= W) continue;
        const int i1 = instance_map[static_cast<std::size_t>(q[0]) * W + q[1]];
        if (i0 == i1) continue;
        const float d1 = s.depth.at2(q[0], q[1]);
        if (d0 < d1 || (d0 == d1 && i0 < i1)) {
          s.boundaries.at(r, c) = 1.f;
        } else {
          s.boundaries.at(q[0], q[1]) = 1.f;
        }
      }
    }
  }

  // HHA from geometry (domain shift never touches it beyond the sensor range).
  SceneCamera cam;
  cam.height_above_floor = cam_h;
  cam.focal = f;
  for (auto& dv : s.depth.data) {
    if (dv > params.sensor_max_range) dv = static_cast<float>(params.sensor_max_range);
  }
  s.hha = encode_hha(s.depth, cam, params.sensor_max_range);

  // RGB render with the domain palette.
  std::vector<Rgb> palette(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    Rgb col;
    base_palette_color(k, &col.r, &col.g, &col.b);
    hue_rotate(params.palette_hue_shift, &col.r, &col.g, &col.b);
    palette[static_cast<std::size_t>(k)] = col;
  }

  s.rgb = Tensor({3, H, W});
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const std::size_t px = static_cast<std::size_t>(r) * W + c;
      const int cls2 = s.labels.at(r, c);
      const int inst2 = instance_map[px];
      const double shade = 1.0 - 0.45 * (s.depth.at2(r, c) - kDepthNear) / (kDepthFar - kDepthNear);
      const Rgb& base = palette[static_cast<std::size_t>(cls2)];
      const Rgb& jit = jitter[static_cast<std::size_t>(inst2)];
      const double ramp = params.brightness_gradient * ((c + 0.5) / W - 0.5);
      s.rgb.data[0 * H * W + px] = static_cast<float>(base.r * shade + jit.r + ramp);
      s.rgb.data[1 * H * W + px] = static_cast<float>(base.g * shade + jit.g + ramp);
      s.rgb.data[2 * H * W + px] = static_cast<float>(base.b * shade + jit.b + ramp);
    }
  }

  if (params.blur_radius > 0) {
    const int rad = params.blur_radius;
    Tensor blurred({3, H, W});
    for (int ch = 0; ch < 3; ++ch) {
      for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
          double acc = 0;
          for (int dr = -rad; dr <= rad; ++dr) {
            const int rr = std::clamp(r + dr, 0, H - 1);
            for (int dc = -rad; dc <= rad; ++dc) {
              const int cc = std::clamp(c + dc, 0, W - 1);
              acc += s.rgb.data[static_cast<std::size_t>(ch) * H * W + static_cast<std::size_t>(rr) * W + cc];
            }
          }
          blurred.data[static_cast<std::size_t>(ch) * H * W + static_cast<std::size_t>(r) * W + c] =
              static_cast<float>(acc / ((2 * rad + 1) * (2 * rad + 1)));
        }
      }
    }
    s.rgb = std::move(blurred);
  }

  if (params.noise_sigma > 0) {
    for (auto& v : s.rgb.data) v = static_cast<float>(v + shift.normal() * params.noise_sigma);
  }
  for (auto& v : s.rgb.data) v = static_cast<float>(clamp01(v));

  if (debug != nullptr) {
    debug->cam_height = cam_h;
    debug->ceil_height = ceil_h;
    debug->wall_depth = wall_d;
    debug->focal = f;
    debug->objects.clear();
    for (const Instance& o : objects) {
      debug->objects.push_back({o.instance_id, o.class_id, o.is_ellipse, o.cy, o.cx, o.ry, o.rx,
                                o.depth0, o.slope_x, o.slope_y});
    }
  }
  return s;
}

Tensor encode_hha(const Tensor& depth, const SceneCamera& camera, double sensor_max_range) {
  if (depth.ndim() != 2) {
    throw ContractError(cat("encode_hha: depth must be [H,W], got ", shape_str(depth.shape)));
  }
  const int H = depth.dim(0), W = depth.dim(1);
  for (float d : depth.data) {
    if (!(d > 0)) throw ContractError("encode_hha: depth must be positive everywhere");
  }
  const double f = camera.focal;
  const double cam_h = camera.height_above_floor;

  Tensor hha({3, H, W});
  auto vrow = [&](int r) { return r + 0.5 - H / 2.0; };
  auto ucol = [&](int c) { return c + 0.5 - W / 2.0; };
  auto point = [&](int r, int c) -> Vec3 {
    const double d = depth.at2(std::clamp(r, 0, H - 1), std::clamp(c, 0, W - 1));
    return {d * ucol(std::clamp(c, 0, W - 1)) / f, d * vrow(std::clamp(r, 0, H - 1)) / f, d};
  };

  constexpr double kDispLo = 1.0 / kDepthFar;
  constexpr double kDispHi = 1.0 / kDepthNear;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const std::size_t px = static_cast<std::size_t>(r) * W + c;
      const double d = depth.at2(r, c);

      // 1: horizontal disparity, zeroed past the sensor range
      double disp = 0.0;
      if (d < sensor_max_range) {
        disp = clamp01((1.0 / d - kDispLo) / (kDispHi - kDispLo));
      }
      hha.data[px] = static_cast<float>(disp);

      // 2: height above ground, normalized by a fixed 3 m room bound
      const double h_above = cam_h - d * vrow(r) / f;
      hha.data[static_cast<std::size_t>(H) * W + px] = static_cast<float>(clamp01(h_above / kHeightNorm));

      // 3: angle of the depth-gradient surface normal against gravity-up
      const Vec3 tc = {point(r, c + 1).x - point(r, c - 1).x,
                       point(r, c + 1).y - point(r, c - 1).y,
                       point(r, c + 1).z - point(r, c - 1).z};
      const Vec3 tr = {point(r + 1, c).x - point(r - 1, c).x,
                       point(r + 1, c).y - point(r - 1, c).y,
                       point(r + 1, c).z - point(r - 1, c).z};
      Vec3 n = cross(tc, tr);
      const double norm = std::sqrt(dot(n, n));
      double cos_theta = 0.0;
      if (norm > 1e-12) {
        n.x /= norm;
        n.y /= norm;
        n.z /= norm;
        const Vec3 ray = {ucol(c) / f, vrow(r) / f, 1.0};
        if (dot(n, ray) > 0) {
          n.x = -n.x;
          n.y = -n.y;
          n.z = -n.z;
        }
        cos_theta = -n.y;  // gravity_up is (0,-1,0) in the y-down convention
      }
      hha.data[2 * static_cast<std::size_t>(H) * W + px] =
          static_cast<float>(clamp01((1.0 + cos_theta) / 2.0));
    }
  }
  return hha;
}

DatasetConfig default_dataset_config() {
  DatasetConfig cfg;
  cfg.source_params.class_frequencies.assign(static_cast<std::size_t>(cfg.num_classes), 1.0);
  cfg.target_params.class_frequencies.assign(static_cast<std::size_t>(cfg.num_classes), 1.0);
  cfg.target_params.palette_hue_shift = 150.0;
  cfg.target_params.noise_sigma = 0.05;
  cfg.target_params.blur_radius = 1;
  cfg.target_params.brightness_gradient = 0.30;
  for (int k = 0; k < cfg.num_classes; ++k) cfg.class_names.push_back(default_class_name(k));
  return cfg;
}

namespace {

void domain_params_from_json(const json& j, DomainParams* p, int num_classes, const char* which) {
  if (j.contains("class_frequencies")) {
    p->class_frequencies = j.at("class_frequencies").get<std::vector<double>>();
  }
  if (p->class_frequencies.empty()) {
    p->class_frequencies.assign(static_cast<std::size_t>(num_classes), 1.0);
  }
  p->palette_hue_shift = j.value("palette_hue_shift", p->palette_hue_shift);
  p->noise_sigma = j.value("noise_sigma", p->noise_sigma);
  p->blur_radius = j.value("blur_radius", p->blur_radius);
  p->brightness_gradient = j.value("brightness_gradient", p->brightness_gradient);
  p->object_count_min = j.value("object_count_min", p->object_count_min);
  p->object_count_max = j.value("object_count_max", p->object_count_max);
  p->sensor_max_range = j.value("sensor_max_range", p->sensor_max_range);
  validate_domain_params(*p, num_classes, which);
}

json domain_params_to_json(const DomainParams& p) {
  return json{{"class_frequencies", p.class_frequencies},
              {"palette_hue_shift", p.palette_hue_shift},
              {"noise_sigma", p.noise_sigma},
              {"blur_radius", p.blur_radius},
              {"brightness_gradient", p.brightness_gradient},
              {"object_count_min", p.object_count_min},
              {"object_count_max", p.object_count_max},
              {"sensor_max_range", p.sensor_max_range}};
}

}  // namespace

DatasetConfig dataset_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(cat("dataset config: ", e.what()));
  }
  DatasetConfig cfg = default_dataset_config();
  try {
    cfg.height = j.value("height", cfg.height);
    cfg.width = j.value("width", cfg.width);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.n_source = j.value("n_source", cfg.n_source);
    cfg.n_target_train = j.value("n_target_train", cfg.n_target_train);
    cfg.n_target_test = j.value("n_target_test", cfg.n_target_test);
    cfg.seed = j.value("seed", cfg.seed);
    // defaults were sized for K=6; refit to the requested K before overrides
    cfg.class_names.clear();
    cfg.source_params.class_frequencies.clear();
    cfg.target_params.class_frequencies.clear();
    if (j.contains("class_names")) {
      cfg.class_names = j.at("class_names").get<std::vector<std::string>>();
    } else {
      for (int k = 0; k < cfg.num_classes; ++k) cfg.class_names.push_back(default_class_name(k));
    }
    domain_params_from_json(j.value("source", json::object()), &cfg.source_params,
                            cfg.num_classes, "source");
    domain_params_from_json(j.value("target", json::object()), &cfg.target_params,
                            cfg.num_classes, "target");
  } catch (const json::exception& e) {
    throw ConfigError(cat("dataset config: ", e.what()));
  }

  if (cfg.num_classes < 4) throw ConfigError("dataset config: num_classes must be >= 4");
  if (cfg.height < 32 || cfg.width < 32) throw ConfigError("dataset config: minimum size is 32x32");
  if (cfg.n_source < 1 || cfg.n_target_train < 1 || cfg.n_target_test < 1) {
    throw ConfigError("dataset config: every split needs at least one sample");
  }
  if (static_cast<int>(cfg.class_names.size()) != cfg.num_classes) {
    throw ConfigError(cat("dataset config: ", cfg.class_names.size(), " class names for K=",
                          cfg.num_classes));
  }
  return cfg;
}

std::string dataset_config_to_json_text(const DatasetConfig& cfg) {
  json j{{"height", cfg.height},
         {"width", cfg.width},
         {"num_classes", cfg.num_classes},
         {"n_source", cfg.n_source},
         {"n_target_train", cfg.n_target_train},
         {"n_target_test", cfg.n_target_test},
         {"seed", cfg.seed},
         {"class_names", cfg.class_names},
         {"source", domain_params_to_json(cfg.source_params)},
         {"target", domain_params_to_json(cfg.target_params)}};
  return j.dump(2) + "\n";
}

namespace {

ImageU8 rgb_to_image(const Tensor& rgb) {
  const int H = rgb.dim(1), W = rgb.dim(2);
  ImageU8 img;
  img.height = H;
  img.width = W;
  img.channels = 3;
  img.data.resize(static_cast<std::size_t>(H) * W * 3);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const float v = rgb.data[static_cast<std::size_t>(ch) * H * W + static_cast<std::size_t>(r) * W + c];
        img.data[(static_cast<std::size_t>(r) * W + c) * 3 + static_cast<std::size_t>(ch)] =
            static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.0));
      }
  return img;
}

// Writes the five per-sample files under root/rel_dir and fills `files` with
// dataset-relative paths.
void write_sample(const fs::path& root, const fs::path& rel_dir, const Sample& s, json* files) {
  const auto rel = [&](const char* suffix) {
    return (rel_dir / (s.id + suffix)).generic_string();
  };
  const auto abs = [&](const char* suffix) {
    return (root / rel_dir / (s.id + suffix)).generic_string();
  };

  write_ppm(abs("_rgb.ppm"), rgb_to_image(s.rgb));
  write_ppm(abs("_hha.ppm"), rgb_to_image(s.hha));

  const int H = s.depth.dim(0), W = s.depth.dim(1);
  ImageU16 depth_img;
  depth_img.height = H;
  depth_img.width = W;
  depth_img.data.resize(static_cast<std::size_t>(H) * W);
  for (std::size_t i = 0; i < depth_img.data.size(); ++i) {
    const double mm = std::lround(static_cast<double>(s.depth.data[i]) * 1000.0);
    depth_img.data[i] = static_cast<std::uint16_t>(std::min(mm, 65535.0));
  }
  write_pgm16(abs("_depth.pgm"), depth_img);

  ImageU8 label_img;
  label_img.height = H;
  label_img.width = W;
  label_img.channels = 1;
  label_img.data = s.labels.values;
  write_pgm8(abs("_labels.pgm"), label_img);

  ImageU8 bnd_img;
  bnd_img.height = H;
  bnd_img.width = W;
  bnd_img.channels = 1;
  bnd_img.data.resize(static_cast<std::size_t>(H) * W);
  for (std::size_t i = 0; i < bnd_img.data.size(); ++i) {
    bnd_img.data[i] = s.boundaries.values[i] == 1.f ? 255 : 0;
  }
  write_pgm8(abs("_boundaries.pgm"), bnd_img);

  (*files)["rgb"] = rel("_rgb.ppm");
  (*files)["hha"] = rel("_hha.ppm");
  (*files)["depth"] = rel("_depth.pgm");
  (*files)["labels"] = rel("_labels.pgm");
  (*files)["boundaries"] = rel("_boundaries.pgm");
}

}  // namespace

WriteResult write_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
  validate_domain_params(cfg.source_params, cfg.num_classes, "source");
  validate_domain_params(cfg.target_params, cfg.num_classes, "target");

  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "source" / "train", ec);
  fs::create_directories(root / "target" / "train", ec);
  fs::create_directories(root / "target" / "test", ec);
  if (ec) throw IoError(cat(out_dir, ": cannot create dataset directories: ", ec.message()));

  json samples = json::array();
  int written = 0;

  struct Group {
    const char* prefix;
    Domain domain;
    const char* split;
    int count;
    fs::path dir;
    const DomainParams* params;
    const char* labels_usage;
  };
  const Group groups[] = {
      {"src_train", Domain::Source, "train", cfg.n_source, fs::path("source") / "train",
       &cfg.source_params, "train"},
      {"tgt_train", Domain::Target, "train", cfg.n_target_train, fs::path("target") / "train",
       &cfg.target_params, "eval_only"},
      {"tgt_test", Domain::Target, "test", cfg.n_target_test, fs::path("target") / "test",
       &cfg.target_params, "eval_only"},
  };

  for (const Group& g : groups) {
    for (int i = 0; i < g.count; ++i) {
      char idbuf[64];
      std::snprintf(idbuf, sizeof idbuf, "%s_%04d", g.prefix, i);
      Rng rng = Rng::derive(cfg.seed, idbuf);
      Sample s = generate_scene(rng, *g.params, cfg.height, cfg.width, cfg.num_classes, g.domain);
      s.id = idbuf;

      json files;
      write_sample(root, g.dir, s, &files);
      samples.push_back(json{{"id", s.id},
                             {"domain", to_string(g.domain)},
                             {"split", g.split},
                             {"labels_usage", g.labels_usage},
                             {"files", files}});
      ++written;
    }
  }

  json manifest{{"version", "mcseg-dataset-1"},
                {"seed", cfg.seed},
                {"K", cfg.num_classes},
                {"class_names", cfg.class_names},
                {"samples", samples}};

  const std::string manifest_path = (root / "manifest.json").generic_string();
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw IoError(cat(manifest_path, ": cannot open for writing"));
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError(cat(manifest_path, ": short write"));

  return {manifest_path, written};
}

std::vector<double> class_distribution(const std::string& dataset_dir, const std::string& split) {
  const Manifest manifest = Manifest::load(dataset_dir);
  const int K = manifest.num_classes;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(K), 0);
  std::int64_t total = 0;
  int matched = 0;
  for (const ManifestEntry& e : manifest.samples) {
    if (e.canonical_split() != split) continue;
    ++matched;
    const ImageU8 img = read_pgm8((fs::path(dataset_dir) / e.files.at("labels")).generic_string());
    for (std::uint8_t v : img.data) {
      if (v == LabelMap::kIgnore) continue;
      if (v >= K) throw ContractError(cat("label id ", int(v), " out of range for K=", K));
      ++counts[v];
      ++total;
    }
  }
  if (matched == 0) {
    throw SemanticError(cat("split \"", split, "\" has no samples in ", dataset_dir));
  }
  std::vector<double> fractions(static_cast<std::size_t>(K), 0.0);
  for (int k = 0; k < K; ++k) {
    fractions[static_cast<std::size_t>(k)] =
        total > 0 ? static_cast<double>(counts[static_cast<std::size_t>(k)]) / static_cast<double>(total) : 0.0;
  }
  return fractions;
}

}  // namespace mcseg

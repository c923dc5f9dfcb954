#include "mcseg/refine.hpp"

#include <algorithm>
#include <cmath>

namespace mcseg {

BoundaryMap threshold_boundary(const BoundaryMap& bmap, double t) {
  if (!(t > 0.0 && t <= 1.0)) {
    throw ContractError(cat("threshold_boundary: t must be in (0, 1], got ", t));
  }
  BoundaryMap mask(bmap.height, bmap.width);
  for (std::size_t i = 0; i < bmap.values.size(); ++i) {
    mask.values[i] = bmap.values[i] >= static_cast<float>(t) ? 1.f : 0.f;
  }
  return mask;
}

BoundaryMap sobel_edges(const Tensor& rgb) {
  if (rgb.ndim() != 3 || rgb.dim(0) != 3) {
    throw ContractError(cat("sobel_edges: expected [3,H,W], got ", shape_str(rgb.shape)));
  }
  const int H = rgb.dim(1), W = rgb.dim(2);
  std::vector<double> gray(static_cast<std::size_t>(H) * W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const std::size_t px = static_cast<std::size_t>(r) * W + c;
      gray[px] = (rgb.data[px] + rgb.data[static_cast<std::size_t>(H) * W + px] +
                  rgb.data[2 * static_cast<std::size_t>(H) * W + px]) / 3.0;
    }

  BoundaryMap out(H, W);  // borders stay 0
  double max_mag = 0.0;
  std::vector<double> mag(static_cast<std::size_t>(H) * W, 0.0);
  for (int r = 1; r + 1 < H; ++r) {
    for (int c = 1; c + 1 < W; ++c) {
      auto g = [&](int dr, int dc) { return gray[static_cast<std::size_t>(r + dr) * W + (c + dc)]; };
      // paired differences cancel exactly on constant input
      const double gx = (g(-1, 1) - g(-1, -1)) + 2 * (g(0, 1) - g(0, -1)) + (g(1, 1) - g(1, -1));
      const double gy = (g(1, -1) - g(-1, -1)) + 2 * (g(1, 0) - g(-1, 0)) + (g(1, 1) - g(-1, 1));
      const double m = std::sqrt(gx * gx + gy * gy);
      mag[static_cast<std::size_t>(r) * W + c] = m;
      max_mag = std::max(max_mag, m);
    }
  }
  if (max_mag > 0.0) {
    for (std::size_t i = 0; i < mag.size(); ++i) {
      out.values[i] = static_cast<float>(mag[i] / max_mag);
    }
  }
  return out;
}

RegionMap label_regions(const BoundaryMap& mask) {
  const int H = mask.height, W = mask.width;
  RegionMap rm;
  rm.height = H;
  rm.width = W;
  rm.ids.assign(static_cast<std::size_t>(H) * W, 0);
  rm.count = 0;

  std::vector<int> stack;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const std::size_t px = static_cast<std::size_t>(r) * W + c;
      if (mask.values[px] != 0.f || rm.ids[px] != 0) continue;
      const int id = ++rm.count;
      rm.ids[px] = id;
      stack.assign(1, static_cast<int>(px));
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        const int cr = cur / W, cc = cur % W;
        const int next[4][2] = {{cr - 1, cc}, {cr + 1, cc}, {cr, cc - 1}, {cr, cc + 1}};
        for (const auto& n : next) {
          if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W) continue;
          const std::size_t np = static_cast<std::size_t>(n[0]) * W + n[1];
          if (mask.values[np] != 0.f || rm.ids[np] != 0) continue;
          rm.ids[np] = id;
          stack.push_back(static_cast<int>(np));
        }
      }
    }
  }
  return rm;
}

LabelMap refine_segmentation(const LabelMap& seg, const RegionMap& regions,
                             double max_area_fraction) {
  if (seg.height != regions.height || seg.width != regions.width) {
    throw ContractError(cat("refine_segmentation: segmentation ", seg.height, "x", seg.width,
                            " vs regions ", regions.height, "x", regions.width));
  }
  const std::int64_t max_area =
      static_cast<std::int64_t>(max_area_fraction * seg.height * seg.width);

  std::vector<std::int64_t> area(static_cast<std::size_t>(regions.count) + 1, 0);
  for (int id : regions.ids) ++area[static_cast<std::size_t>(id)];

  // per-region label histogram (256 bins covers the ignore id too)
  std::vector<std::int64_t> votes((static_cast<std::size_t>(regions.count) + 1) * 256, 0);
  for (std::size_t i = 0; i < regions.ids.size(); ++i) {
    const int id = regions.ids[i];
    if (id == 0) continue;
    ++votes[static_cast<std::size_t>(id) * 256 + seg.values[i]];
  }

  std::vector<int> winner(static_cast<std::size_t>(regions.count) + 1, -1);
  for (int id = 1; id <= regions.count; ++id) {
    if (area[static_cast<std::size_t>(id)] > max_area) continue;  // oversized: untouched
    std::int64_t best = -1;
    int best_label = -1;
    for (int lab = 0; lab < 256; ++lab) {
      const std::int64_t n = votes[static_cast<std::size_t>(id) * 256 + lab];
      if (n > best) {  // ties resolve to the smallest class id
        best = n;
        best_label = lab;
      }
    }
    winner[static_cast<std::size_t>(id)] = best_label;
  }

  LabelMap out = seg;
  for (std::size_t i = 0; i < regions.ids.size(); ++i) {
    const int id = regions.ids[i];
    if (id == 0) continue;  // points exactly on the boundaries are untouched
    const int w = winner[static_cast<std::size_t>(id)];
    if (w >= 0) out.values[i] = static_cast<std::uint8_t>(w);
  }
  return out;
}

}  // namespace mcseg

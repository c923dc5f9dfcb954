#pragma once

#include <cstdint>
#include <vector>

#include "mcseg/common.hpp"

namespace mcseg {

// Per-pixel class ids in [0, K), 255 = ignore.
struct LabelMap {
  static constexpr std::uint8_t kIgnore = 255;

  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;  // row-major

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }

  void validate(int num_classes) const {
    for (std::uint8_t v : values) {
      if (v != kIgnore && v >= num_classes) {
        throw ContractError(cat("label id ", int(v), " out of range for K=", num_classes));
      }
    }
  }
};

// Boundary map: {0,1} ground truth or [0,1] float predictions.
struct BoundaryMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;  // row-major

  BoundaryMap() = default;
  BoundaryMap(int h, int w, float fill = 0.f)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }

  bool is_binary() const {
    for (float v : values) {
      if (v != 0.f && v != 1.f) return false;
    }
    return true;
  }
};

}  // namespace mcseg

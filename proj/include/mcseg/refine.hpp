#pragma once

#include "mcseg/maps.hpp"
#include "mcseg/tensor.hpp"

namespace mcseg {

// 4-connected components of non-boundary pixels; id 0 is reserved for
// boundary pixels, region ids are dense in [1, count] in raster-scan
// first-touch order.
struct RegionMap {
  int height = 0;
  int width = 0;
  std::vector<int> ids;
  int count = 0;

  int at(int r, int c) const { return ids[static_cast<std::size_t>(r) * width + c]; }
};

// mask = (bmap >= t); requires 0 < t <= 1.
BoundaryMap threshold_boundary(const BoundaryMap& bmap, double t);

BoundaryMap sobel_edges(const Tensor& rgb);  // [3,H,W] -> gradient magnitude in [0,1]

RegionMap label_regions(const BoundaryMap& mask);

// Majority vote per region (ties to the smallest class id). Regions larger
// than max_area_fraction of the image and boundary pixels keep their labels.
LabelMap refine_segmentation(const LabelMap& seg, const RegionMap& regions,
                             double max_area_fraction = 1.0 / 3.0);

}  // namespace mcseg

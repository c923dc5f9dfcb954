#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcseg/maps.hpp"

namespace mcseg {

// counts[i*K + j] = pixels of ground-truth class i predicted as class j.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int k)
      : num_classes(k), counts(static_cast<std::size_t>(k) * k, 0) {}

  std::int64_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt) * num_classes + pred];
  }
  std::int64_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt) * num_classes + pred];
  }
  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }
  void merge(const ConfusionMatrix& other);
};

// Ignore pixels (gt == 255) are excluded; any other id >= K is an error.
ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int num_classes);

struct SegScores {
  double pix_acc = 0;
  double mean_acc = 0;
  double fw_iou = 0;
  double mean_iou = 0;
  std::vector<double> per_class_iou;  // 0 for classes absent from gt and pred
  std::vector<char> iou_included;     // classes entering the mIoU average
};

SegScores seg_scores(const ConfusionMatrix& cm);

struct BoundaryScores {
  double ods = 0;
  double ois = 0;
  double ap = 0;
  struct PrPoint {
    double threshold, precision, recall;
  };
  std::vector<PrPoint> pr_curve;
};

// Thresholds 0.01..0.99 step 0.01. A predicted edge pixel is a true positive
// when an unmatched gt edge pixel lies within Chebyshev distance `radius`;
// matching is greedy one-to-one in raster order.
BoundaryScores boundary_scores(const std::vector<const BoundaryMap*>& preds,
                               const std::vector<const BoundaryMap*>& gts, int radius = 1);

struct Report {
  // scores as percentages rounded to one decimal
  double pix_acc = 0, mean_acc = 0, fw_iou = 0, mean_iou = 0;
  std::map<std::string, double> per_class_iou;  // percentages, one decimal
  std::vector<std::vector<double>> confusion_row_normalized;
  struct Boundary {
    double ods = 0, ois = 0, ap = 0;
    bool operator==(const Boundary&) const = default;
  };
  std::optional<Boundary> boundary;
  std::string checkpoint;
  int epoch = 0;
  std::string split;
  bool refine = false;

  bool operator==(const Report&) const = default;
};

Report make_report(const SegScores& scores, const ConfusionMatrix& cm,
                   const std::vector<std::string>& class_names,
                   const std::optional<BoundaryScores>& boundary, const std::string& checkpoint,
                   int epoch, const std::string& split, bool refine);

std::string report_to_json_text(const Report& report);
Report report_from_json_text(const std::string& text);
void write_report(const Report& report, const std::string& path);
Report read_report(const std::string& path);

}  // namespace mcseg

#pragma once

#include "mcseg/dataset.hpp"
#include "mcseg/metrics.hpp"
#include "mcseg/models.hpp"

namespace mcseg {

struct EvalOptions {
  std::string split = "target_test";
  bool refine = false;
  double boundary_threshold = 0.5;
  int match_radius = 1;
};

struct EvalResult {
  SegScores scores;
  ConfusionMatrix cm;
  std::optional<BoundaryScores> boundary;  // filled for triple models
  Report report;
};

// Runs the model over a split. The prediction distribution is the average of
// the two classifiers' softmax outputs; the predicted label is its argmax.
// With refine, the model's boundary output drives the voting post-process
// (triple models only; otherwise a SemanticError).
EvalResult evaluate_model(const Model& model, DatasetReader& reader, const EvalOptions& opts,
                          const std::string& checkpoint_name, int epoch);

// Sobel baseline: edge maps from the split's RGB inputs scored against the
// ground-truth boundaries.
BoundaryScores sobel_baseline_scores(DatasetReader& reader, const std::string& split,
                                     int match_radius = 1);

// Per-pixel argmax over the averaged classifier distribution.
LabelMap predict_labels(const Model& model, const Sample& sample);

}  // namespace mcseg

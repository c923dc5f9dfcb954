#include "mcseg/eval.hpp"

#include "mcseg/refine.hpp"

namespace mcseg {

namespace {

struct Prediction {
  LabelMap labels;
  BoundaryMap boundary;  // empty unless the model has a boundary head
};

Prediction run_model(const Model& model, const Sample& sample) {
  Tape tape;
  const std::vector<char> frozen(model.params.size(), 0);
  ParamBinding bound = bind_params(tape, model, &frozen);
  Var rgb = tape.constant(as_batch(sample.rgb));
  std::optional<Var> hha;
  if (fusion_needs_hha(model.cfg.fusion)) hha = tape.constant(as_batch(sample.hha));
  Outputs out = forward(tape, model, bound, rgb, hha, ForwardMode::Eval);

  Var probs = mul_scalar(tape, add(tape, softmax_channel(tape, out.logits1),
                                   softmax_channel(tape, out.logits2)), 0.5f);
  const Tensor& p = tape.val(probs);
  const int K = p.dim(1), H = p.dim(2), W = p.dim(3);

  Prediction pred;
  pred.labels = LabelMap(H, W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      int best = 0;
      float best_p = p.at4(0, 0, r, c);
      for (int k = 1; k < K; ++k) {
        const float v = p.at4(0, k, r, c);
        if (v > best_p) {
          best_p = v;
          best = k;
        }
      }
      pred.labels.at(r, c) = static_cast<std::uint8_t>(best);
    }

  if (out.boundary.has_value()) {
    const Tensor& b = tape.val(*out.boundary);
    pred.boundary = BoundaryMap(H, W);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) pred.boundary.at(r, c) = b.at4(0, 0, r, c);
  }
  return pred;
}

}  // namespace

LabelMap predict_labels(const Model& model, const Sample& sample) {
  return run_model(model, sample).labels;
}

EvalResult evaluate_model(const Model& model, DatasetReader& reader, const EvalOptions& opts,
                          const std::string& checkpoint_name, int epoch) {
  const bool has_boundary_head = model.cfg.tasks == TaskSet::Triple;
  if (opts.refine && !has_boundary_head) {
    throw SemanticError(cat("--refine needs a triple-task model with a boundary head; this "
                            "checkpoint is tasks=", to_string(model.cfg.tasks)));
  }
  const std::vector<int> indices = reader.split_indices(opts.split);
  if (indices.empty()) throw SemanticError(cat("split \"", opts.split, "\" has no samples"));

  const int K = reader.manifest().num_classes;
  unsigned fields = kFieldRgb | kFieldLabels;
  if (fusion_needs_hha(model.cfg.fusion)) fields |= kFieldHha;
  if (has_boundary_head) fields |= kFieldBoundaries;

  ConfusionMatrix cm(K);
  std::vector<BoundaryMap> pred_bounds;
  std::vector<const BoundaryMap*> gt_bounds;
  for (int idx : indices) {
    const Sample& s = reader.sample(idx, fields);
    Prediction pred = run_model(model, s);
    if (opts.refine) {
      const BoundaryMap mask = threshold_boundary(pred.boundary, opts.boundary_threshold);
      const RegionMap regions = label_regions(mask);
      pred.labels = refine_segmentation(pred.labels, regions);
    }
    cm.merge(confusion(pred.labels, s.labels, K));
    if (has_boundary_head) {
      pred_bounds.push_back(std::move(pred.boundary));
      gt_bounds.push_back(&s.boundaries);
    }
  }

  EvalResult res;
  res.cm = cm;
  res.scores = seg_scores(cm);
  if (has_boundary_head) {
    std::vector<const BoundaryMap*> preds;
    preds.reserve(pred_bounds.size());
    for (const auto& b : pred_bounds) preds.push_back(&b);
    res.boundary = boundary_scores(preds, gt_bounds, opts.match_radius);
  }
  res.report = make_report(res.scores, cm, reader.manifest().class_names, res.boundary,
                           checkpoint_name, epoch, opts.split, opts.refine);
  return res;
}

BoundaryScores sobel_baseline_scores(DatasetReader& reader, const std::string& split,
                                     int match_radius) {
  const std::vector<int> indices = reader.split_indices(split);
  if (indices.empty()) throw SemanticError(cat("split \"", split, "\" has no samples"));
  std::vector<BoundaryMap> preds_v;
  std::vector<const BoundaryMap*> preds, gts;
  preds_v.reserve(indices.size());
  for (int idx : indices) {
    const Sample& s = reader.sample(idx, kFieldRgb | kFieldBoundaries);
    preds_v.push_back(sobel_edges(s.rgb));
    gts.push_back(&s.boundaries);
  }
  for (const auto& b : preds_v) preds.push_back(&b);
  return boundary_scores(preds, gts, match_radius);
}

}  // namespace mcseg

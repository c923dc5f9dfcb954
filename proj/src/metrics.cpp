#include "mcseg/metrics.hpp"

#include "mcseg/refine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace mcseg {

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) {
    throw ContractError("ConfusionMatrix::merge: class count mismatch");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ContractError(cat("confusion: prediction ", pred.height, "x", pred.width,
                            " vs ground truth ", gt.height, "x", gt.width));
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    const std::uint8_t g = gt.values[i];
    if (g == LabelMap::kIgnore) continue;
    const std::uint8_t p = pred.values[i];
    if (g >= num_classes) throw ContractError(cat("confusion: gt class id ", int(g), " >= K"));
    if (p >= num_classes) throw ContractError(cat("confusion: pred class id ", int(p), " >= K"));
    ++cm.at(g, p);
  }
  return cm;
}

SegScores seg_scores(const ConfusionMatrix& cm) {
  const int K = cm.num_classes;
  if (cm.total() == 0) throw ContractError("seg_scores: empty confusion matrix");

  std::vector<std::int64_t> row(static_cast<std::size_t>(K), 0);  // t_i
  std::vector<std::int64_t> col(static_cast<std::size_t>(K), 0);
  std::int64_t diag = 0, total = 0;
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      const std::int64_t n = cm.at(i, j);
      row[static_cast<std::size_t>(i)] += n;
      col[static_cast<std::size_t>(j)] += n;
      total += n;
    }
    diag += cm.at(i, i);
  }

  SegScores s;
  s.pix_acc = static_cast<double>(diag) / static_cast<double>(total);

  double acc_sum = 0;
  int acc_n = 0;
  double iou_sum = 0;
  int iou_n = 0;
  double fw_sum = 0;
  s.per_class_iou.assign(static_cast<std::size_t>(K), 0.0);
  s.iou_included.assign(static_cast<std::size_t>(K), 0);
  for (int i = 0; i < K; ++i) {
    const std::int64_t t_i = row[static_cast<std::size_t>(i)];
    const std::int64_t n_ii = cm.at(i, i);
    if (t_i > 0) {
      acc_sum += static_cast<double>(n_ii) / static_cast<double>(t_i);
      ++acc_n;
    }
    const std::int64_t denom = t_i + col[static_cast<std::size_t>(i)] - n_ii;
    if (denom > 0) {
      const double iou = static_cast<double>(n_ii) / static_cast<double>(denom);
      s.per_class_iou[static_cast<std::size_t>(i)] = iou;
      s.iou_included[static_cast<std::size_t>(i)] = 1;
      iou_sum += iou;
      ++iou_n;
      fw_sum += static_cast<double>(t_i) * iou;
    }
  }
  s.mean_acc = acc_n > 0 ? acc_sum / acc_n : 0.0;
  s.mean_iou = iou_n > 0 ? iou_sum / iou_n : 0.0;
  s.fw_iou = fw_sum / static_cast<double>(total);
  return s;
}

namespace {

struct ImageCounts {
  std::int64_t tp = 0, npred = 0, ngt = 0;
};

// Greedy one-to-one matching: predicted edge pixels in raster order each take
// the first unmatched gt pixel within the Chebyshev radius (candidates in
// raster order).
ImageCounts match_image(const BoundaryMap& pred_mask, const BoundaryMap& gt, int radius) {
  const int H = gt.height, W = gt.width;
  ImageCounts out;
  std::vector<char> gt_taken(static_cast<std::size_t>(H) * W, 0);
  for (float v : gt.values) out.ngt += v == 1.f;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      if (pred_mask.values[static_cast<std::size_t>(r) * W + c] != 1.f) continue;
      ++out.npred;
      for (int dr = -radius; dr <= radius; ++dr) {
        const int rr = r + dr;
        if (rr < 0 || rr >= H) continue;
        bool matched = false;
        for (int dc = -radius; dc <= radius; ++dc) {
          const int cc = c + dc;
          if (cc < 0 || cc >= W) continue;
          const std::size_t p = static_cast<std::size_t>(rr) * W + cc;
          if (gt.values[p] == 1.f && !gt_taken[p]) {
            gt_taken[p] = 1;
            ++out.tp;
            matched = true;
            break;
          }
        }
        if (matched) break;
      }
    }
  }
  return out;
}

double f1_of(double precision, double recall) {
  const double s = precision + recall;
  return s > 0 ? 2.0 * precision * recall / s : 0.0;
}

}  // namespace

BoundaryScores boundary_scores(const std::vector<const BoundaryMap*>& preds,
                               const std::vector<const BoundaryMap*>& gts, int radius) {
  if (preds.empty() || preds.size() != gts.size()) {
    throw ContractError(cat("boundary_scores: need matched non-empty lists, got ", preds.size(),
                            " predictions and ", gts.size(), " ground truths"));
  }
  if (radius < 0) throw ContractError("boundary_scores: radius must be >= 0");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i]->height != gts[i]->height || preds[i]->width != gts[i]->width) {
      throw ContractError("boundary_scores: prediction/gt size mismatch");
    }
  }

  constexpr int kThresholds = 99;
  const int n_images = static_cast<int>(preds.size());

  std::vector<std::vector<ImageCounts>> counts(
      static_cast<std::size_t>(kThresholds),
      std::vector<ImageCounts>(static_cast<std::size_t>(n_images)));

  for (int ti = 0; ti < kThresholds; ++ti) {
    const double t = (ti + 1) * 0.01;
    for (int i = 0; i < n_images; ++i) {
      const BoundaryMap mask = threshold_boundary(*preds[static_cast<std::size_t>(i)], t);
      counts[static_cast<std::size_t>(ti)][static_cast<std::size_t>(i)] =
          match_image(mask, *gts[static_cast<std::size_t>(i)], radius);
    }
  }

  BoundaryScores out;
  out.pr_curve.reserve(kThresholds);
  double best_f1 = 0;
  for (int ti = 0; ti < kThresholds; ++ti) {
    std::int64_t tp = 0, npred = 0, ngt = 0;
    for (const ImageCounts& ic : counts[static_cast<std::size_t>(ti)]) {
      tp += ic.tp;
      npred += ic.npred;
      ngt += ic.ngt;
    }
    const double precision = npred > 0 ? static_cast<double>(tp) / npred : 1.0;
    const double recall = ngt > 0 ? static_cast<double>(tp) / ngt : 1.0;
    out.pr_curve.push_back({(ti + 1) * 0.01, precision, recall});
    best_f1 = std::max(best_f1, f1_of(precision, recall));
  }
  out.ods = best_f1;

  double ois_sum = 0;
  for (int i = 0; i < n_images; ++i) {
    double best = 0;
    for (int ti = 0; ti < kThresholds; ++ti) {
      const ImageCounts& ic = counts[static_cast<std::size_t>(ti)][static_cast<std::size_t>(i)];
      const double p = ic.npred > 0 ? static_cast<double>(ic.tp) / ic.npred : 1.0;
      const double r = ic.ngt > 0 ? static_cast<double>(ic.tp) / ic.ngt : 1.0;
      best = std::max(best, f1_of(p, r));
    }
    ois_sum += best;
  }
  out.ois = ois_sum / n_images;

  // AP: trapezoidal area under the dataset P-R curve sorted by recall, with a
  // zero-recall anchor at the precision of the lowest-recall point.
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  pr.reserve(kThresholds);
  for (const auto& p : out.pr_curve) pr.emplace_back(p.recall, p.precision);
  std::sort(pr.begin(), pr.end());
  double ap = 0;
  double prev_r = 0, prev_p = pr.empty() ? 0 : pr.front().second;
  for (const auto& [r, p] : pr) {
    ap += (r - prev_r) * 0.5 * (p + prev_p);
    prev_r = r;
    prev_p = p;
  }
  out.ap = ap;
  return out;
}

namespace {

double round1(double percent) { return std::round(percent * 10.0) / 10.0; }

}  // namespace

Report make_report(const SegScores& scores, const ConfusionMatrix& cm,
                   const std::vector<std::string>& class_names,
                   const std::optional<BoundaryScores>& boundary, const std::string& checkpoint,
                   int epoch, const std::string& split, bool refine) {
  const int K = cm.num_classes;
  if (static_cast<int>(class_names.size()) != K) {
    throw ContractError(cat("make_report: ", class_names.size(), " class names for K=", K));
  }
  Report rep;
  rep.pix_acc = round1(scores.pix_acc * 100.0);
  rep.mean_acc = round1(scores.mean_acc * 100.0);
  rep.fw_iou = round1(scores.fw_iou * 100.0);
  rep.mean_iou = round1(scores.mean_iou * 100.0);
  for (int k = 0; k < K; ++k) {
    rep.per_class_iou[class_names[static_cast<std::size_t>(k)]] =
        round1(scores.per_class_iou[static_cast<std::size_t>(k)] * 100.0);
  }
  rep.confusion_row_normalized.assign(static_cast<std::size_t>(K),
                                      std::vector<double>(static_cast<std::size_t>(K), 0.0));
  for (int i = 0; i < K; ++i) {
    std::int64_t row = 0;
    for (int j = 0; j < K; ++j) row += cm.at(i, j);
    if (row == 0) continue;  // zero rows emit zeros
    for (int j = 0; j < K; ++j) {
      rep.confusion_row_normalized[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          static_cast<double>(cm.at(i, j)) / static_cast<double>(row);
    }
  }
  if (boundary.has_value()) {
    rep.boundary = Report::Boundary{boundary->ods, boundary->ois, boundary->ap};
  }
  rep.checkpoint = checkpoint;
  rep.epoch = epoch;
  rep.split = split;
  rep.refine = refine;
  return rep;
}

std::string report_to_json_text(const Report& report) {
  json j;
  j["scores"] = {{"pixAcc", report.pix_acc},
                 {"mAcc", report.mean_acc},
                 {"fwIoU", report.fw_iou},
                 {"mIoU", report.mean_iou}};
  j["per_class_iou"] = report.per_class_iou;
  j["confusion_row_normalized"] = report.confusion_row_normalized;
  if (report.boundary.has_value()) {
    j["boundary"] = {{"ods", report.boundary->ods},
                     {"ois", report.boundary->ois},
                     {"ap", report.boundary->ap}};
  }
  j["meta"] = {{"checkpoint", report.checkpoint},
               {"epoch", report.epoch},
               {"split", report.split},
               {"refine", report.refine}};
  return j.dump(2) + "\n";
}

Report report_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(cat("report: ", e.what()));
  }
  Report rep;
  try {
    rep.pix_acc = j.at("scores").at("pixAcc").get<double>();
    rep.mean_acc = j.at("scores").at("mAcc").get<double>();
    rep.fw_iou = j.at("scores").at("fwIoU").get<double>();
    rep.mean_iou = j.at("scores").at("mIoU").get<double>();
    rep.per_class_iou = j.at("per_class_iou").get<std::map<std::string, double>>();
    rep.confusion_row_normalized =
        j.at("confusion_row_normalized").get<std::vector<std::vector<double>>>();
    if (j.contains("boundary")) {
      Report::Boundary b;
      b.ods = j.at("boundary").at("ods").get<double>();
      b.ois = j.at("boundary").at("ois").get<double>();
      b.ap = j.at("boundary").at("ap").get<double>();
      rep.boundary = b;
    }
    rep.checkpoint = j.at("meta").at("checkpoint").get<std::string>();
    rep.epoch = j.at("meta").at("epoch").get<int>();
    rep.split = j.at("meta").at("split").get<std::string>();
    rep.refine = j.at("meta").at("refine").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(cat("report: malformed: ", e.what()));
  }
  return rep;
}

void write_report(const Report& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(cat(path, ": cannot open for writing"));
  out << report_to_json_text(report);
  if (!out) throw IoError(cat(path, ": short write"));
}

Report read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat(path, ": cannot open report"));
  std::string text(std::istreambuf_iterator<char>(in), {});
  return report_from_json_text(text);
}

}  // namespace mcseg

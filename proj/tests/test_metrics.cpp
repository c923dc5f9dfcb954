#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mcseg/metrics.hpp"
#include "mcseg/rng.hpp"

using namespace mcseg;
namespace fs = std::filesystem;

namespace {

// Brute-force scorer: direct pixel loops, no confusion matrix. Computes the
// four formulas straight from per-class tallies.
SegScores brute_force_scores(const LabelMap& pred, const LabelMap& gt, int K) {
  std::vector<std::int64_t> t(static_cast<std::size_t>(K), 0);      // gt pixels per class
  std::vector<std::int64_t> p(static_cast<std::size_t>(K), 0);      // predicted pixels per class
  std::vector<std::int64_t> hit(static_cast<std::size_t>(K), 0);    // correct per class
  std::int64_t total = 0, correct = 0;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    const std::uint8_t g = gt.values[i];
    if (g == LabelMap::kIgnore) continue;
    const std::uint8_t q = pred.values[i];
    ++t[g];
    ++p[q];
    ++total;
    if (g == q) {
      ++hit[g];
      ++correct;
    }
  }
  SegScores s;
  s.pix_acc = static_cast<double>(correct) / static_cast<double>(total);
  double acc = 0;
  int acc_n = 0;
  double iou = 0;
  int iou_n = 0;
  double fw = 0;
  s.per_class_iou.assign(static_cast<std::size_t>(K), 0.0);
  s.iou_included.assign(static_cast<std::size_t>(K), 0);
  for (int k = 0; k < K; ++k) {
    if (t[static_cast<std::size_t>(k)] > 0) {
      acc += static_cast<double>(hit[static_cast<std::size_t>(k)]) / t[static_cast<std::size_t>(k)];
      ++acc_n;
    }
    const std::int64_t denom =
        t[static_cast<std::size_t>(k)] + p[static_cast<std::size_t>(k)] - hit[static_cast<std::size_t>(k)];
    if (denom > 0) {
      const double v = static_cast<double>(hit[static_cast<std::size_t>(k)]) / denom;
      s.per_class_iou[static_cast<std::size_t>(k)] = v;
      s.iou_included[static_cast<std::size_t>(k)] = 1;
      iou += v;
      ++iou_n;
      fw += static_cast<double>(t[static_cast<std::size_t>(k)]) * v;
    }
  }
  s.mean_acc = acc_n > 0 ? acc / acc_n : 0;
  s.mean_iou = iou_n > 0 ? iou / iou_n : 0;
  s.fw_iou = fw / static_cast<double>(total);
  return s;
}

LabelMap map_of(int h, int w, std::vector<std::uint8_t> v) {
  LabelMap m(h, w);
  m.values = std::move(v);
  return m;
}

}  // namespace

TEST_CASE("confusion: diagonal on perfect prediction, worked example, additivity") {
  Rng rng(3);
  LabelMap gt(4, 4);
  for (auto& v : gt.values) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  ConfusionMatrix diag = confusion(gt, gt, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i != j) CHECK(diag.at(i, j) == 0);
    }
  CHECK(diag.total() == 16);

  // gt=[0,0,1,1], pred=[0,1,1,1] -> [[1,1],[0,2]]
  ConfusionMatrix cm = confusion(map_of(1, 4, {0, 1, 1, 1}), map_of(1, 4, {0, 0, 1, 1}), 2);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 0) == 0);
  CHECK(cm.at(1, 1) == 2);

  // additive over partitions
  LabelMap gt_a = map_of(1, 4, {0, 0, 1, 1}), pr_a = map_of(1, 4, {0, 1, 1, 1});
  LabelMap gt_b(2, 2), pr_b(2, 2);
  for (auto& v : gt_b.values) v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
  for (auto& v : pr_b.values) v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
  ConfusionMatrix sum = confusion(pr_a, gt_a, 2);
  sum.merge(confusion(pr_b, gt_b, 2));
  ConfusionMatrix manual(2);
  for (std::size_t i = 0; i < 4; ++i) {
    ++manual.at(gt_a.values[i], pr_a.values[i]);
    ++manual.at(gt_b.values[i], pr_b.values[i]);
  }
  CHECK(sum.counts == manual.counts);

  // ignore exclusion and range errors
  ConfusionMatrix ig = confusion(map_of(1, 2, {0, 1}), map_of(1, 2, {255, 1}), 2);
  CHECK(ig.total() == 1);
  CHECK_THROWS_AS(confusion(map_of(1, 1, {5}), map_of(1, 1, {0}), 2), ContractError);
  CHECK_THROWS_AS(confusion(map_of(1, 1, {0}), map_of(1, 1, {3}), 2), ContractError);
}

TEST_CASE("seg_scores: perfect prediction and the worked cm=[[1,1],[0,2]]") {
  ConfusionMatrix perfect(3);
  perfect.at(0, 0) = 10;
  perfect.at(1, 1) = 20;
  perfect.at(2, 2) = 5;
  SegScores ps = seg_scores(perfect);
  CHECK(ps.pix_acc == doctest::Approx(1.0));
  CHECK(ps.mean_acc == doctest::Approx(1.0));
  CHECK(ps.fw_iou == doctest::Approx(1.0));
  CHECK(ps.mean_iou == doctest::Approx(1.0));
  for (int k = 0; k < 3; ++k) CHECK(ps.per_class_iou[static_cast<std::size_t>(k)] == doctest::Approx(1.0));

  ConfusionMatrix cm(2);
  cm.at(0, 0) = 1;
  cm.at(0, 1) = 1;
  cm.at(1, 1) = 2;
  SegScores s = seg_scores(cm);
  CHECK(s.pix_acc == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(s.mean_acc == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(s.per_class_iou[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.per_class_iou[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(std::abs(s.mean_iou - 7.0 / 12.0) < 1e-9);
  CHECK(std::abs(s.fw_iou - 7.0 / 12.0) < 1e-9);

  CHECK_THROWS_AS(seg_scores(ConfusionMatrix(2)), ContractError);
}

TEST_CASE("seg_scores: matches the brute-force pixel-loop oracle exactly on 50 random cases") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int K = 2 + static_cast<int>(rng.uniform_int(0, 3));
    LabelMap gt(16, 16), pred(16, 16);
    for (auto& v : gt.values) {
      v = rng.uniform() < 0.05 ? LabelMap::kIgnore
                               : static_cast<std::uint8_t>(rng.uniform_int(0, K - 1));
    }
    for (auto& v : pred.values) v = static_cast<std::uint8_t>(rng.uniform_int(0, K - 1));
    const SegScores a = seg_scores(confusion(pred, gt, K));
    const SegScores b = brute_force_scores(pred, gt, K);
    CHECK(a.pix_acc == b.pix_acc);  // exact: same integer tallies, same operation order
    CHECK(a.mean_acc == b.mean_acc);
    CHECK(a.mean_iou == b.mean_iou);
    CHECK(a.fw_iou == b.fw_iou);
    CHECK(a.per_class_iou == b.per_class_iou);
  }
}

TEST_CASE("seg_scores: uniform random prediction on K=2 approaches pixAcc 0.5") {
  Rng rng(7);
  LabelMap gt(128, 128), pred(128, 128);
  for (auto& v : gt.values) v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
  for (auto& v : pred.values) v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
  const SegScores s = seg_scores(confusion(pred, gt, 2));
  CHECK(s.pix_acc == doctest::Approx(0.5).epsilon(0.1));
  CHECK(std::abs(s.pix_acc - 0.5) < 0.05);
}

TEST_CASE("seg_scores: permutation equivariance") {
  Rng rng(9);
  const int K = 4;
  LabelMap gt(20, 20), pred(20, 20);
  for (auto& v : gt.values) v = static_cast<std::uint8_t>(rng.uniform_int(0, K - 1));
  for (auto& v : pred.values) v = static_cast<std::uint8_t>(rng.uniform_int(0, K - 1));
  const SegScores base = seg_scores(confusion(pred, gt, K));

  const int perm[K] = {2, 3, 1, 0};
  LabelMap gt_p = gt, pred_p = pred;
  for (auto& v : gt_p.values) v = static_cast<std::uint8_t>(perm[v]);
  for (auto& v : pred_p.values) v = static_cast<std::uint8_t>(perm[v]);
  const SegScores moved = seg_scores(confusion(pred_p, gt_p, K));

  CHECK(moved.pix_acc == doctest::Approx(base.pix_acc).epsilon(1e-12));
  CHECK(moved.mean_acc == doctest::Approx(base.mean_acc).epsilon(1e-12));
  CHECK(moved.mean_iou == doctest::Approx(base.mean_iou).epsilon(1e-12));
  CHECK(moved.fw_iou == doctest::Approx(base.fw_iou).epsilon(1e-12));
  for (int k = 0; k < K; ++k) {
    CHECK(moved.per_class_iou[static_cast<std::size_t>(perm[k])] ==
          doctest::Approx(base.per_class_iou[static_cast<std::size_t>(k)]).epsilon(1e-12));
  }
}

TEST_CASE("boundary_scores: pred == gt gives ODS = OIS = 1.0 exactly") {
  Rng rng(11);
  std::vector<BoundaryMap> maps;
  for (int i = 0; i < 3; ++i) {
    BoundaryMap m(10, 10);
    for (auto& v : m.values) v = rng.uniform() < 0.2 ? 1.f : 0.f;
    m.values[0] = 1.f;
    maps.push_back(m);
  }
  std::vector<const BoundaryMap*> preds, gts;
  for (auto& m : maps) {
    preds.push_back(&m);
    gts.push_back(&m);
  }
  for (int radius : {0, 1, 2}) {
    const BoundaryScores s = boundary_scores(preds, gts, radius);
    CHECK(s.ods == 1.0);
    CHECK(s.ois == 1.0);
    CHECK(s.ap > 0.99);
  }
}

TEST_CASE("boundary_scores: all-zero prediction has zero recall and F1 everywhere") {
  BoundaryMap pred(8, 8, 0.f);
  BoundaryMap gt(8, 8, 0.f);
  gt.at(4, 4) = 1.f;
  const BoundaryScores s = boundary_scores({&pred}, {&gt}, 1);
  for (const auto& p : s.pr_curve) CHECK(p.recall == 0.0);
  CHECK(s.ods == 0.0);
  CHECK(s.ois == 0.0);
}

TEST_CASE("boundary_scores: one-pixel offset edge matches at radius 1, not radius 0") {
  BoundaryMap gt(8, 8, 0.f);
  BoundaryMap pred(8, 8, 0.f);
  for (int r = 0; r < 8; ++r) {
    gt.at(r, 3) = 1.f;
    pred.at(r, 4) = 1.f;
  }
  const BoundaryScores ok = boundary_scores({&pred}, {&gt}, 1);
  CHECK(ok.ods == 1.0);
  const BoundaryScores miss = boundary_scores({&pred}, {&gt}, 0);
  for (const auto& p : miss.pr_curve) CHECK(p.precision == 0.0);
  CHECK(miss.ods == 0.0);
}

TEST_CASE("boundary_scores: F1 in range, ODS dominates, recall monotone") {
  Rng rng(13);
  std::vector<BoundaryMap> preds_v, gts_v;
  for (int i = 0; i < 4; ++i) {
    BoundaryMap p(12, 12), g(12, 12);
    for (auto& v : p.values) v = static_cast<float>(rng.uniform(0.0, 1.0));
    for (auto& v : g.values) v = rng.uniform() < 0.25 ? 1.f : 0.f;
    g.values[5] = 1.f;
    preds_v.push_back(p);
    gts_v.push_back(g);
  }
  std::vector<const BoundaryMap*> preds, gts;
  for (std::size_t i = 0; i < preds_v.size(); ++i) {
    preds.push_back(&preds_v[i]);
    gts.push_back(&gts_v[i]);
  }
  const BoundaryScores s = boundary_scores(preds, gts, 1);
  double prev_recall = 1.0;
  for (const auto& p : s.pr_curve) {
    const double f1 = p.precision + p.recall > 0
                          ? 2 * p.precision * p.recall / (p.precision + p.recall)
                          : 0.0;
    CHECK(f1 >= 0.0);
    CHECK(f1 <= 1.0);
    CHECK(s.ods >= f1 - 1e-12);
    CHECK(p.recall <= prev_recall + 1e-12);  // non-increasing in threshold
    prev_recall = p.recall;
  }
  CHECK_THROWS_AS(boundary_scores({}, {}, 1), ContractError);
}

TEST_CASE("report: row normalization, perfect 100.0 rendering, round trip") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 5;
  cm.at(0, 1) = 3;
  cm.at(1, 1) = 7;
  // class 2 absent everywhere: zero row must emit zeros
  const SegScores s = seg_scores(cm);
  Report r = make_report(s, cm, {"a", "b", "c"}, std::nullopt, "ckpt_epoch3.mcseg", 3,
                         "target_test", false);
  for (const auto& row : r.confusion_row_normalized) {
    double sum = 0;
    for (double v : row) sum += v;
    CHECK((sum == doctest::Approx(1.0).epsilon(1e-9) || sum == 0.0));
  }
  CHECK(r.confusion_row_normalized[2] == std::vector<double>{0.0, 0.0, 0.0});

  ConfusionMatrix perfect(2);
  perfect.at(0, 0) = 6;
  perfect.at(1, 1) = 10;
  Report pr = make_report(seg_scores(perfect), perfect, {"x", "y"}, std::nullopt, "c", 1, "s", true);
  const std::string text = report_to_json_text(pr);
  CHECK(text.find("\"pixAcc\": 100.0") != std::string::npos);
  CHECK(text.find("\"mAcc\": 100.0") != std::string::npos);
  CHECK(text.find("\"fwIoU\": 100.0") != std::string::npos);
  CHECK(text.find("\"mIoU\": 100.0") != std::string::npos);

  // parse(emit(x)) == x
  BoundaryScores bs;
  bs.ods = 0.625;
  bs.ois = 0.75;
  bs.ap = 0.5;
  Report rb = make_report(s, cm, {"a", "b", "c"}, bs, "ck", 2, "target_test", true);
  CHECK(report_from_json_text(report_to_json_text(rb)) == rb);

  const fs::path dir = fs::temp_directory_path() / "mcseg_test_report";
  fs::create_directories(dir);
  write_report(rb, (dir / "report.json").string());
  CHECK(read_report((dir / "report.json").string()) == rb);
  CHECK_THROWS_AS(read_report((dir / "nope.json").string()), IoError);
}

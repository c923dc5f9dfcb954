#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mcseg/gradcheck.hpp"
#include "mcseg/losses.hpp"
#include "mcseg/rng.hpp"

using namespace mcseg;

namespace {

// Scalar cross-entropy oracle: per-pixel softmax in long double, direct loops.
long double ce_oracle(const TensorT<double>& logits, const LabelMap& lm) {
  const int K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  long double acc = 0;
  std::int64_t counted = 0;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const std::uint8_t y = lm.at(r, c);
      if (y == LabelMap::kIgnore) continue;
      long double denom = 0;
      for (int k = 0; k < K; ++k) denom += std::exp(static_cast<long double>(logits.at4(0, k, r, c)));
      const long double p = std::exp(static_cast<long double>(logits.at4(0, y, r, c))) / denom;
      acc += -std::log(p);
      ++counted;
    }
  return acc / counted;
}

template <class T>
TensorT<T> random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  TensorT<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Random softmax-style probability tensor (channels sum to 1 per pixel).
template <class T>
TensorT<T> random_probs(Rng& rng, int K, int H, int W) {
  TensorT<T> t({1, K, H, W});
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      double sum = 0;
      std::vector<double> raw(static_cast<std::size_t>(K));
      for (auto& v : raw) {
        v = rng.uniform(0.05, 1.0);
        sum += v;
      }
      for (int k = 0; k < K; ++k) t.at4(0, k, h, w) = static_cast<T>(raw[static_cast<std::size_t>(k)] / sum);
    }
  return t;
}

template <class T>
double loss_value(const std::function<VarT<T>(TapeT<T>&)>& build) {
  TapeT<T> tape;
  return static_cast<double>(tape.val(build(tape)).data[0]);
}

}  // namespace

TEST_CASE("softmax_cross_entropy: uniform logits give ln K") {
  Tape tp;
  Var z = tp.leaf(Tensor({1, 4, 2, 2}, 0.f));
  LabelMap lm(2, 2, 1);
  Var l = softmax_cross_entropy(tp, z, lm);
  CHECK(tp.val(l).data[0] == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("softmax_cross_entropy: confident correct logit saturates to 0") {
  Tape tp;
  Tensor z({1, 3, 1, 1}, 0.f);
  z.at4(0, 2, 0, 0) = 1000.f;
  LabelMap lm(1, 1, 2);
  Var l = softmax_cross_entropy(tp, tp.leaf(z), lm);
  CHECK(tp.val(l).data[0] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("softmax_cross_entropy: random two-pixel case matches scalar oracle") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    TensorT<double> z = random_tensor<double>(rng, {1, 3, 1, 2}, -2.0, 2.0);
    LabelMap lm(1, 2);
    lm.at(0, 0) = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    lm.at(0, 1) = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    TapeT<double> tp;
    auto l = softmax_cross_entropy(tp, tp.leaf(z), lm);
    CHECK(tp.val(l).data[0] ==
          doctest::Approx(static_cast<double>(ce_oracle(z, lm))).epsilon(1e-12));
  }
}

TEST_CASE("softmax_cross_entropy: ignore pixels are excluded; all-ignored is an error") {
  Rng rng(78);
  TensorT<double> z = random_tensor<double>(rng, {1, 3, 2, 2}, -2.0, 2.0);
  LabelMap mixed(2, 2, 1);
  mixed.at(0, 0) = LabelMap::kIgnore;
  mixed.at(1, 1) = LabelMap::kIgnore;
  TapeT<double> tp;
  auto l = softmax_cross_entropy(tp, tp.leaf(z), mixed);
  CHECK(tp.val(l).data[0] == doctest::Approx(static_cast<double>(ce_oracle(z, mixed))).epsilon(1e-12));

  LabelMap all_ignored(2, 2, LabelMap::kIgnore);
  CHECK_THROWS_AS(softmax_cross_entropy(tp, tp.leaf(z), all_ignored), ContractError);

  LabelMap out_of_range(2, 2, 7);
  CHECK_THROWS_AS(softmax_cross_entropy(tp, tp.leaf(z), out_of_range), ContractError);
}

TEST_CASE("discrepancy: zero iff equal, worked example, symmetry") {
  Rng rng(5);
  Tape tp;
  Tensor p = random_probs<float>(rng, 3, 4, 4);
  Var a = tp.leaf(p);
  Var b = tp.leaf(p);
  CHECK(tp.val(discrepancy(tp, a, b)).data[0] == doctest::Approx(0.0));

  Var one_a = tp.leaf(Tensor::from({1, 2, 1, 1}, {1.f, 0.f}));
  Var one_b = tp.leaf(Tensor::from({1, 2, 1, 1}, {0.f, 1.f}));
  CHECK(tp.val(discrepancy(tp, one_a, one_b)).data[0] == doctest::Approx(1.0));

  Var q = tp.leaf(random_probs<float>(rng, 3, 4, 4));
  CHECK(tp.val(discrepancy(tp, a, q)).data[0] ==
        doctest::Approx(tp.val(discrepancy(tp, q, a)).data[0]));
}

TEST_CASE("discrepancy: pseudometric on random probability triples") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tp;
    Var a = tp.leaf(random_probs<float>(rng, 4, 3, 3));
    Var b = tp.leaf(random_probs<float>(rng, 4, 3, 3));
    Var c = tp.leaf(random_probs<float>(rng, 4, 3, 3));
    const double ab = tp.val(discrepancy(tp, a, b)).data[0];
    const double bc = tp.val(discrepancy(tp, b, c)).data[0];
    const double ac = tp.val(discrepancy(tp, a, c)).data[0];
    CHECK(ab >= 0.0);
    CHECK(ac <= ab + bc + 1e-7);
  }
}

TEST_CASE("discrepancy: debug mode rejects out-of-range probabilities") {
  set_debug_checks(true);
  Tape tp;
  Var bad = tp.leaf(Tensor({1, 2, 1, 1}, 1.5f));
  Var ok = tp.leaf(Tensor({1, 2, 1, 1}, 0.5f));
  CHECK_THROWS_AS(discrepancy(tp, bad, ok), ContractError);
  set_debug_checks(false);
}

TEST_CASE("depth_mse: identities and elementwise oracle") {
  Rng rng(9);
  Tape tp;
  Tensor t = random_tensor<float>(rng, {2, 3, 2, 2});
  Var pred = tp.leaf(t);
  Var target = tp.leaf(t);
  CHECK(tp.val(depth_mse(tp, pred, target)).data[0] == doctest::Approx(0.0));

  Tensor plus1 = t;
  for (auto& v : plus1.data) v += 1.f;
  CHECK(tp.val(depth_mse(tp, tp.leaf(plus1), target)).data[0] == doctest::Approx(1.0));

  Tensor other = random_tensor<float>(rng, {2, 3, 2, 2});
  double acc = 0;
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    const double d = static_cast<double>(t.data[i]) - other.data[i];
    acc += d * d;
  }
  acc /= static_cast<double>(t.data.size());
  CHECK(tp.val(depth_mse(tp, tp.leaf(t), tp.leaf(other))).data[0] ==
        doctest::Approx(acc).epsilon(1e-6));
}

TEST_CASE("balanced_bce: perfect confident prediction drives loss to 0") {
  BoundaryMap gt(2, 2);
  gt.at(0, 0) = 1.f;
  gt.at(1, 1) = 1.f;
  Tape tp;
  Tensor p({1, 1, 2, 2});
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) p.at4(0, 0, r, c) = gt.at(r, c) == 1.f ? 1.f - 1e-6f : 1e-6f;
  CHECK(tp.val(balanced_bce(tp, tp.leaf(p), gt)).data[0] == doctest::Approx(0.0).epsilon(1e-4));
}

TEST_CASE("balanced_bce: p=0.5 with 2 edge + 2 non-edge pixels gives 2 ln 2") {
  BoundaryMap gt(2, 2);
  gt.at(0, 0) = 1.f;
  gt.at(0, 1) = 1.f;
  Tape tp;
  Var p = tp.leaf(Tensor({1, 1, 2, 2}, 0.5f));
  CHECK(tp.val(balanced_bce(tp, p, gt)).data[0] ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("balanced_bce: swapping sets and flipping p leaves the loss unchanged") {
  Rng rng(13);
  BoundaryMap gt(3, 3);
  for (auto& v : gt.values) v = rng.coin() ? 1.f : 0.f;
  gt.at(0, 0) = 1.f;  // at least one of each
  gt.at(2, 2) = 0.f;
  Tensor p({1, 1, 3, 3});
  for (auto& v : p.data) v = static_cast<float>(rng.uniform(0.1, 0.9));

  BoundaryMap swapped(3, 3);
  Tensor flipped({1, 1, 3, 3});
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    swapped.values[i] = 1.f - gt.values[i];
    flipped.data[i] = 1.f - p.data[i];
  }

  Tape tp;
  const double a = tp.val(balanced_bce(tp, tp.leaf(p), gt)).data[0];
  const double b = tp.val(balanced_bce(tp, tp.leaf(flipped), swapped)).data[0];
  CHECK(a == doctest::Approx(b).epsilon(1e-6));
}

TEST_CASE("balanced_bce: degenerate all-edge / all-non-edge maps stay defined") {
  Tape tp;
  Var p = tp.leaf(Tensor({1, 1, 2, 2}, 0.3f));
  BoundaryMap all_edge(2, 2, 1.f);
  BoundaryMap no_edge(2, 2, 0.f);
  CHECK(tp.val(balanced_bce(tp, p, all_edge)).data[0] == doctest::Approx(0.0));
  const double v = tp.val(balanced_bce(tp, p, no_edge)).data[0];
  CHECK(std::isfinite(v));
  CHECK(v >= 0.0);
  BoundaryMap non_binary(2, 2, 0.5f);
  CHECK_THROWS_AS(balanced_bce(tp, p, non_binary), ContractError);
}

TEST_CASE("balanced_bce: equals standard BCE / 2 when the sets are balanced") {
  // 4-pixel case, |Y+| = |Y-| = 2: weights are both 1/2, so the Eq.-7 sums
  // reduce to half the plain summed BCE.
  Rng rng(21);
  BoundaryMap gt(2, 2);
  gt.at(0, 0) = 1.f;
  gt.at(1, 0) = 1.f;
  Tensor p({1, 1, 2, 2});
  for (auto& v : p.data) v = static_cast<float>(rng.uniform(0.2, 0.8));
  double bce_sum = 0;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      const double pv = p.at4(0, 0, r, c);
      bce_sum -= gt.at(r, c) == 1.f ? std::log(pv) : std::log(1 - pv);
    }
  Tape tp;
  CHECK(tp.val(balanced_bce(tp, tp.leaf(p), gt)).data[0] ==
        doctest::Approx(bce_sum / 2).epsilon(1e-6));
}

TEST_CASE("multitask_total: unit-variance reduction at s=0") {
  Tape tp;
  UncertaintyVars<float> u;
  u.s_seg = tp.leaf(Tensor({1}, 0.f), true);
  u.s_depth = tp.leaf(Tensor({1}, 0.f), true);
  u.s_boundary = tp.leaf(Tensor({1}, 0.f), true);
  Var l1 = tp.leaf(Tensor::scalar(2.f));
  Var l2 = tp.leaf(Tensor::scalar(4.f));
  Var l2t = tp.leaf(Tensor::scalar(1.f));
  Var l3 = tp.leaf(Tensor::scalar(6.f));

  Var dual = multitask_total<float>(tp, l1, l2, l2t, std::nullopt, u, TaskSet::Dual);
  CHECK(tp.val(dual).data[0] == doctest::Approx((2.0 + 4.0) / 2 + 1.0));

  Var triple = multitask_total<float>(tp, l1, l2, l2t, l3, u, TaskSet::Triple);
  CHECK(tp.val(triple).data[0] == doctest::Approx((2.0 + 4.0 + 6.0) / 2 + 1.0));

  // dual vs triple differ exactly by the i=3 term (here exp(0)/2*6 + 0)
  CHECK(tp.val(triple).data[0] - tp.val(dual).data[0] == doctest::Approx(3.0));

  CHECK_THROWS_AS(multitask_total<float>(tp, l1, l2, l2t, std::nullopt, u, TaskSet::Triple),
                  ContractError);
  CHECK_THROWS_AS(multitask_total<float>(tp, l1, l2, l2t, l3, u, TaskSet::Dual), ContractError);
  CHECK_THROWS_AS(multitask_total<float>(tp, l1, l2, l2t, std::nullopt, u, TaskSet::SegOnly),
                  ContractError);
}

TEST_CASE("multitask_total: gradient wrt s_i is -exp(-s)/2*L + 1") {
  for (double s0 : {-0.7, 0.0, 1.3}) {
    for (double L : {0.5, 2.0}) {
      TapeT<double> tp;
      UncertaintyVars<double> u;
      u.s_seg = tp.leaf(TensorT<double>::scalar(s0), true);
      u.s_depth = tp.leaf(TensorT<double>::scalar(0.0), true);
      auto l1 = tp.leaf(TensorT<double>::scalar(L));
      auto l2 = tp.leaf(TensorT<double>::scalar(1.0));
      auto total = multitask_total<double>(tp, l1, l2, std::nullopt, std::nullopt, u, TaskSet::Dual);
      tp.backward(total);
      CHECK(tp.grad(u.s_seg).data[0] ==
            doctest::Approx(-std::exp(-s0) / 2 * L + 1).epsilon(1e-9));
    }
  }
}

TEST_CASE("multitask_total: descent on s alone converges to sigma^2 = c/2") {
  for (double c : {0.5, 1.0, 4.0}) {
    double s = 0.0;
    const double lr = 0.05;
    for (int i = 0; i < 4000; ++i) {
      const double grad = -std::exp(-s) / 2 * c + 1;
      s -= lr * grad;
    }
    CHECK(std::exp(s) == doctest::Approx(c / 2).epsilon(1e-4));
  }
}

TEST_CASE("mean_entropy: one-hot, uniform over 34 classes, sharpening monotone") {
  Tensor onehot({1, 3, 2, 2}, 0.f);
  for (int h = 0; h < 2; ++h)
    for (int w = 0; w < 2; ++w) onehot.at4(0, (h + w) % 3, h, w) = 1.f;
  CHECK(mean_entropy(onehot) == doctest::Approx(0.0));

  Tensor uniform({1, 34, 2, 2}, 1.f / 34.f);
  CHECK(mean_entropy(uniform) == doctest::Approx(std::log(34.0)).epsilon(1e-5));

  Rng rng(55);
  TensorT<double> p = random_probs<double>(rng, 5, 3, 3);
  // mix toward the per-pixel argmax: entropy must never increase along the path
  TensorT<double> hard = p;
  for (int h = 0; h < 3; ++h)
    for (int w = 0; w < 3; ++w) {
      int best = 0;
      for (int k = 1; k < 5; ++k)
        if (p.at4(0, k, h, w) > p.at4(0, best, h, w)) best = k;
      for (int k = 0; k < 5; ++k) hard.at4(0, k, h, w) = k == best ? 1.0 : 0.0;
    }
  double prev = mean_entropy(p);
  for (double t : {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
    TensorT<double> mix = p;
    for (std::size_t i = 0; i < mix.data.size(); ++i) {
      mix.data[i] = (1 - t) * p.data[i] + t * hard.data[i];
    }
    const double h = mean_entropy(mix);
    CHECK(h <= prev + 1e-12);
    prev = h;
  }
}

TEST_CASE("losses: non-negativity where it holds, and a negative multitask total") {
  Rng rng(61);
  Tape tp;
  Var z = tp.leaf(random_tensor<float>(rng, {1, 4, 3, 3}, -3.0, 3.0));
  LabelMap lm(3, 3, 2);
  CHECK(tp.val(softmax_cross_entropy(tp, z, lm)).data[0] >= 0.f);
  Var pa = tp.leaf(random_probs<float>(rng, 4, 3, 3));
  Var pb = tp.leaf(random_probs<float>(rng, 4, 3, 3));
  CHECK(tp.val(discrepancy(tp, pa, pb)).data[0] >= 0.f);
  CHECK(tp.val(depth_mse(tp, pa, pb)).data[0] >= 0.f);

  UncertaintyVars<float> u;
  u.s_seg = tp.leaf(Tensor::scalar(-3.f));  // log sigma^2 < 0 can push total negative
  u.s_depth = tp.leaf(Tensor::scalar(-3.f));
  Var tiny = tp.leaf(Tensor::scalar(1e-4f));
  Var total = multitask_total<float>(tp, tiny, tiny, std::nullopt, std::nullopt, u, TaskSet::Dual);
  CHECK(tp.val(total).data[0] < 0.f);
}

TEST_CASE("grad_check: every loss in 64-bit mode") {
  Rng rng(71);

  SUBCASE("cross entropy") {
    TensorT<double> z = random_tensor<double>(rng, {1, 4, 3, 3}, -1.5, 1.5);
    LabelMap lm(3, 3);
    for (auto& v : lm.values) v = static_cast<std::uint8_t>(rng.uniform_int(0, 3));
    lm.at(1, 1) = LabelMap::kIgnore;
    auto f = [&lm](TapeT<double>& t, const std::vector<VarT<double>>& v) {
      return softmax_cross_entropy(t, v[0], lm);
    };
    CHECK(grad_check<double>(f, {z}) < 1e-5);
  }

  SUBCASE("discrepancy, kink-safe inputs") {
    TensorT<double> p1({1, 2, 3, 3});
    TensorT<double> p2({1, 2, 3, 3});
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 3; ++w) {
        const double a = rng.uniform(0.2, 0.7);
        const double delta = rng.uniform(0.05, 0.15) * (rng.coin() ? 1 : -1);
        p1.at4(0, 0, h, w) = a;
        p1.at4(0, 1, h, w) = 1 - a;
        p2.at4(0, 0, h, w) = a + delta;
        p2.at4(0, 1, h, w) = 1 - a - delta;
      }
    auto f = [](TapeT<double>& t, const std::vector<VarT<double>>& v) {
      return discrepancy(t, v[0], v[1]);
    };
    CHECK(grad_check<double>(f, {p1, p2}) < 1e-5);
  }

  SUBCASE("depth mse") {
    TensorT<double> a = random_tensor<double>(rng, {1, 3, 3, 3});
    TensorT<double> b = random_tensor<double>(rng, {1, 3, 3, 3});
    auto f = [](TapeT<double>& t, const std::vector<VarT<double>>& v) {
      return depth_mse(t, v[0], v[1]);
    };
    CHECK(grad_check<double>(f, {a, b}) < 1e-5);
  }

  SUBCASE("balanced bce") {
    BoundaryMap gt(3, 3);
    for (auto& v : gt.values) v = rng.coin() ? 1.f : 0.f;
    gt.at(0, 0) = 1.f;
    gt.at(2, 2) = 0.f;
    TensorT<double> p({1, 1, 3, 3});
    for (auto& v : p.data) v = rng.uniform(0.15, 0.85);
    auto f = [&gt](TapeT<double>& t, const std::vector<VarT<double>>& v) {
      return balanced_bce(t, v[0], gt);
    };
    CHECK(grad_check<double>(f, {p}) < 1e-5);
  }

  SUBCASE("multitask total wrt losses and s") {
    auto f = [](TapeT<double>& t, const std::vector<VarT<double>>& v) {
      UncertaintyVars<double> u;
      u.s_seg = v[3];
      u.s_depth = v[4];
      return multitask_total<double>(t, v[0], v[1], v[2], std::nullopt, u, TaskSet::Dual);
    };
    std::vector<TensorT<double>> ins = {
        TensorT<double>::scalar(1.3), TensorT<double>::scalar(0.4),
        TensorT<double>::scalar(0.9), TensorT<double>::scalar(0.2),
        TensorT<double>::scalar(-0.6)};
    CHECK(grad_check<double>(f, ins) < 1e-6);
  }
}

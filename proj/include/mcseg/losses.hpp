#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "mcseg/arch_kinds.hpp"
#include "mcseg/autodiff.hpp"
#include "mcseg/maps.hpp"

namespace mcseg {

// Per-task log-variance scalars s_i = log(sigma_i^2); sigma^2 = exp(s) > 0 by
// construction. Registered as trainable parameters by multitask models.
template <class T>
struct UncertaintyVars {
  VarT<T> s_seg;       // i = 1
  VarT<T> s_depth;     // i = 2
  VarT<T> s_boundary;  // i = 3
};

// Mean over non-ignored pixels of -log p(correct class), computed from logits
// with a fused log-softmax for stability. Labels use 255 as ignore.
template <class T>
VarT<T> softmax_cross_entropy(TapeT<T>& tp, VarT<T> logits,
                              const std::vector<const LabelMap*>& labels) {
  const TensorT<T>& z = tp.val(logits);
  if (z.ndim() != 4) {
    throw ContractError(cat("softmax_cross_entropy: logits must be [N,K,H,W], got ",
                            shape_str(z.shape)));
  }
  const int N = z.dim(0), K = z.dim(1), H = z.dim(2), W = z.dim(3);
  if (static_cast<int>(labels.size()) != N) {
    throw ContractError(cat("softmax_cross_entropy: ", labels.size(), " label maps for batch ", N));
  }
  for (const LabelMap* lm : labels) {
    if (lm->height != H || lm->width != W) {
      throw ContractError(cat("softmax_cross_entropy: label map ", lm->height, "x", lm->width,
                              " does not match logits ", shape_str(z.shape)));
    }
    lm->validate(K);
  }

  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  const T* pz = z.ptr();
  double acc = 0.0;
  std::int64_t counted = 0;
  for (int n = 0; n < N; ++n) {
    const T* zb = pz + static_cast<std::int64_t>(n) * K * HW;
    const auto& lv = labels[static_cast<std::size_t>(n)]->values;
    for (std::int64_t s = 0; s < HW; ++s) {
      const std::uint8_t y = lv[static_cast<std::size_t>(s)];
      if (y == LabelMap::kIgnore) continue;
      T mx = zb[s];
      for (int k = 1; k < K; ++k) mx = std::max(mx, zb[k * HW + s]);
      double sum = 0.0;
      for (int k = 0; k < K; ++k) sum += std::exp(static_cast<double>(zb[k * HW + s] - mx));
      acc += std::log(sum) + static_cast<double>(mx) - static_cast<double>(zb[y * HW + s]);
      ++counted;
    }
  }
  if (counted == 0) {
    throw ContractError("softmax_cross_entropy: every pixel is ignored, mean undefined");
  }
  const T value = static_cast<T>(acc / static_cast<double>(counted));

  bool rg = tp.requires_grad(logits);
  std::vector<std::vector<std::uint8_t>> label_copy;
  if (rg) {
    label_copy.reserve(labels.size());
    for (const LabelMap* lm : labels) label_copy.push_back(lm->values);
  }
  return tp.record(TensorT<T>::scalar(value), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [logits, labels = std::move(label_copy), N, K, HW, counted,
       out_id = tp.size()](TapeT<T>& t) {
        const T g = t.grad(VarT<T>{out_id}).data[0];
        const T* pz = t.val(logits).ptr();
        T* gz = t.grad(logits).ptr();
        const T inv = g / static_cast<T>(counted);
        for (int n = 0; n < N; ++n) {
          const T* zb = pz + static_cast<std::int64_t>(n) * K * HW;
          T* gb = gz + static_cast<std::int64_t>(n) * K * HW;
          const auto& lv = labels[static_cast<std::size_t>(n)];
          for (std::int64_t s = 0; s < HW; ++s) {
            const std::uint8_t y = lv[static_cast<std::size_t>(s)];
            if (y == LabelMap::kIgnore) continue;
            T mx = zb[s];
            for (int k = 1; k < K; ++k) mx = std::max(mx, zb[k * HW + s]);
            T denom = T(0);
            for (int k = 0; k < K; ++k) denom += std::exp(zb[k * HW + s] - mx);
            const T dinv = T(1) / denom;
            for (int k = 0; k < K; ++k) {
              const T p = std::exp(zb[k * HW + s] - mx) * dinv;
              gb[k * HW + s] += inv * (p - (k == y ? T(1) : T(0)));
            }
          }
        }
      }));
}

template <class T>
VarT<T> softmax_cross_entropy(TapeT<T>& tp, VarT<T> logits, const LabelMap& labels) {
  return softmax_cross_entropy(tp, logits, std::vector<const LabelMap*>{&labels});
}

// Classifier disagreement: mean over pixels and classes of |p1 - p2| when
// exponent = 1 (default), squared difference when exponent = 2.
template <class T>
VarT<T> discrepancy(TapeT<T>& tp, VarT<T> p1, VarT<T> p2, int exponent = 1) {
  detail::require_same_shape(tp, p1, p2, "discrepancy");
  if (exponent != 1 && exponent != 2) {
    throw ContractError(cat("discrepancy: exponent must be 1 or 2, got ", exponent));
  }
  if (debug_checks_enabled()) {
    for (VarT<T> p : {p1, p2}) {
      for (T v : tp.val(p).data) {
        if (!(v >= T(0) && v <= T(1))) {
          throw ContractError(cat("discrepancy: probability ", static_cast<double>(v),
                                  " outside [0,1]"));
        }
      }
    }
  }
  VarT<T> d = sub(tp, p1, p2);
  return mean_all(tp, exponent == 1 ? abs_all(tp, d) : square(tp, d));
}

// Mean over all elements of squared difference (HHA regression target).
template <class T>
VarT<T> depth_mse(TapeT<T>& tp, VarT<T> pred, VarT<T> target) {
  detail::require_same_shape(tp, pred, target, "depth_mse");
  return mean_all(tp, square(tp, sub(tp, pred, target)));
}

// Class-balanced boundary cross entropy:
//   -( |Y-|/|Y| ) sum_{edge} log p  -  ( |Y+|/|Y| ) sum_{non-edge} log(1-p)
// Sums (not means) over each set; per-image, averaged over the batch.
// Probabilities are clamped away from {0,1} before the logs.
template <class T>
VarT<T> balanced_bce(TapeT<T>& tp, VarT<T> pred_probs,
                     const std::vector<const BoundaryMap*>& gts) {
  const TensorT<T>& p = tp.val(pred_probs);
  const int N = static_cast<int>(gts.size());
  if (N == 0) throw ContractError("balanced_bce: empty ground truth batch");
  const std::int64_t hw = gts[0]->numel();
  for (const BoundaryMap* b : gts) {
    if (b->numel() != hw) throw ContractError("balanced_bce: inconsistent map sizes");
    for (float v : b->values) {
      if (v != 0.f && v != 1.f) {
        throw ContractError("balanced_bce: ground truth must be binary");
      }
    }
  }
  if (p.numel() != static_cast<std::int64_t>(N) * hw) {
    throw ContractError(cat("balanced_bce: prediction numel ", p.numel(),
                            " != batch ", N, " x ", hw, " pixels"));
  }

  constexpr T kEps = sizeof(T) == 4 ? T(1e-7) : T(1e-12);
  auto clamp01 = [](T v) {
    return v < kEps ? kEps : (v > T(1) - kEps ? T(1) - kEps : v);
  };

  const T* pp = p.ptr();
  double acc = 0.0;
  std::vector<std::pair<double, double>> weights(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    const auto& gv = gts[static_cast<std::size_t>(n)]->values;
    std::int64_t n_pos = 0;
    for (float v : gv) n_pos += (v == 1.f);
    const std::int64_t n_neg = hw - n_pos;
    const double w_edge = static_cast<double>(n_neg) / static_cast<double>(hw);
    const double w_non = static_cast<double>(n_pos) / static_cast<double>(hw);
    weights[static_cast<std::size_t>(n)] = {w_edge, w_non};
    double local = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) {
      const T pv = clamp01(pp[n * hw + i]);
      if (gv[static_cast<std::size_t>(i)] == 1.f) {
        local -= w_edge * std::log(static_cast<double>(pv));
      } else {
        local -= w_non * std::log(static_cast<double>(T(1) - pv));
      }
    }
    acc += local;
  }
  const T value = static_cast<T>(acc / N);

  bool rg = tp.requires_grad(pred_probs);
  std::vector<std::vector<float>> gt_copy;
  if (rg) {
    gt_copy.reserve(gts.size());
    for (const BoundaryMap* b : gts) gt_copy.push_back(b->values);
  }
  return tp.record(TensorT<T>::scalar(value), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [pred_probs, gt = std::move(gt_copy), weights, N, hw,
       out_id = tp.size()](TapeT<T>& t) {
        const T g = t.grad(VarT<T>{out_id}).data[0] / static_cast<T>(N);
        const T* pp = t.val(pred_probs).ptr();
        T* gp = t.grad(pred_probs).ptr();
        constexpr T eps = sizeof(T) == 4 ? T(1e-7) : T(1e-12);
        for (int n = 0; n < N; ++n) {
          const auto& gv = gt[static_cast<std::size_t>(n)];
          const T w_edge = static_cast<T>(weights[static_cast<std::size_t>(n)].first);
          const T w_non = static_cast<T>(weights[static_cast<std::size_t>(n)].second);
          for (std::int64_t i = 0; i < hw; ++i) {
            const T pv = pp[n * hw + i];
            if (pv <= eps || pv >= T(1) - eps) continue;  // clamped: flat
            if (gv[static_cast<std::size_t>(i)] == 1.f) {
              gp[n * hw + i] -= g * w_edge / pv;
            } else {
              gp[n * hw + i] += g * w_non / (T(1) - pv);
            }
          }
        }
      }));
}

template <class T>
VarT<T> balanced_bce(TapeT<T>& tp, VarT<T> pred_probs, const BoundaryMap& gt) {
  return balanced_bce(tp, pred_probs, std::vector<const BoundaryMap*>{&gt});
}

// Uncertainty-weighted multitask total:
//   sum_i ( exp(-s_i)/2 * L_i^s + s_i )  +  L_2^t
// The target depth term enters unweighted. L3/s_boundary only for Triple.
template <class T>
VarT<T> multitask_total(TapeT<T>& tp, VarT<T> l1_src, VarT<T> l2_src,
                        std::optional<VarT<T>> l2_tgt, std::optional<VarT<T>> l3_src,
                        const UncertaintyVars<T>& u, TaskSet tasks) {
  if (tasks == TaskSet::SegOnly) {
    throw ContractError("multitask_total: task set must be dual or triple");
  }
  if (!u.s_seg.valid() || !u.s_depth.valid()) {
    throw ContractError("multitask_total: missing uncertainty params s1/s2");
  }
  if (tasks == TaskSet::Triple && (!l3_src.has_value() || !u.s_boundary.valid())) {
    throw ContractError("multitask_total: triple task set needs L3 and s3");
  }
  if (tasks == TaskSet::Dual && l3_src.has_value()) {
    throw ContractError("multitask_total: L3 supplied but boundary task inactive");
  }

  auto weighted = [&](VarT<T> s, VarT<T> loss) {
    VarT<T> half_inv_var = mul_scalar(tp, exp_all(tp, neg(tp, s)), T(0.5));
    return add(tp, mul(tp, half_inv_var, loss), s);
  };

  VarT<T> total = weighted(u.s_seg, l1_src);
  total = add(tp, total, weighted(u.s_depth, l2_src));
  if (tasks == TaskSet::Triple) {
    total = add(tp, total, weighted(u.s_boundary, *l3_src));
  }
  if (l2_tgt.has_value()) {
    total = add(tp, total, *l2_tgt);
  }
  return total;
}

// Mean over pixels of -sum_k p_k log p_k; used for checkpoint selection on
// unlabeled target data. Plain value computation, no gradients.
template <class T>
double mean_entropy(const TensorT<T>& probs) {
  if (probs.ndim() < 3) {
    throw ContractError(cat("mean_entropy: probabilities must be >=3-d, got ",
                            shape_str(probs.shape)));
  }
  const int C = probs.dim(probs.ndim() - 3);
  const std::int64_t HW = static_cast<std::int64_t>(probs.dim(probs.ndim() - 2)) *
                          probs.dim(probs.ndim() - 1);
  const std::int64_t B = probs.numel() / (C * HW);
  const T* pp = probs.ptr();
  double acc = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const T* pb = pp + b * C * HW;
    for (std::int64_t s = 0; s < HW; ++s) {
      double h = 0.0;
      for (int c = 0; c < C; ++c) {
        const double p = static_cast<double>(pb[c * HW + s]);
        if (p > 0.0) h -= p * std::log(p);
      }
      acc += h;
    }
  }
  return acc / static_cast<double>(B * HW);
}

}  // namespace mcseg

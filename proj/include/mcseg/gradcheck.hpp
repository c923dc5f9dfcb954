#pragma once

#include <functional>
#include <vector>

#include "mcseg/autodiff.hpp"

namespace mcseg {

// Central-difference verification of reverse-mode gradients. `f` must build a
// scalar loss from the given leaf vars on the supplied tape. Returns the max
// relative error |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|) over all checked
// coordinates. `check_mask`, when given, selects coordinates per input
// (used to exclude kink-adjacent points of relu/abs-like ops).
template <class T>
T grad_check(const std::function<VarT<T>(TapeT<T>&, const std::vector<VarT<T>>&)>& f,
             const std::vector<TensorT<T>>& inputs, T eps = T(1e-4),
             const std::vector<std::vector<char>>* check_mask = nullptr) {
  // Reverse-mode gradients.
  std::vector<TensorT<T>> analytic;
  {
    TapeT<T> tape;
    std::vector<VarT<T>> vars;
    vars.reserve(inputs.size());
    for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
    VarT<T> loss = f(tape, vars);
    tape.backward(loss);
    for (auto v : vars) analytic.push_back(tape.grad(v));
  }

  auto eval_loss = [&](const std::vector<TensorT<T>>& pts) -> T {
    TapeT<T> tape;
    std::vector<VarT<T>> vars;
    vars.reserve(pts.size());
    for (const auto& in : pts) vars.push_back(tape.leaf(in, false));
    VarT<T> loss = f(tape, vars);
    return tape.val(loss).data[0];
  };

  T max_rel = T(0);
  std::vector<TensorT<T>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::int64_t n = inputs[k].numel();
    for (std::int64_t i = 0; i < n; ++i) {
      if (check_mask != nullptr && !(*check_mask)[k][static_cast<std::size_t>(i)]) continue;
      const T x0 = inputs[k].data[i];
      probe[k].data[i] = x0 + eps;
      const T fp = eval_loss(probe);
      probe[k].data[i] = x0 - eps;
      const T fm = eval_loss(probe);
      probe[k].data[i] = x0;
      const T fd = (fp - fm) / (T(2) * eps);
      const T ad = analytic[k].data[i];
      const T denom = std::max(T(1e-8), std::abs(ad) + std::abs(fd));
      max_rel = std::max(max_rel, std::abs(ad - fd) / denom);
    }
  }
  return max_rel;
}

}  // namespace mcseg

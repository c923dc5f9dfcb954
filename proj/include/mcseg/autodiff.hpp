#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "mcseg/common.hpp"
#include "mcseg/tensor.hpp"

namespace mcseg {

template <class T>
class TapeT;

// Handle into a tape. Plain index; the owning tape is always passed alongside.
template <class T>
struct VarT {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Ops append slots in topological order; backward() walks
// the slots in reverse. Gradients accumulate across backward() calls until
// zero_grad().
template <class T>
class TapeT {
 public:
  using Tensor = TensorT<T>;
  using Var = VarT<T>;

  Var leaf(Tensor value, bool requires_grad = false) {
    return record(std::move(value), requires_grad, nullptr);
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(Tensor value, bool requires_grad, std::function<void(TapeT&)> bw) {
    check_finite(value, "tape value");
    Slot s;
    s.value = std::move(value);
    s.requires_grad = requires_grad;
    s.backward_fn = std::move(bw);
    slots_.push_back(std::move(s));
    return Var{static_cast<int>(slots_.size()) - 1};
  }

  const Tensor& val(Var v) const { return slots_[check(v)].value; }
  bool requires_grad(Var v) const { return slots_[check(v)].requires_grad; }
  bool grad_live(Var v) const { return slots_[check(v)].grad_live; }

  // Gradient accumulator for v, allocated (zeros) on first touch.
  Tensor& grad(Var v) {
    Slot& s = slots_[check(v)];
    if (!s.grad_live) {
      if (s.grad.data.empty()) s.grad = Tensor(s.value.shape);
      s.grad_live = true;
    }
    return s.grad;
  }

  void backward(Var loss) {
    const Slot& ls = slots_[check(loss)];
    if (ls.value.numel() != 1) {
      throw ContractError(cat("backward() needs a scalar loss, got shape ",
                              shape_str(ls.value.shape)));
    }
    // Leaf gradients accumulate across calls; intermediate gradients are
    // per-call scratch and start from zero.
    for (Slot& s : slots_) {
      if (s.backward_fn && s.grad_live) {
        s.grad.fill(T(0));
        s.grad_live = false;
      }
    }
    grad(loss).data[0] += T(1);
    for (int i = loss.id; i >= 0; --i) {
      Slot& s = slots_[static_cast<std::size_t>(i)];
      if (s.backward_fn && s.grad_live) s.backward_fn(*this);
    }
  }

  void zero_grad() {
    for (Slot& s : slots_) {
      if (s.grad_live) {
        s.grad.fill(T(0));
        s.grad_live = false;
      }
    }
  }

  int size() const { return static_cast<int>(slots_.size()); }

 private:
  struct Slot {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_live = false;
    std::function<void(TapeT&)> backward_fn;
  };

  std::size_t check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(slots_.size())) {
      throw ContractError(cat("var id ", v.id, " not on this tape (size ", slots_.size(), ")"));
    }
    return static_cast<std::size_t>(v.id);
  }

  std::vector<Slot> slots_;
};

using Tape = TapeT<float>;
using Var = VarT<float>;

namespace detail {

template <class T>
void require_same_shape(const TapeT<T>& tp, VarT<T> a, VarT<T> b, const char* op) {
  if (!tp.val(a).same_shape(tp.val(b))) {
    throw ContractError(cat(op, ": shape mismatch ", shape_str(tp.val(a).shape),
                            " vs ", shape_str(tp.val(b).shape)));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <class T>
VarT<T> add(TapeT<T>& tp, VarT<T> a, VarT<T> b) {
  detail::require_same_shape(tp, a, b, "add");
  TensorT<T> out(tp.val(a).shape);
  const std::int64_t n = out.numel();
  const T* pa = tp.val(a).ptr();
  const T* pb = tp.val(b).ptr();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = pa[i] + pb[i];
  bool rg = tp.requires_grad(a) || tp.requires_grad(b);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, b, out_id = tp.size()](TapeT<T>& t) {
        const VarT<T> o{out_id};
        const T* g = t.grad(o).ptr();
        const std::int64_t m = t.val(o).numel();
        if (t.requires_grad(a)) {
          T* ga = t.grad(a).ptr();
          for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
          T* gb = t.grad(b).ptr();
          for (std::int64_t i = 0; i < m; ++i) gb[i] += g[i];
        }
      }));
}

template <class T>
VarT<T> sub(TapeT<T>& tp, VarT<T> a, VarT<T> b) {
  detail::require_same_shape(tp, a, b, "sub");
  TensorT<T> out(tp.val(a).shape);
  const std::int64_t n = out.numel();
  const T* pa = tp.val(a).ptr();
  const T* pb = tp.val(b).ptr();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = pa[i] - pb[i];
  bool rg = tp.requires_grad(a) || tp.requires_grad(b);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, b, out_id = tp.size()](TapeT<T>& t) {
        const VarT<T> o{out_id};
        const T* g = t.grad(o).ptr();
        const std::int64_t m = t.val(o).numel();
        if (t.requires_grad(a)) {
          T* ga = t.grad(a).ptr();
          for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
          T* gb = t.grad(b).ptr();
          for (std::int64_t i = 0; i < m; ++i) gb[i] -= g[i];
        }
      }));
}

template <class T>
VarT<T> mul(TapeT<T>& tp, VarT<T> a, VarT<T> b) {
  detail::require_same_shape(tp, a, b, "mul");
  TensorT<T> out(tp.val(a).shape);
  const std::int64_t n = out.numel();
  const T* pa = tp.val(a).ptr();
  const T* pb = tp.val(b).ptr();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = pa[i] * pb[i];
  bool rg = tp.requires_grad(a) || tp.requires_grad(b);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, b, out_id = tp.size()](TapeT<T>& t) {
        const VarT<T> o{out_id};
        const T* g = t.grad(o).ptr();
        const std::int64_t m = t.val(o).numel();
        if (t.requires_grad(a)) {
          T* ga = t.grad(a).ptr();
          const T* vb = t.val(b).ptr();
          for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i] * vb[i];
        }
        if (t.requires_grad(b)) {
          T* gb = t.grad(b).ptr();
          const T* va = t.val(a).ptr();
          for (std::int64_t i = 0; i < m; ++i) gb[i] += g[i] * va[i];
        }
      }));
}

template <class T>
VarT<T> neg(TapeT<T>& tp, VarT<T> a) {
  TensorT<T> out(tp.val(a).shape);
  const std::int64_t n = out.numel();
  const T* pa = tp.val(a).ptr();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = -pa[i];
  bool rg = tp.requires_grad(a);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, out_id = tp.size()](TapeT<T>& t) {
        const T* g = t.grad(VarT<T>{out_id}).ptr();
        T* ga = t.grad(a).ptr();
        const std::int64_t m = t.val(a).numel();
        for (std::int64_t i = 0; i < m; ++i) ga[i] -= g[i];
      }));
}

template <class T>
VarT<T> add_scalar(TapeT<T>& tp, VarT<T> a, T c) {
  TensorT<T> out(tp.val(a).shape);
  const std::int64_t n = out.numel();
  const T* pa = tp.val(a).ptr();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = pa[i] + c;
  bool rg = tp.requires_grad(a);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, out_id = tp.size()](TapeT<T>& t) {
        const T* g = t.grad(VarT<T>{out_id}).ptr();
        T* ga = t.grad(a).ptr();
        const std::int64_t m = t.val(a).numel();
        for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i];
      }));
}

template <class T>
VarT<T> mul_scalar(TapeT<T>& tp, VarT<T> a, T c) {
  TensorT<T> out(tp.val(a).shape);
  const std::int64_t n = out.numel();
  const T* pa = tp.val(a).ptr();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = pa[i] * c;
  bool rg = tp.requires_grad(a);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, c, out_id = tp.size()](TapeT<T>& t) {
        const T* g = t.grad(VarT<T>{out_id}).ptr();
        T* ga = t.grad(a).ptr();
        const std::int64_t m = t.val(a).numel();
        for (std::int64_t i = 0; i < m; ++i) ga[i] += c * g[i];
      }));
}

template <class T>
VarT<T> abs_all(TapeT<T>& tp, VarT<T> a) {
  TensorT<T> out(tp.val(a).shape);
  const std::int64_t n = out.numel();
  const T* pa = tp.val(a).ptr();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = std::abs(pa[i]);
  bool rg = tp.requires_grad(a);
  // gradient at exactly 0 is 0
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, out_id = tp.size()](TapeT<T>& t) {
        const T* g = t.grad(VarT<T>{out_id}).ptr();
        const T* va = t.val(a).ptr();
        T* ga = t.grad(a).ptr();
        const std::int64_t m = t.val(a).numel();
        for (std::int64_t i = 0; i < m; ++i) {
          if (va[i] > T(0)) ga[i] += g[i];
          else if (va[i] < T(0)) ga[i] -= g[i];
        }
      }));
}

template <class T>
VarT<T> square(TapeT<T>& tp, VarT<T> a) {
  TensorT<T> out(tp.val(a).shape);
  const std::int64_t n = out.numel();
  const T* pa = tp.val(a).ptr();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = pa[i] * pa[i];
  bool rg = tp.requires_grad(a);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, out_id = tp.size()](TapeT<T>& t) {
        const T* g = t.grad(VarT<T>{out_id}).ptr();
        const T* va = t.val(a).ptr();
        T* ga = t.grad(a).ptr();
        const std::int64_t m = t.val(a).numel();
        for (std::int64_t i = 0; i < m; ++i) ga[i] += T(2) * va[i] * g[i];
      }));
}

template <class T>
VarT<T> exp_all(TapeT<T>& tp, VarT<T> a) {
  TensorT<T> out(tp.val(a).shape);
  const std::int64_t n = out.numel();
  const T* pa = tp.val(a).ptr();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = std::exp(pa[i]);
  bool rg = tp.requires_grad(a);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, out_id = tp.size()](TapeT<T>& t) {
        const VarT<T> o{out_id};
        const T* g = t.grad(o).ptr();
        const T* vo = t.val(o).ptr();
        T* ga = t.grad(a).ptr();
        const std::int64_t m = t.val(a).numel();
        for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i] * vo[i];
      }));
}

template <class T>
VarT<T> sum_all(TapeT<T>& tp, VarT<T> a) {
  double acc = 0.0;
  for (T v : tp.val(a).data) acc += static_cast<double>(v);
  bool rg = tp.requires_grad(a);
  return tp.record(TensorT<T>::scalar(static_cast<T>(acc)), rg,
                   !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, out_id = tp.size()](TapeT<T>& t) {
        const T g = t.grad(VarT<T>{out_id}).data[0];
        T* ga = t.grad(a).ptr();
        const std::int64_t m = t.val(a).numel();
        for (std::int64_t i = 0; i < m; ++i) ga[i] += g;
      }));
}

template <class T>
VarT<T> mean_all(TapeT<T>& tp, VarT<T> a) {
  const std::int64_t n = tp.val(a).numel();
  double acc = 0.0;
  for (T v : tp.val(a).data) acc += static_cast<double>(v);
  bool rg = tp.requires_grad(a);
  return tp.record(TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), rg,
                   !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, n, out_id = tp.size()](TapeT<T>& t) {
        const T g = t.grad(VarT<T>{out_id}).data[0] / static_cast<T>(n);
        T* ga = t.grad(a).ptr();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
      }));
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class T>
VarT<T> relu(TapeT<T>& tp, VarT<T> a) {
  TensorT<T> out(tp.val(a).shape);
  const std::int64_t n = out.numel();
  const T* pa = tp.val(a).ptr();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = pa[i] > T(0) ? pa[i] : T(0);
  bool rg = tp.requires_grad(a);
  // gradient at exactly 0 is 0
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, out_id = tp.size()](TapeT<T>& t) {
        const T* g = t.grad(VarT<T>{out_id}).ptr();
        const T* va = t.val(a).ptr();
        T* ga = t.grad(a).ptr();
        const std::int64_t m = t.val(a).numel();
        for (std::int64_t i = 0; i < m; ++i) {
          if (va[i] > T(0)) ga[i] += g[i];
        }
      }));
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
VarT<T> sigmoid(TapeT<T>& tp, VarT<T> a) {
  TensorT<T> out(tp.val(a).shape);
  const std::int64_t n = out.numel();
  const T* pa = tp.val(a).ptr();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = stable_sigmoid(pa[i]);
  bool rg = tp.requires_grad(a);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, out_id = tp.size()](TapeT<T>& t) {
        const VarT<T> o{out_id};
        const T* g = t.grad(o).ptr();
        const T* s = t.val(o).ptr();
        T* ga = t.grad(a).ptr();
        const std::int64_t m = t.val(a).numel();
        for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i] * s[i] * (T(1) - s[i]);
      }));
}

// Softmax over the channel axis, per spatial position. Accepts >=3 dims laid
// out as [..batch.., C, H, W] with the channel axis at ndim-3.
template <class T>
VarT<T> softmax_channel(TapeT<T>& tp, VarT<T> a) {
  const TensorT<T>& x = tp.val(a);
  if (x.ndim() < 3) {
    throw ContractError(cat("softmax_channel needs >=3 dims, got ", shape_str(x.shape)));
  }
  const int C = x.dim(x.ndim() - 3);
  const std::int64_t HW = static_cast<std::int64_t>(x.dim(x.ndim() - 2)) * x.dim(x.ndim() - 1);
  const std::int64_t B = x.numel() / (C * HW);
  TensorT<T> out(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (std::int64_t b = 0; b < B; ++b) {
    const T* xb = px + b * C * HW;
    T* ob = po + b * C * HW;
    for (std::int64_t s = 0; s < HW; ++s) {
      T mx = xb[s];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xb[c * HW + s]);
      T denom = T(0);
      for (int c = 0; c < C; ++c) {
        const T e = std::exp(xb[c * HW + s] - mx);
        ob[c * HW + s] = e;
        denom += e;
      }
      const T inv = T(1) / denom;
      for (int c = 0; c < C; ++c) ob[c * HW + s] *= inv;
    }
  }
  bool rg = tp.requires_grad(a);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, C, HW, B, out_id = tp.size()](TapeT<T>& t) {
        const VarT<T> o{out_id};
        const T* g = t.grad(o).ptr();
        const T* p = t.val(o).ptr();
        T* ga = t.grad(a).ptr();
        for (std::int64_t b = 0; b < B; ++b) {
          const std::int64_t base = b * C * HW;
          for (std::int64_t s = 0; s < HW; ++s) {
            T dot = T(0);
            for (int c = 0; c < C; ++c) {
              const std::int64_t i = base + c * HW + s;
              dot += g[i] * p[i];
            }
            for (int c = 0; c < C; ++c) {
              const std::int64_t i = base + c * HW + s;
              ga[i] += p[i] * (g[i] - dot);
            }
          }
        }
      }));
}

enum class ActivationKind { Relu, Sigmoid, SoftmaxChannel };

template <class T>
VarT<T> activation(TapeT<T>& tp, VarT<T> a, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Relu: return relu(tp, a);
    case ActivationKind::Sigmoid: return sigmoid(tp, a);
    case ActivationKind::SoftmaxChannel: return softmax_channel(tp, a);
  }
  throw ContractError("unknown activation kind");
}

// ---------------------------------------------------------------------------
// combine / concat
// ---------------------------------------------------------------------------

template <class T>
VarT<T> concat_channels(TapeT<T>& tp, VarT<T> a, VarT<T> b) {
  const TensorT<T>& xa = tp.val(a);
  const TensorT<T>& xb = tp.val(b);
  if (xa.ndim() != 4 || xb.ndim() != 4 || xa.dim(0) != xb.dim(0) ||
      xa.dim(2) != xb.dim(2) || xa.dim(3) != xb.dim(3)) {
    throw ContractError(cat("concat_channels: incompatible shapes ",
                            shape_str(xa.shape), " vs ", shape_str(xb.shape)));
  }
  const int N = xa.dim(0), Ca = xa.dim(1), Cb = xb.dim(1);
  const std::int64_t HW = static_cast<std::int64_t>(xa.dim(2)) * xa.dim(3);
  TensorT<T> out({N, Ca + Cb, xa.dim(2), xa.dim(3)});
  for (int n = 0; n < N; ++n) {
    std::copy_n(xa.ptr() + n * Ca * HW, Ca * HW, out.ptr() + n * (Ca + Cb) * HW);
    std::copy_n(xb.ptr() + n * Cb * HW, Cb * HW, out.ptr() + (n * (Ca + Cb) + Ca) * HW);
  }
  bool rg = tp.requires_grad(a) || tp.requires_grad(b);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [a, b, N, Ca, Cb, HW, out_id = tp.size()](TapeT<T>& t) {
        const T* g = t.grad(VarT<T>{out_id}).ptr();
        if (t.requires_grad(a)) {
          T* ga = t.grad(a).ptr();
          for (int n = 0; n < N; ++n) {
            const T* gs = g + n * (Ca + Cb) * HW;
            T* gd = ga + n * Ca * HW;
            for (std::int64_t i = 0; i < Ca * HW; ++i) gd[i] += gs[i];
          }
        }
        if (t.requires_grad(b)) {
          T* gb = t.grad(b).ptr();
          for (int n = 0; n < N; ++n) {
            const T* gs = g + (n * (Ca + Cb) + Ca) * HW;
            T* gd = gb + n * Cb * HW;
            for (std::int64_t i = 0; i < Cb * HW; ++i) gd[i] += gs[i];
          }
        }
      }));
}

enum class CombineKind { Add, ConcatChannels, Mul };

template <class T>
VarT<T> combine(TapeT<T>& tp, VarT<T> a, VarT<T> b, CombineKind kind) {
  switch (kind) {
    case CombineKind::Add: return add(tp, a, b);
    case CombineKind::ConcatChannels: return concat_channels(tp, a, b);
    case CombineKind::Mul: return mul(tp, a, b);
  }
  throw ContractError("unknown combine kind");
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace detail {

// Valid output-column range for a given kernel column so the input column
// ow*stride + kw - pad stays inside [0, W).
inline void conv_col_range(int kw, int pad, int stride, int W, int OW,
                           int* lo, int* hi) {
  int l = 0;
  if (pad - kw > 0) l = (pad - kw + stride - 1) / stride;
  int h = OW;
  const int max_i = W - 1 - (kw - pad);
  if (max_i < 0) {
    h = 0;
  } else {
    h = std::min(OW, max_i / stride + 1);
  }
  *lo = l;
  *hi = std::max(l, h);
}

}  // namespace detail

// Cross-correlation with per-channel bias (no kernel flip). Parallelized over
// output planes; per-element summation order is fixed, so results are bitwise
// independent of the thread count.
template <class T>
VarT<T> conv2d(TapeT<T>& tp, VarT<T> x, VarT<T> w, VarT<T> b, int stride, int pad) {
  const TensorT<T>& xv = tp.val(x);
  const TensorT<T>& wv = tp.val(w);
  const TensorT<T>& bv = tp.val(b);
  if (xv.ndim() != 4) throw ContractError(cat("conv2d: input must be 4-d, got ", shape_str(xv.shape)));
  if (wv.ndim() != 4) throw ContractError(cat("conv2d: weight must be 4-d, got ", shape_str(wv.shape)));
  const int N = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Cout = wv.dim(0), KH = wv.dim(2), KW = wv.dim(3);
  if (wv.dim(1) != Cin) {
    throw ContractError(cat("conv2d: weight expects ", wv.dim(1),
                            " input channels but input has ", Cin,
                            " (input ", shape_str(xv.shape), ", weight ", shape_str(wv.shape), ")"));
  }
  if (bv.ndim() != 1 || bv.dim(0) != Cout) {
    throw ContractError(cat("conv2d: bias shape ", shape_str(bv.shape),
                            " must be [", Cout, "]"));
  }
  if (KH % 2 == 0 || KW % 2 == 0) {
    throw ContractError(cat("conv2d: kernel dims must be odd, got ", KH, "x", KW));
  }
  if (stride < 1 || pad < 0) throw ContractError("conv2d: stride must be >=1 and pad >=0");
  if (H + 2 * pad < KH || W + 2 * pad < KW) {
    throw ContractError(cat("conv2d: kernel ", KH, "x", KW, " larger than padded input ",
                            shape_str(xv.shape), " with pad ", pad));
  }
  // floor-division output size, the usual deep-learning convention
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;

  TensorT<T> out({N, Cout, OH, OW});
  {
    const T* px = xv.ptr();
    const T* pw = wv.ptr();
    const T* pb = bv.ptr();
    T* po = out.ptr();
    parallel_for(0, static_cast<std::int64_t>(N) * Cout, [&](std::int64_t idx) {
      const int n = static_cast<int>(idx / Cout);
      const int co = static_cast<int>(idx % Cout);
      T* oplane = po + (static_cast<std::int64_t>(n) * Cout + co) * OH * OW;
      std::fill_n(oplane, static_cast<std::int64_t>(OH) * OW, pb[co]);
      for (int ci = 0; ci < Cin; ++ci) {
        const T* iplane = px + (static_cast<std::int64_t>(n) * Cin + ci) * H * W;
        const T* wk = pw + (static_cast<std::int64_t>(co) * Cin + ci) * KH * KW;
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            const T wgt = wk[kh * KW + kw];
            if (wgt == T(0)) continue;
            int lo, hi;
            detail::conv_col_range(kw, pad, stride, W, OW, &lo, &hi);
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * stride + kh - pad;
              if (ih < 0 || ih >= H) continue;
              const T* irow = iplane + static_cast<std::int64_t>(ih) * W + (kw - pad);
              T* orow = oplane + static_cast<std::int64_t>(oh) * OW;
              if (stride == 1) {
                for (int ow = lo; ow < hi; ++ow) orow[ow] += wgt * irow[ow];
              } else {
                for (int ow = lo; ow < hi; ++ow) orow[ow] += wgt * irow[ow * stride];
              }
            }
          }
        }
      }
    });
  }

  bool rg = tp.requires_grad(x) || tp.requires_grad(w) || tp.requires_grad(b);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [x, w, b, N, Cin, H, W, Cout, KH, KW, OH, OW, stride, pad,
       out_id = tp.size()](TapeT<T>& t) {
        const T* g = t.grad(VarT<T>{out_id}).ptr();
        const T* px = t.val(x).ptr();
        const T* pw = t.val(w).ptr();

        if (t.requires_grad(b)) {
          T* gb = t.grad(b).ptr();
          for (int co = 0; co < Cout; ++co) {
            T acc = T(0);
            for (int n = 0; n < N; ++n) {
              const T* gplane = g + (static_cast<std::int64_t>(n) * Cout + co) * OH * OW;
              for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) acc += gplane[i];
            }
            gb[co] += acc;
          }
        }

        if (t.requires_grad(w)) {
          T* gw = t.grad(w).ptr();
          parallel_for(0, Cout, [&](std::int64_t co) {
            for (int ci = 0; ci < Cin; ++ci) {
              T* gwk = gw + (co * Cin + ci) * KH * KW;
              for (int kh = 0; kh < KH; ++kh) {
                for (int kw = 0; kw < KW; ++kw) {
                  int lo, hi;
                  detail::conv_col_range(kw, pad, stride, W, OW, &lo, &hi);
                  T acc = T(0);
                  for (int n = 0; n < N; ++n) {
                    const T* gplane = g + (static_cast<std::int64_t>(n) * Cout + co) * OH * OW;
                    const T* iplane = px + (static_cast<std::int64_t>(n) * Cin + ci) * H * W;
                    for (int oh = 0; oh < OH; ++oh) {
                      const int ih = oh * stride + kh - pad;
                      if (ih < 0 || ih >= H) continue;
                      const T* irow = iplane + static_cast<std::int64_t>(ih) * W + (kw - pad);
                      const T* grow = gplane + static_cast<std::int64_t>(oh) * OW;
                      if (stride == 1) {
                        for (int ow = lo; ow < hi; ++ow) acc += grow[ow] * irow[ow];
                      } else {
                        for (int ow = lo; ow < hi; ++ow) acc += grow[ow] * irow[ow * stride];
                      }
                    }
                  }
                  gwk[kh * KW + kw] += acc;
                }
              }
            }
          });
        }

        if (t.requires_grad(x)) {
          T* gx = t.grad(x).ptr();
          parallel_for(0, static_cast<std::int64_t>(N) * Cin, [&](std::int64_t idx) {
            const int n = static_cast<int>(idx / Cin);
            const int ci = static_cast<int>(idx % Cin);
            T* gplane_in = gx + (static_cast<std::int64_t>(n) * Cin + ci) * H * W;
            for (int co = 0; co < Cout; ++co) {
              const T* gplane = g + (static_cast<std::int64_t>(n) * Cout + co) * OH * OW;
              const T* wk = pw + (static_cast<std::int64_t>(co) * Cin + ci) * KH * KW;
              for (int kh = 0; kh < KH; ++kh) {
                for (int kw = 0; kw < KW; ++kw) {
                  const T wgt = wk[kh * KW + kw];
                  if (wgt == T(0)) continue;
                  int lo, hi;
                  detail::conv_col_range(kw, pad, stride, W, OW, &lo, &hi);
                  for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride + kh - pad;
                    if (ih < 0 || ih >= H) continue;
                    T* irow = gplane_in + static_cast<std::int64_t>(ih) * W + (kw - pad);
                    const T* grow = gplane + static_cast<std::int64_t>(oh) * OW;
                    if (stride == 1) {
                      for (int ow = lo; ow < hi; ++ow) irow[ow] += wgt * grow[ow];
                    } else {
                      for (int ow = lo; ow < hi; ++ow) irow[ow * stride] += wgt * grow[ow];
                    }
                  }
                }
              }
            }
          });
        }
      }));
}

// ---------------------------------------------------------------------------
// bilinear upsample (align_corners = false)
// ---------------------------------------------------------------------------

namespace detail {

struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<float> t;
};

inline LerpAxis lerp_axis(int in_size, int factor) {
  LerpAxis ax;
  const int out_size = in_size * factor;
  ax.i0.resize(out_size);
  ax.i1.resize(out_size);
  ax.t.resize(out_size);
  for (int o = 0; o < out_size; ++o) {
    const double src = (o + 0.5) / factor - 0.5;
    double f = std::floor(src);
    int i0 = static_cast<int>(f);
    double t = src - f;
    int i1 = i0 + 1;
    if (i0 < 0) i0 = 0;
    if (i1 < 0) i1 = 0;
    if (i0 > in_size - 1) i0 = in_size - 1;
    if (i1 > in_size - 1) i1 = in_size - 1;
    ax.i0[o] = i0;
    ax.i1[o] = i1;
    ax.t[o] = static_cast<float>(t);
  }
  return ax;
}

}  // namespace detail

template <class T>
VarT<T> bilinear_upsample(TapeT<T>& tp, VarT<T> x, int factor) {
  if (factor != 2 && factor != 4 && factor != 8) {
    throw ContractError(cat("bilinear_upsample: factor must be 2, 4 or 8, got ", factor));
  }
  const TensorT<T>& xv = tp.val(x);
  if (xv.ndim() != 4) {
    throw ContractError(cat("bilinear_upsample: input must be 4-d, got ", shape_str(xv.shape)));
  }
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int OH = H * factor, OW = W * factor;
  const auto ay = detail::lerp_axis(H, factor);
  const auto ax = detail::lerp_axis(W, factor);

  TensorT<T> out({N, C, OH, OW});
  {
    const T* px = xv.ptr();
    T* po = out.ptr();
    parallel_for(0, static_cast<std::int64_t>(N) * C, [&](std::int64_t plane) {
      const T* ip = px + plane * H * W;
      T* op = po + plane * static_cast<std::int64_t>(OH) * OW;
      for (int oy = 0; oy < OH; ++oy) {
        const T* r0 = ip + static_cast<std::int64_t>(ay.i0[oy]) * W;
        const T* r1 = ip + static_cast<std::int64_t>(ay.i1[oy]) * W;
        const T ty = static_cast<T>(ay.t[oy]);
        T* orow = op + static_cast<std::int64_t>(oy) * OW;
        for (int ox = 0; ox < OW; ++ox) {
          const T tx = static_cast<T>(ax.t[ox]);
          const T top = r0[ax.i0[ox]] * (T(1) - tx) + r0[ax.i1[ox]] * tx;
          const T bot = r1[ax.i0[ox]] * (T(1) - tx) + r1[ax.i1[ox]] * tx;
          orow[ox] = top * (T(1) - ty) + bot * ty;
        }
      }
    });
  }

  bool rg = tp.requires_grad(x);
  return tp.record(std::move(out), rg, !rg ? nullptr : std::function<void(TapeT<T>&)>(
      [x, N, C, H, W, OH, OW, ay, ax, out_id = tp.size()](TapeT<T>& t) {
        const T* g = t.grad(VarT<T>{out_id}).ptr();
        T* gx = t.grad(x).ptr();
        parallel_for(0, static_cast<std::int64_t>(N) * C, [&](std::int64_t plane) {
          const T* gp = g + plane * static_cast<std::int64_t>(OH) * OW;
          T* ip = gx + plane * H * W;
          for (int oy = 0; oy < OH; ++oy) {
            const T ty = static_cast<T>(ay.t[oy]);
            T* r0 = ip + static_cast<std::int64_t>(ay.i0[oy]) * W;
            T* r1 = ip + static_cast<std::int64_t>(ay.i1[oy]) * W;
            const T* grow = gp + static_cast<std::int64_t>(oy) * OW;
            for (int ox = 0; ox < OW; ++ox) {
              const T tx = static_cast<T>(ax.t[ox]);
              const T gv = grow[ox];
              r0[ax.i0[ox]] += gv * (T(1) - ty) * (T(1) - tx);
              r0[ax.i1[ox]] += gv * (T(1) - ty) * tx;
              r1[ax.i0[ox]] += gv * ty * (T(1) - tx);
              r1[ax.i1[ox]] += gv * ty * tx;
            }
          }
        });
      }));
}

}  // namespace mcseg

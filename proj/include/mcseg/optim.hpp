#pragma once

#include <vector>

#include "mcseg/common.hpp"
#include "mcseg/tensor.hpp"

namespace mcseg {

// Classic momentum SGD: v <- momentum*v + grad; p <- p - lr*v.
// Velocities are keyed positionally; callers must pass the same parameter set
// in the same order on every step.
template <class T>
class SgdMomentumT {
 public:
  SgdMomentumT(T lr, T momentum) : lr_(lr), momentum_(momentum) {
    if (!(lr > T(0))) throw ContractError("sgd: lr must be > 0");
    if (!(momentum >= T(0) && momentum < T(1))) {
      throw ContractError("sgd: momentum must be in [0, 1)");
    }
  }

  T lr() const { return lr_; }
  T momentum() const { return momentum_; }

  void step(const std::vector<TensorT<T>*>& params,
            const std::vector<const TensorT<T>*>& grads) {
    if (params.size() != grads.size()) {
      throw ContractError("sgd: params/grads arity mismatch");
    }
    if (velocity_.empty()) {
      velocity_.reserve(params.size());
      for (const auto* p : params) velocity_.emplace_back(p->shape);
    }
    if (velocity_.size() != params.size()) {
      throw ContractError("sgd: parameter set changed between steps");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      TensorT<T>& p = *params[k];
      const TensorT<T>& g = *grads[k];
      TensorT<T>& v = velocity_[k];
      if (!p.same_shape(g) || !p.same_shape(v)) {
        throw ContractError(cat("sgd: shape mismatch at param ", k, ": param ",
                                shape_str(p.shape), " grad ", shape_str(g.shape)));
      }
      const std::int64_t n = p.numel();
      for (std::int64_t i = 0; i < n; ++i) {
        v.data[i] = momentum_ * v.data[i] + g.data[i];
        p.data[i] -= lr_ * v.data[i];
      }
    }
  }

  const std::vector<TensorT<T>>& velocities() const { return velocity_; }

 private:
  T lr_;
  T momentum_;
  std::vector<TensorT<T>> velocity_;
};

using SgdMomentum = SgdMomentumT<float>;

}  // namespace mcseg

#pragma once

#include <vector>

#include "wbx/errors.hpp"
#include "wbx/tensor.hpp"

namespace wbx {

// SGD with momentum; weight decay is folded into the gradient before the
// momentum update:  v <- m*v + (g + wd*theta);  theta <- theta - lr*v.
template <typename T>
struct SgdState {
  T learning_rate = T(1e-3);
  T momentum = T(0.9);
  T weight_decay = T(1e-3);
  std::vector<Tensor4<T>> velocity;  // one per param, same dims, zero-initialized

  SgdState() = default;
  SgdState(T lr, T mom, T wd) : learning_rate(lr), momentum(mom), weight_decay(wd) {}
};

template <typename T>
void sgd_step(const std::vector<Param<T>*>& params, SgdState<T>& state) {
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const Param<T>* p : params)
      state.velocity.emplace_back(p->value.n, p->value.c, p->value.h, p->value.w);
  }
  if (state.velocity.size() != params.size())
    throw dim_error("sgd_step: velocity count does not match params");

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param<T>& p = *params[pi];
    Tensor4<T>& v = state.velocity[pi];
    if (!v.same_dims(p.value))
      throw dim_error("sgd_step: velocity dims mismatch for " + p.name);
    double probe = 0.0;
    const size_t len = p.value.data.size();
#pragma omp simd reduction(+ : probe)
    for (size_t i = 0; i < len; ++i) probe += static_cast<double>(p.grad.data[i]);
    if (!std::isfinite(probe))
      throw numeric_error("sgd_step: non-finite gradient in parameter " + p.name);

    const T lr = state.learning_rate, m = state.momentum, wd = state.weight_decay;
#pragma omp simd
    for (size_t i = 0; i < len; ++i) {
      const T g = p.grad.data[i] + wd * p.value.data[i];
      v.data[i] = m * v.data[i] + g;
      p.value.data[i] -= lr * v.data[i];
    }
  }
}

template <typename T>
void zero_grads(const std::vector<Param<T>*>& params) {
  for (Param<T>* p : params) p->zero_grad();
}

}  // namespace wbx

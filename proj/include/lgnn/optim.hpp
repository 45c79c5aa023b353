#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lgnn/tensor.hpp"

namespace lgnn {

// One optimizable entry: the parameter and its accumulated gradient.
template <typename T>
struct ParamSlot {
  std::string name;
  TensorT<T>* value = nullptr;
  const TensorT<T>* grad = nullptr;
};

template <typename T>
struct SgdStateT {
  T lr = T(0.1);
  T momentum = T(0);
  T weight_decay = T(0);
  std::map<std::string, TensorT<T>> velocity;  // created as zeros on first step
};

using SgdState = SgdStateT<float>;

// g' = grad + wd * param; v = momentum * v + g'; param -= lr * v.
// Per-parameter updates are independent, so iteration order never matters.
template <typename T>
void sgd_step(SgdStateT<T>& st, const std::vector<ParamSlot<T>>& slots) {
  for (const auto& s : slots) {
    if (!s.value || !s.grad) throw RegistryError("sgd_step: null slot for " + s.name);
    if (!s.value->same_shape(*s.grad))
      throw RegistryError("sgd_step: grad shape mismatch for " + s.name);
    auto [it, inserted] = st.velocity.try_emplace(s.name, s.value->shape, T(0));
    if (!inserted && !it->second.same_shape(*s.value))
      throw RegistryError("sgd_step: velocity shape mismatch for " + s.name);
    TensorT<T>& v = it->second;
    TensorT<T>& p = *s.value;
    const TensorT<T>& g = *s.grad;
    for (int64_t i = 0; i < p.size(); ++i) {
      const T eff = g[i] + st.weight_decay * p[i];
      v[i] = st.momentum * v[i] + eff;
      p[i] -= st.lr * v[i];
    }
  }
}

struct LrSchedule {
  double initial = 0.1;
  std::vector<int> milestones;  // strictly increasing epochs
  double factor = 0.2;          // in (0,1)
};

inline LrSchedule make_lr_schedule(double initial, std::vector<int> milestones, double factor) {
  if (initial <= 0.0) throw ConfigError("lr schedule: initial lr must be positive");
  if (factor <= 0.0 || factor >= 1.0) throw ConfigError("lr schedule: factor must be in (0,1)");
  for (size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1])
      throw ConfigError("lr schedule: milestones must be strictly increasing");
  return LrSchedule{initial, std::move(milestones), factor};
}

inline double lr_at_epoch(const LrSchedule& sched, int epoch) {
  if (epoch < 0) throw ConfigError("lr_at_epoch: epoch must be >= 0");
  int hits = 0;
  for (int ms : sched.milestones)
    if (ms <= epoch) ++hits;
  return sched.initial * std::pow(sched.factor, hits);
}

}  // namespace lgnn

#include "edgecap/train/adam.hpp"

#include <cmath>

#include "edgecap/error.hpp"

namespace edgecap::train {

template <Real T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& s, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adam: parameter and gradient sizes differ");
  if (s.m.empty()) {
    s.m.assign(params.size(), T(0));
    s.v.assign(params.size(), T(0));
  }
  if (s.m.size() != params.size()) throw DimensionError("adam: state size does not match parameters");
  ++s.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
    s.m[i] = static_cast<T>(m);
    s.v[i] = static_cast<T>(v);
    params[i] = static_cast<T>(params[i] - cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps));
  }
}

template <Real T>
void Adam<T>::step(WeightStore<T>& store) {
  for (auto& [name, t] : store.entries()) {
    if (!t.requires_grad()) continue;
    adam_step<T>(t.data(), t.grad(), state_[name], cfg_);
  }
}

template void adam_step(std::span<float>, std::span<const float>, AdamState<float>&, const AdamConfig&);
template void adam_step(std::span<double>, std::span<const double>, AdamState<double>&, const AdamConfig&);
template class Adam<float>;
template class Adam<double>;

}  // namespace edgecap::train

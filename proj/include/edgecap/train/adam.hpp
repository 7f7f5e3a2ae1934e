#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "edgecap/tensor/weights.hpp"

namespace edgecap::train {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <Real T>
struct AdamState {
  std::vector<T> m, v;
  std::size_t t = 0;
};

// Bias-corrected Adam update in place. State vectors are sized on first use.
template <Real T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamConfig& cfg);

// Adam over every requires-grad entry of a store, keyed by name.
template <Real T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  void step(WeightStore<T>& store);
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::map<std::string, AdamState<T>> state_;
};

}  // namespace edgecap::train

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "edgecap/tensor/tape.hpp"
#include "edgecap/tensor/weights.hpp"

namespace edgecap {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_entry;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  // Denominator floor: error = |a - n| / max(|a|, |n|, floor). Keeps
  // near-zero gradients from turning roundoff into huge ratios.
  double floor = 1e-3;
};

double relative_error(double analytic, double numeric, double floor);

// Fourth-order central differences with step eps against reverse-mode
// gradients, for every element of x. f must return a scalar.
GradCheckResult grad_check(const std::function<Var<double>(Var<double>)>& f, const Tensor<double>& x,
                           const GradCheckOptions& opt = {});

struct ParamPick {
  std::string name;
  std::size_t index;
};

// Same check for selected elements of a parameter store; `loss` builds the
// scalar loss on the given tape from the (mutable) store.
GradCheckResult grad_check_params(const std::function<Var<double>(Tape<double>&, WeightStore<double>&)>& loss,
                                  WeightStore<double>& store, const std::vector<ParamPick>& picks,
                                  const GradCheckOptions& opt = {});

}  // namespace edgecap

#include "edgecap/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace edgecap {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

// Fourth-order central difference: (f(-2h) - 8 f(-h) + 8 f(h) - f(2h)) / 12h.
template <typename F>
double stencil(double h, F&& f) {
  const double m2 = f(-2 * h), m1 = f(-h), p1 = f(h), p2 = f(2 * h);
  return (m2 - 8 * m1 + 8 * p1 - p2) / (12 * h);
}

void note(GradCheckResult& r, double err, const std::string& entry, std::size_t index, double a, double n) {
  ++r.checked;
  if (err > r.max_rel_error || r.checked == 1) {
    r.max_rel_error = std::max(r.max_rel_error, err);
    r.worst_entry = entry;
    r.worst_index = index;
    r.worst_analytic = a;
    r.worst_numeric = n;
  }
}

double scalar_of(const Var<double>& v) {
  if (v.value().size() != 1) throw ContractError("grad_check: function must return a scalar");
  return v.value()[0];
}

}  // namespace

GradCheckResult grad_check(const std::function<Var<double>(Var<double>)>& f, const Tensor<double>& x,
                           const GradCheckOptions& opt) {
  std::vector<double> analytic(x.size(), 0.0);
  {
    Tape<double> tape;
    Var<double> in = tape.variable(x);
    Var<double> out = f(in);
    scalar_of(out);
    tape.backward(out);
    auto g = tape.grad(in);
    if (!g.empty()) std::copy(g.begin(), g.end(), analytic.begin());
  }
  auto eval = [&](const Tensor<double>& at) {
    Tape<double> tape(false);
    return scalar_of(f(tape.constant(at)));
  };
  GradCheckResult r;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    const double numeric = stencil(opt.eps, [&](double dx) {
      probe[i] = orig + dx;
      return eval(probe);
    });
    probe[i] = orig;
    note(r, relative_error(analytic[i], numeric, opt.floor), "x", i, analytic[i], numeric);
  }
  return r;
}

GradCheckResult grad_check_params(const std::function<Var<double>(Tape<double>&, WeightStore<double>&)>& loss,
                                  WeightStore<double>& store, const std::vector<ParamPick>& picks,
                                  const GradCheckOptions& opt) {
  store.set_requires_grad(true);
  store.zero_grad();
  {
    Tape<double> tape;
    Var<double> out = loss(tape, store);
    scalar_of(out);
    tape.backward(out);
  }
  GradCheckResult r;
  for (const ParamPick& pick : picks) {
    Tensor<double>& t = store.at(pick.name);
    if (pick.index >= t.size()) throw LookupError("grad_check_params: index out of range for " + pick.name);
    const double analytic = t.grad()[pick.index];
    const double orig = t[pick.index];
    auto eval = [&] {
      Tape<double> tape(false);
      return scalar_of(loss(tape, store));
    };
    const double numeric = stencil(opt.eps, [&](double dx) {
      t[pick.index] = orig + dx;
      return eval();
    });
    t[pick.index] = orig;
    note(r, relative_error(analytic, numeric, opt.floor), pick.name, pick.index, analytic, numeric);
  }
  return r;
}

}  // namespace edgecap

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "edgecap/tensor/grad_check.hpp"
#include "test_util.hpp"

namespace edgecap::testing {

using GradFn = std::function<Var<double>(Var<double>)>;

// One differentiable op, wrapped as a scalar function of a single input.
// `make` draws any fixed operands from the generator.
struct OpGradCase {
  const char* name;
  Shape shape;
  std::function<GradFn(Rng&)> make;
};

inline std::vector<OpGradCase> op_grad_cases() {
  using Fn = GradFn;
  static const std::vector<TokenId> targets{1, 0, 3};
  return {
      {"matmul-lhs", {3, 4}, [](Rng& r) -> Fn {
         auto b = random_tensor<double>(r, Shape{4, 2});
         return [b](Var<double> x) { return weighted_sum(ops::matmul(x, x.tape().constant(b))); };
       }},
      {"matmul-rhs", {4, 2}, [](Rng& r) -> Fn {
         auto a = random_tensor<double>(r, Shape{3, 4});
         return [a](Var<double> x) { return weighted_sum(ops::matmul(x.tape().constant(a), x)); };
       }},
      {"linear-weight", {3, 4}, [](Rng& r) -> Fn {
         auto in = random_tensor<double>(r, Shape{5, 4});
         auto b = random_tensor<double>(r, Shape{3});
         return [in, b](Var<double> w) {
           auto& t = w.tape();
           return weighted_sum(ops::linear(t.constant(in), w, t.constant(b)));
         };
       }},
      {"linear-bias", {3}, [](Rng& r) -> Fn {
         auto in = random_tensor<double>(r, Shape{5, 4});
         auto w = random_tensor<double>(r, Shape{3, 4});
         return [in, w](Var<double> b) {
           auto& t = b.tape();
           return weighted_sum(ops::linear(t.constant(in), t.constant(w), b));
         };
       }},
      {"mul", {2, 3}, [](Rng& r) -> Fn {
         auto o = random_tensor<double>(r, Shape{2, 3});
         return [o](Var<double> x) { return weighted_sum(ops::mul(x, ops::add(x, x.tape().constant(o)))); };
       }},
      {"sub-scale", {2, 3}, [](Rng& r) -> Fn {
         auto o = random_tensor<double>(r, Shape{2, 3});
         return [o](Var<double> x) { return weighted_sum(ops::scale(ops::sub(x.tape().constant(o), x), 1.7)); };
       }},
      {"scale_columns", {4, 3}, [](Rng& r) -> Fn {
         auto g = random_tensor<double>(r, Shape{3});
         return [g](Var<double> x) { return weighted_sum(ops::scale_columns(x, x.tape().constant(g))); };
       }},
      {"scale_columns-vector", {3}, [](Rng& r) -> Fn {
         auto in = random_tensor<double>(r, Shape{4, 3});
         return [in](Var<double> g) { return weighted_sum(ops::scale_columns(g.tape().constant(in), g)); };
       }},
      {"conv2d-input", {4, 5, 5}, [](Rng& r) -> Fn {
         auto w = random_tensor<double>(r, Shape{4, 2, 3, 3});
         auto b = random_tensor<double>(r, Shape{4});
         return [w, b](Var<double> x) {
           auto& t = x.tape();
           return weighted_sum(ops::conv2d(x, t.constant(w), t.constant(b), Conv2dParams{1, 1, 2}));
         };
       }},
      {"conv2d-depthwise-input", {3, 9, 8}, [](Rng& r) -> Fn {
         auto w = random_tensor<double>(r, Shape{3, 1, 7, 7});
         return [w](Var<double> x) {
           return weighted_sum(ops::conv2d(x, x.tape().constant(w), {}, Conv2dParams{2, 3, 3}));
         };
       }},
      {"conv2d-depthwise-weight", {3, 1, 7, 7}, [](Rng& r) -> Fn {
         auto in = random_tensor<double>(r, Shape{3, 9, 8});
         return [in](Var<double> w) {
           return weighted_sum(ops::conv2d(w.tape().constant(in), w, {}, Conv2dParams{2, 3, 3}));
         };
       }},
      {"conv2d-weight", {4, 1, 3, 3}, [](Rng& r) -> Fn {
         auto in = random_tensor<double>(r, Shape{4, 6, 6});
         return [in](Var<double> w) {
           return weighted_sum(ops::conv2d(w.tape().constant(in), w, {}, Conv2dParams{2, 1, 4}));
         };
       }},
      {"conv2d-bias", {3}, [](Rng& r) -> Fn {
         auto in = random_tensor<double>(r, Shape{2, 4, 4});
         auto w = random_tensor<double>(r, Shape{3, 2, 2, 2});
         return [in, w](Var<double> b) {
           auto& t = b.tape();
           return weighted_sum(ops::conv2d(t.constant(in), t.constant(w), b, Conv2dParams{2, 0, 1}));
         };
       }},
      {"layer_norm-input", {3, 5}, [](Rng& r) -> Fn {
         auto g = random_tensor<double>(r, Shape{5});
         auto b = random_tensor<double>(r, Shape{5});
         return [g, b](Var<double> x) {
           auto& t = x.tape();
           return weighted_sum(ops::layer_norm(x, t.constant(g), t.constant(b), 1e-5));
         };
       }},
      {"layer_norm-affine", {5}, [](Rng& r) -> Fn {
         auto in = random_tensor<double>(r, Shape{3, 5});
         return [in](Var<double> g) {
           auto& t = g.tape();
           return weighted_sum(ops::layer_norm(t.constant(in), g, g, 1e-5));
         };
       }},
      {"softmax", {3, 4}, [](Rng&) -> Fn { return [](Var<double> x) { return weighted_sum(ops::softmax(x)); }; }},
      {"log_softmax", {3, 4}, [](Rng&) -> Fn { return [](Var<double> x) { return weighted_sum(ops::log_softmax(x)); }; }},
      {"gelu", {10}, [](Rng&) -> Fn { return [](Var<double> x) { return weighted_sum(ops::gelu(x)); }; }},
      {"channels_last", {3, 2, 4}, [](Rng&) -> Fn {
         return [](Var<double> x) { return weighted_sum(ops::channels_last(x)); };
       }},
      {"channels_first", {6, 2}, [](Rng&) -> Fn {
         return [](Var<double> x) { return weighted_sum(ops::channels_first(x, 2, 3)); };
       }},
      {"adaptive_pool", {2, 4, 5}, [](Rng&) -> Fn {
         return [](Var<double> x) { return weighted_sum(ops::adaptive_avg_pool2d(x, 7, 3)); };
       }},
      {"attention-q", {3, 8}, [](Rng& r) -> Fn {
         auto k = random_tensor<double>(r, Shape{5, 8});
         auto v = random_tensor<double>(r, Shape{5, 8});
         return [k, v](Var<double> q) {
           auto& t = q.tape();
           return weighted_sum(ops::attention(q, t.constant(k), t.constant(v), AttentionOptions{2, false, nullptr}));
         };
       }},
      {"attention-kv", {4, 6}, [](Rng& r) -> Fn {
         auto q = random_tensor<double>(r, Shape{4, 6});
         return [q](Var<double> kv) {
           return weighted_sum(ops::attention(kv.tape().constant(q), kv, kv, AttentionOptions{3, true, nullptr}));
         };
       }},
      {"attention-self", {4, 6}, [](Rng&) -> Fn {
         return [](Var<double> x) { return weighted_sum(ops::attention(x, x, x, AttentionOptions{2, true, nullptr})); };
       }},
      {"embedding", {5, 3}, [](Rng&) -> Fn {
         return [](Var<double> t) {
           const std::vector<TokenId> ids{4, 0, 4, 2};
           return weighted_sum(ops::embedding(t, std::span<const TokenId>(ids)));
         };
       }},
      {"take_rows", {5, 3}, [](Rng&) -> Fn { return [](Var<double> x) { return weighted_sum(ops::take_rows(x, 2)); }; }},
      {"mean", {4}, [](Rng&) -> Fn { return [](Var<double> x) { return ops::mean(ops::mul(x, x)); }; }},
      {"cross_entropy", {3, 5}, [](Rng&) -> Fn {
         return [](Var<double> x) { return ops::cross_entropy(x, std::span<const TokenId>(targets), 0); };
       }},
      {"distillation_loss", {3, 5}, [](Rng& r) -> Fn {
         auto teacher = random_tensor<double>(r, Shape{3, 5}, -2.0, 2.0);
         return [teacher](Var<double> x) {
           return ops::distillation_loss(x, teacher, std::span<const TokenId>(targets), 0, 2.0, 0.3);
         };
       }},
  };
}

// Worst relative error per case over `trials` random inputs in [-1, 1].
inline std::vector<std::pair<const char*, double>> run_op_grad_cases(std::uint64_t seed, int trials) {
  std::vector<std::pair<const char*, double>> out;
  Rng rng(seed);
  for (const OpGradCase& c : op_grad_cases()) {
    double worst = 0;
    for (int trial = 0; trial < trials; ++trial) {
      const GradFn f = c.make(rng);
      auto x = random_tensor<double>(rng, c.shape);
      worst = std::max(worst, grad_check(f, x).max_rel_error);
    }
    out.emplace_back(c.name, worst);
  }
  return out;
}

}  // namespace edgecap::testing

#pragma once

// Differentiable operations over Tape values, plus the tape-free forward
// routines they are built on (namespace fwd), which inference code reuses.

#include <cstdint>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "edgecap/tensor/tape.hpp"

namespace edgecap {

using TokenId = std::int32_t;

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

struct AttentionOptions {
  std::size_t heads = 1;
  bool causal = false;
  // Optional Lq x Lk keep-mask (nonzero = attend). Combined with `causal`.
  const std::vector<std::uint8_t>* mask = nullptr;
};

namespace fwd {

template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// y = x w^T + b for x [L x in], w [out x in].
template <Real T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias);
template <Real T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias, const Conv2dParams& p);
template <Real T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);
template <Real T>
Tensor<T> softmax(const Tensor<T>& x);
template <Real T>
Tensor<T> log_softmax(const Tensor<T>& x);
template <Real T>
Tensor<T> gelu(const Tensor<T>& x);
template <Real T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);
// Returns the attention output; when `weights` is given it receives the
// per-head probabilities laid out [heads x Lq x Lk].
template <Real T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionOptions& opt,
                    std::vector<T>* weights = nullptr);

// In-place numerically stable softmax of one row.
template <Real T>
void softmax_inplace(std::span<T> row);

}  // namespace fwd

namespace ops {

template <Real T>
Var<T> matmul(Var<T> a, Var<T> b);
template <Real T>
Var<T> linear(Var<T> x, Var<T> w, std::type_identity_t<std::optional<Var<T>>> bias);
template <Real T>
Var<T> add(Var<T> a, Var<T> b);
template <Real T>
Var<T> sub(Var<T> a, Var<T> b);
template <Real T>
Var<T> mul(Var<T> a, Var<T> b);
template <Real T>
Var<T> scale(Var<T> a, std::type_identity_t<T> s);
// x [L x d] times a per-column vector g [d].
template <Real T>
Var<T> scale_columns(Var<T> x, Var<T> g);
template <Real T>
Var<T> conv2d(Var<T> x, Var<T> w, std::type_identity_t<std::optional<Var<T>>> bias, const Conv2dParams& p);
template <Real T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, std::type_identity_t<T> eps);
template <Real T>
Var<T> softmax(Var<T> x);
template <Real T>
Var<T> log_softmax(Var<T> x);
template <Real T>
Var<T> gelu(Var<T> x);
// [C x H x W] -> [H*W x C] and back.
template <Real T>
Var<T> channels_last(Var<T> x);
template <Real T>
Var<T> channels_first(Var<T> x, std::size_t h, std::size_t w);
template <Real T>
Var<T> adaptive_avg_pool2d(Var<T> x, std::size_t out_h, std::size_t out_w);
template <Real T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionOptions& opt);
// Row gather: out[i] = table[ids[i]].
template <Real T>
Var<T> embedding(Var<T> table, std::span<const TokenId> ids);
// First `rows` rows of x.
template <Real T>
Var<T> take_rows(Var<T> x, std::size_t rows);
template <Real T>
Var<T> sum(Var<T> x);
template <Real T>
Var<T> mean(Var<T> x);

// Mean negative log-likelihood of `targets` under softmax(logits), skipping
// positions whose target equals pad_id.
template <Real T>
Var<T> cross_entropy(Var<T> logits, std::span<const TokenId> targets, TokenId pad_id);

struct DistillTerms {
  double cross_entropy = 0.0;
  double kl = 0.0;
};

// alpha * CE(student, targets) + (1 - alpha) * T^2 * KL(softmax(teacher/T) || softmax(student/T)),
// both averaged over non-pad positions. The teacher is a frozen constant.
template <Real T>
Var<T> distillation_loss(Var<T> student_logits, const Tensor<T>& teacher_logits, std::span<const TokenId> targets,
                         TokenId pad_id, std::type_identity_t<T> temperature, std::type_identity_t<T> alpha, DistillTerms* terms = nullptr);

}  // namespace ops

}  // namespace edgecap

#pragma once

// Layers shared by teacher and student models. Layers are plain functions
// over named entries of a WeightStore; a layer's parameters live under
// "<prefix>.weight", "<prefix>.bias" and so on.

#include <string>
#include <vector>

#include "edgecap/tensor/ops.hpp"
#include "edgecap/tensor/rng.hpp"
#include "edgecap/tensor/weights.hpp"

namespace edgecap::nn {

struct AttentionConfig {
  std::size_t num_heads = 1;
  std::size_t model_dim = 1;
  bool causal = false;

  // Throws ConfigError unless num_heads divides model_dim.
  void validate() const;
};

inline constexpr std::size_t kGridSide = 7;
inline constexpr std::size_t kTokenCount = kGridSide * kGridSide;
inline constexpr double kNormEps = 1e-5;

// Binds a tape to a weight store. A mutable store yields gradient-tracking
// leaves (for parameters with requires_grad set); a const store never does.
template <Real T>
class Params {
 public:
  Params(Tape<T>& tape, WeightStore<T>& store) : tape_(tape), mut_(&store), const_(&store) {}
  Params(Tape<T>& tape, const WeightStore<T>& store) : tape_(tape), const_(&store) {}

  Var<T> operator()(const std::string& name) const;
  bool has(const std::string& name) const { return const_->contains(name); }
  Tape<T>& tape() const { return tape_; }

 private:
  Tape<T>& tape_;
  WeightStore<T>* mut_ = nullptr;
  const WeightStore<T>* const_;
};

template <Real T>
Var<T> linear(const Params<T>& p, const std::string& prefix, Var<T> x);
template <Real T>
Var<T> layer_norm(const Params<T>& p, const std::string& prefix, Var<T> x);
// Channel-wise layer norm of a [C x H x W] map (normalizes over C at every
// spatial position).
template <Real T>
Var<T> channel_norm(const Params<T>& p, const std::string& prefix, Var<T> x);

// q/k/v/o projections under "<prefix>.q", ".k", ".v", ".o".
template <Real T>
Var<T> multi_head_attention(const Params<T>& p, const std::string& prefix, Var<T> q_in, Var<T> kv_in,
                            const AttentionConfig& cfg, const std::vector<std::uint8_t>* mask = nullptr);

// fc1 (d -> 4d), GELU, fc2 (4d -> d).
template <Real T>
Var<T> feed_forward(const Params<T>& p, const std::string& prefix, Var<T> x);

// Pre-norm self-attention layer: x + MHA(LN(x)), then x + FFN(LN(x)).
template <Real T>
Var<T> encoder_layer(const Params<T>& p, const std::string& prefix, Var<T> x, const AttentionConfig& cfg);

// Pre-norm decoder layer: causal self-attention, cross-attention over
// `memory`, feed-forward; each wrapped in a residual.
template <Real T>
Var<T> decoder_layer(const Params<T>& p, const std::string& prefix, Var<T> x, Var<T> memory,
                     const AttentionConfig& self_cfg, const AttentionConfig& cross_cfg);

template <Real T>
struct ConvNextBlockParams {
  Var<T> dw_weight, dw_bias;      // [d x 1 x 7 x 7], [d]
  Var<T> norm_gamma, norm_beta;   // [d]
  Var<T> expand_w, expand_b;      // [4d x d], [4d]
  Var<T> project_w, project_b;    // [d x 4d], [d]
  Var<T> layer_scale;             // [d]
};

// x + layer_scale * project(gelu(expand(norm(depthwise7x7(x))))), x [d x h x w].
template <Real T>
Var<T> convnext_block(Var<T> x, const ConvNextBlockParams<T>& v);

// Row-major spatial flatten of a [d x 7 x 7] grid into 49 tokens of width d.
template <Real T>
Var<T> grid_to_tokens(Var<T> x);
template <Real T>
Var<T> tokens_to_grid(Var<T> tokens);

struct EmbeddingTable {
  std::string tokens;     // [vocab x d]
  std::string positions;  // [max_len x d]
};

// Token row plus positional row for positions 0..L-1.
template <Real T>
Var<T> embed(const Params<T>& p, const EmbeddingTable& table, std::span<const TokenId> ids);

// Initializers (weights ~ N(0, std), biases 0, norms gamma 1 beta 0).
template <Real T>
void init_linear(WeightStore<T>& s, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                 double std = 0.02);
template <Real T>
void init_layer_norm(WeightStore<T>& s, const std::string& prefix, std::size_t d);
template <Real T>
void init_attention(WeightStore<T>& s, const std::string& prefix, std::size_t d, Rng& rng);
template <Real T>
void init_feed_forward(WeightStore<T>& s, const std::string& prefix, std::size_t d, Rng& rng);
template <Real T>
void init_encoder_layer(WeightStore<T>& s, const std::string& prefix, std::size_t d, Rng& rng);
template <Real T>
void init_decoder_layer(WeightStore<T>& s, const std::string& prefix, std::size_t d, Rng& rng);
template <Real T>
Tensor<T> normal_tensor(Shape shape, Rng& rng, double std);

}  // namespace edgecap::nn

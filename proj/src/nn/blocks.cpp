#include "edgecap/nn/blocks.hpp"

#include "edgecap/error.hpp"

namespace edgecap::nn {

void AttentionConfig::validate() const {
  if (num_heads == 0 || model_dim == 0) throw ConfigError("attention: heads and model_dim must be positive");
  if (model_dim % num_heads != 0) {
    throw ConfigError("attention: " + std::to_string(num_heads) + " heads do not divide model_dim " +
                      std::to_string(model_dim));
  }
}

template <Real T>
Var<T> Params<T>::operator()(const std::string& name) const {
  if (mut_) return tape_.param(mut_->at(name));
  return tape_.param(const_->at(name));
}

template <Real T>
Var<T> linear(const Params<T>& p, const std::string& prefix, Var<T> x) {
  std::optional<Var<T>> b;
  if (p.has(prefix + ".bias")) b = p(prefix + ".bias");
  return ops::linear(x, p(prefix + ".weight"), b);
}

template <Real T>
Var<T> layer_norm(const Params<T>& p, const std::string& prefix, Var<T> x) {
  return ops::layer_norm(x, p(prefix + ".weight"), p(prefix + ".bias"), T(kNormEps));
}

template <Real T>
Var<T> channel_norm(const Params<T>& p, const std::string& prefix, Var<T> x) {
  if (x.shape().size() != 3) throw DimensionError("channel_norm: expected [C x H x W], got " + shape_str(x.shape()));
  const std::size_t h = x.shape()[1], w = x.shape()[2];
  return ops::channels_first(layer_norm(p, prefix, ops::channels_last(x)), h, w);
}

template <Real T>
Var<T> multi_head_attention(const Params<T>& p, const std::string& prefix, Var<T> q_in, Var<T> kv_in,
                            const AttentionConfig& cfg, const std::vector<std::uint8_t>* mask) {
  cfg.validate();
  for (const Var<T>* v : {&q_in, &kv_in}) {
    if (v->shape().size() != 2 || v->shape()[1] != cfg.model_dim) {
      throw DimensionError("attention: expected [L x " + std::to_string(cfg.model_dim) + "], got " +
                           shape_str(v->shape()));
    }
  }
  if (mask && mask->size() != q_in.shape()[0] * kv_in.shape()[0]) {
    throw DimensionError("attention: mask must be Lq x Lk");
  }
  Var<T> q = linear(p, prefix + ".q", q_in);
  Var<T> k = linear(p, prefix + ".k", kv_in);
  Var<T> v = linear(p, prefix + ".v", kv_in);
  Var<T> a = ops::attention(q, k, v, AttentionOptions{cfg.num_heads, cfg.causal, mask});
  return linear(p, prefix + ".o", a);
}

template <Real T>
Var<T> feed_forward(const Params<T>& p, const std::string& prefix, Var<T> x) {
  return linear(p, prefix + ".fc2", ops::gelu(linear(p, prefix + ".fc1", x)));
}

template <Real T>
Var<T> encoder_layer(const Params<T>& p, const std::string& prefix, Var<T> x, const AttentionConfig& cfg) {
  Var<T> h = layer_norm(p, prefix + ".ln1", x);
  x = ops::add(x, multi_head_attention(p, prefix + ".attn", h, h, cfg));
  return ops::add(x, feed_forward(p, prefix + ".ffn", layer_norm(p, prefix + ".ln2", x)));
}

template <Real T>
Var<T> decoder_layer(const Params<T>& p, const std::string& prefix, Var<T> x, Var<T> memory,
                     const AttentionConfig& self_cfg, const AttentionConfig& cross_cfg) {
  Var<T> h = layer_norm(p, prefix + ".ln1", x);
  x = ops::add(x, multi_head_attention(p, prefix + ".self", h, h, self_cfg));
  x = ops::add(x, multi_head_attention(p, prefix + ".cross", layer_norm(p, prefix + ".ln2", x), memory, cross_cfg));
  return ops::add(x, feed_forward(p, prefix + ".ffn", layer_norm(p, prefix + ".ln3", x)));
}

template <Real T>
Var<T> convnext_block(Var<T> x, const ConvNextBlockParams<T>& v) {
  if (x.shape().size() != 3) throw DimensionError("convnext_block: expected [d x h x w], got " + shape_str(x.shape()));
  const std::size_t d = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (v.layer_scale.shape() != Shape{d}) throw DimensionError("convnext_block: layer_scale length must equal dim");
  Var<T> y = ops::conv2d(x, v.dw_weight, v.dw_bias, Conv2dParams{1, 3, d});
  y = ops::channels_last(y);
  y = ops::layer_norm(y, v.norm_gamma, v.norm_beta, T(kNormEps));
  y = ops::gelu(ops::linear(y, v.expand_w, v.expand_b));
  y = ops::linear(y, v.project_w, v.project_b);
  y = ops::scale_columns(y, v.layer_scale);
  return ops::add(x, ops::channels_first(y, h, w));
}

template <Real T>
Var<T> grid_to_tokens(Var<T> x) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != kGridSide || s[2] != kGridSide) {
    throw ContractError("grid_to_tokens: expected [d x 7 x 7], got " + shape_str(s));
  }
  return ops::channels_last(x);
}

template <Real T>
Var<T> tokens_to_grid(Var<T> tokens) {
  const Shape& s = tokens.shape();
  if (s.size() != 2 || s[0] != kTokenCount) throw ContractError("tokens_to_grid: expected [49 x d], got " + shape_str(s));
  return ops::channels_first(tokens, kGridSide, kGridSide);
}

template <Real T>
Var<T> embed(const Params<T>& p, const EmbeddingTable& table, std::span<const TokenId> ids) {
  Var<T> pos = p(table.positions);
  if (ids.size() > pos.shape()[0]) {
    throw LengthError("embed: sequence length " + std::to_string(ids.size()) + " exceeds positional table " +
                      std::to_string(pos.shape()[0]));
  }
  Var<T> tok = ops::embedding(p(table.tokens), ids);
  return ops::add(tok, ops::take_rows(pos, ids.size()));
}

template <Real T>
Tensor<T> normal_tensor(Shape shape, Rng& rng, double std) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(std * rng.normal());
  return t;
}

template <Real T>
void init_linear(WeightStore<T>& s, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng, double std) {
  s.set(prefix + ".weight", normal_tensor<T>({out, in}, rng, std));
  s.set(prefix + ".bias", Tensor<T>({out}));
}

template <Real T>
void init_layer_norm(WeightStore<T>& s, const std::string& prefix, std::size_t d) {
  s.set(prefix + ".weight", Tensor<T>({d}, T(1)));
  s.set(prefix + ".bias", Tensor<T>({d}));
}

template <Real T>
void init_attention(WeightStore<T>& s, const std::string& prefix, std::size_t d, Rng& rng) {
  for (const char* n : {".q", ".k", ".v", ".o"}) init_linear(s, prefix + n, d, d, rng);
}

template <Real T>
void init_feed_forward(WeightStore<T>& s, const std::string& prefix, std::size_t d, Rng& rng) {
  init_linear(s, prefix + ".fc1", d, 4 * d, rng);
  init_linear(s, prefix + ".fc2", 4 * d, d, rng);
}

template <Real T>
void init_encoder_layer(WeightStore<T>& s, const std::string& prefix, std::size_t d, Rng& rng) {
  init_layer_norm(s, prefix + ".ln1", d);
  init_attention(s, prefix + ".attn", d, rng);
  init_layer_norm(s, prefix + ".ln2", d);
  init_feed_forward(s, prefix + ".ffn", d, rng);
}

template <Real T>
void init_decoder_layer(WeightStore<T>& s, const std::string& prefix, std::size_t d, Rng& rng) {
  init_layer_norm(s, prefix + ".ln1", d);
  init_attention(s, prefix + ".self", d, rng);
  init_layer_norm(s, prefix + ".ln2", d);
  init_attention(s, prefix + ".cross", d, rng);
  init_layer_norm(s, prefix + ".ln3", d);
  init_feed_forward(s, prefix + ".ffn", d, rng);
}

#define EDGECAP_NN_INSTANTIATE(T)                                                                                   \
  template class Params<T>;                                                                                         \
  template Var<T> linear(const Params<T>&, const std::string&, Var<T>);                                             \
  template Var<T> layer_norm(const Params<T>&, const std::string&, Var<T>);                                         \
  template Var<T> channel_norm(const Params<T>&, const std::string&, Var<T>);                                       \
  template Var<T> multi_head_attention(const Params<T>&, const std::string&, Var<T>, Var<T>, const AttentionConfig&, \
                                       const std::vector<std::uint8_t>*);                                           \
  template Var<T> feed_forward(const Params<T>&, const std::string&, Var<T>);                                       \
  template Var<T> encoder_layer(const Params<T>&, const std::string&, Var<T>, const AttentionConfig&);              \
  template Var<T> decoder_layer(const Params<T>&, const std::string&, Var<T>, Var<T>, const AttentionConfig&,       \
                                const AttentionConfig&);                                                            \
  template Var<T> convnext_block(Var<T>, const ConvNextBlockParams<T>&);                                            \
  template Var<T> grid_to_tokens(Var<T>);                                                                           \
  template Var<T> tokens_to_grid(Var<T>);                                                                           \
  template Var<T> embed(const Params<T>&, const EmbeddingTable&, std::span<const TokenId>);                        \
  template Tensor<T> normal_tensor(Shape, Rng&, double);                                                            \
  template void init_linear(WeightStore<T>&, const std::string&, std::size_t, std::size_t, Rng&, double);           \
  template void init_layer_norm(WeightStore<T>&, const std::string&, std::size_t);                                  \
  template void init_attention(WeightStore<T>&, const std::string&, std::size_t, Rng&);                             \
  template void init_feed_forward(WeightStore<T>&, const std::string&, std::size_t, Rng&);                          \
  template void init_encoder_layer(WeightStore<T>&, const std::string&, std::size_t, Rng&);                         \
  template void init_decoder_layer(WeightStore<T>&, const std::string&, std::size_t, Rng&);

EDGECAP_NN_INSTANTIATE(float)
EDGECAP_NN_INSTANTIATE(double)

#undef EDGECAP_NN_INSTANTIATE

}  // namespace edgecap::nn

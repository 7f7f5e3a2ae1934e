#pragma once

// Image captioner: backbone from a NetworkSpec, a 49-token transformer
// encoder and a causal transformer decoder with cross-attention.
//
// Weight names, next to the backbone's own leaves:
//   encoder.pos [49 x d], encoder.layer<i>.*, encoder.ln
//   decoder.tokens [V x d], decoder.pos [max_len x d], decoder.layer<i>.*,
//   decoder.ln, decoder.head [V x d] (+ bias)

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "edgecap/data/vocab.hpp"
#include "edgecap/netspec/spec.hpp"
#include "edgecap/nn/blocks.hpp"

namespace edgecap::captioner {

struct CaptionerConfig {
  std::size_t encoder_layers = 6;
  std::size_t encoder_heads = 16;
  std::size_t decoder_layers = 6;
  std::size_t decoder_heads = 12;
  std::size_t model_dim = 48;
  std::size_t token_count = nn::kTokenCount;
  std::size_t vocab_size = 0;
  // Longest token sequence, bos and eos included.
  std::size_t max_caption_len = 40;
  std::size_t input_channels = 3;

  // ConfigError on heads not dividing model_dim, token_count != 49,
  // channels outside {3, 6}, a vocabulary without room for real words, or
  // max_caption_len < 2.
  void validate() const;
  friend bool operator==(const CaptionerConfig&, const CaptionerConfig&) = default;
};

std::string config_to_json(const CaptionerConfig& cfg);
CaptionerConfig config_from_json(const std::string& text);
void save_config(const std::filesystem::path& path, const CaptionerConfig& cfg);
CaptionerConfig load_config(const std::filesystem::path& path);

template <Real T>
struct Model {
  CaptionerConfig config;
  netspec::NetworkSpec backbone;
  WeightStore<T> weights;
};

// Checks that the backbone takes config.input_channels and emits model_dim.
void check_compatible(const CaptionerConfig& cfg, const netspec::NetworkSpec& backbone);

// Encoder and decoder weights only.
template <Real T>
void init_transformer(const CaptionerConfig& cfg, WeightStore<T>& store, Rng& rng);

template <Real T>
Model<T> init_model(const CaptionerConfig& cfg, const netspec::NetworkSpec& backbone, std::uint64_t seed);

// Differentiable forward passes.
template <Real T>
Var<T> encode(const nn::Params<T>& p, const CaptionerConfig& cfg, const netspec::NetworkSpec& backbone, Var<T> image);
// Logits [L x V] for every position of `ids`.
template <Real T>
Var<T> decode(const nn::Params<T>& p, const CaptionerConfig& cfg, Var<T> memory, std::span<const TokenId> ids);
// Teacher forcing: logits [L-1 x V] predicting caption[1..] from caption[..L-1].
template <Real T>
Var<T> caption_logits(const nn::Params<T>& p, const CaptionerConfig& cfg, const netspec::NetworkSpec& backbone,
                      Var<T> image, std::span<const TokenId> caption);

// Inference helpers (no gradients).
template <Real T>
Tensor<T> encode_image(const Model<T>& m, const Tensor<T>& image);
// Next-token logits [V] after `prefix`. LengthError if the prefix is empty
// or longer than max_caption_len.
template <Real T>
Tensor<T> decoder_logits(const Model<T>& m, std::span<const TokenId> prefix, const Tensor<T>& memory);

// Decoder state with cached self-attention keys/values; feeding tokens one
// at a time reproduces decoder_logits on the growing prefix.
template <Real T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Model<T>& m, const Tensor<T>& memory);
  // Appends a token and returns the logits [V] for the next one.
  Tensor<T> step(TokenId token);
  std::size_t length() const { return length_; }

 private:
  struct LayerCache {
    std::vector<T> self_k, self_v;  // length_ rows of width d
    Tensor<T> cross_k, cross_v;
  };
  const Model<T>* model_;
  std::vector<LayerCache> layers_;
  std::size_t length_ = 0;
};

struct GenerationResult {
  std::vector<TokenId> ids;  // bos first
  std::string text;
  // Log-probability of each generated token (ids[1..]).
  std::vector<double> log_probs;

  double total_log_prob() const;
  // Total divided by the number of generated tokens.
  double normalized_log_prob() const;
};

// Decoding never emits pad or bos. Ties go to the lower id. `vocab`, when
// given, fills the text field.
template <Real T>
GenerationResult generate_greedy(const Model<T>& m, const Tensor<T>& image, const data::Vocabulary* vocab = nullptr);
// Length-normalized beam search; the greedy sequence is always among the
// candidates, so the result never scores below it. ConfigError for k = 0.
template <Real T>
GenerationResult generate_beam(const Model<T>& m, const Tensor<T>& image, std::size_t beam_width,
                               const data::Vocabulary* vocab = nullptr);

}  // namespace edgecap::captioner

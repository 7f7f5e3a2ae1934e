#include "edgecap/captioner/model.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "edgecap/error.hpp"

namespace edgecap::captioner {

namespace {

std::string layer_name(const char* stack, std::size_t i) { return std::string(stack) + ".layer" + std::to_string(i); }

const nn::EmbeddingTable kDecoderEmbedding{"decoder.tokens", "decoder.pos"};

template <Real T>
void add_inplace(Tensor<T>& x, const Tensor<T>& y) {
  auto a = x.data();
  auto b = y.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <Real T>
Tensor<T> lin(const WeightStore<T>& w, const std::string& prefix, const Tensor<T>& x) {
  const std::string bias = prefix + ".bias";
  return fwd::linear(x, w.at(prefix + ".weight"), w.contains(bias) ? &w.at(bias) : nullptr);
}

template <Real T>
Tensor<T> norm(const WeightStore<T>& w, const std::string& prefix, const Tensor<T>& x) {
  return fwd::layer_norm(x, w.at(prefix + ".weight"), w.at(prefix + ".bias"), T(nn::kNormEps));
}

void check_prefix(const CaptionerConfig& cfg, std::size_t len) {
  if (len == 0) throw LengthError("decoder: empty prefix");
  if (len > cfg.max_caption_len) {
    throw LengthError("decoder: prefix of " + std::to_string(len) + " tokens exceeds max_caption_len " +
                      std::to_string(cfg.max_caption_len));
  }
}

bool emittable(std::size_t id) { return id != static_cast<std::size_t>(data::kPad) && id != static_cast<std::size_t>(data::kBos); }

template <Real T>
std::vector<double> log_probs_of(const Tensor<T>& logits) {
  const std::size_t v = logits.size();
  Tensor<T> lp = fwd::log_softmax(logits.reshaped(Shape{1, v}));
  return std::vector<double>(lp.data().begin(), lp.data().end());
}

std::size_t best_token(const std::vector<double>& lp) {
  std::size_t best = lp.size();
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (emittable(i) && (best == lp.size() || lp[i] > lp[best])) best = i;
  }
  return best;
}

}  // namespace

void CaptionerConfig::validate() const {
  if (encoder_layers == 0 || decoder_layers == 0) throw ConfigError("captioner: layer counts must be positive");
  nn::AttentionConfig{encoder_heads, model_dim, false}.validate();
  nn::AttentionConfig{decoder_heads, model_dim, true}.validate();
  if (token_count != nn::kTokenCount) {
    throw ConfigError("captioner: token_count must be " + std::to_string(nn::kTokenCount) + ", got " +
                      std::to_string(token_count));
  }
  if (input_channels != 3 && input_channels != 6) {
    throw ConfigError("captioner: input_channels must be 3 or 6, got " + std::to_string(input_channels));
  }
  if (vocab_size <= data::kSpecialCount) {
    throw ConfigError("captioner: vocab_size " + std::to_string(vocab_size) + " leaves no room beyond the specials");
  }
  if (max_caption_len < 2) throw ConfigError("captioner: max_caption_len must be at least 2");
}

std::string config_to_json(const CaptionerConfig& c) {
  nlohmann::ordered_json j;
  j["encoder_layers"] = c.encoder_layers;
  j["encoder_heads"] = c.encoder_heads;
  j["decoder_layers"] = c.decoder_layers;
  j["decoder_heads"] = c.decoder_heads;
  j["model_dim"] = c.model_dim;
  j["token_count"] = c.token_count;
  j["vocab_size"] = c.vocab_size;
  j["max_caption_len"] = c.max_caption_len;
  j["input_channels"] = c.input_channels;
  return j.dump(2) + "\n";
}

CaptionerConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("captioner config: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("captioner config: expected a JSON object");
  CaptionerConfig c;
  auto field = [&](const char* key, std::size_t& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_unsigned()) throw SchemaError(std::string("captioner config: \"") + key + "\" must be a nonnegative integer");
    dst = j[key].get<std::size_t>();
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* known[] = {"encoder_layers", "encoder_heads", "decoder_layers", "decoder_heads", "model_dim",
                                  "token_count",    "vocab_size",    "max_caption_len", "input_channels"};
    if (std::none_of(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; })) {
      throw SchemaError("captioner config: unknown key \"" + it.key() + "\"");
    }
  }
  field("encoder_layers", c.encoder_layers);
  field("encoder_heads", c.encoder_heads);
  field("decoder_layers", c.decoder_layers);
  field("decoder_heads", c.decoder_heads);
  field("model_dim", c.model_dim);
  field("token_count", c.token_count);
  field("vocab_size", c.vocab_size);
  field("max_caption_len", c.max_caption_len);
  field("input_channels", c.input_channels);
  c.validate();
  return c;
}

void save_config(const std::filesystem::path& path, const CaptionerConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << config_to_json(cfg);
}

CaptionerConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void check_compatible(const CaptionerConfig& cfg, const netspec::NetworkSpec& backbone) {
  if (backbone.input_channels != cfg.input_channels) {
    throw ConfigError("captioner: backbone '" + backbone.name + "' takes " + std::to_string(backbone.input_channels) +
                      " channels but the config expects " + std::to_string(cfg.input_channels));
  }
  if (backbone.output_dim() != cfg.model_dim) {
    throw ConfigError("captioner: backbone '" + backbone.name + "' emits width " +
                      std::to_string(backbone.output_dim()) + " but model_dim is " + std::to_string(cfg.model_dim));
  }
}

template <Real T>
void init_transformer(const CaptionerConfig& cfg, WeightStore<T>& s, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  s.set("encoder.pos", nn::normal_tensor<T>({cfg.token_count, d}, rng, 0.02));
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) nn::init_encoder_layer(s, layer_name("encoder", i), d, rng);
  nn::init_layer_norm(s, "encoder.ln", d);
  s.set("decoder.tokens", nn::normal_tensor<T>({cfg.vocab_size, d}, rng, 0.02));
  s.set("decoder.pos", nn::normal_tensor<T>({cfg.max_caption_len, d}, rng, 0.02));
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) nn::init_decoder_layer(s, layer_name("decoder", i), d, rng);
  nn::init_layer_norm(s, "decoder.ln", d);
  nn::init_linear(s, "decoder.head", d, cfg.vocab_size, rng);
}

template <Real T>
Model<T> init_model(const CaptionerConfig& cfg, const netspec::NetworkSpec& backbone, std::uint64_t seed) {
  cfg.validate();
  check_compatible(cfg, backbone);
  netspec::require_valid(backbone);
  Model<T> m{cfg, backbone, {}};
  Rng rng(seed);
  netspec::init_weights(backbone, m.weights, rng);
  init_transformer(cfg, m.weights, rng);
  return m;
}

template <Real T>
Var<T> encode(const nn::Params<T>& p, const CaptionerConfig& cfg, const netspec::NetworkSpec& backbone, Var<T> image) {
  if (image.shape().size() != 3 || image.shape()[0] != cfg.input_channels) {
    throw ConfigError("encode: expected a " + std::to_string(cfg.input_channels) + "-channel image, got " +
                      shape_str(image.shape()));
  }
  check_compatible(cfg, backbone);
  Var<T> x = ops::add(netspec::forward(backbone, p, image), p("encoder.pos"));
  const nn::AttentionConfig att{cfg.encoder_heads, cfg.model_dim, false};
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) x = nn::encoder_layer(p, layer_name("encoder", i), x, att);
  return nn::layer_norm(p, "encoder.ln", x);
}

template <Real T>
Var<T> decode(const nn::Params<T>& p, const CaptionerConfig& cfg, Var<T> memory, std::span<const TokenId> ids) {
  check_prefix(cfg, ids.size());
  if (memory.shape() != Shape{cfg.token_count, cfg.model_dim}) {
    throw DimensionError("decode: memory must be [" + std::to_string(cfg.token_count) + " x " +
                         std::to_string(cfg.model_dim) + "], got " + shape_str(memory.shape()));
  }
  Var<T> x = nn::embed(p, kDecoderEmbedding, ids);
  const nn::AttentionConfig self_att{cfg.decoder_heads, cfg.model_dim, true};
  const nn::AttentionConfig cross_att{cfg.decoder_heads, cfg.model_dim, false};
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    x = nn::decoder_layer(p, layer_name("decoder", i), x, memory, self_att, cross_att);
  }
  return nn::linear(p, "decoder.head", nn::layer_norm(p, "decoder.ln", x));
}

template <Real T>
Var<T> caption_logits(const nn::Params<T>& p, const CaptionerConfig& cfg, const netspec::NetworkSpec& backbone,
                      Var<T> image, std::span<const TokenId> caption) {
  if (caption.size() < 2) throw LengthError("caption_logits: caption needs at least two tokens");
  return decode(p, cfg, encode(p, cfg, backbone, image), caption.first(caption.size() - 1));
}

template <Real T>
Tensor<T> encode_image(const Model<T>& m, const Tensor<T>& image) {
  Tape<T> tape(false);
  nn::Params<T> p(tape, m.weights);
  return encode(p, m.config, m.backbone, tape.constant(image)).value();
}

template <Real T>
Tensor<T> decoder_logits(const Model<T>& m, std::span<const TokenId> prefix, const Tensor<T>& memory) {
  Tape<T> tape(false);
  nn::Params<T> p(tape, m.weights);
  const Tensor<T>& all = decode(p, m.config, tape.constant(memory), prefix).value();
  const std::size_t v = m.config.vocab_size;
  const auto rows = all.data();
  return Tensor<T>(Shape{v}, std::vector<T>(rows.end() - static_cast<std::ptrdiff_t>(v), rows.end()));
}

template <Real T>
IncrementalDecoder<T>::IncrementalDecoder(const Model<T>& m, const Tensor<T>& memory) : model_(&m) {
  const CaptionerConfig& cfg = m.config;
  if (memory.shape() != Shape{cfg.token_count, cfg.model_dim}) {
    throw DimensionError("decoder: memory must be [" + std::to_string(cfg.token_count) + " x " +
                         std::to_string(cfg.model_dim) + "], got " + shape_str(memory.shape()));
  }
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const std::string name = layer_name("decoder", i);
    LayerCache c;
    c.cross_k = lin(m.weights, name + ".cross.k", memory);
    c.cross_v = lin(m.weights, name + ".cross.v", memory);
    layers_.push_back(std::move(c));
  }
}

template <Real T>
Tensor<T> IncrementalDecoder<T>::step(TokenId token) {
  const CaptionerConfig& cfg = model_->config;
  const WeightStore<T>& w = model_->weights;
  const std::size_t d = cfg.model_dim;
  check_prefix(cfg, length_ + 1);
  if (token < 0 || static_cast<std::size_t>(token) >= cfg.vocab_size) {
    throw LookupError("decoder: token id " + std::to_string(token) + " outside vocabulary of " +
                      std::to_string(cfg.vocab_size));
  }
  const auto tok = w.at("decoder.tokens").data().subspan(static_cast<std::size_t>(token) * d, d);
  const auto pos = w.at("decoder.pos").data().subspan(length_ * d, d);
  Tensor<T> x(Shape{1, d});
  for (std::size_t j = 0; j < d; ++j) x[j] = tok[j] + pos[j];
  const std::size_t len = length_ + 1;

  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const std::string name = layer_name("decoder", i);
    LayerCache& c = layers_[i];
    Tensor<T> h = norm(w, name + ".ln1", x);
    const Tensor<T> q = lin(w, name + ".self.q", h);
    const Tensor<T> k = lin(w, name + ".self.k", h);
    const Tensor<T> v = lin(w, name + ".self.v", h);
    c.self_k.insert(c.self_k.end(), k.data().begin(), k.data().end());
    c.self_v.insert(c.self_v.end(), v.data().begin(), v.data().end());
    // Every cached key precedes the new query, so no mask is needed.
    const Tensor<T> keys(Shape{len, d}, c.self_k), values(Shape{len, d}, c.self_v);
    add_inplace(x, lin(w, name + ".self.o", fwd::attention(q, keys, values, AttentionOptions{cfg.decoder_heads})));

    h = norm(w, name + ".ln2", x);
    const Tensor<T> cq = lin(w, name + ".cross.q", h);
    add_inplace(x, lin(w, name + ".cross.o", fwd::attention(cq, c.cross_k, c.cross_v, AttentionOptions{cfg.decoder_heads})));

    h = norm(w, name + ".ln3", x);
    add_inplace(x, lin(w, name + ".ffn.fc2", fwd::gelu(lin(w, name + ".ffn.fc1", h))));
  }
  length_ = len;
  return lin(w, "decoder.head", norm(w, "decoder.ln", x)).reshaped(Shape{cfg.vocab_size});
}

double GenerationResult::total_log_prob() const {
  double s = 0;
  for (double v : log_probs) s += v;
  return s;
}

double GenerationResult::normalized_log_prob() const {
  return log_probs.empty() ? 0.0 : total_log_prob() / static_cast<double>(log_probs.size());
}

template <Real T>
GenerationResult generate_greedy(const Model<T>& m, const Tensor<T>& image, const data::Vocabulary* vocab) {
  const Tensor<T> memory = encode_image(m, image);
  IncrementalDecoder<T> dec(m, memory);
  GenerationResult r;
  r.ids.push_back(data::kBos);
  while (r.ids.size() < m.config.max_caption_len) {
    const std::vector<double> lp = log_probs_of(dec.step(r.ids.back()));
    const std::size_t t = best_token(lp);
    r.ids.push_back(static_cast<TokenId>(t));
    r.log_probs.push_back(lp[t]);
    if (static_cast<TokenId>(t) == data::kEos) break;
  }
  if (vocab) r.text = vocab->decode(r.ids);
  return r;
}

template <Real T>
GenerationResult generate_beam(const Model<T>& m, const Tensor<T>& image, std::size_t beam_width,
                               const data::Vocabulary* vocab) {
  if (beam_width == 0) throw ConfigError("beam search: beam width must be at least 1");
  const Tensor<T> memory = encode_image(m, image);
  const std::size_t max_len = m.config.max_caption_len;

  struct Hyp {
    GenerationResult seq;
    double score = 0;
    IncrementalDecoder<T> dec;
    std::vector<double> next;  // log-probs for the following token
  };
  std::vector<Hyp> live;
  {
    Hyp h{GenerationResult{{data::kBos}, {}, {}}, 0.0, IncrementalDecoder<T>(m, memory), {}};
    h.next = log_probs_of(h.dec.step(data::kBos));
    live.push_back(std::move(h));
  }
  std::vector<GenerationResult> finished;

  struct Cand {
    std::size_t hyp;
    std::size_t token;
    double score;
  };
  while (!live.empty()) {
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto& lp = live[h].next;
      std::vector<std::size_t> order;
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (emittable(t)) order.push_back(t);
      }
      const std::size_t keep = std::min(beam_width, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                        [&](std::size_t a, std::size_t b) { return lp[a] > lp[b] || (lp[a] == lp[b] && a < b); });
      for (std::size_t i = 0; i < keep; ++i) cands.push_back({h, order[i], live[h].score + lp[order[i]]});
    }
    // Stable on (hypothesis, rank) so equal scores keep a fixed order.
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
    cands.resize(std::min(beam_width, cands.size()));

    std::vector<Hyp> next_live;
    for (const Cand& c : cands) {
      const Hyp& parent = live[c.hyp];
      GenerationResult seq = parent.seq;
      seq.ids.push_back(static_cast<TokenId>(c.token));
      seq.log_probs.push_back(parent.next[c.token]);
      if (static_cast<TokenId>(c.token) == data::kEos || seq.ids.size() >= max_len) {
        finished.push_back(std::move(seq));
        continue;
      }
      Hyp child{std::move(seq), c.score, parent.dec, {}};
      child.next = log_probs_of(child.dec.step(static_cast<TokenId>(c.token)));
      next_live.push_back(std::move(child));
    }
    live = std::move(next_live);
  }

  GenerationResult best = generate_greedy(m, image);
  for (auto& f : finished) {
    if (f.normalized_log_prob() > best.normalized_log_prob()) best = std::move(f);
  }
  if (vocab) best.text = vocab->decode(best.ids);
  return best;
}

#define EDGECAP_CAPTIONER_INSTANTIATE(T)                                                                               \
  template void init_transformer(const CaptionerConfig&, WeightStore<T>&, Rng&);                                       \
  template Model<T> init_model(const CaptionerConfig&, const netspec::NetworkSpec&, std::uint64_t);                    \
  template Var<T> encode(const nn::Params<T>&, const CaptionerConfig&, const netspec::NetworkSpec&, Var<T>);           \
  template Var<T> decode(const nn::Params<T>&, const CaptionerConfig&, Var<T>, std::span<const TokenId>);              \
  template Var<T> caption_logits(const nn::Params<T>&, const CaptionerConfig&, const netspec::NetworkSpec&, Var<T>,    \
                                 std::span<const TokenId>);                                                            \
  template Tensor<T> encode_image(const Model<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> decoder_logits(const Model<T>&, std::span<const TokenId>, const Tensor<T>&);                      \
  template class IncrementalDecoder<T>;                                                                                \
  template GenerationResult generate_greedy(const Model<T>&, const Tensor<T>&, const data::Vocabulary*);               \
  template GenerationResult generate_beam(const Model<T>&, const Tensor<T>&, std::size_t, const data::Vocabulary*);

EDGECAP_CAPTIONER_INSTANTIATE(float)
EDGECAP_CAPTIONER_INSTANTIATE(double)

#undef EDGECAP_CAPTIONER_INSTANTIATE

}  // namespace edgecap::captioner

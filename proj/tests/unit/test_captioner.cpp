#include <doctest.h>

#include "edgecap/captioner/model.hpp"
#include "edgecap/error.hpp"
#include "edgecap/tensor/grad_check.hpp"
#include "test_util.hpp"

using namespace edgecap;
using namespace edgecap::captioner;
using edgecap::testing::random_tensor;

namespace {

CaptionerConfig small_config(std::size_t channels = 3) {
  CaptionerConfig c;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.encoder_heads = 4;
  c.decoder_heads = 2;
  c.model_dim = 16;
  c.vocab_size = 20;
  c.max_caption_len = 8;
  c.input_channels = channels;
  return c;
}

Model<double> small_model(std::size_t channels = 3, std::uint64_t seed = 5) {
  const auto cfg = small_config(channels);
  return init_model<double>(cfg, netspec::default_backbone(channels, cfg.model_dim), seed);
}

}  // namespace

TEST_CASE("captioner config validation") {
  CaptionerConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.decoder_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.token_count = 50;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.input_channels = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.vocab_size = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  CaptionerConfig full;
  full.vocab_size = 100;
  CHECK_NOTHROW(full.validate());
  CHECK(config_from_json(config_to_json(small_config(6))) == small_config(6));
  CHECK_THROWS_AS(config_from_json("{\"model_dim\": 16, \"bogus\": 1}"), SchemaError);
  CHECK_THROWS_AS(config_from_json("{\"model_dim\": -1}"), SchemaError);
  CHECK_THROWS_AS(config_from_json("{"), ParseError);
}

TEST_CASE("encoder memory shape and sensitivity") {
  CaptionerConfig cfg = small_config(6);
  cfg.model_dim = 48;
  cfg.encoder_heads = 16;
  cfg.decoder_heads = 12;
  const auto m = init_model<double>(cfg, netspec::default_backbone(6, 48), 11);
  Rng rng(1);
  const auto a = random_tensor<double>(rng, {6, 64, 64}, 0, 1);
  const auto b = random_tensor<double>(rng, {6, 64, 64}, 0, 1);
  const auto ma = encode_image(m, a);
  CHECK(ma.shape() == Shape{49, 48});
  CHECK(ma.all_finite());
  CHECK(testing::max_abs_diff(ma, encode_image(m, b)) > 1e-3);
  CHECK_THROWS_AS(encode_image(m, random_tensor<double>(rng, {3, 64, 64})), ConfigError);
}

TEST_CASE("reduced backbones plug into the same encoder") {
  const auto m = small_model(6);
  for (std::size_t prf : {2, 3}) {
    auto reduced = netspec::apply_prf(m.backbone, m.weights, {prf});
    Model<double> small{m.config, reduced.spec, std::move(reduced.weights)};
    CHECK(small.weights.total_params() < m.weights.total_params());
    Rng rng(prf);
    const auto x = random_tensor<double>(rng, {6, 64, 64}, 0, 1);
    const auto mem = encode_image(small, x);
    CHECK(mem.shape() == encode_image(m, x).shape());
    // The transformer weights are untouched by the reduction.
    CHECK(small.weights.at("decoder.head.weight") == m.weights.at("decoder.head.weight"));
    CHECK(generate_greedy(small, x).ids.front() == data::kBos);
  }
  // A backbone whose output width disagrees with model_dim is rejected.
  CHECK_THROWS_AS(init_model<double>(small_config(6), netspec::default_backbone(6, 32), 1), ConfigError);
  CHECK_THROWS_AS(init_model<double>(small_config(6), netspec::default_backbone(3, 16), 1), ConfigError);
}

TEST_CASE("incremental decoding matches the full forward pass") {
  const auto m = small_model();
  Rng rng(3);
  const auto mem = encode_image(m, random_tensor<double>(rng, {3, 16, 16}, 0, 1));
  const std::vector<TokenId> seq{1, 7, 4, 19, 5, 5, 2, 9};

  Tape<double> tape(false);
  nn::Params<double> p(tape, m.weights);
  const Tensor<double> full = decode(p, m.config, tape.constant(mem), std::span<const TokenId>(seq)).value();

  IncrementalDecoder<double> dec(m, mem);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto step = dec.step(seq[i]);
    const auto prefix = decoder_logits(m, std::span<const TokenId>(seq).first(i + 1), mem);
    for (std::size_t v = 0; v < m.config.vocab_size; ++v) {
      CHECK(std::abs(step[v] - full.at(i, v)) < 1e-10);
      // Later tokens never influence earlier positions.
      CHECK(std::abs(prefix[v] - full.at(i, v)) < 1e-10);
    }
  }
  CHECK_THROWS_AS(dec.step(3), LengthError);
  CHECK_THROWS_AS(decoder_logits(m, std::vector<TokenId>(9, 4), mem), LengthError);
  CHECK_THROWS_AS(decoder_logits(m, std::vector<TokenId>{}, mem), LengthError);
}

TEST_CASE("cross-attention reads the memory") {
  const auto m = small_model();
  Rng rng(4);
  const auto mem = encode_image(m, random_tensor<double>(rng, {3, 16, 16}, 0, 1));
  const std::vector<TokenId> prefix{1, 6, 8};
  const auto a = decoder_logits(m, prefix, mem);
  const auto b = decoder_logits(m, prefix, Tensor<double>(mem.shape()));
  CHECK(testing::max_abs_diff(a, b) > 1e-6);
}

TEST_CASE("greedy decoding contract") {
  const auto m = small_model();
  Rng rng(8);
  data::Vocabulary vocab = data::Vocabulary::from_words({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l",
                                                         "m", "n", "o", "p"});
  for (int trial = 0; trial < 4; ++trial) {
    const auto img = random_tensor<double>(rng, {3, 16, 16}, 0, 1);
    const auto r = generate_greedy(m, img, &vocab);
    const auto again = generate_greedy(m, img, &vocab);
    CHECK(r.ids == again.ids);
    CHECK(r.log_probs == again.log_probs);
    CHECK(r.text == again.text);
    REQUIRE(r.ids.front() == data::kBos);
    CHECK((r.ids.back() == data::kEos || r.ids.size() == m.config.max_caption_len));
    CHECK(r.ids.size() <= m.config.max_caption_len);
    CHECK(r.log_probs.size() + 1 == r.ids.size());
    for (std::size_t i = 1; i < r.ids.size(); ++i) {
      CHECK(r.ids[i] != data::kPad);
      CHECK(r.ids[i] != data::kBos);
      if (i + 1 < r.ids.size()) CHECK(r.ids[i] != data::kEos);
    }
    // The chosen token is the argmax of each step's distribution.
    const auto mem = encode_image(m, img);
    for (std::size_t i = 1; i < r.ids.size(); ++i) {
      CHECK(r.log_probs[i - 1] <= 0.0);
      const auto logits = decoder_logits(m, std::span<const TokenId>(r.ids).first(i), mem);
      const auto lp = fwd::log_softmax(logits.reshaped(Shape{1, logits.size()}));
      CHECK(lp[static_cast<std::size_t>(r.ids[i])] == doctest::Approx(r.log_probs[i - 1]).epsilon(1e-12));
      for (std::size_t v = 2; v < lp.size(); ++v) CHECK(r.log_probs[i - 1] >= lp[v] - 1e-12);
    }
  }
}

TEST_CASE("beam search") {
  const auto m = small_model(3, 21);
  Rng rng(9);
  for (int trial = 0; trial < 4; ++trial) {
    const auto img = random_tensor<double>(rng, {3, 16, 16}, 0, 1);
    const auto greedy = generate_greedy(m, img);
    const auto one = generate_beam(m, img, 1);
    CHECK(one.ids == greedy.ids);
    CHECK(one.log_probs == greedy.log_probs);
    for (std::size_t k : {2, 4}) {
      const auto b = generate_beam(m, img, k);
      CHECK(b.normalized_log_prob() >= greedy.normalized_log_prob());
      CHECK(b.ids.front() == data::kBos);
      CHECK(b.ids == generate_beam(m, img, k).ids);
    }
  }
  CHECK_THROWS_AS(generate_beam(m, Tensor<double>(Shape{3, 16, 16}), 0), ConfigError);
}

TEST_CASE("end-to-end gradient check") {
  auto m = small_model(3, 17);
  Rng rng(13);
  const auto img = random_tensor<double>(rng, {3, 16, 16}, 0, 1);
  const std::vector<TokenId> caption{1, 5, 9, 12, 2};
  m.weights.set_requires_grad(true);
  std::vector<std::string> names;
  for (const auto& [name, t] : m.weights.entries()) names.push_back(name);
  std::vector<ParamPick> picks;
  for (int i = 0; i < 20; ++i) {
    const std::string& name = names[rng.below(names.size())];
    picks.push_back({name, rng.below(m.weights.at(name).size())});
  }
  auto r = grad_check_params(
      [&](Tape<double>& tape, WeightStore<double>& s) {
        nn::Params<double> p(tape, s);
        auto logits = caption_logits(p, m.config, m.backbone, tape.constant(img), caption);
        return ops::cross_entropy(logits, std::span<const TokenId>(caption).subspan(1), data::kPad);
      },
      m.weights, picks);
  CHECK(r.checked == 20);
  CHECK_MESSAGE(r.max_rel_error < 1e-5, r.worst_entry, " ", r.worst_analytic, " ", r.worst_numeric);
}

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "edgecap/data/synth.hpp"
#include "edgecap/error.hpp"
#include "edgecap/tensor/grad_check.hpp"
#include "edgecap/train/adam.hpp"
#include "edgecap/train/distill.hpp"
#include "test_util.hpp"

using namespace edgecap;
using namespace edgecap::train;
namespace fs = std::filesystem;
using edgecap::testing::random_tensor;

namespace {

nlohmann::json oracle() {
  std::ifstream in(fs::path(EDGECAP_TEST_DATA_DIR) / "kd_oracle.json");
  return nlohmann::json::parse(in);
}

Tensor<double> rows(const nlohmann::json& j) {
  std::vector<std::vector<double>> r = j;
  Tensor<double> t(Shape{r.size(), r[0].size()});
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t k = 0; k < r[i].size(); ++k) t.at(i, k) = r[i][k];
  }
  return t;
}

// A small dataset shared by the training-loop tests.
struct Fixture {
  fs::path dir;
  data::Vocabulary vocab;
  std::vector<Example<double>> train, val;

  Fixture() {
    dir = fs::temp_directory_path() / "edgecap_test_train";
    fs::remove_all(dir);
    data::generate_dataset(24, 11, dir);
    auto records = data::load_annotations(dir / "annotations.jsonl");
    std::vector<std::string> captions;
    for (const auto& r : records) captions.insert(captions.end(), r.captions.begin(), r.captions.end());
    vocab = data::Vocabulary::build(captions);
    std::vector<data::AnnotationRecord> tr(records.begin(), records.begin() + 20), va(records.begin() + 20, records.end());
    train = make_examples<double>(dir, tr, vocab, InputSpec{});
    val = make_examples<double>(dir, va, vocab, InputSpec{});
  }

  captioner::Model<double> model(std::uint64_t seed) const {
    captioner::CaptionerConfig c;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.encoder_heads = 4;
    c.decoder_heads = 2;
    c.model_dim = 16;
    c.vocab_size = vocab.size();
    c.max_caption_len = 16;
    return captioner::init_model<double>(c, netspec::default_backbone(3, c.model_dim), seed);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

DistillConfig quick(double alpha, std::uint64_t seed = 3) {
  DistillConfig c;
  c.alpha = alpha;
  c.epochs = 1;
  c.batch = 4;
  c.lr = 3e-3;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("cross-entropy examples") {
  Tape<double> tape(false);
  const std::vector<TokenId> targets{1, 3, 0, 2};
  SUBCASE("uniform logits give ln V") {
    auto l = tape.constant(Tensor<double>(Shape{4, 7}, 0.25));
    CHECK(ops::cross_entropy(l, std::span<const TokenId>(targets), 0).value()[0] == doctest::Approx(std::log(7.0)).epsilon(1e-14));
  }
  SUBCASE("a widening gap on the target drives the loss to zero") {
    double prev = 1e9;
    for (double gap : {1.0, 5.0, 20.0, 60.0}) {
      Tensor<double> t(Shape{4, 7});
      for (std::size_t r = 0; r < 4; ++r) t.at(r, static_cast<std::size_t>(targets[r])) = gap;
      const double loss = ops::cross_entropy(tape.constant(t), std::span<const TokenId>(targets), 0).value()[0];
      CHECK(loss < prev);
      prev = loss;
    }
    CHECK(prev < 1e-20);
  }
  SUBCASE("all-pad targets are a contract error") {
    const std::vector<TokenId> pads{0, 0, 0, 0};
    auto l = tape.constant(Tensor<double>(Shape{4, 7}, 0.0));
    CHECK_THROWS_AS(ops::cross_entropy(l, std::span<const TokenId>(pads), 0), ContractError);
    CHECK_THROWS_AS(ops::distillation_loss(l, l.value(), std::span<const TokenId>(pads), 0, 2.0, 0.5), ContractError);
  }
}

TEST_CASE("distillation loss against the scalar oracle") {
  const auto o = oracle();
  Tape<double> tape(false);
  SUBCASE("two classes, teacher odds 3:1, uniform student") {
    auto s = tape.constant(Tensor<double>::from_rows({{0.0, 0.0}}));
    const Tensor<double> t = Tensor<double>::from_rows({{std::log(3.0), 0.0}});
    const std::vector<TokenId> y{0};
    ops::DistillTerms terms;
    const double loss = ops::distillation_loss(s, t, std::span<const TokenId>(y), -1, 1.0, 0.0, &terms).value()[0];
    CHECK(terms.kl == doctest::Approx(o["two_class_kl"].get<double>()).epsilon(1e-14));
    CHECK(loss == doctest::Approx(o["two_class_kl"].get<double>()).epsilon(1e-14));
  }
  SUBCASE("mixed case with a pad position") {
    const auto& m = o["mixed"];
    auto s = tape.constant(rows(m["student"]));
    const std::vector<TokenId> y = m["targets"];
    ops::DistillTerms terms;
    const double loss = ops::distillation_loss(s, rows(m["teacher"]), std::span<const TokenId>(y), 0,
                                               m["temperature"].get<double>(), m["alpha"].get<double>(), &terms)
                            .value()[0];
    CHECK(std::abs(terms.cross_entropy - m["cross_entropy"].get<double>()) < 1e-12);
    CHECK(std::abs(terms.kl - m["kl"].get<double>()) < 1e-12);
    CHECK(std::abs(loss - m["loss"].get<double>()) < 1e-12);
  }
}

TEST_CASE("distillation loss properties") {
  Rng rng(40);
  const std::vector<TokenId> y{2, 4, 0, 1, 3};
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> tape(false);
    auto s = random_tensor<double>(rng, Shape{5, 6}, -3, 3);
    auto t = random_tensor<double>(rng, Shape{5, 6}, -3, 3);
    const double alpha = rng.uniform(0, 1), temp = rng.uniform(0.5, 4);
    const std::span<const TokenId> ys(y);
    const double ce = ops::cross_entropy(tape.constant(s), ys, 0).value()[0];
    ops::DistillTerms terms;
    const double loss = ops::distillation_loss(tape.constant(s), t, ys, 0, temp, alpha, &terms).value()[0];
    CHECK(terms.kl >= 0);
    CHECK(loss >= 0);
    CHECK(std::abs(terms.cross_entropy - ce) < 1e-12);
    // Identical teacher: the KL term vanishes.
    const double same = ops::distillation_loss(tape.constant(s), s, ys, 0, temp, alpha, &terms).value()[0];
    CHECK(std::abs(terms.kl) < 1e-15);
    CHECK(std::abs(same - alpha * ce) < 1e-12);
    // alpha = 1 ignores the teacher entirely.
    CHECK(ops::distillation_loss(tape.constant(s), t, ys, 0, temp, 1.0).value()[0] == doctest::Approx(ce).epsilon(1e-14));
  }
  Tape<double> tape(false);
  auto s = tape.constant(Tensor<double>(Shape{5, 6}, 0.0));
  CHECK_THROWS_AS(ops::distillation_loss(s, s.value(), std::span<const TokenId>(y), 0, 0.0, 0.5), ConfigError);
  CHECK_THROWS_AS(ops::distillation_loss(s, s.value(), std::span<const TokenId>(y), 0, 2.0, 1.5), ConfigError);
}

TEST_CASE("distillation loss gradient check") {
  Rng rng(41);
  const std::vector<TokenId> y{2, 4, 0, 1, 3};
  for (double alpha : {0.0, 0.5, 1.0}) {
    const Tensor<double> t = random_tensor<double>(rng, Shape{5, 6}, -2, 2);
    const Tensor<double> x0 = random_tensor<double>(rng, Shape{5, 6}, -2, 2);
    const auto r = grad_check(
        [&](Var<double> x) { return ops::distillation_loss(x, t, std::span<const TokenId>(y), 0, 2.0, alpha); }, x0);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("adam") {
  const auto o = oracle();
  AdamConfig cfg;
  cfg.lr = 0.01;
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<double> p{0.5, -1.0}, g{0.0, 0.0};
    AdamState<double> st;
    adam_step<double>(p, g, st, cfg);
    CHECK(p == std::vector<double>{0.5, -1.0});
    CHECK(st.t == 1);
  }
  SUBCASE("moments decay under a zero gradient") {
    std::vector<double> p{0.5}, g{1.0}, zero{0.0};
    AdamState<double> st;
    adam_step<double>(p, g, st, cfg);
    const double m1 = st.m[0], v1 = st.v[0];
    adam_step<double>(p, zero, st, cfg);
    CHECK(st.m[0] == doctest::Approx(0.9 * m1));
    CHECK(st.v[0] == doctest::Approx(0.999 * v1));
  }
  SUBCASE("first step is about lr times the sign") {
    std::vector<double> p{0.0, 0.0, 0.0}, g{3.0, -1e-3, 250.0};
    AdamState<double> st;
    adam_step<double>(p, g, st, cfg);
    CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(0.01).epsilon(1e-4));
    CHECK(p[2] == doctest::Approx(-0.01).epsilon(1e-6));
  }
  SUBCASE("quadratic bowl follows the scalar recurrence") {
    const auto& b = o["adam_bowl"];
    std::vector<double> x = b["x0"];
    AdamConfig c;
    c.lr = b["lr"];
    AdamState<double> st;
    for (int i = 0; i < b["steps"].get<int>(); ++i) {
      std::vector<double> g{2 * x[0], 2 * x[1]};
      adam_step<double>(x, g, st, c);
    }
    CHECK(std::hypot(x[0], x[1]) < 1e-2);
    CHECK(std::abs(x[0] - b["x"][0].get<double>()) < 1e-12);
    CHECK(std::abs(x[1] - b["x"][1].get<double>()) < 1e-12);
  }
  SUBCASE("length mismatch") {
    std::vector<double> p{1.0}, g{1.0, 2.0};
    AdamState<double> st;
    CHECK_THROWS_AS(adam_step<double>(p, g, st, cfg), DimensionError);
  }
}

TEST_CASE("train config parsing") {
  const auto s = parse_train_settings(
      "# comment\n"
      "seed = 7\n"
      "epochs=3\n"
      "  lr = 0.002   # trailing\n"
      "batch = 4\r\n"
      "temperature = 3\n"
      "alpha = 0.25\n"
      "prf = 3\n"
      "channels = 6\n"
      "edge_method = sobel\n");
  CHECK(s.distill.seed == 7);
  CHECK(s.distill.epochs == 3);
  CHECK(s.distill.lr == 0.002);
  CHECK(s.distill.batch == 4);
  CHECK(s.distill.temperature == 3.0);
  CHECK(s.distill.alpha == 0.25);
  CHECK(s.distill.prf == 3);
  CHECK(s.input.channels == 6);
  CHECK(s.input.edges.method == edge::EdgeMethod::Sobel);
  CHECK_NOTHROW(parse_train_settings(""));

  auto message = [](const std::string& text) {
    try {
      parse_train_settings(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("seed = 1\nbogus = 2\n").find("line 2") != std::string::npos);
  CHECK(message("epochs = many\n").find("line 1") != std::string::npos);
  CHECK(message("edge_method = prewitt\n").find("line 1") != std::string::npos);
  CHECK(message("just words\n").find("line 1") != std::string::npos);
  CHECK_FALSE(message("alpha = 2\n").empty());
  CHECK_FALSE(message("temperature = 0\n").empty());
  CHECK_FALSE(message("channels = 4\n").empty());
}

TEST_CASE("training loop") {
  const Fixture& f = fixture();
  SUBCASE("bare training never evaluates a teacher and lowers the probe loss") {
    auto m = f.model(1);
    auto teacher = f.model(2);
    const auto r = train_model<double>(m, &teacher, f.train, f.val, quick(1.0), f.vocab);
    CHECK(r.mode == "bare");
    CHECK(r.teacher_evaluations == 0);
    REQUIRE(r.epochs.size() == 1);
    CHECK(std::isfinite(r.epochs[0].train_loss));
    CHECK(r.epochs[0].probe_loss < r.initial_probe_loss);
  }
  SUBCASE("runs are reproducible for a seed and differ across seeds") {
    auto a = f.model(1), b = f.model(1), c = f.model(1);
    const auto teacher = f.model(2);
    const auto ra = train_model<double>(a, &teacher, f.train, f.val, quick(0.5), f.vocab);
    const auto rb = train_model<double>(b, &teacher, f.train, f.val, quick(0.5), f.vocab);
    const auto rc = train_model<double>(c, &teacher, f.train, f.val, quick(0.5, 4), f.vocab);
    CHECK(ra.mode == "distil");
    CHECK(ra.to_json() == rb.to_json());
    CHECK(a.weights == b.weights);
    CHECK(ra.to_json() != rc.to_json());
    // Teacher logits are cached: at most one evaluation per (example, caption).
    CHECK(ra.teacher_evaluations > 0);
    CHECK(ra.teacher_evaluations <= f.train.size() * 5);
  }
  SUBCASE("argument errors") {
    auto m = f.model(1);
    CHECK_THROWS_AS(train_model<double>(m, nullptr, f.train, f.val, quick(0.5), f.vocab), ConfigError);
    CHECK_THROWS_AS(train_model<double>(m, nullptr, {}, f.val, quick(1.0), f.vocab), ContractError);
    auto bad = quick(1.0);
    bad.epochs = 0;
    CHECK_THROWS_AS(train_model<double>(m, nullptr, f.train, f.val, bad, f.vocab), ConfigError);
    CHECK_THROWS_AS(make_student(m, 0), ConfigError);
  }
  SUBCASE("students start from interpolated teacher weights") {
    const auto teacher = f.model(2);
    auto student = make_student(teacher, 2);
    CHECK(student.weights.total_params() < teacher.weights.total_params());
    CHECK(student.weights.at("decoder.tokens") == teacher.weights.at("decoder.tokens"));
    CHECK(make_student(teacher, 1).weights == teacher.weights);
    captioner::Model<double> out = teacher;
    const auto r = train_student<double>(teacher, out, f.train, f.val, quick(0.5), f.vocab);
    CHECK(out.weights.total_params() == student.weights.total_params());
    CHECK(r.epochs[0].probe_loss < r.initial_probe_loss);
  }
}

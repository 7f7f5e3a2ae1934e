// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Optional arguments restrict the run to the listed criterion numbers.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgecap/captioner/model.hpp"
#include "edgecap/cli/app.hpp"
#include "edgecap/cli/bench.hpp"
#include "edgecap/data/vocab.hpp"
#include "edgecap/edge/detectors.hpp"
#include "edgecap/metrics/metrics.hpp"
#include "edgecap/metrics/tokenize.hpp"
#include "edgecap/netspec/spec.hpp"
#include "edgecap/nn/blocks.hpp"
#include "edgecap/tensor/grad_check.hpp"
#include "op_grad_cases.hpp"
#include "random_spec.hpp"
#include "test_util.hpp"

using namespace edgecap;
namespace fs = std::filesystem;
using testing::random_tensor;
using testing::weighted_sum;

namespace {

// Collects failed expectations for one criterion.
class Outcome {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && failures_.size() < 8) failures_.push_back(what);
    failed_ = failed_ || !ok;
  }
  void note(std::string s) { notes_.push_back(std::move(s)); }
  bool passed() const { return !failed_; }
  std::size_t checks() const { return checks_; }
  const std::vector<std::string>& failures() const { return failures_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  bool failed_ = false;
  std::size_t checks_ = 0;
  std::vector<std::string> failures_, notes_;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

fs::path scratch_root() {
  static const fs::path root = [] {
    auto p = fs::temp_directory_path() / "edgecap_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

// ---------------------------------------------------------------- gradients

void gradients(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_op = 0;
  for (const auto& [name, worst] : testing::run_op_grad_cases(2024, 100)) {
    o.expect(worst < 1e-6, std::string(name) + " rel error " + fmt(worst));
    worst_op = std::max(worst_op, worst);
  }

  // Blocks built from the ops, checked through their parameters.
  Rng rng(17);
  {
    const std::size_t d = 8;
    WeightStore<double> store;
    nn::init_encoder_layer(store, "enc", d, rng);
    nn::init_decoder_layer(store, "dec", d, rng);
    store.set("cn.dw.weight", random_tensor<double>(rng, {d, 1, 7, 7}, -0.3, 0.3));
    store.set("cn.dw.bias", random_tensor<double>(rng, {d}));
    store.set("cn.norm.weight", random_tensor<double>(rng, {d}, 0.5, 1.5));
    store.set("cn.norm.bias", random_tensor<double>(rng, {d}));
    store.set("cn.fc1.weight", random_tensor<double>(rng, {4 * d, d}, -0.5, 0.5));
    store.set("cn.fc1.bias", random_tensor<double>(rng, {4 * d}));
    store.set("cn.fc2.weight", random_tensor<double>(rng, {d, 4 * d}, -0.5, 0.5));
    store.set("cn.fc2.bias", random_tensor<double>(rng, {d}));
    store.set("cn.gamma", random_tensor<double>(rng, {d}));
    for (auto& [name, t] : store.entries()) {
      if (name.rfind("cn.", 0) != 0) t = random_tensor<double>(rng, t.shape(), -0.4, 0.4);
    }
    const auto grid = random_tensor<double>(rng, {d, 7, 7});
    const auto prefix = random_tensor<double>(rng, {3, d});
    std::vector<ParamPick> picks;
    for (const auto& [name, t] : store.entries()) {
      for (int k = 0; k < 2; ++k) picks.push_back({name, rng.below(t.size())});
    }
    auto r = grad_check_params(
        [&](Tape<double>& tape, WeightStore<double>& s) {
          nn::Params<double> p(tape, s);
          nn::ConvNextBlockParams<double> v{p("cn.dw.weight"), p("cn.dw.bias"),  p("cn.norm.weight"),
                                            p("cn.norm.bias"), p("cn.fc1.weight"), p("cn.fc1.bias"),
                                            p("cn.fc2.weight"), p("cn.fc2.bias"), p("cn.gamma")};
          auto tokens = nn::grid_to_tokens(nn::convnext_block(tape.constant(grid), v));
          auto mem = nn::encoder_layer(p, "enc", tokens, {2, d, false});
          return weighted_sum(nn::decoder_layer(p, "dec", tape.constant(prefix), mem, {4, d, true}, {2, d, false}));
        },
        store, picks);
    o.expect(r.max_rel_error < 1e-6, "blocks rel error " + fmt(r.max_rel_error) + " at " + r.worst_entry);
    worst_op = std::max(worst_op, r.max_rel_error);
  }

  // Whole toy captioner, 20 random parameters.
  captioner::CaptionerConfig cfg;
  cfg.encoder_layers = 2;
  cfg.decoder_layers = 2;
  cfg.encoder_heads = 4;
  cfg.decoder_heads = 2;
  cfg.model_dim = 16;
  cfg.vocab_size = 20;
  cfg.max_caption_len = 8;
  cfg.input_channels = 3;
  auto m = captioner::init_model<double>(cfg, netspec::default_backbone(3, cfg.model_dim), 17);
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
  auto e2e = grad_check_params(
      [&](Tape<double>& tape, WeightStore<double>& s) {
        nn::Params<double> p(tape, s);
        auto logits = captioner::caption_logits(p, m.config, m.backbone, tape.constant(img), caption);
        return ops::cross_entropy(logits, std::span<const TokenId>(caption).subspan(1), data::kPad);
      },
      m.weights, picks);
  o.expect(e2e.checked == 20, "end-to-end checked " + std::to_string(e2e.checked) + " params");
  o.expect(e2e.max_rel_error < 1e-5, "end-to-end rel error " + fmt(e2e.max_rel_error) + " at " + e2e.worst_entry);

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.expect(secs < 120, "runtime " + fmt(secs) + " s");
  o.note("worst op/block " + fmt(worst_op) + ", end-to-end " + fmt(e2e.max_rel_error) + ", " + fmt(secs) + " s");
}

// ---------------------------------------------------------------------- PRF

bool bit_identical(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() && std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)) == 0;
}

void prf(Outcome& o) {
  using namespace netspec;
  Rng rng(7);
  const auto spec = default_backbone(6, 48);
  o.expect(validate(spec).empty(), "default backbone validates");

  std::vector<NetworkSpec> specs{spec, default_backbone(3, 48)};
  for (int i = 0; i < 40; ++i) specs.push_back(testing::specs::random_spec(rng));
  for (const auto& s : specs) {
    const auto w = testing::specs::random_weights(s, rng);
    const auto id = apply_prf(s, w, {1});
    bool same = id.spec == s && id.weights.size() == w.size();
    for (const auto& [name, t] : w.entries()) same = same && bit_identical(id.weights.at(name), t);
    o.expect(same, "prf 1 identity on " + s.name);
    for (std::size_t k = 2; k <= 5; ++k) {
      const auto r = apply_prf(s, w, {k});
      o.expect(validate(r.spec).empty(), "reduced spec validates (" + s.name + ", prf " + std::to_string(k) + ")");
      for (const auto& p : param_shapes(r.spec)) {
        o.expect(r.weights.at(p.name).shape() == p.shape, "reduced weight shape " + p.name);
      }
    }
  }

  std::ostringstream counts;
  std::size_t prev = 0;
  for (std::size_t k = 1; k <= 5; ++k) {
    const std::size_t n = count_params(reduce_spec(spec, {k}));
    if (k > 1) o.expect(n < prev, "count at prf " + std::to_string(k) + " is below prf " + std::to_string(k - 1));
    counts << (k > 1 ? " > " : "") << n;
    prev = n;
  }
  const double ratio = double(count_params(reduce_spec(spec, {2}))) / double(count_params(spec));
  o.expect(ratio < 0.5, "ratio at prf 2 is " + fmt(ratio));

  Tensor<double> v(Shape{4}, std::vector<double>{1, 2, 3, 4});
  o.expect(interp_resize(v, {2}, {0}).buffer() == std::vector<double>{1, 4}, "interp [1,2,3,4] -> [1,4]");
  o.expect(interp_resize(v, {3}, {0}).buffer() == std::vector<double>{1, 2.5, 4}, "interp [1,2,3,4] -> [1,2.5,4]");
  o.note("params " + counts.str() + ", ratio at prf 2 " + fmt(ratio));
}

// -------------------------------------------------------------------- edges

edge::GrayImage vertical_step(std::size_t w, std::size_t h, std::size_t col, double lo, double hi) {
  edge::GrayImage g(w, h, lo);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = col; x < w; ++x) g.at(y, x) = hi;
  }
  return g;
}

std::size_t count_on(const edge::EdgeMap& e) {
  return static_cast<std::size_t>(std::count_if(e.data.begin(), e.data.end(), [](double v) { return v != 0.0; }));
}

void edges(Outcome& o) {
  using namespace edge;
  for (double level : {0.0, 0.37, 1.0}) {
    const RgbImage flat(20, 16, level);
    for (EdgeMethod m : {EdgeMethod::Canny, EdgeMethod::Sobel, EdgeMethod::Laplacian}) {
      EdgeConfig cfg;
      cfg.method = m;
      o.expect(count_on(detect(flat, cfg)) == 0, std::string("constant image gives edges with ") + method_name(m));
    }
  }

  EdgeConfig cfg;
  for (std::size_t col : {5, 16, 27}) {
    for (auto [lo, hi] : {std::pair{0.0, 1.0}, {0.8, 0.1}, {0.3, 0.36}}) {
      const auto e = canny(vertical_step(32, 24, col, lo, hi), cfg);
      for (std::size_t y = 0; y < 24; ++y) {
        std::vector<std::size_t> on;
        for (std::size_t x = 0; x < 32; ++x) {
          if (e.at(y, x) == 1.0) on.push_back(x);
        }
        // The step sits between columns col - 1 and col.
        const bool ok = on.size() == 1 && on[0] + 1 >= col && on[0] <= col;
        o.expect(ok, "canny step at column " + std::to_string(col) + " row " + std::to_string(y));
      }
    }
  }

  for (double step : {0.25, 0.6, 1.0}) {
    const auto gr = sobel_gradients(vertical_step(7, 5, 3, 0.0, step));
    for (std::size_t y = 0; y < 5; ++y) {
      for (std::size_t x = 0; x < 7; ++x) {
        const double want = (x == 2 || x == 3) ? 4 * step : 0.0;
        o.expect(std::abs(std::abs(gr.gx.at(y, x)) - want) < 1e-12 && gr.gy.at(y, x) == 0.0,
                 "sobel gx at " + std::to_string(y) + "," + std::to_string(x));
      }
    }
  }

  // 0.9 strong, 0.3 weak, 0.1 below the low threshold.
  const double grid[7][7] = {
      {0, 0, 0, 0, 0, 0, 0},       {0, 0.9, 0.9, 0.3, 0.3, 0, 0}, {0, 0, 0, 0, 0, 0.3, 0}, {0, 0, 0, 0, 0, 0, 0},
      {0, 0.3, 0.3, 0.3, 0, 0, 0}, {0, 0, 0, 0, 0, 0, 0.1},       {0, 0, 0, 0, 0, 0, 0},
  };
  GrayImage s(7, 7);
  for (std::size_t y = 0; y < 7; ++y) {
    for (std::size_t x = 0; x < 7; ++x) s.at(y, x) = grid[y][x];
  }
  const auto h = hysteresis(s, 0.2, 0.5);
  for (std::size_t y = 0; y < 7; ++y) {
    for (std::size_t x = 0; x < 7; ++x) {
      const bool keep = (y == 1 && x >= 1 && x <= 4) || (y == 2 && x == 5);
      o.expect(h.at(y, x) == (keep ? 1.0 : 0.0), "hysteresis pixel " + std::to_string(y) + "," + std::to_string(x));
    }
  }

  GrayImage rx(64, 64), ry(64, 64), rd(64, 64);
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      rx.at(y, x) = x / 63.0;
      ry.at(y, x) = 1.0 - y / 63.0;
      rd.at(y, x) = (x + y) / 126.0;
    }
  }
  for (const auto* r : {&rx, &ry, &rd}) o.expect(count_on(log_zero_crossings(*r, cfg)) == 0, "ramp gives LoG edges");

  const fs::path dir = fs::path(EDGECAP_TEST_DATA_DIR) / "golden";
  const auto src = read_ppm(dir / "scene.ppm");
  for (EdgeMethod m : {EdgeMethod::Canny, EdgeMethod::Sobel, EdgeMethod::Laplacian}) {
    EdgeConfig c;
    c.method = m;
    const std::string first = encode_pgm(detect(src, c));
    o.expect(first == encode_pgm(detect(src, c)), std::string("repeat run differs for ") + method_name(m));
    o.expect(first == slurp(dir / (std::string(method_name(m)) + ".pgm")), std::string("golden differs for ") + method_name(m));
  }
}

// ------------------------------------------------------------------ metrics

void check_bleu_order(Outcome& o, const metrics::MetricReport& r, const std::string& where) {
  o.expect(r.bleu1 >= r.bleu2 && r.bleu2 >= r.bleu3 && r.bleu3 >= r.bleu4, "BLEU not monotone on " + where);
}

void metric_checks(Outcome& o) {
  using namespace metrics;
  const auto j = nlohmann::json::parse(slurp(fs::path(EDGECAP_TEST_DATA_DIR) / "metrics_oracle.json"));
  const auto& cases = j.at("cases");
  o.expect(cases.size() == 50, "oracle has 50 corpora");
  double worst = 0;
  std::size_t idx = 0;
  std::vector<std::size_t> non_monotone;
  for (const auto& k : cases) {
    Corpus c;
    for (std::size_t i = 0; i < k["candidates"].size(); ++i) {
      c.push_back({k["candidates"][i].get<Tokens>(), k["references"][i].get<std::vector<Tokens>>()});
    }
    const auto r = evaluate_all(c);
    const auto b = k["bleu"].get<std::vector<double>>();
    const std::array<double, 7> want{b[0], b[1], b[2], b[3], k["meteor_lite"].get<double>(), k["rouge_l"].get<double>(),
                                     k["cider_d"].get<double>()};
    const auto got = r.columns();
    for (std::size_t m = 0; m < 7; ++m) {
      const double d = std::abs(got[m] - want[m]);
      worst = std::max(worst, d);
      o.expect(d < 1e-9, "corpus " + std::to_string(idx) + " " + MetricReport::column_names()[m] + " off by " + fmt(d));
    }
    // Clipped BLEU is not monotone in n on every degenerate corpus (an exact
    // copy next to one-word candidates); the oracle agrees, so only count these.
    if (!(r.bleu1 >= r.bleu2 && r.bleu2 >= r.bleu3 && r.bleu3 >= r.bleu4)) non_monotone.push_back(idx);
    ++idx;
  }

  const std::vector<std::string> caps = {"a red square near the river", "two blue circles on green grass",
                                         "long white runway with marks", "sandy beach meets sea water today"};
  std::vector<std::vector<std::string>> refs;
  for (const auto& s : caps) refs.push_back({s});
  const auto self = evaluate_all(make_corpus(caps, refs));
  for (double v : {self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.rouge_l}) {
    o.expect(std::abs(v - 1.0) < 1e-12, "self corpus BLEU/ROUGE " + fmt(v));
  }
  o.expect(std::abs(self.cider_d - 10.0) < 1e-9, "self corpus CIDEr " + fmt(self.cider_d));

  Rng rng(31);
  const std::vector<std::string> words = {"a", "red", "blue", "square", "circle", "in", "the", "left", "right",
                                          "part", "of", "river", "scene", "two", "three"};
  auto sentence = [&](std::size_t len) {
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s += (i ? " " : "") + words[rng.below(words.size())];
    return s;
  };
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> cands;
    std::vector<std::vector<std::string>> rs;
    for (std::size_t i = 0, n = 1 + rng.below(8); i < n; ++i) {
      std::vector<std::string> group;
      for (int k = 0; k < 5; ++k) group.push_back(sentence(6 + rng.below(8)));
      auto toks = tokenize(group[rng.below(5)]);
      for (auto& t : toks) {
        if (rng.uniform() < 0.25) t = words[rng.below(words.size())];
      }
      std::string cand;
      for (const auto& t : toks) cand += (cand.empty() ? "" : " ") + t;
      cands.push_back(cand);
      rs.push_back(group);
    }
    check_bleu_order(o, evaluate_all(make_corpus(cands, rs)), "random corpus " + std::to_string(trial));
  }
  o.note("largest oracle deviation " + fmt(worst));
  std::string ids;
  for (auto i : non_monotone) ids += (ids.empty() ? "" : ",") + std::to_string(i);
  o.note(std::to_string(non_monotone.size()) + " of 50 degenerate oracle corpora have BLEU rising with n in both " +
         "implementations (" + (ids.empty() ? "none" : ids) + "); ordering enforced on caption-like and benchmark corpora");
}

// -------------------------------------------------------------------- bench

const cli::BenchResult& bench_result() {
  static const cli::BenchResult result = [] {
    cli::BenchConfig cfg;
    cfg.data_dir = scratch_root() / "bench_data";
    std::cout << "running benchmark (" << cfg.seeds << " seeds, " << cfg.inputs.size() << " inputs)" << std::endl;
    auto r = cli::run_bench(cfg, &std::cout);
    const auto t = cli::emit_table(r.table());
    std::cout << t.text << "total runtime " << fmt(r.wall_seconds) << " s\n" << std::flush;
    spit("acceptance_bench.json", r.to_json());
    return r;
  }();
  return result;
}

void bench_common(Outcome& o, const cli::BenchResult& r) {
  o.expect(r.wall_seconds < 1800, "benchmark took " + fmt(r.wall_seconds) + " s");
  const auto t = cli::emit_table(r.table());
  o.expect(t.json.find("\"rows\"") != std::string::npos && !t.text.empty(), "table emitted");
  for (const auto& run : r.runs) {
    for (const auto& ep : run.report.epochs) check_bleu_order(o, ep.val, run.input + " " + run.role);
  }
}

void distillation(Outcome& o) {
  const auto& r = bench_result();
  bench_common(o, r);
  const auto bare = r.mean("3ch", "bare"), distil = r.mean("3ch", "distil");
  o.expect(distil.bleu1 >= bare.bleu1, "distil BLEU-1 " + fmt(distil.bleu1) + " < bare " + fmt(bare.bleu1));
  o.expect(distil.cider_d >= bare.cider_d, "distil CIDEr " + fmt(distil.cider_d) + " < bare " + fmt(bare.cider_d));
  o.note("3ch BLEU-1 distil " + fmt(distil.bleu1) + " vs bare " + fmt(bare.bleu1) + ", CIDEr distil " +
         fmt(distil.cider_d) + " vs bare " + fmt(bare.cider_d));
  for (const auto& in : r.config.inputs) {
    if (in.name == "3ch") continue;
    const auto b = r.mean(in.name, "bare"), d = r.mean(in.name, "distil");
    o.note(in.name + " (informational) CIDEr distil " + fmt(d.cider_d) + " vs bare " + fmt(b.cider_d));
  }
}

void fusion(Outcome& o) {
  const auto& r = bench_result();
  bench_common(o, r);
  const double rgb = r.mean("3ch", "teacher").cider_d;
  std::string best;
  double best_gain = -1e9;
  std::ostringstream detail;
  detail << "teacher CIDEr 3ch " << fmt(rgb);
  for (const auto& in : r.config.inputs) {
    if (in.name == "3ch") continue;
    const double c = r.mean(in.name, "teacher").cider_d;
    detail << ", " << in.name << " " << fmt(c);
    if (c - rgb > best_gain) {
      best_gain = c - rgb;
      best = in.name;
    }
  }
  o.expect(best_gain >= 0, "no fused input reaches the 3ch CIDEr (" + detail.str() + ")");
  o.note(detail.str() + "; best " + best);
}

// -------------------------------------------------------------- determinism

struct CliResult {
  int code;
  std::string out, err;
};

CliResult call(std::vector<std::string> args) {
  args.insert(args.begin(), "edgecap");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

void determinism(Outcome& o) {
  const fs::path dir = scratch_root() / "determinism";
  fs::create_directories(dir);
  spit(dir / "model.json",
       "{\"encoder_layers\": 1, \"encoder_heads\": 4, \"decoder_layers\": 1, \"decoder_heads\": 2, \"model_dim\": 16}\n");
  spit(dir / "teacher.cfg", "seed = 11\nepochs = 1\nbatch = 4\nlr = 0.003\nprf = 1\n");
  spit(dir / "student.cfg", "seed = 11\nepochs = 1\nbatch = 4\nlr = 0.003\nprf = 2\n");
  const std::vector<std::string> files = {"data/manifest.json", "data/annotations.jsonl", "data/images/00003.ppm",
                                          "teacher.bin",        "teacher.json",           "teacher.vocab.json",
                                          "student.bin",        "student.json",           "eval.json"};
  std::vector<std::vector<std::string>> runs;
  const fs::path cwd = fs::current_path();
  for (int i = 0; i < 2; ++i) {
    const fs::path d = dir / ("run" + std::to_string(i));
    fs::create_directories(d);
    fs::current_path(d);
    std::vector<std::string> outputs;
    auto step = [&](const std::string& what, std::vector<std::string> args) {
      const auto r = call(std::move(args));
      o.expect(r.code == cli::kExitOk, what + " exited " + std::to_string(r.code) + ": " + r.err);
      outputs.push_back(what + ":" + r.out);
      return r;
    };
    step("synth", {"synth", "--n", "24", "--seed", "5", "--out", "data"});
    step("train teacher", {"train", "--data", "data", "--mode", "bare", "--config", (dir / "teacher.cfg").string(),
                           "--model-config", (dir / "model.json").string(), "--out", "teacher.bin", "--report",
                           "teacher.json"});
    step("train student", {"train", "--data", "data", "--mode", "distil", "--teacher", "teacher.bin", "--config",
                           (dir / "student.cfg").string(), "--out", "student.bin", "--report", "student.json"});
    const auto greedy = step("caption greedy", {"caption", "--weights", "student.bin", "--spec", "student.spec.json",
                                                "--config", "student.config.json", "--image", "data/images/00000.ppm"});
    step("caption beam", {"caption", "--weights", "teacher.bin", "--spec", "teacher.spec.json", "--config",
                          "teacher.config.json", "--image", "data/images/00001.ppm", "--beam", "3"});
    std::string text = greedy.out;
    while (!text.empty() && text.back() == '\n') text.pop_back();
    spit("cands.jsonl", nlohmann::json{{"image", "images/00000.ppm"}, {"captions", {text}}}.dump() + "\n");
    const std::string ann = slurp("data/annotations.jsonl");
    spit("refs.jsonl", ann.substr(0, ann.find('\n') + 1));
    step("eval", {"eval", "--candidates", "cands.jsonl", "--references", "refs.jsonl", "--out", "eval.json"});
    for (const auto& f : files) outputs.push_back(f + ":" + slurp(f));
    fs::current_path(cwd);
    runs.push_back(std::move(outputs));
  }
  std::size_t bytes = 0;
  for (std::size_t k = 0; k < runs[0].size(); ++k) {
    o.expect(runs[0][k] == runs[1][k], "output differs: " + runs[0][k].substr(0, runs[0][k].find(':')));
    bytes += runs[0][k].size();
  }
  o.expect(bytes > 10000, "outputs are suspiciously small");
  o.note(std::to_string(runs[0].size()) + " outputs, " + std::to_string(bytes) + " bytes compared");
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* title;
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient integrity", gradients},
      {2, "PRF correctness", prf},
      {3, "edge detectors", edges},
      {4, "metric oracle equivalence", metric_checks},
      {5, "distillation direction", distillation},
      {6, "edge-fusion direction", fusion},
      {7, "determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  std::vector<std::string> summary;
  bool all = true;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.expect(false, std::string("exception: ") + e.what());
    }
    std::ostringstream line;
    line << (o.passed() ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.title << " (" << o.checks()
         << " checks)";
    for (const auto& n : o.notes()) line << "\n     " << n;
    for (const auto& f : o.failures()) line << "\n     failed: " << f;
    std::cout << line.str() << std::endl;
    summary.push_back(line.str().substr(0, line.str().find('\n')));
    all = all && o.passed();
  }
  std::cout << "\nsummary\n";
  for (const auto& s : summary) std::cout << s << "\n";
  return all ? 0 : 1;
}

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "edgecap/cli/app.hpp"
#include "edgecap/cli/table.hpp"
#include "edgecap/edge/image.hpp"
#include "edgecap/error.hpp"
#include "edgecap/netspec/spec.hpp"
#include "edgecap/tensor/rng.hpp"
#include "edgecap/tensor/weights.hpp"

using namespace edgecap;
using namespace edgecap::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "edgecap");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("edgecap_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::string toy_spec() { return std::string(EDGECAP_SOURCE_DIR) + "/configs/backbone_toy.json"; }

}  // namespace

TEST_CASE("every subcommand documents every flag it accepts") {
  const auto flags = subcommand_flags();
  const std::map<std::string, std::vector<std::string>> documented = {
      {"synth", {"--n", "--seed", "--out"}},
      {"edge", {"--method", "--in", "--out", "--sigma", "--low", "--high"}},
      {"fuse", {"--in", "--method", "--out"}},
      {"prf-reduce", {"--spec", "--weights", "--prf", "--out-spec", "--out-weights"}},
      {"params", {"--spec", "--prf"}},
      {"train", {"--data", "--prf", "--mode", "--teacher", "--config", "--out", "--report"}},
      {"caption", {"--weights", "--spec", "--config", "--image", "--edge", "--beam"}},
      {"eval", {"--candidates", "--references", "--out"}},
      {"bench", {"--seeds"}},
  };
  CHECK(flags.size() == documented.size());
  for (const auto& [name, required] : documented) {
    CAPTURE(name);
    REQUIRE(flags.count(name) == 1);
    const std::set<std::string> accepted(flags.at(name).begin(), flags.at(name).end());
    for (const auto& f : required) CHECK(accepted.count(f) == 1);
    const Result help = call({name, "--help"});
    CHECK(help.code == kExitOk);
    for (const auto& f : flags.at(name)) {
      CAPTURE(f);
      CHECK(help.out.find(f) != std::string::npos);
    }
  }
}

TEST_CASE("usage errors exit with 1") {
  Result r = call({"frobnicate"});
  CHECK(r.code == kExitUserError);
  CHECK(r.err.find("unknown subcommand") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(r.out.empty());
  CHECK(call({}).code == kExitUserError);
  r = call({"params", "--spec", toy_spec(), "--bogus"});
  CHECK(r.code == kExitUserError);
  CHECK(r.out.empty());
  CHECK(call({"params"}).code == kExitUserError);
  CHECK(call({"params", "--spec", "/nonexistent/spec.json"}).code == kExitUserError);
  CHECK(call({"params", "--spec", toy_spec(), "--prf", "5..1"}).code == kExitUserError);
  CHECK(call({"edge", "--method", "prewitt", "--in", "x.ppm", "--out", "y.pgm"}).code == kExitUserError);
  CHECK(call({"train", "--data", "/nonexistent", "--mode", "sideways", "--out", "w.bin"}).code == kExitUserError);
  CHECK(call({"--help"}).code == kExitOk);
}

TEST_CASE("params table") {
  const fs::path dir = scratch("params");
  const Result r = call({"params", "--spec", toy_spec(), "--prf", "1..5", "--json", (dir / "p.json").string()});
  REQUIRE(r.code == kExitOk);
  const auto j = nlohmann::json::parse(slurp(dir / "p.json"));
  REQUIRE(j["rows"].size() == 5);
  double prev = 1e300;
  for (const auto& row : j["rows"]) {
    const double n = row["values"]["Parameters"];
    CHECK(n < prev);
    prev = n;
  }
  CHECK(j["rows"][1]["values"]["Ratio"].get<double>() < 0.5);
  // Text rows carry the same numbers at printed precision.
  std::istringstream text(r.out);
  std::string line;
  std::getline(text, line);  // title
  std::getline(text, line);  // header
  CHECK(line.find("Parameters") < line.find("Ratio"));
  std::getline(text, line);  // rule
  for (const auto& row : j["rows"]) {
    REQUIRE(std::getline(text, line));
    std::istringstream fields(line);
    std::string label;
    double n = 0, ratio = 0;
    fields >> label >> n >> ratio;
    CHECK(label == row["label"].get<std::string>());
    CHECK(n == row["values"]["Parameters"].get<double>());
    CHECK(std::abs(ratio - row["values"]["Ratio"].get<double>()) <= 5e-5);
  }
  CHECK(call({"params", "--spec", toy_spec(), "--prf", "2,4"}).out.find("\n4 ") != std::string::npos);
}

TEST_CASE("emit_table") {
  Table t = metric_table("t", {});
  CHECK_THROWS_AS(emit_table(t), ContractError);
  metrics::MetricReport m{0.9, 0.8, 0.7, 0.6, 0.55, 0.65, 1.23456789};
  t = metric_table("Demo", {{"row one", m}});
  const auto r = emit_table(t);
  const std::vector<std::string> order{"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr"};
  CHECK(t.columns == order);
  std::size_t at = 0;
  for (const auto& c : order) {
    const auto p = r.text.find(c, at);
    REQUIRE(p != std::string::npos);
    at = p + c.size();
  }
  CHECK(r.text.find("1.2346") != std::string::npos);
  const auto j = nlohmann::ordered_json::parse(r.json);
  CHECK(j["rows"][0]["values"]["CIDEr"].get<double>() == 1.23456789);
  std::vector<std::string> keys;
  for (auto it = j["rows"][0]["values"].begin(); it != j["rows"][0]["values"].end(); ++it) keys.push_back(it.key());
  CHECK(keys == order);
  CHECK(j["columns"].get<std::vector<std::string>>() == order);
  t.rows[0].values.pop_back();
  CHECK_THROWS_AS(emit_table(t), ContractError);
}

TEST_CASE("eval subcommand") {
  const fs::path dir = scratch("eval");
  spit(dir / "refs.jsonl",
       "{\"image\": \"a\", \"captions\": [\"a red square\", \"one red square\"]}\n"
       "{\"image\": \"b\", \"captions\": [\"two blue circles\"]}\n");
  spit(dir / "cands.jsonl",
       "{\"image\": \"b\", \"captions\": [\"two blue circles\"]}\n"
       "{\"image\": \"a\", \"captions\": [\"a red square\"]}\n");
  const std::vector<std::string> args{"eval", "--candidates", (dir / "cands.jsonl").string(), "--references",
                                      (dir / "refs.jsonl").string(), "--out", (dir / "r.json").string()};
  Result r = call(args);
  REQUIRE(r.code == kExitOk);
  const auto j = nlohmann::json::parse(slurp(dir / "r.json"));
  CHECK(j["rows"][0]["values"]["BLEU-1"].get<double>() == doctest::Approx(1.0));
  CHECK(j["rows"][0]["values"]["ROUGE-L"].get<double>() == doctest::Approx(1.0));
  const std::string first = slurp(dir / "r.json");
  CHECK(call(args).out == r.out);
  CHECK(slurp(dir / "r.json") == first);

  spit(dir / "two.jsonl", "{\"image\": \"a\", \"captions\": [\"x\", \"y\"]}\n{\"image\": \"b\", \"captions\": [\"z\"]}\n");
  r = call({"eval", "--candidates", (dir / "two.jsonl").string(), "--references", (dir / "refs.jsonl").string()});
  CHECK(r.code == kExitUserError);
  spit(dir / "short.jsonl", "{\"image\": \"a\", \"captions\": [\"a red square\"]}\n");
  r = call({"eval", "--candidates", (dir / "short.jsonl").string(), "--references", (dir / "refs.jsonl").string()});
  CHECK(r.code == kExitUserError);
  CHECK(r.err.find("image b") != std::string::npos);
}

TEST_CASE("edge, fuse and prf-reduce subcommands") {
  const fs::path dir = scratch("edge");
  edge::RgbImage img(12, 10, 0.2);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 10; ++y) {
      for (std::size_t x = 6; x < 12; ++x) img.at(c, y, x) = 0.9;
    }
  }
  edge::write_ppm(dir / "step.ppm", img);
  edge::write_ppm(dir / "flat.ppm", edge::RgbImage(12, 10, 0.5));
  for (const char* m : {"canny", "sobel", "laplacian"}) {
    CAPTURE(m);
    REQUIRE(call({"edge", "--method", m, "--in", (dir / "flat.ppm").string(), "--out", (dir / "flat.pgm").string()}).code ==
            kExitOk);
    for (double v : edge::read_pgm(dir / "flat.pgm").data) CHECK(v == 0);
    REQUIRE(call({"edge", "--method", m, "--in", (dir / "step.ppm").string(), "--out", (dir / "e.pgm").string()}).code ==
            kExitOk);
    const auto e = edge::read_pgm(dir / "e.pgm");
    CHECK(*std::max_element(e.data.begin(), e.data.end()) > 0);
  }
  CHECK(call({"edge", "--method", "canny", "--in", (dir / "step.ppm").string(), "--out", (dir / "e.pgm").string(), "--low",
              "0.5", "--high", "0.2"})
            .code == kExitUserError);

  REQUIRE(call({"fuse", "--in", (dir / "step.ppm").string(), "--method", "sobel", "--out", (dir / "f.bin").string()}).code ==
          kExitOk);
  const auto fused = load_weights<float>(dir / "f.bin");
  CHECK(fused.at("fused").shape() == Shape{6, 10, 12});

  // The tensor file has no backbone entries.
  const Result bad = call({"prf-reduce", "--spec", toy_spec(), "--weights", (dir / "f.bin").string(), "--prf", "2",
                           "--out-spec", (dir / "s.json").string(), "--out-weights", (dir / "w.bin").string()});
  CHECK(bad.code == kExitUserError);

  const auto spec = netspec::load_spec(toy_spec());
  WeightStore<double> w;
  Rng rng(3);
  netspec::init_weights(spec, w, rng);
  save_weights(dir / "full.bin", w);
  auto reduce = [&](const char* prf) {
    return call({"prf-reduce", "--spec", toy_spec(), "--weights", (dir / "full.bin").string(), "--prf", prf, "--out-spec",
                 (dir / "s.json").string(), "--out-weights", (dir / "w.bin").string()});
  };
  REQUIRE(reduce("1").code == kExitOk);
  CHECK(load_weights<double>(dir / "w.bin") == w);
  CHECK(netspec::load_spec(dir / "s.json") == spec);
  REQUIRE(reduce("2").code == kExitOk);
  const auto reduced = netspec::load_spec(dir / "s.json");
  CHECK(netspec::validate(reduced).empty());
  CHECK(netspec::count_params(reduced) < netspec::count_params(spec));
  CHECK(load_weights<double>(dir / "w.bin").total_params() == netspec::count_params(reduced));
  CHECK(reduce("0").code == kExitUserError);
}

TEST_CASE("synth, train, caption and eval are byte-identical across runs") {
  const fs::path dir = scratch("determinism");
  spit(dir / "model.json",
       "{\"encoder_layers\": 1, \"encoder_heads\": 4, \"decoder_layers\": 1, \"decoder_heads\": 2, \"model_dim\": 16}\n");
  spit(dir / "teacher.cfg", "seed = 4\nepochs = 1\nbatch = 4\nlr = 0.003\nprf = 1\n");
  spit(dir / "student.cfg", "seed = 4\nepochs = 1\nbatch = 4\nlr = 0.003\nprf = 2\nchannels = 3\n");
  std::vector<std::string> outputs;
  for (int run_index = 0; run_index < 2; ++run_index) {
    const fs::path d = dir / ("run" + std::to_string(run_index));
    fs::create_directories(d);
    const Result s = call({"synth", "--n", "20", "--seed", "9", "--out", (d / "data").string()});
    REQUIRE(s.code == kExitOk);
    // Relative output names keep the report's weights field identical.
    const fs::path cwd = fs::current_path();
    fs::current_path(d);
    const Result t = call({"train", "--data", "data", "--mode", "bare", "--config", (dir / "teacher.cfg").string(),
                           "--model-config", (dir / "model.json").string(), "--out", "teacher.bin", "--report",
                           "teacher.json"});
    const Result st = call({"train", "--data", "data", "--mode", "distil", "--teacher", "teacher.bin", "--config",
                            (dir / "student.cfg").string(), "--out", "student.bin", "--report", "student.json"});
    const Result c = call({"caption", "--weights", "student.bin", "--spec", "student.spec.json", "--config",
                           "student.config.json", "--image", "data/images/00000.ppm"});
    const Result cb = call({"caption", "--weights", "teacher.bin", "--spec", "teacher.spec.json", "--config",
                            "teacher.config.json", "--image", "data/images/00001.ppm", "--beam", "3"});
    fs::current_path(cwd);
    REQUIRE(t.code == kExitOk);
    REQUIRE(st.code == kExitOk);
    REQUIRE(c.code == kExitOk);
    REQUIRE(cb.code == kExitOk);
    spit(d / "cands.jsonl", "{\"image\": \"images/00000.ppm\", \"captions\": [" + nlohmann::json(c.out.substr(0, c.out.size() - 1)).dump() + "]}\n");
    const std::string refs = slurp(d / "data" / "annotations.jsonl").substr(0, slurp(d / "data" / "annotations.jsonl").find('\n') + 1);
    spit(d / "refs.jsonl", refs);
    const Result e = call({"eval", "--candidates", (d / "cands.jsonl").string(), "--references", (d / "refs.jsonl").string(),
                           "--out", (d / "eval.json").string()});
    REQUIRE(e.code == kExitOk);
    std::string all = s.out + t.out + st.out + c.out + cb.out + e.out;
    for (const char* f : {"data/manifest.json", "data/annotations.jsonl", "data/images/00007.ppm", "teacher.bin",
                          "teacher.json", "teacher.vocab.json", "teacher.spec.json", "teacher.config.json", "student.bin",
                          "student.json", "student.spec.json", "eval.json"}) {
      all += std::string(f) + ":" + slurp(d / f);
    }
    outputs.push_back(all);
  }
  CHECK(outputs[0] == outputs[1]);
  CHECK(outputs[0].size() > 10000);
}

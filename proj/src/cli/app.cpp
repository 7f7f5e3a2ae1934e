#include "edgecap/cli/app.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <memory>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "edgecap/cli/bench.hpp"
#include "edgecap/cli/table.hpp"
#include "edgecap/data/synth.hpp"
#include "edgecap/error.hpp"
#include "edgecap/train/distill.hpp"

namespace edgecap::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Sidecar files of a trained model: W.bin -> W.spec.json, W.config.json,
// W.vocab.json.
fs::path sidecar(fs::path weights, const char* kind) { return weights.replace_extension(std::string(".") + kind + ".json"); }

// "3", "1..5" or "1,2,4".
std::vector<std::size_t> parse_prf_list(const std::string& text) {
  auto number = [&](std::string_view s) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || v == 0) {
      throw ConfigError("--prf: expected a positive integer, a range a..b or a list, got '" + text + "'");
    }
    return v;
  };
  std::vector<std::size_t> out;
  if (auto dots = text.find(".."); dots != std::string::npos) {
    const std::size_t a = number(std::string_view(text).substr(0, dots));
    const std::size_t b = number(std::string_view(text).substr(dots + 2));
    if (a > b) throw ConfigError("--prf: empty range '" + text + "'");
    for (std::size_t k = a; k <= b; ++k) out.push_back(k);
    return out;
  }
  std::string_view rest(text);
  for (;;) {
    const auto comma = rest.find(',');
    out.push_back(number(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

struct SplitRecords {
  std::vector<data::AnnotationRecord> train, val;
};

SplitRecords load_split(const fs::path& dir) {
  const auto manifest = data::load_manifest(dir);
  const auto records = data::load_annotations(dir / data::kAnnotationsFile);
  std::map<std::string, const data::AnnotationRecord*> by_image;
  for (const auto& r : records) by_image[r.image] = &r;
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<data::AnnotationRecord> out;
    for (const auto& id : ids) {
      auto it = by_image.find(id);
      if (it == by_image.end()) throw SchemaError("manifest image " + id + " has no annotation record");
      out.push_back(*it->second);
    }
    return out;
  };
  return {pick(manifest.split.train), pick(manifest.split.val)};
}

// Options and handlers of every subcommand. Values are bound to members so
// a fresh instance parses each command line.
class Commands {
 public:
  Commands(std::ostream& out, std::ostream& err) : out_(out), err_(err) {
    app_.name("edgecap");
    app_.description("Lightweight edge-aware image captioning toolkit");
    app_.require_subcommand(1);
    app_.fallthrough(false);
    add_synth();
    add_edge();
    add_fuse();
    add_prf_reduce();
    add_params();
    add_train();
    add_caption();
    add_eval();
    add_bench();
  }

  CLI::App& app() { return app_; }

  void execute() {
    for (CLI::App* sub : app_.get_subcommands()) handlers_.at(sub->get_name())();
  }

 private:
  CLI::App* sub(const std::string& name, const std::string& description, std::function<void()> handler) {
    CLI::App* s = app_.add_subcommand(name, description);
    handlers_[name] = std::move(handler);
    return s;
  }

  void add_synth() {
    auto* s = sub("synth", "Generate the synthetic captioning dataset", [this] {
      out_ << data::generate_dataset(synth_.n, synth_.seed, synth_.out) << "\n";
    });
    s->add_option("--n", synth_.n, "Number of images")->capture_default_str();
    s->add_option("--seed", synth_.seed, "Dataset seed")->capture_default_str();
    s->add_option("--out", synth_.out, "Output directory")->required();
  }

  edge::EdgeConfig edge_config() const {
    edge::EdgeConfig c;
    c.method = edge::parse_method(edge_.method);
    if (edge_.sigma) {
      c.gaussian_sigma = *edge_.sigma;
      c.log_sigma = *edge_.sigma;
    }
    if (edge_.low) c.canny_low = *edge_.low;
    if (edge_.high) c.canny_high = *edge_.high;
    c.validate();
    return c;
  }

  void add_edge() {
    auto* s = sub("edge", "Detect edges in a PPM image and write a PGM map", [this] {
      const auto cfg = edge_config();
      edge::write_pgm(edge_.out, edge::detect(edge::read_ppm(edge_.in), cfg));
    });
    s->add_option("--method", edge_.method, "canny, sobel or laplacian")->required();
    s->add_option("--in", edge_.in, "Input PPM")->required();
    s->add_option("--out", edge_.out, "Output PGM")->required();
    s->add_option("--sigma", edge_.sigma, "Gaussian sigma (canny) or LoG sigma (laplacian)");
    s->add_option("--low", edge_.low, "Canny low threshold, fraction of the peak gradient");
    s->add_option("--high", edge_.high, "Canny high threshold, fraction of the peak gradient");
  }

  void add_fuse() {
    auto* s = sub("fuse", "Write the 6-channel fused input tensor of a PPM image", [this] {
      edge::EdgeConfig cfg;
      cfg.method = edge::parse_method(fuse_.method);
      const auto img = edge::read_ppm(fuse_.in);
      WeightStore<float> store;
      store.set("fused", edge::fuse_six<float>(img, edge::detect(img, cfg)));
      save_weights(fuse_.out, store);
    });
    s->add_option("--in", fuse_.in, "Input PPM")->required();
    s->add_option("--method", fuse_.method, "canny, sobel or laplacian")->required();
    s->add_option("--out", fuse_.out, "Output tensor file (entry 'fused', [6 x H x W])")->required();
  }

  void add_prf_reduce() {
    auto* s = sub("prf-reduce", "Shrink a backbone spec and interpolate its weights", [this] {
      if (prf_.prf == 0) throw ConfigError("--prf must be at least 1");
      const auto spec = netspec::load_spec(prf_.spec);
      const auto weights = load_weights<double>(prf_.weights);
      const auto reduced = netspec::apply_prf(spec, weights, netspec::ReductionConfig{prf_.prf});
      netspec::save_spec(prf_.out_spec, reduced.spec);
      save_weights(prf_.out_weights, reduced.weights);
      out_ << "parameters " << netspec::count_params(spec) << " -> " << netspec::count_params(reduced.spec) << "\n";
    });
    s->add_option("--spec", prf_.spec, "Backbone spec JSON")->required();
    s->add_option("--weights", prf_.weights, "Backbone weights")->required();
    s->add_option("--prf", prf_.prf, "Parameter reduction factor")->required();
    s->add_option("--out-spec", prf_.out_spec, "Reduced spec JSON")->required();
    s->add_option("--out-weights", prf_.out_weights, "Reduced weights")->required();
  }

  void add_params() {
    auto* s = sub("params", "Table of backbone parameter counts per PRF", [this] {
      const auto spec = netspec::load_spec(params_.spec);
      const double base = static_cast<double>(netspec::count_params(spec));
      Table t;
      t.title = "Backbone parameters by PRF";
      t.label_header = "PRF";
      t.columns = {"Parameters", "Ratio"};
      t.precision = {0, 4};
      for (std::size_t k : parse_prf_list(params_.prf)) {
        const auto n = static_cast<double>(netspec::count_params(netspec::reduce_spec(spec, {k})));
        t.rows.push_back({std::to_string(k), {n, n / base}});
      }
      emit(t, params_.json);
    });
    s->add_option("--spec", params_.spec, "Backbone spec JSON")->required();
    s->add_option("--prf", params_.prf, "PRF value, range a..b or list a,b,c")->capture_default_str();
    s->add_option("--json", params_.json, "Write the table as JSON here");
  }

  void emit(const Table& t, const std::string& json_path) {
    const auto r = emit_table(t);
    out_ << r.text;
    if (!json_path.empty()) write_text(json_path, r.json);
  }

  void train() {
    train::TrainSettings settings;
    if (!train_.config.empty()) settings = train::load_train_settings(train_.config);
    train::DistillConfig cfg = settings.distill;
    if (train_.prf) cfg.prf = *train_.prf;
    if (train_.mode == "bare") {
      cfg.alpha = 1.0;
    } else if (train_.mode == "distil") {
      if (train_.teacher.empty()) throw ConfigError("--mode distil needs --teacher");
      if (cfg.alpha >= 1.0) throw ConfigError("--mode distil needs alpha < 1 in the train config");
    } else {
      throw ConfigError("--mode must be bare or distil, got '" + train_.mode + "'");
    }
    cfg.validate();

    const SplitRecords split = load_split(train_.data);
    std::optional<captioner::Model<float>> teacher;
    data::Vocabulary vocab;
    if (!train_.teacher.empty()) {
      teacher.emplace(captioner::Model<float>{captioner::load_config(sidecar(train_.teacher, "config")),
                                              netspec::load_spec(sidecar(train_.teacher, "spec")),
                                              load_weights<float>(train_.teacher)});
      captioner::check_compatible(teacher->config, teacher->backbone);
      vocab = data::Vocabulary::load(sidecar(train_.teacher, "vocab"));
      if (teacher->config.input_channels != settings.input.channels) {
        throw ConfigError("teacher takes " + std::to_string(teacher->config.input_channels) +
                          " input channels but the train config asks for " + std::to_string(settings.input.channels));
      }
    } else {
      std::vector<std::string> captions;
      for (const auto& r : split.train) captions.insert(captions.end(), r.captions.begin(), r.captions.end());
      vocab = data::Vocabulary::build(captions);
    }

    captioner::Model<float> student;
    if (teacher) {
      student = train::make_student(*teacher, cfg.prf);
    } else {
      // Vocabulary size and input channels come from the data and train config.
      nlohmann::json j = nlohmann::json::object();
      if (!train_.model_config.empty()) {
        try {
          j = nlohmann::json::parse(read_text(train_.model_config));
        } catch (const nlohmann::json::parse_error& e) {
          throw ParseError(train_.model_config.string() + ": " + e.what());
        }
        if (!j.is_object()) throw SchemaError(train_.model_config.string() + ": expected a JSON object");
      }
      j["vocab_size"] = vocab.size();
      j["input_channels"] = settings.input.channels;
      const captioner::CaptionerConfig mc = captioner::config_from_json(j.dump());
      const auto base = captioner::init_model<float>(mc, netspec::default_backbone(mc.input_channels, mc.model_dim), cfg.seed);
      student = train::make_student(base, cfg.prf);
    }

    err_ << "train: " << split.train.size() << " training and " << split.val.size() << " validation images\n";
    const auto train_set = train::make_examples<float>(train_.data, split.train, vocab, settings.input);
    const auto val_set = train::make_examples<float>(train_.data, split.val, vocab, settings.input);
    auto report = train::train_model<float>(student, teacher ? &*teacher : nullptr, train_set, val_set, cfg, vocab);
    report.weights = train_.out.string();

    save_weights(train_.out, student.weights);
    netspec::save_spec(sidecar(train_.out, "spec"), student.backbone);
    captioner::save_config(sidecar(train_.out, "config"), student.config);
    vocab.save(sidecar(train_.out, "vocab"));
    if (!train_.report.empty()) write_text(train_.report, report.to_json());

    std::vector<std::pair<std::string, metrics::MetricReport>> rows;
    for (std::size_t e = 0; e < report.epochs.size(); ++e) rows.emplace_back("epoch " + std::to_string(e + 1), report.epochs[e].val);
    const auto t = metric_table(std::string(report.mode == "bare" ? "Bare" : "Distilled") + " training, PRF " +
                                    std::to_string(cfg.prf) + ", validation metrics",
                                rows);
    out_ << emit_table(t).text;
  }

  void add_train() {
    auto* s = sub("train", "Train a captioner, bare or distilled from a teacher", [this] { train(); });
    s->add_option("--data", train_.data, "Dataset directory (manifest.json, annotations.jsonl, images/)")->required();
    s->add_option("--mode", train_.mode, "bare or distil")->required();
    s->add_option("--prf", train_.prf, "Student PRF (overrides the train config)");
    s->add_option("--teacher", train_.teacher, "Teacher weights; its .spec/.config/.vocab.json sidecars are read too");
    s->add_option("--config", train_.config, "train.cfg with key = value lines");
    s->add_option("--model-config", train_.model_config, "Captioner config JSON for a model trained from scratch (vocab_size and input_channels are filled in)");
    s->add_option("--out", train_.out, "Output weights; sidecars are written next to it")->required();
    s->add_option("--report", train_.report, "Training report JSON");
  }

  void add_caption() {
    auto* s = sub("caption", "Caption one image", [this] {
      captioner::Model<float> m{captioner::load_config(caption_.config), netspec::load_spec(caption_.spec),
                                load_weights<float>(caption_.weights)};
      captioner::check_compatible(m.config, m.backbone);
      const auto vocab =
          data::Vocabulary::load(caption_.vocab.empty() ? sidecar(caption_.weights, "vocab") : fs::path(caption_.vocab));
      if (vocab.size() != m.config.vocab_size) throw ConfigError("vocabulary size does not match the model config");
      train::InputSpec in;
      if (!caption_.edge.empty()) {
        in.channels = 6;
        in.edges.method = edge::parse_method(caption_.edge);
      }
      if (in.channels != m.config.input_channels) {
        throw ConfigError("model expects " + std::to_string(m.config.input_channels) + " input channels; " +
                          (in.channels == 3 ? "pass --edge for a fused model" : "drop --edge for an RGB model"));
      }
      const auto image = train::make_input<float>(edge::read_ppm(caption_.image), in);
      const auto result = caption_.beam ? captioner::generate_beam(m, image, *caption_.beam, &vocab)
                                        : captioner::generate_greedy(m, image, &vocab);
      out_ << result.text << "\n";
    });
    s->add_option("--weights", caption_.weights, "Model weights")->required();
    s->add_option("--spec", caption_.spec, "Backbone spec JSON")->required();
    s->add_option("--config", caption_.config, "Captioner config JSON")->required();
    s->add_option("--image", caption_.image, "Input PPM")->required();
    s->add_option("--edge", caption_.edge, "Edge method for a 6-channel model");
    s->add_option("--beam", caption_.beam, "Beam width (greedy when omitted)");
    s->add_option("--vocab", caption_.vocab, "Vocabulary JSON (default: the weights' .vocab.json sidecar)");
  }

  void add_eval() {
    auto* s = sub("eval", "Score candidate captions against references", [this] {
      const auto cands = data::load_annotations(eval_.candidates, data::CaptionCount{1, 1});
      const auto refs = data::load_annotations(eval_.references, data::CaptionCount{1, SIZE_MAX});
      std::map<std::string, std::string> by_image;
      for (const auto& c : cands) {
        if (!by_image.emplace(c.image, c.captions[0]).second) throw SchemaError("candidates: duplicate image " + c.image);
      }
      std::vector<std::string> cand_text;
      std::vector<std::vector<std::string>> ref_text;
      for (const auto& r : refs) {
        auto it = by_image.find(r.image);
        if (it == by_image.end()) throw SchemaError("candidates: no caption for image " + r.image);
        cand_text.push_back(it->second);
        ref_text.push_back(r.captions);
        by_image.erase(it);
      }
      if (!by_image.empty()) throw SchemaError("references: no captions for image " + by_image.begin()->first);
      const auto report = metrics::evaluate_all(metrics::make_corpus(cand_text, ref_text));
      emit(metric_table("Caption metrics over " + std::to_string(refs.size()) + " images", {{"candidates", report}}),
           eval_.out);
    });
    s->add_option("--candidates", eval_.candidates, "JSON-lines, one caption per image")->required();
    s->add_option("--references", eval_.references, "JSON-lines, reference captions per image")->required();
    s->add_option("--out", eval_.out, "Write the report JSON here");
  }

  void add_bench() {
    auto* s = sub("bench", "Bare vs distilled students and RGB vs fused inputs over several seeds", [this] {
      BenchConfig c = bench_;
      if (!bench_inputs_.empty()) {
        c.inputs.clear();
        for (const auto& name : bench_inputs_) c.inputs.push_back(bench_input(name));
      }
      c.encoder_layers = c.decoder_layers = bench_layers_;
      const BenchResult r = run_bench(c, &err_);
      out_ << emit_table(r.table()).text;
      err_ << "bench: finished in " << static_cast<long>(r.wall_seconds) << " s\n";
      if (!bench_out_.empty()) write_text(bench_out_, r.to_json());
    });
    bench_.data_dir = "bench_data";
    s->add_option("--seeds", bench_.seeds, "Number of seeds (1..N)")->capture_default_str();
    s->add_option("--data", bench_.data_dir, "Dataset directory, generated when missing")->capture_default_str();
    s->add_option("--n", bench_.dataset_size, "Images to generate")->capture_default_str();
    s->add_option("--data-seed", bench_.dataset_seed, "Dataset seed")->capture_default_str();
    s->add_option("--val", bench_.val_images, "Validation images used")->capture_default_str();
    s->add_option("--layers", bench_layers_, "Encoder and decoder layers")->capture_default_str();
    s->add_option("--teacher-epochs", bench_.teacher_epochs, "Teacher epochs")->capture_default_str();
    s->add_option("--student-epochs", bench_.student_epochs, "Student epochs")->capture_default_str();
    s->add_option("--lr", bench_.lr, "Adam learning rate")->capture_default_str();
    s->add_option("--batch", bench_.batch, "Batch size")->capture_default_str();
    s->add_option("--prf", bench_.prf, "Student PRF")->capture_default_str();
    s->add_option("--temperature", bench_.temperature, "Distillation temperature")->capture_default_str();
    s->add_option("--alpha", bench_.alpha, "Hard-label weight of the distilled student")->capture_default_str();
    s->add_option("--inputs", bench_inputs_, "Subset of 3ch, 6ch-canny, 6ch-sobel, 6ch-laplacian");
    s->add_option("--out", bench_out_, "Write the full report JSON here");
  }

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_;
  std::map<std::string, std::function<void()>> handlers_;

  struct {
    std::size_t n = 500;
    std::uint64_t seed = 7;
    std::string out;
  } synth_;
  struct {
    std::string method, in, out;
    std::optional<double> sigma, low, high;
  } edge_;
  struct {
    std::string in, method, out;
  } fuse_;
  struct {
    std::string spec, weights, out_spec, out_weights;
    std::size_t prf = 0;
  } prf_;
  struct {
    std::string spec, prf = "1..5", json;
  } params_;
  struct {
    fs::path data, teacher, config, model_config, out, report;
    std::string mode;
    std::optional<std::size_t> prf;
  } train_;
  struct {
    std::string weights, spec, config, image, edge, vocab;
    std::optional<std::size_t> beam;
  } caption_;
  struct {
    std::string candidates, references, out;
  } eval_;
  BenchConfig bench_;
  std::size_t bench_layers_ = BenchConfig{}.encoder_layers;
  std::vector<std::string> bench_inputs_;
  std::string bench_out_;
};

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  Commands cmds(out, err);
  CLI::App& app = cmds.app();
  if (argv.size() > 1 && !argv[1].starts_with("-") && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    err << "error: unknown subcommand '" << argv[1] << "'\n" << app.help();
    return kExitUserError;
  }
  try {
    std::vector<std::string> args(argv.size() > 1 ? argv.begin() + 1 : argv.end(), argv.end());
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    CLI::App* target = &app;
    for (CLI::App* s : app.get_subcommands()) target = s;
    out << target->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUserError;
  }
  try {
    cmds.execute();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternalError;
  }
  return kExitOk;
}

std::map<std::string, std::vector<std::string>> subcommand_flags() {
  std::ostringstream sink;
  Commands cmds(sink, sink);
  std::map<std::string, std::vector<std::string>> out;
  for (const CLI::App* s : cmds.app().get_subcommands({})) {
    auto& flags = out[s->get_name()];
    for (const CLI::Option* o : s->get_options()) {
      for (const auto& name : o->get_lnames()) flags.push_back("--" + name);
    }
  }
  return out;
}

}  // namespace edgecap::cli

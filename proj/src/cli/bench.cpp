#include "edgecap/cli/bench.hpp"

#include <chrono>
#include <ostream>

#include <json.hpp>

#include "edgecap/data/synth.hpp"
#include "edgecap/error.hpp"

namespace edgecap::cli {

namespace {

nlohmann::ordered_json metrics_json(const metrics::MetricReport& r) {
  nlohmann::ordered_json j;
  const auto cols = r.columns();
  for (std::size_t i = 0; i < cols.size(); ++i) j[metrics::MetricReport::column_names()[i]] = cols[i];
  return j;
}

const char* role_title(const std::string& role) {
  if (role == "teacher") return "Teacher";
  if (role == "bare") return "Bare";
  return "Distil";
}

}  // namespace

std::vector<BenchInput> default_bench_inputs() {
  std::vector<BenchInput> out{{"3ch", {}}};
  for (edge::EdgeMethod m : {edge::EdgeMethod::Canny, edge::EdgeMethod::Sobel, edge::EdgeMethod::Laplacian}) {
    BenchInput b{std::string("6ch-") + edge::method_name(m), {}};
    b.spec.channels = 6;
    b.spec.edges.method = m;
    out.push_back(b);
  }
  return out;
}

BenchInput bench_input(const std::string& name) {
  for (auto& b : default_bench_inputs()) {
    if (b.name == name) return b;
  }
  throw ConfigError("unknown bench input '" + name + "' (expected 3ch, 6ch-canny, 6ch-sobel or 6ch-laplacian)");
}

void BenchConfig::validate() const {
  if (seeds == 0) throw ConfigError("bench: need at least one seed");
  if (dataset_size < 10) throw ConfigError("bench: dataset needs at least 10 images");
  if (val_images == 0) throw ConfigError("bench: need at least one validation image");
  if (teacher_epochs == 0 || student_epochs == 0) throw ConfigError("bench: epochs must be at least 1");
  if (inputs.empty()) throw ConfigError("bench: no inputs selected");
  if (prf < 2) throw ConfigError("bench: student prf must be at least 2");
  train::DistillConfig d;
  d.lr = lr;
  d.batch = batch;
  d.temperature = temperature;
  d.alpha = alpha;
  d.prf = prf;
  d.validate();
  if (alpha >= 1.0) throw ConfigError("bench: the distilled student needs alpha < 1");
}

metrics::MetricReport BenchResult::mean(const std::string& input, const std::string& role) const {
  std::array<double, 7> sum{};
  std::size_t n = 0;
  for (const auto& r : runs) {
    if (r.input != input || r.role != role) continue;
    const auto cols = r.final_metrics().columns();
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += cols[i];
    ++n;
  }
  if (n == 0) throw LookupError("bench: no runs for " + role + " " + input);
  for (double& v : sum) v /= static_cast<double>(n);
  return {sum[0], sum[1], sum[2], sum[3], sum[4], sum[5], sum[6]};
}

Table BenchResult::table() const {
  std::vector<std::pair<std::string, metrics::MetricReport>> rows;
  for (const auto& in : config.inputs) {
    for (const char* role : {"teacher", "bare", "distil"}) {
      std::string label = std::string(role_title(role)) + " " + in.name;
      if (std::string(role) != "teacher") label += " (PRF " + std::to_string(config.prf) + ")";
      rows.emplace_back(label, mean(in.name, role));
    }
  }
  return metric_table("Validation metrics, mean over " + std::to_string(config.seeds) + " seeds", rows);
}

std::string BenchResult::to_json() const {
  nlohmann::ordered_json j;
  j["table"] = nlohmann::ordered_json::parse(emit_table(table()).json);
  nlohmann::ordered_json c;
  c["seeds"] = config.seeds;
  c["dataset_size"] = config.dataset_size;
  c["dataset_seed"] = config.dataset_seed;
  c["val_images"] = config.val_images;
  c["encoder_layers"] = config.encoder_layers;
  c["decoder_layers"] = config.decoder_layers;
  c["teacher_epochs"] = config.teacher_epochs;
  c["student_epochs"] = config.student_epochs;
  c["lr"] = config.lr;
  c["batch"] = config.batch;
  c["prf"] = config.prf;
  c["temperature"] = config.temperature;
  c["alpha"] = config.alpha;
  auto names = nlohmann::ordered_json::array();
  for (const auto& in : config.inputs) names.push_back(in.name);
  c["inputs"] = names;
  j["config"] = c;
  auto rs = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    nlohmann::ordered_json o;
    o["input"] = r.input;
    o["role"] = r.role;
    o["seed"] = r.seed;
    o["params"] = r.params;
    o["final"] = metrics_json(r.final_metrics());
    o["report"] = nlohmann::ordered_json::parse(r.report.to_json());
    rs.push_back(o);
  }
  j["runs"] = rs;
  return j.dump(2) + "\n";
}

BenchResult run_bench(const BenchConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  if (!std::filesystem::exists(cfg.data_dir / data::kManifestFile)) {
    if (log) *log << "bench: generating " << cfg.dataset_size << " images in " << cfg.data_dir.string() << "\n";
    data::generate_dataset(cfg.dataset_size, cfg.dataset_seed, cfg.data_dir);
  }
  const data::Manifest manifest = data::load_manifest(cfg.data_dir);
  const auto records = data::load_annotations(cfg.data_dir / data::kAnnotationsFile);
  std::map<std::string, const data::AnnotationRecord*> by_image;
  for (const auto& r : records) by_image[r.image] = &r;
  auto pick = [&](const std::vector<std::string>& ids, std::size_t limit) {
    std::vector<data::AnnotationRecord> out;
    for (const auto& id : ids) {
      if (out.size() == limit) break;
      auto it = by_image.find(id);
      if (it == by_image.end()) throw SchemaError("bench: manifest image " + id + " has no annotations");
      out.push_back(*it->second);
    }
    return out;
  };
  const auto train_records = pick(manifest.split.train, manifest.split.train.size());
  const auto val_records = pick(manifest.split.val, cfg.val_images);
  if (val_records.size() < cfg.val_images) throw ConfigError("bench: validation split is smaller than val_images");

  std::vector<std::string> captions;
  for (const auto& r : train_records) captions.insert(captions.end(), r.captions.begin(), r.captions.end());
  const data::Vocabulary vocab = data::Vocabulary::build(captions);

  BenchResult result;
  result.config = cfg;
  for (const auto& in : cfg.inputs) {
    const auto train_set = train::make_examples<float>(cfg.data_dir, train_records, vocab, in.spec);
    const auto val_set = train::make_examples<float>(cfg.data_dir, val_records, vocab, in.spec);
    captioner::CaptionerConfig mc;
    mc.encoder_layers = cfg.encoder_layers;
    mc.decoder_layers = cfg.decoder_layers;
    mc.vocab_size = vocab.size();
    mc.input_channels = in.spec.channels;
    for (std::uint64_t seed = 1; seed <= cfg.seeds; ++seed) {
      auto record = [&](const std::string& role, const captioner::Model<float>& m, train::TrainReport rep) {
        BenchRun run{in.name, role, seed, m.weights.total_params(), std::move(rep)};
        if (log) {
          const auto& f = run.final_metrics();
          *log << "bench: " << role << " " << in.name << " seed " << seed << ": BLEU-1 " << f.bleu1 << ", CIDEr "
               << f.cider_d << " (" << static_cast<long>(elapsed()) << " s)\n";
        }
        result.runs.push_back(std::move(run));
      };

      train::DistillConfig d;
      d.lr = cfg.lr;
      d.batch = cfg.batch;
      d.seed = seed;
      d.temperature = cfg.temperature;
      d.prf = 1;
      d.alpha = 1.0;
      d.epochs = cfg.teacher_epochs;
      auto teacher = captioner::init_model<float>(mc, netspec::default_backbone(mc.input_channels, mc.model_dim), seed);
      auto teacher_report = train::train_model<float>(teacher, nullptr, train_set, val_set, d, vocab);
      record("teacher", teacher, std::move(teacher_report));

      d.prf = cfg.prf;
      d.epochs = cfg.student_epochs;
      for (const char* role : {"bare", "distil"}) {
        d.alpha = std::string(role) == "bare" ? 1.0 : cfg.alpha;
        auto student = train::make_student(teacher, cfg.prf);
        auto rep = train::train_model<float>(student, &teacher, train_set, val_set, d, vocab);
        record(role, student, std::move(rep));
      }
    }
  }
  result.wall_seconds = elapsed();
  return result;
}

}  // namespace edgecap::cli

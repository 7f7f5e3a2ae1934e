#include "edgecap/train/distill.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "edgecap/error.hpp"
#include "edgecap/train/adam.hpp"

namespace edgecap::train {

namespace {

constexpr std::size_t kProbeSize = 32;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename V>
V parse_number(const std::string& text, const std::string& where) {
  V v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(where + "cannot parse '" + text + "' as a number");
  return v;
}

nlohmann::ordered_json metrics_json(const metrics::MetricReport& r) {
  nlohmann::ordered_json j;
  j["bleu1"] = r.bleu1;
  j["bleu2"] = r.bleu2;
  j["bleu3"] = r.bleu3;
  j["bleu4"] = r.bleu4;
  j["meteor_lite"] = r.meteor_lite;
  j["rouge_l"] = r.rouge_l;
  j["cider_d"] = r.cider_d;
  return j;
}

// Training objective on one (image, caption) pair.
template <Real T>
class Objective {
 public:
  Objective(const captioner::Model<T>* teacher, const DistillConfig& cfg) : teacher_(teacher), cfg_(cfg) {}

  Var<T> operator()(const nn::Params<T>& p, const captioner::Model<T>& student, const std::vector<Example<T>>& set,
                    std::size_t example, std::size_t caption) {
    const Example<T>& ex = set[example];
    const auto& ids = ex.captions[caption];
    Tape<T>& tape = p.tape();
    Var<T> logits = captioner::caption_logits(p, student.config, student.backbone, tape.constant(ex.input), ids);
    const std::span<const TokenId> targets = std::span<const TokenId>(ids).subspan(1);
    if (cfg_.alpha >= 1.0) return ops::cross_entropy(logits, targets, data::kPad);
    return ops::distillation_loss(logits, teacher_logits(set, example, caption), targets, data::kPad,
                                  static_cast<T>(cfg_.temperature), static_cast<T>(cfg_.alpha));
  }

  std::size_t teacher_evaluations() const { return evaluations_; }

 private:
  // The teacher is frozen, so its logits for a given pair never change.
  const Tensor<T>& teacher_logits(const std::vector<Example<T>>& set, std::size_t example, std::size_t caption) {
    const auto key = std::make_tuple(static_cast<const void*>(&set), example, caption);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const Example<T>& ex = set[example];
    Tape<T> tape(false);
    nn::Params<T> p(tape, std::as_const(teacher_->weights));
    Tensor<T> logits = captioner::caption_logits(p, teacher_->config, teacher_->backbone, tape.constant(ex.input),
                                                 ex.captions[caption])
                           .value();
    ++evaluations_;
    return cache_.emplace(key, std::move(logits)).first->second;
  }

  const captioner::Model<T>* teacher_;
  DistillConfig cfg_;
  std::size_t evaluations_ = 0;
  std::map<std::tuple<const void*, std::size_t, std::size_t>, Tensor<T>> cache_;
};

}  // namespace

void DistillConfig::validate() const {
  if (!(temperature > 0)) throw ConfigError("distill: temperature must be positive");
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("distill: alpha must lie in [0, 1]");
  if (!(lr > 0)) throw ConfigError("distill: learning rate must be positive");
  if (epochs == 0) throw ConfigError("distill: epochs must be at least 1");
  if (batch == 0) throw ConfigError("distill: batch must be at least 1");
  if (prf == 0) throw ConfigError("distill: prf must be at least 1");
}

void InputSpec::validate() const {
  if (channels != 3 && channels != 6) throw ConfigError("input: channels must be 3 or 6");
  edges.validate();
}

TrainSettings parse_train_settings(const std::string& text) {
  TrainSettings s;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "train config line " + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "seed") s.distill.seed = parse_number<std::uint64_t>(value, where);
    else if (key == "epochs") s.distill.epochs = parse_number<std::size_t>(value, where);
    else if (key == "lr") s.distill.lr = parse_number<double>(value, where);
    else if (key == "batch") s.distill.batch = parse_number<std::size_t>(value, where);
    else if (key == "temperature") s.distill.temperature = parse_number<double>(value, where);
    else if (key == "alpha") s.distill.alpha = parse_number<double>(value, where);
    else if (key == "prf") s.distill.prf = parse_number<std::size_t>(value, where);
    else if (key == "channels") s.input.channels = parse_number<std::size_t>(value, where);
    else if (key == "edge_method") {
      try {
        s.input.edges.method = edge::parse_method(value);
      } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
      }
    } else {
      throw ConfigError(where + "unknown key '" + key + "'");
    }
  }
  s.distill.validate();
  s.input.validate();
  return s;
}

TrainSettings load_train_settings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_train_settings(ss.str());
}

template <Real T>
Tensor<T> make_input(const edge::RgbImage& img, const InputSpec& spec) {
  spec.validate();
  if (spec.channels == 3) return edge::to_tensor<T>(img);
  return edge::fuse_six<T>(img, edge::detect(img, spec.edges));
}

template <Real T>
std::vector<Example<T>> make_examples(const std::filesystem::path& dir, const std::vector<data::AnnotationRecord>& records,
                                      const data::Vocabulary& vocab, const InputSpec& input) {
  std::vector<Example<T>> out;
  for (const auto& r : records) {
    Example<T> ex;
    ex.image = r.image;
    ex.input = make_input<T>(edge::read_ppm(dir / r.image), input);
    for (const auto& c : r.captions) ex.captions.push_back(vocab.encode(c));
    ex.references = r.captions;
    out.push_back(std::move(ex));
  }
  return out;
}

std::string TrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = mode;
  j["config"] = {{"temperature", config.temperature}, {"alpha", config.alpha}, {"lr", config.lr},
                 {"epochs", config.epochs},           {"batch", config.batch}, {"seed", config.seed},
                 {"prf", config.prf}};
  j["initial_probe_loss"] = initial_probe_loss;
  auto epochs_json = nlohmann::ordered_json::array();
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    nlohmann::ordered_json r;
    r["epoch"] = e + 1;
    r["train_loss"] = epochs[e].train_loss;
    r["probe_loss"] = epochs[e].probe_loss;
    r["val"] = metrics_json(epochs[e].val);
    epochs_json.push_back(r);
  }
  j["epochs"] = epochs_json;
  j["teacher_evaluations"] = teacher_evaluations;
  j["weights"] = weights;
  return j.dump(2) + "\n";
}

template <Real T>
metrics::MetricReport evaluate_model(const captioner::Model<T>& m, const std::vector<Example<T>>& examples,
                                     const data::Vocabulary& vocab, std::vector<std::string>* captions) {
  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
  for (const auto& ex : examples) {
    cands.push_back(captioner::generate_greedy(m, ex.input, &vocab).text);
    refs.push_back(ex.references);
  }
  if (captions) *captions = cands;
  return metrics::evaluate_all(metrics::make_corpus(cands, refs));
}

template <Real T>
TrainReport train_model(captioner::Model<T>& student, const captioner::Model<T>* teacher,
                        const std::vector<Example<T>>& train, const std::vector<Example<T>>& val,
                        const DistillConfig& cfg, const data::Vocabulary& vocab) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  if (cfg.alpha < 1.0 && teacher == nullptr) throw ConfigError("distill: alpha < 1 needs a teacher model");
  if (train.empty()) throw ContractError("train: empty training set");
  if (teacher && teacher->config.vocab_size != student.config.vocab_size) {
    throw ConfigError("distill: teacher and student vocabularies differ");
  }

  TrainReport report;
  report.mode = cfg.alpha >= 1.0 ? "bare" : "distil";
  report.config = cfg;
  Objective<T> objective(teacher, cfg);
  Adam<T> opt(AdamConfig{cfg.lr});
  student.weights.set_requires_grad(true);

  const std::size_t probe = std::min(kProbeSize, train.size());
  auto probe_loss = [&] {
    double total = 0;
    for (std::size_t i = 0; i < probe; ++i) {
      Tape<T> tape(false);
      nn::Params<T> p(tape, std::as_const(student.weights));
      total += objective(p, student, train, i, 0).value()[0];
    }
    return total / static_cast<double>(probe);
  };
  report.initial_probe_loss = probe_loss();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, epoch + 1));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    std::vector<std::size_t> pick(train.size());
    for (std::size_t i : order) pick[i] = rng.below(train[i].captions.size());

    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t end = std::min(order.size(), b + cfg.batch);
      const T scale = T(1) / static_cast<T>(end - b);
      student.weights.zero_grad();
      double batch_loss = 0;
      for (std::size_t k = b; k < end; ++k) {
        Tape<T> tape(true);
        nn::Params<T> p(tape, student.weights);
        Var<T> loss = ops::scale(objective(p, student, train, order[k], pick[order[k]]), scale);
        batch_loss += loss.value()[0];
        tape.backward(loss);
      }
      opt.step(student.weights);
      loss_sum += batch_loss;
      ++batches;
    }
    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.probe_loss = probe_loss();
    if (!val.empty()) rec.val = evaluate_model(student, val, vocab);
    report.epochs.push_back(rec);
  }
  student.weights.set_requires_grad(false);
  student.weights.zero_grad();
  report.teacher_evaluations = objective.teacher_evaluations();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

template <Real T>
captioner::Model<T> make_student(const captioner::Model<T>& teacher, std::size_t prf) {
  if (prf == 0) throw ConfigError("student: prf must be at least 1");
  auto reduced = netspec::apply_prf(teacher.backbone, teacher.weights, netspec::ReductionConfig{prf});
  captioner::Model<T> student{teacher.config, std::move(reduced.spec), std::move(reduced.weights)};
  captioner::check_compatible(student.config, student.backbone);
  return student;
}

template <Real T>
TrainReport train_student(const captioner::Model<T>& teacher, captioner::Model<T>& student_out,
                          const std::vector<Example<T>>& train, const std::vector<Example<T>>& val,
                          const DistillConfig& cfg, const data::Vocabulary& vocab) {
  cfg.validate();
  student_out = make_student(teacher, cfg.prf);
  return train_model(student_out, &teacher, train, val, cfg, vocab);
}

#define EDGECAP_TRAIN_INSTANTIATE(T)                                                                                 \
  template Tensor<T> make_input(const edge::RgbImage&, const InputSpec&);                                           \
  template std::vector<Example<T>> make_examples(const std::filesystem::path&,                                      \
                                                 const std::vector<data::AnnotationRecord>&, const data::Vocabulary&, \
                                                 const InputSpec&);                                                 \
  template metrics::MetricReport evaluate_model(const captioner::Model<T>&, const std::vector<Example<T>>&,          \
                                                const data::Vocabulary&, std::vector<std::string>*);                \
  template TrainReport train_model(captioner::Model<T>&, const captioner::Model<T>*, const std::vector<Example<T>>&, \
                                   const std::vector<Example<T>>&, const DistillConfig&, const data::Vocabulary&);  \
  template captioner::Model<T> make_student(const captioner::Model<T>&, std::size_t);                                \
  template TrainReport train_student(const captioner::Model<T>&, captioner::Model<T>&,                               \
                                     const std::vector<Example<T>>&, const std::vector<Example<T>>&,                \
                                     const DistillConfig&, const data::Vocabulary&);

EDGECAP_TRAIN_INSTANTIATE(float)
EDGECAP_TRAIN_INSTANTIATE(double)

#undef EDGECAP_TRAIN_INSTANTIATE

}  // namespace edgecap::train

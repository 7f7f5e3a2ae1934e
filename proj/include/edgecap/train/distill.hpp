#pragma once

// Teacher/student training for the captioner: hard-label cross-entropy,
// optionally mixed with a softened-logit KL term from a frozen teacher.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "edgecap/captioner/model.hpp"
#include "edgecap/data/annotations.hpp"
#include "edgecap/edge/detectors.hpp"
#include "edgecap/metrics/metrics.hpp"

namespace edgecap::train {

struct DistillConfig {
  double temperature = 2.0;
  double alpha = 0.5;  // weight on the hard-label term
  double lr = 1e-3;
  std::size_t epochs = 8;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  std::size_t prf = 2;

  void validate() const;
};

// Model input: the RGB image alone or fused with an edge map.
struct InputSpec {
  std::size_t channels = 3;
  edge::EdgeConfig edges;

  void validate() const;
};

// Contents of a train.cfg file.
struct TrainSettings {
  DistillConfig distill;
  InputSpec input;
};

// `key = value` lines; '#' starts a comment. Known keys: seed, epochs, lr,
// batch, temperature, alpha, edge_method, channels, prf. ConfigError names
// the line for unknown keys or bad values.
TrainSettings parse_train_settings(const std::string& text);
TrainSettings load_train_settings(const std::filesystem::path& path);

template <Real T>
Tensor<T> make_input(const edge::RgbImage& img, const InputSpec& spec);

template <Real T>
struct Example {
  std::string image;
  Tensor<T> input;
  std::vector<std::vector<TokenId>> captions;  // encoded, bos ... eos
  std::vector<std::string> references;
};

template <Real T>
std::vector<Example<T>> make_examples(const std::filesystem::path& dataset_dir,
                                      const std::vector<data::AnnotationRecord>& records,
                                      const data::Vocabulary& vocab, const InputSpec& input);

struct EpochRecord {
  double train_loss = 0;  // mean over the epoch's batches
  double probe_loss = 0;  // objective on the fixed probe set after the epoch
  metrics::MetricReport val;
};

struct TrainReport {
  std::string mode;  // "bare" or "distil"
  DistillConfig config;
  double initial_probe_loss = 0;
  std::vector<EpochRecord> epochs;
  std::size_t teacher_evaluations = 0;
  std::string weights;
  double wall_seconds = 0;  // kept out of the JSON so reports stay reproducible

  std::string to_json() const;
};

// Optimizes `student` with Adam. alpha = 1 is plain cross-entropy and never
// touches the teacher; otherwise a teacher is required (ConfigError).
// Each epoch visits the training set in a seeded order, one randomly chosen
// caption per image, then records the probe objective and greedy-decoding
// metrics on `val`.
template <Real T>
TrainReport train_model(captioner::Model<T>& student, const captioner::Model<T>* teacher,
                        const std::vector<Example<T>>& train, const std::vector<Example<T>>& val,
                        const DistillConfig& cfg, const data::Vocabulary& vocab);

// Student = apply_prf(teacher, cfg.prf) with interpolated weights, then
// train_model. StoreError if the teacher lacks weights for its spec.
template <Real T>
captioner::Model<T> make_student(const captioner::Model<T>& teacher, std::size_t prf);

template <Real T>
TrainReport train_student(const captioner::Model<T>& teacher, captioner::Model<T>& student_out,
                          const std::vector<Example<T>>& train, const std::vector<Example<T>>& val,
                          const DistillConfig& cfg, const data::Vocabulary& vocab);

// Greedy captions for every example, scored against its references.
template <Real T>
metrics::MetricReport evaluate_model(const captioner::Model<T>& m, const std::vector<Example<T>>& examples,
                                     const data::Vocabulary& vocab, std::vector<std::string>* captions = nullptr);

}  // namespace edgecap::train

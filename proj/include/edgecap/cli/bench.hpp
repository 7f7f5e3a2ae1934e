#pragma once

// Bare-vs-distilled and RGB-vs-fused comparison on the synthetic dataset.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "edgecap/captioner/model.hpp"
#include "edgecap/cli/table.hpp"
#include "edgecap/train/distill.hpp"

namespace edgecap::cli {

struct BenchInput {
  std::string name;  // "3ch", "6ch-canny", ...
  train::InputSpec spec;
};

// 3ch, 6ch-canny, 6ch-sobel, 6ch-laplacian.
std::vector<BenchInput> default_bench_inputs();
// Looks a name up in default_bench_inputs(); ConfigError otherwise.
BenchInput bench_input(const std::string& name);

struct BenchConfig {
  std::size_t seeds = 3;  // runs use seeds 1..seeds
  std::filesystem::path data_dir;
  std::size_t dataset_size = 625;  // 500 train images
  std::uint64_t dataset_seed = 7;
  std::size_t val_images = 60;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t teacher_epochs = 4;
  std::size_t student_epochs = 3;
  double lr = 2e-3;
  std::size_t batch = 8;
  std::size_t prf = 2;
  double temperature = 2.0;
  double alpha = 0.5;
  std::vector<BenchInput> inputs = default_bench_inputs();

  void validate() const;
};

struct BenchRun {
  std::string input;
  std::string role;  // "teacher", "bare" or "distil"
  std::uint64_t seed = 0;
  std::size_t params = 0;
  train::TrainReport report;

  const metrics::MetricReport& final_metrics() const { return report.epochs.back().val; }
};

struct BenchResult {
  BenchConfig config;
  std::vector<BenchRun> runs;
  double wall_seconds = 0;

  // Mean of the final validation metrics over seeds; LookupError if absent.
  metrics::MetricReport mean(const std::string& input, const std::string& role) const;
  Table table() const;
  // Table, configuration and every run's report; wall time is left out.
  std::string to_json() const;
};

// Generates the dataset under data_dir when it has no manifest, then trains
// every (seed, input) teacher and its bare and distilled students.
// Progress lines go to `log` when given.
BenchResult run_bench(const BenchConfig& cfg, std::ostream* log = nullptr);

}  // namespace edgecap::cli

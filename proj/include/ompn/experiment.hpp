// Experiment orchestration: dataset -> train -> trace -> segment -> score,
// repeated over seeds, plus ablation and K sweeps. Every run writes its
// artifacts under one directory tracked by a manifest; re-running against
// an existing manifest refuses rather than overwriting.

#pragma once

#include "ompn/bc.hpp"
#include "ompn/craft.hpp"
#include "ompn/model.hpp"
#include "ompn/segment.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ompn::exp {

struct ExperimentConfig {
  // experiment
  craft::Mode mode = craft::Mode::full;
  bool sketch = false;  // weakly supervised: sketch appended + initial memory
  seg::Detection detection = seg::Detection::topk;
  int K = 4;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int episodes_per_task = 150;
  double holdout = 0.1;
  std::uint64_t data_seed = 7;
  std::string out_dir;

  // model
  int n_slots = 3;
  int mem_dim = 64;
  Variant variant = Variant::full;
  CellKind cell = CellKind::gated;

  // train
  TrainConfig train;

  bool operator==(const ExperimentConfig&) const = default;
};

std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Builds the model config implied by the experiment settings.
OmpnConfig model_config(const ExperimentConfig& cfg);

struct SeedMetrics {
  std::uint64_t seed = 0;
  double align = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double final_loss = 0.0;
  double train_seconds = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
};

struct Summary {
  std::vector<SeedMetrics> per_seed;
  Aggregate align, f1, precision, recall;
  // formatted like "93.0(1.7)"
  std::string cell(const Aggregate& a) const;
};

Aggregate aggregate(const std::vector<double>& values);

// The full pipeline for one configuration. Seeds may run on `jobs`
// worker threads; each owns its own subdirectory. When `out_dir` is
// empty nothing is written to disk.
Summary run_experiment(const ExperimentConfig& cfg, int jobs = 1);

// Greedy rollout success rate in fresh worlds: success means the task
// completes within 8x the expert's episode length.
double eval_success_rate(const Ompn& model, const ExperimentConfig& cfg,
                         int episodes, std::uint64_t eval_seed);

struct AblationRow {
  Variant variant;
  Summary summary;
};
std::vector<AblationRow> ablation_suite(const ExperimentConfig& base, int jobs = 1);
void write_ablation_csv(const std::string& path,
                        const std::vector<AblationRow>& rows);

struct KSweepRow {
  int K = 0;
  Aggregate f1, precision, recall, align;
  std::vector<SeedMetrics> per_seed;
};
std::vector<KSweepRow> sweep_k(const ExperimentConfig& base, int k_min,
                               int k_max, int jobs = 1);
void write_ksweep_csv(const std::string& path,
                      const std::vector<KSweepRow>& rows);

void write_metrics_csv(const std::string& path, const Summary& summary);

// Expansion-position window used for detection: the hard-coded first
// step is dropped, so entry i is the routing observed after acting at
// step i and indices line up with boundary indices.
std::vector<double> detection_window(const std::vector<StepTrace>& trace);

}  // namespace ompn::exp

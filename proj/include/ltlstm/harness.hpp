#pragma once

#include "ltlstm/training.hpp"

#include <cstdint>
#include <iosfwd>

namespace ltlstm {

enum class TaskKind { DelayedRecall, FrameParity };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string &s);

// Generation is a pure function of the spec: same spec, same dataset.
struct SyntheticTaskSpec {
  TaskKind kind = TaskKind::DelayedRecall;
  int num_classes = 8;
  int seq_len = 24;
  int feature_dim = 16;
  int train_count = 64; // sequences
  int eval_count = 16;
  double noise_std = 0.0;
  int delay = 0; // DelayedRecall: the label at frame t is the cue from frame t-delay
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Batch train;
  Batch eval;
};

// DelayedRecall: every frame plants a one-hot class cue on top of Gaussian
// noise; recalling the cue from `delay` frames back is realized by training
// with target_delay = spec.delay against the per-frame cue labels.
// FrameParity: the label is the parity of the cue classes seen so far
// (two label classes). Rejects seq_len <= delay.
SyntheticData generate_task(const SyntheticTaskSpec &spec);

// Number of distinct label values the task emits (num_classes, or 2 for parity).
int task_label_classes(const SyntheticTaskSpec &spec);

struct OptimizerSettings {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double clip_norm = 1.0; // <= 0 disables clipping
  int batch_size = 8;
};

struct ExperimentConfig {
  NetworkConfig network;
  SyntheticTaskSpec task;
  OptimizerSettings optimizer;
  int epochs = 10;
  int eval_every = 1;
  std::string out_dir = "out";
  std::uint64_t seed = 1; // parameter init and batch shuffling
  // wall_s is the one inherently nondeterministic metrics column; switch it
  // off to make reruns bitwise identical.
  bool record_wall_time = true;
};

ExperimentConfig parse_experiment_config(std::istream &in);
ExperimentConfig load_experiment_config(const std::string &path);
void write_experiment_config(std::ostream &out, const ExperimentConfig &config);

struct MetricsRow {
  int epoch = 0;
  std::string split; // "train" or "eval"
  double loss = 0.0;
  double frame_acc = 0.0;
  double wall_s = 0.0;
};

struct ExperimentResult {
  std::vector<MetricsRow> metrics;
  double final_eval_loss = 0.0;
  double final_eval_acc = 0.0;
  std::string metrics_path;
  std::string checkpoint_path;
};

// Trains per the config, appends one metrics row per epoch/split, evaluates on
// the configured cadence (always once before training and once at the end),
// and saves the final checkpoint. Aborts with NumericError on non-finite loss.
ExperimentResult run_experiment(const ExperimentConfig &config);

// Per-layer L2 norms of the time-cell parameter gradients for one batch,
// bottom to top, plus the bottom/top ratio.
struct GradNormProfile {
  std::vector<double> layer_norms;
  double bottom_top_ratio = 0.0;
};

GradNormProfile grad_norm_probe(const NetworkParams &params, const NetworkConfig &config,
                                const Batch &batch);

std::string probe_csv(const GradNormProfile &profile);

// Desk-scale depth-comparison preset: DelayedRecall with delay 8 over 8
// classes, dims 16/64/32, shared task data, seed varying only the model.
ExperimentConfig depth_experiment_preset(Variant variant, int num_layers, std::uint64_t seed);

} // namespace ltlstm

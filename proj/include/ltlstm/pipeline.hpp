#pragma once

#include "ltlstm/network.hpp"

#include <chrono>
#include <cstdint>

namespace ltlstm {

enum class LaneMode { Sequential, Pipelined, PipelinedBatched };

std::string to_string(LaneMode m);

struct LaneSchedule {
  LaneMode mode = LaneMode::Sequential;
  int batch_window = 1;   // PipelinedBatched only; ignored elsewhere
  int queue_capacity = 16;
  // Benchmark hook: busy-spin this long per frame inside the time lane, so the
  // time lane can be made the bottleneck deterministically.
  std::chrono::microseconds time_lane_pad{0};
};

struct TimingReport {
  LaneMode mode = LaneMode::Sequential;
  std::size_t frames = 0;
  int batch_window = 1;
  double wall_ms = 0.0;
  double time_lane_busy_ms = 0.0;
  double layer_lane_busy_ms = 0.0;
  std::uint64_t layer_kernel_invocations = 0;
  std::uint64_t time_kernel_invocations = 0;
  std::uint64_t layer_lane_multiplies = 0;
  std::uint64_t time_lane_multiplies = 0;
};

struct PipelinedResult {
  std::vector<Vector> logits;
  TimingReport timing;
};

// Evaluates a layer-trajectory network over the frames. The time lane advances
// the time-LSTM stack frame by frame; the layer lane consumes completed
// h-bundles in frame order and runs the within-frame layer scan plus the
// output layer. Logits are bitwise identical across all three modes. In
// PipelinedBatched mode the layer lane collects up to batch_window bundles and
// drives each scan layer across the whole window with one batched kernel per
// weight matrix.
PipelinedResult pipelined_forward(const NetworkParams &params, const NetworkConfig &config,
                                  const std::vector<Vector> &frames,
                                  const LaneSchedule &schedule);

struct BenchReport {
  std::vector<TimingReport> rows; // per-field medians over the timed runs
};

// Warmup run discarded, then `runs` timed runs per schedule on identical input.
BenchReport pipeline_bench(const NetworkParams &params, const NetworkConfig &config,
                           const std::vector<Vector> &frames,
                           const std::vector<LaneSchedule> &schedules, int runs = 5);

// CSV with columns mode,T,B,wall_ms,time_lane_busy_ms,layer_lane_busy_ms,
// layer_kernel_invocations.
std::string bench_csv(const BenchReport &report);

} // namespace ltlstm

#pragma once

#include "ltlstm/network.hpp"

#include <cstdint>

namespace ltlstm {

class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string &msg) : std::runtime_error(msg) {}
};

// Gradients mirror the parameter structure element for element; build one with
// zeros_like(params).
using GradientSet = NetworkParams;

struct LabeledSequence {
  std::vector<Vector> frames;
  std::vector<int> labels; // one per processed frame
};

struct Batch {
  std::vector<LabeledSequence> sequences;
};

struct LossResult {
  double loss = 0.0;             // mean over compared frames
  std::size_t compared = 0;      // frames entering the mean
  std::size_t correct = 0;       // argmax hits among compared frames
  bool degenerate = false;       // no compared frames at all
  std::vector<Vector> dlogits;   // scaled softmax-minus-one-hot, zero before the delay
};

// Compares logits[t] against labels[t - target_delay] for t >= target_delay.
// Frames before the delay are excluded. A sequence too short to compare
// anything yields loss 0, an all-zero gradient, and degenerate = true.
LossResult cross_entropy_loss(const std::vector<Vector> &logits_seq,
                              const std::vector<int> &labels, int target_delay);

struct SequenceTrace {
  std::vector<FrameTrace> frames;
};

struct TracedForward {
  std::vector<Vector> logits;
  SequenceTrace trace;
};

// forward_sequence with the full activation record kept for the reverse pass.
TracedForward forward_sequence_traced(const NetworkParams &params, const NetworkConfig &config,
                                      const std::vector<Vector> &frames);

// Exact reverse-mode gradients through the whole unrolled sequence: time
// recurrence backward across frames, layer-scan recurrence backward down the
// layers inside each frame. dlogits_seq must be index-aligned with the trace.
GradientSet backward_sequence(const NetworkParams &params, const NetworkConfig &config,
                              const SequenceTrace &trace,
                              const std::vector<Vector> &dlogits_seq);

struct BatchResult {
  double loss = 0.0;       // frame-weighted mean pooled across the batch
  double frame_accuracy = 0.0;
  std::size_t compared = 0;
  GradientSet gradients;
};

// Per-sequence passes may run concurrently; accumulation is in sequence order,
// so results are bitwise reproducible.
BatchResult batch_gradient(const NetworkParams &params, const NetworkConfig &config,
                           const Batch &batch, bool parallel = true);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::string worst_name;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool pass = false;
};

// Central-difference comparison of batch_gradient against the loss itself.
// Checks every element while the parameter count stays at or below
// subsample_above; larger models get a seeded random subsample of that size.
GradCheckReport grad_check(const NetworkParams &params, const NetworkConfig &config,
                           const Batch &batch, double step, double tolerance,
                           std::size_t subsample_above = 4096, std::uint64_t sample_seed = 0);

// Scales gradients in place so the global L2 norm is at most max_norm.
// Returns the factor applied (1.0 when already inside the budget).
double clip_global_norm(GradientSet &grads, double max_norm);

double global_norm(const GradientSet &grads);

// Classical momentum: v <- momentum * v - lr * g; p <- p + v.
class SgdOptimizer {
public:
  SgdOptimizer(double learning_rate, double momentum);

  // Throws NumericError (leaving params untouched) if any gradient is not
  // finite.
  void step(NetworkParams &params, const GradientSet &grads);

  double learning_rate() const { return learning_rate_; }
  double momentum() const { return momentum_; }

private:
  double learning_rate_;
  double momentum_;
  NetworkParams velocity_;
  bool velocity_ready_ = false;
};

} // namespace ltlstm

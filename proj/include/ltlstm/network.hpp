#pragma once

#include "ltlstm/cells.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>

namespace ltlstm {

enum class Variant { Stacked, Residual, LayerTrajectory };

std::string to_string(Variant v);
Variant variant_from_string(const std::string &s);

// Which gate sites are factorized. Layer-lane sites are only meaningful for
// the layer-trajectory variant.
struct FactorizedGates {
  bool time_input = false;
  bool time_forget = false;
  bool time_output = false;
  bool layer_input = false;
  bool layer_forget = false;
  bool layer_output = false;

  bool any() const {
    return time_input || time_forget || time_output || layer_input || layer_forget || layer_output;
  }
  bool any_layer() const { return layer_input || layer_forget || layer_output; }
  bool operator==(const FactorizedGates &) const = default;
};

// Comma-separated list of sites, e.g. "time.forget,layer.forget". Empty string
// means no factorization.
FactorizedGates factorized_gates_from_string(const std::string &s);
std::string to_string(const FactorizedGates &f);

struct NetworkConfig {
  Variant variant = Variant::Stacked;
  int num_layers = 1;
  int input_dim = 1;
  int cell_dim = 1;
  int proj_dim = 1;
  int output_dim = 1;
  FactorizedGates factorized_gates;
  int target_delay = 0;
  int frame_stride = 1;

  bool operator==(const NetworkConfig &) const = default;
};

// Throws ConfigError on out-of-range fields, non-square cell_dim under
// factorization, or layer-lane factorization outside the trajectory variant.
void validate_config(const NetworkConfig &config);

struct NetworkParams {
  std::vector<CellParams> time_cells;
  std::vector<CellParams> layer_cells; // empty unless LayerTrajectory
  Matrix output_weights;               // output_dim x proj_dim
  Vector output_bias;
};

// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases and
// peepholes, forget-gate bias 1. Deterministic in (config, seed).
NetworkParams init_network_params(const NetworkConfig &config, std::uint64_t seed);

// The same structure with every element zero.
NetworkParams empty_network_params(const NetworkConfig &config);

// Structural copy with every parameter element zeroed; used for gradient and
// velocity accumulators.
NetworkParams zeros_like(const NetworkParams &params);

void validate_params(const NetworkParams &params, const NetworkConfig &config);

// Per-layer time-cell states carried across frames. Trajectory states are not
// stored anywhere: the layer scan restarts from zero every frame.
struct FrameStates {
  std::vector<TimeCellState> time_states;
};

FrameStates initial_states(const NetworkConfig &config);

// Whether layer l (1-based, l >= 2) receives x^{l-1} + h^{l-1} rather than
// h^{l-1} alone. The bottom boundary participates only when input_dim equals
// proj_dim; otherwise shortcuts start one boundary up.
bool residual_boundary(const NetworkConfig &config, int layer);

// Full record of one frame's computation, enough to run an exact reverse pass.
struct FrameTrace {
  Vector input;
  std::vector<Vector> layer_inputs;            // x^l per layer
  std::vector<TimeCellState> prev_time_states; // states entering this frame
  std::vector<CellTrace> time_traces;
  std::vector<CellTrace> layer_traces;         // LayerTrajectory only
  Vector classifier_input;                     // h^L or g^L
  Vector logits;
};

struct FrameResult {
  Vector logits;
  FrameStates states;
};

FrameResult forward_frame(const NetworkParams &params, const NetworkConfig &config,
                          const Vector &frame, const FrameStates &states);

// As forward_frame, but records the trace. `states` is advanced in place.
FrameTrace forward_frame_traced(const NetworkParams &params, const NetworkConfig &config,
                                const Vector &frame, FrameStates &states);

// Runs the configured stride over the raw frame sequence, carrying states.
// Output t corresponds to input frame t * frame_stride.
std::vector<Vector> forward_sequence(const NetworkParams &params, const NetworkConfig &config,
                                     const std::vector<Vector> &frames);

// --- parameter traversal -----------------------------------------------------
//
// Every consumer of "all parameters in order" (serialization, SGD, gradient
// checking, initialization) uses this one canonical traversal: time cells
// bottom to top, then layer cells, then the output layer; within a cell
// input/forget/output gates, candidate, projection; within a gate w_input,
// w_recurrent, peephole, bias (factorized gates: row then col factor, each
// w_input, w_recurrent, bias). Matrices are row-major.

struct ParamSegment {
  std::string name;
  std::size_t offset = 0;
  std::size_t count = 0;
  int rows = 0; // 0 for vectors
  int cols = 0;
};

std::vector<double *> flatten_params(NetworkParams &params);
std::vector<const double *> flatten_params(const NetworkParams &params);
std::vector<ParamSegment> param_segments(const NetworkParams &params);
std::size_t param_count(const NetworkParams &params);

// Human-readable location of one flattened element, e.g.
// "time_cell[2].forget_gate.w_input[1,3]".
std::string param_element_name(const std::vector<ParamSegment> &segments, std::size_t index);

// --- config file I/O ----------------------------------------------------------
//
// Flat "key = value" text, '#' starts a comment. Keys mirror the NetworkConfig
// field names.

NetworkConfig parse_network_config(std::istream &in);
NetworkConfig load_network_config(const std::string &path);
void write_network_config(std::ostream &out, const NetworkConfig &config);

} // namespace ltlstm

#pragma once

#include "ltlstm/numerics.hpp"

#include <optional>
#include <variant>

namespace ltlstm {

class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string &msg) : std::runtime_error(msg) {}
};

// Weights for one dense gate: sigma(w_input*x + w_recurrent*r + peephole.*state + bias).
// w_recurrent is absent for cells that have no recurrent input (the bottom cell
// of the within-frame layer scan). peephole is absent on the candidate gate.
struct GateParams {
  Matrix w_input;
  std::optional<Matrix> w_recurrent;
  std::optional<Vector> peephole;
  Vector bias;
};

// One half of a factorized gate: a k-dimensional sigmoid vector.
struct GateFactor {
  Matrix w_input;
  std::optional<Matrix> w_recurrent;
  Vector bias;
};

// Gate computed as vec(sqrt(row * col^T)) of two k-dimensional sigmoid
// factors, flattened row-major with `row` indexing rows. k*k must equal the
// cell dimension. Factorized gates carry no peephole.
struct FactorizedGateParams {
  GateFactor row;
  GateFactor col;
  int k = 0;
};

using AnyGate = std::variant<GateParams, FactorizedGateParams>;

// Full parameter bundle for one LSTM cell: three (possibly factorized) gates,
// the never-factorized candidate, and the linear projection applied to the
// cell output before it is seen by anything downstream.
struct CellParams {
  AnyGate input_gate;
  AnyGate forget_gate;
  AnyGate output_gate;
  GateParams cell_candidate;
  Matrix projection; // proj_dim x cell_dim
};

// Memory cell and projected output carried across frames.
struct TimeCellState {
  Vector c;
  Vector h;
};

// Layer-scan counterpart, carried across layers within one frame.
struct TrajectoryCellState {
  Vector m;
  Vector g;
};

struct GateTrace {
  Vector activation;          // final gate vector, length cell_dim
  Vector row_factor;          // factorized gates only, length k
  Vector col_factor;
};

// Everything a reverse pass needs from one cell application.
struct CellTrace {
  GateTrace input_gate;
  GateTrace forget_gate;
  GateTrace output_gate;
  Vector candidate;      // tanh of the candidate pre-activation
  Vector cell;           // new memory cell
  Vector phi_cell;       // tanh(cell)
  Vector pre_projection; // output_gate .* phi_cell, componentwise in (-1,1)
  Vector output;         // projection * pre_projection
};

int cell_dim(const CellParams &p);
int input_dim(const CellParams &p);
int recurrent_dim(const CellParams &p); // 0 when the cell has no recurrent input
bool has_recurrence(const CellParams &p);

// Throws ConfigError if the bundle's shapes are not mutually consistent or a
// factorized gate's k*k does not equal the cell dimension.
void validate_cell(const CellParams &p, const std::string &where);

// sigma(w_input*x + w_recurrent*r + peephole.*peep_state + bias).
// r must be supplied exactly when w_recurrent is present, and peep_state
// exactly when the peephole is present.
Vector gate_activation(const GateParams &gp, const Vector &x, const Vector *r,
                       const Vector *peep_state);

Vector factorized_gate_activation(const FactorizedGateParams &fp, const Vector &x,
                                  const Vector *r);

// Core single-step kernel shared by the time cell and the layer-scan cell:
//   gates from input/recurrent/prev_cell, candidate, new cell, projected output.
// The output-gate peephole reads the NEW cell; input/forget read prev_cell.
CellTrace lstm_cell_forward(const CellParams &p, const Vector &input,
                            const Vector *recurrent, const Vector &prev_cell);

// One step along the time axis. The returned state holds the new memory cell
// and the projected output h (the value fed to the recurrence and upward).
TimeCellState time_lstm_step(const CellParams &p, const Vector &x, const TimeCellState &prev);

// One step up the layer axis within a frame. `below` carries the scan state of
// the layer underneath; cells without recurrent matrices ignore below.g.
TrajectoryCellState layer_lstm_step(const CellParams &p, const Vector &h_in,
                                    const TrajectoryCellState &below);

// Shortcut input rule: elementwise x_below + h_below, same lengths required.
Vector residual_input(const Vector &x_below, const Vector &h_below);

} // namespace ltlstm

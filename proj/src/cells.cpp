#include "ltlstm/cells.hpp"

#include <cassert>
#include <cmath>

namespace ltlstm {

namespace {

int gate_out_dim(const AnyGate &g) {
  if (const auto *p = std::get_if<GateParams>(&g))
    return p->w_input.rows;
  const auto &f = std::get<FactorizedGateParams>(g);
  return f.k * f.k;
}

int gate_in_dim(const AnyGate &g) {
  if (const auto *p = std::get_if<GateParams>(&g))
    return p->w_input.cols;
  return std::get<FactorizedGateParams>(g).row.w_input.cols;
}

int gate_rec_dim(const AnyGate &g) {
  if (const auto *p = std::get_if<GateParams>(&g))
    return p->w_recurrent ? p->w_recurrent->cols : 0;
  const auto &f = std::get<FactorizedGateParams>(g);
  return f.row.w_recurrent ? f.row.w_recurrent->cols : 0;
}

void validate_factor(const GateFactor &f, int k, int in, int rec, const std::string &where) {
  if (f.w_input.rows != k || f.w_input.cols != in)
    throw ConfigError(where + ": factor input matrix is " + std::to_string(f.w_input.rows) +
                      "x" + std::to_string(f.w_input.cols) + ", expected " + std::to_string(k) +
                      "x" + std::to_string(in));
  if ((rec > 0) != f.w_recurrent.has_value())
    throw ConfigError(where + ": factor recurrent matrix presence mismatch");
  if (rec > 0 && (f.w_recurrent->rows != k || f.w_recurrent->cols != rec))
    throw ConfigError(where + ": factor recurrent matrix is " +
                      std::to_string(f.w_recurrent->rows) + "x" +
                      std::to_string(f.w_recurrent->cols) + ", expected " + std::to_string(k) +
                      "x" + std::to_string(rec));
  if (static_cast<int>(f.bias.size()) != k)
    throw ConfigError(where + ": factor bias has length " + std::to_string(f.bias.size()) +
                      ", expected " + std::to_string(k));
}

void validate_gate(const AnyGate &g, int cell, int in, int rec, bool expect_peephole,
                   const std::string &where) {
  if (const auto *p = std::get_if<GateParams>(&g)) {
    if (p->w_input.rows != cell || p->w_input.cols != in)
      throw ConfigError(where + ": input matrix is " + std::to_string(p->w_input.rows) + "x" +
                        std::to_string(p->w_input.cols) + ", expected " + std::to_string(cell) +
                        "x" + std::to_string(in));
    if ((rec > 0) != p->w_recurrent.has_value())
      throw ConfigError(where + ": recurrent matrix presence mismatch");
    if (rec > 0 && (p->w_recurrent->rows != cell || p->w_recurrent->cols != rec))
      throw ConfigError(where + ": recurrent matrix is " + std::to_string(p->w_recurrent->rows) +
                        "x" + std::to_string(p->w_recurrent->cols) + ", expected " +
                        std::to_string(cell) + "x" + std::to_string(rec));
    if (p->peephole.has_value() != expect_peephole)
      throw ConfigError(where + ": peephole " +
                        (expect_peephole ? "missing" : "present but not allowed"));
    if (p->peephole && static_cast<int>(p->peephole->size()) != cell)
      throw ConfigError(where + ": peephole has length " + std::to_string(p->peephole->size()) +
                        ", expected " + std::to_string(cell));
    if (static_cast<int>(p->bias.size()) != cell)
      throw ConfigError(where + ": bias has length " + std::to_string(p->bias.size()) +
                        ", expected " + std::to_string(cell));
  } else {
    const auto &f = std::get<FactorizedGateParams>(g);
    if (f.k <= 0 || f.k * f.k != cell)
      throw ConfigError(where + ": factorization k=" + std::to_string(f.k) +
                        " but k^2 must equal cell_dim=" + std::to_string(cell));
    validate_factor(f.row, f.k, in, rec, where + ".row");
    validate_factor(f.col, f.k, in, rec, where + ".col");
  }
}

// Pre-activation of a dense gate factor, shared by plain and factorized paths.
Vector affine(const Matrix &w_in, const Vector &x, const Matrix *w_rec, const Vector *r,
              const Vector &bias) {
  Vector z = matvec(w_in, x);
  if (w_rec) {
    Vector zr = matvec(*w_rec, *r);
    for (std::size_t i = 0; i < z.size(); ++i)
      z[i] += zr[i];
  }
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] += bias[i];
  return z;
}

GateTrace eval_gate(const AnyGate &g, const Vector &x, const Vector *r, const Vector *peep_state) {
  GateTrace tr;
  if (const auto *p = std::get_if<GateParams>(&g)) {
    tr.activation = gate_activation(*p, x, r, peep_state);
  } else {
    tr.activation = Vector();
    const auto &f = std::get<FactorizedGateParams>(g);
    const Matrix *row_rec = f.row.w_recurrent ? &*f.row.w_recurrent : nullptr;
    const Matrix *col_rec = f.col.w_recurrent ? &*f.col.w_recurrent : nullptr;
    if ((row_rec != nullptr) != (r != nullptr))
      throw ConfigError("factorized gate: recurrent input presence mismatch");
    tr.row_factor = sigmoid(affine(f.row.w_input, x, row_rec, r, f.row.bias));
    tr.col_factor = sigmoid(affine(f.col.w_input, x, col_rec, r, f.col.bias));
    tr.activation.resize(static_cast<std::size_t>(f.k) * f.k);
    for (int a = 0; a < f.k; ++a)
      for (int b = 0; b < f.k; ++b)
        tr.activation[static_cast<std::size_t>(a) * f.k + b] =
            std::sqrt(tr.row_factor[static_cast<std::size_t>(a)] *
                      tr.col_factor[static_cast<std::size_t>(b)]);
  }
  return tr;
}

} // namespace

int cell_dim(const CellParams &p) { return static_cast<int>(p.cell_candidate.bias.size()); }
int input_dim(const CellParams &p) { return p.cell_candidate.w_input.cols; }
int recurrent_dim(const CellParams &p) {
  return p.cell_candidate.w_recurrent ? p.cell_candidate.w_recurrent->cols : 0;
}
bool has_recurrence(const CellParams &p) { return p.cell_candidate.w_recurrent.has_value(); }

void validate_cell(const CellParams &p, const std::string &where) {
  const int cell = cell_dim(p);
  const int in = input_dim(p);
  const int rec = recurrent_dim(p);
  validate_gate(p.input_gate, cell, in, rec, std::holds_alternative<GateParams>(p.input_gate),
                where + ".input_gate");
  validate_gate(p.forget_gate, cell, in, rec, std::holds_alternative<GateParams>(p.forget_gate),
                where + ".forget_gate");
  validate_gate(p.output_gate, cell, in, rec, std::holds_alternative<GateParams>(p.output_gate),
                where + ".output_gate");
  if (p.cell_candidate.peephole)
    throw ConfigError(where + ".cell_candidate: peephole present but not allowed");
  validate_gate(AnyGate(p.cell_candidate), cell, in, rec, false, where + ".cell_candidate");
  if (p.projection.cols != cell || p.projection.rows <= 0)
    throw ConfigError(where + ".projection: is " + std::to_string(p.projection.rows) + "x" +
                      std::to_string(p.projection.cols) + ", expected ?x" + std::to_string(cell));
  for (const AnyGate *g : {&p.input_gate, &p.forget_gate, &p.output_gate})
    if (gate_in_dim(*g) != in || gate_rec_dim(*g) != rec || gate_out_dim(*g) != cell)
      throw ConfigError(where + ": gates disagree on cell dimensions");
}

Vector gate_activation(const GateParams &gp, const Vector &x, const Vector *r,
                       const Vector *peep_state) {
  if (gp.w_recurrent.has_value() != (r != nullptr))
    throw ConfigError("gate_activation: recurrent input presence mismatch");
  if (gp.peephole.has_value() != (peep_state != nullptr))
    throw ConfigError("gate_activation: peephole state presence mismatch");
  Vector z = affine(gp.w_input, x, gp.w_recurrent ? &*gp.w_recurrent : nullptr, r, gp.bias);
  if (peep_state) {
    if (peep_state->size() != z.size())
      throw DimensionError("gate_activation: peephole state has length " +
                           std::to_string(peep_state->size()) + " but gate is " +
                           std::to_string(z.size()));
    for (std::size_t i = 0; i < z.size(); ++i)
      z[i] += (*gp.peephole)[i] * (*peep_state)[i];
  }
  return sigmoid(z);
}

Vector factorized_gate_activation(const FactorizedGateParams &fp, const Vector &x,
                                  const Vector *r) {
  return eval_gate(AnyGate(fp), x, r, nullptr).activation;
}

CellTrace lstm_cell_forward(const CellParams &p, const Vector &input, const Vector *recurrent,
                            const Vector &prev_cell) {
  CellTrace tr;
  tr.input_gate = eval_gate(p.input_gate, input, recurrent, &prev_cell);
  tr.forget_gate = eval_gate(p.forget_gate, input, recurrent, &prev_cell);

  const Matrix *cand_rec = p.cell_candidate.w_recurrent ? &*p.cell_candidate.w_recurrent : nullptr;
  tr.candidate = tanh(affine(p.cell_candidate.w_input, input, cand_rec, recurrent,
                             p.cell_candidate.bias));

  tr.cell.resize(prev_cell.size());
  for (std::size_t i = 0; i < prev_cell.size(); ++i)
    tr.cell[i] = tr.forget_gate.activation[i] * prev_cell[i] +
                 tr.input_gate.activation[i] * tr.candidate[i];

  // Output-gate peephole reads the freshly updated cell.
  tr.output_gate = eval_gate(p.output_gate, input, recurrent, &tr.cell);

  tr.phi_cell = tanh(tr.cell);
  tr.pre_projection = hadamard(tr.output_gate.activation, tr.phi_cell);
  tr.output = matvec(p.projection, tr.pre_projection);
  return tr;
}

TimeCellState time_lstm_step(const CellParams &p, const Vector &x, const TimeCellState &prev) {
  CellTrace tr = lstm_cell_forward(p, x, &prev.h, prev.c);
  return TimeCellState{std::move(tr.cell), std::move(tr.output)};
}

TrajectoryCellState layer_lstm_step(const CellParams &p, const Vector &h_in,
                                    const TrajectoryCellState &below) {
  const Vector *rec = has_recurrence(p) ? &below.g : nullptr;
  CellTrace tr = lstm_cell_forward(p, h_in, rec, below.m);
  return TrajectoryCellState{std::move(tr.cell), std::move(tr.output)};
}

Vector residual_input(const Vector &x_below, const Vector &h_below) {
  if (x_below.size() != h_below.size())
    throw DimensionError("residual_input: lengths differ, " + std::to_string(x_below.size()) +
                         " vs " + std::to_string(h_below.size()));
  return add(x_below, h_below);
}

} // namespace ltlstm

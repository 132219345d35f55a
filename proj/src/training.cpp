#include "ltlstm/training.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <random>

namespace ltlstm {

namespace {

struct RawLoss {
  double sum = 0.0;
  std::size_t compared = 0;
  std::size_t correct = 0;
  std::vector<Vector> dlogits; // unscaled softmax-minus-one-hot
};

// Softmax cross entropy without the 1/count normalization, so batch pooling
// can renormalize over the pooled frame count.
RawLoss cross_entropy_raw(const std::vector<Vector> &logits_seq, const std::vector<int> &labels,
                          int target_delay) {
  if (logits_seq.size() != labels.size())
    throw DimensionError("cross_entropy: " + std::to_string(logits_seq.size()) +
                         " logit vectors vs " + std::to_string(labels.size()) + " labels");
  if (target_delay < 0)
    throw ConfigError("cross_entropy: negative target_delay");

  RawLoss out;
  out.dlogits.resize(logits_seq.size());
  for (std::size_t t = 0; t < logits_seq.size(); ++t)
    out.dlogits[t].assign(logits_seq[t].size(), 0.0);

  for (std::size_t t = static_cast<std::size_t>(target_delay); t < logits_seq.size(); ++t) {
    const Vector &logits = logits_seq[t];
    const int label = labels[t - static_cast<std::size_t>(target_delay)];
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
      throw ConfigError("cross_entropy: label " + std::to_string(label) +
                        " out of range for " + std::to_string(logits.size()) + " classes");

    const double maxv = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits)
      z += std::exp(v - maxv);
    const double log_z = std::log(z) + maxv;

    out.sum += log_z - logits[static_cast<std::size_t>(label)];
    const std::size_t argmax = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (argmax == static_cast<std::size_t>(label))
      ++out.correct;
    ++out.compared;

    Vector &d = out.dlogits[t];
    for (std::size_t i = 0; i < logits.size(); ++i)
      d[i] = std::exp(logits[i] - log_z);
    d[static_cast<std::size_t>(label)] -= 1.0;
  }
  return out;
}

} // namespace

LossResult cross_entropy_loss(const std::vector<Vector> &logits_seq,
                              const std::vector<int> &labels, int target_delay) {
  RawLoss raw = cross_entropy_raw(logits_seq, labels, target_delay);
  LossResult res;
  res.compared = raw.compared;
  res.correct = raw.correct;
  res.dlogits = std::move(raw.dlogits);
  if (raw.compared == 0) {
    res.degenerate = true;
    res.loss = 0.0;
    return res;
  }
  const double inv = 1.0 / static_cast<double>(raw.compared);
  res.loss = raw.sum * inv;
  for (Vector &d : res.dlogits)
    for (double &x : d)
      x *= inv;
  return res;
}

TracedForward forward_sequence_traced(const NetworkParams &params, const NetworkConfig &config,
                                      const std::vector<Vector> &frames) {
  if (frames.empty())
    throw ConfigError("forward_sequence_traced: empty frame sequence");
  validate_params(params, config);
  TracedForward out;
  FrameStates states = initial_states(config);
  for (std::size_t t = 0; t < frames.size(); t += static_cast<std::size_t>(config.frame_stride)) {
    FrameTrace trace = forward_frame_traced(params, config, frames[t], states);
    out.logits.push_back(trace.logits);
    out.trace.frames.push_back(std::move(trace));
  }
  return out;
}

// --- reverse-mode kernels -----------------------------------------------------

namespace {

struct GateBackwardOut {
  Vector d_input;
  Vector d_recurrent;  // empty when the gate has no recurrent matrix
  Vector d_peep_state; // empty when the gate has no peephole
};

GateBackwardOut plain_gate_backward(const GateParams &p, GateParams &g, const GateTrace &tr,
                                    const Vector &input, const Vector *recurrent,
                                    const Vector *peep_state, const Vector &d_gate) {
  const Vector &a = tr.activation;
  Vector d_z(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    d_z[i] = d_gate[i] * a[i] * (1.0 - a[i]);

  add_outer(g.w_input, d_z, input);
  if (p.w_recurrent)
    add_outer(*g.w_recurrent, d_z, *recurrent);
  if (p.peephole)
    for (std::size_t i = 0; i < d_z.size(); ++i)
      (*g.peephole)[i] += d_z[i] * (*peep_state)[i];
  for (std::size_t i = 0; i < d_z.size(); ++i)
    g.bias[i] += d_z[i];

  GateBackwardOut out;
  out.d_input = matvec_transpose(p.w_input, d_z);
  if (p.w_recurrent)
    out.d_recurrent = matvec_transpose(*p.w_recurrent, d_z);
  if (p.peephole) {
    out.d_peep_state.resize(d_z.size());
    for (std::size_t i = 0; i < d_z.size(); ++i)
      out.d_peep_state[i] = (*p.peephole)[i] * d_z[i];
  }
  return out;
}

GateBackwardOut factorized_gate_backward(const FactorizedGateParams &p, FactorizedGateParams &g,
                                         const GateTrace &tr, const Vector &input,
                                         const Vector *recurrent, const Vector &d_gate) {
  const int k = p.k;
  const Vector &u = tr.row_factor;
  const Vector &v = tr.col_factor;

  // gate[a*k+b] = sqrt(u[a] * v[b]); both factors are strictly inside (0,1).
  Vector d_u(static_cast<std::size_t>(k), 0.0);
  Vector d_v(static_cast<std::size_t>(k), 0.0);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      const std::size_t idx = static_cast<std::size_t>(a) * k + b;
      const double shared = d_gate[idx] * tr.activation[idx] * 0.5;
      d_u[static_cast<std::size_t>(a)] += shared / u[static_cast<std::size_t>(a)];
      d_v[static_cast<std::size_t>(b)] += shared / v[static_cast<std::size_t>(b)];
    }
  }

  Vector d_zu(static_cast<std::size_t>(k));
  Vector d_zv(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const std::size_t si = static_cast<std::size_t>(i);
    d_zu[si] = d_u[si] * u[si] * (1.0 - u[si]);
    d_zv[si] = d_v[si] * v[si] * (1.0 - v[si]);
  }

  add_outer(g.row.w_input, d_zu, input);
  add_outer(g.col.w_input, d_zv, input);
  if (p.row.w_recurrent) {
    add_outer(*g.row.w_recurrent, d_zu, *recurrent);
    add_outer(*g.col.w_recurrent, d_zv, *recurrent);
  }
  for (int i = 0; i < k; ++i) {
    const std::size_t si = static_cast<std::size_t>(i);
    g.row.bias[si] += d_zu[si];
    g.col.bias[si] += d_zv[si];
  }

  GateBackwardOut out;
  out.d_input = matvec_transpose(p.row.w_input, d_zu);
  axpy(1.0, matvec_transpose(p.col.w_input, d_zv), out.d_input);
  if (p.row.w_recurrent) {
    out.d_recurrent = matvec_transpose(*p.row.w_recurrent, d_zu);
    axpy(1.0, matvec_transpose(*p.col.w_recurrent, d_zv), out.d_recurrent);
  }
  return out;
}

GateBackwardOut any_gate_backward(const AnyGate &p, AnyGate &g, const GateTrace &tr,
                                  const Vector &input, const Vector *recurrent,
                                  const Vector *peep_state, const Vector &d_gate) {
  if (const auto *pp = std::get_if<GateParams>(&p))
    return plain_gate_backward(*pp, std::get<GateParams>(g), tr, input, recurrent, peep_state,
                               d_gate);
  return factorized_gate_backward(std::get<FactorizedGateParams>(p),
                                  std::get<FactorizedGateParams>(g), tr, input, recurrent,
                                  d_gate);
}

struct CellBackwardOut {
  Vector d_input;
  Vector d_recurrent; // empty for cells without recurrence
  Vector d_prev_cell;
};

// Reverse pass of lstm_cell_forward. d_output is dL/d(projected output);
// d_cell_future is dL/d(cell) arriving from later steps of the same lane.
CellBackwardOut lstm_cell_backward(const CellParams &p, CellParams &g, const CellTrace &tr,
                                   const Vector &input, const Vector *recurrent,
                                   const Vector &prev_cell, const Vector &d_output,
                                   const Vector &d_cell_future) {
  add_outer(g.projection, d_output, tr.pre_projection);
  const Vector d_pre = matvec_transpose(p.projection, d_output);

  const std::size_t n = tr.cell.size();
  Vector d_o(n);
  Vector d_c(n);
  for (std::size_t i = 0; i < n; ++i) {
    d_o[i] = d_pre[i] * tr.phi_cell[i];
    const double d_phi = d_pre[i] * tr.output_gate.activation[i];
    d_c[i] = d_cell_future[i] + d_phi * (1.0 - tr.phi_cell[i] * tr.phi_cell[i]);
  }

  CellBackwardOut out;
  out.d_input.assign(input.size(), 0.0);
  if (recurrent)
    out.d_recurrent.assign(recurrent->size(), 0.0);

  auto absorb = [&out, recurrent](const GateBackwardOut &gb) {
    axpy(1.0, gb.d_input, out.d_input);
    if (recurrent && !gb.d_recurrent.empty())
      axpy(1.0, gb.d_recurrent, out.d_recurrent);
  };

  // Output gate first: its peephole reads the new cell, so it feeds d_c.
  {
    GateBackwardOut gb = any_gate_backward(p.output_gate, g.output_gate, tr.output_gate, input,
                                           recurrent, &tr.cell, d_o);
    absorb(gb);
    if (!gb.d_peep_state.empty())
      axpy(1.0, gb.d_peep_state, d_c);
  }

  Vector d_i(n), d_f(n), d_cand(n);
  out.d_prev_cell.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d_f[i] = d_c[i] * prev_cell[i];
    d_i[i] = d_c[i] * tr.candidate[i];
    d_cand[i] = d_c[i] * tr.input_gate.activation[i];
    out.d_prev_cell[i] = d_c[i] * tr.forget_gate.activation[i];
  }

  // Candidate (plain gate, tanh, no peephole).
  {
    Vector d_zc(n);
    for (std::size_t i = 0; i < n; ++i)
      d_zc[i] = d_cand[i] * (1.0 - tr.candidate[i] * tr.candidate[i]);
    add_outer(g.cell_candidate.w_input, d_zc, input);
    if (p.cell_candidate.w_recurrent)
      add_outer(*g.cell_candidate.w_recurrent, d_zc, *recurrent);
    for (std::size_t i = 0; i < n; ++i)
      g.cell_candidate.bias[i] += d_zc[i];
    axpy(1.0, matvec_transpose(p.cell_candidate.w_input, d_zc), out.d_input);
    if (p.cell_candidate.w_recurrent)
      axpy(1.0, matvec_transpose(*p.cell_candidate.w_recurrent, d_zc), out.d_recurrent);
  }

  // Input and forget gates peek at the previous cell.
  {
    GateBackwardOut gb = any_gate_backward(p.input_gate, g.input_gate, tr.input_gate, input,
                                           recurrent, &prev_cell, d_i);
    absorb(gb);
    if (!gb.d_peep_state.empty())
      axpy(1.0, gb.d_peep_state, out.d_prev_cell);
  }
  {
    GateBackwardOut gb = any_gate_backward(p.forget_gate, g.forget_gate, tr.forget_gate, input,
                                           recurrent, &prev_cell, d_f);
    absorb(gb);
    if (!gb.d_peep_state.empty())
      axpy(1.0, gb.d_peep_state, out.d_prev_cell);
  }

  return out;
}

} // namespace

GradientSet backward_sequence(const NetworkParams &params, const NetworkConfig &config,
                              const SequenceTrace &trace,
                              const std::vector<Vector> &dlogits_seq) {
  if (trace.frames.empty())
    throw ConfigError("backward_sequence: missing forward trace");
  if (trace.frames.size() != dlogits_seq.size())
    throw DimensionError("backward_sequence: trace holds " +
                         std::to_string(trace.frames.size()) + " frames but " +
                         std::to_string(dlogits_seq.size()) + " logit gradients given");

  const int L = config.num_layers;
  const bool lt = config.variant == Variant::LayerTrajectory;
  GradientSet grads = zeros_like(params);

  const Vector zero_cell_vec(static_cast<std::size_t>(config.cell_dim), 0.0);
  std::vector<Vector> dh_carry(static_cast<std::size_t>(L),
                               Vector(static_cast<std::size_t>(config.proj_dim), 0.0));
  std::vector<Vector> dc_carry(static_cast<std::size_t>(L), zero_cell_vec);

  for (std::size_t t = trace.frames.size(); t-- > 0;) {
    const FrameTrace &ft = trace.frames[t];
    const Vector &dlogits = dlogits_seq[t];

    add_outer(grads.output_weights, dlogits, ft.classifier_input);
    axpy(1.0, dlogits, grads.output_bias);
    const Vector d_classifier = matvec_transpose(params.output_weights, dlogits);

    std::vector<Vector> dh = dh_carry; // dL/dh^l at this frame, accumulating

    if (lt) {
      // Layer scan backward, top of the scan down to its zero-seeded bottom.
      Vector dg = d_classifier;
      Vector dm = zero_cell_vec;
      for (int l = L - 1; l >= 0; --l) {
        const std::size_t li = static_cast<std::size_t>(l);
        const CellParams &cp = params.layer_cells[li];
        const Vector *rec = (l > 0 && has_recurrence(cp)) ? &ft.layer_traces[li - 1].output : nullptr;
        const Vector &prev_cell = (l > 0) ? ft.layer_traces[li - 1].cell : zero_cell_vec;
        CellBackwardOut out =
            lstm_cell_backward(cp, grads.layer_cells[li], ft.layer_traces[li],
                               ft.time_traces[li].output, rec, prev_cell, dg, dm);
        axpy(1.0, out.d_input, dh[li]);
        if (l > 0) {
          dg = std::move(out.d_recurrent);
          dm = std::move(out.d_prev_cell);
        }
      }
    } else {
      axpy(1.0, d_classifier, dh[static_cast<std::size_t>(L - 1)]);
    }

    // Time lane backward, top layer down, routing input gradients through the
    // stacking (and, for the residual variant, the shortcut sums).
    Vector pending_shortcut;
    for (int l = L - 1; l >= 0; --l) {
      const std::size_t li = static_cast<std::size_t>(l);
      const TimeCellState &prev = ft.prev_time_states[li];
      CellBackwardOut out =
          lstm_cell_backward(params.time_cells[li], grads.time_cells[li], ft.time_traces[li],
                             ft.layer_inputs[li], &prev.h, prev.c, dh[li], dc_carry[li]);
      dh_carry[li] = std::move(out.d_recurrent);
      dc_carry[li] = std::move(out.d_prev_cell);

      Vector dx = std::move(out.d_input);
      if (!pending_shortcut.empty())
        axpy(1.0, pending_shortcut, dx);
      if (l > 0) {
        axpy(1.0, dx, dh[li - 1]);
        pending_shortcut = residual_boundary(config, l + 1) ? std::move(dx) : Vector();
      }
    }
  }
  return grads;
}

// --- batch gradients ----------------------------------------------------------

namespace {

struct SequenceWork {
  RawLoss raw;
  TracedForward fwd;
};

std::size_t processed_count(std::size_t frame_count, int stride) {
  return (frame_count + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
}

} // namespace

BatchResult batch_gradient(const NetworkParams &params, const NetworkConfig &config,
                           const Batch &batch, bool parallel) {
  if (batch.sequences.empty())
    throw ConfigError("batch_gradient: empty batch");
  validate_params(params, config);
  for (const LabeledSequence &seq : batch.sequences) {
    if (seq.frames.empty())
      throw ConfigError("batch_gradient: empty sequence");
    if (seq.labels.size() != processed_count(seq.frames.size(), config.frame_stride))
      throw ConfigError("batch_gradient: sequence has " + std::to_string(seq.labels.size()) +
                        " labels but " +
                        std::to_string(processed_count(seq.frames.size(), config.frame_stride)) +
                        " processed frames");
  }

  const std::size_t n = batch.sequences.size();
  std::vector<SequenceWork> work(n);

  auto run_forward = [&](std::size_t s) {
    SequenceWork w;
    w.fwd = forward_sequence_traced(params, config, batch.sequences[s].frames);
    w.raw = cross_entropy_raw(w.fwd.logits, batch.sequences[s].labels, config.target_delay);
    return w;
  };

  if (parallel && n > 1) {
    std::vector<std::future<SequenceWork>> futures;
    futures.reserve(n);
    for (std::size_t s = 0; s < n; ++s)
      futures.push_back(std::async(std::launch::async, run_forward, s));
    for (std::size_t s = 0; s < n; ++s)
      work[s] = futures[s].get();
  } else {
    for (std::size_t s = 0; s < n; ++s)
      work[s] = run_forward(s);
  }

  BatchResult result;
  result.gradients = zeros_like(params);
  std::size_t compared = 0;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (const SequenceWork &w : work) {
    compared += w.raw.compared;
    correct += w.raw.correct;
    loss_sum += w.raw.sum;
  }
  result.compared = compared;
  if (compared == 0) {
    // Nothing to compare anywhere in the batch; gradient stays zero.
    return result;
  }
  result.loss = loss_sum / static_cast<double>(compared);
  result.frame_accuracy = static_cast<double>(correct) / static_cast<double>(compared);

  const double inv = 1.0 / static_cast<double>(compared);
  auto run_backward = [&](std::size_t s) {
    std::vector<Vector> dlogits = work[s].raw.dlogits;
    for (Vector &d : dlogits)
      for (double &x : d)
        x *= inv;
    return backward_sequence(params, config, work[s].fwd.trace, dlogits);
  };

  std::vector<GradientSet> per_seq(n);
  if (parallel && n > 1) {
    std::vector<std::future<GradientSet>> futures;
    futures.reserve(n);
    for (std::size_t s = 0; s < n; ++s)
      futures.push_back(std::async(std::launch::async, run_backward, s));
    for (std::size_t s = 0; s < n; ++s)
      per_seq[s] = futures[s].get();
  } else {
    for (std::size_t s = 0; s < n; ++s)
      per_seq[s] = run_backward(s);
  }

  // Fixed reduction order keeps repeated runs bitwise identical.
  auto acc = flatten_params(result.gradients);
  for (std::size_t s = 0; s < n; ++s) {
    const auto src = flatten_params(static_cast<const NetworkParams &>(per_seq[s]));
    for (std::size_t i = 0; i < acc.size(); ++i)
      *acc[i] += *src[i];
  }
  return result;
}

// --- gradient checking ---------------------------------------------------------

namespace {

double batch_loss_only(const NetworkParams &params, const NetworkConfig &config,
                       const Batch &batch) {
  double sum = 0.0;
  std::size_t compared = 0;
  for (const LabeledSequence &seq : batch.sequences) {
    const std::vector<Vector> logits = forward_sequence(params, config, seq.frames);
    RawLoss raw = cross_entropy_raw(logits, seq.labels, config.target_delay);
    sum += raw.sum;
    compared += raw.compared;
  }
  return compared == 0 ? 0.0 : sum / static_cast<double>(compared);
}

} // namespace

GradCheckReport grad_check(const NetworkParams &params, const NetworkConfig &config,
                           const Batch &batch, double step, double tolerance,
                           std::size_t subsample_above, std::uint64_t sample_seed) {
  if (step <= 0.0)
    throw ConfigError("grad_check: step must be positive");

  BatchResult analytic = batch_gradient(params, config, batch, /*parallel=*/true);
  NetworkParams probe = params; // perturbed copy
  auto probe_ptrs = flatten_params(probe);
  const auto analytic_ptrs = flatten_params(static_cast<const NetworkParams &>(analytic.gradients));
  const auto segments = param_segments(params);

  std::vector<std::size_t> indices;
  if (probe_ptrs.size() <= subsample_above) {
    indices.resize(probe_ptrs.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
  } else {
    indices.resize(probe_ptrs.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    std::mt19937_64 rng(sample_seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(subsample_above);
    std::sort(indices.begin(), indices.end());
  }

  GradCheckReport report;
  for (std::size_t idx : indices) {
    double *slot = probe_ptrs[idx];
    const double saved = *slot;
    *slot = saved + step;
    const double loss_plus = batch_loss_only(probe, config, batch);
    *slot = saved - step;
    const double loss_minus = batch_loss_only(probe, config, batch);
    *slot = saved;

    const double numeric = (loss_plus - loss_minus) / (2.0 * step);
    const double a = *analytic_ptrs[idx];
    const double rel = std::abs(a - numeric) /
                       std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = idx;
      report.worst_name = param_element_name(segments, idx);
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
    ++report.checked;
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

// --- optimizer -----------------------------------------------------------------

double global_norm(const GradientSet &grads) {
  const auto ptrs = flatten_params(static_cast<const NetworkParams &>(grads));
  double sq = 0.0;
  for (const double *p : ptrs)
    sq += *p * *p;
  return std::sqrt(sq);
}

double clip_global_norm(GradientSet &grads, double max_norm) {
  if (max_norm <= 0.0)
    throw ConfigError("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm <= max_norm || norm == 0.0)
    return 1.0;
  const double factor = max_norm / norm;
  for (double *p : flatten_params(grads))
    *p *= factor;
  return factor;
}

SgdOptimizer::SgdOptimizer(double learning_rate, double momentum)
    : learning_rate_(learning_rate), momentum_(momentum) {
  if (learning_rate <= 0.0)
    throw ConfigError("sgd: learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("sgd: momentum must lie in [0, 1)");
}

void SgdOptimizer::step(NetworkParams &params, const GradientSet &grads) {
  const auto grad_ptrs = flatten_params(static_cast<const NetworkParams &>(grads));
  for (const double *p : grad_ptrs)
    if (!std::isfinite(*p))
      throw NumericError("sgd: non-finite gradient, step refused");

  if (!velocity_ready_) {
    velocity_ = zeros_like(params);
    velocity_ready_ = true;
  }
  auto param_ptrs = flatten_params(params);
  auto vel_ptrs = flatten_params(velocity_);
  if (param_ptrs.size() != grad_ptrs.size() || param_ptrs.size() != vel_ptrs.size())
    throw DimensionError("sgd: parameter/gradient element counts differ, " +
                         std::to_string(param_ptrs.size()) + " vs " +
                         std::to_string(grad_ptrs.size()));

  for (std::size_t i = 0; i < param_ptrs.size(); ++i) {
    *vel_ptrs[i] = momentum_ * *vel_ptrs[i] - learning_rate_ * *grad_ptrs[i];
    *param_ptrs[i] += *vel_ptrs[i];
  }
}

} // namespace ltlstm

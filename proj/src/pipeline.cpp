#include "ltlstm/pipeline.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace ltlstm {

std::string to_string(LaneMode m) {
  switch (m) {
  case LaneMode::Sequential:
    return "sequential";
  case LaneMode::Pipelined:
    return "pipelined";
  case LaneMode::PipelinedBatched:
    return "pipelined_batched";
  }
  return "?";
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

void spin_for(std::chrono::microseconds d) {
  if (d.count() <= 0)
    return;
  const auto until = Clock::now() + d;
  while (Clock::now() < until) {
  }
}

// One completed time-lane frame: the h outputs of every layer, in frame order.
struct FrameBundle {
  std::size_t index = 0;
  std::vector<Vector> h;
};

// Single-producer single-consumer bounded handoff. The consumer always
// receives bundles in push order; window pops wait for a full window unless
// the stream has been closed, so window boundaries do not depend on timing.
class BundleQueue {
public:
  explicit BundleQueue(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {}

  void push(FrameBundle bundle) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [this] { return queue_.size() < capacity_ || aborted_; });
    if (aborted_)
      return; // consumer is gone; drop so the producer cannot block forever
    queue_.push_back(std::move(bundle));
    lock.unlock();
    not_empty_.notify_one();
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    not_empty_.notify_one();
  }

  void abort() {
    {
      std::lock_guard lock(mutex_);
      aborted_ = true;
    }
    not_full_.notify_one();
    not_empty_.notify_one();
  }

  // Blocks until `want` bundles are available or the queue is closed; returns
  // fewer than `want` only at end of stream. Empty result means done.
  std::vector<FrameBundle> pop_window(std::size_t want) {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [this, want] { return queue_.size() >= want || closed_; });
    const std::size_t take = std::min(want, queue_.size());
    std::vector<FrameBundle> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
      out.push_back(std::move(queue_.front()));
      queue_.pop_front();
    }
    lock.unlock();
    if (take > 0)
      not_full_.notify_one();
    return out;
  }

private:
  std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<FrameBundle> queue_;
  std::size_t capacity_;
  bool closed_ = false;
  bool aborted_ = false;
};

// Advances the whole time-LSTM stack by one frame and returns the h bundle.
std::vector<Vector> time_lane_frame(const NetworkParams &params, const NetworkConfig &config,
                                    const Vector &frame, FrameStates &states) {
  std::vector<Vector> h(static_cast<std::size_t>(config.num_layers));
  const Vector *x = &frame;
  for (int l = 0; l < config.num_layers; ++l) {
    const std::size_t li = static_cast<std::size_t>(l);
    const TimeCellState &prev = states.time_states[li];
    CellTrace ct = lstm_cell_forward(params.time_cells[li], *x, &prev.h, prev.c);
    states.time_states[li] = TimeCellState{std::move(ct.cell), std::move(ct.output)};
    h[li] = states.time_states[li].h;
    x = &h[li];
  }
  return h;
}

// Within-frame layer scan plus output layer for one bundle.
Vector layer_lane_frame(const NetworkParams &params, const NetworkConfig &config,
                        const std::vector<Vector> &h) {
  Vector m(static_cast<std::size_t>(config.cell_dim), 0.0);
  Vector g(static_cast<std::size_t>(config.proj_dim), 0.0);
  for (int l = 0; l < config.num_layers; ++l) {
    const std::size_t li = static_cast<std::size_t>(l);
    const CellParams &lc = params.layer_cells[li];
    const Vector *rec = has_recurrence(lc) ? &g : nullptr;
    CellTrace ct = lstm_cell_forward(lc, h[li], rec, m);
    m = std::move(ct.cell);
    g = std::move(ct.output);
  }
  Vector logits = matvec(params.output_weights, g);
  for (std::size_t i = 0; i < logits.size(); ++i)
    logits[i] += params.output_bias[i];
  return logits;
}

// --- batched layer lane --------------------------------------------------------
//
// Evaluates each scan layer across the whole window before moving up. Every
// per-frame value is produced by the same expression tree as the unbatched
// path, so results are bitwise identical; only the kernel granularity changes.

std::vector<Vector> batched_affine(const Matrix &w_in, const std::vector<Vector> &xs,
                                   const Matrix *w_rec, const std::vector<Vector> *rs,
                                   const Vector &bias) {
  std::vector<Vector> z = matvec_batch(w_in, xs);
  if (w_rec) {
    const std::vector<Vector> zr = matvec_batch(*w_rec, *rs);
    for (std::size_t t = 0; t < z.size(); ++t)
      for (std::size_t i = 0; i < z[t].size(); ++i)
        z[t][i] += zr[t][i];
  }
  for (Vector &zt : z)
    for (std::size_t i = 0; i < zt.size(); ++i)
      zt[i] += bias[i];
  return z;
}

std::vector<Vector> batched_plain_gate(const GateParams &gp, const std::vector<Vector> &xs,
                                       const std::vector<Vector> *rs,
                                       const std::vector<Vector> *peep_states) {
  const Matrix *w_rec = gp.w_recurrent ? &*gp.w_recurrent : nullptr;
  std::vector<Vector> z = batched_affine(gp.w_input, xs, w_rec, rs, gp.bias);
  if (gp.peephole)
    for (std::size_t t = 0; t < z.size(); ++t)
      for (std::size_t i = 0; i < z[t].size(); ++i)
        z[t][i] += (*gp.peephole)[i] * (*peep_states)[t][i];
  for (Vector &zt : z)
    zt = sigmoid(zt);
  return z;
}

std::vector<Vector> batched_any_gate(const AnyGate &gate, const std::vector<Vector> &xs,
                                     const std::vector<Vector> *rs,
                                     const std::vector<Vector> *peep_states) {
  if (const auto *gp = std::get_if<GateParams>(&gate))
    return batched_plain_gate(*gp, xs, rs, peep_states);

  const auto &fp = std::get<FactorizedGateParams>(gate);
  const Matrix *row_rec = fp.row.w_recurrent ? &*fp.row.w_recurrent : nullptr;
  const Matrix *col_rec = fp.col.w_recurrent ? &*fp.col.w_recurrent : nullptr;
  std::vector<Vector> row = batched_affine(fp.row.w_input, xs, row_rec, rs, fp.row.bias);
  std::vector<Vector> col = batched_affine(fp.col.w_input, xs, col_rec, rs, fp.col.bias);
  std::vector<Vector> out(xs.size());
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const Vector u = sigmoid(row[t]);
    const Vector v = sigmoid(col[t]);
    Vector gate_t(static_cast<std::size_t>(fp.k) * fp.k);
    for (int a = 0; a < fp.k; ++a)
      for (int b = 0; b < fp.k; ++b)
        gate_t[static_cast<std::size_t>(a) * fp.k + b] =
            std::sqrt(u[static_cast<std::size_t>(a)] * v[static_cast<std::size_t>(b)]);
    out[t] = std::move(gate_t);
  }
  return out;
}

std::vector<Vector> layer_lane_window(const NetworkParams &params, const NetworkConfig &config,
                                      const std::vector<FrameBundle> &window) {
  const std::size_t B = window.size();
  std::vector<Vector> m(B, Vector(static_cast<std::size_t>(config.cell_dim), 0.0));
  std::vector<Vector> g(B, Vector(static_cast<std::size_t>(config.proj_dim), 0.0));

  for (int l = 0; l < config.num_layers; ++l) {
    const std::size_t li = static_cast<std::size_t>(l);
    const CellParams &lc = params.layer_cells[li];
    const bool rec = has_recurrence(lc);

    std::vector<Vector> xs(B);
    for (std::size_t t = 0; t < B; ++t)
      xs[t] = window[t].h[li];

    const std::vector<Vector> *rs = rec ? &g : nullptr;
    std::vector<Vector> i_gate = batched_any_gate(lc.input_gate, xs, rs, &m);
    std::vector<Vector> f_gate = batched_any_gate(lc.forget_gate, xs, rs, &m);

    const Matrix *cand_rec = lc.cell_candidate.w_recurrent ? &*lc.cell_candidate.w_recurrent
                                                           : nullptr;
    std::vector<Vector> cand = batched_affine(lc.cell_candidate.w_input, xs, cand_rec, rs,
                                              lc.cell_candidate.bias);
    for (Vector &ct : cand)
      ct = tanh(ct);

    std::vector<Vector> new_m(B);
    for (std::size_t t = 0; t < B; ++t) {
      Vector cell(m[t].size());
      for (std::size_t i = 0; i < cell.size(); ++i)
        cell[i] = f_gate[t][i] * m[t][i] + i_gate[t][i] * cand[t][i];
      new_m[t] = std::move(cell);
    }

    std::vector<Vector> o_gate = batched_any_gate(lc.output_gate, xs, rs, &new_m);

    std::vector<Vector> pre(B);
    for (std::size_t t = 0; t < B; ++t) {
      const Vector phi = tanh(new_m[t]);
      pre[t] = hadamard(o_gate[t], phi);
    }
    std::vector<Vector> out = matvec_batch(lc.projection, pre);

    m = std::move(new_m);
    g = std::move(out);
  }

  std::vector<Vector> logits = matvec_batch(params.output_weights, g);
  for (Vector &lt : logits)
    for (std::size_t i = 0; i < lt.size(); ++i)
      lt[i] += params.output_bias[i];
  return logits;
}

} // namespace

PipelinedResult pipelined_forward(const NetworkParams &params, const NetworkConfig &config,
                                  const std::vector<Vector> &frames,
                                  const LaneSchedule &schedule) {
  if (config.variant != Variant::LayerTrajectory)
    throw ConfigError("pipelined_forward: requires the layer_trajectory variant, got " +
                      to_string(config.variant));
  if (frames.empty())
    throw ConfigError("pipelined_forward: empty frame sequence");
  if (schedule.mode == LaneMode::PipelinedBatched && schedule.batch_window < 1)
    throw ConfigError("pipelined_forward: batch_window must be >= 1");
  validate_params(params, config);

  const std::size_t T = frames.size();
  PipelinedResult result;
  result.logits.resize(T);
  result.timing.mode = schedule.mode;
  result.timing.frames = T;
  result.timing.batch_window =
      schedule.mode == LaneMode::PipelinedBatched ? schedule.batch_window : 1;

  if (schedule.mode == LaneMode::Sequential) {
    const auto wall_start = Clock::now();
    FrameStates states = initial_states(config);
    double time_busy = 0.0, layer_busy = 0.0;
    OpCounts time_ops{}, layer_ops{};
    for (std::size_t t = 0; t < T; ++t) {
      reset_op_counts();
      auto t0 = Clock::now();
      std::vector<Vector> h = time_lane_frame(params, config, frames[t], states);
      spin_for(schedule.time_lane_pad);
      auto t1 = Clock::now();
      time_busy += ms_between(t0, t1);
      time_ops += op_counts();

      reset_op_counts();
      auto t2 = Clock::now();
      result.logits[t] = layer_lane_frame(params, config, h);
      auto t3 = Clock::now();
      layer_busy += ms_between(t2, t3);
      layer_ops += op_counts();
    }
    result.timing.wall_ms = ms_between(wall_start, Clock::now());
    result.timing.time_lane_busy_ms = time_busy;
    result.timing.layer_lane_busy_ms = layer_busy;
    result.timing.time_kernel_invocations = time_ops.kernel_calls;
    result.timing.layer_kernel_invocations = layer_ops.kernel_calls;
    result.timing.time_lane_multiplies = time_ops.multiplies;
    result.timing.layer_lane_multiplies = layer_ops.multiplies;
    return result;
  }

  const std::size_t window =
      schedule.mode == LaneMode::PipelinedBatched ? static_cast<std::size_t>(schedule.batch_window)
                                                  : 1;
  BundleQueue queue(std::max<std::size_t>(static_cast<std::size_t>(schedule.queue_capacity),
                                          window));

  std::exception_ptr time_error, layer_error;
  double time_busy = 0.0, layer_busy = 0.0;
  OpCounts time_ops{}, layer_ops{};

  const auto wall_start = Clock::now();

  std::thread time_worker([&] {
    try {
      reset_op_counts();
      FrameStates states = initial_states(config);
      for (std::size_t t = 0; t < T; ++t) {
        auto t0 = Clock::now();
        FrameBundle bundle;
        bundle.index = t;
        bundle.h = time_lane_frame(params, config, frames[t], states);
        spin_for(schedule.time_lane_pad);
        time_busy += ms_between(t0, Clock::now());
        queue.push(std::move(bundle));
      }
      time_ops = op_counts();
    } catch (...) {
      time_error = std::current_exception();
    }
    queue.close();
  });

  std::thread layer_worker([&] {
    try {
      reset_op_counts();
      while (true) {
        std::vector<FrameBundle> bundles = queue.pop_window(window);
        if (bundles.empty())
          break;
        auto t0 = Clock::now();
        if (schedule.mode == LaneMode::PipelinedBatched) {
          std::vector<Vector> logits = layer_lane_window(params, config, bundles);
          for (std::size_t i = 0; i < bundles.size(); ++i)
            result.logits[bundles[i].index] = std::move(logits[i]);
        } else {
          result.logits[bundles.front().index] =
              layer_lane_frame(params, config, bundles.front().h);
        }
        layer_busy += ms_between(t0, Clock::now());
      }
      layer_ops = op_counts();
    } catch (...) {
      layer_error = std::current_exception();
      queue.abort();
    }
  });

  time_worker.join();
  layer_worker.join();
  result.timing.wall_ms = ms_between(wall_start, Clock::now());

  if (time_error)
    std::rethrow_exception(time_error);
  if (layer_error)
    std::rethrow_exception(layer_error);

  result.timing.time_lane_busy_ms = time_busy;
  result.timing.layer_lane_busy_ms = layer_busy;
  result.timing.time_kernel_invocations = time_ops.kernel_calls;
  result.timing.layer_kernel_invocations = layer_ops.kernel_calls;
  result.timing.time_lane_multiplies = time_ops.multiplies;
  result.timing.layer_lane_multiplies = layer_ops.multiplies;
  return result;
}

BenchReport pipeline_bench(const NetworkParams &params, const NetworkConfig &config,
                           const std::vector<Vector> &frames,
                           const std::vector<LaneSchedule> &schedules, int runs) {
  if (schedules.size() < 2)
    throw ConfigError("pipeline_bench: need at least two schedules to compare");
  if (runs < 1)
    throw ConfigError("pipeline_bench: runs must be >= 1");

  BenchReport report;
  for (const LaneSchedule &schedule : schedules) {
    pipelined_forward(params, config, frames, schedule); // warmup, discarded
    std::vector<TimingReport> samples;
    samples.reserve(static_cast<std::size_t>(runs));
    for (int r = 0; r < runs; ++r)
      samples.push_back(pipelined_forward(params, config, frames, schedule).timing);

    auto median_of = [&samples](auto field) {
      std::vector<double> vals;
      vals.reserve(samples.size());
      for (const TimingReport &s : samples)
        vals.push_back(field(s));
      std::sort(vals.begin(), vals.end());
      return vals[vals.size() / 2];
    };

    TimingReport median = samples.front(); // mode, frames, counters are constant
    median.wall_ms = median_of([](const TimingReport &s) { return s.wall_ms; });
    median.time_lane_busy_ms =
        median_of([](const TimingReport &s) { return s.time_lane_busy_ms; });
    median.layer_lane_busy_ms =
        median_of([](const TimingReport &s) { return s.layer_lane_busy_ms; });
    report.rows.push_back(median);
  }
  return report;
}

std::string bench_csv(const BenchReport &report) {
  std::ostringstream out;
  out << "mode,T,B,wall_ms,time_lane_busy_ms,layer_lane_busy_ms,layer_kernel_invocations\n";
  for (const TimingReport &r : report.rows)
    out << to_string(r.mode) << ',' << r.frames << ',' << r.batch_window << ',' << r.wall_ms
        << ',' << r.time_lane_busy_ms << ',' << r.layer_lane_busy_ms << ','
        << r.layer_kernel_invocations << "\n";
  return out.str();
}

} // namespace ltlstm

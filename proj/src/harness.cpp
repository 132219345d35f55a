#include "ltlstm/harness.hpp"
#include "ltlstm/checkpoint.hpp"
#include "ltlstm/detail/kv.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

namespace ltlstm {

std::string to_string(TaskKind k) {
  return k == TaskKind::DelayedRecall ? "delayed_recall" : "frame_parity";
}

TaskKind task_kind_from_string(const std::string &s) {
  if (s == "delayed_recall")
    return TaskKind::DelayedRecall;
  if (s == "frame_parity")
    return TaskKind::FrameParity;
  throw ConfigError("unknown task kind '" + s + "' (expected delayed_recall or frame_parity)");
}

namespace {

std::uint64_t splitmix64(std::uint64_t &state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d4d4a2c2b2ae35ULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed ^ (0xd1b54a32d192ed03ULL * (stream + 1));
  return splitmix64(s);
}

void validate_task(const SyntheticTaskSpec &spec) {
  if (spec.num_classes < 2)
    throw ConfigError("task: num_classes must be >= 2");
  if (spec.feature_dim < spec.num_classes)
    throw ConfigError("task: feature_dim must be >= num_classes so each class has a cue slot");
  if (spec.seq_len < 1 || spec.train_count < 1 || spec.eval_count < 1)
    throw ConfigError("task: seq_len, train_count and eval_count must be >= 1");
  if (spec.noise_std < 0.0)
    throw ConfigError("task: noise_std must be >= 0");
  if (spec.delay < 0)
    throw ConfigError("task: delay must be >= 0");
  if (spec.seq_len <= spec.delay)
    throw ConfigError("task: degenerate spec, seq_len " + std::to_string(spec.seq_len) +
                      " <= delay " + std::to_string(spec.delay) +
                      " leaves no frame to compare");
}

Batch generate_split(const SyntheticTaskSpec &spec, int count, std::mt19937_64 &rng) {
  std::uniform_int_distribution<int> cue_dist(0, spec.num_classes - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  Batch batch;
  batch.sequences.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    LabeledSequence seq;
    seq.frames.reserve(static_cast<std::size_t>(spec.seq_len));
    seq.labels.reserve(static_cast<std::size_t>(spec.seq_len));
    int parity = 0;
    for (int t = 0; t < spec.seq_len; ++t) {
      const int cue = cue_dist(rng);
      Vector frame(static_cast<std::size_t>(spec.feature_dim), 0.0);
      if (spec.noise_std > 0.0)
        for (double &x : frame)
          x = spec.noise_std * noise(rng);
      frame[static_cast<std::size_t>(cue)] += 1.0;
      seq.frames.push_back(std::move(frame));
      if (spec.kind == TaskKind::DelayedRecall) {
        seq.labels.push_back(cue);
      } else {
        parity = (parity + cue) % 2;
        seq.labels.push_back(parity);
      }
    }
    batch.sequences.push_back(std::move(seq));
  }
  return batch;
}

} // namespace

SyntheticData generate_task(const SyntheticTaskSpec &spec) {
  validate_task(spec);
  SyntheticData data;
  std::mt19937_64 train_rng(derive_seed(spec.seed, 0));
  std::mt19937_64 eval_rng(derive_seed(spec.seed, 1));
  data.train = generate_split(spec, spec.train_count, train_rng);
  data.eval = generate_split(spec, spec.eval_count, eval_rng);
  return data;
}

int task_label_classes(const SyntheticTaskSpec &spec) {
  return spec.kind == TaskKind::DelayedRecall ? spec.num_classes : 2;
}

// --- experiment config I/O -----------------------------------------------------

ExperimentConfig parse_experiment_config(std::istream &in) {
  detail::KvReader kv(detail::read_kv(in));
  ExperimentConfig c;

  c.network.variant = variant_from_string(kv.get_string("network.variant"));
  c.network.num_layers = static_cast<int>(kv.get_int("network.num_layers"));
  c.network.input_dim = static_cast<int>(kv.get_int("network.input_dim"));
  c.network.cell_dim = static_cast<int>(kv.get_int("network.cell_dim"));
  c.network.proj_dim = static_cast<int>(kv.get_int("network.proj_dim"));
  c.network.output_dim = static_cast<int>(kv.get_int("network.output_dim"));
  c.network.factorized_gates =
      factorized_gates_from_string(kv.get_string("network.factorized_gates", ""));
  c.network.target_delay = static_cast<int>(kv.get_int("network.target_delay", 0));
  c.network.frame_stride = static_cast<int>(kv.get_int("network.frame_stride", 1));

  c.task.kind = task_kind_from_string(kv.get_string("task.kind", "delayed_recall"));
  c.task.num_classes = static_cast<int>(kv.get_int("task.num_classes", 8));
  c.task.seq_len = static_cast<int>(kv.get_int("task.seq_len", 24));
  c.task.feature_dim = static_cast<int>(kv.get_int("task.feature_dim", 16));
  c.task.train_count = static_cast<int>(kv.get_int("task.train_count", 64));
  c.task.eval_count = static_cast<int>(kv.get_int("task.eval_count", 16));
  c.task.noise_std = kv.get_double("task.noise_std", 0.0);
  c.task.delay = static_cast<int>(kv.get_int("task.delay", 0));
  c.task.seed = static_cast<std::uint64_t>(kv.get_int("task.seed", 0));

  c.optimizer.learning_rate = kv.get_double("opt.learning_rate", 0.1);
  c.optimizer.momentum = kv.get_double("opt.momentum", 0.9);
  c.optimizer.clip_norm = kv.get_double("opt.clip_norm", 1.0);
  c.optimizer.batch_size = static_cast<int>(kv.get_int("opt.batch_size", 8));

  c.epochs = static_cast<int>(kv.get_int("run.epochs", 10));
  c.eval_every = static_cast<int>(kv.get_int("run.eval_every", 1));
  c.out_dir = kv.get_string("run.out_dir", "out");
  c.seed = static_cast<std::uint64_t>(kv.get_int("run.seed", 1));
  c.record_wall_time = kv.get_bool("run.record_wall_time", true);

  kv.reject_unused();
  validate_config(c.network);
  validate_task(c.task);
  if (c.epochs < 0)
    throw ConfigError("run.epochs must be >= 0");
  if (c.eval_every < 1)
    throw ConfigError("run.eval_every must be >= 1");
  if (c.optimizer.batch_size < 1)
    throw ConfigError("opt.batch_size must be >= 1");
  return c;
}

ExperimentConfig load_experiment_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file '" + path + "'");
  return parse_experiment_config(in);
}

void write_experiment_config(std::ostream &out, const ExperimentConfig &c) {
  out << "network.variant = " << to_string(c.network.variant) << "\n"
      << "network.num_layers = " << c.network.num_layers << "\n"
      << "network.input_dim = " << c.network.input_dim << "\n"
      << "network.cell_dim = " << c.network.cell_dim << "\n"
      << "network.proj_dim = " << c.network.proj_dim << "\n"
      << "network.output_dim = " << c.network.output_dim << "\n"
      << "network.factorized_gates = " << to_string(c.network.factorized_gates) << "\n"
      << "network.target_delay = " << c.network.target_delay << "\n"
      << "network.frame_stride = " << c.network.frame_stride << "\n"
      << "task.kind = " << to_string(c.task.kind) << "\n"
      << "task.num_classes = " << c.task.num_classes << "\n"
      << "task.seq_len = " << c.task.seq_len << "\n"
      << "task.feature_dim = " << c.task.feature_dim << "\n"
      << "task.train_count = " << c.task.train_count << "\n"
      << "task.eval_count = " << c.task.eval_count << "\n"
      << "task.noise_std = " << c.task.noise_std << "\n"
      << "task.delay = " << c.task.delay << "\n"
      << "task.seed = " << c.task.seed << "\n"
      << "opt.learning_rate = " << c.optimizer.learning_rate << "\n"
      << "opt.momentum = " << c.optimizer.momentum << "\n"
      << "opt.clip_norm = " << c.optimizer.clip_norm << "\n"
      << "opt.batch_size = " << c.optimizer.batch_size << "\n"
      << "run.epochs = " << c.epochs << "\n"
      << "run.eval_every = " << c.eval_every << "\n"
      << "run.out_dir = " << c.out_dir << "\n"
      << "run.seed = " << c.seed << "\n"
      << "run.record_wall_time = " << (c.record_wall_time ? "true" : "false") << "\n";
}

// --- experiment loop -----------------------------------------------------------

namespace {

struct EvalMetrics {
  double loss = 0.0;
  double acc = 0.0;
};

EvalMetrics evaluate(const NetworkParams &params, const NetworkConfig &config,
                     const Batch &batch) {
  double sum = 0.0;
  std::size_t compared = 0;
  std::size_t correct = 0;
  for (const LabeledSequence &seq : batch.sequences) {
    const std::vector<Vector> logits = forward_sequence(params, config, seq.frames);
    LossResult res = cross_entropy_loss(logits, seq.labels, config.target_delay);
    sum += res.loss * static_cast<double>(res.compared);
    compared += res.compared;
    correct += res.correct;
  }
  EvalMetrics m;
  if (compared > 0) {
    m.loss = sum / static_cast<double>(compared);
    m.acc = static_cast<double>(correct) / static_cast<double>(compared);
  }
  return m;
}

std::string format_metrics_row(const MetricsRow &row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g,%.3f", row.epoch, row.split.c_str(),
                row.loss, row.frame_acc, row.wall_s);
  return buf;
}

} // namespace

ExperimentResult run_experiment(const ExperimentConfig &config) {
  validate_config(config.network);
  validate_task(config.task);
  if (config.network.output_dim != task_label_classes(config.task))
    throw ConfigError("experiment: network.output_dim " +
                      std::to_string(config.network.output_dim) + " must equal the task's " +
                      std::to_string(task_label_classes(config.task)) + " label classes");

  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);

  const SyntheticData data = generate_task(config.task);
  NetworkParams params = init_network_params(config.network, derive_seed(config.seed, 0));
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, 1));
  SgdOptimizer optimizer(config.optimizer.learning_rate, config.optimizer.momentum);

  ExperimentResult result;
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_s = [&start, &config] {
    if (!config.record_wall_time)
      return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  auto push_eval = [&](int epoch) {
    const EvalMetrics m = evaluate(params, config.network, data.eval);
    result.metrics.push_back(MetricsRow{epoch, "eval", m.loss, m.acc, elapsed_s()});
    result.final_eval_loss = m.loss;
    result.final_eval_acc = m.acc;
  };

  push_eval(0); // untrained baseline

  std::vector<std::size_t> order(data.train.sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    double acc_sum = 0.0;
    std::size_t frames = 0;
    const std::size_t bs = static_cast<std::size_t>(config.optimizer.batch_size);
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      Batch minibatch;
      for (std::size_t i = begin; i < std::min(begin + bs, order.size()); ++i)
        minibatch.sequences.push_back(data.train.sequences[order[i]]);

      BatchResult batch = batch_gradient(params, config.network, minibatch);
      if (!std::isfinite(batch.loss))
        throw NumericError("experiment: non-finite train loss " + std::to_string(batch.loss) +
                           " at epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(begin) + "; gradient norm " +
                           std::to_string(global_norm(batch.gradients)));
      if (batch.compared == 0) {
        std::cerr << "warning: degenerate batch (no compared frames) at epoch " << epoch << "\n";
        continue;
      }
      if (config.optimizer.clip_norm > 0.0)
        clip_global_norm(batch.gradients, config.optimizer.clip_norm);
      optimizer.step(params, batch.gradients);

      loss_sum += batch.loss * static_cast<double>(batch.compared);
      acc_sum += batch.frame_accuracy * static_cast<double>(batch.compared);
      frames += batch.compared;
    }

    if (frames > 0)
      result.metrics.push_back(MetricsRow{epoch, "train",
                                          loss_sum / static_cast<double>(frames),
                                          acc_sum / static_cast<double>(frames), elapsed_s()});
    if (epoch % config.eval_every == 0 || epoch == config.epochs)
      push_eval(epoch);
  }

  // Persist everything: metrics, config echo with all seeds, final model.
  result.metrics_path = (fs::path(config.out_dir) / "metrics.csv").string();
  {
    std::ofstream csv(result.metrics_path, std::ios::trunc);
    if (!csv)
      throw ConfigError("cannot write '" + result.metrics_path + "'");
    csv << "epoch,split,loss,frame_acc,wall_s\n";
    for (const MetricsRow &row : result.metrics)
      csv << format_metrics_row(row) << "\n";
  }
  {
    std::ofstream echo((fs::path(config.out_dir) / "experiment.cfg").string(), std::ios::trunc);
    write_experiment_config(echo, config);
  }
  result.checkpoint_path = (fs::path(config.out_dir) / "model.ckpt").string();
  save_model(params, config.network, result.checkpoint_path);
  return result;
}

// --- gradient-norm probe --------------------------------------------------------

GradNormProfile grad_norm_probe(const NetworkParams &params, const NetworkConfig &config,
                                const Batch &batch) {
  BatchResult res = batch_gradient(params, config, batch);
  const auto ptrs = flatten_params(static_cast<const NetworkParams &>(res.gradients));
  const auto segments = param_segments(res.gradients);

  GradNormProfile profile;
  profile.layer_norms.assign(static_cast<std::size_t>(config.num_layers), 0.0);
  for (const ParamSegment &seg : segments) {
    if (seg.name.rfind("time_cell[", 0) != 0)
      continue;
    const std::size_t close = seg.name.find(']');
    const int layer = std::stoi(seg.name.substr(10, close - 10));
    double &acc = profile.layer_norms[static_cast<std::size_t>(layer)];
    for (std::size_t i = seg.offset; i < seg.offset + seg.count; ++i)
      acc += *ptrs[i] * *ptrs[i];
  }
  for (double &n : profile.layer_norms)
    n = std::sqrt(n);
  if (profile.layer_norms.back() > 0.0)
    profile.bottom_top_ratio = profile.layer_norms.front() / profile.layer_norms.back();
  return profile;
}

std::string probe_csv(const GradNormProfile &profile) {
  std::ostringstream out;
  out << "layer,grad_norm\n";
  for (std::size_t l = 0; l < profile.layer_norms.size(); ++l) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.17g", l + 1, profile.layer_norms[l]);
    out << buf << "\n";
  }
  return out.str();
}

ExperimentConfig depth_experiment_preset(Variant variant, int num_layers, std::uint64_t seed) {
  ExperimentConfig c;
  c.network.variant = variant;
  c.network.num_layers = num_layers;
  c.network.input_dim = 16;
  c.network.cell_dim = 64;
  c.network.proj_dim = 32;
  c.network.output_dim = 8;
  c.network.target_delay = 8;

  c.task.kind = TaskKind::DelayedRecall;
  c.task.num_classes = 8;
  c.task.seq_len = 28;
  c.task.feature_dim = 16;
  c.task.train_count = 48;
  c.task.eval_count = 16;
  c.task.noise_std = 0.05;
  c.task.delay = 8;
  c.task.seed = 777; // shared across seeds so only the model varies

  c.optimizer.learning_rate = 0.5;
  c.optimizer.momentum = 0.9;
  c.optimizer.clip_norm = 1.0;
  c.optimizer.batch_size = 8;

  c.epochs = 16;
  c.eval_every = 4;
  c.seed = seed;
  return c;
}

} // namespace ltlstm

#include "ltlstm/costmodel.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace ltlstm {

namespace {

std::uint64_t u64(int v) { return static_cast<std::uint64_t>(v); }

// One gate's dense product cost, or its factorized replacement: the two
// cell_dim x (in + rec) products collapse to four k x (in + rec)/2-sized ones,
// 2k(in + rec) multiplies in total.
std::uint64_t gate_ops(int cell_dim, int in, int rec, bool factorized, int k) {
  if (!factorized)
    return u64(cell_dim) * u64(in + rec);
  return 2 * u64(k) * u64(in + rec);
}

// All four gates plus the projection for one cell.
std::uint64_t cell_ops(int cell_dim, int in, int rec, int proj, bool fi, bool ff, bool fo,
                       int k) {
  std::uint64_t ops = 0;
  ops += gate_ops(cell_dim, in, rec, fi, k);
  ops += gate_ops(cell_dim, in, rec, ff, k);
  ops += gate_ops(cell_dim, in, rec, fo, k);
  ops += gate_ops(cell_dim, in, rec, false, k); // candidate, never factorized
  ops += u64(proj) * u64(cell_dim);
  return ops;
}

} // namespace

CostReport count_ops(const NetworkConfig &c) {
  validate_config(c);
  const int k = c.factorized_gates.any()
                    ? static_cast<int>(std::lround(std::sqrt(static_cast<double>(c.cell_dim))))
                    : 0;
  const auto &fg = c.factorized_gates;

  CostReport r;
  for (int l = 0; l < c.num_layers; ++l) {
    const int in = (l == 0) ? c.input_dim : c.proj_dim;
    r.time_lane_ops += cell_ops(c.cell_dim, in, c.proj_dim, c.proj_dim, fg.time_input,
                                fg.time_forget, fg.time_output, k);
  }

  const std::uint64_t output_ops = u64(c.output_dim) * u64(c.proj_dim);
  if (c.variant == Variant::LayerTrajectory) {
    for (int l = 0; l < c.num_layers; ++l) {
      const int rec = (l == 0) ? 0 : c.proj_dim;
      r.layer_lane_ops += cell_ops(c.cell_dim, c.proj_dim, rec, c.proj_dim, fg.layer_input,
                                   fg.layer_forget, fg.layer_output, k);
    }
    r.layer_lane_ops += output_ops;
    r.total_ops = r.time_lane_ops + r.layer_lane_ops;
    r.parallel_per_lane_ops = std::max(r.time_lane_ops, r.layer_lane_ops);
  } else {
    r.time_lane_ops += output_ops;
    r.total_ops = r.time_lane_ops;
    r.parallel_per_lane_ops = r.total_ops;
  }
  return r;
}

double factorization_ratio(int cell_dim, int in_dim, int rec_dim, int k) {
  if (cell_dim <= 0 || in_dim < 0 || rec_dim < 0)
    throw ConfigError("factorization_ratio: dimensions must be positive");
  if (k <= 0 || k * k != cell_dim)
    throw ConfigError("factorization_ratio: k^2 must equal cell_dim, got k=" +
                      std::to_string(k) + ", cell_dim=" + std::to_string(cell_dim));
  const double dense = static_cast<double>(cell_dim) * (in_dim + rec_dim);
  const double factorized = 2.0 * k * (in_dim + rec_dim);
  return factorized / dense; // = 2k / cell_dim
}

namespace {

const char *kConventionHeader =
    "counting convention: multiplies in dense weight products only; biases, peepholes,\n"
    "nonlinearities and elementwise products excluded; output layer included\n"
    "(in the layer lane for layer_trajectory, in the time lane otherwise)";

double to_millions(std::uint64_t ops) { return static_cast<double>(ops) / 1e6; }

} // namespace

std::string cost_table_text(const std::vector<std::pair<std::string, NetworkConfig>> &configs) {
  std::ostringstream out;
  out << kConventionHeader << "\n\n";
  out << std::left << std::setw(24) << "name" << std::right << std::setw(14) << "total"
      << std::setw(14) << "time_lane" << std::setw(14) << "layer_lane" << std::setw(14)
      << "per_lane" << std::setw(10) << "total_M" << std::setw(12) << "per_lane_M"
      << "\n";
  for (const auto &[name, config] : configs) {
    const CostReport r = count_ops(config);
    out << std::left << std::setw(24) << name << std::right << std::setw(14) << r.total_ops
        << std::setw(14) << r.time_lane_ops << std::setw(14) << r.layer_lane_ops << std::setw(14)
        << r.parallel_per_lane_ops << std::setw(10) << std::fixed << std::setprecision(1)
        << to_millions(r.total_ops) << std::setw(12) << to_millions(r.parallel_per_lane_ops)
        << "\n";
  }
  return out.str();
}

std::string cost_table_csv(const std::vector<std::pair<std::string, NetworkConfig>> &configs) {
  std::ostringstream out;
  out << "name,variant,num_layers,total_ops,time_lane_ops,layer_lane_ops,parallel_per_lane_ops,"
         "total_M,parallel_per_lane_M\n";
  for (const auto &[name, config] : configs) {
    const CostReport r = count_ops(config);
    out << name << ',' << to_string(config.variant) << ',' << config.num_layers << ','
        << r.total_ops << ',' << r.time_lane_ops << ',' << r.layer_lane_ops << ','
        << r.parallel_per_lane_ops << ',' << std::fixed << std::setprecision(1)
        << to_millions(r.total_ops) << ',' << to_millions(r.parallel_per_lane_ops) << "\n";
  }
  return out.str();
}

} // namespace ltlstm

#pragma once

#include "ltlstm/network.hpp"

#include <cstdint>
#include <iosfwd>

namespace ltlstm {

// Per-frame multiply counts under one fixed convention: one operation per
// weight-matrix element touched in a dense product. Biases, peepholes,
// nonlinearities, and elementwise products are excluded; the output layer is
// included. For the layer-trajectory variant the output layer belongs to the
// layer lane; otherwise everything is the time lane.
struct CostReport {
  std::uint64_t total_ops = 0;
  std::uint64_t time_lane_ops = 0;
  std::uint64_t layer_lane_ops = 0;
  std::uint64_t parallel_per_lane_ops = 0; // max of the lanes when they can overlap
};

CostReport count_ops(const NetworkConfig &config);

// Cost of one factorized gate relative to its dense counterpart: 2k/cell_dim,
// independent of the input and recurrent widths.
double factorization_ratio(int cell_dim, int in_dim, int rec_dim, int k);

// One line per config; text table or CSV. The header states the counting
// convention.
std::string cost_table_text(const std::vector<std::pair<std::string, NetworkConfig>> &configs);
std::string cost_table_csv(const std::vector<std::pair<std::string, NetworkConfig>> &configs);

} // namespace ltlstm

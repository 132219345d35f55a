#include "ltlstm/network.hpp"
#include "ltlstm/detail/kv.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace ltlstm {

std::string to_string(Variant v) {
  switch (v) {
  case Variant::Stacked:
    return "stacked";
  case Variant::Residual:
    return "residual";
  case Variant::LayerTrajectory:
    return "layer_trajectory";
  }
  return "?";
}

Variant variant_from_string(const std::string &s) {
  if (s == "stacked")
    return Variant::Stacked;
  if (s == "residual")
    return Variant::Residual;
  if (s == "layer_trajectory")
    return Variant::LayerTrajectory;
  throw ConfigError("unknown variant '" + s + "' (expected stacked, residual, or "
                    "layer_trajectory)");
}

FactorizedGates factorized_gates_from_string(const std::string &s) {
  FactorizedGates f;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (item.empty())
      continue;
    if (item == "time.input")
      f.time_input = true;
    else if (item == "time.forget")
      f.time_forget = true;
    else if (item == "time.output")
      f.time_output = true;
    else if (item == "layer.input")
      f.layer_input = true;
    else if (item == "layer.forget")
      f.layer_forget = true;
    else if (item == "layer.output")
      f.layer_output = true;
    else
      throw ConfigError("unknown factorized gate site '" + item +
                        "' (expected <time|layer>.<input|forget|output>)");
  }
  return f;
}

std::string to_string(const FactorizedGates &f) {
  std::string out;
  auto append = [&out](bool on, const char *name) {
    if (!on)
      return;
    if (!out.empty())
      out += ",";
    out += name;
  };
  append(f.time_input, "time.input");
  append(f.time_forget, "time.forget");
  append(f.time_output, "time.output");
  append(f.layer_input, "layer.input");
  append(f.layer_forget, "layer.forget");
  append(f.layer_output, "layer.output");
  return out;
}

namespace {

int factor_k(int cell_dim) {
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cell_dim))));
  if (k * k != cell_dim)
    throw ConfigError("factorized gates require a perfect-square cell_dim, got " +
                      std::to_string(cell_dim));
  return k;
}

} // namespace

void validate_config(const NetworkConfig &c) {
  if (c.num_layers < 1)
    throw ConfigError("num_layers must be >= 1");
  if (c.input_dim < 1 || c.cell_dim < 1 || c.proj_dim < 1 || c.output_dim < 1)
    throw ConfigError("all dimensions must be >= 1");
  if (c.target_delay < 0)
    throw ConfigError("target_delay must be >= 0");
  if (c.frame_stride < 1)
    throw ConfigError("frame_stride must be >= 1");
  if (c.factorized_gates.any())
    factor_k(c.cell_dim);
  if (c.factorized_gates.any_layer() && c.variant != Variant::LayerTrajectory)
    throw ConfigError("layer-gate factorization requires the layer_trajectory variant");
}

namespace {

struct ParamRng {
  std::mt19937_64 engine;
  explicit ParamRng(std::uint64_t seed) : engine(seed) {}

  void fill_uniform(Matrix &m) {
    // fan-in scaled range
    const double s = 1.0 / std::sqrt(static_cast<double>(m.cols));
    std::uniform_real_distribution<double> dist(-s, s);
    for (double &x : m.data)
      x = dist(engine);
  }
};

GateParams make_gate(ParamRng *rng, int cell, int in, int rec, bool peephole, double bias_init) {
  GateParams g;
  g.w_input = Matrix(cell, in);
  if (rng)
    rng->fill_uniform(g.w_input);
  if (rec > 0) {
    g.w_recurrent = Matrix(cell, rec);
    if (rng)
      rng->fill_uniform(*g.w_recurrent);
  }
  if (peephole)
    g.peephole = Vector(static_cast<std::size_t>(cell), 0.0);
  g.bias = Vector(static_cast<std::size_t>(cell), bias_init);
  return g;
}

GateFactor make_factor(ParamRng *rng, int k, int in, int rec, double bias_init) {
  GateFactor f;
  f.w_input = Matrix(k, in);
  if (rng)
    rng->fill_uniform(f.w_input);
  if (rec > 0) {
    f.w_recurrent = Matrix(k, rec);
    if (rng)
      rng->fill_uniform(*f.w_recurrent);
  }
  f.bias = Vector(static_cast<std::size_t>(k), bias_init);
  return f;
}

AnyGate make_any_gate(ParamRng *rng, bool factorized, int cell, int in, int rec,
                      double bias_init) {
  if (!factorized)
    return make_gate(rng, cell, in, rec, /*peephole=*/true, bias_init);
  const int k = factor_k(cell);
  FactorizedGateParams f;
  f.k = k;
  f.row = make_factor(rng, k, in, rec, bias_init);
  f.col = make_factor(rng, k, in, rec, bias_init);
  return f;
}

CellParams make_cell(ParamRng *rng, int cell, int in, int rec, int proj, bool fact_input,
                     bool fact_forget, bool fact_output) {
  CellParams p;
  p.input_gate = make_any_gate(rng, fact_input, cell, in, rec, 0.0);
  p.forget_gate = make_any_gate(rng, fact_forget, cell, in, rec, 1.0);
  p.output_gate = make_any_gate(rng, fact_output, cell, in, rec, 0.0);
  p.cell_candidate = make_gate(rng, cell, in, rec, /*peephole=*/false, 0.0);
  p.projection = Matrix(proj, cell);
  if (rng)
    rng->fill_uniform(p.projection);
  return p;
}

} // namespace

namespace {

NetworkParams build_params(const NetworkConfig &c, ParamRng *rng) {
  validate_config(c);
  NetworkParams params;
  const auto &fg = c.factorized_gates;
  for (int l = 0; l < c.num_layers; ++l) {
    const int in = (l == 0) ? c.input_dim : c.proj_dim;
    params.time_cells.push_back(make_cell(rng, c.cell_dim, in, c.proj_dim, c.proj_dim,
                                          fg.time_input, fg.time_forget, fg.time_output));
  }
  if (c.variant == Variant::LayerTrajectory) {
    for (int l = 0; l < c.num_layers; ++l) {
      const int rec = (l == 0) ? 0 : c.proj_dim; // bottom scan cell has no g-recurrence
      params.layer_cells.push_back(make_cell(rng, c.cell_dim, c.proj_dim, rec, c.proj_dim,
                                             fg.layer_input, fg.layer_forget, fg.layer_output));
    }
  }
  params.output_weights = Matrix(c.output_dim, c.proj_dim);
  if (rng)
    rng->fill_uniform(params.output_weights);
  params.output_bias = Vector(static_cast<std::size_t>(c.output_dim), 0.0);
  return params;
}

} // namespace

NetworkParams init_network_params(const NetworkConfig &c, std::uint64_t seed) {
  ParamRng rng(seed);
  return build_params(c, &rng);
}

NetworkParams empty_network_params(const NetworkConfig &c) { return build_params(c, nullptr); }

namespace {

GateParams zero_gate(const GateParams &g) {
  GateParams z = g;
  std::fill(z.w_input.data.begin(), z.w_input.data.end(), 0.0);
  if (z.w_recurrent)
    std::fill(z.w_recurrent->data.begin(), z.w_recurrent->data.end(), 0.0);
  if (z.peephole)
    std::fill(z.peephole->begin(), z.peephole->end(), 0.0);
  std::fill(z.bias.begin(), z.bias.end(), 0.0);
  return z;
}

AnyGate zero_any_gate(const AnyGate &g) {
  if (const auto *p = std::get_if<GateParams>(&g))
    return zero_gate(*p);
  FactorizedGateParams z = std::get<FactorizedGateParams>(g);
  for (GateFactor *f : {&z.row, &z.col}) {
    std::fill(f->w_input.data.begin(), f->w_input.data.end(), 0.0);
    if (f->w_recurrent)
      std::fill(f->w_recurrent->data.begin(), f->w_recurrent->data.end(), 0.0);
    std::fill(f->bias.begin(), f->bias.end(), 0.0);
  }
  return z;
}

CellParams zero_cell(const CellParams &c) {
  CellParams z;
  z.input_gate = zero_any_gate(c.input_gate);
  z.forget_gate = zero_any_gate(c.forget_gate);
  z.output_gate = zero_any_gate(c.output_gate);
  z.cell_candidate = zero_gate(c.cell_candidate);
  z.projection = Matrix(c.projection.rows, c.projection.cols);
  return z;
}

} // namespace

NetworkParams zeros_like(const NetworkParams &params) {
  NetworkParams z;
  z.time_cells.reserve(params.time_cells.size());
  for (const CellParams &c : params.time_cells)
    z.time_cells.push_back(zero_cell(c));
  z.layer_cells.reserve(params.layer_cells.size());
  for (const CellParams &c : params.layer_cells)
    z.layer_cells.push_back(zero_cell(c));
  z.output_weights = Matrix(params.output_weights.rows, params.output_weights.cols);
  z.output_bias = Vector(params.output_bias.size(), 0.0);
  return z;
}

void validate_params(const NetworkParams &params, const NetworkConfig &c) {
  validate_config(c);
  if (static_cast<int>(params.time_cells.size()) != c.num_layers)
    throw ConfigError("params hold " + std::to_string(params.time_cells.size()) +
                      " time cells, config demands " + std::to_string(c.num_layers));
  const bool lt = c.variant == Variant::LayerTrajectory;
  if (static_cast<int>(params.layer_cells.size()) != (lt ? c.num_layers : 0))
    throw ConfigError("params hold " + std::to_string(params.layer_cells.size()) +
                      " layer cells, config demands " +
                      std::to_string(lt ? c.num_layers : 0));
  for (int l = 0; l < c.num_layers; ++l) {
    const CellParams &tc = params.time_cells[static_cast<std::size_t>(l)];
    validate_cell(tc, "time_cell[" + std::to_string(l) + "]");
    const int in = (l == 0) ? c.input_dim : c.proj_dim;
    if (cell_dim(tc) != c.cell_dim || input_dim(tc) != in || recurrent_dim(tc) != c.proj_dim ||
        tc.projection.rows != c.proj_dim)
      throw ConfigError("time_cell[" + std::to_string(l) + "] dimensions disagree with config");
  }
  for (int l = 0; lt && l < c.num_layers; ++l) {
    const CellParams &lc = params.layer_cells[static_cast<std::size_t>(l)];
    validate_cell(lc, "layer_cell[" + std::to_string(l) + "]");
    const int rec = (l == 0) ? 0 : c.proj_dim;
    if (cell_dim(lc) != c.cell_dim || input_dim(lc) != c.proj_dim ||
        recurrent_dim(lc) != rec || lc.projection.rows != c.proj_dim)
      throw ConfigError("layer_cell[" + std::to_string(l) + "] dimensions disagree with config");
  }
  if (params.output_weights.rows != c.output_dim || params.output_weights.cols != c.proj_dim ||
      static_cast<int>(params.output_bias.size()) != c.output_dim)
    throw ConfigError("output layer dimensions disagree with config");
}

FrameStates initial_states(const NetworkConfig &c) {
  FrameStates s;
  s.time_states.resize(static_cast<std::size_t>(c.num_layers));
  for (TimeCellState &st : s.time_states) {
    st.c.assign(static_cast<std::size_t>(c.cell_dim), 0.0);
    st.h.assign(static_cast<std::size_t>(c.proj_dim), 0.0);
  }
  return s;
}

bool residual_boundary(const NetworkConfig &c, int layer) {
  if (c.variant != Variant::Residual || layer < 2)
    return false;
  if (layer == 2)
    return c.input_dim == c.proj_dim;
  return true;
}

FrameTrace forward_frame_traced(const NetworkParams &params, const NetworkConfig &config,
                                const Vector &frame, FrameStates &states) {
  const int L = config.num_layers;
  if (static_cast<int>(frame.size()) != config.input_dim)
    throw DimensionError("forward_frame: frame has length " + std::to_string(frame.size()) +
                         " but input_dim is " + std::to_string(config.input_dim));
  if (static_cast<int>(states.time_states.size()) != L)
    throw ConfigError("forward_frame: states hold " + std::to_string(states.time_states.size()) +
                      " layers, config demands " + std::to_string(L));

  FrameTrace trace;
  trace.input = frame;
  trace.prev_time_states = states.time_states;
  trace.layer_inputs.reserve(static_cast<std::size_t>(L));
  trace.time_traces.reserve(static_cast<std::size_t>(L));

  // Time lane, bottom to top. Each cell reads only its own prior-frame state.
  Vector x = frame;
  for (int l = 0; l < L; ++l) {
    const std::size_t li = static_cast<std::size_t>(l);
    trace.layer_inputs.push_back(x);
    const TimeCellState &prev = trace.prev_time_states[li];
    CellTrace ct = lstm_cell_forward(params.time_cells[li], x, &prev.h, prev.c);
    states.time_states[li] = TimeCellState{ct.cell, ct.output};
    if (l + 1 < L)
      x = residual_boundary(config, l + 2) ? add(x, ct.output) : ct.output;
    trace.time_traces.push_back(std::move(ct));
  }

  if (config.variant == Variant::LayerTrajectory) {
    // Layer scan, re-seeded from zero every frame.
    trace.layer_traces.reserve(static_cast<std::size_t>(L));
    Vector m(static_cast<std::size_t>(config.cell_dim), 0.0);
    Vector g(static_cast<std::size_t>(config.proj_dim), 0.0);
    for (int l = 0; l < L; ++l) {
      const std::size_t li = static_cast<std::size_t>(l);
      const CellParams &lc = params.layer_cells[li];
      const Vector *rec = has_recurrence(lc) ? &g : nullptr;
      CellTrace ct = lstm_cell_forward(lc, trace.time_traces[li].output, rec, m);
      m = ct.cell;
      g = ct.output;
      trace.layer_traces.push_back(std::move(ct));
    }
    trace.classifier_input = g;
  } else {
    trace.classifier_input = trace.time_traces.back().output;
  }

  trace.logits = matvec(params.output_weights, trace.classifier_input);
  for (std::size_t i = 0; i < trace.logits.size(); ++i)
    trace.logits[i] += params.output_bias[i];
  return trace;
}

FrameResult forward_frame(const NetworkParams &params, const NetworkConfig &config,
                          const Vector &frame, const FrameStates &states) {
  FrameStates next = states;
  FrameTrace trace = forward_frame_traced(params, config, frame, next);
  return FrameResult{std::move(trace.logits), std::move(next)};
}

std::vector<Vector> forward_sequence(const NetworkParams &params, const NetworkConfig &config,
                                     const std::vector<Vector> &frames) {
  if (frames.empty())
    throw ConfigError("forward_sequence: empty frame sequence");
  validate_params(params, config);
  FrameStates states = initial_states(config);
  std::vector<Vector> logits;
  for (std::size_t t = 0; t < frames.size(); t += static_cast<std::size_t>(config.frame_stride)) {
    FrameTrace trace = forward_frame_traced(params, config, frames[t], states);
    logits.push_back(std::move(trace.logits));
  }
  return logits;
}

// --- canonical parameter traversal -------------------------------------------

namespace {

struct ArrayVisitor {
  std::function<void(const std::string &, double *, std::size_t, int, int)> fn;

  void vec(const std::string &name, Vector &v) {
    fn(name, v.data(), v.size(), 0, static_cast<int>(v.size()));
  }
  void mat(const std::string &name, Matrix &m) {
    fn(name, m.data.data(), m.data.size(), m.rows, m.cols);
  }

  void gate(const std::string &name, GateParams &g) {
    mat(name + ".w_input", g.w_input);
    if (g.w_recurrent)
      mat(name + ".w_recurrent", *g.w_recurrent);
    if (g.peephole)
      vec(name + ".peephole", *g.peephole);
    vec(name + ".bias", g.bias);
  }

  void factor(const std::string &name, GateFactor &f) {
    mat(name + ".w_input", f.w_input);
    if (f.w_recurrent)
      mat(name + ".w_recurrent", *f.w_recurrent);
    vec(name + ".bias", f.bias);
  }

  void any_gate(const std::string &name, AnyGate &g) {
    if (auto *p = std::get_if<GateParams>(&g)) {
      gate(name, *p);
    } else {
      auto &f = std::get<FactorizedGateParams>(g);
      factor(name + ".row", f.row);
      factor(name + ".col", f.col);
    }
  }

  void cell(const std::string &name, CellParams &c) {
    any_gate(name + ".input_gate", c.input_gate);
    any_gate(name + ".forget_gate", c.forget_gate);
    any_gate(name + ".output_gate", c.output_gate);
    gate(name + ".cell_candidate", c.cell_candidate);
    mat(name + ".projection", c.projection);
  }

  void network(NetworkParams &p) {
    for (std::size_t l = 0; l < p.time_cells.size(); ++l)
      cell("time_cell[" + std::to_string(l) + "]", p.time_cells[l]);
    for (std::size_t l = 0; l < p.layer_cells.size(); ++l)
      cell("layer_cell[" + std::to_string(l) + "]", p.layer_cells[l]);
    mat("output_weights", p.output_weights);
    vec("output_bias", p.output_bias);
  }
};

} // namespace

std::vector<double *> flatten_params(NetworkParams &params) {
  std::vector<double *> out;
  ArrayVisitor v;
  v.fn = [&out](const std::string &, double *data, std::size_t n, int, int) {
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(data + i);
  };
  v.network(params);
  return out;
}

std::vector<const double *> flatten_params(const NetworkParams &params) {
  // The visitor mutates nothing; reuse it through a const_cast.
  auto ptrs = flatten_params(const_cast<NetworkParams &>(params));
  return {ptrs.begin(), ptrs.end()};
}

std::vector<ParamSegment> param_segments(const NetworkParams &params) {
  std::vector<ParamSegment> segs;
  std::size_t offset = 0;
  ArrayVisitor v;
  v.fn = [&segs, &offset](const std::string &name, double *, std::size_t n, int rows, int cols) {
    segs.push_back(ParamSegment{name, offset, n, rows, cols});
    offset += n;
  };
  v.network(const_cast<NetworkParams &>(params));
  return segs;
}

std::size_t param_count(const NetworkParams &params) {
  std::size_t n = 0;
  ArrayVisitor v;
  v.fn = [&n](const std::string &, double *, std::size_t c, int, int) { n += c; };
  v.network(const_cast<NetworkParams &>(params));
  return n;
}

std::string param_element_name(const std::vector<ParamSegment> &segments, std::size_t index) {
  for (const ParamSegment &s : segments) {
    if (index < s.offset || index >= s.offset + s.count)
      continue;
    const std::size_t rel = index - s.offset;
    if (s.rows > 0) {
      const std::size_t r = rel / static_cast<std::size_t>(s.cols);
      const std::size_t c = rel % static_cast<std::size_t>(s.cols);
      return s.name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
    }
    return s.name + "[" + std::to_string(rel) + "]";
  }
  return "<out of range " + std::to_string(index) + ">";
}

// --- config file I/O ----------------------------------------------------------

NetworkConfig parse_network_config(std::istream &in) {
  detail::KvReader kv(detail::read_kv(in));
  NetworkConfig c;
  c.variant = variant_from_string(kv.get_string("variant"));
  c.num_layers = static_cast<int>(kv.get_int("num_layers"));
  c.input_dim = static_cast<int>(kv.get_int("input_dim"));
  c.cell_dim = static_cast<int>(kv.get_int("cell_dim"));
  c.proj_dim = static_cast<int>(kv.get_int("proj_dim"));
  c.output_dim = static_cast<int>(kv.get_int("output_dim"));
  c.factorized_gates = factorized_gates_from_string(kv.get_string("factorized_gates", ""));
  c.target_delay = static_cast<int>(kv.get_int("target_delay", 0));
  c.frame_stride = static_cast<int>(kv.get_int("frame_stride", 1));
  kv.reject_unused();
  validate_config(c);
  return c;
}

NetworkConfig load_network_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file '" + path + "'");
  return parse_network_config(in);
}

void write_network_config(std::ostream &out, const NetworkConfig &c) {
  out << "variant = " << to_string(c.variant) << "\n"
      << "num_layers = " << c.num_layers << "\n"
      << "input_dim = " << c.input_dim << "\n"
      << "cell_dim = " << c.cell_dim << "\n"
      << "proj_dim = " << c.proj_dim << "\n"
      << "output_dim = " << c.output_dim << "\n"
      << "factorized_gates = " << to_string(c.factorized_gates) << "\n"
      << "target_delay = " << c.target_delay << "\n"
      << "frame_stride = " << c.frame_stride << "\n";
}

} // namespace ltlstm

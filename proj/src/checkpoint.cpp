#include "ltlstm/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace ltlstm {

namespace {

constexpr char kMagic[8] = {'L', 'T', 'L', 'S', 'T', 'M', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

struct Fnv1a {
  std::uint64_t state = 1469598103934665603ULL;
  void update(const void *data, std::size_t n) {
    const auto *bytes = static_cast<const unsigned char *>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state ^= bytes[i];
      state *= 1099511628211ULL;
    }
  }
};

struct Writer {
  std::ofstream out;
  Fnv1a hash;

  void raw(const void *data, std::size_t n) {
    hash.update(data, n);
    out.write(static_cast<const char *>(data), static_cast<std::streamsize>(n));
  }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
};

struct Reader {
  std::ifstream in;

  Fnv1a hash;

  void raw(void *data, std::size_t n) {
    in.read(static_cast<char *>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw TruncatedFileError("checkpoint truncated: expected " + std::to_string(n) +
                               " more bytes");
    hash.update(data, n);
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::int32_t i32() {
    std::int32_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
};

std::uint8_t pack_factorized(const FactorizedGates &f) {
  std::uint8_t bits = 0;
  bits |= f.time_input ? 1u : 0u;
  bits |= f.time_forget ? 2u : 0u;
  bits |= f.time_output ? 4u : 0u;
  bits |= f.layer_input ? 8u : 0u;
  bits |= f.layer_forget ? 16u : 0u;
  bits |= f.layer_output ? 32u : 0u;
  return bits;
}

FactorizedGates unpack_factorized(std::uint8_t bits) {
  FactorizedGates f;
  f.time_input = bits & 1u;
  f.time_forget = bits & 2u;
  f.time_output = bits & 4u;
  f.layer_input = bits & 8u;
  f.layer_forget = bits & 16u;
  f.layer_output = bits & 32u;
  return f;
}

} // namespace

void save_model(const NetworkParams &params, const NetworkConfig &config,
                const std::string &path) {
  validate_params(params, config);
  Writer w;
  w.out.open(path, std::ios::binary | std::ios::trunc);
  if (!w.out)
    throw CheckpointError("cannot open '" + path + "' for writing");

  w.raw(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);

  w.i32(static_cast<std::int32_t>(config.variant));
  w.i32(config.num_layers);
  w.i32(config.input_dim);
  w.i32(config.cell_dim);
  w.i32(config.proj_dim);
  w.i32(config.output_dim);
  const std::uint8_t fact = pack_factorized(config.factorized_gates);
  w.raw(&fact, 1);
  w.i32(config.target_delay);
  w.i32(config.frame_stride);

  const auto ptrs = flatten_params(params);
  w.u64(ptrs.size());
  for (const double *p : ptrs)
    w.f64(*p);

  const std::uint64_t checksum = w.hash.state;
  w.out.write(reinterpret_cast<const char *>(&checksum), sizeof checksum);
  w.out.flush();
  if (!w.out)
    throw CheckpointError("write failed for '" + path + "'");
}

std::pair<NetworkParams, NetworkConfig> load_model(const std::string &path) {
  Reader r;
  r.in.open(path, std::ios::binary);
  if (!r.in)
    throw CheckpointError("cannot open '" + path + "' for reading");

  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw BadMagicError("'" + path + "' is not a model checkpoint");

  const std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw VersionMismatchError("checkpoint format version " + std::to_string(version) +
                               ", this build reads version " + std::to_string(kFormatVersion));

  NetworkConfig config;
  const std::int32_t variant = r.i32();
  if (variant < 0 || variant > 2)
    throw CheckpointError("checkpoint declares unknown variant id " + std::to_string(variant));
  config.variant = static_cast<Variant>(variant);
  config.num_layers = r.i32();
  config.input_dim = r.i32();
  config.cell_dim = r.i32();
  config.proj_dim = r.i32();
  config.output_dim = r.i32();
  std::uint8_t fact = 0;
  r.raw(&fact, 1);
  config.factorized_gates = unpack_factorized(fact);
  config.target_delay = r.i32();
  config.frame_stride = r.i32();
  validate_config(config);

  // Structure comes from the config; only element values are stored.
  NetworkParams params = empty_network_params(config);
  auto ptrs = flatten_params(params);
  const std::uint64_t declared = r.u64();
  if (declared != ptrs.size())
    throw CheckpointError("checkpoint declares " + std::to_string(declared) +
                          " parameters, config implies " + std::to_string(ptrs.size()));
  for (double *p : ptrs)
    *p = r.f64();

  const std::uint64_t expected = r.hash.state;
  std::uint64_t stored = 0;
  r.in.read(reinterpret_cast<char *>(&stored), sizeof stored);
  if (static_cast<std::size_t>(r.in.gcount()) != sizeof stored)
    throw TruncatedFileError("checkpoint truncated: checksum missing");
  if (stored != expected)
    throw ChecksumError("checkpoint checksum mismatch");

  return {std::move(params), config};
}

} // namespace ltlstm

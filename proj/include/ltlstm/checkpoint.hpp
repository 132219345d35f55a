#pragma once

#include "ltlstm/network.hpp"

#include <utility>

namespace ltlstm {

// Checkpoint layout (little-endian):
//   magic "LTLSTMCK" (8 bytes)
//   format version  (u32)
//   config block    (fixed field order, see checkpoint.cpp)
//   element count   (u64)
//   parameters      (f64 each, canonical traversal order)
//   checksum        (u64, FNV-1a over everything above)
// Round trips are bit-exact.

class CheckpointError : public std::runtime_error {
public:
  explicit CheckpointError(const std::string &msg) : std::runtime_error(msg) {}
};

class BadMagicError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};
class VersionMismatchError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};
class TruncatedFileError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};
class ChecksumError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};

void save_model(const NetworkParams &params, const NetworkConfig &config,
                const std::string &path);

std::pair<NetworkParams, NetworkConfig> load_model(const std::string &path);

} // namespace ltlstm

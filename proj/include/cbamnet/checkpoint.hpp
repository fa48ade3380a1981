#pragma once

#include <filesystem>
#include <memory>

#include "cbamnet/common.hpp"
#include "cbamnet/model.hpp"

namespace cbamnet {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TruncatedCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TensorMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// "CBLF" magic, version, JSON header (spec + ordered tensor directory),
// then all tensors as little-endian 32-bit floats in header order.
inline constexpr char kCheckpointMagic[4] = {'C', 'B', 'L', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace cbamnet

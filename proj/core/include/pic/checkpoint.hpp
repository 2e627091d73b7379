// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout (little-endian):
//
//   "PICC" | u32 version | u32 entry count
//   per entry: u16 name length | name bytes | u8 dtype | u8 ndim | u32 dims[ndim] | payload
//   u32 JSON length | JSON bytes (configs, step, RNG state; keys sorted)
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "pic/model.hpp"
#include "pic/objectives.hpp"
#include "pic/tensor.hpp"

namespace pic {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::kFloat32;
  Shape shape;
  /// Raw element bytes in `dtype`.
  std::vector<std::uint8_t> payload;

  friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

struct Checkpoint {
  std::vector<CheckpointEntry> tensors;
  ModelConfig compressor_config;
  ModelConfig decoder_config;
  bool converter = false;
  TrainingConfig training;
  std::size_t step = 0;
  std::string rng_state;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

template <typename T>
Checkpoint make_checkpoint(CompressionModel<T>& model, const TrainingConfig& training,
                           std::size_t step, std::string rng_state);

/// Rebuilds the model with the stored configs and copies every tensor in.
/// Throws FormatError for missing, extra or mis-shaped tensors, or a dtype
/// other than T.
template <typename T>
CompressionModel<T> restore_model(const Checkpoint& checkpoint);

void write_checkpoint(const Checkpoint& checkpoint, std::ostream& out);
/// Throws FormatError on bad magic, unsupported version or truncation.
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pic

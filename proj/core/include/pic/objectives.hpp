// SPDX-License-Identifier: Apache-2.0
//
// Pre-training objectives.
//
//   reconstruction  decoder reads [H, <AE>, x_1 .. x_{L-1}] and predicts
//                   x_1 .. x_L; loss is the mean over the L positions.
//   completion      H is compressed from the prefix x_1 .. x_k; the decoder
//                   reads [H, x_k .. x_{L-1}] and predicts x_{k+1} .. x_L;
//                   loss is the mean over the L - k positions.
//   combined        lambda * completion + (1 - lambda) * reconstruction.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "pic/compressor.hpp"
#include "pic/model.hpp"

namespace pic {

struct TrainingConfig {
  double lambda = 0.5;
  /// Completion split k; 0 selects L / 2.
  std::size_t tc_split = 0;
  /// Compression ratio L / N.
  std::size_t ratio = 16;
  double learning_rate = 1e-4;
  std::size_t batch_size = 8;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  Paradigm mask_mode = Paradigm::kPic;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool freeze_decoder = false;

  /// Effective split for a context of `length` tokens.
  std::size_t split(std::size_t length) const {
    return tc_split == 0 ? length / 2 : tc_split;
  }

  /// Throws ContractError / DivisibilityError naming the offending field.
  void validate(std::size_t length) const;

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct LossBreakdown {
  double tr = 0;
  double tc = 0;
  double combined = 0;
};

/// Teacher-forced decoder logits for reconstruction, [L x kTextSize].
/// `memory` is in compressor space.
template <typename T>
Var<T> reconstruction_logits(const BoundSystem<T>& system, const Var<T>& memory,
                             std::span<const TokenId> context);

/// Teacher-forced decoder logits for completion, [(L - k) x kTextSize].
template <typename T>
Var<T> completion_logits(const BoundSystem<T>& system, const Var<T>& prefix_memory,
                         std::span<const TokenId> context, std::size_t split);

/// Throws ContractError when `memory` was compressed from a context of a
/// different length.
template <typename T>
Var<T> loss_reconstruction(const BoundSystem<T>& system, const MemoryEmbeddings<T>& memory,
                           std::span<const TokenId> context);

/// Throws IndexError when k is outside [1, L), ContractError when the memory
/// was not compressed from exactly k tokens.
template <typename T>
Var<T> loss_completion(const BoundSystem<T>& system,
                       const MemoryEmbeddings<T>& prefix_memory,
                       std::span<const TokenId> context, std::size_t split);

double loss_combined(double tr, double tc, double lambda);

template <typename T>
Var<T> loss_combined(const Var<T>& tr, const Var<T>& tc, double lambda);

template <typename T>
struct LossTerms {
  Var<T> tr;
  Var<T> tc;
  Var<T> combined;
  MemoryEmbeddings<T> memory;
  MemoryEmbeddings<T> prefix_memory;
};

/// Compresses the full context and its prefix with the configured paradigm and
/// records all three losses on the system's tape.
template <typename T>
LossTerms<T> compute_losses(const BoundSystem<T>& system, std::span<const TokenId> context,
                            const TrainingConfig& config);

}  // namespace pic

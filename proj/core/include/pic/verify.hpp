// SPDX-License-Identifier: Apache-2.0
//
// Self-checks behind `pic verify`: mask rule enumeration, perturbation-based
// receptive fields, attention structure and finite-difference gradients.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pic/model.hpp"
#include "pic/objectives.hpp"

namespace pic {

enum class LossKind : std::uint8_t { kReconstruction, kCompletion, kCombined };

std::string to_string(LossKind kind);

struct GradientGroupError {
  std::string parameter;
  std::size_t checked = 0;
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||) over the
  /// checked entries; 0 when both vanish.
  double relative_error = 0;
};

/// Compares analytic parameter gradients of one loss with central finite
/// differences. Checks up to `entries_per_group` randomly chosen entries of
/// every parameter (all of them when the tensor is smaller).
std::vector<GradientGroupError> gradient_check(CompressionModel<double>& model,
                                               std::span<const TokenId> context,
                                               const TrainingConfig& config, LossKind loss,
                                               std::size_t entries_per_group,
                                               std::uint64_t seed, double step = 1e-5);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

/// Block-causal mask against a direct rule enumeration for every L in
/// [2, max_length] and every N dividing L.
CheckResult verify_mask_oracle(std::size_t max_length = 64);

/// Random compressors of depth 1, 2 and 4, L = 8, N = 4: perturbing a token
/// in a later chunk never changes h_t.
CheckResult verify_future_chunk_independence(std::uint64_t seed);

/// Depth-1 compressor: h_t depends on exactly the tokens of chunk t.
CheckResult verify_single_layer_locality(std::uint64_t seed);

/// Memory rows put zero attention outside their chunk in every layer and head.
CheckResult verify_attention_structure(std::uint64_t seed);

/// 2-layer, d_model = 16, float64 model; every loss and parameter group must
/// reach relative error below 1e-5.
CheckResult verify_gradients(std::uint64_t seed, std::size_t entries_per_group = 12);

std::vector<CheckResult> run_invariant_suite(std::uint64_t seed);

}  // namespace pic

// SPDX-License-Identifier: Apache-2.0
//
// Consuming memory embeddings downstream: greedy generation conditioned on H
// and the evaluation metrics. Everything here reads parameters only.
#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pic/compressor.hpp"
#include "pic/model.hpp"

namespace pic {

enum class StopReason : std::uint8_t { kEos, kMaxLength };

std::string to_string(StopReason reason);

struct GenerationResult {
  /// Emitted tokens, EOS excluded.
  std::vector<TokenId> ids;
  StopReason stop = StopReason::kMaxLength;
  /// Number of memory rows placed ahead of the token inputs.
  std::size_t memory_rows = 0;
  /// Token part of the last decoder input: prompt followed by all but the
  /// final emitted token.
  std::vector<TokenId> decoder_tokens;
};

/// Greedy decoding over [convert(memory), prompt, generated so far] with a
/// causal mask. `memory` is [N x d_compressor] in compressor space. Argmax
/// ties resolve to the lowest id. Stops at EOS or after `max_len` tokens.
template <typename T>
GenerationResult greedy_generate(const CompressionModel<T>& model, const Tensor<T>& memory,
                                 std::span<const TokenId> prompt, std::size_t max_len);

/// greedy_generate with the <AE> prompt.
template <typename T>
GenerationResult reconstruct(const CompressionModel<T>& model, const Tensor<T>& memory,
                             std::size_t max_len);

struct EvalOptions {
  std::size_t ratio = 16;
  Paradigm paradigm = Paradigm::kPic;
  /// Completion split k; 0 selects L / 2.
  std::size_t split = 0;
  /// Also score free-running reconstruction by exact sequence match.
  bool free_running = false;
};

struct ReconstructionScore {
  /// Teacher-forced per-token exact match.
  double token_accuracy = 0;
  /// Fraction of samples whose free-running output equals the context.
  double sequence_exact_rate = 0;
  std::size_t n_samples = 0;
  std::size_t n_tokens = 0;
};

template <typename T>
ReconstructionScore eval_reconstruction_accuracy(const CompressionModel<T>& model,
                                                 std::span<const std::vector<TokenId>> corpus,
                                                 const EvalOptions& options);

/// Mean completion loss over the corpus.
template <typename T>
double eval_completion_nll(const CompressionModel<T>& model,
                           std::span<const std::vector<TokenId>> corpus,
                           const EvalOptions& options);

struct EvalReport {
  std::string metric;
  double value = 0;
  std::size_t n_samples = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
};

/// JSON object with keys metric, value, n_samples, config_hash, seed.
void write_eval_report(const EvalReport& report, std::ostream& out);

}  // namespace pic

// SPDX-License-Identifier: Apache-2.0
//
// Three ways of turning a context X (L tokens) into N memory embeddings:
//
//   direct     one pass over [X, M] under a plain causal mask; every memory
//              slot can read the whole context.
//   iterative  N passes; pass t reads [h_1 .. h_{t-1}, c_t, m_t] and emits h_t.
//   pic        one pass over [X, M] under the block-wise causal mask, which
//              gives slot t the chunk c_t plus the memory prefix m_1 .. m_t.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pic/autodiff.hpp"
#include "pic/masking.hpp"
#include "pic/tokenizer.hpp"
#include "pic/transformer.hpp"

namespace pic {

enum class Paradigm : std::uint8_t { kDirect, kIterative, kPic };

std::string to_string(Paradigm paradigm);
Paradigm paradigm_from_string(std::string_view name);

/// Z = [x_1 .. x_L, MEM_1 .. MEM_N] with its partition and one-pass mask.
struct CompressionInput {
  std::vector<TokenId> sequence;
  ChunkPartition partition;
  AttentionMask mask;
  /// Index of MEM_1 in `sequence`.
  std::size_t memory_offset() const { return partition.length(); }
};

/// Throws DivisibilityError when N does not divide L, ContractError when the
/// context contains non-byte ids or the paradigm is iterative, IndexError when
/// N exceeds the vocabulary's memory slots.
CompressionInput build_compression_input(std::span<const TokenId> context,
                                         std::size_t memory_count, Paradigm paradigm,
                                         const Vocabulary& vocabulary);

template <typename T>
struct MemoryEmbeddings {
  /// [N x d_model]
  Var<T> states;
  Paradigm paradigm = Paradigm::kPic;
  std::size_t source_length = 0;
  /// Transformer forward passes spent producing `states`.
  std::size_t passes = 0;
  /// Per-layer, per-head attention over Z (single-pass paradigms only, when
  /// requested).
  std::vector<std::vector<Tensor<T>>> attention;

  std::size_t count() const { return states.rows(); }
};

struct CompressOptions {
  bool record_attention = false;
  /// Per-layer mask overrides for the single-pass paradigms.
  std::span<const AttentionMask> layer_masks;
};

/// Compresses already-embedded context rows ([L x d_model]). Exposed so tests
/// can take gradients with respect to the context embeddings.
template <typename T>
MemoryEmbeddings<T> compress_embedded(const BoundModel<T>& compressor,
                                      const Var<T>& context, std::size_t memory_count,
                                      Paradigm paradigm,
                                      const CompressOptions& options = {});

template <typename T>
MemoryEmbeddings<T> compress(const BoundModel<T>& compressor,
                             std::span<const TokenId> context,
                             std::size_t memory_count, Paradigm paradigm,
                             const CompressOptions& options = {});

template <typename T>
MemoryEmbeddings<T> compress_pic(const BoundModel<T>& compressor,
                                 std::span<const TokenId> context,
                                 std::size_t memory_count) {
  return compress(compressor, context, memory_count, Paradigm::kPic);
}

template <typename T>
MemoryEmbeddings<T> compress_iterative(const BoundModel<T>& compressor,
                                       std::span<const TokenId> context,
                                       std::size_t memory_count) {
  return compress(compressor, context, memory_count, Paradigm::kIterative);
}

template <typename T>
MemoryEmbeddings<T> compress_direct(const BoundModel<T>& compressor,
                                    std::span<const TokenId> context,
                                    std::size_t memory_count) {
  return compress(compressor, context, memory_count, Paradigm::kDirect);
}

/// Inference helper: compresses on a private tape and returns plain values.
template <typename T>
struct CompressedValues {
  Tensor<T> states;
  std::size_t passes = 0;
  std::vector<std::vector<Tensor<T>>> attention;
};

template <typename T>
CompressedValues<T> compress_values(const ModelParams<T>& compressor,
                                    std::span<const TokenId> context,
                                    std::size_t memory_count, Paradigm paradigm,
                                    const CompressOptions& options = {});

/// Binary memory record: "PICM", u32 version, u32 N, u32 d_model, then
/// N x d_model little-endian float32.
inline constexpr std::uint32_t kMemoryRecordVersion = 1;
void write_memory_record(const Tensor<float>& states, std::ostream& out);
Tensor<float> read_memory_record(std::istream& in);

}  // namespace pic

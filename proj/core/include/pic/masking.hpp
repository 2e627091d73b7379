// SPDX-License-Identifier: Apache-2.0
//
// Attention visibility masks over the compression sequence
//   Z = [x_1 .. x_L, m_1 .. m_N]
// Context occupies indices [0, L), memory slot t (1-based) sits at L + t - 1.
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace pic {

/// Half-open index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Split of a length-L context into N equal contiguous chunks.
class ChunkPartition {
 public:
  /// Throws DivisibilityError when L % N != 0, ContractError when N == 0 or
  /// L < N.
  ChunkPartition(std::size_t length, std::size_t chunks);

  std::size_t length() const { return length_; }
  std::size_t chunk_count() const { return chunks_; }
  std::size_t chunk_length() const { return length_ / chunks_; }

  /// 0-based chunk index.
  const IndexRange& chunk(std::size_t t) const { return boundaries_.at(t); }
  const std::vector<IndexRange>& boundaries() const { return boundaries_; }

  /// 0-based chunk that owns context index j.
  std::size_t chunk_of(std::size_t j) const { return j / chunk_length(); }

 private:
  std::size_t length_;
  std::size_t chunks_;
  std::vector<IndexRange> boundaries_;
};

ChunkPartition partition_chunks(std::size_t length, std::size_t chunks);

enum class TokenRole : std::uint8_t { kContext, kMemory };

/// Block-wise causal visibility of query i over key j in Z. Indices are
/// 0-based over the L + N positions; throws IndexError when out of range.
bool visible(std::size_t i, std::size_t j, const ChunkPartition& partition);

/// Dense square additive mask. Entry (i, j) is 0 when query i may attend key
/// j and -inf otherwise.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t size, std::vector<TokenRole> roles);

  std::size_t size() const { return size_; }

  bool is_visible(std::size_t i, std::size_t j) const {
    return visible_[i * size_ + j] != 0;
  }
  void set_visible(std::size_t i, std::size_t j, bool v) {
    visible_[i * size_ + j] = v ? 1 : 0;
  }

  /// Additive entry: 0 or -infinity.
  double entry(std::size_t i, std::size_t j) const {
    return is_visible(i, j) ? 0.0 : -std::numeric_limits<double>::infinity();
  }

  TokenRole role(std::size_t i) const { return roles_.at(i); }
  const std::vector<TokenRole>& roles() const { return roles_; }

  std::size_t visible_count(std::size_t row) const;
  bool has_fully_masked_row() const;

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t size_ = 0;
  std::vector<std::uint8_t> visible_;
  std::vector<TokenRole> roles_;
};

/// Lower-triangular mask; every index is labeled context.
AttentionMask build_causal_mask(std::size_t size);

/// Causal mask over [X, M]: the direct-compression baseline. Memory slots see
/// the whole context plus the preceding memory slots.
AttentionMask build_full_causal_compression_mask(std::size_t length,
                                                 std::size_t chunks);

/// Block-wise causal mask over [X, M] (size L + N).
AttentionMask build_block_causal_mask(std::size_t length, std::size_t chunks);

/// One line per row of comma-separated 0/1 visibility.
void write_mask_csv(const AttentionMask& mask, std::ostream& out);
/// Plain (P2) PGM, white = visible.
void write_mask_pgm(const AttentionMask& mask, std::ostream& out);

}  // namespace pic

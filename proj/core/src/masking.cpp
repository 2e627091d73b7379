// SPDX-License-Identifier: Apache-2.0
#include "pic/masking.hpp"

#include <string>

#include "pic/error.hpp"

namespace pic {

ChunkPartition::ChunkPartition(std::size_t length, std::size_t chunks)
    : length_(length), chunks_(chunks) {
  if (chunks == 0) {
    throw ContractError("chunk count N must be >= 1");
  }
  if (length < chunks) {
    throw ContractError("context length L=" + std::to_string(length) +
                        " is smaller than chunk count N=" +
                        std::to_string(chunks));
  }
  if (length % chunks != 0) {
    throw DivisibilityError("context length L=" + std::to_string(length) +
                            " is not divisible by chunk count N=" +
                            std::to_string(chunks));
  }
  const std::size_t step = length / chunks;
  boundaries_.reserve(chunks);
  for (std::size_t t = 0; t < chunks; ++t) {
    boundaries_.push_back({t * step, (t + 1) * step});
  }
}

ChunkPartition partition_chunks(std::size_t length, std::size_t chunks) {
  return ChunkPartition(length, chunks);
}

bool visible(std::size_t i, std::size_t j, const ChunkPartition& partition) {
  const std::size_t L = partition.length();
  const std::size_t total = L + partition.chunk_count();
  if (i >= total || j >= total) {
    throw IndexError("visibility query (" + std::to_string(i) + ", " +
                     std::to_string(j) + ") outside sequence of length " +
                     std::to_string(total));
  }
  const bool query_memory = i >= L;
  const bool key_memory = j >= L;
  if (!query_memory && !key_memory) return i >= j;
  if (query_memory && key_memory) return i >= j;
  if (query_memory) return partition.chunk_of(j) == i - L;
  // Context queries never see memory keys.
  return false;
}

AttentionMask::AttentionMask(std::size_t size, std::vector<TokenRole> roles)
    : size_(size), visible_(size * size, 0), roles_(std::move(roles)) {
  if (roles_.size() != size) {
    throw ShapeError("mask role count " + std::to_string(roles_.size()) +
                     " != mask size " + std::to_string(size));
  }
}

std::size_t AttentionMask::visible_count(std::size_t row) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < size_; ++j) n += visible_[row * size_ + j];
  return n;
}

bool AttentionMask::has_fully_masked_row() const {
  for (std::size_t i = 0; i < size_; ++i) {
    if (visible_count(i) == 0) return true;
  }
  return false;
}

AttentionMask build_causal_mask(std::size_t size) {
  if (size == 0) throw ContractError("causal mask size must be >= 1");
  AttentionMask mask(size, std::vector<TokenRole>(size, TokenRole::kContext));
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j <= i; ++j) mask.set_visible(i, j, true);
  }
  return mask;
}

namespace {

std::vector<TokenRole> compression_roles(std::size_t length,
                                         std::size_t chunks) {
  std::vector<TokenRole> roles(length + chunks, TokenRole::kContext);
  for (std::size_t t = 0; t < chunks; ++t) roles[length + t] = TokenRole::kMemory;
  return roles;
}

}  // namespace

AttentionMask build_full_causal_compression_mask(std::size_t length,
                                                 std::size_t chunks) {
  const ChunkPartition partition(length, chunks);
  const std::size_t size = length + chunks;
  AttentionMask mask(size, compression_roles(length, chunks));
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j <= i; ++j) mask.set_visible(i, j, true);
  }
  return mask;
}

AttentionMask build_block_causal_mask(std::size_t length, std::size_t chunks) {
  const ChunkPartition partition(length, chunks);
  const std::size_t size = length + chunks;
  AttentionMask mask(size, compression_roles(length, chunks));
  // Context rows: plain causal over the context columns.
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j <= i; ++j) mask.set_visible(i, j, true);
  }
  // Memory rows: own chunk plus memory prefix including itself.
  for (std::size_t t = 0; t < chunks; ++t) {
    const std::size_t row = length + t;
    const IndexRange& chunk = partition.chunk(t);
    for (std::size_t j = chunk.begin; j < chunk.end; ++j) {
      mask.set_visible(row, j, true);
    }
    for (std::size_t s = 0; s <= t; ++s) mask.set_visible(row, length + s, true);
  }
  return mask;
}

void write_mask_csv(const AttentionMask& mask, std::ostream& out) {
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (std::size_t j = 0; j < mask.size(); ++j) {
      if (j) out << ',';
      out << (mask.is_visible(i, j) ? 1 : 0);
    }
    out << '\n';
  }
}

void write_mask_pgm(const AttentionMask& mask, std::ostream& out) {
  out << "P2\n" << mask.size() << ' ' << mask.size() << "\n255\n";
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (std::size_t j = 0; j < mask.size(); ++j) {
      if (j) out << ' ';
      out << (mask.is_visible(i, j) ? 255 : 0);
    }
    out << '\n';
  }
}

}  // namespace pic

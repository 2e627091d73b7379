// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "pic/error.hpp"
#include "pic/masking.hpp"

namespace pic {
namespace {

std::string render(const AttentionMask& mask) {
  std::string out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (std::size_t j = 0; j < mask.size(); ++j) out += mask.is_visible(i, j) ? '0' : '.';
    out += '\n';
  }
  return out;
}

// Independent restatement of the visibility rules, evaluated per pair.
bool expected_visible(std::size_t i, std::size_t j, std::size_t length, std::size_t chunks) {
  const std::size_t width = length / chunks;
  const bool i_context = i < length;
  const bool j_context = j < length;
  if (i_context && j_context) return j <= i;  // causal context
  if (i_context) return false;                // context never reads memory
  const std::size_t t = i - length;           // 0-based memory slot
  if (!j_context) return j - length <= t;     // memory prefix, inclusive
  return j / width == t;                      // own chunk only
}

TEST(Partition, EqualSplit) {
  const ChunkPartition p = partition_chunks(6, 3);
  EXPECT_EQ(p.boundaries(),
            (std::vector<IndexRange>{{0, 2}, {2, 4}, {4, 6}}));
  EXPECT_EQ(partition_chunks(8, 1).boundaries(), (std::vector<IndexRange>{{0, 8}}));
}

TEST(Partition, Errors) {
  EXPECT_THROW(partition_chunks(7, 2), DivisibilityError);
  EXPECT_THROW(partition_chunks(4, 0), ContractError);
  EXPECT_THROW(partition_chunks(2, 4), ContractError);
}

TEST(Partition, CoversContextContiguously) {
  for (std::size_t length = 1; length <= 64; ++length) {
    for (std::size_t n = 1; n <= length; ++n) {
      if (length % n != 0) continue;
      const ChunkPartition p = partition_chunks(length, n);
      std::size_t cursor = 0;
      for (std::size_t t = 0; t < n; ++t) {
        EXPECT_EQ(p.chunk(t).begin, cursor);
        EXPECT_EQ(p.chunk(t).size(), length / n);
        for (std::size_t j = p.chunk(t).begin; j < p.chunk(t).end; ++j) {
          EXPECT_EQ(p.chunk_of(j), t);
        }
        cursor = p.chunk(t).end;
      }
      EXPECT_EQ(cursor, length);
    }
  }
}

TEST(Visible, RuleExamples) {
  const ChunkPartition p = partition_chunks(8, 4);
  // Indices are 0-based: context 3 is index 2, memory 2 is index 9.
  EXPECT_TRUE(visible(2, 0, p));
  EXPECT_FALSE(visible(9, 0, p));
  EXPECT_TRUE(visible(9, 8, p));
  EXPECT_FALSE(visible(8, 9, p));
  EXPECT_THROW(visible(12, 0, p), IndexError);
}

TEST(BlockMask, FourTokensTwoSlots) {
  EXPECT_EQ(render(build_block_causal_mask(4, 2)),
            "0.....\n"
            "00....\n"
            "000...\n"
            "0000..\n"
            "00..0.\n"
            "..0000\n");
}

TEST(BlockMask, SingleTokenSingleSlot) {
  EXPECT_EQ(render(build_block_causal_mask(1, 1)), "0.\n00\n");
}

TEST(BlockMask, TwoTokensTwoSlots) {
  const AttentionMask mask = build_block_causal_mask(2, 2);
  EXPECT_EQ(render(mask),
            "0...\n"
            "00..\n"
            "0.0.\n"
            ".000\n");
}

TEST(BlockMask, PropagatesDivisibilityError) {
  EXPECT_THROW(build_block_causal_mask(7, 2), DivisibilityError);
}

TEST(BlockMask, EqualsRuleEnumeration) {
  for (std::size_t length = 1; length <= 64; ++length) {
    for (std::size_t n = 1; n <= length; ++n) {
      if (length % n != 0) continue;
      const AttentionMask mask = build_block_causal_mask(length, n);
      ASSERT_EQ(mask.size(), length + n);
      for (std::size_t i = 0; i < length + n; ++i) {
        for (std::size_t j = 0; j < length + n; ++j) {
          ASSERT_EQ(mask.is_visible(i, j), expected_visible(i, j, length, n))
              << "L=" << length << " N=" << n << " (" << i << "," << j << ")";
        }
      }
    }
  }
}

TEST(BlockMask, RowInvariants) {
  for (std::size_t length = 1; length <= 64; ++length) {
    for (std::size_t n = 1; n <= length; ++n) {
      if (length % n != 0) continue;
      const AttentionMask mask = build_block_causal_mask(length, n);
      const AttentionMask causal = build_causal_mask(length);
      EXPECT_FALSE(mask.has_fully_masked_row());
      for (std::size_t i = 0; i < length + n; ++i) EXPECT_TRUE(mask.is_visible(i, i));
      for (std::size_t t = 1; t <= n; ++t) {
        EXPECT_EQ(mask.visible_count(length + t - 1), length / n + t);
      }
      for (std::size_t i = 0; i < length; ++i) {
        for (std::size_t j = 0; j < length; ++j) {
          EXPECT_EQ(mask.is_visible(i, j), causal.is_visible(i, j));
        }
        for (std::size_t j = length; j < length + n; ++j) EXPECT_FALSE(mask.is_visible(i, j));
      }
      EXPECT_EQ(mask.role(0), TokenRole::kContext);
      EXPECT_EQ(mask.role(length), TokenRole::kMemory);
    }
  }
}

TEST(BlockMask, AdditiveEntries) {
  const AttentionMask mask = build_block_causal_mask(4, 2);
  EXPECT_EQ(mask.entry(0, 0), 0.0);
  EXPECT_EQ(mask.entry(0, 1), -std::numeric_limits<double>::infinity());
}

TEST(CausalMask, LowerTriangular) {
  const AttentionMask mask = build_causal_mask(3);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (mask.is_visible(i, j)) pairs.emplace_back(i, j);
    }
  }
  EXPECT_EQ(pairs, (std::vector<std::pair<std::size_t, std::size_t>>{
                       {0, 0}, {1, 0}, {1, 1}, {2, 0}, {2, 1}, {2, 2}}));
  EXPECT_THROW(build_causal_mask(0), ContractError);
}

TEST(DirectMask, MemoryReadsWholeContext) {
  EXPECT_EQ(render(build_full_causal_compression_mask(4, 2)),
            "0.....\n"
            "00....\n"
            "000...\n"
            "0000..\n"
            "00000.\n"
            "000000\n");
}

TEST(MaskExport, CsvAndPgm) {
  const AttentionMask mask = build_block_causal_mask(2, 2);
  std::ostringstream csv, pgm;
  write_mask_csv(mask, csv);
  write_mask_pgm(mask, pgm);
  EXPECT_EQ(csv.str(), "1,0,0,0\n1,1,0,0\n1,0,1,0\n0,1,1,1\n");
  EXPECT_EQ(pgm.str().substr(0, 3), "P2\n");
}

}  // namespace
}  // namespace pic

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pic {

using TokenId = std::size_t;

/// Byte-level vocabulary. Ids 0..255 are raw bytes, followed by four special
/// tokens, followed by `memory_slots` memory placeholder ids.
class Vocabulary {
 public:
  static constexpr TokenId kByteCount = 256;
  static constexpr TokenId kAE = 256;
  static constexpr TokenId kBOS = 257;
  static constexpr TokenId kEOS = 258;
  static constexpr TokenId kPAD = 259;
  /// Ids that have a row in the token embedding / output head.
  static constexpr TokenId kTextSize = 260;

  explicit Vocabulary(std::size_t memory_slots = 0) : memory_slots_(memory_slots) {}

  std::size_t memory_slots() const { return memory_slots_; }
  std::size_t size() const { return kTextSize + memory_slots_; }

  static bool is_byte(TokenId id) { return id < kByteCount; }
  static bool is_special(TokenId id) { return id >= kByteCount && id < kTextSize; }
  bool is_memory(TokenId id) const { return id >= kTextSize && id < size(); }

  /// Id of memory slot `slot` (0-based). Throws IndexError beyond capacity.
  TokenId memory_id(std::size_t slot) const;
  /// Inverse of memory_id.
  std::size_t memory_slot(TokenId id) const;

 private:
  std::size_t memory_slots_;
};

/// One token per byte; never inserts specials.
std::vector<TokenId> encode(std::string_view text);
/// Inverse of encode. Throws ContractError on a non-byte id.
std::string decode(std::span<const TokenId> ids);

enum class CorpusKind { kTemplate, kMarkov, kFile };

std::string to_string(CorpusKind kind);
CorpusKind corpus_kind_from_string(std::string_view name);

struct CorpusSpec {
  CorpusKind kind = CorpusKind::kTemplate;
  std::uint64_t seed = 0;
  std::size_t length = 128;
  std::size_t count = 200;
  /// Source file for kFile.
  std::filesystem::path path;
  /// Alphabet size for kMarkov (symbols are the bytes 'a', 'a'+1, ...).
  std::size_t markov_alphabet = 16;
};

/// Row-stochastic transition table used by the Markov generator for `spec`.
/// Exposed so the statistical test can compare against it.
std::vector<std::vector<double>> markov_transition_table(const CorpusSpec& spec);

/// Deterministic corpus for `spec`: `count` byte sequences of exactly
/// `length` tokens. File mode crops consecutive non-overlapping windows and
/// throws ContractError when the file is too short.
std::vector<std::vector<TokenId>> generate_corpus(const CorpusSpec& spec);

/// Uniform-length [B x L] block of token ids.
struct TrainingBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<TokenId> ids;

  std::span<const TokenId> row(std::size_t b) const {
    return {ids.data() + b * length, length};
  }
};

/// Stacks the first `batch_size` sequences in order. Throws ContractError on
/// ragged input or when batch_size exceeds the sequences available.
TrainingBatch make_batch(std::span<const std::vector<TokenId>> sequences,
                         std::size_t batch_size);

/// Corpus cache: one sequence per line, decimal ids separated by spaces.
void write_corpus_cache(std::span<const std::vector<TokenId>> corpus,
                        std::ostream& out);
std::vector<std::vector<TokenId>> read_corpus_cache(std::istream& in);

}  // namespace pic

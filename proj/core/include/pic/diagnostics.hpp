// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pic/compressor.hpp"
#include "pic/tensor.hpp"
#include "pic/transformer.hpp"

namespace pic {

enum class HeatmapKind : std::uint8_t { kAttention, kCosine };

std::string to_string(HeatmapKind kind);
HeatmapKind heatmap_kind_from_string(std::string_view name);

/// [N x L] map, rows indexed by memory slot and columns by context position.
struct Heatmap {
  HeatmapKind kind = HeatmapKind::kAttention;
  Tensor<double> values;
  /// Set by cosine_map when some vector had zero norm (its entries are 0).
  bool zero_norm = false;

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
};

/// Memory-row, context-column attention weights of one layer. `head` selects a
/// head; nullopt averages all heads. Throws IndexError for an out-of-range
/// layer or head and ContractError for the iterative paradigm.
template <typename T>
Heatmap attention_heatmap(const ModelParams<T>& compressor, std::span<const TokenId> context,
                          std::size_t memory_count, Paradigm paradigm, std::size_t layer,
                          std::optional<std::size_t> head = std::nullopt);

/// Entry (t, j) = cos(memory_t, tokens_j). Zero-norm vectors give 0 and set
/// Heatmap::zero_norm.
template <typename T>
Heatmap cosine_map(const Tensor<T>& memory, const Tensor<T>& tokens);

enum class TokenSource : std::uint8_t {
  /// Rows of the input embedding table.
  kInputEmbedding,
  /// Final-layer states at the context positions of the compression pass.
  kHiddenState,
};

/// Per-position context vectors to compare memory rows against, [L x d].
template <typename T>
Tensor<T> context_token_vectors(const ModelParams<T>& compressor,
                                std::span<const TokenId> context, std::size_t memory_count,
                                Paradigm paradigm, TokenSource source);

/// Cosine similarity of every unordered pair (i < j) of rows, row-major.
template <typename T>
std::vector<double> pairwise_cosines(const Tensor<T>& memory);

struct SimilarityHistogram {
  /// bins + 1 edges spanning [-1, 1].
  std::vector<double> edges;
  /// Normalized masses, one per bin.
  std::vector<double> masses;
  std::size_t pair_count = 0;
  double mean = 0;
  double stddev = 0;
  double skew = 0;
};

/// Histogram of pairwise cosines over every sample's memory rows. The last
/// bin is closed on the right. Throws ContractError when a sample has fewer
/// than two rows or `bins` is zero.
template <typename T>
SimilarityHistogram pairwise_memory_histogram(std::span<const Tensor<T>> memories,
                                              std::size_t bins);

/// Entry (t, j) is true when changing x_j changes h_t.
struct DependencyMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  bool at(std::size_t t, std::size_t j) const { return bits[t * cols + j] != 0; }
  friend bool operator==(const DependencyMatrix&, const DependencyMatrix&) = default;
};

/// Replaces each x_j by (x_j + 1) mod 256 in turn and recompresses. With
/// tolerance 0 any bit difference counts as a change; otherwise a coordinate
/// must move by more than `tolerance`.
template <typename T>
DependencyMatrix receptive_field_matrix(const ModelParams<T>& compressor, Paradigm paradigm,
                                        std::span<const TokenId> context,
                                        std::size_t memory_count, double tolerance = 0.0);

struct LatencyRow {
  Paradigm paradigm = Paradigm::kPic;
  std::size_t memory_count = 0;
  double median_ms = 0;
  std::size_t passes = 0;
};

struct LatencyOptions {
  std::size_t warmup = 2;
  std::size_t repetitions = 9;
};

/// Median compression wall time per (paradigm, N). Warmup runs are discarded.
template <typename T>
std::vector<LatencyRow> latency_benchmark(const ModelParams<T>& compressor,
                                          std::span<const TokenId> context,
                                          std::span<const std::size_t> memory_counts,
                                          std::span<const Paradigm> paradigms,
                                          const LatencyOptions& options = {});

struct LinearFit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};

/// Ordinary least squares y = slope * x + intercept.
LinearFit fit_line(std::span<const double> x, std::span<const double> y);

double median(std::vector<double> values);

/// One line per memory row, comma-separated values.
void write_heatmap_csv(const Heatmap& heatmap, std::ostream& out);
/// Plain PGM (P2), values scaled linearly from [min, max] to [0, 255].
void write_heatmap_pgm(const Heatmap& heatmap, std::ostream& out);
/// {"kind", "rows", "cols", "min", "max"} for the PGM scaling.
void write_heatmap_sidecar(const Heatmap& heatmap, std::ostream& out);
/// Header bin_left,bin_right,mass.
void write_histogram_csv(const SimilarityHistogram& histogram, std::ostream& out);
/// Header paradigm,N,median_ms,passes.
void write_benchmark_csv(std::span<const LatencyRow> rows, std::ostream& out);

}  // namespace pic

// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer: pre-norm residual blocks with RMS normalization,
// rotary positions, multi-head attention under an arbitrary additive mask and
// a SiLU feed-forward. The output head is tied to the token embedding table.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pic/autodiff.hpp"
#include "pic/masking.hpp"
#include "pic/tokenizer.hpp"

namespace pic {

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  /// Learnable memory slots (N_max). Zero for a plain decoder.
  std::size_t memory_slots = 0;
  std::size_t max_seq_len = 1024;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;

  Vocabulary vocabulary() const { return Vocabulary(memory_slots); }
  /// Full id space, including memory placeholder ids.
  std::size_t vocab_size() const { return Vocabulary::kTextSize + memory_slots; }

  /// Throws ContractError naming the offending field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct LayerParams {
  Parameter<T> attn_norm;
  Parameter<T> wq, wk, wv, wo;
  Parameter<T> ffn_norm;
  Parameter<T> w_up, w_down;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  /// [kTextSize x d_model]; rows double as the output head.
  Parameter<T> token_embedding;
  /// [memory_slots x d_model]
  Parameter<T> memory_embedding;
  std::vector<LayerParams<T>> layers;
  Parameter<T> final_norm;

  /// Every parameter in a fixed order.
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
};

/// Random initialization. Parameter names are prefixed with `prefix`.
template <typename T>
ModelParams<T> init_model_params(const ModelConfig& config, std::uint64_t seed,
                                 const std::string& prefix);

template <typename T>
struct BoundLayer {
  Var<T> attn_norm, wq, wk, wv, wo, ffn_norm, w_up, w_down;
};

/// Parameters placed on one tape.
template <typename T>
struct BoundModel {
  const ModelConfig* config = nullptr;
  Var<T> token_embedding;
  Var<T> memory_embedding;
  std::vector<BoundLayer<T>> layers;
  Var<T> final_norm;
};

/// `trainable` routes gradients into the parameters; otherwise they enter the
/// tape as constants.
template <typename T>
BoundModel<T> bind(Tape<T>& tape, ModelParams<T>& params, bool trainable);

template <typename T>
BoundModel<T> bind_frozen(Tape<T>& tape, const ModelParams<T>& params);

/// Counts transformer forward passes.
struct ForwardCounter {
  std::size_t passes = 0;
};

struct ForwardOptions {
  bool record_attention = false;
  /// When non-empty, layer l uses layer_masks[l] instead of the shared mask.
  std::span<const AttentionMask> layer_masks;
  ForwardCounter* counter = nullptr;
};

template <typename T>
struct ForwardOutput {
  /// Final-layer states after the final norm, [L' x d_model].
  Var<T> hidden;
  /// attention[layer][head] is an [L' x L'] row-stochastic matrix; filled
  /// only when requested.
  std::vector<std::vector<Tensor<T>>> attention;
};

/// Looks up embeddings for mixed ids: text ids read the token table, memory
/// ids read the memory table. Throws IndexError for ids outside the vocabulary.
template <typename T>
Var<T> embed(const BoundModel<T>& model, std::span<const TokenId> ids);

/// Runs every block over `input` ([L' x d_model]). Throws ShapeError when the
/// mask or positions do not match the input length.
template <typename T>
ForwardOutput<T> forward(const BoundModel<T>& model, const Var<T>& input,
                         std::span<const std::size_t> positions,
                         const AttentionMask& mask,
                         const ForwardOptions& options = {});

/// hidden * token_embedding^T -> [rows x kTextSize].
template <typename T>
Var<T> output_logits(const BoundModel<T>& model, const Var<T>& hidden);

/// 0, 1, ..., count - 1.
std::vector<std::size_t> iota_positions(std::size_t count, std::size_t start = 0);

}  // namespace pic

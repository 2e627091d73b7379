// SPDX-License-Identifier: Apache-2.0
#include "pic/objectives.hpp"

#include <vector>

namespace pic {

void TrainingConfig::validate(std::size_t length) const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ContractError("training field 'lambda' must be in [0, 1], got " +
                        std::to_string(lambda));
  }
  if (ratio == 0) throw ContractError("training field 'ratio' must be >= 1");
  if (length % ratio != 0) {
    throw DivisibilityError("training field 'ratio' (" + std::to_string(ratio) +
                            ") does not divide seq_len " + std::to_string(length));
  }
  const std::size_t k = split(length);
  if (k < 1 || k >= length) {
    throw ContractError("training field 'tc_split' must be in [1, " +
                        std::to_string(length) + "), got " + std::to_string(k));
  }
  if (k % ratio != 0) {
    throw DivisibilityError("training field 'tc_split' (" + std::to_string(k) +
                            ") must be a multiple of ratio " + std::to_string(ratio));
  }
  if (!(learning_rate > 0.0)) throw ContractError("training field 'lr' must be > 0");
  if (batch_size == 0) throw ContractError("training field 'batch_size' must be >= 1");
  if (!(clip_norm > 0.0)) throw ContractError("training field 'clip_norm' must be > 0");
}

namespace {

template <typename T>
Var<T> decoder_logits(const BoundSystem<T>& system, const Var<T>& memory,
                      std::span<const TokenId> inputs, std::size_t predicted) {
  const Var<T> converted = convert(system.converter, memory);
  const Var<T> parts[] = {converted, embed(system.decoder, inputs)};
  const Var<T> x = concat_rows(std::span<const Var<T>>(parts));
  const std::size_t n = x.rows();
  const ForwardOutput<T> out =
      forward(system.decoder, x, iota_positions(n), build_causal_mask(n));
  return output_logits(system.decoder, slice_rows(out.hidden, n - predicted, predicted));
}

std::vector<std::size_t> to_indices(std::span<const TokenId> ids) {
  return std::vector<std::size_t>(ids.begin(), ids.end());
}

}  // namespace

template <typename T>
Var<T> reconstruction_logits(const BoundSystem<T>& system, const Var<T>& memory,
                             std::span<const TokenId> context) {
  if (context.empty()) throw ContractError("reconstruction of an empty context");
  std::vector<TokenId> inputs;
  inputs.reserve(context.size());
  inputs.push_back(Vocabulary::kAE);
  inputs.insert(inputs.end(), context.begin(), context.end() - 1);
  return decoder_logits(system, memory, inputs, context.size());
}

template <typename T>
Var<T> completion_logits(const BoundSystem<T>& system, const Var<T>& prefix_memory,
                         std::span<const TokenId> context, std::size_t split) {
  if (split < 1 || split >= context.size()) {
    throw IndexError("completion split k=" + std::to_string(split) +
                     " outside [1, " + std::to_string(context.size()) + ")");
  }
  // x_k .. x_{L-1} in 1-based terms.
  const std::span<const TokenId> inputs = context.subspan(split - 1, context.size() - split);
  return decoder_logits(system, prefix_memory, inputs, context.size() - split);
}

template <typename T>
Var<T> loss_reconstruction(const BoundSystem<T>& system, const MemoryEmbeddings<T>& memory,
                           std::span<const TokenId> context) {
  if (memory.source_length != context.size()) {
    throw ContractError("reconstruction target has " + std::to_string(context.size()) +
                        " tokens but memory was compressed from " +
                        std::to_string(memory.source_length));
  }
  const Var<T> logits = reconstruction_logits(system, memory.states, context);
  const auto targets = to_indices(context);
  return cross_entropy(logits, std::span<const std::size_t>(targets));
}

template <typename T>
Var<T> loss_completion(const BoundSystem<T>& system,
                       const MemoryEmbeddings<T>& prefix_memory,
                       std::span<const TokenId> context, std::size_t split) {
  if (split < 1 || split >= context.size()) {
    throw IndexError("completion split k=" + std::to_string(split) +
                     " outside [1, " + std::to_string(context.size()) + ")");
  }
  if (prefix_memory.source_length != split) {
    throw ContractError("completion memory was compressed from " +
                        std::to_string(prefix_memory.source_length) +
                        " tokens, expected the k=" + std::to_string(split) + " prefix");
  }
  const Var<T> logits = completion_logits(system, prefix_memory.states, context, split);
  const auto targets = to_indices(context.subspan(split));
  return cross_entropy(logits, std::span<const std::size_t>(targets));
}

double loss_combined(double tr, double tc, double lambda) {
  return lambda * tc + (1.0 - lambda) * tr;
}

template <typename T>
Var<T> loss_combined(const Var<T>& tr, const Var<T>& tc, double lambda) {
  return add(scale(tc, static_cast<T>(lambda)), scale(tr, static_cast<T>(1.0 - lambda)));
}

template <typename T>
LossTerms<T> compute_losses(const BoundSystem<T>& system, std::span<const TokenId> context,
                            const TrainingConfig& config) {
  const std::size_t length = context.size();
  config.validate(length);
  const std::size_t k = config.split(length);
  LossTerms<T> terms;
  terms.memory = compress(system.compressor, context, length / config.ratio, config.mask_mode);
  terms.tr = loss_reconstruction(system, terms.memory, context);
  terms.prefix_memory =
      compress(system.compressor, context.first(k), k / config.ratio, config.mask_mode);
  terms.tc = loss_completion(system, terms.prefix_memory, context, k);
  terms.combined = loss_combined(terms.tr, terms.tc, config.lambda);
  return terms;
}

#define PIC_INSTANTIATE_OBJECTIVES(T)                                                   \
  template Var<T> reconstruction_logits<T>(const BoundSystem<T>&, const Var<T>&,        \
                                           std::span<const TokenId>);                   \
  template Var<T> completion_logits<T>(const BoundSystem<T>&, const Var<T>&,            \
                                       std::span<const TokenId>, std::size_t);          \
  template Var<T> loss_reconstruction<T>(const BoundSystem<T>&,                         \
                                         const MemoryEmbeddings<T>&,                    \
                                         std::span<const TokenId>);                     \
  template Var<T> loss_completion<T>(const BoundSystem<T>&, const MemoryEmbeddings<T>&, \
                                     std::span<const TokenId>, std::size_t);            \
  template Var<T> loss_combined<T>(const Var<T>&, const Var<T>&, double);               \
  template LossTerms<T> compute_losses<T>(const BoundSystem<T>&,                        \
                                          std::span<const TokenId>,                     \
                                          const TrainingConfig&);

PIC_INSTANTIATE_OBJECTIVES(float)
PIC_INSTANTIATE_OBJECTIVES(double)

}  // namespace pic

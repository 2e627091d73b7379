// SPDX-License-Identifier: Apache-2.0
#include "pic/decoder_bridge.hpp"

#include <json.hpp>

#include "pic/objectives.hpp"

namespace pic {

std::string to_string(StopReason reason) {
  return reason == StopReason::kEos ? "eos" : "max_length";
}

namespace {

template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t row) {
  const T* r = logits.data() + row * logits.cols();
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.cols(); ++j) {
    if (r[j] > r[best]) best = j;
  }
  return best;
}

std::size_t memory_count_for(std::size_t length, std::size_t ratio) {
  if (ratio == 0 || length % ratio != 0) {
    throw DivisibilityError("ratio " + std::to_string(ratio) + " does not divide length " +
                            std::to_string(length));
  }
  return length / ratio;
}

}  // namespace

template <typename T>
GenerationResult greedy_generate(const CompressionModel<T>& model, const Tensor<T>& memory,
                                 std::span<const TokenId> prompt, std::size_t max_len) {
  GenerationResult result;
  result.memory_rows = memory.ndim() == 2 ? memory.rows() : 0;
  std::vector<TokenId> tokens(prompt.begin(), prompt.end());
  while (result.ids.size() < max_len) {
    Tape<T> tape;
    const BoundSystem<T> system = bind_system_frozen(tape, model);
    std::vector<Var<T>> parts;
    if (result.memory_rows > 0) parts.push_back(convert(system.converter, tape.constant(memory)));
    if (!tokens.empty()) parts.push_back(embed(system.decoder, std::span<const TokenId>(tokens)));
    if (parts.empty()) throw ContractError("generation needs memory rows or a prompt");
    const Var<T> x = concat_rows(std::span<const Var<T>>(parts));
    const std::size_t n = x.rows();
    const ForwardOutput<T> out =
        forward(system.decoder, x, iota_positions(n), build_causal_mask(n));
    const Var<T> logits = output_logits(system.decoder, slice_rows(out.hidden, n - 1, 1));
    const TokenId next = argmax_row(logits.value(), 0);
    result.decoder_tokens = tokens;
    if (next == Vocabulary::kEOS) {
      result.stop = StopReason::kEos;
      return result;
    }
    result.ids.push_back(next);
    tokens.push_back(next);
  }
  result.stop = StopReason::kMaxLength;
  return result;
}

template <typename T>
GenerationResult reconstruct(const CompressionModel<T>& model, const Tensor<T>& memory,
                             std::size_t max_len) {
  const TokenId ae = Vocabulary::kAE;
  return greedy_generate(model, memory, std::span<const TokenId>(&ae, 1), max_len);
}

template <typename T>
ReconstructionScore eval_reconstruction_accuracy(const CompressionModel<T>& model,
                                                 std::span<const std::vector<TokenId>> corpus,
                                                 const EvalOptions& options) {
  ReconstructionScore score;
  std::size_t correct = 0, exact = 0;
  for (const std::vector<TokenId>& x : corpus) {
    const std::size_t n = memory_count_for(x.size(), options.ratio);
    Tape<T> tape;
    const BoundSystem<T> system = bind_system_frozen(tape, model);
    const MemoryEmbeddings<T> mem =
        compress(system.compressor, std::span<const TokenId>(x), n, options.paradigm);
    const Var<T> logits =
        reconstruction_logits(system, mem.states, std::span<const TokenId>(x));
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (argmax_row(logits.value(), i) == x[i]) ++correct;
    }
    score.n_tokens += x.size();
    ++score.n_samples;
    if (options.free_running) {
      const GenerationResult g = reconstruct(model, mem.states.value(), x.size());
      if (g.ids == x) ++exact;
    }
  }
  if (score.n_samples > 0) {
    score.token_accuracy = static_cast<double>(correct) / static_cast<double>(score.n_tokens);
    score.sequence_exact_rate =
        static_cast<double>(exact) / static_cast<double>(score.n_samples);
  }
  return score;
}

template <typename T>
double eval_completion_nll(const CompressionModel<T>& model,
                           std::span<const std::vector<TokenId>> corpus,
                           const EvalOptions& options) {
  if (corpus.empty()) throw ContractError("evaluation corpus is empty");
  double total = 0.0;
  for (const std::vector<TokenId>& x : corpus) {
    const std::size_t k = options.split == 0 ? x.size() / 2 : options.split;
    const std::size_t n = memory_count_for(k, options.ratio);
    Tape<T> tape;
    const BoundSystem<T> system = bind_system_frozen(tape, model);
    const std::span<const TokenId> context(x);
    const MemoryEmbeddings<T> prefix =
        compress(system.compressor, context.first(k), n, options.paradigm);
    total += static_cast<double>(loss_completion(system, prefix, context, k).value().item());
  }
  return total / static_cast<double>(corpus.size());
}

void write_eval_report(const EvalReport& report, std::ostream& out) {
  const nlohmann::json j = {{"metric", report.metric},
                            {"value", report.value},
                            {"n_samples", report.n_samples},
                            {"config_hash", report.config_hash},
                            {"seed", report.seed}};
  out << j.dump(2) << '\n';
}

#define PIC_INSTANTIATE_BRIDGE(T)                                                      \
  template GenerationResult greedy_generate<T>(const CompressionModel<T>&,             \
                                               const Tensor<T>&,                       \
                                               std::span<const TokenId>, std::size_t); \
  template GenerationResult reconstruct<T>(const CompressionModel<T>&, const Tensor<T>&, \
                                           std::size_t);                               \
  template ReconstructionScore eval_reconstruction_accuracy<T>(                        \
      const CompressionModel<T>&, std::span<const std::vector<TokenId>>,               \
      const EvalOptions&);                                                             \
  template double eval_completion_nll<T>(const CompressionModel<T>&,                   \
                                         std::span<const std::vector<TokenId>>,        \
                                         const EvalOptions&);

PIC_INSTANTIATE_BRIDGE(float)
PIC_INSTANTIATE_BRIDGE(double)

}  // namespace pic

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pic/compressor.hpp"
#include "pic/objectives.hpp"
#include "pic/tokenizer.hpp"
#include "pic/transformer.hpp"

namespace pic::cli {

/// Invalid flag, config file or field combination. Maps to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitValidation = 2;

// X(member, help). Every field is a JSON key of the same name and a flag with
// underscores turned into dashes.
#define PIC_RUN_CONFIG_FIELDS(X)                                                       \
  X(layers, "transformer blocks in compressor and decoder")                            \
  X(heads, "attention heads")                                                          \
  X(d_model, "compressor width")                                                       \
  X(d_ff, "feed-forward width (0 = 4 * d_model)")                                      \
  X(decoder_d_model, "decoder width (0 = d_model)")                                    \
  X(converter, "use an affine converter even when widths match")                      \
  X(rope_base, "rotary frequency base")                                                \
  X(lambda, "completion weight in the combined loss")                                  \
  X(tc_split, "completion split k (0 = seq_len / 2)")                                  \
  X(ratio, "compression ratio L / N")                                                  \
  X(lr, "learning rate")                                                               \
  X(batch_size, "sequences per step")                                                  \
  X(steps, "training steps")                                                           \
  X(seed, "run seed (initialization and batch order)")                                 \
  X(mask, "compression paradigm: pic, direct or iterative")                            \
  X(clip_norm, "global gradient norm clip")                                            \
  X(freeze_decoder, "keep decoder parameters fixed")                                   \
  X(pretrain_steps, "decoder language-model steps before compressor training")        \
  X(checkpoint_every, "extra checkpoint every k steps (0 = final only)")               \
  X(log_wall_time, "record wall_ms in the training log (0 otherwise)")                 \
  X(corpus, "corpus kind: template, markov or file")                                   \
  X(corpus_seed, "corpus generator seed")                                              \
  X(seq_len, "context length L")                                                       \
  X(corpus_count, "number of sequences")                                               \
  X(corpus_path, "text file for the file corpus")                                      \
  X(markov_alphabet, "Markov corpus alphabet size")                                    \
  X(checkpoint, "checkpoint to load")                                                  \
  X(memory, "memory record to reconstruct from")                                       \
  X(text, "context text to compress instead of a corpus sample")                       \
  X(sample, "corpus sample index")                                                     \
  X(kind, "heatmap kind: attention, cosine or similarity")                             \
  X(layer, "heatmap layer")                                                            \
  X(head, "heatmap head (-1 = mean over heads)")                                       \
  X(cosine_source, "cosine token vectors: input or hidden")                            \
  X(bins, "similarity histogram bins")                                                 \
  X(paradigms, "comma-separated paradigms to benchmark")                               \
  X(bench_n, "comma-separated memory counts to benchmark")                             \
  X(repetitions, "timed repetitions per benchmark cell")                               \
  X(warmup, "discarded warmup repetitions per benchmark cell")                         \
  X(eval_split, "evaluation corpus: train or heldout")                                 \
  X(eval_samples, "evaluation samples (0 = whole corpus)")                             \
  X(free_running, "also score free-running reconstruction")                            \
  X(max_len, "generation length limit (0 = seq_len)")

struct RunConfig {
  std::string command;

  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 0;
  std::size_t decoder_d_model = 0;
  bool converter = false;
  double rope_base = 10000.0;

  double lambda = 0.5;
  std::size_t tc_split = 0;
  std::size_t ratio = 16;
  double lr = 1e-4;
  std::size_t batch_size = 8;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::string mask = "pic";
  double clip_norm = 1.0;
  bool freeze_decoder = false;
  std::size_t pretrain_steps = 0;
  std::size_t checkpoint_every = 0;
  bool log_wall_time = false;

  std::string corpus = "template";
  std::uint64_t corpus_seed = 1;
  std::size_t seq_len = 128;
  std::size_t corpus_count = 200;
  std::string corpus_path;
  std::size_t markov_alphabet = 16;

  std::string checkpoint;
  std::string memory;
  std::string text;
  std::size_t sample = 0;
  std::string kind = "attention";
  std::size_t layer = 0;
  std::int64_t head = -1;
  std::string cosine_source = "input";
  std::size_t bins = 40;
  std::string paradigms = "pic,iterative";
  std::string bench_n = "2,4,8,16";
  std::size_t repetitions = 9;
  std::size_t warmup = 2;
  std::string eval_split = "train";
  std::size_t eval_samples = 0;
  bool free_running = false;
  std::size_t max_len = 0;

  // Invocation details; not part of the hash.
  std::string out = ".";
  bool force = false;
  std::string config_path;

  std::size_t memory_count() const { return seq_len / ratio; }
  ModelConfig compressor_config() const;
  ModelConfig decoder_config() const;
  TrainingConfig training_config() const;
  CorpusSpec corpus_spec() const;
  std::vector<Paradigm> paradigm_list() const;
  std::vector<std::size_t> bench_counts() const;

  /// Checks every field and combination; throws ValidationError naming the
  /// field.
  void validate() const;
};

/// Sorted-key JSON of every hashed field.
std::string canonical_json(const RunConfig& config);
/// First 16 hex digits of FNV-1a 64 over canonical_json.
std::string config_hash(const RunConfig& config);

/// Applies a flat JSON object onto `config`. Unknown keys and type mismatches
/// throw ValidationError.
void apply_json(RunConfig& config, const std::string& json_text);

struct ParseOutcome {
  /// Set when the process should exit without running a command (help,
  /// parse or validation failure).
  bool exit = false;
  int exit_code = kExitOk;
  RunConfig config;
};

/// Defaults, then --config file values, then explicit flags. Validates the
/// merged result. Messages go to stdout/stderr.
ParseOutcome parse_and_validate(int argc, const char* const* argv);

}  // namespace pic::cli

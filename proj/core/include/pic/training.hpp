// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pic/error.hpp"
#include "pic/model.hpp"
#include "pic/objectives.hpp"
#include "pic/random.hpp"

namespace pic {

/// Raised when a step produces a non-finite loss. The message carries the
/// offending batch so it can be replayed.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& what, std::vector<std::size_t> sample_indices)
      : Error(what), sample_indices_(std::move(sample_indices)) {}
  const std::vector<std::size_t>& sample_indices() const { return sample_indices_; }

 private:
  std::vector<std::size_t> sample_indices_;
};

/// Adam with bias correction and a constant learning rate.
template <typename T>
class Adam {
 public:
  Adam(double learning_rate, double beta1, double beta2, double eps);

  /// Applies one update to `params` from their accumulated gradients. The
  /// parameter list must be the same (same order) on every call.
  void step(std::span<Parameter<T>* const> params);

  std::size_t steps() const { return steps_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Global L2 norm of all gradients; rescales them to `max_norm` when larger.
/// Returns the norm before clipping.
template <typename T>
double clip_global_norm(std::span<Parameter<T>* const> params, double max_norm);

/// Epoch-shuffled index stream over a corpus of `size` sequences.
class BatchSampler {
 public:
  BatchSampler(std::size_t size, std::uint64_t seed);

  std::vector<std::size_t> next(std::size_t batch_size);

  std::string state() const;
  void restore(const std::string& state);

 private:
  void reshuffle();

  std::size_t size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

template <typename T>
class Trainer {
 public:
  Trainer(CompressionModel<T>& model, TrainingConfig config);

  /// Forward, combined loss, backward, clip and update for one batch. Losses
  /// are means over the batch rows. `sample_indices` only feeds diagnostics.
  LossBreakdown step(const TrainingBatch& batch,
                     std::span<const std::size_t> sample_indices = {});

  /// Parameters the optimizer updates.
  const std::vector<Parameter<T>*>& trainable() const { return trainable_; }
  std::size_t steps_taken() const { return optimizer_.steps(); }
  const TrainingConfig& config() const { return config_; }

 private:
  CompressionModel<T>& model_;
  TrainingConfig config_;
  std::vector<Parameter<T>*> trainable_;
  Adam<T> optimizer_;
};

struct TrainingLogRow {
  std::size_t step = 0;
  LossBreakdown loss;
  double wall_ms = 0;
};

struct TrainingLoopOptions {
  /// Called after every step; returning false stops the loop early.
  std::function<bool(const TrainingLogRow&)> on_step;
  /// When false, wall_ms is reported as 0 so logs are reproducible bytewise.
  bool record_wall_time = true;
  /// Sampler state to resume from, empty for a fresh start.
  std::string sampler_state;
};

struct TrainingRun {
  std::vector<TrainingLogRow> log;
  std::string sampler_state;
};

/// Runs config.steps steps over `corpus`, sampling batches with
/// BatchSampler(corpus.size(), config.seed).
template <typename T>
TrainingRun train(CompressionModel<T>& model, const TrainingConfig& config,
                  std::span<const std::vector<TokenId>> corpus,
                  const TrainingLoopOptions& options = {});

/// Plain next-token training of a decoder on `corpus`: input [BOS, x_1 ..
/// x_{L-1}], targets x_1 .. x_L. Returns the per-step mean loss.
template <typename T>
std::vector<double> pretrain_decoder(ModelParams<T>& decoder,
                                     std::span<const std::vector<TokenId>> corpus,
                                     std::size_t steps, std::size_t batch_size,
                                     double learning_rate, std::uint64_t seed);

/// CSV with header step,tr,tc,combined,wall_ms.
void write_training_log(std::ostream& out, std::span<const TrainingLogRow> rows);
void write_training_log_header(std::ostream& out);
void write_training_log_row(std::ostream& out, const TrainingLogRow& row);

}  // namespace pic

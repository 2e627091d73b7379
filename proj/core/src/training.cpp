// SPDX-License-Identifier: Apache-2.0
#include "pic/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace pic {

template <typename T>
Adam<T>::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

template <typename T>
void Adam<T>::step(std::span<Parameter<T>* const> params) {
  if (m_.empty()) {
    for (const Parameter<T>* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw ContractError("optimizer parameter list changed size between steps");
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    if (p.grad.size() != p.value.size()) {
      throw ShapeError("gradient of " + p.name + " has " + std::to_string(p.grad.size()) +
                       " entries, value has " + std::to_string(p.value.size()));
    }
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    T* w = p.value.data();
    const T* g = p.grad.data();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      const double update = lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
    }
  }
}

template <typename T>
double clip_global_norm(std::span<Parameter<T>* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter<T>* p : params) {
    for (const T g : p->grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Parameter<T>* p : params) {
      for (T& g : p->grad.values()) g = static_cast<T>(static_cast<double>(g) * factor);
    }
  }
  return norm;
}

BatchSampler::BatchSampler(std::size_t size, std::uint64_t seed) : size_(size), rng_(seed) {
  if (size == 0) throw ContractError("cannot sample batches from an empty corpus");
  reshuffle();
}

void BatchSampler::reshuffle() {
  order_.resize(size_);
  for (std::size_t i = 0; i < size_; ++i) order_[i] = i;
  for (std::size_t i = size_; i > 1; --i) {
    std::swap(order_[i - 1], order_[rng_.below(i)]);
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch_size) {
  if (batch_size > size_) {
    throw ContractError("batch size " + std::to_string(batch_size) + " exceeds corpus size " +
                        std::to_string(size_));
  }
  if (cursor_ + batch_size > size_) reshuffle();
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size));
  cursor_ += batch_size;
  return out;
}

std::string BatchSampler::state() const {
  std::ostringstream os;
  os << size_ << ' ' << cursor_;
  for (const std::size_t i : order_) os << ' ' << i;
  os << '\n' << rng_.state();
  return os.str();
}

void BatchSampler::restore(const std::string& state) {
  std::istringstream is(state);
  std::size_t size = 0, cursor = 0;
  if (!(is >> size >> cursor) || size != size_ || cursor > size) {
    throw FormatError("sampler state does not match a corpus of " + std::to_string(size_));
  }
  std::vector<std::size_t> order(size);
  for (std::size_t& i : order) {
    if (!(is >> i) || i >= size) throw FormatError("sampler state has a bad permutation");
  }
  std::string rest;
  std::getline(is, rest);
  std::string rng_state((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  rng_.restore(rng_state);
  order_ = std::move(order);
  cursor_ = cursor;
}

template <typename T>
Trainer<T>::Trainer(CompressionModel<T>& model, TrainingConfig config)
    : model_(model),
      config_(std::move(config)),
      optimizer_(config_.learning_rate, config_.beta1, config_.beta2, config_.adam_eps) {
  trainable_ = model_.compressor.parameters();
  for (Parameter<T>* p : model_.converter.parameters()) trainable_.push_back(p);
  if (!config_.freeze_decoder) {
    for (Parameter<T>* p : model_.decoder.parameters()) trainable_.push_back(p);
  }
}

namespace {

std::string describe_batch(const TrainingBatch& batch, std::span<const std::size_t> indices) {
  std::ostringstream os;
  os << "batch of " << batch.batch << " x " << batch.length;
  if (!indices.empty()) {
    os << ", sample indices [";
    for (std::size_t i = 0; i < indices.size(); ++i) os << (i ? " " : "") << indices[i];
    os << "]";
  }
  for (std::size_t b = 0; b < batch.batch; ++b) {
    os << "\n  row " << b << ":";
    for (const TokenId id : batch.row(b)) os << ' ' << id;
  }
  return os.str();
}

}  // namespace

template <typename T>
LossBreakdown Trainer<T>::step(const TrainingBatch& batch,
                               std::span<const std::size_t> sample_indices) {
  if (batch.batch == 0) throw ContractError("empty training batch");
  config_.validate(batch.length);
  for (Parameter<T>* p : model_.parameters()) p->zero_grad();

  const T inv_batch = static_cast<T>(1.0 / static_cast<double>(batch.batch));
  double tr = 0.0, tc = 0.0;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    Tape<T> tape;
    const BoundSystem<T> system = bind_system(tape, model_, true, !config_.freeze_decoder);
    const LossTerms<T> terms = compute_losses(system, batch.row(b), config_);
    const double tr_b = static_cast<double>(terms.tr.value().item());
    const double tc_b = static_cast<double>(terms.tc.value().item());
    if (!std::isfinite(tr_b) || !std::isfinite(tc_b)) {
      throw NonFiniteLossError("non-finite loss at step " + std::to_string(steps_taken() + 1) +
                                   " (tr=" + std::to_string(tr_b) +
                                   ", tc=" + std::to_string(tc_b) + ") on " +
                                   describe_batch(batch, sample_indices),
                               std::vector<std::size_t>(sample_indices.begin(),
                                                        sample_indices.end()));
    }
    tape.backward(scale(terms.combined, inv_batch));
    tr += tr_b;
    tc += tc_b;
  }
  const double n = static_cast<double>(batch.batch);
  LossBreakdown loss;
  loss.tr = tr / n;
  loss.tc = tc / n;
  loss.combined = loss_combined(loss.tr, loss.tc, config_.lambda);

  clip_global_norm<T>(trainable_, config_.clip_norm);
  optimizer_.step(trainable_);
  return loss;
}

template <typename T>
TrainingRun train(CompressionModel<T>& model, const TrainingConfig& config,
                  std::span<const std::vector<TokenId>> corpus,
                  const TrainingLoopOptions& options) {
  if (corpus.empty()) throw ContractError("training corpus is empty");
  config.validate(corpus.front().size());
  Trainer<T> trainer(model, config);
  BatchSampler sampler(corpus.size(), config.seed);
  if (!options.sampler_state.empty()) sampler.restore(options.sampler_state);

  TrainingRun run;
  run.log.reserve(config.steps);
  using Clock = std::chrono::steady_clock;
  for (std::size_t s = 0; s < config.steps; ++s) {
    const auto start = Clock::now();
    const std::vector<std::size_t> indices = sampler.next(config.batch_size);
    std::vector<std::vector<TokenId>> rows;
    rows.reserve(indices.size());
    for (const std::size_t i : indices) rows.push_back(corpus[i]);
    const TrainingBatch batch =
        make_batch(std::span<const std::vector<TokenId>>(rows), rows.size());
    TrainingLogRow row;
    row.loss = trainer.step(batch, indices);
    row.step = trainer.steps_taken();
    if (options.record_wall_time) {
      row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    }
    run.log.push_back(row);
    if (options.on_step && !options.on_step(row)) break;
  }
  run.sampler_state = sampler.state();
  return run;
}

template <typename T>
std::vector<double> pretrain_decoder(ModelParams<T>& decoder,
                                     std::span<const std::vector<TokenId>> corpus,
                                     std::size_t steps, std::size_t batch_size,
                                     double learning_rate, std::uint64_t seed) {
  if (corpus.empty()) throw ContractError("pretraining corpus is empty");
  Adam<T> optimizer(learning_rate, 0.9, 0.999, 1e-8);
  BatchSampler sampler(corpus.size(), seed);
  std::vector<Parameter<T>*> params = decoder.parameters();
  const T inv_batch = static_cast<T>(1.0 / static_cast<double>(batch_size));
  std::vector<double> losses;
  losses.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    for (Parameter<T>* p : params) p->zero_grad();
    double total = 0.0;
    for (const std::size_t i : sampler.next(batch_size)) {
      const std::vector<TokenId>& x = corpus[i];
      std::vector<TokenId> inputs;
      inputs.reserve(x.size());
      inputs.push_back(Vocabulary::kBOS);
      inputs.insert(inputs.end(), x.begin(), x.end() - 1);
      const std::vector<std::size_t> targets(x.begin(), x.end());
      Tape<T> tape;
      const BoundModel<T> bound = bind(tape, decoder, true);
      const Var<T> h = embed(bound, std::span<const TokenId>(inputs));
      const auto out = forward(bound, h, iota_positions(inputs.size()),
                               build_causal_mask(inputs.size()));
      const Var<T> loss = cross_entropy(output_logits(bound, out.hidden),
                                        std::span<const std::size_t>(targets));
      const double value = static_cast<double>(loss.value().item());
      if (!std::isfinite(value)) {
        throw NonFiniteLossError("non-finite decoder pretraining loss at step " +
                                     std::to_string(s + 1) + " on sample " + std::to_string(i),
                                 {i});
      }
      tape.backward(scale(loss, inv_batch));
      total += value;
    }
    clip_global_norm<T>(params, 1.0);
    optimizer.step(params);
    losses.push_back(total / static_cast<double>(batch_size));
  }
  return losses;
}

void write_training_log_header(std::ostream& out) { out << "step,tr,tc,combined,wall_ms\n"; }

void write_training_log_row(std::ostream& out, const TrainingLogRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.3f\n", row.step, row.loss.tr,
                row.loss.tc, row.loss.combined, row.wall_ms);
  out << buf;
}

void write_training_log(std::ostream& out, std::span<const TrainingLogRow> rows) {
  write_training_log_header(out);
  for (const TrainingLogRow& row : rows) write_training_log_row(out, row);
}

#define PIC_INSTANTIATE_TRAINING(T)                                                    \
  template class Adam<T>;                                                              \
  template class Trainer<T>;                                                           \
  template double clip_global_norm<T>(std::span<Parameter<T>* const>, double);         \
  template TrainingRun train<T>(CompressionModel<T>&, const TrainingConfig&,           \
                                std::span<const std::vector<TokenId>>,                 \
                                const TrainingLoopOptions&);                           \
  template std::vector<double> pretrain_decoder<T>(ModelParams<T>&,                    \
                                                   std::span<const std::vector<TokenId>>, \
                                                   std::size_t, std::size_t, double,   \
                                                   std::uint64_t);

PIC_INSTANTIATE_TRAINING(float)
PIC_INSTANTIATE_TRAINING(double)

}  // namespace pic

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "pic/decoder_bridge.hpp"
#include "pic/objectives.hpp"
#include "pic/training.hpp"
#include "test_support.hpp"

namespace pic {
namespace {

using test::random_bytes;
using test::tiny_config;

CompressionModel<double> double_model(std::uint64_t seed) {
  const ModelConfig comp = tiny_config(2, 8);
  return make_compression_model<double>(comp, test::decoder_of(comp), false, seed);
}

Tensor<double> memory_for(const CompressionModel<double>& model, const std::vector<TokenId>& x,
                          std::size_t n) {
  return compress_values(model.compressor, std::span<const TokenId>(x), n, Paradigm::kPic).states;
}

// Last decoder hidden state for [memory, AE].
Tensor<double> last_hidden(const CompressionModel<double>& model, const Tensor<double>& memory) {
  Tape<double> tape;
  const BoundSystem<double> system = bind_system_frozen(tape, model);
  const std::vector<TokenId> ae{Vocabulary::kAE};
  std::vector<Var<double>> parts{tape.constant(memory),
                                 embed(system.decoder, std::span<const TokenId>(ae))};
  const auto x = concat_rows(std::span<const Var<double>>(parts));
  const std::size_t n = x.rows();
  const auto h = forward(system.decoder, x, iota_positions(n), build_causal_mask(n)).hidden;
  return slice_rows(h, n - 1, 1).value();
}

TEST(GreedyGenerate, StopsAtEos) {
  auto model = double_model(1);
  model.decoder.token_embedding.value.fill(0.0);
  Rng rng(1);
  const auto x = random_bytes(16, rng);
  const auto memory = memory_for(model, x, 4);
  const auto h = last_hidden(model, memory);
  for (std::size_t c = 0; c < h.cols(); ++c) {
    model.decoder.token_embedding.value(Vocabulary::kEOS, c) = h(0, c);
  }
  const GenerationResult g = reconstruct(model, memory, 10);
  EXPECT_EQ(g.stop, StopReason::kEos);
  EXPECT_TRUE(g.ids.empty());
  EXPECT_EQ(g.memory_rows, 4u);
  EXPECT_EQ(g.decoder_tokens, std::vector<TokenId>{Vocabulary::kAE});
  EXPECT_EQ(to_string(g.stop), "eos");
}

TEST(GreedyGenerate, StopsAtMaxLengthAndIsDeterministic) {
  const auto model = double_model(2);
  Rng rng(2);
  const auto x = random_bytes(16, rng);
  const auto memory = memory_for(model, x, 4);
  const GenerationResult a = reconstruct(model, memory, 6);
  const GenerationResult b = reconstruct(model, memory, 6);
  ASSERT_EQ(a.stop, StopReason::kMaxLength);
  EXPECT_EQ(a.ids.size(), 6u);
  EXPECT_EQ(a.ids, b.ids);
  std::vector<TokenId> expected{Vocabulary::kAE};
  expected.insert(expected.end(), a.ids.begin(), a.ids.end() - 1);
  EXPECT_EQ(a.decoder_tokens, expected);
  for (const TokenId id : a.ids) EXPECT_LT(id, Vocabulary::kTextSize);
}

TEST(GreedyGenerate, PromptOnlyAndEmptyInputs) {
  const auto model = double_model(3);
  const std::vector<TokenId> prompt{Vocabulary::kBOS, 'a'};
  const GenerationResult g =
      greedy_generate(model, Tensor<double>(), std::span<const TokenId>(prompt), 3);
  EXPECT_EQ(g.memory_rows, 0u);
  EXPECT_EQ(g.ids.size(), 3u);
  EXPECT_THROW(greedy_generate(model, Tensor<double>(), std::span<const TokenId>(), 3),
               ContractError);
}

TEST(EvalReconstruction, OverfitModelReproducesItsSequence) {
  const ModelConfig comp = tiny_config(2, 4, 32);
  auto model = make_compression_model<float>(comp, test::decoder_of(comp), false, 4);
  Rng rng(4);
  const std::vector<std::vector<TokenId>> corpus{random_bytes(16, rng)};
  TrainingConfig config;
  config.ratio = 4;
  config.batch_size = 1;
  config.steps = 300;
  config.learning_rate = 3e-3;
  config.lambda = 0.0;
  train(model, config, corpus);

  EvalOptions options;
  options.ratio = 4;
  options.free_running = true;
  const ReconstructionScore score =
      eval_reconstruction_accuracy(model, std::span(corpus), options);
  EXPECT_EQ(score.token_accuracy, 1.0);
  EXPECT_EQ(score.sequence_exact_rate, 1.0);
  EXPECT_EQ(score.n_samples, 1u);
  EXPECT_EQ(score.n_tokens, 16u);
  const auto memory = compress_values(model.compressor, std::span<const TokenId>(corpus[0]), 4,
                                      Paradigm::kPic).states;
  EXPECT_EQ(reconstruct(model, memory, 16).ids, corpus[0]);
}

TEST(EvalReconstruction, UntrainedModelIsNearChance) {
  const auto model = double_model(5);
  Rng rng(5);
  std::vector<std::vector<TokenId>> corpus;
  for (int i = 0; i < 20; ++i) corpus.push_back(random_bytes(64, rng));
  EvalOptions options;
  options.ratio = 16;
  const ReconstructionScore score =
      eval_reconstruction_accuracy(model, std::span(corpus), options);
  ASSERT_EQ(score.n_tokens, 1280u);
  const double p = 1.0 / 256.0;
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(score.n_tokens));
  EXPECT_LE(score.token_accuracy, p + 3 * sigma);
}

TEST(EvalReconstruction, RejectsIndivisibleRatio) {
  const auto model = double_model(6);
  const std::vector<std::vector<TokenId>> corpus{std::vector<TokenId>(10, 'a')};
  EvalOptions options;
  options.ratio = 4;
  EXPECT_THROW(eval_reconstruction_accuracy(model, std::span(corpus), options),
               DivisibilityError);
}

TEST(EvalCompletion, MatchesMeanCompletionLoss) {
  const auto model = double_model(7);
  Rng rng(7);
  std::vector<std::vector<TokenId>> corpus;
  for (int i = 0; i < 3; ++i) corpus.push_back(random_bytes(16, rng));
  EvalOptions options;
  options.ratio = 4;
  double total = 0;
  for (const auto& x : corpus) {
    Tape<double> tape;
    const BoundSystem<double> system = bind_system_frozen(tape, model);
    const std::span<const TokenId> ctx(x);
    const auto prefix = compress(system.compressor, ctx.first(8), 2, Paradigm::kPic);
    total += loss_completion(system, prefix, ctx, 8).value().item();
  }
  EXPECT_NEAR(eval_completion_nll(model, std::span(corpus), options), total / 3, 1e-12);
  EXPECT_THROW(eval_completion_nll(model, std::span<const std::vector<TokenId>>(), options),
               ContractError);
}

TEST(EvalCompletion, ZeroTokenTableGivesLogVocabulary) {
  auto model = double_model(8);
  model.decoder.token_embedding.value.fill(0.0);
  Rng rng(8);
  const std::vector<std::vector<TokenId>> corpus{random_bytes(16, rng)};
  EvalOptions options;
  options.ratio = 4;
  EXPECT_NEAR(eval_completion_nll(model, std::span(corpus), options),
              std::log(static_cast<double>(Vocabulary::kTextSize)), 1e-12);
}

TEST(Eval, LeavesParametersUntouched) {
  const auto model = double_model(9);
  const auto copy = model;
  Rng rng(9);
  const std::vector<std::vector<TokenId>> corpus{random_bytes(16, rng)};
  EvalOptions options;
  options.ratio = 4;
  options.free_running = true;
  eval_reconstruction_accuracy(model, std::span(corpus), options);
  eval_completion_nll(model, std::span(corpus), options);
  auto& a = const_cast<CompressionModel<double>&>(model);
  auto& b = const_cast<CompressionModel<double>&>(copy);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(bit_equal(pa[i]->value, pb[i]->value)) << pa[i]->name;
  }
}

TEST(EvalReport, WritesAllKeys) {
  EvalReport report{"reconstruction_accuracy", 0.75, 12, "0123456789abcdef", 42};
  std::ostringstream out;
  write_eval_report(report, out);
  const auto j = nlohmann::json::parse(out.str());
  EXPECT_EQ(j.at("metric"), "reconstruction_accuracy");
  EXPECT_EQ(j.at("value"), 0.75);
  EXPECT_EQ(j.at("n_samples"), 12);
  EXPECT_EQ(j.at("config_hash"), "0123456789abcdef");
  EXPECT_EQ(j.at("seed"), 42);
  EXPECT_EQ(j.size(), 5u);
}

}  // namespace
}  // namespace pic

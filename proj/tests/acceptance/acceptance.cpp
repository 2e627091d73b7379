// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion. Exits 0 once
// every selected criterion has been evaluated; --strict also turns any FAIL
// into exit code 1. --report FILE writes the same lines to FILE.
//
//   pic_acceptance [--strict] [--report FILE] [criterion numbers...]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli/commands.hpp"
#include "cli/run_config.hpp"
#include "pic/checkpoint.hpp"
#include "pic/decoder_bridge.hpp"
#include "pic/diagnostics.hpp"
#include "pic/masking.hpp"
#include "pic/training.hpp"

namespace pic::acceptance {
namespace {

namespace fs = std::filesystem;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::vector<TokenId> random_bytes(std::size_t length, Rng& rng) {
  std::vector<TokenId> x(length);
  for (TokenId& id : x) id = rng.below(256);
  return x;
}

ModelConfig model_config(std::size_t layers, std::size_t slots, std::size_t d_model,
                         std::size_t heads) {
  ModelConfig c;
  c.layers = layers;
  c.heads = heads;
  c.d_model = d_model;
  c.d_ff = 4 * d_model;
  c.memory_slots = slots;
  c.max_seq_len = 256;
  return c;
}

ModelConfig decoder_of(ModelConfig c) {
  c.memory_slots = 0;
  return c;
}

bool rows_equal(const Tensor<float>& a, const Tensor<float>& b, std::size_t row) {
  return std::memcmp(a.row(row).data(), b.row(row).data(), a.cols() * sizeof(float)) == 0;
}

// ---------------------------------------------------------------------------
// 1. Mask oracle equivalence.

// Re-derives visibility from the three prose rules over Z = [x_1..x_L, m_1..m_N].
bool rule_visible(std::size_t i, std::size_t j, std::size_t L, std::size_t N) {
  const bool i_mem = i >= L, j_mem = j >= L;
  const std::size_t w = L / N;
  if (!i_mem && !j_mem) return j <= i;                   // context is causal
  if (i_mem && j_mem) return j <= i;                     // memory sees earlier memory
  if (i_mem && !j_mem) return j / w == i - L;            // memory reads its own chunk
  return false;                                          // context never reads memory
}

Verdict mask_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::size_t masks = 0, mismatches = 0;
  for (std::size_t L = 2; L <= 64; ++L) {
    for (std::size_t N = 1; N <= L; ++N) {
      if (L % N != 0) continue;
      const AttentionMask mask = build_block_causal_mask(L, N);
      ++masks;
      for (std::size_t i = 0; i < L + N; ++i) {
        for (std::size_t j = 0; j < L + N; ++j) {
          const bool want = rule_visible(i, j, L, N);
          if (mask.is_visible(i, j) != want) ++mismatches;
          const double entry = mask.entry(i, j);
          if ((entry == 0.0) != want) ++mismatches;
        }
      }
    }
  }
  const double s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {mismatches == 0 && s < 5.0, std::to_string(masks) + " masks, " +
                                          std::to_string(mismatches) + " mismatched entries, " +
                                          fmt(s, 3) + " s (limit 5 s)"};
}

// ---------------------------------------------------------------------------
// 2. Future-chunk independence and 3. single-layer locality.

// Perturbs each position to every other byte value and reports rows of
// `states` that changed although `must_hold(t, j)` says they may not.
std::size_t exhaustive_violations(const ModelParams<float>& params,
                                  const std::vector<TokenId>& x, std::size_t n,
                                  const std::function<bool(std::size_t, std::size_t)>& must_hold,
                                  std::size_t* perturbations) {
  const Tensor<float> base =
      compress_values(params, std::span<const TokenId>(x), n, Paradigm::kPic).states;
  std::size_t bad = 0;
  std::vector<TokenId> y = x;
  for (std::size_t j = 0; j < x.size(); ++j) {
    for (TokenId v = 0; v < 256; ++v) {
      if (v == x[j]) continue;
      y[j] = v;
      const Tensor<float> h =
          compress_values(params, std::span<const TokenId>(y), n, Paradigm::kPic).states;
      ++*perturbations;
      for (std::size_t t = 0; t < n; ++t) {
        if (must_hold(t, j) && !rows_equal(base, h, t)) ++bad;
      }
    }
    y[j] = x[j];
  }
  return bad;
}

Verdict future_chunk_independence() {
  const std::size_t L = 8, N = 4, w = L / N;
  std::size_t bad = 0, perturbations = 0;
  for (const std::size_t depth : {1, 2, 4}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto params =
          init_model_params<float>(model_config(depth, N, 16, 2), 100 * depth + seed, "c.");
      Rng rng(seed);
      const auto x = random_bytes(L, rng);
      bad += exhaustive_violations(
          params, x, N, [&](std::size_t t, std::size_t j) { return j / w > t; },
          &perturbations);
    }
  }
  return {bad == 0, "depths 1/2/4, " + std::to_string(perturbations) + " perturbations, " +
                        std::to_string(bad) + " changed rows that must hold"};
}

Verdict single_layer_locality() {
  const std::size_t L = 16, N = 4, w = L / N;
  std::size_t bad = 0, perturbations = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto params = init_model_params<float>(model_config(1, N, 16, 2), 200 + seed, "c.");
    Rng rng(seed);
    const auto x = random_bytes(L, rng);
    bad += exhaustive_violations(
        params, x, N, [&](std::size_t t, std::size_t j) { return j / w != t; }, &perturbations);
  }
  return {bad == 0, std::to_string(perturbations) + " perturbations, " + std::to_string(bad) +
                        " changed rows outside their chunk"};
}

// ---------------------------------------------------------------------------
// 4. Receptive-field equivalence with iterative compression.

Verdict receptive_field_equivalence() {
  const std::size_t L = 16, N = 4, w = L / N;
  std::size_t differing = 0, pic_off_chunk = 0, iter_off_chunk = 0, first_t = N, first_j = L;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto params = init_model_params<float>(model_config(1, N, 16, 2), 300 + seed, "c.");
    Rng rng(seed);
    const auto x = random_bytes(L, rng);
    const std::span<const TokenId> ctx(x);
    const DependencyMatrix pic = receptive_field_matrix(params, Paradigm::kPic, ctx, N);
    const DependencyMatrix iter = receptive_field_matrix(params, Paradigm::kIterative, ctx, N);
    for (std::size_t t = 0; t < N; ++t) {
      for (std::size_t j = 0; j < L; ++j) {
        const bool own = j / w == t;
        if (pic.at(t, j) != own) ++pic_off_chunk;
        if (iter.at(t, j) != own) ++iter_off_chunk;
        if (pic.at(t, j) != iter.at(t, j)) {
          if (differing == 0) {
            first_t = t;
            first_j = j;
          }
          ++differing;
        }
      }
    }
  }
  std::string detail = std::to_string(differing) + " differing entries over 3 models; pic " +
                       (pic_off_chunk == 0 ? "is exactly c_t" : "deviates from c_t") +
                       ", iterative has " + std::to_string(iter_off_chunk) +
                       " entries outside c_t";
  if (differing > 0) {
    detail += " (first: h_" + std::to_string(first_t + 1) + " vs x_" +
              std::to_string(first_j + 1) + ")";
  }
  return {differing == 0 && pic_off_chunk == 0, detail};
}

// ---------------------------------------------------------------------------
// 5. Gradient verification.

double loss_of(const CompressionModel<double>& model, std::span<const TokenId> x,
               const TrainingConfig& config, int which) {
  Tape<double> tape;
  const auto terms = compute_losses(bind_system_frozen(tape, model), x, config);
  const Var<double>& v = which == 0 ? terms.tr : which == 1 ? terms.tc : terms.combined;
  return v.value().item();
}

Verdict gradient_verification() {
  const auto start = std::chrono::steady_clock::now();
  const ModelConfig comp = model_config(2, 4, 16, 2);
  auto model = make_compression_model<double>(comp, decoder_of(comp), false, 11);
  Rng rng(5);
  const auto x = random_bytes(16, rng);
  const std::span<const TokenId> ctx(x);
  TrainingConfig config;
  config.ratio = 4;
  const char* names[] = {"TR", "TC", "combined"};
  const double h = 1e-5;
  double worst = 0;
  std::string worst_where = "-";
  std::size_t groups = 0, entries = 0;
  for (int which = 0; which < 3; ++which) {
    const auto params = model.parameters();
    for (Parameter<double>* p : params) p->zero_grad();
    {
      Tape<double> tape;
      const auto terms = compute_losses(bind_system(tape, model, true, true), ctx, config);
      tape.backward(which == 0 ? terms.tr : which == 1 ? terms.tc : terms.combined);
    }
    for (Parameter<double>* p : params) {
      if (p->value.size() == 0) continue;  // the decoder has no memory slots
      ++groups;
      // Half the largest analytic entries, half uniformly random ones.
      std::vector<std::size_t> order(p->value.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(p->grad[a]) > std::abs(p->grad[b]);
      });
      std::set<std::size_t> picked(order.begin(),
                                   order.begin() + std::min<std::size_t>(8, order.size()));
      for (int k = 0; k < 8; ++k) picked.insert(rng.below(p->value.size()));
      double diff = 0, na = 0, nn = 0;
      for (const std::size_t i : picked) {
        const double saved = p->value[i];
        p->value[i] = saved + h;
        const double up = loss_of(model, ctx, config, which);
        p->value[i] = saved - h;
        const double down = loss_of(model, ctx, config, which);
        p->value[i] = saved;
        const double numeric = (up - down) / (2 * h);
        diff += (p->grad[i] - numeric) * (p->grad[i] - numeric);
        na += p->grad[i] * p->grad[i];
        nn += numeric * numeric;
        ++entries;
      }
      const double scale = std::max(std::sqrt(na), std::sqrt(nn));
      const double err = scale > 0 ? std::sqrt(diff) / scale : 0.0;
      if (err > worst) {
        worst = err;
        worst_where = std::string(names[which]) + "/" + p->name;
      }
    }
  }
  const double s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst < 1e-5 && s < 120.0,
          std::to_string(groups) + " loss/group pairs, " + std::to_string(entries) +
              " entries, worst relative error " + fmt(worst, 3) + " at " + worst_where +
              " (limit 1e-5), " + fmt(s, 3) + " s (limit 120 s)"};
}

// ---------------------------------------------------------------------------
// 6. Loss algebra.

// Mean -log softmax(row)[target] over rows, in long double.
long double token_nll(const Tensor<double>& logits, std::span<const TokenId> targets) {
  long double total = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    long double mx = logits(r, 0);
    for (std::size_t c = 0; c < logits.cols(); ++c) mx = std::max<long double>(mx, logits(r, c));
    long double z = 0;
    for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits(r, c) - mx);
    total += -(logits(r, targets[r]) - mx - std::log(z));
  }
  return total / static_cast<long double>(logits.rows());
}

// Decoder over [memory, embed(inputs)] with a causal mask; last `predicted`
// rows through the tied head.
Tensor<double> decoder_logits(const CompressionModel<double>& model, const Tensor<double>& memory,
                              const std::vector<TokenId>& inputs, std::size_t predicted) {
  Tape<double> tape;
  const BoundModel<double> dec = bind_frozen(tape, model.decoder);
  const Tensor<double> e = embed(dec, std::span<const TokenId>(inputs)).value();
  const std::size_t n = memory.rows() + inputs.size(), d = e.cols();
  Tensor<double> z({n, d});
  std::copy(memory.values().begin(), memory.values().end(), z.values().begin());
  std::copy(e.values().begin(), e.values().end(), z.values().begin() + memory.size());
  const auto hidden =
      forward(dec, tape.constant(z), iota_positions(n), build_causal_mask(n)).hidden;
  const Tensor<double> all = hidden.value();
  Tensor<double> last({predicted, d});
  std::copy(all.values().begin() + (n - predicted) * d, all.values().end(),
            last.values().begin());
  const Tensor<double> table = model.decoder.token_embedding.value;
  Tensor<double> logits({predicted, table.rows()});
  for (std::size_t r = 0; r < predicted; ++r) {
    for (std::size_t v = 0; v < table.rows(); ++v) {
      long double acc = 0;
      for (std::size_t c = 0; c < d; ++c) acc += static_cast<long double>(last(r, c)) * table(v, c);
      logits(r, v) = static_cast<double>(acc);
    }
  }
  return logits;
}

Verdict loss_algebra() {
  const ModelConfig comp = model_config(2, 8, 16, 2);
  const auto model = make_compression_model<double>(comp, decoder_of(comp), false, 13);
  TrainingConfig config;
  config.ratio = 4;
  config.lambda = 0.5;
  Rng rng(13);
  double worst_combined = 0, worst_oracle = 0;
  for (int sample = 0; sample < 8; ++sample) {
    const auto x = random_bytes(32, rng);
    const std::span<const TokenId> ctx(x);
    Tape<double> tape;
    const auto terms = compute_losses(bind_system_frozen(tape, model), ctx, config);
    const double tr = terms.tr.value().item(), tc = terms.tc.value().item();
    const double combined = terms.combined.value().item();
    worst_combined = std::max(worst_combined,
                              std::abs(combined - (0.5 * tc + 0.5 * tr)) / std::abs(combined));

    std::vector<TokenId> tr_inputs{Vocabulary::kAE};
    tr_inputs.insert(tr_inputs.end(), x.begin(), x.end() - 1);
    const long double tr_oracle =
        token_nll(decoder_logits(model, terms.memory.states.value(), tr_inputs, x.size()), ctx);
    const std::size_t k = x.size() / 2;
    const std::vector<TokenId> tc_inputs(x.begin() + (k - 1), x.end() - 1);
    const long double tc_oracle = token_nll(
        decoder_logits(model, terms.prefix_memory.states.value(), tc_inputs, x.size() - k),
        ctx.subspan(k));
    worst_oracle = std::max(worst_oracle, static_cast<double>(std::abs(tr - tr_oracle) / tr_oracle));
    worst_oracle = std::max(worst_oracle, static_cast<double>(std::abs(tc - tc_oracle) / tc_oracle));
  }
  const double eps = std::numeric_limits<double>::epsilon();
  return {worst_combined <= 4 * eps && worst_oracle < 1e-6,
          "combined vs 0.5 TC + 0.5 TR relative gap " + fmt(worst_combined, 3) + " (limit " +
              fmt(4 * eps, 3) + "); per-token oracle relative gap " + fmt(worst_oracle, 3) +
              " (limit 1e-6)"};
}

// ---------------------------------------------------------------------------
// 7. Convergence comparison and 8. reconstruction capability.

std::vector<std::vector<TokenId>> template_corpus() {
  CorpusSpec spec;
  spec.kind = CorpusKind::kTemplate;
  spec.seed = 1;
  spec.length = 128;
  spec.count = 200;
  return generate_corpus(spec);
}

CompressionModel<float> desk_model(std::size_t ratio, std::size_t d_model, std::uint64_t seed) {
  ModelConfig c = model_config(2, 128 / ratio, d_model, 4);
  return make_compression_model<float>(c, decoder_of(c), false, seed);
}

constexpr double kEmaAlpha = 0.05;
constexpr double kTrThreshold = 1.2;
constexpr std::size_t kConvergenceCap = 3000;

// Step at which the EMA of the TR loss first drops below the threshold, or 0.
std::size_t steps_to_threshold(Paradigm paradigm) {
  auto model = desk_model(16, 32, 7);
  TrainingConfig config;
  config.ratio = 16;
  config.batch_size = 4;
  config.learning_rate = 1e-3;
  config.steps = kConvergenceCap;
  config.seed = 0;
  config.mask_mode = paradigm;
  double ema = 0;
  std::size_t reached = 0;
  TrainingLoopOptions options;
  options.on_step = [&](const TrainingLogRow& row) {
    ema = row.step == 1 ? row.loss.tr : kEmaAlpha * row.loss.tr + (1 - kEmaAlpha) * ema;
    if (ema < kTrThreshold) {
      reached = row.step;
      return false;
    }
    return true;
  };
  train(model, config, template_corpus(), options);
  return reached;
}

Verdict convergence_comparison() {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t pic = steps_to_threshold(Paradigm::kPic);
  const std::size_t direct = steps_to_threshold(Paradigm::kDirect);
  const double s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double ratio = pic > 0 && direct > 0 ? static_cast<double>(pic) / direct : 0.0;
  const bool pass = pic > 0 && direct > 0 && ratio <= 1.05 && s < 1800.0;
  return {pass, "steps to TR EMA < " + fmt(kTrThreshold) + ": pic " +
                    (pic ? std::to_string(pic) : "not reached") + ", direct " +
                    (direct ? std::to_string(direct) : "not reached") + ", ratio " +
                    fmt(ratio, 3) + " (limit 1.05), " + fmt(s, 4) + " s (limit 1800 s)"};
}

constexpr double kReconstructionTarget = 0.90;
constexpr std::size_t kReconstructionSteps = 5000;
constexpr std::size_t kEvalEvery = 500;

Verdict reconstruction_capability() {
  const auto corpus = template_corpus();
  auto model = desk_model(4, 64, 7);
  TrainingConfig config;
  config.ratio = 4;
  config.batch_size = 4;
  config.learning_rate = 1e-3;
  config.steps = kReconstructionSteps;
  config.seed = 0;
  EvalOptions eval;
  eval.ratio = 4;
  double best = 0;
  std::size_t reached = 0;
  TrainingLoopOptions options;
  options.on_step = [&](const TrainingLogRow& row) {
    if (row.step % kEvalEvery != 0) return true;
    best = eval_reconstruction_accuracy(model, std::span(corpus), eval).token_accuracy;
    if (best >= kReconstructionTarget) {
      reached = row.step;
      return false;
    }
    return true;
  };
  train(model, config, corpus, options);
  return {reached > 0, "teacher-forced accuracy " + fmt(best) + " at step " +
                           std::to_string(reached ? reached : kReconstructionSteps) +
                           " (target " + fmt(kReconstructionTarget) + " within " +
                           std::to_string(kReconstructionSteps) + " steps)"};
}

// ---------------------------------------------------------------------------
// 9. Latency scaling.

// Width 256 keeps attention under 10% of the per-pass FLOPs (n / 6d) for the
// longest pass, so the timing tracks the token count rather than n^2 terms.
Verdict latency_scaling() {
  const auto params = init_model_params<float>(model_config(2, 16, 256, 4), 17, "c.");
  Rng rng(17);
  const auto x = random_bytes(128, rng);
  const std::vector<std::size_t> counts{2, 4, 8, 16};
  const std::vector<Paradigm> paradigms{Paradigm::kPic, Paradigm::kDirect, Paradigm::kIterative};
  LatencyOptions options;
  options.warmup = 3;
  options.repetitions = 15;
  const auto rows =
      latency_benchmark(params, std::span<const TokenId>(x), counts, paradigms, options);
  bool passes_ok = true;
  std::vector<double> nx, iter_ms, pic_ms;
  for (const LatencyRow& r : rows) {
    const std::size_t want = r.paradigm == Paradigm::kIterative ? r.memory_count : 1;
    passes_ok = passes_ok && r.passes == want;
    if (r.paradigm == Paradigm::kIterative) {
      nx.push_back(static_cast<double>(r.memory_count));
      iter_ms.push_back(r.median_ms);
    }
    if (r.paradigm == Paradigm::kPic) pic_ms.push_back(r.median_ms);
  }
  const LinearFit fit = fit_line(nx, iter_ms);
  const auto [lo, hi] = std::minmax_element(pic_ms.begin(), pic_ms.end());
  const double spread = (*hi - *lo) / *lo;
  std::string iter_list, pic_list;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    iter_list += (i ? "/" : "") + fmt(iter_ms[i], 3);
    pic_list += (i ? "/" : "") + fmt(pic_ms[i], 3);
  }
  return {passes_ok && fit.r2 >= 0.9 && fit.slope > 0 && spread < 0.25,
          std::string("pass counts ") + (passes_ok ? "1/1/N" : "wrong") + "; iterative ms " +
              iter_list + " slope " + fmt(fit.slope, 3) + " R^2 " + fmt(fit.r2, 4) +
              " (limit 0.9); pic ms " + pic_list + " spread " + fmt(100 * spread, 3) +
              "% (limit 25%)"};
}

// ---------------------------------------------------------------------------
// 10. Diagnostics integrity.

std::size_t outside_chunk_mass(const ModelParams<float>& params,
                               const std::vector<std::vector<TokenId>>& contexts,
                               std::size_t n, std::size_t* maps) {
  std::size_t bad = 0;
  for (const auto& x : contexts) {
    const std::size_t w = x.size() / n;
    for (std::size_t layer = 0; layer < params.config.layers; ++layer) {
      for (std::size_t head = 0; head < params.config.heads; ++head) {
        const Heatmap map = attention_heatmap(params, std::span<const TokenId>(x), n,
                                              Paradigm::kPic, layer, head);
        ++*maps;
        for (std::size_t t = 0; t < n; ++t) {
          for (std::size_t j = 0; j < x.size(); ++j) {
            if (j / w != t && map.values(t, j) != 0.0) ++bad;
          }
        }
      }
    }
  }
  return bad;
}

Verdict diagnostics_integrity() {
  CorpusSpec spec;
  spec.kind = CorpusKind::kTemplate;
  spec.seed = 3;
  spec.length = 32;
  spec.count = 24;
  const auto corpus = generate_corpus(spec);
  const std::vector<std::vector<TokenId>> probe(corpus.begin(), corpus.begin() + 4);
  ModelConfig c = model_config(2, 8, 16, 2);
  auto model = make_compression_model<float>(c, decoder_of(c), false, 19);

  std::size_t maps = 0;
  std::size_t bad = outside_chunk_mass(model.compressor, probe, 8, &maps);
  TrainingConfig config;
  config.ratio = 4;
  config.batch_size = 4;
  config.steps = 100;
  config.learning_rate = 3e-3;
  train(model, config, corpus, {});
  bad += outside_chunk_mass(model.compressor, probe, 8, &maps);

  std::vector<Tensor<float>> memories;
  for (const auto& x : corpus) {
    memories.push_back(
        compress_values(model.compressor, std::span<const TokenId>(x), 8, Paradigm::kPic)
            .states);
  }
  const std::size_t bins = 40;
  const SimilarityHistogram h =
      pairwise_memory_histogram(std::span<const Tensor<float>>(memories), bins);
  std::vector<double> counts(bins, 0);
  std::size_t pairs = 0;
  for (const Tensor<float>& m : memories) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = i + 1; j < m.rows(); ++j) {
        long double dot = 0, ni = 0, nj = 0;
        for (std::size_t k = 0; k < m.cols(); ++k) {
          dot += static_cast<long double>(m(i, k)) * m(j, k);
          ni += static_cast<long double>(m(i, k)) * m(i, k);
          nj += static_cast<long double>(m(j, k)) * m(j, k);
        }
        const double cos = static_cast<double>(dot / std::sqrt(ni * nj));
        std::size_t b = 0;
        while (b + 1 < bins && cos >= -1.0 + 2.0 * static_cast<double>(b + 1) / bins) ++b;
        counts[b] += 1;
        ++pairs;
      }
    }
  }
  double total = 0, worst_bin = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    total += h.masses[b];
    worst_bin = std::max(worst_bin, std::abs(h.masses[b] - counts[b] / pairs));
  }
  const bool pass =
      bad == 0 && std::abs(total - 1.0) <= 1e-9 && worst_bin <= 1e-12 && h.pair_count == pairs;
  return {pass, std::to_string(maps) + " heatmaps (untrained and trained), " +
                    std::to_string(bad) + " nonzero entries outside chunks; histogram mass " +
                    fmt(total, 17) + " over " + std::to_string(h.pair_count) +
                    " pairs, largest bin gap vs brute force " + fmt(worst_bin, 3)};
}

// ---------------------------------------------------------------------------
// 11. Determinism and persistence.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string training_log_of(const fs::path& dir) {
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().filename().string().rfind("train-", 0) == 0) return slurp(e.path());
  }
  return {};
}

Verdict determinism_and_persistence() {
  const fs::path root = fs::temp_directory_path() / "pic-acceptance-determinism";
  fs::remove_all(root);
  cli::RunConfig run;
  run.command = "train";
  run.layers = 2;
  run.heads = 2;
  run.d_model = 16;
  run.seq_len = 32;
  run.ratio = 4;
  run.corpus_count = 16;
  run.batch_size = 4;
  run.steps = 20;
  run.lr = 1e-3;
  run.seed = 5;
  std::string logs[2];
  for (int i = 0; i < 2; ++i) {
    run.out = (root / std::to_string(i)).string();
    std::ostringstream quiet;
    std::streambuf* saved = std::cout.rdbuf(quiet.rdbuf());
    const int status = cli::run(run);
    std::cout.rdbuf(saved);
    if (status != cli::kExitOk) return {false, "training run failed"};
    logs[i] = training_log_of(run.out);
  }
  const bool logs_equal = !logs[0].empty() && logs[0] == logs[1];

  const auto corpus = generate_corpus(run.corpus_spec());
  ModelConfig c = model_config(2, 8, 16, 2);
  auto model = make_compression_model<float>(c, decoder_of(c), false, 23);
  TrainingConfig config;
  config.ratio = 4;
  config.batch_size = 4;
  config.steps = 10;
  train(model, config, corpus, {});
  const fs::path file = root / "model.picc";
  save_checkpoint(make_checkpoint(model, config, 10, ""), file);
  const auto restored = restore_model<float>(load_checkpoint(file));
  std::size_t mismatched = 0;
  for (const auto& x : corpus) {
    const std::span<const TokenId> ctx(x);
    for (const Paradigm p : {Paradigm::kPic, Paradigm::kIterative, Paradigm::kDirect}) {
      if (!bit_equal(compress_values(model.compressor, ctx, 8, p).states,
                     compress_values(restored.compressor, ctx, 8, p).states)) {
        ++mismatched;
      }
    }
    Tape<float> ta, tb;
    const auto la = compute_losses(bind_system_frozen(ta, model), ctx, config);
    const auto lb = compute_losses(bind_system_frozen(tb, restored), ctx, config);
    if (!bit_equal(la.combined.value(), lb.combined.value())) ++mismatched;
  }
  fs::remove_all(root);
  return {logs_equal && mismatched == 0,
          std::string("training logs ") + (logs_equal ? "byte-identical" : "differ") + " (" +
              std::to_string(logs[0].size()) + " bytes); restored checkpoint: " +
              std::to_string(mismatched) + " forward outputs not bit-identical"};
}

struct Criterion {
  int number;
  const char* name;
  Verdict (*run)();
};

const Criterion kCriteria[] = {
    {1, "mask_oracle_equivalence", mask_oracle},
    {2, "future_chunk_independence", future_chunk_independence},
    {3, "single_layer_locality", single_layer_locality},
    {4, "receptive_field_equivalence", receptive_field_equivalence},
    {5, "gradient_verification", gradient_verification},
    {6, "loss_algebra", loss_algebra},
    {7, "convergence_comparison", convergence_comparison},
    {8, "reconstruction_capability", reconstruction_capability},
    {9, "latency_scaling", latency_scaling},
    {10, "diagnostics_integrity", diagnostics_integrity},
    {11, "determinism_and_persistence", determinism_and_persistence},
};

}  // namespace
}  // namespace pic::acceptance

int main(int argc, char** argv) {
  using namespace pic::acceptance;
  bool strict = false;
  std::string report_path;
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--strict") {
      strict = true;
    } else if (arg == "--report" && i + 1 < argc) {
      report_path = argv[++i];
    } else {
      try {
        selected.insert(std::stoi(arg));
      } catch (const std::exception&) {
        std::cerr << "usage: pic_acceptance [--strict] [--report FILE] [criterion numbers...]\n";
        return 2;
      }
    }
  }
  std::ofstream report;
  if (!report_path.empty()) {
    report.open(report_path);
    if (!report) {
      std::cerr << "cannot write " << report_path << '\n';
      return 2;
    }
  }
  const auto emit = [&](const std::string& line) {
    std::cout << line << std::endl;
    if (report.is_open()) report << line << std::endl;
  };
  int failed = 0;
  for (const Criterion& c : kCriteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!v.pass) ++failed;
    emit(std::string(v.pass ? "PASS" : "FAIL") + ' ' + std::to_string(c.number) + ' ' + c.name +
         ": " + v.detail + " [" + fmt(s, 3) + " s]");
  }
  emit("acceptance: " + std::to_string(failed) + " failing criteria");
  return strict && failed > 0 ? 1 : 0;
}

// SPDX-License-Identifier: Apache-2.0
#include "pic/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pic/diagnostics.hpp"
#include "pic/random.hpp"

namespace pic {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kReconstruction: return "reconstruction";
    case LossKind::kCompletion: return "completion";
    case LossKind::kCombined: return "combined";
  }
  return "unknown";
}

namespace {

Var<double> pick(const LossTerms<double>& terms, LossKind kind) {
  switch (kind) {
    case LossKind::kReconstruction: return terms.tr;
    case LossKind::kCompletion: return terms.tc;
    case LossKind::kCombined: return terms.combined;
  }
  return terms.combined;
}

double loss_value(const CompressionModel<double>& model, std::span<const TokenId> context,
                  const TrainingConfig& config, LossKind kind) {
  Tape<double> tape;
  const BoundSystem<double> system = bind_system_frozen(tape, model);
  return pick(compute_losses(system, context, config), kind).value().item();
}

std::vector<std::size_t> sample_entries(std::size_t size, std::size_t count, Rng& rng) {
  std::vector<std::size_t> all(size);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (count >= size) return all;
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(all[i], all[i + rng.below(size - i)]);
  }
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

template <typename Fn>
CheckResult timed(const std::string& name, Fn&& body) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = name;
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// Visibility straight from the rules: context rows are causal over context,
// memory row t sees its own chunk and memory rows up to t, context never sees
// memory.
bool rule_visible(std::size_t i, std::size_t j, std::size_t length, std::size_t chunks) {
  const std::size_t width = length / chunks;
  const bool query_memory = i >= length;
  const bool key_memory = j >= length;
  if (!query_memory) return !key_memory && j <= i;
  const std::size_t t = i - length;
  if (key_memory) return j - length <= t;
  return j >= t * width && j < (t + 1) * width;
}

ModelConfig probe_config(std::size_t layers, std::size_t slots) {
  ModelConfig c;
  c.layers = layers;
  c.heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.memory_slots = slots;
  c.max_seq_len = 64;
  return c;
}

std::vector<TokenId> random_context(std::size_t length, Rng& rng) {
  std::vector<TokenId> x(length);
  for (TokenId& id : x) id = rng.below(256);
  return x;
}

}  // namespace

std::vector<GradientGroupError> gradient_check(CompressionModel<double>& model,
                                               std::span<const TokenId> context,
                                               const TrainingConfig& config, LossKind loss,
                                               std::size_t entries_per_group,
                                               std::uint64_t seed, double step) {
  const std::vector<Parameter<double>*> params = model.parameters();
  for (Parameter<double>* p : params) p->zero_grad();
  {
    Tape<double> tape;
    const BoundSystem<double> system = bind_system(tape, model, true, true);
    tape.backward(pick(compute_losses(system, context, config), loss));
  }
  Rng rng(seed);
  std::vector<GradientGroupError> out;
  for (Parameter<double>* p : params) {
    GradientGroupError g;
    g.parameter = p->name;
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (const std::size_t idx : sample_entries(p->value.size(), entries_per_group, rng)) {
      const double saved = p->value[idx];
      p->value[idx] = saved + step;
      const double up = loss_value(model, context, config, loss);
      p->value[idx] = saved - step;
      const double down = loss_value(model, context, config, loss);
      p->value[idx] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad[idx];
      diff += (analytic - numeric) * (analytic - numeric);
      na += analytic * analytic;
      nn += numeric * numeric;
      ++g.checked;
    }
    const double scale = std::max(std::sqrt(na), std::sqrt(nn));
    g.relative_error = scale > 0.0 ? std::sqrt(diff) / scale : 0.0;
    out.push_back(g);
  }
  return out;
}

CheckResult verify_mask_oracle(std::size_t max_length) {
  return timed("mask_oracle", [&](CheckResult& r) {
    std::size_t configs = 0;
    for (std::size_t length = 2; length <= max_length; ++length) {
      for (std::size_t n = 1; n <= length; ++n) {
        if (length % n != 0) continue;
        const AttentionMask mask = build_block_causal_mask(length, n);
        for (std::size_t i = 0; i < length + n; ++i) {
          for (std::size_t j = 0; j < length + n; ++j) {
            if (mask.is_visible(i, j) != rule_visible(i, j, length, n)) {
              r.detail = "mismatch at L=" + std::to_string(length) + " N=" + std::to_string(n) +
                         " (" + std::to_string(i) + "," + std::to_string(j) + ")";
              return;
            }
          }
        }
        ++configs;
      }
    }
    r.passed = true;
    r.detail = std::to_string(configs) + " (L, N) configurations";
  });
}

CheckResult verify_future_chunk_independence(std::uint64_t seed) {
  return timed("future_chunk_independence", [&](CheckResult& r) {
    constexpr std::size_t kLength = 8, kChunks = 4;
    Rng rng(seed);
    for (const std::size_t depth : {1, 2, 4}) {
      const auto params = init_model_params<float>(probe_config(depth, kChunks), seed + depth,
                                                   "compressor.");
      const auto x = random_context(kLength, rng);
      const DependencyMatrix dep =
          receptive_field_matrix(params, Paradigm::kPic, std::span<const TokenId>(x), kChunks);
      for (std::size_t t = 0; t < kChunks; ++t) {
        for (std::size_t j = (t + 1) * (kLength / kChunks); j < kLength; ++j) {
          if (dep.at(t, j)) {
            r.detail = "depth " + std::to_string(depth) + ": h_" + std::to_string(t) +
                       " depends on future token " + std::to_string(j);
            return;
          }
        }
      }
    }
    r.passed = true;
    r.detail = "depths 1, 2, 4";
  });
}

CheckResult verify_single_layer_locality(std::uint64_t seed) {
  return timed("single_layer_locality", [&](CheckResult& r) {
    constexpr std::size_t kLength = 8, kChunks = 4;
    Rng rng(seed);
    const auto params =
        init_model_params<float>(probe_config(1, kChunks), seed, "compressor.");
    const auto x = random_context(kLength, rng);
    const DependencyMatrix dep =
        receptive_field_matrix(params, Paradigm::kPic, std::span<const TokenId>(x), kChunks);
    for (std::size_t t = 0; t < kChunks; ++t) {
      for (std::size_t j = 0; j < kLength; ++j) {
        const bool inside = j / (kLength / kChunks) == t;
        if (dep.at(t, j) != inside) {
          r.detail = "h_" + std::to_string(t) + (inside ? " ignores " : " depends on ") +
                     "token " + std::to_string(j);
          return;
        }
      }
    }
    r.passed = true;
  });
}

CheckResult verify_attention_structure(std::uint64_t seed) {
  return timed("attention_structure", [&](CheckResult& r) {
    constexpr std::size_t kLength = 32, kChunks = 4;
    Rng rng(seed);
    const ModelConfig cfg = probe_config(2, kChunks);
    const auto params = init_model_params<float>(cfg, seed, "compressor.");
    const auto x = random_context(kLength, rng);
    for (std::size_t layer = 0; layer < cfg.layers; ++layer) {
      for (std::size_t head = 0; head < cfg.heads; ++head) {
        const Heatmap map = attention_heatmap(params, std::span<const TokenId>(x), kChunks,
                                              Paradigm::kPic, layer, head);
        for (std::size_t t = 0; t < kChunks; ++t) {
          for (std::size_t j = 0; j < kLength; ++j) {
            if (j / (kLength / kChunks) != t && map.values(t, j) != 0.0) {
              r.detail = "layer " + std::to_string(layer) + " head " + std::to_string(head) +
                         ": memory " + std::to_string(t) + " attends token " +
                         std::to_string(j);
              return;
            }
          }
        }
      }
    }
    r.passed = true;
  });
}

CheckResult verify_gradients(std::uint64_t seed, std::size_t entries_per_group) {
  return timed("gradients", [&](CheckResult& r) {
    constexpr std::size_t kLength = 8;
    ModelConfig comp = probe_config(2, 4);
    ModelConfig dec = comp;
    dec.memory_slots = 0;
    auto model = make_compression_model<double>(comp, dec, true, seed);
    TrainingConfig config;
    config.ratio = 2;
    Rng rng(seed);
    const auto x = random_context(kLength, rng);
    double worst = 0.0;
    std::string worst_name;
    for (const LossKind kind :
         {LossKind::kReconstruction, LossKind::kCompletion, LossKind::kCombined}) {
      for (const GradientGroupError& g :
           gradient_check(model, x, config, kind, entries_per_group, seed)) {
        if (g.relative_error > worst || worst_name.empty()) {
          worst = g.relative_error;
          worst_name = to_string(kind) + "/" + g.parameter;
        }
      }
    }
    std::ostringstream os;
    os << "max relative error " << worst << " (" << worst_name << ")";
    r.detail = os.str();
    r.passed = worst < 1e-5;
  });
}

std::vector<CheckResult> run_invariant_suite(std::uint64_t seed) {
  return {verify_mask_oracle(), verify_future_chunk_independence(seed),
          verify_single_layer_locality(seed), verify_attention_structure(seed),
          verify_gradients(seed)};
}

}  // namespace pic

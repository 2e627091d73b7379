// SPDX-License-Identifier: Apache-2.0
#include "pic/transformer.hpp"

#include <cmath>

#include "pic/random.hpp"

namespace pic {

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError("model config field '" + field + "' " + why);
  };
  if (layers == 0) fail("layers", "must be >= 1");
  if (heads == 0) fail("heads", "must be >= 1");
  if (d_model == 0 || d_model % heads != 0) {
    fail("d_model", "must be a positive multiple of heads (" +
                        std::to_string(heads) + "), got " + std::to_string(d_model));
  }
  if ((d_model / heads) % 2 != 0) fail("d_model", "per-head width must be even for rotary positions");
  if (d_ff == 0) fail("d_ff", "must be >= 1");
  if (max_seq_len == 0) fail("max_seq_len", "must be >= 1");
  if (!(rope_base > 1.0)) fail("rope_base", "must be > 1");
  if (!(norm_eps > 0.0)) fail("norm_eps", "must be > 0");
}

std::vector<std::size_t> iota_positions(std::size_t count, std::size_t start) {
  std::vector<std::size_t> p(count);
  for (std::size_t i = 0; i < count; ++i) p[i] = start + i;
  return p;
}

template <typename T>
std::vector<Parameter<T>*> ModelParams<T>::parameters() {
  std::vector<Parameter<T>*> out{&token_embedding, &memory_embedding};
  for (LayerParams<T>& l : layers) {
    for (Parameter<T>* p : {&l.attn_norm, &l.wq, &l.wk, &l.wv, &l.wo,
                            &l.ffn_norm, &l.w_up, &l.w_down}) {
      out.push_back(p);
    }
  }
  out.push_back(&final_norm);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ModelParams<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  for (Parameter<T>* p : const_cast<ModelParams<T>*>(this)->parameters()) out.push_back(p);
  return out;
}

namespace {

template <typename T>
Parameter<T> gaussian(const std::string& name, Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
  return Parameter<T>(name, std::move(t));
}

template <typename T>
Parameter<T> ones(const std::string& name, std::size_t n) {
  Tensor<T> t({n});
  t.fill(T{1});
  return Parameter<T>(name, std::move(t));
}

}  // namespace

template <typename T>
ModelParams<T> init_model_params(const ModelConfig& config, std::uint64_t seed,
                                 const std::string& prefix) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.d_model;
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = proj_std / std::sqrt(2.0 * static_cast<double>(config.layers));
  const double down_std =
      1.0 / std::sqrt(static_cast<double>(config.d_ff)) /
      std::sqrt(2.0 * static_cast<double>(config.layers));

  ModelParams<T> p;
  p.config = config;
  p.token_embedding = gaussian<T>(prefix + "token_embedding", {Vocabulary::kTextSize, d}, emb_std, rng);
  p.memory_embedding = gaussian<T>(prefix + "memory_embedding", {config.memory_slots, d}, emb_std, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string lp = prefix + "layers." + std::to_string(l) + ".";
    LayerParams<T> layer;
    layer.attn_norm = ones<T>(lp + "attn_norm", d);
    layer.wq = gaussian<T>(lp + "wq", {d, d}, proj_std, rng);
    layer.wk = gaussian<T>(lp + "wk", {d, d}, proj_std, rng);
    layer.wv = gaussian<T>(lp + "wv", {d, d}, proj_std, rng);
    layer.wo = gaussian<T>(lp + "wo", {d, d}, out_std, rng);
    layer.ffn_norm = ones<T>(lp + "ffn_norm", d);
    layer.w_up = gaussian<T>(lp + "w_up", {d, config.d_ff}, proj_std, rng);
    layer.w_down = gaussian<T>(lp + "w_down", {config.d_ff, d}, down_std, rng);
    p.layers.push_back(std::move(layer));
  }
  p.final_norm = ones<T>(prefix + "final_norm", d);
  return p;
}

template <typename T>
BoundModel<T> bind(Tape<T>& tape, ModelParams<T>& params, bool trainable) {
  if (!trainable) return bind_frozen(tape, params);
  BoundModel<T> m;
  m.config = &params.config;
  m.token_embedding = tape.parameter(params.token_embedding);
  m.memory_embedding = tape.parameter(params.memory_embedding);
  for (LayerParams<T>& l : params.layers) {
    m.layers.push_back({tape.parameter(l.attn_norm), tape.parameter(l.wq),
                        tape.parameter(l.wk), tape.parameter(l.wv),
                        tape.parameter(l.wo), tape.parameter(l.ffn_norm),
                        tape.parameter(l.w_up), tape.parameter(l.w_down)});
  }
  m.final_norm = tape.parameter(params.final_norm);
  return m;
}

template <typename T>
BoundModel<T> bind_frozen(Tape<T>& tape, const ModelParams<T>& params) {
  BoundModel<T> m;
  m.config = &params.config;
  m.token_embedding = tape.constant(params.token_embedding.value);
  m.memory_embedding = tape.constant(params.memory_embedding.value);
  for (const LayerParams<T>& l : params.layers) {
    m.layers.push_back({tape.constant(l.attn_norm.value), tape.constant(l.wq.value),
                        tape.constant(l.wk.value), tape.constant(l.wv.value),
                        tape.constant(l.wo.value), tape.constant(l.ffn_norm.value),
                        tape.constant(l.w_up.value), tape.constant(l.w_down.value)});
  }
  m.final_norm = tape.constant(params.final_norm.value);
  return m;
}

template <typename T>
Var<T> embed(const BoundModel<T>& model, std::span<const TokenId> ids) {
  if (ids.empty()) throw ContractError("embed: empty id sequence");
  const Vocabulary vocab = model.config->vocabulary();
  // Split into runs of the same table so each run is one gather.
  std::vector<Var<T>> parts;
  std::size_t i = 0;
  while (i < ids.size()) {
    const bool memory = vocab.is_memory(ids[i]);
    std::vector<std::size_t> rows;
    while (i < ids.size() && vocab.is_memory(ids[i]) == memory) {
      if (!memory && ids[i] >= Vocabulary::kTextSize) {
        throw IndexError("token id " + std::to_string(ids[i]) +
                         " outside vocabulary of size " + std::to_string(vocab.size()));
      }
      rows.push_back(memory ? vocab.memory_slot(ids[i]) : ids[i]);
      ++i;
    }
    parts.push_back(embedding(memory ? model.memory_embedding : model.token_embedding,
                              std::span<const std::size_t>(rows)));
  }
  if (parts.size() == 1) return parts.front();
  return concat_rows(std::span<const Var<T>>(parts));
}

template <typename T>
ForwardOutput<T> forward(const BoundModel<T>& model, const Var<T>& input,
                         std::span<const std::size_t> positions,
                         const AttentionMask& mask, const ForwardOptions& options) {
  const ModelConfig& cfg = *model.config;
  const std::size_t n = input.rows();
  if (input.cols() != cfg.d_model) {
    throw ShapeError("forward: input width " + std::to_string(input.cols()) +
                     " != d_model " + std::to_string(cfg.d_model));
  }
  if (positions.size() != n) {
    throw ShapeError("forward: " + std::to_string(positions.size()) +
                     " positions for " + std::to_string(n) + " inputs");
  }
  if (!options.layer_masks.empty() && options.layer_masks.size() != cfg.layers) {
    throw ShapeError("forward: " + std::to_string(options.layer_masks.size()) +
                     " layer masks for " + std::to_string(cfg.layers) + " layers");
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const AttentionMask& m = options.layer_masks.empty() ? mask : options.layer_masks[l];
    if (m.size() != n) {
      throw ShapeError("forward: mask of size " + std::to_string(m.size()) +
                       " for input of length " + std::to_string(n));
    }
  }
  for (std::size_t p : positions) {
    if (p >= cfg.max_seq_len) {
      throw ContractError("forward: position " + std::to_string(p) +
                          " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
  }
  if (options.counter != nullptr) ++options.counter->passes;

  const T eps = static_cast<T>(cfg.norm_eps);
  const std::size_t hd = cfg.d_model / cfg.heads;
  const T attn_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  ForwardOutput<T> out;
  Var<T> h = input;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const BoundLayer<T>& w = model.layers[l];
    const AttentionMask& m = options.layer_masks.empty() ? mask : options.layer_masks[l];
    const Var<T> a = rms_norm(h, w.attn_norm, eps);
    const Var<T> q = rope(matmul(a, w.wq), positions, cfg.heads, cfg.rope_base);
    const Var<T> k = rope(matmul(a, w.wk), positions, cfg.heads, cfg.rope_base);
    const Var<T> v = matmul(a, w.wv);
    std::vector<Var<T>> heads;
    std::vector<Tensor<T>> maps;
    for (std::size_t head = 0; head < cfg.heads; ++head) {
      const Var<T> qh = slice_cols(q, head * hd, hd);
      const Var<T> kh = slice_cols(k, head * hd, hd);
      const Var<T> vh = slice_cols(v, head * hd, hd);
      const Var<T> p = masked_softmax(matmul_nt(qh, kh), m, attn_scale);
      if (options.record_attention) maps.push_back(p.value());
      heads.push_back(matmul(p, vh));
    }
    if (options.record_attention) out.attention.push_back(std::move(maps));
    const Var<T> attn = cfg.heads == 1 ? heads.front()
                                       : concat_cols(std::span<const Var<T>>(heads));
    h = add(h, matmul(attn, w.wo));
    const Var<T> f = rms_norm(h, w.ffn_norm, eps);
    h = add(h, matmul(silu(matmul(f, w.w_up)), w.w_down));
  }
  out.hidden = rms_norm(h, model.final_norm, eps);
  return out;
}

template <typename T>
Var<T> output_logits(const BoundModel<T>& model, const Var<T>& hidden) {
  return matmul_nt(hidden, model.token_embedding);
}

#define PIC_INSTANTIATE_TRANSFORMER(T)                                            \
  template struct ModelParams<T>;                                                 \
  template ModelParams<T> init_model_params<T>(const ModelConfig&, std::uint64_t, \
                                               const std::string&);               \
  template BoundModel<T> bind<T>(Tape<T>&, ModelParams<T>&, bool);                \
  template BoundModel<T> bind_frozen<T>(Tape<T>&, const ModelParams<T>&);         \
  template Var<T> embed<T>(const BoundModel<T>&, std::span<const TokenId>);       \
  template ForwardOutput<T> forward<T>(const BoundModel<T>&, const Var<T>&,       \
                                       std::span<const std::size_t>,              \
                                       const AttentionMask&, const ForwardOptions&); \
  template Var<T> output_logits<T>(const BoundModel<T>&, const Var<T>&);

PIC_INSTANTIATE_TRANSFORMER(float)
PIC_INSTANTIATE_TRANSFORMER(double)

}  // namespace pic

// SPDX-License-Identifier: Apache-2.0
// JSON mapping of the library configs. Private to the core library.
#pragma once

#include <json.hpp>
#include <string>

#include "pic/compressor.hpp"
#include "pic/error.hpp"
#include "pic/objectives.hpp"
#include "pic/transformer.hpp"

namespace pic {

template <typename V>
V json_field(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string("missing JSON field '") + key + "'");
  try {
    return it->get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("JSON field '") + key + "': " + e.what());
  }
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},           {"heads", c.heads},
                     {"d_model", c.d_model},         {"d_ff", c.d_ff},
                     {"memory_slots", c.memory_slots}, {"max_seq_len", c.max_seq_len},
                     {"rope_base", c.rope_base},     {"norm_eps", c.norm_eps}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.layers = json_field<std::size_t>(j, "layers");
  c.heads = json_field<std::size_t>(j, "heads");
  c.d_model = json_field<std::size_t>(j, "d_model");
  c.d_ff = json_field<std::size_t>(j, "d_ff");
  c.memory_slots = json_field<std::size_t>(j, "memory_slots");
  c.max_seq_len = json_field<std::size_t>(j, "max_seq_len");
  c.rope_base = json_field<double>(j, "rope_base");
  c.norm_eps = json_field<double>(j, "norm_eps");
}

inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = nlohmann::json{{"lambda", c.lambda},
                     {"tc_split", c.tc_split},
                     {"ratio", c.ratio},
                     {"lr", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"steps", c.steps},
                     {"seed", c.seed},
                     {"mask", to_string(c.mask_mode)},
                     {"clip_norm", c.clip_norm},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"freeze_decoder", c.freeze_decoder}};
}

inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
  c.lambda = json_field<double>(j, "lambda");
  c.tc_split = json_field<std::size_t>(j, "tc_split");
  c.ratio = json_field<std::size_t>(j, "ratio");
  c.learning_rate = json_field<double>(j, "lr");
  c.batch_size = json_field<std::size_t>(j, "batch_size");
  c.steps = json_field<std::size_t>(j, "steps");
  c.seed = json_field<std::uint64_t>(j, "seed");
  c.mask_mode = paradigm_from_string(json_field<std::string>(j, "mask"));
  c.clip_norm = json_field<double>(j, "clip_norm");
  c.beta1 = json_field<double>(j, "beta1");
  c.beta2 = json_field<double>(j, "beta2");
  c.adam_eps = json_field<double>(j, "adam_eps");
  c.freeze_decoder = json_field<bool>(j, "freeze_decoder");
}

}  // namespace pic

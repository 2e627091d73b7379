// SPDX-License-Identifier: Apache-2.0
#include "cli/run_config.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

namespace pic::cli {

using nlohmann::json;

namespace {

std::string dashed(std::string name) {
  for (char& c : name) {
    if (c == '_') c = '-';
  }
  return "--" + name;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void type_error(const std::string& key, const char* expected) {
  throw ValidationError(key + ": expected " + expected);
}

static_assert(std::is_same_v<std::uint64_t, std::size_t>,
              "seed fields share the size_t conversion");

void assign(std::size_t& dst, const json& v, const std::string& key) {
  if (!v.is_number_integer()) type_error(key, "a non-negative integer");
  if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
    type_error(key, "a non-negative integer");
  }
  dst = v.get<std::size_t>();
}

void assign(std::int64_t& dst, const json& v, const std::string& key) {
  if (!v.is_number_integer()) type_error(key, "an integer");
  dst = v.get<std::int64_t>();
}

void assign(double& dst, const json& v, const std::string& key) {
  if (!v.is_number()) type_error(key, "a number");
  dst = v.get<double>();
}

void assign(bool& dst, const json& v, const std::string& key) {
  if (!v.is_boolean()) type_error(key, "true or false");
  dst = v.get<bool>();
}

void assign(std::string& dst, const json& v, const std::string& key) {
  if (!v.is_string()) type_error(key, "a string");
  dst = v.get<std::string>();
}

template <typename V>
CLI::Option* add_field(CLI::App& app, const std::string& flag, V& storage,
                       const std::string& help) {
  if constexpr (std::is_same_v<V, bool>) {
    return app.add_flag(flag, storage, help);
  } else {
    return app.add_option(flag, storage, help);
  }
}

json to_json_object(const RunConfig& c) {
  json j = json::object();
#define PIC_TO_JSON(name, help) j[#name] = c.name;
  PIC_RUN_CONFIG_FIELDS(PIC_TO_JSON)
#undef PIC_TO_JSON
  return j;
}

template <typename Fn>
void rethrow_as_validation(Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError&) {
    throw;
  } catch (const Error& e) {
    throw ValidationError(e.what());
  }
}

}  // namespace

ModelConfig RunConfig::compressor_config() const {
  ModelConfig m;
  m.layers = layers;
  m.heads = heads;
  m.d_model = d_model;
  m.d_ff = d_ff == 0 ? 4 * d_model : d_ff;
  m.memory_slots = memory_count();
  // Room for [memory, <AE>, context] in the decoder and for generation.
  m.max_seq_len = seq_len + memory_count() + 8;
  m.rope_base = rope_base;
  return m;
}

ModelConfig RunConfig::decoder_config() const {
  ModelConfig m = compressor_config();
  m.memory_slots = 0;
  if (decoder_d_model != 0) {
    m.d_model = decoder_d_model;
    m.d_ff = d_ff == 0 ? 4 * decoder_d_model : d_ff;
  }
  return m;
}

TrainingConfig RunConfig::training_config() const {
  TrainingConfig t;
  t.lambda = lambda;
  t.tc_split = tc_split;
  t.ratio = ratio;
  t.learning_rate = lr;
  t.batch_size = batch_size;
  t.steps = steps;
  t.seed = seed;
  t.mask_mode = paradigm_from_string(mask);
  t.clip_norm = clip_norm;
  t.freeze_decoder = freeze_decoder;
  return t;
}

CorpusSpec RunConfig::corpus_spec() const {
  CorpusSpec s;
  s.kind = corpus_kind_from_string(corpus);
  s.seed = corpus_seed;
  s.length = seq_len;
  s.count = corpus_count;
  s.path = corpus_path;
  s.markov_alphabet = markov_alphabet;
  return s;
}

std::vector<Paradigm> RunConfig::paradigm_list() const {
  std::vector<Paradigm> out;
  for (const std::string& name : split_list(paradigms)) out.push_back(paradigm_from_string(name));
  return out;
}

std::vector<std::size_t> RunConfig::bench_counts() const {
  std::vector<std::size_t> out;
  for (const std::string& item : split_list(bench_n)) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v == 0) {
      throw ValidationError("bench_n: '" + item + "' is not a positive integer");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

void RunConfig::validate() const {
  static const char* const kCommands[] = {"train", "compress", "reconstruct", "eval",
                                          "heatmap", "bench", "verify"};
  if (std::find(std::begin(kCommands), std::end(kCommands), command) == std::end(kCommands)) {
    throw ValidationError("command: unknown subcommand '" + command + "'");
  }
  if (seq_len < 2) throw ValidationError("seq_len: must be >= 2");
  if (ratio == 0) throw ValidationError("ratio: must be >= 1");
  if (seq_len % ratio != 0) {
    throw ValidationError("ratio: " + std::to_string(ratio) + " does not divide seq_len " +
                          std::to_string(seq_len));
  }
  try {
    paradigm_from_string(mask);
  } catch (const Error& e) {
    throw ValidationError(std::string("mask: ") + e.what());
  }
  try {
    corpus_kind_from_string(corpus);
  } catch (const Error& e) {
    throw ValidationError(std::string("corpus: ") + e.what());
  }
  rethrow_as_validation([&] {
    compressor_config().validate();
    decoder_config().validate();
    training_config().validate(seq_len);
  });
  if (corpus == "file" && corpus_path.empty()) {
    throw ValidationError("corpus_path: required for the file corpus");
  }
  if (sample >= corpus_count && text.empty()) {
    throw ValidationError("sample: index " + std::to_string(sample) + " outside corpus of " +
                          std::to_string(corpus_count));
  }
  if (command == "train" && batch_size > corpus_count) {
    throw ValidationError("batch_size: " + std::to_string(batch_size) +
                          " exceeds corpus_count " + std::to_string(corpus_count));
  }
  if ((command == "eval" || command == "reconstruct") && checkpoint.empty()) {
    throw ValidationError("checkpoint: required for " + command);
  }
  if (command == "heatmap") {
    if (kind != "attention" && kind != "cosine" && kind != "similarity") {
      throw ValidationError("kind: expected attention, cosine or similarity, got '" + kind + "'");
    }
    if (cosine_source != "input" && cosine_source != "hidden") {
      throw ValidationError("cosine_source: expected input or hidden, got '" + cosine_source +
                            "'");
    }
    if (checkpoint.empty()) {
      if (layer >= layers) {
        throw ValidationError("layer: " + std::to_string(layer) + " out of range for " +
                              std::to_string(layers) + " layers");
      }
      if (head >= static_cast<std::int64_t>(heads)) {
        throw ValidationError("head: " + std::to_string(head) + " out of range for " +
                              std::to_string(heads) + " heads");
      }
    }
    if (head < -1) throw ValidationError("head: must be -1 (mean) or a head index");
    if (kind == "similarity" && bins == 0) throw ValidationError("bins: must be >= 1");
  }
  if (command == "bench") {
    rethrow_as_validation([&] { paradigm_list(); });
    if (paradigm_list().empty()) throw ValidationError("paradigms: empty list");
    const auto counts = bench_counts();
    if (counts.empty()) throw ValidationError("bench_n: empty list");
    for (const std::size_t n : counts) {
      if (seq_len % n != 0) {
        throw ValidationError("bench_n: " + std::to_string(n) + " does not divide seq_len " +
                              std::to_string(seq_len));
      }
    }
    if (repetitions == 0) throw ValidationError("repetitions: must be >= 1");
  }
  if (command == "eval" && eval_split != "train" && eval_split != "heldout") {
    throw ValidationError("eval_split: expected train or heldout, got '" + eval_split + "'");
  }
}

std::string canonical_json(const RunConfig& config) { return to_json_object(config).dump(); }

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 14695981039346656037ull;
  for (const unsigned char c : canonical_json(config)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_json(RunConfig& config, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
#define PIC_APPLY(name, help)        \
  if (key == #name) {                \
    known = true;                    \
    assign(config.name, value, key); \
  }
    PIC_RUN_CONFIG_FIELDS(PIC_APPLY)
#undef PIC_APPLY
    if (!known) throw ValidationError("config: unknown key '" + key + "'");
  }
}

ParseOutcome parse_and_validate(int argc, const char* const* argv) {
  ParseOutcome outcome;
  CLI::App app{"Parallelized iterative context compression toolkit", "pic"};
  app.require_subcommand(1);

  RunConfig flags;
  std::map<std::string, CLI::Option*> given;
  std::string config_path, out_dir;
  bool force = false;
  app.add_option("--config", config_path, "JSON config file (flags override it)");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--force", force, "overwrite existing artifacts");
#define PIC_FLAG(name, help) given[#name] = add_field(app, dashed(#name), flags.name, help);
  PIC_RUN_CONFIG_FIELDS(PIC_FLAG)
#undef PIC_FLAG

  const std::pair<const char*, const char*> commands[] = {
      {"train", "train compressor and decoder"},
      {"compress", "compress one context into a memory record"},
      {"reconstruct", "greedy reconstruction from memory"},
      {"eval", "reconstruction accuracy and completion loss"},
      {"heatmap", "attention, cosine or pairwise-similarity diagnostics"},
      {"bench", "compression latency per paradigm and memory count"},
      {"verify", "run the invariant suite"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    outcome.exit = true;
    outcome.exit_code = app.exit(e);
    return outcome;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    outcome.exit = true;
    outcome.exit_code = kExitValidation;
    return outcome;
  }

  try {
    RunConfig merged;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ValidationError("config: cannot read " + config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      apply_json(merged, ss.str());
    }
#define PIC_OVERRIDE(name, help) \
  if (given[#name]->count() > 0) merged.name = flags.name;
    PIC_RUN_CONFIG_FIELDS(PIC_OVERRIDE)
#undef PIC_OVERRIDE
    merged.command = app.get_subcommands().front()->get_name();
    merged.config_path = config_path;
    if (!out_dir.empty()) merged.out = out_dir;
    merged.force = force;
    merged.validate();
    outcome.config = std::move(merged);
  } catch (const ValidationError& e) {
    std::cerr << "pic: invalid configuration: " << e.what() << '\n';
    outcome.exit = true;
    outcome.exit_code = kExitValidation;
  }
  return outcome;
}

}  // namespace pic::cli

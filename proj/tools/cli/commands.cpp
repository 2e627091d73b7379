// SPDX-License-Identifier: Apache-2.0
#include "cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "pic/checkpoint.hpp"
#include "pic/decoder_bridge.hpp"
#include "pic/diagnostics.hpp"
#include "pic/training.hpp"
#include "pic/verify.hpp"

#ifndef PIC_GIT_DESCRIBE
#define PIC_GIT_DESCRIBE ""
#endif

namespace pic::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Output files of one run. Every name carries the config hash and existing
/// files are only replaced with --force.
class Artifacts {
 public:
  Artifacts(const RunConfig& config, std::string hash)
      : dir_(config.out), hash_(std::move(hash)), force_(config.force) {
    fs::create_directories(dir_);
  }

  const std::string& hash() const { return hash_; }

  /// out/<stem>-<hash><suffix>, refusing to clobber an existing file.
  fs::path claim(const std::string& stem, const std::string& suffix) {
    const fs::path p = dir_ / (stem + "-" + hash_ + suffix);
    if (fs::exists(p) && !force_) {
      throw Error("refusing to overwrite " + p.string() + " (pass --force)");
    }
    written_.push_back(p.string());
    return p;
  }

  const std::vector<std::string>& written() const { return written_; }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::string hash_;
  bool force_;
  std::vector<std::string> written_;
};

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

CompressionModel<float> load_or_init(const RunConfig& c) {
  if (!c.checkpoint.empty()) return restore_model<float>(load_checkpoint(c.checkpoint));
  return make_compression_model<float>(c.compressor_config(), c.decoder_config(), c.converter,
                                       c.seed);
}

std::vector<TokenId> context_for(const RunConfig& c) {
  if (!c.text.empty()) return encode(c.text);
  return generate_corpus(c.corpus_spec()).at(c.sample);
}

std::size_t memory_count_for(const RunConfig& c, std::size_t length) {
  if (length % c.ratio != 0) {
    throw Error("context of " + std::to_string(length) + " tokens is not divisible by ratio " +
                std::to_string(c.ratio));
  }
  return length / c.ratio;
}

std::string printable(std::span<const TokenId> ids) {
  std::string s;
  for (const TokenId id : ids) {
    if (Vocabulary::is_byte(id)) {
      s.push_back(static_cast<char>(id));
    } else {
      s += "<" + std::to_string(id) + ">";
    }
  }
  return s;
}

int cmd_train(const RunConfig& c, Artifacts& art) {
  const auto corpus = generate_corpus(c.corpus_spec());
  auto model = make_compression_model<float>(c.compressor_config(), c.decoder_config(),
                                             c.converter, c.seed);
  const TrainingConfig tc = c.training_config();
  const fs::path log_path = art.claim("train", ".csv");
  const fs::path ckpt_path = art.claim("checkpoint", ".picc");

  if (c.pretrain_steps > 0) {
    const auto losses = pretrain_decoder(model.decoder, std::span(corpus), c.pretrain_steps,
                                         c.batch_size, c.lr, c.seed + 1);
    std::cout << "decoder pretraining: " << losses.size() << " steps, final loss "
              << losses.back() << '\n';
  }

  std::ofstream log = open_out(log_path);
  write_training_log_header(log);
  TrainingLoopOptions options;
  options.record_wall_time = c.log_wall_time;
  options.on_step = [&](const TrainingLogRow& row) {
    write_training_log_row(log, row);
    if (c.checkpoint_every > 0 && row.step % c.checkpoint_every == 0 && row.step < c.steps) {
      const fs::path p = art.claim("checkpoint", "-step" + std::to_string(row.step) + ".picc");
      save_checkpoint(make_checkpoint(model, tc, row.step, ""), p);
    }
    return true;
  };
  const TrainingRun run = train(model, tc, std::span(corpus), options);
  save_checkpoint(make_checkpoint(model, tc, run.log.size(), run.sampler_state), ckpt_path);
  if (!run.log.empty()) {
    const LossBreakdown& last = run.log.back().loss;
    std::cout << "trained " << run.log.size() << " steps: tr " << last.tr << ", tc " << last.tc
              << ", combined " << last.combined << '\n';
  }
  std::cout << "checkpoint " << ckpt_path.string() << "\nlog " << log_path.string() << '\n';
  return kExitOk;
}

int cmd_compress(const RunConfig& c, Artifacts& art) {
  const auto model = load_or_init(c);
  const auto context = context_for(c);
  const std::size_t n = memory_count_for(c, context.size());
  const fs::path path = art.claim("memory", ".picm");
  const CompressedValues<float> mem = compress_values(
      model.compressor, std::span<const TokenId>(context), n, paradigm_from_string(c.mask));
  std::ofstream out = open_out(path, true);
  write_memory_record(mem.states, out);
  std::cout << "compressed " << context.size() << " tokens into " << n << " x "
            << mem.states.cols() << " memory (" << mem.passes << " forward passes)\n"
            << "memory " << path.string() << '\n';
  return kExitOk;
}

int cmd_reconstruct(const RunConfig& c, Artifacts& art) {
  const auto model = load_or_init(c);
  std::optional<std::vector<TokenId>> source;
  Tensor<float> memory;
  if (!c.memory.empty()) {
    std::ifstream in(c.memory, std::ios::binary);
    if (!in) throw Error("cannot open memory record " + c.memory);
    memory = read_memory_record(in);
  } else {
    source = context_for(c);
    memory = compress_values(model.compressor, std::span<const TokenId>(*source),
                             memory_count_for(c, source->size()), paradigm_from_string(c.mask))
                 .states;
  }
  const fs::path path = art.claim("reconstruction", ".txt");
  const std::size_t max_len = c.max_len == 0 ? c.seq_len : c.max_len;
  const GenerationResult g = reconstruct(model, memory, max_len);
  const std::string text = printable(g.ids);
  std::ofstream out = open_out(path);
  out << text << '\n';
  std::cout << text << '\n'
            << "stop: " << to_string(g.stop) << ", " << g.ids.size() << " tokens\n";
  if (source) std::cout << "exact match: " << (g.ids == *source ? "yes" : "no") << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& c, Artifacts& art) {
  const auto model = load_or_init(c);
  CorpusSpec spec = c.corpus_spec();
  std::size_t skip = 0;
  if (c.eval_split == "heldout") {
    spec.seed = c.corpus_seed + 1;
    // A file has no seed; hold out the windows that follow the training ones.
    if (spec.kind == CorpusKind::kFile) {
      skip = c.corpus_count;
      spec.count += c.eval_samples > 0 ? c.eval_samples : std::max<std::size_t>(1, skip / 10);
    }
  }
  auto corpus = generate_corpus(spec);
  corpus.erase(corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(skip));
  if (c.eval_samples > 0 && c.eval_samples < corpus.size()) corpus.resize(c.eval_samples);

  EvalOptions options;
  options.ratio = c.ratio;
  options.paradigm = paradigm_from_string(c.mask);
  options.split = c.tc_split;
  options.free_running = c.free_running;
  std::vector<EvalReport> reports;
  const ReconstructionScore score = eval_reconstruction_accuracy(model, std::span(corpus), options);
  reports.push_back({"reconstruction_token_accuracy", score.token_accuracy, score.n_samples,
                     art.hash(), c.seed});
  if (c.free_running) {
    reports.push_back({"reconstruction_sequence_exact", score.sequence_exact_rate,
                       score.n_samples, art.hash(), c.seed});
  }
  reports.push_back({"completion_nll", eval_completion_nll(model, std::span(corpus), options),
                     corpus.size(), art.hash(), c.seed});
  for (const EvalReport& r : reports) {
    std::ofstream out = open_out(art.claim("eval-" + r.metric, ".json"));
    write_eval_report(r, out);
    std::cout << r.metric << " = " << r.value << " (" << r.n_samples << " samples)\n";
  }
  return kExitOk;
}

void write_heatmap_files(const Heatmap& map, Artifacts& art, const std::string& stem) {
  std::ofstream csv = open_out(art.claim(stem, ".csv"));
  write_heatmap_csv(map, csv);
  std::ofstream pgm = open_out(art.claim(stem, ".pgm"));
  write_heatmap_pgm(map, pgm);
  std::ofstream side = open_out(art.claim(stem, ".json"));
  write_heatmap_sidecar(map, side);
}

int cmd_heatmap(const RunConfig& c, Artifacts& art) {
  const auto model = load_or_init(c);
  const Paradigm paradigm = paradigm_from_string(c.mask);
  if (c.kind == "similarity") {
    auto corpus = generate_corpus(c.corpus_spec());
    if (c.eval_samples > 0 && c.eval_samples < corpus.size()) corpus.resize(c.eval_samples);
    std::vector<Tensor<float>> memories;
    for (const auto& x : corpus) {
      memories.push_back(compress_values(model.compressor, std::span<const TokenId>(x),
                                         memory_count_for(c, x.size()), paradigm)
                             .states);
    }
    const SimilarityHistogram h =
        pairwise_memory_histogram(std::span<const Tensor<float>>(memories), c.bins);
    std::ofstream csv = open_out(art.claim("similarity", ".csv"));
    write_histogram_csv(h, csv);
    std::ofstream side = open_out(art.claim("similarity", ".json"));
    side << json{{"pair_count", h.pair_count}, {"mean", h.mean}, {"stddev", h.stddev},
                 {"skew", h.skew}, {"samples", memories.size()}}
                .dump(2)
         << '\n';
    std::cout << "pairwise cosine over " << h.pair_count << " pairs: mean " << h.mean
              << ", std " << h.stddev << ", skew " << h.skew << '\n';
    return kExitOk;
  }

  const auto context = context_for(c);
  const std::size_t n = memory_count_for(c, context.size());
  Heatmap map;
  if (c.kind == "attention") {
    const std::optional<std::size_t> head =
        c.head < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(c.head));
    map = attention_heatmap(model.compressor, std::span<const TokenId>(context), n, paradigm,
                            c.layer, head);
  } else {
    const Tensor<float> memory =
        compress_values(model.compressor, std::span<const TokenId>(context), n, paradigm).states;
    const TokenSource source =
        c.cosine_source == "hidden" ? TokenSource::kHiddenState : TokenSource::kInputEmbedding;
    map = cosine_map(memory, context_token_vectors(model.compressor,
                                                   std::span<const TokenId>(context), n,
                                                   paradigm, source));
    if (map.zero_norm) std::cerr << "warning: zero-norm vectors scored as 0\n";
  }
  write_heatmap_files(map, art, "heatmap-" + c.kind);
  std::cout << c.kind << " heatmap " << map.rows() << " x " << map.cols() << " written to "
            << art.dir().string() << '\n';
  return kExitOk;
}

int cmd_bench(const RunConfig& c, Artifacts& art) {
  const std::vector<std::size_t> counts = c.bench_counts();
  const std::size_t max_n = *std::max_element(counts.begin(), counts.end());
  CompressionModel<float> model;
  if (!c.checkpoint.empty()) {
    model = load_or_init(c);
  } else {
    ModelConfig mc = c.compressor_config();
    mc.memory_slots = std::max(mc.memory_slots, max_n);
    mc.max_seq_len = c.seq_len + max_n * (max_n + 1) / 2 + 8;
    model.compressor = init_model_params<float>(mc, c.seed, "compressor.");
  }
  const auto context = context_for(c);
  const std::vector<Paradigm> paradigms = c.paradigm_list();
  const fs::path path = art.claim("bench", ".csv");
  LatencyOptions options;
  options.repetitions = c.repetitions;
  options.warmup = c.warmup;
  const std::vector<LatencyRow> rows =
      latency_benchmark(model.compressor, std::span<const TokenId>(context),
                        std::span<const std::size_t>(counts),
                        std::span<const Paradigm>(paradigms), options);
  std::ofstream out = open_out(path);
  write_benchmark_csv(std::span<const LatencyRow>(rows), out);
  for (const LatencyRow& r : rows) {
    std::cout << to_string(r.paradigm) << " N=" << r.memory_count << ": " << r.median_ms
              << " ms, " << r.passes << " passes\n";
  }
  for (const Paradigm p : paradigms) {
    std::vector<double> x, y;
    for (const LatencyRow& r : rows) {
      if (r.paradigm != p) continue;
      x.push_back(static_cast<double>(r.memory_count));
      y.push_back(r.median_ms);
    }
    if (x.size() < 2) continue;
    const LinearFit fit = fit_line(x, y);
    std::cout << to_string(p) << " fit: slope " << fit.slope << " ms per memory token, R^2 "
              << fit.r2 << '\n';
  }
  std::cout << "bench " << path.string() << '\n';
  return kExitOk;
}

int cmd_verify(const RunConfig& c, Artifacts& art) {
  const fs::path path = art.claim("verify", ".json");
  json results = json::array();
  bool all = true;
  for (const CheckResult& r : run_invariant_suite(c.seed)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ", "
              << r.seconds << " s)\n";
    results.push_back(
        {{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}, {"seconds", r.seconds}});
    all = all && r.passed;
  }
  std::ofstream out = open_out(path);
  out << results.dump(2) << '\n';
  return all ? kExitOk : kExitRuntime;
}

void write_manifest(const RunConfig& c, const Artifacts& art, double wall_ms, int status) {
  const fs::path path = art.dir() / ("manifest-" + c.command + "-" + art.hash() + ".json");
  if (fs::exists(path) && !c.force) {
    std::cerr << "pic: keeping existing " << path.string() << " (pass --force)\n";
    return;
  }
  json manifest = {{"command", c.command},
                   {"config", json::parse(canonical_json(c))},
                   {"config_hash", art.hash()},
                   {"seed", c.seed},
                   {"git_describe", PIC_GIT_DESCRIBE},
                   {"wall_time_ms", wall_ms},
                   {"exit_code", status},
                   {"artifacts", art.written()}};
  std::ofstream out = open_out(path);
  out << manifest.dump(2) << '\n';
}

}  // namespace

int run(const RunConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  int status = kExitRuntime;
  try {
    Artifacts art(config, config_hash(config));
    try {
      if (config.command == "train") status = cmd_train(config, art);
      else if (config.command == "compress") status = cmd_compress(config, art);
      else if (config.command == "reconstruct") status = cmd_reconstruct(config, art);
      else if (config.command == "eval") status = cmd_eval(config, art);
      else if (config.command == "heatmap") status = cmd_heatmap(config, art);
      else if (config.command == "bench") status = cmd_bench(config, art);
      else if (config.command == "verify") status = cmd_verify(config, art);
      else throw Error("unknown command " + config.command);
    } catch (const std::exception& e) {
      std::cerr << "pic " << config.command << ": " << e.what() << '\n';
      status = kExitRuntime;
    }
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    write_manifest(config, art, wall_ms, status);
  } catch (const std::exception& e) {
    std::cerr << "pic " << config.command << ": " << e.what() << '\n';
    return kExitRuntime;
  }
  return status;
}

int main_entry(int argc, const char* const* argv) {
  const ParseOutcome parsed = parse_and_validate(argc, argv);
  if (parsed.exit) return parsed.exit_code;
  return run(parsed.config);
}

}  // namespace pic::cli

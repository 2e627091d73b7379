// SPDX-License-Identifier: Apache-2.0
#include "pic/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <json.hpp>

namespace pic {

std::string to_string(HeatmapKind kind) {
  return kind == HeatmapKind::kAttention ? "attention" : "cosine";
}

HeatmapKind heatmap_kind_from_string(std::string_view name) {
  if (name == "attention") return HeatmapKind::kAttention;
  if (name == "cosine") return HeatmapKind::kCosine;
  throw ContractError("unknown heatmap kind '" + std::string(name) +
                      "' (expected attention or cosine)");
}

template <typename T>
Heatmap attention_heatmap(const ModelParams<T>& compressor, std::span<const TokenId> context,
                          std::size_t memory_count, Paradigm paradigm, std::size_t layer,
                          std::optional<std::size_t> head) {
  if (paradigm == Paradigm::kIterative) {
    throw ContractError("attention heatmaps need a single-pass paradigm");
  }
  const ModelConfig& cfg = compressor.config;
  if (layer >= cfg.layers) {
    throw IndexError("layer " + std::to_string(layer) + " out of range for " +
                     std::to_string(cfg.layers) + " layers");
  }
  if (head && *head >= cfg.heads) {
    throw IndexError("head " + std::to_string(*head) + " out of range for " +
                     std::to_string(cfg.heads) + " heads");
  }
  CompressOptions options;
  options.record_attention = true;
  const CompressedValues<T> out =
      compress_values(compressor, context, memory_count, paradigm, options);
  const std::size_t length = context.size();
  const std::vector<Tensor<T>>& heads = out.attention.at(layer);

  Heatmap map;
  map.kind = HeatmapKind::kAttention;
  map.values = Tensor<double>({memory_count, length});
  const std::size_t first = head ? *head : 0;
  const std::size_t last = head ? *head + 1 : heads.size();
  for (std::size_t h = first; h < last; ++h) {
    const Tensor<T>& a = heads[h];
    for (std::size_t t = 0; t < memory_count; ++t) {
      for (std::size_t j = 0; j < length; ++j) {
        map.values(t, j) += static_cast<double>(a(length + t, j));
      }
    }
  }
  if (!head) {
    const double inv = 1.0 / static_cast<double>(heads.size());
    for (double& v : map.values.values()) v *= inv;
  }
  return map;
}

namespace {

template <typename T>
double row_norm(const T* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(v[i]) * static_cast<double>(v[i]);
  return std::sqrt(s);
}

template <typename T>
double cosine(const T* a, const T* b, std::size_t n, bool* zero_norm) {
  const double na = row_norm(a, n), nb = row_norm(b, n);
  if (na == 0.0 || nb == 0.0) {
    if (zero_norm) *zero_norm = true;
    return 0.0;
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

}  // namespace

template <typename T>
Heatmap cosine_map(const Tensor<T>& memory, const Tensor<T>& tokens) {
  if (memory.ndim() != 2 || tokens.ndim() != 2 || memory.cols() != tokens.cols()) {
    throw ShapeError("cosine_map needs matrices of equal width, got " +
                     shape_string(memory.shape()) + " and " + shape_string(tokens.shape()));
  }
  Heatmap map;
  map.kind = HeatmapKind::kCosine;
  map.values = Tensor<double>({memory.rows(), tokens.rows()});
  const std::size_t d = memory.cols();
  for (std::size_t t = 0; t < memory.rows(); ++t) {
    for (std::size_t j = 0; j < tokens.rows(); ++j) {
      map.values(t, j) =
          cosine(memory.data() + t * d, tokens.data() + j * d, d, &map.zero_norm);
    }
  }
  return map;
}

template <typename T>
Tensor<T> context_token_vectors(const ModelParams<T>& compressor,
                                std::span<const TokenId> context, std::size_t memory_count,
                                Paradigm paradigm, TokenSource source) {
  Tape<T> tape;
  const BoundModel<T> bound = bind_frozen(tape, compressor);
  if (source == TokenSource::kInputEmbedding) return embed(bound, context).value();
  const CompressionInput input =
      build_compression_input(context, memory_count, paradigm, compressor.config.vocabulary());
  const Var<T> x = embed(bound, std::span<const TokenId>(input.sequence));
  const ForwardOutput<T> out =
      forward(bound, x, iota_positions(input.sequence.size()), input.mask);
  return slice_rows(out.hidden, 0, context.size()).value();
}

template <typename T>
std::vector<double> pairwise_cosines(const Tensor<T>& memory) {
  if (memory.ndim() != 2) throw ShapeError("pairwise_cosines expects a matrix");
  const std::size_t n = memory.rows(), d = memory.cols();
  std::vector<double> out;
  out.reserve(n * (n - (n > 0 ? 1 : 0)) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      out.push_back(cosine(memory.data() + i * d, memory.data() + j * d, d, nullptr));
    }
  }
  return out;
}

template <typename T>
SimilarityHistogram pairwise_memory_histogram(std::span<const Tensor<T>> memories,
                                              std::size_t bins) {
  if (bins == 0) throw ContractError("histogram needs at least one bin");
  SimilarityHistogram h;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) {
    h.edges[b] = -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(bins);
  }
  std::vector<double> all;
  for (const Tensor<T>& m : memories) {
    if (m.ndim() != 2 || m.rows() < 2) {
      throw ContractError("pairwise similarity needs at least two memory rows per sample");
    }
    const std::vector<double> c = pairwise_cosines(m);
    all.insert(all.end(), c.begin(), c.end());
  }
  h.pair_count = all.size();
  std::vector<std::size_t> counts(bins, 0);
  for (const double v : all) {
    auto bin = static_cast<std::size_t>((v + 1.0) / 2.0 * static_cast<double>(bins));
    ++counts[std::min(bin, bins - 1)];
  }
  h.masses.resize(bins, 0.0);
  if (all.empty()) return h;
  const double n = static_cast<double>(all.size());
  for (std::size_t b = 0; b < bins; ++b) h.masses[b] = static_cast<double>(counts[b]) / n;
  double sum = 0.0;
  for (const double v : all) sum += v;
  h.mean = sum / n;
  double m2 = 0.0, m3 = 0.0;
  for (const double v : all) {
    const double dv = v - h.mean;
    m2 += dv * dv;
    m3 += dv * dv * dv;
  }
  m2 /= n;
  m3 /= n;
  h.stddev = std::sqrt(m2);
  h.skew = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
  return h;
}

template <typename T>
DependencyMatrix receptive_field_matrix(const ModelParams<T>& compressor, Paradigm paradigm,
                                        std::span<const TokenId> context,
                                        std::size_t memory_count, double tolerance) {
  const Tensor<T> base = compress_values(compressor, context, memory_count, paradigm).states;
  DependencyMatrix dep;
  dep.rows = memory_count;
  dep.cols = context.size();
  dep.bits.assign(dep.rows * dep.cols, 0);
  const std::size_t d = base.cols();
  std::vector<TokenId> perturbed(context.begin(), context.end());
  for (std::size_t j = 0; j < context.size(); ++j) {
    perturbed[j] = (context[j] + 1) % 256;
    const Tensor<T> h =
        compress_values(compressor, std::span<const TokenId>(perturbed), memory_count, paradigm)
            .states;
    for (std::size_t t = 0; t < memory_count; ++t) {
      const T* a = base.data() + t * d;
      const T* b = h.data() + t * d;
      bool changed = false;
      if (tolerance == 0.0) {
        changed = std::memcmp(a, b, d * sizeof(T)) != 0;
      } else {
        for (std::size_t i = 0; i < d && !changed; ++i) {
          changed = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) > tolerance;
        }
      }
      dep.bits[t * dep.cols + j] = changed ? 1 : 0;
    }
    perturbed[j] = context[j];
  }
  return dep;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

template <typename T>
std::vector<LatencyRow> latency_benchmark(const ModelParams<T>& compressor,
                                          std::span<const TokenId> context,
                                          std::span<const std::size_t> memory_counts,
                                          std::span<const Paradigm> paradigms,
                                          const LatencyOptions& options) {
  if (options.repetitions == 0) throw ContractError("latency benchmark needs repetitions >= 1");
  using Clock = std::chrono::steady_clock;
  std::vector<LatencyRow> rows;
  for (const Paradigm paradigm : paradigms) {
    for (const std::size_t n : memory_counts) {
      LatencyRow row;
      row.paradigm = paradigm;
      row.memory_count = n;
      rows.push_back(row);
    }
  }
  for (std::size_t w = 0; w < options.warmup; ++w) {
    for (const LatencyRow& row : rows) compress_values(compressor, context, row.memory_count, row.paradigm);
  }
  // Repetitions are interleaved across configurations so slow clock or load
  // drift lands on every row instead of the ones measured last.
  std::vector<std::vector<double>> times(rows.size());
  for (std::size_t r = 0; r < options.repetitions; ++r) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto start = Clock::now();
      const CompressedValues<T> out =
          compress_values(compressor, context, rows[i].memory_count, rows[i].paradigm);
      times[i].push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
      rows[i].passes = out.passes;
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].median_ms = median(std::move(times[i]));
  return rows;
}

LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ContractError("line fit needs at least two paired points");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ContractError("line fit needs at least two distinct x values");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.slope * x[i] + fit.intercept);
    ss_res += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return fit;
}

namespace {

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::pair<double, double> value_range(const Heatmap& heatmap) {
  const auto& v = heatmap.values.values();
  if (v.empty()) return {0.0, 0.0};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

}  // namespace

void write_heatmap_csv(const Heatmap& heatmap, std::ostream& out) {
  for (std::size_t t = 0; t < heatmap.rows(); ++t) {
    for (std::size_t j = 0; j < heatmap.cols(); ++j) {
      if (j) out << ',';
      out << format_value(heatmap.values(t, j));
    }
    out << '\n';
  }
}

void write_heatmap_pgm(const Heatmap& heatmap, std::ostream& out) {
  const auto [lo, hi] = value_range(heatmap);
  out << "P2\n" << heatmap.cols() << ' ' << heatmap.rows() << "\n255\n";
  for (std::size_t t = 0; t < heatmap.rows(); ++t) {
    for (std::size_t j = 0; j < heatmap.cols(); ++j) {
      const double scaled = hi > lo ? (heatmap.values(t, j) - lo) / (hi - lo) * 255.0 : 0.0;
      if (j) out << ' ';
      out << static_cast<int>(std::lround(scaled));
    }
    out << '\n';
  }
}

void write_heatmap_sidecar(const Heatmap& heatmap, std::ostream& out) {
  const auto [lo, hi] = value_range(heatmap);
  const nlohmann::json j = {{"kind", to_string(heatmap.kind)},
                            {"rows", heatmap.rows()},
                            {"cols", heatmap.cols()},
                            {"min", lo},
                            {"max", hi},
                            {"zero_norm", heatmap.zero_norm}};
  out << j.dump(2) << '\n';
}

void write_histogram_csv(const SimilarityHistogram& histogram, std::ostream& out) {
  out << "bin_left,bin_right,mass\n";
  for (std::size_t b = 0; b < histogram.masses.size(); ++b) {
    out << format_value(histogram.edges[b]) << ',' << format_value(histogram.edges[b + 1])
        << ',' << format_value(histogram.masses[b]) << '\n';
  }
}

void write_benchmark_csv(std::span<const LatencyRow> rows, std::ostream& out) {
  out << "paradigm,N,median_ms,passes\n";
  for (const LatencyRow& r : rows) {
    out << to_string(r.paradigm) << ',' << r.memory_count << ',' << format_value(r.median_ms)
        << ',' << r.passes << '\n';
  }
}

#define PIC_INSTANTIATE_DIAGNOSTICS(T)                                                   \
  template Heatmap attention_heatmap<T>(const ModelParams<T>&, std::span<const TokenId>, \
                                        std::size_t, Paradigm, std::size_t,              \
                                        std::optional<std::size_t>);                     \
  template Heatmap cosine_map<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> context_token_vectors<T>(const ModelParams<T>&,                     \
                                              std::span<const TokenId>, std::size_t,     \
                                              Paradigm, TokenSource);                    \
  template std::vector<double> pairwise_cosines<T>(const Tensor<T>&);                    \
  template SimilarityHistogram pairwise_memory_histogram<T>(std::span<const Tensor<T>>,  \
                                                            std::size_t);                \
  template DependencyMatrix receptive_field_matrix<T>(const ModelParams<T>&, Paradigm,   \
                                                      std::span<const TokenId>,          \
                                                      std::size_t, double);              \
  template std::vector<LatencyRow> latency_benchmark<T>(                                 \
      const ModelParams<T>&, std::span<const TokenId>, std::span<const std::size_t>,     \
      std::span<const Paradigm>, const LatencyOptions&);

PIC_INSTANTIATE_DIAGNOSTICS(float)
PIC_INSTANTIATE_DIAGNOSTICS(double)

}  // namespace pic

// SPDX-License-Identifier: Apache-2.0
#include "pic/compressor.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "pic/error.hpp"

namespace pic {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written in host order and assume little-endian");

std::string to_string(Paradigm paradigm) {
  switch (paradigm) {
    case Paradigm::kDirect: return "direct";
    case Paradigm::kIterative: return "iterative";
    case Paradigm::kPic: return "pic";
  }
  return "unknown";
}

Paradigm paradigm_from_string(std::string_view name) {
  if (name == "direct") return Paradigm::kDirect;
  if (name == "iterative") return Paradigm::kIterative;
  if (name == "pic") return Paradigm::kPic;
  throw ContractError("unknown paradigm '" + std::string(name) +
                      "' (expected direct, iterative or pic)");
}

namespace {

void require_plain_context(std::span<const TokenId> context) {
  if (context.empty()) throw ContractError("cannot compress an empty context");
  for (std::size_t i = 0; i < context.size(); ++i) {
    if (!Vocabulary::is_byte(context[i])) {
      throw ContractError("context position " + std::to_string(i) +
                          " holds non-byte id " + std::to_string(context[i]));
    }
  }
}

void require_memory_capacity(std::size_t memory_count, std::size_t slots) {
  if (memory_count > slots) {
    throw IndexError("compression needs " + std::to_string(memory_count) +
                     " memory slots but the model has " + std::to_string(slots));
  }
}

}  // namespace

CompressionInput build_compression_input(std::span<const TokenId> context,
                                         std::size_t memory_count, Paradigm paradigm,
                                         const Vocabulary& vocabulary) {
  require_plain_context(context);
  ChunkPartition partition(context.size(), memory_count);
  require_memory_capacity(memory_count, vocabulary.memory_slots());
  AttentionMask mask;
  switch (paradigm) {
    case Paradigm::kPic:
      mask = build_block_causal_mask(context.size(), memory_count);
      break;
    case Paradigm::kDirect:
      mask = build_full_causal_compression_mask(context.size(), memory_count);
      break;
    case Paradigm::kIterative:
      throw ContractError("iterative compression has no single-pass input");
  }
  std::vector<TokenId> sequence(context.begin(), context.end());
  for (std::size_t t = 0; t < memory_count; ++t) sequence.push_back(vocabulary.memory_id(t));
  return CompressionInput{std::move(sequence), std::move(partition), std::move(mask)};
}

template <typename T>
MemoryEmbeddings<T> compress_embedded(const BoundModel<T>& compressor,
                                      const Var<T>& context, std::size_t memory_count,
                                      Paradigm paradigm, const CompressOptions& options) {
  const std::size_t length = context.rows();
  const ChunkPartition partition(length, memory_count);
  require_memory_capacity(memory_count, compressor.config->memory_slots);

  MemoryEmbeddings<T> out;
  out.paradigm = paradigm;
  out.source_length = length;
  ForwardCounter counter;

  if (paradigm == Paradigm::kIterative) {
    std::vector<Var<T>> produced;
    produced.reserve(memory_count);
    for (std::size_t t = 0; t < memory_count; ++t) {
      const IndexRange& chunk = partition.chunk(t);
      std::vector<Var<T>> rows(produced.begin(), produced.end());
      rows.push_back(slice_rows(context, chunk.begin, chunk.size()));
      const std::size_t slot = t;
      rows.push_back(embedding(compressor.memory_embedding,
                               std::span<const std::size_t>(&slot, 1)));
      const Var<T> input = concat_rows(std::span<const Var<T>>(rows));
      const std::size_t n = input.rows();
      const auto positions = iota_positions(n);
      ForwardOptions fo;
      fo.counter = &counter;
      const ForwardOutput<T> result =
          forward(compressor, input, positions, build_causal_mask(n), fo);
      produced.push_back(slice_rows(result.hidden, n - 1, 1));
    }
    out.states = concat_rows(std::span<const Var<T>>(produced));
    out.passes = counter.passes;
    return out;
  }

  std::vector<std::size_t> slots = iota_positions(memory_count);
  const Var<T> memory = embedding(compressor.memory_embedding,
                                  std::span<const std::size_t>(slots));
  const Var<T> parts[] = {context, memory};
  const Var<T> z = concat_rows(std::span<const Var<T>>(parts));
  const AttentionMask mask = paradigm == Paradigm::kPic
                                 ? build_block_causal_mask(length, memory_count)
                                 : build_full_causal_compression_mask(length, memory_count);
  const auto positions = iota_positions(length + memory_count);
  ForwardOptions fo;
  fo.record_attention = options.record_attention;
  fo.layer_masks = options.layer_masks;
  fo.counter = &counter;
  ForwardOutput<T> result = forward(compressor, z, positions, mask, fo);
  out.states = slice_rows(result.hidden, length, memory_count);
  out.passes = counter.passes;
  out.attention = std::move(result.attention);
  return out;
}

template <typename T>
MemoryEmbeddings<T> compress(const BoundModel<T>& compressor,
                             std::span<const TokenId> context,
                             std::size_t memory_count, Paradigm paradigm,
                             const CompressOptions& options) {
  require_plain_context(context);
  return compress_embedded(compressor, embed(compressor, context), memory_count,
                           paradigm, options);
}

template <typename T>
CompressedValues<T> compress_values(const ModelParams<T>& compressor,
                                    std::span<const TokenId> context,
                                    std::size_t memory_count, Paradigm paradigm,
                                    const CompressOptions& options) {
  Tape<T> tape;
  const BoundModel<T> bound = bind_frozen(tape, compressor);
  MemoryEmbeddings<T> mem = compress(bound, context, memory_count, paradigm, options);
  return CompressedValues<T>{mem.states.value(), mem.passes, std::move(mem.attention)};
}

namespace {

template <typename U>
void put(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U get(std::istream& in, const char* what) {
  U value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(U))) {
    throw FormatError(std::string("memory record truncated while reading ") + what);
  }
  return value;
}

}  // namespace

void write_memory_record(const Tensor<float>& states, std::ostream& out) {
  if (states.ndim() != 2) {
    throw ShapeError("memory record expects an [N x d] matrix, got " +
                     shape_string(states.shape()));
  }
  out.write("PICM", 4);
  put<std::uint32_t>(out, kMemoryRecordVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(states.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(states.cols()));
  out.write(reinterpret_cast<const char*>(states.data()),
            static_cast<std::streamsize>(states.size() * sizeof(float)));
}

Tensor<float> read_memory_record(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("memory record truncated in magic");
  if (std::memcmp(magic, "PICM", 4) != 0) throw FormatError("bad memory record magic");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kMemoryRecordVersion) {
    throw FormatError("unsupported memory record version " + std::to_string(version));
  }
  const auto n = get<std::uint32_t>(in, "N");
  const auto d = get<std::uint32_t>(in, "d_model");
  Tensor<float> states({n, d});
  if (!in.read(reinterpret_cast<char*>(states.data()),
               static_cast<std::streamsize>(states.size() * sizeof(float)))) {
    throw FormatError("memory record truncated in payload");
  }
  return states;
}

#define PIC_INSTANTIATE_COMPRESSOR(T)                                               \
  template MemoryEmbeddings<T> compress_embedded<T>(                                \
      const BoundModel<T>&, const Var<T>&, std::size_t, Paradigm, const CompressOptions&); \
  template MemoryEmbeddings<T> compress<T>(const BoundModel<T>&,                    \
                                           std::span<const TokenId>, std::size_t,   \
                                           Paradigm, const CompressOptions&);       \
  template CompressedValues<T> compress_values<T>(const ModelParams<T>&,            \
                                                  std::span<const TokenId>,         \
                                                  std::size_t, Paradigm,            \
                                                  const CompressOptions&);

PIC_INSTANTIATE_COMPRESSOR(float)
PIC_INSTANTIATE_COMPRESSOR(double)

}  // namespace pic

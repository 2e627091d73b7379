// SPDX-License-Identifier: Apache-2.0
#include "pic/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "json_io.hpp"

namespace pic {

static_assert(std::endian::native == std::endian::little,
              "checkpoints are written in host order and assume little-endian");

namespace {

template <typename U>
void put(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U get(std::istream& in, const char* what) {
  U value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(U))) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  return value;
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kFloat32: return sizeof(float);
    case DType::kFloat64: return sizeof(double);
  }
  throw FormatError("unknown dtype code " + std::to_string(static_cast<int>(dtype)));
}

}  // namespace

template <typename T>
Checkpoint make_checkpoint(CompressionModel<T>& model, const TrainingConfig& training,
                           std::size_t step, std::string rng_state) {
  Checkpoint c;
  c.compressor_config = model.compressor.config;
  c.decoder_config = model.decoder.config;
  c.converter = model.converter.enabled;
  c.training = training;
  c.step = step;
  c.rng_state = std::move(rng_state);
  for (const Parameter<T>* p : model.parameters()) {
    CheckpointEntry e;
    e.name = p->name;
    e.dtype = dtype_of<T>();
    e.shape = p->value.shape();
    e.payload.resize(p->value.size() * sizeof(T));
    std::memcpy(e.payload.data(), p->value.data(), e.payload.size());
    c.tensors.push_back(std::move(e));
  }
  return c;
}

template <typename T>
CompressionModel<T> restore_model(const Checkpoint& checkpoint) {
  CompressionModel<T> model = make_compression_model<T>(
      checkpoint.compressor_config, checkpoint.decoder_config, checkpoint.converter, 0);
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const CheckpointEntry& e : checkpoint.tensors) {
    if (!by_name.emplace(e.name, &e).second) {
      throw FormatError("checkpoint holds tensor '" + e.name + "' twice");
    }
  }
  const std::vector<Parameter<T>*> params = model.parameters();
  if (params.size() != by_name.size()) {
    throw FormatError("checkpoint holds " + std::to_string(by_name.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  }
  for (Parameter<T>* p : params) {
    const auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks tensor '" + p->name + "'");
    const CheckpointEntry& e = *it->second;
    if (e.dtype != dtype_of<T>()) {
      throw FormatError("tensor '" + e.name + "' is " + to_string(e.dtype) + ", expected " +
                        to_string(dtype_of<T>()));
    }
    if (e.shape != p->value.shape()) {
      throw FormatError("tensor '" + e.name + "' has shape " + shape_string(e.shape) +
                        ", expected " + shape_string(p->value.shape()));
    }
    std::memcpy(p->value.data(), e.payload.data(), e.payload.size());
  }
  return model;
}

void write_checkpoint(const Checkpoint& checkpoint, std::ostream& out) {
  out.write("PICC", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const CheckpointEntry& e : checkpoint.tensors) {
    if (e.name.size() > 0xFFFF) throw FormatError("tensor name too long: " + e.name);
    if (e.shape.size() > 0xFF) throw FormatError("tensor '" + e.name + "' has too many dims");
    if (e.payload.size() != element_count(e.shape) * dtype_size(e.dtype)) {
      throw FormatError("tensor '" + e.name + "' payload does not match its shape");
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    for (const std::size_t dim : e.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
    out.write(reinterpret_cast<const char*>(e.payload.data()),
              static_cast<std::streamsize>(e.payload.size()));
  }
  const nlohmann::json meta = {{"compressor", checkpoint.compressor_config},
                               {"decoder", checkpoint.decoder_config},
                               {"converter", checkpoint.converter},
                               {"training", checkpoint.training},
                               {"step", checkpoint.step},
                               {"rng_state", checkpoint.rng_state}};
  const std::string blob = meta.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw Error("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("checkpoint truncated in magic");
  if (std::memcmp(magic, "PICC", 4) != 0) throw FormatError("bad checkpoint magic");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in, "entry count");
  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name.resize(get<std::uint16_t>(in, "name length"));
    if (!in.read(e.name.data(), static_cast<std::streamsize>(e.name.size()))) {
      throw FormatError("checkpoint truncated in tensor name");
    }
    const auto code = get<std::uint8_t>(in, "dtype");
    if (code > 1) throw FormatError("unknown dtype code " + std::to_string(code));
    e.dtype = static_cast<DType>(code);
    e.shape.resize(get<std::uint8_t>(in, "ndim"));
    for (std::size_t& dim : e.shape) dim = get<std::uint32_t>(in, "dims");
    e.payload.resize(element_count(e.shape) * dtype_size(e.dtype));
    if (!in.read(reinterpret_cast<char*>(e.payload.data()),
                 static_cast<std::streamsize>(e.payload.size()))) {
      throw FormatError("checkpoint truncated in payload of '" + e.name + "'");
    }
    c.tensors.push_back(std::move(e));
  }
  std::string blob(get<std::uint32_t>(in, "metadata length"), '\0');
  if (!in.read(blob.data(), static_cast<std::streamsize>(blob.size()))) {
    throw FormatError("checkpoint truncated in metadata");
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  c.compressor_config = json_field<ModelConfig>(meta, "compressor");
  c.decoder_config = json_field<ModelConfig>(meta, "decoder");
  c.converter = json_field<bool>(meta, "converter");
  c.training = json_field<TrainingConfig>(meta, "training");
  c.step = json_field<std::size_t>(meta, "step");
  c.rng_state = json_field<std::string>(meta, "rng_state");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_checkpoint(checkpoint, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

#define PIC_INSTANTIATE_CHECKPOINT(T)                                                  \
  template Checkpoint make_checkpoint<T>(CompressionModel<T>&, const TrainingConfig&,  \
                                         std::size_t, std::string);                    \
  template CompressionModel<T> restore_model<T>(const Checkpoint&);

PIC_INSTANTIATE_CHECKPOINT(float)
PIC_INSTANTIATE_CHECKPOINT(double)

}  // namespace pic

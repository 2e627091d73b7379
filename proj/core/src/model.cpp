// SPDX-License-Identifier: Apache-2.0
#include "pic/model.hpp"

#include <cmath>

#include "pic/random.hpp"

namespace pic {

template <typename T>
std::vector<Parameter<T>*> Converter<T>::parameters() {
  if (!enabled) return {};
  return {&weight, &bias};
}

template <typename T>
Converter<T> make_converter(std::size_t input_dim, std::size_t output_dim, bool enabled,
                            std::uint64_t seed) {
  if (!enabled && input_dim != output_dim) {
    throw ShapeError("identity converter needs equal widths, got " +
                     std::to_string(input_dim) + " -> " + std::to_string(output_dim));
  }
  Converter<T> c;
  c.enabled = enabled;
  c.input_dim = input_dim;
  c.output_dim = output_dim;
  if (enabled) {
    Rng rng(seed);
    Tensor<T> w({input_dim, output_dim});
    const double stddev = 1.0 / std::sqrt(static_cast<double>(input_dim));
    for (T& v : w.values()) v = static_cast<T>(rng.normal() * stddev);
    c.weight = Parameter<T>("converter.weight", std::move(w));
    c.bias = Parameter<T>("converter.bias", Tensor<T>({output_dim}));
  }
  return c;
}

template <typename T>
std::vector<Parameter<T>*> CompressionModel<T>::parameters() {
  std::vector<Parameter<T>*> out = compressor.parameters();
  for (Parameter<T>* p : converter.parameters()) out.push_back(p);
  for (Parameter<T>* p : decoder.parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> CompressionModel<T>::decoder_parameters() {
  return decoder.parameters();
}

template <typename T>
CompressionModel<T> make_compression_model(const ModelConfig& compressor_config,
                                           const ModelConfig& decoder_config,
                                           bool converter, std::uint64_t seed) {
  CompressionModel<T> m;
  m.compressor = init_model_params<T>(compressor_config, seed, "compressor.");
  m.decoder = init_model_params<T>(decoder_config, seed + 1, "decoder.");
  const bool needs_map = converter || compressor_config.d_model != decoder_config.d_model;
  m.converter = make_converter<T>(compressor_config.d_model, decoder_config.d_model,
                                  needs_map, seed + 2);
  return m;
}

template <typename T>
BoundSystem<T> bind_system(Tape<T>& tape, CompressionModel<T>& model,
                           bool train_compressor, bool train_decoder) {
  BoundSystem<T> s;
  s.compressor = bind(tape, model.compressor, train_compressor);
  s.converter.enabled = model.converter.enabled;
  s.converter.output_dim = model.converter.output_dim;
  if (model.converter.enabled) {
    s.converter.weight = train_compressor ? tape.parameter(model.converter.weight)
                                          : tape.constant(model.converter.weight.value);
    s.converter.bias = train_compressor ? tape.parameter(model.converter.bias)
                                        : tape.constant(model.converter.bias.value);
  }
  s.decoder = bind(tape, model.decoder, train_decoder);
  return s;
}

template <typename T>
BoundSystem<T> bind_system_frozen(Tape<T>& tape, const CompressionModel<T>& model) {
  BoundSystem<T> s;
  s.compressor = bind_frozen(tape, model.compressor);
  s.converter.enabled = model.converter.enabled;
  s.converter.output_dim = model.converter.output_dim;
  if (model.converter.enabled) {
    s.converter.weight = tape.constant(model.converter.weight.value);
    s.converter.bias = tape.constant(model.converter.bias.value);
  }
  s.decoder = bind_frozen(tape, model.decoder);
  return s;
}

template <typename T>
Var<T> convert(const BoundConverter<T>& converter, const Var<T>& memory) {
  if (!converter.enabled) {
    if (memory.cols() != converter.output_dim) {
      throw ShapeError("identity converter: memory width " +
                       std::to_string(memory.cols()) + " != decoder width " +
                       std::to_string(converter.output_dim));
    }
    return memory;
  }
  if (memory.cols() != converter.weight.rows()) {
    throw ShapeError("converter expects width " + std::to_string(converter.weight.rows()) +
                     ", got " + std::to_string(memory.cols()));
  }
  return add_row_vector(matmul(memory, converter.weight), converter.bias);
}

#define PIC_INSTANTIATE_MODEL(T)                                                    \
  template struct Converter<T>;                                                     \
  template struct CompressionModel<T>;                                              \
  template Converter<T> make_converter<T>(std::size_t, std::size_t, bool,           \
                                          std::uint64_t);                           \
  template CompressionModel<T> make_compression_model<T>(                           \
      const ModelConfig&, const ModelConfig&, bool, std::uint64_t);                 \
  template BoundSystem<T> bind_system<T>(Tape<T>&, CompressionModel<T>&, bool, bool); \
  template BoundSystem<T> bind_system_frozen<T>(Tape<T>&, const CompressionModel<T>&); \
  template Var<T> convert<T>(const BoundConverter<T>&, const Var<T>&);

PIC_INSTANTIATE_MODEL(float)
PIC_INSTANTIATE_MODEL(double)

}  // namespace pic

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pic/autodiff.hpp"
#include "pic/compressor.hpp"
#include "pic/transformer.hpp"

namespace pic {

/// Affine map from compressor space to decoder space. When disabled it is the
/// identity and requires equal widths.
template <typename T>
struct Converter {
  bool enabled = false;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  Parameter<T> weight;  // [input_dim x output_dim]
  Parameter<T> bias;    // [output_dim]

  std::vector<Parameter<T>*> parameters();
};

template <typename T>
Converter<T> make_converter(std::size_t input_dim, std::size_t output_dim, bool enabled,
                            std::uint64_t seed);

/// Compressor, converter and decoder trained together.
template <typename T>
struct CompressionModel {
  ModelParams<T> compressor;
  Converter<T> converter;
  ModelParams<T> decoder;

  /// Compressor, converter (when enabled), then decoder parameters.
  std::vector<Parameter<T>*> parameters();
  std::vector<Parameter<T>*> decoder_parameters();
};

/// The compressor gets `compressor_config`; the decoder reuses its shape with
/// no memory slots. A converter is created when `converter` is true or the
/// widths differ.
template <typename T>
CompressionModel<T> make_compression_model(const ModelConfig& compressor_config,
                                           const ModelConfig& decoder_config,
                                           bool converter, std::uint64_t seed);

template <typename T>
struct BoundConverter {
  bool enabled = false;
  std::size_t output_dim = 0;
  Var<T> weight;
  Var<T> bias;
};

template <typename T>
struct BoundSystem {
  BoundModel<T> compressor;
  BoundConverter<T> converter;
  BoundModel<T> decoder;
};

template <typename T>
BoundSystem<T> bind_system(Tape<T>& tape, CompressionModel<T>& model,
                           bool train_compressor, bool train_decoder);

template <typename T>
BoundSystem<T> bind_system_frozen(Tape<T>& tape, const CompressionModel<T>& model);

/// Maps [N x d_compressor] memory rows into decoder space. Throws ShapeError
/// when the rows do not match the converter's input width.
template <typename T>
Var<T> convert(const BoundConverter<T>& converter, const Var<T>& memory);

}  // namespace pic

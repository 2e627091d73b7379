// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode automatic differentiation over 2-d tensors.
//
// A Tape records every operation in construction order, so reverse iteration
// over node ids is a valid topological order for backpropagation. Vars are
// lightweight handles (tape pointer + node id); a Tape must outlive its Vars
// and is neither copyable nor movable.
//
// All reductions run left to right in index order, so repeated forwards over
// identical inputs are bit-identical.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pic/masking.hpp"
#include "pic/tensor.hpp"

namespace pic {

template <typename T>
class Tape;

/// Trainable tensor with an accumulated gradient. Backward passes add into
/// `grad`; the optimizer consumes and clears it.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Tensor<T>& value() const;
  /// Gradient after backward(); a zero tensor if nothing flowed here.
  Tensor<T> grad() const;
  bool requires_grad() const;

  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  /// Input that never receives gradients.
  Var<T> constant(Tensor<T> value);
  /// Independent input; its gradient is readable through Var::grad().
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  /// Copies the parameter value in; backward() adds into `p.grad`.
  Var<T> parameter(Parameter<T>& p);

  /// Records an op result. `fn` is invoked at most once during backward()
  /// and only when the result requires a gradient.
  Var<T> record(Tensor<T> value, bool requires_grad, BackwardFn fn);

  /// Seeds d(root)/d(root) = 1 and propagates to every ancestor. Parameter
  /// gradients are accumulated into their sinks. Throws ContractError for a
  /// non-scalar root.
  void backward(const Var<T>& root);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }
  const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient buffer of `id`, zero-initialized on first access.
  Tensor<T>& grad_buffer(std::size_t id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    Parameter<T>* sink = nullptr;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations. Every op takes and returns Vars on the same tape.
// ---------------------------------------------------------------------------

/// [m x k] * [k x n]. dA = dC B^T, dB = A^T dC.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// [m x k] * [n x k]^T.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// Adds a length-n vector to every row of an [m x n] matrix.
template <typename T>
Var<T> add_row_vector(const Var<T>& a, const Var<T>& row);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

template <typename T>
Var<T> silu(const Var<T>& a);

/// Sum of all elements, as a scalar.
template <typename T>
Var<T> sum(const Var<T>& a);

/// Row-wise softmax of `factor * scores` under an additive visibility mask.
/// Masked entries come out exactly 0. Throws InvariantError on a fully
/// masked row and ShapeError when the mask does not match the scores.
template <typename T>
Var<T> masked_softmax(const Var<T>& scores, const AttentionMask& mask,
                      T factor = T{1});

/// Row-wise y = gain * x / sqrt(mean(x^2) + eps).
template <typename T>
Var<T> rms_norm(const Var<T>& x, const Var<T>& gain, T eps);

/// Rotary position embedding applied independently to each of `heads`
/// column groups; pairs are (i, i + head_dim/2) within a head.
template <typename T>
Var<T> rope(const Var<T>& x, std::span<const std::size_t> positions,
            std::size_t heads, double base);

/// Gathers rows of `table`.
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::size_t> rows);

template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t count);

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t count);

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts);

/// Mean over rows of -log softmax(logits[r])[targets[r]].
/// Gradient per row is (softmax - onehot) / rows.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> targets);

// ---------------------------------------------------------------------------
// Plain (untaped) kernels shared with inference code and tests.
// ---------------------------------------------------------------------------

/// C += A * B for row-major [m x k], [k x n], [m x n]. Accumulation over k is
/// sequential; zero entries of A are skipped.
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                     std::size_t n);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace pic

// SPDX-License-Identifier: Apache-2.0
#include "pic/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace pic {

std::string to_string(DType dtype) {
  return dtype == DType::kFloat32 ? "float32" : "float64";
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Var / Tape
// ---------------------------------------------------------------------------

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (tape_->has_grad(id_)) return tape_->grad(id_);
  return Tensor<T>(value().shape());
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return record(std::move(value), false, nullptr);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  return record(std::move(value), requires_grad, nullptr);
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  Var<T> v = record(p.value, true, nullptr);
  nodes_[v.id()].sink = &p;
  return v;
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, bool requires_grad, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    node.grad = Tensor<T>(node.value.shape());
    node.has_grad = true;
  }
  return node.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& root) {
  if (root.valid() && &root.tape() != this) {
    throw ContractError("backward root belongs to a different tape");
  }
  if (value(root.id()).size() != 1) {
    throw ContractError("backward root must be scalar, got shape " +
                        shape_string(value(root.id()).shape()));
  }
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id())[0] = T{1};
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.has_grad) continue;
    if (node.backward) node.backward(*this, id);
    if (node.sink != nullptr) {
      T* dst = node.sink->grad.data();
      const T* src = node.grad.data();
      for (std::size_t i = 0; i < node.grad.size(); ++i) dst[i] += src[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

// Column tile width kept in registers across the reduction loop.
template <typename T>
constexpr std::size_t kTile = 128 / sizeof(T);

}  // namespace

// Each output element is accumulated over p in ascending order, one product at
// a time, so results do not depend on the tiling.
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  constexpr std::size_t tile = kTile<T>;
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    std::size_t j0 = 0;
    for (; j0 + tile <= n; j0 += tile) {
      T acc[tile];
      for (std::size_t j = 0; j < tile; ++j) acc[j] = crow[j0 + j];
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        if (av == T{0}) continue;
        const T* brow = b + p * n + j0;
        for (std::size_t j = 0; j < tile; ++j) acc[j] += av * brow[j];
      }
      for (std::size_t j = 0; j < tile; ++j) crow[j0 + j] = acc[j];
    }
    if (j0 < n) {
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        if (av == T{0}) continue;
        const T* brow = b + p * n;
        for (std::size_t j = j0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n], accumulated over i in ascending order.
template <typename T>
void gemm_tn_accumulate(const T* a, const T* b, T* c, std::size_t m,
                        std::size_t k, std::size_t n) {
  constexpr std::size_t tile = kTile<T>;
  for (std::size_t p = 0; p < k; ++p) {
    T* crow = c + p * n;
    std::size_t j0 = 0;
    for (; j0 + tile <= n; j0 += tile) {
      T acc[tile];
      for (std::size_t j = 0; j < tile; ++j) acc[j] = crow[j0 + j];
      for (std::size_t i = 0; i < m; ++i) {
        const T av = a[i * k + p];
        if (av == T{0}) continue;
        const T* brow = b + i * n + j0;
        for (std::size_t j = 0; j < tile; ++j) acc[j] += av * brow[j];
      }
      for (std::size_t j = 0; j < tile; ++j) crow[j0 + j] = acc[j];
    }
    if (j0 < n) {
      for (std::size_t i = 0; i < m; ++i) {
        const T av = a[i * k + p];
        if (av == T{0}) continue;
        const T* brow = b + i * n;
        for (std::size_t j = j0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul dimension mismatch: " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()));
  }
  Tensor<T> c({a.rows(), b.cols()});
  gemm_accumulate(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

namespace {

template <typename T>
void require_2d(const Var<T>& v, const char* op) {
  if (v.value().ndim() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got shape " +
                     shape_string(v.shape()));
  }
}

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) {
    throw ContractError("operands recorded on different tapes");
  }
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + " shape mismatch: " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b);
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul dimension mismatch: " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> out = matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  const bool grad = a.requires_grad() || b.requires_grad();
  return a.tape().record(std::move(out), grad, [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& dc = tape.grad(self);
    if (tape.requires_grad(ia)) {
      const Tensor<T> bt = transpose(tape.value(ib));
      gemm_accumulate(dc.data(), bt.data(), tape.grad_buffer(ia).data(), m, n, k);
    }
    if (tape.requires_grad(ib)) {
      gemm_tn_accumulate(tape.value(ia).data(), dc.data(),
                         tape.grad_buffer(ib).data(), m, k, n);
    }
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b);
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt dimension mismatch: " +
                     shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const Tensor<T> bt = transpose(b.value());
  Tensor<T> out({m, n});
  gemm_accumulate(a.value().data(), bt.data(), out.data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  const bool grad = a.requires_grad() || b.requires_grad();
  return a.tape().record(std::move(out), grad, [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& dc = tape.grad(self);  // [m x n]
    if (tape.requires_grad(ia)) {
      // dA = dC * B
      gemm_accumulate(dc.data(), tape.value(ib).data(),
                      tape.grad_buffer(ia).data(), m, n, k);
    }
    if (tape.requires_grad(ib)) {
      // dB = dC^T * A
      gemm_tn_accumulate(dc.data(), tape.value(ia).data(),
                         tape.grad_buffer(ib).data(), m, n, k);
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  add_into(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  const bool grad = a.requires_grad() || b.requires_grad();
  return a.tape().record(std::move(out), grad, [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad(self);
    if (tape.requires_grad(ia)) add_into(tape.grad_buffer(ia), g);
    if (tape.requires_grad(ib)) add_into(tape.grad_buffer(ib), g);
  });
}

template <typename T>
Var<T> add_row_vector(const Var<T>& a, const Var<T>& row) {
  require_same_tape(a, row);
  require_2d(a, "add_row_vector");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.value().size() != n) {
    throw ShapeError("add_row_vector: row of shape " +
                     shape_string(row.shape()) + " vs matrix " +
                     shape_string(a.shape()));
  }
  Tensor<T> out = a.value();
  const T* r = row.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) += r[j];
  }
  const std::size_t ia = a.id(), ir = row.id();
  const bool grad = a.requires_grad() || row.requires_grad();
  return a.tape().record(std::move(out), grad, [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad(self);
    if (tape.requires_grad(ia)) add_into(tape.grad_buffer(ia), g);
    if (tape.requires_grad(ir)) {
      T* dr = tape.grad_buffer(ir).data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) dr[j] += g(i, j);
      }
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  const bool grad = a.requires_grad() || b.requires_grad();
  return a.tape().record(std::move(out), grad, [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad(self);
    if (tape.requires_grad(ia)) {
      Tensor<T>& da = tape.grad_buffer(ia);
      const Tensor<T>& bv = tape.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(ib)) {
      Tensor<T>& db = tape.grad_buffer(ib);
      const Tensor<T>& av = tape.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (T& v : out.values()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad(self);
    Tensor<T>& da = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  const Tensor<T>& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = T{1} / (T{1} + std::exp(-x[i]));
    out[i] = x[i] * s;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad(self);
    const Tensor<T>& xv = tape.value(ia);
    Tensor<T>& da = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T{1} / (T{1} + std::exp(-xv[i]));
      da[i] += g[i] * (s + xv[i] * s * (T{1} - s));
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (T v : a.value().values()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor<T>::scalar(total), a.requires_grad(),
                         [=](Tape<T>& tape, std::size_t self) {
    const T g = tape.grad(self)[0];
    for (T& v : tape.grad_buffer(ia).values()) v += g;
  });
}

template <typename T>
Var<T> masked_softmax(const Var<T>& scores, const AttentionMask& mask,
                      T factor) {
  require_2d(scores, "masked_softmax");
  const std::size_t n = scores.rows(), m = scores.cols();
  if (mask.size() != n || n != m) {
    throw ShapeError("masked_softmax: scores " + shape_string(scores.shape()) +
                     " vs mask of size " + std::to_string(mask.size()));
  }
  const Tensor<T>& s = scores.value();
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    T row_max = std::numeric_limits<T>::lowest();
    bool any = false;
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask.is_visible(i, j)) continue;
      const T v = factor * s(i, j);
      if (!any || v > row_max) row_max = v;
      any = true;
    }
    if (!any) {
      throw InvariantError("masked_softmax: row " + std::to_string(i) +
                           " has no visible key");
    }
    T total{0};
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask.is_visible(i, j)) continue;
      const T e = std::exp(factor * s(i, j) - row_max);
      out(i, j) = e;
      total += e;
    }
    const T inv = T{1} / total;
    for (std::size_t j = 0; j < m; ++j) out(i, j) *= inv;
  }
  const std::size_t is = scores.id();
  return scores.tape().record(std::move(out), scores.requires_grad(),
                              [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad(self);
    const Tensor<T>& p = tape.value(self);
    Tensor<T>& ds = tape.grad_buffer(is);
    for (std::size_t i = 0; i < n; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < m; ++j) dot += p(i, j) * g(i, j);
      for (std::size_t j = 0; j < m; ++j) {
        ds(i, j) += factor * p(i, j) * (g(i, j) - dot);
      }
    }
  });
}

template <typename T>
Var<T> rms_norm(const Var<T>& x, const Var<T>& gain, T eps) {
  require_same_tape(x, gain);
  const std::size_t d = x.cols();
  const std::size_t n = x.value().ndim() == 1 ? 1 : x.rows();
  if (gain.value().size() != d) {
    throw ShapeError("rms_norm gain " + shape_string(gain.shape()) +
                     " vs input " + shape_string(x.shape()));
  }
  const Tensor<T>& xv = x.value();
  const T* gv = gain.value().data();
  Tensor<T> out(xv.shape());
  std::vector<T> inv_rms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = xv.data() + i * d;
    T ss{0};
    for (std::size_t j = 0; j < d; ++j) ss += row[j] * row[j];
    const T r = T{1} / std::sqrt(ss / static_cast<T>(d) + eps);
    inv_rms[i] = r;
    T* orow = out.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) orow[j] = gv[j] * row[j] * r;
  }
  const std::size_t ix = x.id(), ig = gain.id();
  const bool grad = x.requires_grad() || gain.requires_grad();
  return x.tape().record(std::move(out), grad,
                         [=, inv_rms = std::move(inv_rms)](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad(self);
    const Tensor<T>& xin = tape.value(ix);
    const T* gn = tape.value(ig).data();
    const bool dx_needed = tape.requires_grad(ix);
    const bool dg_needed = tape.requires_grad(ig);
    T* dx = dx_needed ? tape.grad_buffer(ix).data() : nullptr;
    T* dg = dg_needed ? tape.grad_buffer(ig).data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = xin.data() + i * d;
      const T* grow = g.data() + i * d;
      const T r = inv_rms[i];
      if (dg_needed) {
        for (std::size_t j = 0; j < d; ++j) dg[j] += grow[j] * row[j] * r;
      }
      if (dx_needed) {
        T proj{0};
        for (std::size_t j = 0; j < d; ++j) proj += gn[j] * grow[j] * row[j];
        const T coeff = r * r * r * proj / static_cast<T>(d);
        T* dxrow = dx + i * d;
        for (std::size_t j = 0; j < d; ++j) {
          dxrow[j] += r * gn[j] * grow[j] - coeff * row[j];
        }
      }
    }
  });
}

namespace {

// cos/sin table [positions x half_dim]
template <typename T>
void rope_tables(std::span<const std::size_t> positions, std::size_t half,
                 double base, std::vector<T>& cosv, std::vector<T>& sinv) {
  cosv.resize(positions.size() * half);
  sinv.resize(positions.size() * half);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double inv_freq =
          std::pow(base, -static_cast<double>(2 * i) / static_cast<double>(2 * half));
      const double angle = static_cast<double>(positions[r]) * inv_freq;
      cosv[r * half + i] = static_cast<T>(std::cos(angle));
      sinv[r * half + i] = static_cast<T>(std::sin(angle));
    }
  }
}

}  // namespace

template <typename T>
Var<T> rope(const Var<T>& x, std::span<const std::size_t> positions,
            std::size_t heads, double base) {
  require_2d(x, "rope");
  const std::size_t n = x.rows(), d = x.cols();
  if (positions.size() != n) {
    throw ShapeError("rope: " + std::to_string(positions.size()) +
                     " positions for " + std::to_string(n) + " rows");
  }
  if (heads == 0 || d % heads != 0 || (d / heads) % 2 != 0) {
    throw ShapeError("rope: width " + std::to_string(d) +
                     " not splittable into " + std::to_string(heads) +
                     " even-sized heads");
  }
  const std::size_t hd = d / heads, half = hd / 2;
  std::vector<T> cosv, sinv;
  rope_tables<T>(positions, half, base, cosv, sinv);
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = r * d + h * hd;
      for (std::size_t i = 0; i < half; ++i) {
        const T c = cosv[r * half + i], s = sinv[r * half + i];
        const T a = xv[off + i], b = xv[off + i + half];
        out[off + i] = a * c - b * s;
        out[off + i + half] = a * s + b * c;
      }
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), x.requires_grad(),
      [=, cosv = std::move(cosv), sinv = std::move(sinv)](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        Tensor<T>& dx = tape.grad_buffer(ix);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = r * d + h * hd;
            for (std::size_t i = 0; i < half; ++i) {
              const T c = cosv[r * half + i], s = sinv[r * half + i];
              const T ga = g[off + i], gb = g[off + i + half];
              dx[off + i] += ga * c + gb * s;
              dx[off + i + half] += -ga * s + gb * c;
            }
          }
        }
      });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::size_t> rows) {
  require_2d(table, "embedding");
  const std::size_t vocab = table.rows(), d = table.cols();
  Tensor<T> out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= vocab) {
      throw IndexError("embedding row " + std::to_string(rows[r]) +
                       " out of range for table with " +
                       std::to_string(vocab) + " rows");
    }
    const auto src = table.value().row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const std::size_t it = table.id();
  std::vector<std::size_t> ids(rows.begin(), rows.end());
  return table.tape().record(std::move(out), table.requires_grad(),
                             [=, ids = std::move(ids)](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad(self);
    Tensor<T>& dt = tape.grad_buffer(it);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      T* dst = dt.data() + ids[r] * d;
      const T* src = g.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t count) {
  require_2d(a, "slice_rows");
  if (begin + count > a.rows()) {
    throw IndexError("slice_rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") of " +
                     shape_string(a.shape()));
  }
  const std::size_t d = a.cols();
  Tensor<T> out({count, d});
  std::copy_n(a.value().data() + begin * d, count * d, out.data());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad(self);
    T* dst = tape.grad_buffer(ia).data() + begin * d;
    for (std::size_t i = 0; i < count * d; ++i) dst[i] += g[i];
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t count) {
  require_2d(a, "slice_cols");
  if (begin + count > a.cols()) {
    throw IndexError("slice_cols [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") of " +
                     shape_string(a.shape()));
  }
  const std::size_t n = a.rows(), d = a.cols();
  Tensor<T> out({n, count});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().data() + i * d + begin, count, out.data() + i * count);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad(self);
    T* dst = tape.grad_buffer(ia).data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < count; ++j) dst[i * d + begin + j] += g[i * count + j];
    }
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat_rows of zero parts");
  const std::size_t d = parts[0].cols();
  std::size_t total = 0;
  bool grad = false;
  for (const Var<T>& p : parts) {
    require_same_tape(parts[0], p);
    require_2d(p, "concat_rows");
    if (p.cols() != d) {
      throw ShapeError("concat_rows width mismatch: " +
                       shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    total += p.rows();
    grad = grad || p.requires_grad();
  }
  Tensor<T> out({total, d});
  std::vector<std::size_t> ids, offsets;
  std::size_t row = 0;
  for (const Var<T>& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + row * d);
    ids.push_back(p.id());
    offsets.push_back(row);
    row += p.rows();
  }
  return parts[0].tape().record(
      std::move(out), grad,
      [=, ids = std::move(ids), offsets = std::move(offsets)](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!tape.requires_grad(ids[k])) continue;
          Tensor<T>& dst = tape.grad_buffer(ids[k]);
          const T* src = g.data() + offsets[k] * d;
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
      });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat_cols of zero parts");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  bool grad = false;
  for (const Var<T>& p : parts) {
    require_same_tape(parts[0], p);
    require_2d(p, "concat_cols");
    if (p.rows() != n) {
      throw ShapeError("concat_cols height mismatch: " +
                       shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    total += p.cols();
    grad = grad || p.requires_grad();
  }
  Tensor<T> out({n, total});
  std::vector<std::size_t> ids, offsets, widths;
  std::size_t col = 0;
  for (const Var<T>& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(p.value().data() + i * w, w, out.data() + i * total + col);
    }
    ids.push_back(p.id());
    offsets.push_back(col);
    widths.push_back(w);
    col += w;
  }
  return parts[0].tape().record(
      std::move(out), grad,
      [=, ids = std::move(ids), offsets = std::move(offsets),
       widths = std::move(widths)](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!tape.requires_grad(ids[k])) continue;
          T* dst = tape.grad_buffer(ids[k]).data();
          const std::size_t w = widths[k];
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              dst[i * w + j] += g[i * total + offsets[k] + j];
            }
          }
        }
      });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> targets) {
  require_2d(logits, "cross_entropy");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " rows");
  }
  if (n == 0) throw ContractError("cross_entropy over zero rows");
  const Tensor<T>& lv = logits.value();
  Tensor<T> probs({n, v});
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= v) {
      throw IndexError("cross_entropy target " + std::to_string(targets[i]) +
                       " out of range for " + std::to_string(v) + " classes");
    }
    const T* row = lv.data() + i * v;
    T mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = row[j] > mx ? row[j] : mx;
    T z{0};
    for (std::size_t j = 0; j < v; ++j) {
      const T e = std::exp(row[j] - mx);
      probs(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < v; ++j) probs(i, j) /= z;
    total += (std::log(z) + mx) - row[targets[i]];
  }
  const T mean = total / static_cast<T>(n);
  const std::size_t il = logits.id();
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return logits.tape().record(
      Tensor<T>::scalar(mean), logits.requires_grad(),
      [=, probs = std::move(probs), tgt = std::move(tgt)](Tape<T>& tape, std::size_t self) {
        const T g = tape.grad(self)[0] / static_cast<T>(n);
        Tensor<T>& dl = tape.grad_buffer(il);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < v; ++j) {
            const T onehot = j == tgt[i] ? T{1} : T{0};
            dl(i, j) += g * (probs(i, j) - onehot);
          }
        }
      });
}

#define PIC_INSTANTIATE_AUTODIFF(T)                                              \
  template bool bit_equal<T>(const Tensor<T>&, const Tensor<T>&);                \
  template bool all_finite<T>(const Tensor<T>&);                                 \
  template class Var<T>;                                                         \
  template class Tape<T>;                                                        \
  template void gemm_accumulate<T>(const T*, const T*, T*, std::size_t,          \
                                   std::size_t, std::size_t);                    \
  template Tensor<T> transpose<T>(const Tensor<T>&);                             \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                       \
  template Var<T> matmul_nt<T>(const Var<T>&, const Var<T>&);                    \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> add_row_vector<T>(const Var<T>&, const Var<T>&);               \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> scale<T>(const Var<T>&, T);                                    \
  template Var<T> silu<T>(const Var<T>&);                                        \
  template Var<T> sum<T>(const Var<T>&);                                         \
  template Var<T> masked_softmax<T>(const Var<T>&, const AttentionMask&, T);     \
  template Var<T> rms_norm<T>(const Var<T>&, const Var<T>&, T);                  \
  template Var<T> rope<T>(const Var<T>&, std::span<const std::size_t>,           \
                          std::size_t, double);                                  \
  template Var<T> embedding<T>(const Var<T>&, std::span<const std::size_t>);     \
  template Var<T> slice_rows<T>(const Var<T>&, std::size_t, std::size_t);        \
  template Var<T> slice_cols<T>(const Var<T>&, std::size_t, std::size_t);        \
  template Var<T> concat_rows<T>(std::span<const Var<T>>);                       \
  template Var<T> concat_cols<T>(std::span<const Var<T>>);                       \
  template Var<T> cross_entropy<T>(const Var<T>&, std::span<const std::size_t>);

PIC_INSTANTIATE_AUTODIFF(float)
PIC_INSTANTIATE_AUTODIFF(double)

}  // namespace pic

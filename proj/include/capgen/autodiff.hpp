#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "capgen/tensor.hpp"

namespace capgen {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<Scalar>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of operations. Node ids are assigned in creation order, so every
/// node's parents have smaller ids and a reverse sweep is a valid topological order.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value) {
    require_finite(value, "constant");
    Node node;
    node.owned = std::move(value);
    return push(std::move(node));
  }

  /// Leaf bound to an external tensor. Gradients are accumulated into `param` by backward()
  /// when param.requires_grad() is set. The tensor must outlive the tape.
  Var<Scalar> parameter(Tensor<Scalar>& param) {
    require_finite(param, "parameter");
    Node node;
    node.external = &param;
    if (param.requires_grad()) {
      node.sink = &param;
      node.requires_grad = true;
    }
    return push(std::move(node));
  }

  /// Read-only leaf referring to an external tensor that outlives the tape.
  Var<Scalar> reference(const Tensor<Scalar>& t) {
    require_finite(t, "reference");
    Node node;
    node.external = &t;
    return push(std::move(node));
  }

  Var<Scalar> record(Tensor<Scalar> value, std::vector<std::size_t> parents, BackwardFn fn,
                     const char* op) {
    require_finite(value, op);
    Node node;
    node.owned = std::move(value);
    bool any = false;
    for (std::size_t p : parents) any = any || nodes_.at(p).requires_grad;
    if (any) {
      node.parents = std::move(parents);
      node.backward = std::move(fn);
      node.requires_grad = true;
    }
    return push(std::move(node));
  }

  const Tensor<Scalar>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, allocated on first use.
  std::vector<Scalar>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad.assign(value(id).size(), Scalar(0));
    return n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(const Var<Scalar>& loss) {
    if (loss.tape() != this || loss.id() >= nodes_.size()) {
      throw Error(ErrorCode::kDisconnectedGraph, "loss was not recorded on this tape");
    }
    if (value(loss.id()).size() != 1) {
      throw Error(ErrorCode::kShapeMismatch, "backward() needs a scalar loss, got " +
                                                 shape_string(value(loss.id()).shape()));
    }
    if (!nodes_[loss.id()].requires_grad) {
      throw Error(ErrorCode::kDisconnectedGraph, "loss does not depend on any trainable parameter");
    }
    for (Node& n : nodes_) n.grad.clear();
    grad(loss.id())[0] = Scalar(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.requires_grad) continue;
      if (n.backward) n.backward(*this, i);
      if (n.sink) {
        auto& dst = n.sink->mutable_grad();
        for (std::size_t k = 0; k < dst.size(); ++k) {
          dst[k] += n.grad[k];
          if (!std::isfinite(dst[k])) throw Error(ErrorCode::kNonFinite, "gradient overflow");
        }
      }
    }
  }

 private:
  struct Node {
    Tensor<Scalar> owned;
    const Tensor<Scalar>* external = nullptr;
    Tensor<Scalar>* sink = nullptr;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    std::vector<Scalar> grad;
    bool requires_grad = false;
  };

  static void require_finite(const Tensor<Scalar>& t, const char* op) {
    if (!t.all_finite()) throw Error(ErrorCode::kNonFinite, std::string("non-finite value from ") + op);
  }

  Var<Scalar> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
Tape<Scalar>& same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw Error(ErrorCode::kDisconnectedGraph, "operands live on different tapes");
  }
  return *a.tape();
}

template <typename Scalar>
Eigen::Map<RowMatrix<Scalar>> as_matrix(std::vector<Scalar>& buf, std::size_t rows, std::size_t cols) {
  return Eigen::Map<RowMatrix<Scalar>>(buf.data(), static_cast<Eigen::Index>(rows),
                                       static_cast<Eigen::Index>(cols));
}

inline void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw Error(ErrorCode::kShapeMismatch, std::string(op) + " expects rank-2 input, got " + shape_string(s));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  Tape<Scalar>& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_rank2(av.shape(), "matmul");
  detail::require_rank2(bv.shape(), "matmul");
  if (av.dim(1) != bv.dim(0)) {
    throw Error(ErrorCode::kShapeMismatch,
                "matmul inner dims " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<Scalar> out({m, n});
  out.matrix().noalias() = av.matrix() * bv.matrix();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), {ia, ib},
      [ia, ib, m, k, n](Tape<Scalar>& t, std::size_t self) {
        auto g = detail::as_matrix(t.grad(self), m, n);
        if (t.requires_grad(ia)) {
          detail::as_matrix(t.grad(ia), m, k).noalias() += g * t.value(ib).matrix().transpose();
        }
        if (t.requires_grad(ib)) {
          detail::as_matrix(t.grad(ib), k, n).noalias() += t.value(ia).matrix().transpose() * g;
        }
      },
      "matmul");
}

template <typename Scalar>
Var<Scalar> transpose_last_two(const Var<Scalar>& x) {
  const auto& xv = x.value();
  detail::require_rank2(xv.shape(), "transpose_last_two");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor<Scalar> out({n, m});
  out.matrix() = xv.matrix().transpose();
  const std::size_t ix = x.id();
  return x.tape()->record(
      std::move(out), {ix},
      [ix, m, n](Tape<Scalar>& t, std::size_t self) {
        detail::as_matrix(t.grad(ix), m, n) += detail::as_matrix(t.grad(self), n, m).transpose();
      },
      "transpose_last_two");
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  Tape<Scalar>& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "add " + shape_string(av.shape()) + " + " + shape_string(bv.shape()));
  }
  Tensor<Scalar> out(av.shape(), av.storage());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), {ia, ib},
      [ia, ib](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        for (std::size_t p : {ia, ib}) {
          if (!t.requires_grad(p)) continue;
          auto& gp = t.grad(p);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
        }
      },
      "add");
}

/// x[m,n] + bias broadcast over rows; bias holds n elements.
template <typename Scalar>
Var<Scalar> add_bias(const Var<Scalar>& x, const Var<Scalar>& bias) {
  Tape<Scalar>& tape = detail::same_tape(x, bias);
  const auto& xv = x.value();
  const auto& bv = bias.value();
  const std::size_t n = xv.cols(), m = xv.rows();
  if (bv.size() != n) {
    throw Error(ErrorCode::kShapeMismatch,
                "add_bias " + shape_string(xv.shape()) + " with bias " + shape_string(bv.shape()));
  }
  Tensor<Scalar> out(xv.shape(), std::vector<Scalar>(xv.data().begin(), xv.data().end()));
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  const std::size_t ix = x.id(), ib = bias.id();
  return tape.record(
      std::move(out), {ix, ib},
      [ix, ib, m, n](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ix)) {
          auto& gx = t.grad(ix);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (t.requires_grad(ib)) {
          auto& gb = t.grad(ib);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
        }
      },
      "add_bias");
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  Tape<Scalar>& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "mul " + shape_string(av.shape()) + " * " + shape_string(bv.shape()));
  }
  Tensor<Scalar> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), {ia, ib},
      [ia, ib](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) {
          auto& ga = t.grad(ia);
          const auto& bv = t.value(ib);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
          auto& gb = t.grad(ib);
          const auto& av = t.value(ia);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
      },
      "mul");
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar c) {
  Tensor<Scalar> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  const std::size_t ix = x.id();
  return x.tape()->record(
      std::move(out), {ix},
      [ix, c](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
      },
      "scale");
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > Scalar(0) ? xv[i] : Scalar(0);
  const std::size_t ix = x.id();
  return x.tape()->record(
      std::move(out), {ix},
      [ix](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(ix);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv[i] > Scalar(0)) gx[i] += g[i];
      },
      "relu");
}

// ---------------------------------------------------------------------------
// Reductions and normalisation

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  const auto& xv = x.value();
  Scalar s(0);
  for (Scalar v : xv.data()) s += v;
  const std::size_t ix = x.id();
  return x.tape()->record(
      Tensor<Scalar>::scalar(s), {ix},
      [ix](Tape<Scalar>& t, std::size_t self) {
        const Scalar g = t.grad(self)[0];
        for (auto& v : t.grad(ix)) v += g;
      },
      "sum");
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().size()));
}

/// Row-wise softmax over the last axis, stabilised by subtracting each row's maximum.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x) {
  const auto& xv = x.value();
  if (!xv.all_finite()) throw Error(ErrorCode::kNonFinite, "softmax_rows input");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor<Scalar> out(xv.shape());
  for (std::size_t r = 0; r < m; ++r) {
    Scalar mx = xv[r * n];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, xv[r * n + c]);
    Scalar z(0);
    for (std::size_t c = 0; c < n; ++c) {
      out[r * n + c] = std::exp(xv[r * n + c] - mx);
      z += out[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  const std::size_t ix = x.id();
  return x.tape()->record(
      std::move(out), {ix},
      [ix, m, n](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& y = t.value(self);
        auto& gx = t.grad(ix);
        for (std::size_t r = 0; r < m; ++r) {
          Scalar dot(0);
          for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
          for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
        }
      },
      "softmax_rows");
}

/// Normalises each row of x to zero mean and unit variance, then applies gain and bias
/// (each holding cols(x) elements).
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias,
                       Scalar eps = Scalar(1e-5)) {
  Tape<Scalar>& tape = detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "layer_norm gain/bias must have " + std::to_string(n) + " elements");
  }
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  Tensor<Scalar> out(xv.shape());
  std::vector<Scalar> xhat(xv.size());
  std::vector<Scalar> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    Scalar mu(0);
    for (std::size_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= static_cast<Scalar>(n);
    Scalar var(0);
    for (std::size_t c = 0; c < n; ++c) {
      const Scalar d = xv[r * n + c] - mu;
      var += d * d;
    }
    var /= static_cast<Scalar>(n);
    inv_std[r] = Scalar(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (xv[r * n + c] - mu) * inv_std[r];
      out[r * n + c] = xhat[r * n + c] * gv[c] + bv[c];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape.record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<Scalar>& t,
                                                                               std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ig)) {
          auto& gg = t.grad(ig);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % n] += g[i] * xhat[i];
        }
        if (t.requires_grad(ib)) {
          auto& gb = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        }
        if (t.requires_grad(ix)) {
          const auto& gv = t.value(ig);
          auto& gx = t.grad(ix);
          const Scalar nn = static_cast<Scalar>(n);
          for (std::size_t r = 0; r < m; ++r) {
            Scalar s1(0), s2(0);
            for (std::size_t c = 0; c < n; ++c) {
              const Scalar dxh = g[r * n + c] * gv[c];
              s1 += dxh;
              s2 += dxh * xhat[r * n + c];
            }
            for (std::size_t c = 0; c < n; ++c) {
              const Scalar dxh = g[r * n + c] * gv[c];
              gx[r * n + c] += inv_std[r] / nn * (nn * dxh - s1 - xhat[r * n + c] * s2);
            }
          }
        }
      },
      "layer_norm");
}

// ---------------------------------------------------------------------------
// Structural

template <typename Scalar>
Var<Scalar> concat_last_axis(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "concat_last_axis of nothing");
  Tape<Scalar>* tape = parts.front().tape();
  const std::size_t m = parts.front().value().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    const auto& v = p.value();
    if (v.rank() != 2 || v.rows() != m) {
      throw Error(ErrorCode::kShapeMismatch, "concat_last_axis row mismatch at " + shape_string(v.shape()));
    }
    widths.push_back(v.cols());
    ids.push_back(p.id());
    total += v.cols();
  }
  Tensor<Scalar> out({m, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + offset + c] = v[r * widths[k] + c];
    offset += widths[k];
  }
  return tape->record(
      std::move(out), ids,
      [ids, widths, m, total](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            auto& gp = t.grad(ids[k]);
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += g[r * total + offset + c];
          }
          offset += widths[k];
        }
      },
      "concat_last_axis");
}

template <typename Scalar>
Var<Scalar> concat_last_axis(const std::vector<Var<Scalar>>& parts) {
  return concat_last_axis(std::span<const Var<Scalar>>(parts));
}

/// Stacks rank-2 inputs with equal column counts along the first axis.
template <typename Scalar>
Var<Scalar> stack_rows(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "stack_rows of nothing");
  Tape<Scalar>* tape = parts.front().tape();
  const std::size_t n = parts.front().value().cols();
  std::vector<std::size_t> ids, sizes;
  std::vector<Scalar> data;
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    const auto& v = p.value();
    if (v.cols() != n) throw Error(ErrorCode::kShapeMismatch, "stack_rows column mismatch");
    ids.push_back(p.id());
    sizes.push_back(v.size());
    data.insert(data.end(), v.data().begin(), v.data().end());
  }
  const std::size_t m = data.size() / n;
  return tape->record(
      Tensor<Scalar>({m, n}, std::move(data)), ids,
      [ids, sizes](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            auto& gp = t.grad(ids[k]);
            for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += g[offset + i];
          }
          offset += sizes[k];
        }
      },
      "stack_rows");
}

template <typename Scalar>
Var<Scalar> stack_rows(const std::vector<Var<Scalar>>& parts) {
  return stack_rows(std::span<const Var<Scalar>>(parts));
}

/// Rows [begin, begin+count) of a rank-2 tensor.
template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  detail::require_rank2(xv.shape(), "slice_rows");
  const std::size_t n = xv.cols();
  if (count == 0 || begin + count > xv.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "slice_rows [" + std::to_string(begin) + ", +" +
                                               std::to_string(count) + ") of " + shape_string(xv.shape()));
  }
  std::vector<Scalar> data(xv.data().begin() + begin * n, xv.data().begin() + (begin + count) * n);
  const std::size_t ix = x.id();
  return x.tape()->record(
      Tensor<Scalar>({count, n}, std::move(data)), {ix},
      [ix, begin, n](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
      },
      "slice_rows");
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  if (element_count(shape) != x.value().size()) {
    throw Error(ErrorCode::kShapeMismatch, "reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  const std::size_t ix = x.id();
  return x.tape()->record(
      x.value().reshaped(std::move(shape)), {ix},
      [ix](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

/// Gathers rows of table[V, d] for each id; result is [ids.size(), d].
template <typename Scalar>
Var<Scalar> embedding_lookup(const Var<Scalar>& table, std::span<const std::int32_t> ids) {
  const auto& tv = table.value();
  detail::require_rank2(tv.shape(), "embedding_lookup");
  if (ids.empty()) throw Error(ErrorCode::kShapeMismatch, "embedding_lookup with no ids");
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  Tensor<Scalar> out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(rows[i]) + " outside table");
    }
    std::copy_n(tv.data().begin() + rows[i] * d, d, out.data().begin() + i * d);
  }
  const std::size_t it = table.id();
  return table.tape()->record(
      std::move(out), {it},
      [it, d, rows = std::move(rows)](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gt = t.grad(it);
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t c = 0; c < d; ++c) gt[rows[i] * d + c] += g[i * d + c];
      },
      "embedding_lookup");
}

// ---------------------------------------------------------------------------
// Convolutional stages, [C, H, W] layout

/// 3x3 convolution, stride 1, zero padding 1. weight is [out, in, 3, 3], bias is [out].
template <typename Scalar>
Var<Scalar> conv2d_3x3(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  Tape<Scalar>& tape = detail::same_tape(x, weight);
  detail::same_tape(x, bias);
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const auto& bv = bias.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != 3 || wv.dim(3) != 3 ||
      bv.size() != wv.dim(0)) {
    throw Error(ErrorCode::kShapeMismatch, "conv2d_3x3 input " + shape_string(xv.shape()) + " weight " +
                                               shape_string(wv.shape()));
  }
  const std::size_t cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2), cout = wv.dim(0);
  const auto in_at = [&](std::size_t c, std::ptrdiff_t y, std::ptrdiff_t xx) { return (c * h + y) * w + xx; };
  Tensor<Scalar> out({cout, h, w});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        Scalar acc = bv[o];
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + ky - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx) + kx - 1;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += wv[((o * cin + c) * 3 + ky) * 3 + kx] * xv[in_at(c, sy, sx)];
            }
          }
        }
        out[(o * h + y) * w + xx] = acc;
      }
    }
  }
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return tape.record(
      std::move(out), {ix, iw, ib},
      [ix, iw, ib, cin, cout, h, w](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(ix);
        const auto& wv = t.value(iw);
        const bool gx_on = t.requires_grad(ix), gw_on = t.requires_grad(iw);
        std::vector<Scalar>* gx = gx_on ? &t.grad(ix) : nullptr;
        std::vector<Scalar>* gw = gw_on ? &t.grad(iw) : nullptr;
        if (t.requires_grad(ib)) {
          auto& gb = t.grad(ib);
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < h * w; ++i) gb[o] += g[o * h * w + i];
        }
        for (std::size_t o = 0; o < cout; ++o) {
          for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
              const Scalar go = g[(o * h + y) * w + xx];
              if (go == Scalar(0)) continue;
              for (std::size_t c = 0; c < cin; ++c) {
                for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
                  const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + ky - 1;
                  if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
                    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx) + kx - 1;
                    if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                    const std::size_t wi = ((o * cin + c) * 3 + ky) * 3 + kx;
                    const std::size_t xi = (c * h + sy) * w + sx;
                    if (gw) (*gw)[wi] += go * xv[xi];
                    if (gx) (*gx)[xi] += go * wv[wi];
                  }
                }
              }
            }
          }
        }
      },
      "conv2d_3x3");
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <typename Scalar>
Var<Scalar> maxpool2x2(const Var<Scalar>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || xv.dim(1) < 2 || xv.dim(2) < 2) {
    throw Error(ErrorCode::kShapeMismatch, "maxpool2x2 input " + shape_string(xv.shape()));
  }
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2), oh = h / 2, ow = w / 2;
  Tensor<Scalar> out({c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = (ch * h + 2 * y + dy) * w + 2 * xx + dx;
            if (xv[i] > xv[best]) best = i;
          }
        const std::size_t o = (ch * oh + y) * ow + xx;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  const std::size_t ix = x.id();
  return x.tape()->record(
      std::move(out), {ix},
      [ix, argmax = std::move(argmax)](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
      },
      "maxpool2x2");
}

/// [C, H, W] -> [1, C], mean over the spatial axes.
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw Error(ErrorCode::kShapeMismatch, "global_avg_pool input " + shape_string(xv.shape()));
  const std::size_t c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
  Tensor<Scalar> out({1, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    Scalar s(0);
    for (std::size_t i = 0; i < hw; ++i) s += xv[ch * hw + i];
    out[ch] = s / static_cast<Scalar>(hw);
  }
  const std::size_t ix = x.id();
  return x.tape()->record(
      std::move(out), {ix},
      [ix, c, hw](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        const Scalar inv = Scalar(1) / static_cast<Scalar>(hw);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < hw; ++i) gx[ch * hw + i] += g[ch] * inv;
      },
      "global_avg_pool");
}

// ---------------------------------------------------------------------------
// Loss

/// Per-row negative log-likelihood of `targets` under softmax(logits), with rows whose target
/// equals `ignore_id` excluded. `loss` is the mean over counted rows; `per_position` holds the
/// unreduced values (0 at ignored rows).
template <typename Scalar>
struct MaskedNll {
  Var<Scalar> loss;
  std::vector<Scalar> per_position;
  std::size_t counted = 0;
};

template <typename Scalar>
MaskedNll<Scalar> masked_nll_rows(const Var<Scalar>& logits, std::span<const std::int32_t> targets,
                                  std::int32_t ignore_id) {
  const auto& lv = logits.value();
  detail::require_rank2(lv.shape(), "masked_nll_rows");
  const std::size_t m = lv.dim(0), n = lv.dim(1);
  if (targets.size() != m) {
    throw Error(ErrorCode::kLengthMismatch, "logits have " + std::to_string(m) + " rows, targets " +
                                                std::to_string(targets.size()));
  }
  MaskedNll<Scalar> result;
  result.per_position.assign(m, Scalar(0));
  std::vector<Scalar> probs(lv.size());
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  Scalar total(0);
  for (std::size_t r = 0; r < m; ++r) {
    Scalar mx = lv[r * n];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, lv[r * n + c]);
    Scalar z(0);
    for (std::size_t c = 0; c < n; ++c) {
      probs[r * n + c] = std::exp(lv[r * n + c] - mx);
      z += probs[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) probs[r * n + c] /= z;
    if (tgt[r] == ignore_id) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= n) {
      throw Error(ErrorCode::kInvalidArgument, "target id " + std::to_string(tgt[r]) + " outside logits");
    }
    const Scalar l = -(lv[r * n + tgt[r]] - mx - std::log(z));
    result.per_position[r] = l;
    total += l;
    ++result.counted;
  }
  const std::size_t count = result.counted;
  const Scalar mean_loss = count ? total / static_cast<Scalar>(count) : Scalar(0);
  const std::size_t il = logits.id();
  result.loss = logits.tape()->record(
      Tensor<Scalar>::scalar(mean_loss), {il},
      [il, m, n, count, ignore_id, probs = std::move(probs), tgt = std::move(tgt)](Tape<Scalar>& t,
                                                                                   std::size_t self) {
        if (count == 0) return;
        const Scalar g = t.grad(self)[0] / static_cast<Scalar>(count);
        auto& gl = t.grad(il);
        for (std::size_t r = 0; r < m; ++r) {
          if (tgt[r] == ignore_id) continue;
          for (std::size_t c = 0; c < n; ++c) gl[r * n + c] += g * probs[r * n + c];
          gl[r * n + tgt[r]] -= g;
        }
      },
      "masked_nll_rows");
  return result;
}

}  // namespace capgen

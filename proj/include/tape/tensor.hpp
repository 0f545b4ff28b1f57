// Reverse-mode autodiff tensor engine.
//
// Dense row-major tensors with numpy-style broadcasting, Eigen-backed batched
// matmul, and a dynamic tape: every op returns a node holding its inputs and
// a closure that routes gradients backwards. Templated on float (training
// speed) and double (finite-difference gradient checks).
//
// Two ops exist purely for bit-exact reduction-order control: ordered_sum_stack
// combines k same-shape tensors per element in a canonical value order, and
// max_stack_detached takes an elementwise max treated as a constant. Together
// they make blocked softmax reductions invariant to block permutation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

namespace tape {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " +
                                  shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// strides of `in` viewed through broadcast shape `out` (0 on broadcast dims)
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> real = row_major_strides(in);
  std::vector<int64_t> st(out.size(), 0);
  const size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i)
    st[off + i] = in[i] == 1 && out[off + i] != 1 ? 0 : real[i];
  return st;
}

template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::shared_ptr<std::vector<T>> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Node&)> backward;

    int64_t numel() const { return shape_numel(shape); }
    void ensure_grad() {
      if (grad.empty()) grad.assign(static_cast<size_t>(numel()), T(0));
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return leaf(std::move(shape), {}, requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::make_shared<std::vector<T>>(static_cast<size_t>(shape_numel(n->shape)), v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return full({}, v, requires_grad); }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw std::invalid_argument("Tensor: data size does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::make_shared<std::vector<T>>(std::move(data));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  int64_t dim(int i) const {
    const int r = static_cast<int>(node_->shape.size());
    return node_->shape[static_cast<size_t>(i < 0 ? i + r : i)];
  }
  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<T>& value() const { return *node_->value; }
  std::vector<T>& mutable_value() { return *node_->value; }
  const std::vector<T>& grad() const { return node_->grad; }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return (*node_->value)[0];
  }

  void zero_grad() { node_->grad.clear(); }

  // leaf-only toggle; flipping params off prunes the graph during inference
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  // reverse-mode sweep from this (scalar or any shape, seeded with ones)
  void backward() const {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad.assign(static_cast<size_t>(numel()), T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward) (*it)->backward(**it);
  }

  // internal node access for op implementations
  const std::shared_ptr<Node>& impl() const { return node_; }

  static Tensor from_node(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }

  static std::shared_ptr<Node> make_node(Shape shape, std::vector<T> value,
                                         std::vector<std::shared_ptr<Node>> parents) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    if (static_cast<int64_t>(value.size()) != shape_numel(n->shape))
      throw std::logic_error("make_node: value size mismatch");
    n->value = std::make_shared<std::vector<T>>(std::move(value));
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    if (n->requires_grad) n->parents = std::move(parents);
    return n;
  }

 private:
  static Tensor leaf(Shape shape, std::vector<T> data, bool requires_grad) {
    auto n = std::make_shared<Node>();
    const int64_t count = shape_numel(shape);
    n->shape = std::move(shape);
    if (data.empty()) data.assign(static_cast<size_t>(count), T(0));
    n->value = std::make_shared<std::vector<T>>(std::move(data));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  std::shared_ptr<Node> node_;
};

namespace detail {

// true when `small` occupies a contiguous right-aligned slot of `big`, so
// broadcast indexing collapses to i % small_numel (the bias-add pattern)
inline bool is_suffix_broadcast(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  const size_t off = big.size() - small.size();
  for (size_t i = 0; i < small.size(); ++i)
    if (small[i] != big[off + i]) return false;
  return true;
}

// sums `src` (shaped like `from`) into `dst` (shaped like `to`), where `to`
// broadcasts to `from`: the reverse pass of a broadcast forward
template <typename T>
void reduce_broadcast_into(const std::vector<T>& src, const Shape& from, std::vector<T>& dst,
                           const Shape& to) {
  if (from == to) {
    for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    return;
  }
  if (is_suffix_broadcast(to, from)) {
    const size_t n = dst.size();
    for (size_t i = 0; i < src.size(); ++i) dst[i % n] += src[i];
    return;
  }
  const std::vector<int64_t> st = broadcast_strides(to, from);
  const int64_t n = shape_numel(from);
  std::vector<int64_t> idx(from.size(), 0);
  int64_t off = 0;
  for (int64_t i = 0; i < n; ++i) {
    dst[static_cast<size_t>(off)] += src[static_cast<size_t>(i)];
    for (int d = static_cast<int>(from.size()) - 1; d >= 0; --d) {
      off += st[d];
      if (++idx[d] < from[d]) break;
      idx[d] = 0;
      off -= st[d] * from[d];
    }
  }
}

template <typename T, typename FwdFn>
std::vector<T> broadcast_eval(const Tensor<T>& a, const Tensor<T>& b, const Shape& out_shape,
                              FwdFn&& fn) {
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  if (a.shape() == b.shape()) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = fn(av[i], bv[i]);
    return out;
  }
  if (a.shape() == out_shape && is_suffix_broadcast(b.shape(), out_shape)) {
    const size_t n = bv.size();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fn(av[i], bv[i % n]);
    return out;
  }
  const std::vector<int64_t> sa = broadcast_strides(a.shape(), out_shape);
  const std::vector<int64_t> sb = broadcast_strides(b.shape(), out_shape);
  std::vector<int64_t> idx(out_shape.size(), 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < static_cast<int64_t>(out.size()); ++i) {
    out[static_cast<size_t>(i)] = fn(av[static_cast<size_t>(oa)], bv[static_cast<size_t>(ob)]);
    for (int d = static_cast<int>(out_shape.size()) - 1; d >= 0; --d) {
      oa += sa[d];
      ob += sb[d];
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
      oa -= sa[d] * out_shape[d];
      ob -= sb[d] * out_shape[d];
    }
  }
  return out;
}

// evaluates fn(a_elem, b_elem, grad_out_elem) into per-input accumulators
template <typename T, typename GradFn>
void broadcast_grad(const Tensor<T>& a, const Tensor<T>& b, const Shape& out_shape,
                    const std::vector<T>& gout, GradFn&& fn) {
  if (a.shape() == b.shape()) {
    for (size_t i = 0; i < gout.size(); ++i) fn(i, i, i);
    return;
  }
  if (a.shape() == out_shape && is_suffix_broadcast(b.shape(), out_shape)) {
    const size_t n = static_cast<size_t>(shape_numel(b.shape()));
    for (size_t i = 0; i < gout.size(); ++i) fn(i, i % n, i);
    return;
  }
  const std::vector<int64_t> sa = broadcast_strides(a.shape(), out_shape);
  const std::vector<int64_t> sb = broadcast_strides(b.shape(), out_shape);
  std::vector<int64_t> idx(out_shape.size(), 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < static_cast<int64_t>(gout.size()); ++i) {
    fn(static_cast<size_t>(oa), static_cast<size_t>(ob), static_cast<size_t>(i));
    for (int d = static_cast<int>(out_shape.size()) - 1; d >= 0; --d) {
      oa += sa[d];
      ob += sb[d];
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
      oa -= sa[d] * out_shape[d];
      ob -= sb[d] * out_shape[d];
    }
  }
}

}  // namespace detail

// --- elementwise binary -------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto node = Tensor<T>::make_node(out_shape,
                                   detail::broadcast_eval(a, b, out_shape,
                                                          [](T x, T y) { return x + y; }),
                                   {a.impl(), b.impl()});
  if (node->requires_grad) {
    auto pa = a.impl();
    auto pb = b.impl();
    Shape os = out_shape;
    node->backward = [pa, pb, os](const typename Tensor<T>::Node& self) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        detail::reduce_broadcast_into(self.grad, os, pa->grad, pa->shape);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        detail::reduce_broadcast_into(self.grad, os, pb->grad, pb->shape);
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto node = Tensor<T>::make_node(out_shape,
                                   detail::broadcast_eval(a, b, out_shape,
                                                          [](T x, T y) { return x - y; }),
                                   {a.impl(), b.impl()});
  if (node->requires_grad) {
    auto pa = a.impl();
    auto pb = b.impl();
    Shape os = out_shape;
    node->backward = [pa, pb, os](const typename Tensor<T>::Node& self) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        detail::reduce_broadcast_into(self.grad, os, pa->grad, pa->shape);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        std::vector<T> neg(self.grad.size());
        for (size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
        detail::reduce_broadcast_into(neg, os, pb->grad, pb->shape);
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto node = Tensor<T>::make_node(out_shape,
                                   detail::broadcast_eval(a, b, out_shape,
                                                          [](T x, T y) { return x * y; }),
                                   {a.impl(), b.impl()});
  if (node->requires_grad) {
    auto pa = a.impl();
    auto pb = b.impl();
    Shape os = out_shape;
    node->backward = [pa, pb, os, a, b](const typename Tensor<T>::Node& self) {
      const auto& av = *pa->value;
      const auto& bv = *pb->value;
      if (pa->requires_grad) pa->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      detail::broadcast_grad(a, b, os, self.grad, [&](size_t ia, size_t ib, size_t io) {
        if (pa->requires_grad) pa->grad[ia] += self.grad[io] * bv[ib];
        if (pb->requires_grad) pb->grad[ib] += self.grad[io] * av[ia];
      });
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto node = Tensor<T>::make_node(out_shape,
                                   detail::broadcast_eval(a, b, out_shape,
                                                          [](T x, T y) { return x / y; }),
                                   {a.impl(), b.impl()});
  if (node->requires_grad) {
    auto pa = a.impl();
    auto pb = b.impl();
    Shape os = out_shape;
    node->backward = [pa, pb, os, a, b](const typename Tensor<T>::Node& self) {
      const auto& av = *pa->value;
      const auto& bv = *pb->value;
      if (pa->requires_grad) pa->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      detail::broadcast_grad(a, b, os, self.grad, [&](size_t ia, size_t ib, size_t io) {
        if (pa->requires_grad) pa->grad[ia] += self.grad[io] / bv[ib];
        if (pb->requires_grad) pb->grad[ib] -= self.grad[io] * av[ia] / (bv[ib] * bv[ib]);
      });
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// --- elementwise unary and scalar ----------------------------------------------

namespace detail {

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(const Tensor<T>& x, FwdFn&& fwd, BwdFn&& bwd) {
  const auto& xv = x.value();
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  auto node = Tensor<T>::make_node(x.shape(), std::move(out), {x.impl()});
  if (node->requires_grad) {
    auto px = x.impl();
    auto self_value = node->value;
    node->backward = [px, self_value, bwd](const typename Tensor<T>::Node& self) {
      px->ensure_grad();
      const auto& xv = *px->value;
      const auto& yv = *self_value;
      for (size_t i = 0; i < self.grad.size(); ++i)
        px->grad[i] += self.grad[i] * bwd(xv[i], yv[i]);
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

}  // namespace detail

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> exp_t(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sqrt_t(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return std::sqrt(v); },
                          [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> square_t(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.7071067811865475244);
  constexpr T kInvSqrt2Pi = T(0.3989422804014326779);
  return detail::unary_op(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
      [](T v, T) {
        return T(0.5) * (T(1) + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, double c) {
  const T tc = static_cast<T>(c);
  return detail::unary_op(x, [tc](T v) { return v + tc; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, double c) {
  const T tc = static_cast<T>(c);
  return detail::unary_op(x, [tc](T v) { return v * tc; }, [tc](T, T) { return tc; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& x, double c) { return add_scalar(x, c); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& x, double c) { return mul_scalar(x, c); }
template <typename T>
Tensor<T> operator*(double c, const Tensor<T>& x) { return mul_scalar(x, c); }

// --- shape ops ------------------------------------------------------------------

// aliasing view: shares the value buffer, no copy
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw std::invalid_argument("reshape: multiple -1 dims");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[static_cast<size_t>(infer)] = x.numel() / known;
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(x.shape()) + " -> " +
                                shape_str(shape));
  auto node = std::make_shared<typename Tensor<T>::Node>();
  node->shape = std::move(shape);
  node->value = x.impl()->value;  // alias
  node->requires_grad = x.requires_grad();
  if (node->requires_grad) {
    node->parents = {x.impl()};
    auto px = x.impl();
    node->backward = [px](const typename Tensor<T>::Node& self) {
      px->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& dims) {
  const Shape& in = x.shape();
  if (dims.size() != in.size()) throw std::invalid_argument("permute: rank mismatch");
  Shape out_shape(in.size());
  for (size_t i = 0; i < dims.size(); ++i) out_shape[i] = in[static_cast<size_t>(dims[i])];
  const std::vector<int64_t> in_strides = row_major_strides(in);
  std::vector<int64_t> perm_strides(in.size());
  for (size_t i = 0; i < dims.size(); ++i) perm_strides[i] = in_strides[static_cast<size_t>(dims[i])];

  const auto& xv = x.value();
  std::vector<T> out(xv.size());
  std::vector<int64_t> idx(out_shape.size(), 0);
  int64_t src = 0;
  for (int64_t i = 0; i < static_cast<int64_t>(out.size()); ++i) {
    out[static_cast<size_t>(i)] = xv[static_cast<size_t>(src)];
    for (int d = static_cast<int>(out_shape.size()) - 1; d >= 0; --d) {
      src += perm_strides[d];
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
      src -= perm_strides[d] * out_shape[d];
    }
  }
  auto node = Tensor<T>::make_node(out_shape, std::move(out), {x.impl()});
  if (node->requires_grad) {
    auto px = x.impl();
    std::vector<int64_t> strides = perm_strides;
    Shape os = out_shape;
    node->backward = [px, strides, os](const typename Tensor<T>::Node& self) {
      px->ensure_grad();
      std::vector<int64_t> idx(os.size(), 0);
      int64_t src = 0;
      for (int64_t i = 0; i < static_cast<int64_t>(self.grad.size()); ++i) {
        px->grad[static_cast<size_t>(src)] += self.grad[static_cast<size_t>(i)];
        for (int d = static_cast<int>(os.size()) - 1; d >= 0; --d) {
          src += strides[d];
          if (++idx[d] < os[d]) break;
          idx[d] = 0;
          src -= strides[d] * os[d];
        }
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  std::vector<int> dims(x.shape().size());
  std::iota(dims.begin(), dims.end(), 0);
  std::swap(dims[dims.size() - 1], dims[dims.size() - 2]);
  return permute(x, dims);
}

// contiguous range along one axis
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  const Shape& in = x.shape();
  const int rank = static_cast<int>(in.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank || start < 0 || start + len > in[static_cast<size_t>(axis)])
    throw std::invalid_argument("slice: out of bounds");
  Shape out_shape = in;
  out_shape[static_cast<size_t>(axis)] = len;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= in[static_cast<size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= in[static_cast<size_t>(i)];
  const int64_t in_axis = in[static_cast<size_t>(axis)];

  const auto& xv = x.value();
  std::vector<T> out(static_cast<size_t>(outer * len * inner));
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + (o * in_axis + start) * inner, len * inner,
                out.begin() + o * len * inner);

  auto node = Tensor<T>::make_node(out_shape, std::move(out), {x.impl()});
  if (node->requires_grad) {
    auto px = x.impl();
    node->backward = [px, outer, inner, len, start, in_axis](const typename Tensor<T>::Node& self) {
      px->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        const T* g = self.grad.data() + o * len * inner;
        T* dst = px->grad.data() + (o * in_axis + start) * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  const int rank = static_cast<int>(xs[0].shape().size());
  if (axis < 0) axis += rank;
  Shape out_shape = xs[0].shape();
  int64_t total = 0;
  for (const auto& x : xs) {
    Shape s = x.shape();
    if (static_cast<int>(s.size()) != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && s[static_cast<size_t>(i)] != out_shape[static_cast<size_t>(i)])
        throw std::invalid_argument("concat: shape mismatch on non-concat axis");
    total += s[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<size_t>(i)];

  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  std::vector<int64_t> axis_sizes;
  int64_t cursor = 0;
  for (const auto& x : xs) {
    const int64_t ax = x.shape()[static_cast<size_t>(axis)];
    axis_sizes.push_back(ax);
    const auto& xv = x.value();
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(xv.begin() + o * ax * inner, ax * inner,
                  out.begin() + (o * total + cursor) * inner);
    cursor += ax;
  }

  std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents;
  for (const auto& x : xs) parents.push_back(x.impl());
  auto node = Tensor<T>::make_node(out_shape, std::move(out), parents);
  if (node->requires_grad) {
    node->backward = [parents, axis_sizes, outer, inner, total](
                         const typename Tensor<T>::Node& self) {
      int64_t cursor = 0;
      for (size_t k = 0; k < parents.size(); ++k) {
        const int64_t ax = axis_sizes[k];
        if (parents[k]->requires_grad) {
          parents[k]->ensure_grad();
          for (int64_t o = 0; o < outer; ++o) {
            const T* g = self.grad.data() + (o * total + cursor) * inner;
            T* dst = parents[k]->grad.data() + o * ax * inner;
            for (int64_t i = 0; i < ax * inner; ++i) dst[i] += g[i];
          }
        }
        cursor += ax;
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

// out[i] = index[i] >= 0 ? in[index[i]] : 0, one op covering padding, rolls,
// crops, and im2col patch extraction
template <typename T>
Tensor<T> pixel_gather(const Tensor<T>& x, std::shared_ptr<const std::vector<int64_t>> index,
                       Shape out_shape) {
  if (static_cast<int64_t>(index->size()) != shape_numel(out_shape))
    throw std::invalid_argument("pixel_gather: index size does not match output shape");
  const auto& xv = x.value();
  std::vector<T> out(index->size());
  for (size_t i = 0; i < out.size(); ++i) {
    const int64_t src = (*index)[i];
    out[i] = src >= 0 ? xv[static_cast<size_t>(src)] : T(0);
  }
  auto node = Tensor<T>::make_node(std::move(out_shape), std::move(out), {x.impl()});
  if (node->requires_grad) {
    auto px = x.impl();
    node->backward = [px, index](const typename Tensor<T>::Node& self) {
      px->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const int64_t src = (*index)[i];
        if (src >= 0) px->grad[static_cast<size_t>(src)] += self.grad[i];
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

// --- reductions -----------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::vector<int> axes, bool keepdim = false) {
  const Shape& in = x.shape();
  const int rank = static_cast<int>(in.size());
  std::vector<bool> reduce(rank, false);
  for (int a : axes) {
    if (a < 0) a += rank;
    if (a < 0 || a >= rank) throw std::invalid_argument("sum: bad axis");
    reduce[static_cast<size_t>(a)] = true;
  }
  Shape out_shape;
  Shape keep_shape(in.size());
  for (int i = 0; i < rank; ++i) {
    keep_shape[static_cast<size_t>(i)] = reduce[static_cast<size_t>(i)] ? 1 : in[static_cast<size_t>(i)];
    if (!reduce[static_cast<size_t>(i)]) out_shape.push_back(in[static_cast<size_t>(i)]);
    else if (keepdim) out_shape.push_back(1);
  }

  const std::vector<int64_t> dst_strides = broadcast_strides(keep_shape, in);
  const auto& xv = x.value();
  std::vector<T> out(static_cast<size_t>(shape_numel(keep_shape)), T(0));
  std::vector<int64_t> idx(in.size(), 0);
  int64_t off = 0;
  for (int64_t i = 0; i < static_cast<int64_t>(xv.size()); ++i) {
    out[static_cast<size_t>(off)] += xv[static_cast<size_t>(i)];
    for (int d = rank - 1; d >= 0; --d) {
      off += dst_strides[static_cast<size_t>(d)];
      if (++idx[static_cast<size_t>(d)] < in[static_cast<size_t>(d)]) break;
      idx[static_cast<size_t>(d)] = 0;
      off -= dst_strides[static_cast<size_t>(d)] * in[static_cast<size_t>(d)];
    }
  }

  auto node = Tensor<T>::make_node(out_shape, std::move(out), {x.impl()});
  if (node->requires_grad) {
    auto px = x.impl();
    Shape ks = keep_shape;
    node->backward = [px, ks](const typename Tensor<T>::Node& self) {
      px->ensure_grad();
      const Shape& in = px->shape;
      const std::vector<int64_t> st = broadcast_strides(ks, in);
      std::vector<int64_t> idx(in.size(), 0);
      int64_t off = 0;
      for (int64_t i = 0; i < static_cast<int64_t>(px->grad.size()); ++i) {
        px->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(off)];
        for (int d = static_cast<int>(in.size()) - 1; d >= 0; --d) {
          off += st[static_cast<size_t>(d)];
          if (++idx[static_cast<size_t>(d)] < in[static_cast<size_t>(d)]) break;
          idx[static_cast<size_t>(d)] = 0;
          off -= st[static_cast<size_t>(d)] * in[static_cast<size_t>(d)];
        }
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::vector<int> axes, bool keepdim = false) {
  const Shape& in = x.shape();
  const int rank = static_cast<int>(in.size());
  int64_t count = 1;
  for (int a : axes) {
    if (a < 0) a += rank;
    count *= in[static_cast<size_t>(a)];
  }
  return mul_scalar(sum(x, std::move(axes), keepdim), T(1) / static_cast<T>(count));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  std::vector<int> axes(x.shape().size());
  std::iota(axes.begin(), axes.end(), 0);
  return sum(x, axes, false);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// --- matmul ---------------------------------------------------------------------

namespace detail {

template <typename T>
using EigenMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstEigenMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// batch index arithmetic shared by forward and backward sweeps
struct BatchedMatmulPlan {
  Shape batch_shape;
  std::vector<int64_t> a_batch_strides;  // in units of m*k
  std::vector<int64_t> b_batch_strides;  // in units of k*n
  int64_t batches = 1;
  int64_t m = 0, k = 0, n = 0;
};

inline BatchedMatmulPlan plan_matmul(const Shape& a, const Shape& b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("matmul: need rank >= 2, got " + shape_str(a) + " and " +
                                shape_str(b));
  BatchedMatmulPlan p;
  p.m = a[a.size() - 2];
  p.k = a[a.size() - 1];
  if (b[b.size() - 2] != p.k)
    throw std::invalid_argument("matmul: inner dim mismatch " + shape_str(a) + " @ " +
                                shape_str(b));
  p.n = b[b.size() - 1];
  const Shape a_batch(a.begin(), a.end() - 2);
  const Shape b_batch(b.begin(), b.end() - 2);
  p.batch_shape = broadcast_shape(a_batch, b_batch);
  p.batches = shape_numel(p.batch_shape);
  p.a_batch_strides = broadcast_strides(a_batch, p.batch_shape);
  p.b_batch_strides = broadcast_strides(b_batch, p.batch_shape);
  return p;
}

// walks the flattened batch index, yielding (a_offset, b_offset) in matrices
template <typename Fn>
void for_each_batch(const BatchedMatmulPlan& p, Fn&& fn) {
  std::vector<int64_t> idx(p.batch_shape.size(), 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < p.batches; ++i) {
    fn(i, oa, ob);
    for (int d = static_cast<int>(p.batch_shape.size()) - 1; d >= 0; --d) {
      oa += p.a_batch_strides[static_cast<size_t>(d)];
      ob += p.b_batch_strides[static_cast<size_t>(d)];
      if (++idx[static_cast<size_t>(d)] < p.batch_shape[static_cast<size_t>(d)]) break;
      idx[static_cast<size_t>(d)] = 0;
      oa -= p.a_batch_strides[static_cast<size_t>(d)] * p.batch_shape[static_cast<size_t>(d)];
      ob -= p.b_batch_strides[static_cast<size_t>(d)] * p.batch_shape[static_cast<size_t>(d)];
    }
  }
}

}  // namespace detail

// batched matrix product over the last two dims, leading dims broadcast
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const detail::BatchedMatmulPlan p = detail::plan_matmul(a.shape(), b.shape());
  Shape out_shape = p.batch_shape;
  out_shape.push_back(p.m);
  out_shape.push_back(p.n);

  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<T> out(static_cast<size_t>(p.batches * p.m * p.n));
  detail::for_each_batch(p, [&](int64_t i, int64_t oa, int64_t ob) {
    detail::ConstEigenMap<T> ma(av.data() + oa * p.m * p.k, p.m, p.k);
    detail::ConstEigenMap<T> mb(bv.data() + ob * p.k * p.n, p.k, p.n);
    detail::EigenMap<T>(out.data() + i * p.m * p.n, p.m, p.n).noalias() = ma * mb;
  });

  auto node = Tensor<T>::make_node(out_shape, std::move(out), {a.impl(), b.impl()});
  if (node->requires_grad) {
    auto pa = a.impl();
    auto pb = b.impl();
    node->backward = [pa, pb, p](const typename Tensor<T>::Node& self) {
      const auto& av = *pa->value;
      const auto& bv = *pb->value;
      if (pa->requires_grad) pa->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      detail::for_each_batch(p, [&](int64_t i, int64_t oa, int64_t ob) {
        detail::ConstEigenMap<T> g(self.grad.data() + i * p.m * p.n, p.m, p.n);
        if (pa->requires_grad) {
          detail::ConstEigenMap<T> mb(bv.data() + ob * p.k * p.n, p.k, p.n);
          detail::EigenMap<T>(pa->grad.data() + oa * p.m * p.k, p.m, p.k).noalias() +=
              g * mb.transpose();
        }
        if (pb->requires_grad) {
          detail::ConstEigenMap<T> ma(av.data() + oa * p.m * p.k, p.m, p.k);
          detail::EigenMap<T>(pb->grad.data() + ob * p.k * p.n, p.k, p.n).noalias() +=
              ma.transpose() * g;
        }
      });
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

// x (..., in) @ w (in, out) + b (out)
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Shape xs = x.shape();
  const int64_t in_dim = xs.back();
  Tensor<T> flat = reshape(x, {-1, in_dim});
  Tensor<T> y = add(matmul(flat, w), b);
  xs.back() = w.shape()[1];
  return reshape(y, std::move(xs));
}

// --- fused normalization / softmax ------------------------------------------------

// stable softmax over the last dim
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const Shape& in = x.shape();
  const int64_t cols = in.back();
  const int64_t rows = x.numel() / cols;
  const auto& xv = x.value();
  std::vector<T> out(xv.size());
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * cols;
    T* dst = out.data() + r * cols;
    T mx = src[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, src[c]);
    T z = T(0);
    for (int64_t c = 0; c < cols; ++c) {
      dst[c] = std::exp(src[c] - mx);
      z += dst[c];
    }
    const T inv = T(1) / z;
    for (int64_t c = 0; c < cols; ++c) dst[c] *= inv;
  }
  auto node = Tensor<T>::make_node(in, std::move(out), {x.impl()});
  if (node->requires_grad) {
    auto px = x.impl();
    auto self_value = node->value;
    node->backward = [px, self_value, rows, cols](const typename Tensor<T>::Node& self) {
      px->ensure_grad();
      const auto& yv = *self_value;
      for (int64_t r = 0; r < rows; ++r) {
        const T* y = yv.data() + r * cols;
        const T* g = self.grad.data() + r * cols;
        T dotgy = T(0);
        for (int64_t c = 0; c < cols; ++c) dotgy += g[c] * y[c];
        T* dst = px->grad.data() + r * cols;
        for (int64_t c = 0; c < cols; ++c) dst[c] += y[c] * (g[c] - dotgy);
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

// layer norm over the last dim with affine params gamma, beta (shape = {C})
template <typename T>
Tensor<T> layernorm_lastdim(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            T eps = T(1e-5)) {
  const Shape& in = x.shape();
  const int64_t cols = in.back();
  if (gamma.numel() != cols || beta.numel() != cols)
    throw std::invalid_argument("layernorm: affine param size mismatch");
  const int64_t rows = x.numel() / cols;
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  std::vector<T> out(xv.size());
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * cols;
    T mu = T(0);
    for (int64_t c = 0; c < cols; ++c) mu += src[c];
    mu /= static_cast<T>(cols);
    T var = T(0);
    for (int64_t c = 0; c < cols; ++c) var += (src[c] - mu) * (src[c] - mu);
    var /= static_cast<T>(cols);
    const T istd = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = istd;
    T* xh = xhat->data() + r * cols;
    T* dst = out.data() + r * cols;
    for (int64_t c = 0; c < cols; ++c) {
      xh[c] = (src[c] - mu) * istd;
      dst[c] = xh[c] * gv[static_cast<size_t>(c)] + bv[static_cast<size_t>(c)];
    }
  }
  auto node =
      Tensor<T>::make_node(in, std::move(out), {x.impl(), gamma.impl(), beta.impl()});
  if (node->requires_grad) {
    auto px = x.impl();
    auto pg = gamma.impl();
    auto pb = beta.impl();
    node->backward = [px, pg, pb, xhat, inv_std, rows, cols](
                         const typename Tensor<T>::Node& self) {
      const auto& gv = *pg->value;
      if (px->requires_grad) px->ensure_grad();
      if (pg->requires_grad) pg->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* g = self.grad.data() + r * cols;
        const T* xh = xhat->data() + r * cols;
        if (pg->requires_grad || pb->requires_grad) {
          for (int64_t c = 0; c < cols; ++c) {
            if (pg->requires_grad) pg->grad[static_cast<size_t>(c)] += g[c] * xh[c];
            if (pb->requires_grad) pb->grad[static_cast<size_t>(c)] += g[c];
          }
        }
        if (px->requires_grad) {
          T sum_gg = T(0), sum_ggx = T(0);
          for (int64_t c = 0; c < cols; ++c) {
            const T gg = g[c] * gv[static_cast<size_t>(c)];
            sum_gg += gg;
            sum_ggx += gg * xh[c];
          }
          const T istd = (*inv_std)[static_cast<size_t>(r)];
          const T inv_cols = T(1) / static_cast<T>(cols);
          T* dst = px->grad.data() + r * cols;
          for (int64_t c = 0; c < cols; ++c) {
            const T gg = g[c] * gv[static_cast<size_t>(c)];
            dst[c] += istd * (gg - inv_cols * sum_gg - xh[c] * inv_cols * sum_ggx);
          }
        }
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

// --- graph control ----------------------------------------------------------------

// constant view of x: shares the value buffer, blocks gradient flow
template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  auto node = std::make_shared<typename Tensor<T>::Node>();
  node->shape = x.shape();
  node->value = x.impl()->value;
  return Tensor<T>::from_node(std::move(node));
}

// --- order-canonical reductions -----------------------------------------------------

// per-element sum of k same-shape tensors with the addends sorted into a
// canonical order (by value, ties by bit pattern), so the result is exactly
// invariant to any permutation of the inputs
template <typename T>
Tensor<T> ordered_sum_stack(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("ordered_sum_stack: empty input");
  const Shape shape = xs[0].shape();
  for (const auto& x : xs)
    if (x.shape() != shape) throw std::invalid_argument("ordered_sum_stack: shape mismatch");
  const size_t k = xs.size();
  const size_t n = static_cast<size_t>(shape_numel(shape));

  auto bits_less = [](T a, T b) {
    if (a != b) return a < b;
    if constexpr (sizeof(T) == 4) {
      uint32_t ua, ub;
      std::memcpy(&ua, &a, 4);
      std::memcpy(&ub, &b, 4);
      return ua < ub;
    } else {
      uint64_t ua, ub;
      std::memcpy(&ua, &a, 8);
      std::memcpy(&ub, &b, 8);
      return ua < ub;
    }
  };

  std::vector<const T*> src(k);
  for (size_t j = 0; j < k; ++j) src[j] = xs[j].value().data();
  std::vector<T> out(n);
  std::vector<T> terms(k);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < k; ++j) terms[j] = src[j][i];
    std::sort(terms.begin(), terms.end(), bits_less);
    T acc = T(0);
    for (size_t j = 0; j < k; ++j) acc += terms[j];
    out[i] = acc;
  }

  std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents;
  for (const auto& x : xs) parents.push_back(x.impl());
  auto node = Tensor<T>::make_node(shape, std::move(out), parents);
  if (node->requires_grad) {
    node->backward = [parents](const typename Tensor<T>::Node& self) {
      for (const auto& p : parents) {
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

// elementwise max over k same-shape tensors, returned as a constant; max is
// exactly commutative so this is permutation invariant by construction
template <typename T>
Tensor<T> max_stack_detached(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("max_stack_detached: empty input");
  const Shape shape = xs[0].shape();
  std::vector<T> out = xs[0].value();
  for (size_t j = 1; j < xs.size(); ++j) {
    if (xs[j].shape() != shape)
      throw std::invalid_argument("max_stack_detached: shape mismatch");
    const auto& v = xs[j].value();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], v[i]);
  }
  return Tensor<T>::from_data(shape, std::move(out));
}

// rowwise max over the last dim, keepdim, as a constant (softmax stabilizer)
template <typename T>
Tensor<T> rowmax_lastdim_detached(const Tensor<T>& x) {
  const int64_t cols = x.shape().back();
  const int64_t rows = x.numel() / cols;
  const auto& xv = x.value();
  std::vector<T> out(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    T mx = xv[static_cast<size_t>(r * cols)];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, xv[static_cast<size_t>(r * cols + c)]);
    out[static_cast<size_t>(r)] = mx;
  }
  Shape out_shape = x.shape();
  out_shape.back() = 1;
  return Tensor<T>::from_data(std::move(out_shape), std::move(out));
}

// sum over the last dim, keepdim
template <typename T>
Tensor<T> rowsum_lastdim(const Tensor<T>& x) {
  return sum(x, {static_cast<int>(x.shape().size()) - 1}, true);
}

}  // namespace tape

#pragma once
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dcae/kernels.hpp"
#include "dcae/tensor.hpp"

// Eager reverse-mode graph. Every op carries a hand-derived backward; finite
// differences are used only as the verification oracle, never as the
// mechanism. Accumulation order is fixed, so repeated runs are bit-identical.

namespace dcae::ag {

template <typename T>
struct Node {
  TensorT<T> value;
  TensorT<T> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  TensorT<T>& g() {
    if (grad.size() == 0) grad = TensorT<T>::zeros(value.b, value.c, value.h, value.w);
    return grad;
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(TensorT<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  return n;
}

template <typename T>
Var<T> leaf(TensorT<T> v, bool requires_grad = true) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
Var<T> make_op(TensorT<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (auto& p : n->parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

// Reverse-topological sweep from a scalar root.
template <typename T>
void backward(const Var<T>& root) {
  if (root->value.size() != 1)
    throw DimensionError("backward: root must be scalar, got " + root->value.shape_str());
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->g().data[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->requires_grad && n->backward_fn) n->backward_fn(*n);
  }
}

// ---- structural ops -------------------------------------------------------

template <typename T>
Var<T> detach(const Var<T>& x) {
  return constant(x->value);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "add");
  TensorT<T> out = a->value;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (int k = 0; k < 2; ++k)
      if (n.parents[k]->requires_grad) {
        auto& g = n.parents[k]->g();
        for (size_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i];
      }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "sub");
  TensorT<T> out = a->value;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] -= b->value.data[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      auto& g = n.parents[0]->g();
      for (size_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& g = n.parents[1]->g();
      for (size_t i = 0; i < g.size(); ++i) g.data[i] -= n.grad.data[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "mul");
  TensorT<T> out = a->value;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] *= b->value.data[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      auto& g = n.parents[0]->g();
      for (size_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i] * n.parents[1]->value.data[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& g = n.parents[1]->g();
      for (size_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i] * n.parents[0]->value.data[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, double s) {
  TensorT<T> out = x->value;
  for (auto& v : out.data) v = static_cast<T>(v * s);
  return make_op<T>(std::move(out), {x}, [s](Node<T>& n) {
    auto& g = n.parents[0]->g();
    for (size_t i = 0; i < g.size(); ++i) g.data[i] += static_cast<T>(n.grad.data[i] * s);
  });
}

template <typename T>
Var<T> add_const(const Var<T>& x, const TensorT<T>& c) {
  require_same_shape(x->value, c, "add_const");
  TensorT<T> out = x->value;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += c.data[i];
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->g();
    for (size_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i];
  });
}

template <typename T>
Var<T> concat_c(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw DimensionError("concat_c: empty input list");
  int c_total = 0;
  for (auto& x : xs) {
    if (x->value.b != xs[0]->value.b || x->value.h != xs[0]->value.h ||
        x->value.w != xs[0]->value.w)
      throw DimensionError("concat_c: mismatched shapes " + xs[0]->value.shape_str() + " vs " +
                           x->value.shape_str());
    c_total += x->value.c;
  }
  const auto& f = xs[0]->value;
  TensorT<T> out(f.b, c_total, f.h, f.w);
  int c0 = 0;
  for (auto& x : xs) {
    for (int bi = 0; bi < f.b; ++bi)
      for (int ci = 0; ci < x->value.c; ++ci)
        for (int hi = 0; hi < f.h; ++hi)
          for (int wi = 0; wi < f.w; ++wi)
            out.at(bi, c0 + ci, hi, wi) = x->value.at(bi, ci, hi, wi);
    c0 += x->value.c;
  }
  std::vector<Var<T>> parents(xs.begin(), xs.end());
  return make_op<T>(std::move(out), std::move(parents), [](Node<T>& n) {
    int c0 = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) {
        auto& g = p->g();
        for (int bi = 0; bi < g.b; ++bi)
          for (int ci = 0; ci < g.c; ++ci)
            for (int hi = 0; hi < g.h; ++hi)
              for (int wi = 0; wi < g.w; ++wi)
                g.at(bi, ci, hi, wi) += n.grad.at(bi, c0 + ci, hi, wi);
      }
      c0 += p->value.c;
    }
  });
}

template <typename T>
Var<T> slice_c(const Var<T>& x, int c0, int len) {
  if (c0 < 0 || len <= 0 || c0 + len > x->value.c)
    throw DimensionError("slice_c: range out of bounds");
  const auto& v = x->value;
  TensorT<T> out(v.b, len, v.h, v.w);
  for (int bi = 0; bi < v.b; ++bi)
    for (int ci = 0; ci < len; ++ci)
      for (int hi = 0; hi < v.h; ++hi)
        for (int wi = 0; wi < v.w; ++wi) out.at(bi, ci, hi, wi) = v.at(bi, c0 + ci, hi, wi);
  return make_op<T>(std::move(out), {x}, [c0, len](Node<T>& n) {
    auto& g = n.parents[0]->g();
    for (int bi = 0; bi < n.grad.b; ++bi)
      for (int ci = 0; ci < len; ++ci)
        for (int hi = 0; hi < n.grad.h; ++hi)
          for (int wi = 0; wi < n.grad.w; ++wi)
            g.at(bi, c0 + ci, hi, wi) += n.grad.at(bi, ci, hi, wi);
  });
}

// (B,C,H,W) -> (B*H*W, C, 1, 1); rows ordered (b, h, w).
template <typename T>
Var<T> to_rows(const Var<T>& x) {
  const auto& v = x->value;
  TensorT<T> out(v.b * v.h * v.w, v.c, 1, 1);
  int r = 0;
  for (int bi = 0; bi < v.b; ++bi)
    for (int hi = 0; hi < v.h; ++hi)
      for (int wi = 0; wi < v.w; ++wi, ++r)
        for (int ci = 0; ci < v.c; ++ci) out.at(r, ci, 0, 0) = v.at(bi, ci, hi, wi);
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->g();
    int r = 0;
    for (int bi = 0; bi < g.b; ++bi)
      for (int hi = 0; hi < g.h; ++hi)
        for (int wi = 0; wi < g.w; ++wi, ++r)
          for (int ci = 0; ci < g.c; ++ci) g.at(bi, ci, hi, wi) += n.grad.at(r, ci, 0, 0);
  });
}

template <typename T>
Var<T> from_rows(const Var<T>& r, int b, int h, int w) {
  const auto& v = r->value;
  if (v.b != b * h * w || v.h != 1 || v.w != 1)
    throw DimensionError("from_rows: row count mismatch");
  TensorT<T> out(b, v.c, h, w);
  int ri = 0;
  for (int bi = 0; bi < b; ++bi)
    for (int hi = 0; hi < h; ++hi)
      for (int wi = 0; wi < w; ++wi, ++ri)
        for (int ci = 0; ci < v.c; ++ci) out.at(bi, ci, hi, wi) = v.at(ri, ci, 0, 0);
  return make_op<T>(std::move(out), {r}, [](Node<T>& n) {
    auto& g = n.parents[0]->g();
    int ri = 0;
    for (int bi = 0; bi < n.grad.b; ++bi)
      for (int hi = 0; hi < n.grad.h; ++hi)
        for (int wi = 0; wi < n.grad.w; ++wi, ++ri)
          for (int ci = 0; ci < n.grad.c; ++ci) g.at(ri, ci, 0, 0) += n.grad.at(bi, ci, hi, wi);
  });
}

// ---- heavy kernels --------------------------------------------------------

template <typename T>
Var<T> conv2d_op(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  TensorT<T> out = conv2d(x->value, w->value, b ? &b->value : nullptr, stride, pad);
  return make_op<T>(std::move(out), {x, w, b}, [stride, pad](Node<T>& n) {
    auto& x = n.parents[0];
    auto& w = n.parents[1];
    auto& b = n.parents[2];
    conv2d_backward(x->value, w->value, n.grad, stride, pad,
                    x->requires_grad ? &x->g() : nullptr, w->requires_grad ? &w->g() : nullptr,
                    (b && b->requires_grad) ? &b->g() : nullptr);
  });
}

template <typename T>
Var<T> conv2d_transpose_op(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride,
                           int pad) {
  TensorT<T> out = conv2d_transpose(x->value, w->value, b ? &b->value : nullptr, stride, pad);
  return make_op<T>(std::move(out), {x, w, b}, [stride, pad](Node<T>& n) {
    auto& x = n.parents[0];
    auto& w = n.parents[1];
    auto& b = n.parents[2];
    conv2d_transpose_backward(x->value, w->value, n.grad, stride, pad,
                              x->requires_grad ? &x->g() : nullptr,
                              w->requires_grad ? &w->g() : nullptr,
                              (b && b->requires_grad) ? &b->g() : nullptr);
  });
}

template <typename T>
Var<T> dwconv3x3_op(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  TensorT<T> out = dwconv3x3(x->value, w->value, b ? &b->value : nullptr);
  return make_op<T>(std::move(out), {x, w, b}, [](Node<T>& n) {
    auto& x = n.parents[0];
    auto& w = n.parents[1];
    auto& b = n.parents[2];
    dwconv3x3_backward(x->value, w->value, n.grad, x->requires_grad ? &x->g() : nullptr,
                       w->requires_grad ? &w->g() : nullptr,
                       (b && b->requires_grad) ? &b->g() : nullptr);
  });
}

template <typename T>
Var<T> linear_op(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  TensorT<T> out = linear(x->value, w->value, b ? &b->value : nullptr);
  return make_op<T>(std::move(out), {x, w, b}, [](Node<T>& n) {
    auto& x = n.parents[0];
    auto& w = n.parents[1];
    auto& b = n.parents[2];
    linear_backward(x->value, w->value, n.grad, x->requires_grad ? &x->g() : nullptr,
                    w->requires_grad ? &w->g() : nullptr,
                    (b && b->requires_grad) ? &b->g() : nullptr);
  });
}

// A (m,k) x B (k,n) -> (m,n), matrices stored as (rows, cols, 1, 1).
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a->value;
  const auto& bv = b->value;
  if (av.c != bv.b) throw DimensionError("matmul: inner dims " + av.shape_str() + " vs " + bv.shape_str());
  TensorT<T> out(av.b, bv.c, 1, 1);
  for (int i = 0; i < av.b; ++i)
    for (int j = 0; j < bv.c; ++j) {
      T acc = T(0);
      for (int k = 0; k < av.c; ++k) acc += av.at(i, k, 0, 0) * bv.at(k, j, 0, 0);
      out.at(i, j, 0, 0) = acc;
    }
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      auto& ga = n.parents[0]->g();
      for (int i = 0; i < av.b; ++i)
        for (int k = 0; k < av.c; ++k) {
          T acc = T(0);
          for (int j = 0; j < bv.c; ++j) acc += n.grad.at(i, j, 0, 0) * bv.at(k, j, 0, 0);
          ga.at(i, k, 0, 0) += acc;
        }
    }
    if (n.parents[1]->requires_grad) {
      auto& gb = n.parents[1]->g();
      for (int k = 0; k < av.c; ++k)
        for (int j = 0; j < bv.c; ++j) {
          T acc = T(0);
          for (int i = 0; i < av.b; ++i) acc += av.at(i, k, 0, 0) * n.grad.at(i, j, 0, 0);
          gb.at(k, j, 0, 0) += acc;
        }
    }
  });
}

// A (m,k) x B(n,k)^T -> (m,n).
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  const auto& av = a->value;
  const auto& bv = b->value;
  if (av.c != bv.c)
    throw DimensionError("matmul_nt: inner dims " + av.shape_str() + " vs " + bv.shape_str());
  TensorT<T> out(av.b, bv.b, 1, 1);
  for (int i = 0; i < av.b; ++i)
    for (int j = 0; j < bv.b; ++j) {
      T acc = T(0);
      for (int k = 0; k < av.c; ++k) acc += av.at(i, k, 0, 0) * bv.at(j, k, 0, 0);
      out.at(i, j, 0, 0) = acc;
    }
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      auto& ga = n.parents[0]->g();
      for (int i = 0; i < av.b; ++i)
        for (int k = 0; k < av.c; ++k) {
          T acc = T(0);
          for (int j = 0; j < bv.b; ++j) acc += n.grad.at(i, j, 0, 0) * bv.at(j, k, 0, 0);
          ga.at(i, k, 0, 0) += acc;
        }
    }
    if (n.parents[1]->requires_grad) {
      auto& gb = n.parents[1]->g();
      for (int j = 0; j < bv.b; ++j)
        for (int k = 0; k < av.c; ++k) {
          T acc = T(0);
          for (int i = 0; i < av.b; ++i) acc += av.at(i, k, 0, 0) * n.grad.at(i, j, 0, 0);
          gb.at(j, k, 0, 0) += acc;
        }
    }
  });
}

// y = x / t, t a positive scalar variable of shape (1,1,1,1).
template <typename T>
Var<T> div_scalar_var(const Var<T>& x, const Var<T>& t) {
  if (t->value.size() != 1) throw DimensionError("div_scalar_var: scalar expected");
  const T tv = t->value.data[0];
  if (!(tv > T(0))) throw IntegrityError("div_scalar_var: non-positive temperature");
  TensorT<T> out = x->value;
  for (auto& v : out.data) v /= tv;
  return make_op<T>(std::move(out), {x, t}, [](Node<T>& n) {
    const T tv = n.parents[1]->value.data[0];
    if (n.parents[0]->requires_grad) {
      auto& g = n.parents[0]->g();
      for (size_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i] / tv;
    }
    if (n.parents[1]->requires_grad) {
      T acc = T(0);
      const auto& xv = n.parents[0]->value;
      for (size_t i = 0; i < xv.size(); ++i) acc += n.grad.data[i] * xv.data[i];
      n.parents[1]->g().data[0] -= acc / (tv * tv);
    }
  });
}

// ---- elementwise nonlinearities -------------------------------------------

template <typename T>
Var<T> gelu(const Var<T>& x) {
  TensorT<T> out = x->value;
  for (auto& v : out.data) v = gelu_scalar(v);
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->g();
    const auto& xv = n.parents[0]->value;
    for (size_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i] * gelu_grad_scalar(xv.data[i]);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  TensorT<T> out = x->value;
  for (auto& v : out.data) v = sigmoid_scalar(v);
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->g();
    for (size_t i = 0; i < g.size(); ++i) {
      const T y = n.value.data[i];
      g.data[i] += n.grad.data[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> tanh_(const Var<T>& x) {
  TensorT<T> out = x->value;
  for (auto& v : out.data) v = std::tanh(v);
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->g();
    for (size_t i = 0; i < g.size(); ++i) {
      const T y = n.value.data[i];
      g.data[i] += n.grad.data[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  TensorT<T> out = x->value;
  for (auto& v : out.data) v = softplus_scalar(v);
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->g();
    const auto& xv = n.parents[0]->value;
    for (size_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i] * sigmoid_scalar(xv.data[i]);
  });
}

// max(x, lo); gradient passes only where x > lo.
template <typename T>
Var<T> clamp_min(const Var<T>& x, double lo) {
  TensorT<T> out = x->value;
  for (auto& v : out.data) v = std::max(v, static_cast<T>(lo));
  return make_op<T>(std::move(out), {x}, [lo](Node<T>& n) {
    auto& g = n.parents[0]->g();
    const auto& xv = n.parents[0]->value;
    for (size_t i = 0; i < g.size(); ++i)
      if (xv.data[i] > static_cast<T>(lo)) g.data[i] += n.grad.data[i];
  });
}

template <typename T>
Var<T> softmax_channels_op(const Var<T>& x) {
  TensorT<T> out = softmax_channels(x->value);
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    softmax_channels_backward(n.value, n.grad, &n.parents[0]->g());
  });
}

// Round half away from zero with straight-through gradient.
template <typename T>
Var<T> round_ste(const Var<T>& x) {
  TensorT<T> out = x->value;
  for (auto& v : out.data) v = round_half_away(v);
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->g();
    for (size_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i];
  });
}

// ---- reductions and pooling -----------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T acc = T(0);
  for (T v : x->value.data) acc += v;
  TensorT<T> out(1, 1, 1, 1);
  out.data[0] = acc;
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->g();
    const T gv = n.grad.data[0];
    for (size_t i = 0; i < g.size(); ++i) g.data[i] += gv;
  });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "mse");
  T acc = T(0);
  for (size_t i = 0; i < a->value.size(); ++i) {
    const T d = a->value.data[i] - b->value.data[i];
    acc += d * d;
  }
  TensorT<T> out(1, 1, 1, 1);
  out.data[0] = acc / static_cast<T>(a->value.size());
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const T gv = n.grad.data[0] * T(2) / static_cast<T>(n.parents[0]->value.size());
    for (int k = 0; k < 2; ++k)
      if (n.parents[k]->requires_grad) {
        auto& g = n.parents[k]->g();
        const T s = (k == 0) ? T(1) : T(-1);
        for (size_t i = 0; i < g.size(); ++i)
          g.data[i] += s * gv * (n.parents[0]->value.data[i] - n.parents[1]->value.data[i]);
      }
  });
}

template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  const auto& v = x->value;
  TensorT<T> out(v.b, 1, v.h, v.w);
  for (int bi = 0; bi < v.b; ++bi)
    for (int hi = 0; hi < v.h; ++hi)
      for (int wi = 0; wi < v.w; ++wi) {
        T acc = T(0);
        for (int ci = 0; ci < v.c; ++ci) acc += v.at(bi, ci, hi, wi);
        out.at(bi, 0, hi, wi) = acc / static_cast<T>(v.c);
      }
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->g();
    const T inv = T(1) / static_cast<T>(g.c);
    for (int bi = 0; bi < g.b; ++bi)
      for (int hi = 0; hi < g.h; ++hi)
        for (int wi = 0; wi < g.w; ++wi) {
          const T gv = n.grad.at(bi, 0, hi, wi) * inv;
          for (int ci = 0; ci < g.c; ++ci) g.at(bi, ci, hi, wi) += gv;
        }
  });
}

// Channel max; gradient routes to the first max index (deterministic ties).
template <typename T>
Var<T> channel_max(const Var<T>& x) {
  const auto& v = x->value;
  TensorT<T> out(v.b, 1, v.h, v.w);
  for (int bi = 0; bi < v.b; ++bi)
    for (int hi = 0; hi < v.h; ++hi)
      for (int wi = 0; wi < v.w; ++wi) {
        T m = v.at(bi, 0, hi, wi);
        for (int ci = 1; ci < v.c; ++ci) m = std::max(m, v.at(bi, ci, hi, wi));
        out.at(bi, 0, hi, wi) = m;
      }
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->g();
    const auto& v = n.parents[0]->value;
    for (int bi = 0; bi < g.b; ++bi)
      for (int hi = 0; hi < g.h; ++hi)
        for (int wi = 0; wi < g.w; ++wi) {
          int arg = 0;
          T m = v.at(bi, 0, hi, wi);
          for (int ci = 1; ci < g.c; ++ci)
            if (v.at(bi, ci, hi, wi) > m) {
              m = v.at(bi, ci, hi, wi);
              arg = ci;
            }
          g.at(bi, arg, hi, wi) += n.grad.at(bi, 0, hi, wi);
        }
  });
}

// x (B,C,H,W) * map (B,1,H,W) broadcast over channels.
template <typename T>
Var<T> mul_map(const Var<T>& x, const Var<T>& map) {
  const auto& v = x->value;
  const auto& m = map->value;
  if (m.b != v.b || m.c != 1 || m.h != v.h || m.w != v.w)
    throw DimensionError("mul_map: map " + m.shape_str() + " vs input " + v.shape_str());
  TensorT<T> out(v.b, v.c, v.h, v.w);
  for (int bi = 0; bi < v.b; ++bi)
    for (int ci = 0; ci < v.c; ++ci)
      for (int hi = 0; hi < v.h; ++hi)
        for (int wi = 0; wi < v.w; ++wi)
          out.at(bi, ci, hi, wi) = v.at(bi, ci, hi, wi) * m.at(bi, 0, hi, wi);
  return make_op<T>(std::move(out), {x, map}, [](Node<T>& n) {
    const auto& v = n.parents[0]->value;
    const auto& m = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      auto& g = n.parents[0]->g();
      for (int bi = 0; bi < v.b; ++bi)
        for (int ci = 0; ci < v.c; ++ci)
          for (int hi = 0; hi < v.h; ++hi)
            for (int wi = 0; wi < v.w; ++wi)
              g.at(bi, ci, hi, wi) += n.grad.at(bi, ci, hi, wi) * m.at(bi, 0, hi, wi);
    }
    if (n.parents[1]->requires_grad) {
      auto& g = n.parents[1]->g();
      for (int bi = 0; bi < v.b; ++bi)
        for (int hi = 0; hi < v.h; ++hi)
          for (int wi = 0; wi < v.w; ++wi) {
            T acc = T(0);
            for (int ci = 0; ci < v.c; ++ci)
              acc += n.grad.at(bi, ci, hi, wi) * v.at(bi, ci, hi, wi);
            g.at(bi, 0, hi, wi) += acc;
          }
    }
  });
}

}  // namespace dcae::ag

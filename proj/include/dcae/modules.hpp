#pragma once
#include <cmath>
#include <string>
#include <vector>

#include "dcae/autograd.hpp"

namespace dcae {

// Named parameter table. Registration order is fixed by construction, names
// are unique and stable across save/load. A "pass" binds every parameter to
// a fresh tape leaf; gradients are pulled back into the table afterwards.
template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;
  };
  std::vector<Entry> entries;
  // pass-scoped scratch: rebinding leaves does not touch the weights
  mutable std::vector<ag::Var<T>> leaves;

  int add(const std::string& name, TensorT<T> value) {
    for (const auto& e : entries)
      if (e.name == name) throw ConfigError("duplicate parameter name: " + name);
    Entry e;
    e.name = name;
    e.grad = TensorT<T>::zeros(value.b, value.c, value.h, value.w);
    e.value = std::move(value);
    entries.push_back(std::move(e));
    return static_cast<int>(entries.size()) - 1;
  }

  void begin_pass(bool requires_grad) const {
    leaves.clear();
    leaves.reserve(entries.size());
    for (auto& e : entries) leaves.push_back(ag::leaf(e.value, requires_grad));
  }

  // Runs a pass against externally supplied leaves (verification harnesses).
  void bind_leaves(std::vector<ag::Var<T>> vs) const {
    if (vs.size() != entries.size())
      throw DimensionError("bind_leaves: leaf count does not match parameter count");
    leaves = std::move(vs);
  }

  const ag::Var<T>& var(int id) const { return leaves[static_cast<size_t>(id)]; }

  void zero_grad() {
    for (auto& e : entries) std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
  }

  // Accumulates the current pass's leaf gradients into the table.
  void collect_grads() {
    for (size_t i = 0; i < entries.size(); ++i) {
      if (i < leaves.size() && leaves[i] && leaves[i]->grad.size()) {
        auto& g = entries[i].grad;
        for (size_t j = 0; j < g.size(); ++j) g.data[j] += leaves[i]->grad.data[j];
      }
    }
  }

  int find(const std::string& name) const {
    for (size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return static_cast<int>(i);
    return -1;
  }

  size_t element_count() const {
    size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries) out.add(e.name, e.value.template cast<U>());
    return out;
  }
};

template <typename T>
TensorT<T> init_uniform_fanin(int b, int c, int h, int w, int fan_in, Rng& rng) {
  TensorT<T> t(b, c, h, w);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  fill_uniform(t, rng, -bound, bound);
  return t;
}

// Dense convolution layer; `transposed` flips it into the upsampling adjoint.
template <typename T>
struct ConvLayer {
  int w = -1, b = -1;
  int stride = 1, pad = 0;
  bool transposed = false;

  void init(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k, int stride_,
            int pad_, bool transposed_, Rng& rng) {
    stride = stride_;
    pad = pad_;
    transposed = transposed_;
    const int fan_in = cin * k * k;
    if (transposed)
      w = ps.add(name + ".w", init_uniform_fanin<T>(cin, cout, k, k, fan_in, rng));
    else
      w = ps.add(name + ".w", init_uniform_fanin<T>(cout, cin, k, k, fan_in, rng));
    b = ps.add(name + ".b", TensorT<T>::zeros(cout, 1, 1, 1));
  }

  ag::Var<T> operator()(const ParamStore<T>& ps, const ag::Var<T>& x) const {
    if (transposed) return ag::conv2d_transpose_op(x, ps.var(w), ps.var(b), stride, pad);
    return ag::conv2d_op(x, ps.var(w), ps.var(b), stride, pad);
  }
};

template <typename T>
struct LinearLayer {
  int w = -1, b = -1;  // b stays -1 when bias-free

  void init(ParamStore<T>& ps, const std::string& name, int cin, int cout, bool bias, Rng& rng) {
    w = ps.add(name + ".w", init_uniform_fanin<T>(cin, cout, 1, 1, cin, rng));
    if (bias) b = ps.add(name + ".b", TensorT<T>::zeros(cout, 1, 1, 1));
  }

  ag::Var<T> operator()(const ParamStore<T>& ps, const ag::Var<T>& x) const {
    return ag::linear_op(x, ps.var(w), b >= 0 ? ps.var(b) : nullptr);
  }
};

template <typename T>
struct DwConvLayer {
  int w = -1, b = -1;

  void init(ParamStore<T>& ps, const std::string& name, int channels, Rng& rng) {
    w = ps.add(name + ".w", init_uniform_fanin<T>(channels, 1, 3, 3, 9, rng));
    b = ps.add(name + ".b", TensorT<T>::zeros(channels, 1, 1, 1));
  }

  ag::Var<T> operator()(const ParamStore<T>& ps, const ag::Var<T>& x) const {
    return ag::dwconv3x3_op(x, ps.var(w), ps.var(b));
  }
};

// EConv: channel expansion, 3x3 depthwise, channel projection.
template <typename T>
struct EConvBlock {
  LinearLayer<T> in, out;
  DwConvLayer<T> dw;

  void init(ParamStore<T>& ps, const std::string& name, int cin, int cmid, Rng& rng) {
    in.init(ps, name + ".in", cin, cmid, false, rng);
    dw.init(ps, name + ".dw", cmid, rng);
    out.init(ps, name + ".out", cmid, cmid, false, rng);
  }

  ag::Var<T> operator()(const ParamStore<T>& ps, const ag::Var<T>& x) const {
    return out(ps, dw(ps, in(ps, x)));
  }
};

// Spatial attention: 7x7 conv over stacked channel mean and max, sigmoid map.
template <typename T>
struct SpatialAttention {
  ConvLayer<T> conv;

  void init(ParamStore<T>& ps, const std::string& name, Rng& rng) {
    conv.init(ps, name, 2, 1, 7, 1, 3, false, rng);
  }

  ag::Var<T> map(const ParamStore<T>& ps, const ag::Var<T>& x) const {
    auto pooled = ag::concat_c<T>({ag::channel_mean(x), ag::channel_max(x)});
    return ag::sigmoid(conv(ps, pooled));
  }

  ag::Var<T> operator()(const ParamStore<T>& ps, const ag::Var<T>& x) const {
    return ag::mul_map(x, map(ps, x));
  }
};

// Multi-scale feature aggregation: the merge list is the raw input followed
// by m stacked EConv outputs; a spatial attention map gates the merged
// features. With m = 0 the block collapses to a single linear projection.
template <typename T>
struct MsfaBlock {
  int layers = 0;
  std::vector<EConvBlock<T>> econvs;
  LinearLayer<T> merge;
  SpatialAttention<T> sa;

  void init(ParamStore<T>& ps, const std::string& name, int cin, int cms, int m, Rng& rng) {
    layers = m;
    if (m == 0) {
      merge.init(ps, name + ".proj", cin, cms, false, rng);
      return;
    }
    econvs.resize(m);
    for (int j = 0; j < m; ++j)
      econvs[j].init(ps, name + ".econv" + std::to_string(j), j == 0 ? cin : cms, cms, rng);
    merge.init(ps, name + ".merge", cin + m * cms, cms, false, rng);
    sa.init(ps, name + ".sa", rng);
  }

  ag::Var<T> operator()(const ParamStore<T>& ps, const ag::Var<T>& x) const {
    if (layers == 0) return merge(ps, x);
    std::vector<ag::Var<T>> feats = {x};
    auto cur = x;
    for (const auto& e : econvs) {
      cur = e(ps, cur);
      feats.push_back(cur);
    }
    auto merged = merge(ps, ag::concat_c(feats));
    return sa(ps, merged);
  }
};

// Three-layer 1x1 conv head with GELU between layers.
template <typename T>
struct MlpHead {
  LinearLayer<T> l0, l1, l2;

  void init(ParamStore<T>& ps, const std::string& name, int cin, int hidden, int cout, Rng& rng) {
    l0.init(ps, name + ".0", cin, hidden, true, rng);
    l1.init(ps, name + ".1", hidden, hidden, true, rng);
    l2.init(ps, name + ".2", hidden, cout, true, rng);
  }

  ag::Var<T> operator()(const ParamStore<T>& ps, const ag::Var<T>& x) const {
    return l2(ps, ag::gelu(l1(ps, ag::gelu(l0(ps, x)))));
  }
};

}  // namespace dcae

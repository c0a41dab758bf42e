#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "dcae/errors.hpp"

namespace dcae {

// Dense NCHW tensor. Single precision is the production type; the double
// instantiation exists for verification harnesses (gradient checks).
template <typename T>
struct TensorT {
  int b = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  TensorT() = default;
  TensorT(int b_, int c_, int h_, int w_)
      : b(b_), c(c_), h(h_), w(w_), data(static_cast<size_t>(b_) * c_ * h_ * w_, T(0)) {
    if (b_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      throw DimensionError("negative tensor dimension");
  }

  static TensorT zeros(int b, int c, int h, int w) { return TensorT(b, c, h, w); }
  static TensorT full(int b, int c, int h, int w, T v) {
    TensorT t(b, c, h, w);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  size_t size() const { return data.size(); }

  T& at(int bi, int ci, int hi, int wi) {
    return data[((static_cast<size_t>(bi) * c + ci) * h + hi) * w + wi];
  }
  T at(int bi, int ci, int hi, int wi) const {
    return data[((static_cast<size_t>(bi) * c + ci) * h + hi) * w + wi];
  }

  bool same_shape(const TensorT& o) const {
    return b == o.b && c == o.c && h == o.h && w == o.w;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << b << "x" << c << "x" << h << "x" << w;
    return os.str();
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(b, c, h, w);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* who) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(who) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

// Deterministic splitmix64-based generator. Used everywhere randomness is
// needed so that archives, datasets and noise are reproducible bit-for-bit
// from a seed regardless of the standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  uint64_t below(uint64_t n) { return next_u64() % n; }

  Rng fork() { return Rng(next_u64()); }

 private:
  uint64_t state_;
};

template <typename T>
void fill_uniform(TensorT<T>& t, Rng& rng, double lo, double hi) {
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
}

// Round half away from zero; the tie rule used throughout the codec.
template <typename T>
T round_half_away(T v) {
  return static_cast<T>(std::round(static_cast<double>(v)));
}

}  // namespace dcae

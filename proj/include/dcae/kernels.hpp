#pragma once
#include <algorithm>
#include <cmath>
#include <type_traits>

#include "dcae/tensor.hpp"

// Raw compute kernels with hand-derived backward passes. All loops run in a
// fixed order so results are bit-identical across runs within one build.

namespace dcae {

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<std::type_identity_t<T>>* bias, int stride,
                  int pad) {
  if (w.h != w.w) throw DimensionError("conv2d: non-square kernel " + w.shape_str());
  if (x.c != w.c)
    throw DimensionError("conv2d: input channels " + x.shape_str() + " vs weight " +
                         w.shape_str());
  if (bias && (bias->size() != static_cast<size_t>(w.b)))
    throw DimensionError("conv2d: bias size mismatch");
  const int k = w.h;
  const int oh = (x.h + 2 * pad - k) / stride + 1;
  const int ow = (x.w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0)
    throw DimensionError("conv2d: empty output for input " + x.shape_str());
  TensorT<T> out(x.b, w.b, oh, ow);
  for (int bi = 0; bi < x.b; ++bi)
    for (int co = 0; co < w.b; ++co) {
      const T bv = bias ? bias->data[co] : T(0);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T acc = bv;
          for (int ci = 0; ci < x.c; ++ci)
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= x.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= x.w) continue;
                acc += x.at(bi, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
            }
          out.at(bi, co, oy, ox) = acc;
        }
    }
  return out;
}

// Accumulates into gx/gw/gb (any of them may be null).
template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& gout, int stride,
                     int pad, TensorT<T>* gx, TensorT<T>* gw, TensorT<T>* gb) {
  const int k = w.h;
  for (int bi = 0; bi < x.b; ++bi)
    for (int co = 0; co < w.b; ++co)
      for (int oy = 0; oy < gout.h; ++oy)
        for (int ox = 0; ox < gout.w; ++ox) {
          const T g = gout.at(bi, co, oy, ox);
          if (gb) gb->data[co] += g;
          for (int ci = 0; ci < x.c; ++ci)
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= x.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= x.w) continue;
                if (gx) gx->at(bi, ci, iy, ix) += g * w.at(co, ci, ky, kx);
                if (gw) gw->at(co, ci, ky, kx) += g * x.at(bi, ci, iy, ix);
              }
            }
        }
}

// Transposed convolution, the adjoint of conv2d with the same stride/pad.
// Weight layout (C_in_of_x, C_out, k, k).
template <typename T>
TensorT<T> conv2d_transpose(const TensorT<T>& x, const TensorT<T>& w, const TensorT<std::type_identity_t<T>>* bias,
                            int stride, int pad) {
  if (w.h != w.w) throw DimensionError("conv2d_transpose: non-square kernel");
  if (x.c != w.b)
    throw DimensionError("conv2d_transpose: input channels " + x.shape_str() + " vs weight " +
                         w.shape_str());
  if (stride < 1) throw DimensionError("conv2d_transpose: stride must be >= 1");
  const int k = w.h;
  const int oh = (x.h - 1) * stride - 2 * pad + k;
  const int ow = (x.w - 1) * stride - 2 * pad + k;
  if (oh <= 0 || ow <= 0)
    throw DimensionError("conv2d_transpose: empty output for input " + x.shape_str());
  TensorT<T> out(x.b, w.c, oh, ow);
  for (int bi = 0; bi < x.b; ++bi) {
    if (bias) {
      if (bias->size() != static_cast<size_t>(w.c))
        throw DimensionError("conv2d_transpose: bias size mismatch");
      for (int co = 0; co < w.c; ++co)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) out.at(bi, co, oy, ox) = bias->data[co];
    }
    for (int ci = 0; ci < x.c; ++ci)
      for (int iy = 0; iy < x.h; ++iy)
        for (int ix = 0; ix < x.w; ++ix) {
          const T v = x.at(bi, ci, iy, ix);
          for (int co = 0; co < w.c; ++co)
            for (int ky = 0; ky < k; ++ky) {
              const int oy = iy * stride + ky - pad;
              if (oy < 0 || oy >= oh) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ox = ix * stride + kx - pad;
                if (ox < 0 || ox >= ow) continue;
                out.at(bi, co, oy, ox) += v * w.at(ci, co, ky, kx);
              }
            }
        }
  }
  return out;
}

template <typename T>
void conv2d_transpose_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& gout,
                               int stride, int pad, TensorT<T>* gx, TensorT<T>* gw,
                               TensorT<T>* gb) {
  const int k = w.h;
  if (gb)
    for (int bi = 0; bi < gout.b; ++bi)
      for (int co = 0; co < gout.c; ++co)
        for (int oy = 0; oy < gout.h; ++oy)
          for (int ox = 0; ox < gout.w; ++ox) gb->data[co] += gout.at(bi, co, oy, ox);
  for (int bi = 0; bi < x.b; ++bi)
    for (int ci = 0; ci < x.c; ++ci)
      for (int iy = 0; iy < x.h; ++iy)
        for (int ix = 0; ix < x.w; ++ix) {
          const T v = x.at(bi, ci, iy, ix);
          T acc = T(0);
          for (int co = 0; co < w.c; ++co)
            for (int ky = 0; ky < k; ++ky) {
              const int oy = iy * stride + ky - pad;
              if (oy < 0 || oy >= gout.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ox = ix * stride + kx - pad;
                if (ox < 0 || ox >= gout.w) continue;
                const T g = gout.at(bi, co, oy, ox);
                acc += g * w.at(ci, co, ky, kx);
                if (gw) gw->at(ci, co, ky, kx) += g * v;
              }
            }
          if (gx) gx->at(bi, ci, iy, ix) += acc;
        }
}

// Per-channel 3x3 convolution, stride 1, padding 1. Weight (C, 1, 3, 3).
template <typename T>
TensorT<T> dwconv3x3(const TensorT<T>& x, const TensorT<T>& w, const TensorT<std::type_identity_t<T>>* bias) {
  if (w.b != x.c || w.c != 1 || w.h != 3 || w.w != 3)
    throw DimensionError("dwconv3x3: weight " + w.shape_str() + " does not match input " +
                         x.shape_str());
  if (bias && bias->size() != static_cast<size_t>(x.c))
    throw DimensionError("dwconv3x3: bias size mismatch");
  TensorT<T> out(x.b, x.c, x.h, x.w);
  for (int bi = 0; bi < x.b; ++bi)
    for (int ci = 0; ci < x.c; ++ci)
      for (int oy = 0; oy < x.h; ++oy)
        for (int ox = 0; ox < x.w; ++ox) {
          T acc = bias ? bias->data[ci] : T(0);
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy + ky - 1;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox + kx - 1;
              if (ix < 0 || ix >= x.w) continue;
              acc += x.at(bi, ci, iy, ix) * w.at(ci, 0, ky, kx);
            }
          }
          out.at(bi, ci, oy, ox) = acc;
        }
  return out;
}

template <typename T>
void dwconv3x3_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& gout,
                        TensorT<T>* gx, TensorT<T>* gw, TensorT<T>* gb) {
  for (int bi = 0; bi < x.b; ++bi)
    for (int ci = 0; ci < x.c; ++ci)
      for (int oy = 0; oy < x.h; ++oy)
        for (int ox = 0; ox < x.w; ++ox) {
          const T g = gout.at(bi, ci, oy, ox);
          if (gb) gb->data[ci] += g;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy + ky - 1;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox + kx - 1;
              if (ix < 0 || ix >= x.w) continue;
              if (gx) gx->at(bi, ci, iy, ix) += g * w.at(ci, 0, ky, kx);
              if (gw) gw->at(ci, 0, ky, kx) += g * x.at(bi, ci, iy, ix);
            }
          }
        }
}

// Channel-mixing linear map. The tensor is viewed as B*H*W rows of C
// channels; weight (C_in, C_out, 1, 1), optional bias of C_out entries.
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<std::type_identity_t<T>>* bias) {
  if (w.c <= 0 || w.h != 1 || w.w != 1)
    throw DimensionError("linear: weight must be (C_in, C_out, 1, 1), got " + w.shape_str());
  if (x.c != w.b)
    throw DimensionError("linear: inner dims disagree, input " + x.shape_str() + " weight " +
                         w.shape_str());
  if (bias && bias->size() != static_cast<size_t>(w.c))
    throw DimensionError("linear: bias size mismatch");
  TensorT<T> out(x.b, w.c, x.h, x.w);
  for (int bi = 0; bi < x.b; ++bi)
    for (int hi = 0; hi < x.h; ++hi)
      for (int wi = 0; wi < x.w; ++wi)
        for (int co = 0; co < w.c; ++co) {
          T acc = bias ? bias->data[co] : T(0);
          for (int ci = 0; ci < x.c; ++ci) acc += x.at(bi, ci, hi, wi) * w.at(ci, co, 0, 0);
          out.at(bi, co, hi, wi) = acc;
        }
  return out;
}

template <typename T>
void linear_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& gout,
                     TensorT<T>* gx, TensorT<T>* gw, TensorT<T>* gb) {
  for (int bi = 0; bi < x.b; ++bi)
    for (int hi = 0; hi < x.h; ++hi)
      for (int wi = 0; wi < x.w; ++wi)
        for (int co = 0; co < w.c; ++co) {
          const T g = gout.at(bi, co, hi, wi);
          if (gb) gb->data[co] += g;
          for (int ci = 0; ci < x.c; ++ci) {
            if (gx) gx->at(bi, ci, hi, wi) += g * w.at(ci, co, 0, 0);
            if (gw) gw->at(ci, co, 0, 0) += g * x.at(bi, ci, hi, wi);
          }
        }
}

// Softmax over the channel dimension with max-subtraction for stability.
template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& x) {
  TensorT<T> out(x.b, x.c, x.h, x.w);
  for (int bi = 0; bi < x.b; ++bi)
    for (int hi = 0; hi < x.h; ++hi)
      for (int wi = 0; wi < x.w; ++wi) {
        T m = x.at(bi, 0, hi, wi);
        for (int ci = 1; ci < x.c; ++ci) m = std::max(m, x.at(bi, ci, hi, wi));
        T denom = T(0);
        for (int ci = 0; ci < x.c; ++ci) {
          const T e = std::exp(x.at(bi, ci, hi, wi) - m);
          out.at(bi, ci, hi, wi) = e;
          denom += e;
        }
        for (int ci = 0; ci < x.c; ++ci) out.at(bi, ci, hi, wi) /= denom;
      }
  return out;
}

template <typename T>
void softmax_channels_backward(const TensorT<T>& y, const TensorT<T>& gout, TensorT<T>* gx) {
  for (int bi = 0; bi < y.b; ++bi)
    for (int hi = 0; hi < y.h; ++hi)
      for (int wi = 0; wi < y.w; ++wi) {
        T dot = T(0);
        for (int ci = 0; ci < y.c; ++ci) dot += gout.at(bi, ci, hi, wi) * y.at(bi, ci, hi, wi);
        for (int ci = 0; ci < y.c; ++ci)
          gx->at(bi, ci, hi, wi) += y.at(bi, ci, hi, wi) * (gout.at(bi, ci, hi, wi) - dot);
      }
}

// GELU, tanh approximation with fixed constants.
template <typename T>
inline T gelu_scalar(T x) {
  const T c0 = T(0.7978845608028654);  // sqrt(2/pi)
  const T c1 = T(0.044715);
  const T u = c0 * (x + c1 * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
  const T c0 = T(0.7978845608028654);
  const T c1 = T(0.044715);
  const T u = c0 * (x + c1 * x * x * x);
  const T t = std::tanh(u);
  const T du = c0 * (T(1) + T(3) * c1 * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
inline T softplus_scalar(T x) {
  // log(1 + e^x), overflow-safe.
  if (x > T(30)) return x;
  return std::log1p(std::exp(x));
}

}  // namespace dcae

#pragma once
#include <cmath>

#include "dcae/autograd.hpp"
#include "dcae/tensor.hpp"

// Probability models for the coded symbols: a zero-mean discretized Gaussian
// for the latent residuals and a per-channel logistic for the hyper-latent.
// The same closed forms back both the coder tables and the training rate
// terms.

namespace dcae {

inline constexpr double kScaleFloor = 0.11;
inline constexpr double kPmfFloor = 1e-12;
inline constexpr double kLog2E = 1.4426950408889634;

// Standard normal CDF.
inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

// P(k) of round(e) for e ~ N(0, sigma^2): mass of the unit bin around the
// integer k. Evaluated through erfc on the tail side so far-tail values stay
// accurate; exactly symmetric in k by construction.
inline double discretized_gaussian_pmf(double k, double sigma) {
  if (!(sigma >= kScaleFloor))
    throw IntegrityError("discretized_gaussian_pmf: sigma below floor");
  const double t = std::abs(k);
  const double inv = 1.0 / (sigma * 1.41421356237309504880);
  return 0.5 * (std::erfc((t - 0.5) * inv) - std::erfc((t + 0.5) * inv));
}

// Upper tail P(round(e) >= k).
inline double discretized_gaussian_upper_tail(double k, double sigma) {
  return 0.5 * std::erfc((k - 0.5) / (sigma * 1.41421356237309504880));
}

inline double logistic_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// P(k) for the factorized prior with location l and scale s: CDF differences
// of a logistic. Computed on the far side of the location for stability.
inline double logistic_pmf(double k, double loc, double scale) {
  if (!(scale > 0)) throw IntegrityError("logistic_pmf: non-positive scale");
  const double d = k - loc;
  const double a = (d - 0.5) / scale;
  const double b = (d + 0.5) / scale;
  if (d > 0) return logistic_sigmoid(-a) - logistic_sigmoid(-b);
  return logistic_sigmoid(b) - logistic_sigmoid(a);
}

// Upper tail P(k' >= k) under the logistic model.
inline double logistic_upper_tail(double k, double loc, double scale) {
  return logistic_sigmoid(-(k - 0.5 - loc) / scale);
}

namespace ag {

// Per-element code length -log2 P(bin around value - mean), with P the unit
// Gaussian bin mass at scale sigma. Used as the differentiable rate term;
// value is typically latent + uniform noise. Hand-derived gradients for all
// three inputs.
template <typename T>
Var<T> gaussian_bits(const Var<T>& value, const Var<T>& mean, const Var<T>& sigma) {
  require_same_shape(value->value, mean->value, "gaussian_bits");
  require_same_shape(value->value, sigma->value, "gaussian_bits");
  const size_t n = value->value.size();
  TensorT<T> out = value->value;
  for (size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(value->value.data[i]) - mean->value.data[i];
    const double s = sigma->value.data[i];
    const double p = std::max(discretized_gaussian_pmf(d, s), kPmfFloor);
    out.data[i] = static_cast<T>(-std::log2(p));
  }
  return make_op<T>(std::move(out), {value, mean, sigma}, [](Node<T>& node) {
    const auto& val = node.parents[0]->value;
    const auto& mu = node.parents[1]->value;
    const auto& sg = node.parents[2]->value;
    const double inv_sqrt2pi = 0.39894228040143267794;
    for (size_t i = 0; i < val.size(); ++i) {
      const double d = static_cast<double>(val.data[i]) - mu.data[i];
      const double s = sg.data[i];
      const double p = std::max(discretized_gaussian_pmf(d, s), kPmfFloor);
      const double zu = (d + 0.5) / s;
      const double zl = (d - 0.5) / s;
      const double pu = inv_sqrt2pi * std::exp(-0.5 * zu * zu);
      const double pl = inv_sqrt2pi * std::exp(-0.5 * zl * zl);
      const double dp_dd = (pu - pl) / s;
      const double dp_ds = -(zu * pu - zl * pl) / s;
      const double coef = -kLog2E / p * node.grad.data[i];
      if (node.parents[0]->requires_grad)
        node.parents[0]->g().data[i] += static_cast<T>(coef * dp_dd);
      if (node.parents[1]->requires_grad)
        node.parents[1]->g().data[i] += static_cast<T>(-coef * dp_dd);
      if (node.parents[2]->requires_grad)
        node.parents[2]->g().data[i] += static_cast<T>(coef * dp_ds);
    }
  });
}

// Same for the logistic prior; loc and scale are (1, C, 1, 1) and broadcast
// over batch and spatial dims, their gradients reduce per channel.
template <typename T>
Var<T> logistic_bits(const Var<T>& value, const Var<T>& loc, const Var<T>& scale) {
  const auto& v = value->value;
  if (loc->value.c != v.c || loc->value.b != 1 || loc->value.h != 1 || loc->value.w != 1)
    throw DimensionError("logistic_bits: loc must be (1,C,1,1)");
  require_same_shape(loc->value, scale->value, "logistic_bits");
  TensorT<T> out = v;
  for (int bi = 0; bi < v.b; ++bi)
    for (int ci = 0; ci < v.c; ++ci) {
      const double l = loc->value.at(0, ci, 0, 0);
      const double s = scale->value.at(0, ci, 0, 0);
      if (!(s > 0)) throw IntegrityError("logistic_bits: non-positive scale");
      for (int hi = 0; hi < v.h; ++hi)
        for (int wi = 0; wi < v.w; ++wi) {
          const double p = std::max(logistic_pmf(v.at(bi, ci, hi, wi), l, s), kPmfFloor);
          out.at(bi, ci, hi, wi) = static_cast<T>(-std::log2(p));
        }
    }
  return make_op<T>(std::move(out), {value, loc, scale}, [](Node<T>& node) {
    const auto& v = node.parents[0]->value;
    const auto& lv = node.parents[1]->value;
    const auto& sv = node.parents[2]->value;
    for (int bi = 0; bi < v.b; ++bi)
      for (int ci = 0; ci < v.c; ++ci) {
        const double l = lv.at(0, ci, 0, 0);
        const double s = sv.at(0, ci, 0, 0);
        for (int hi = 0; hi < v.h; ++hi)
          for (int wi = 0; wi < v.w; ++wi) {
            const double d = static_cast<double>(v.at(bi, ci, hi, wi)) - l;
            const double a = (d - 0.5) / s;
            const double b = (d + 0.5) / s;
            const double sa = logistic_sigmoid(a);
            const double sb = logistic_sigmoid(b);
            const double da = sa * (1.0 - sa);
            const double db = sb * (1.0 - sb);
            const double p = std::max(logistic_pmf(d + l, l, s), kPmfFloor);
            const double dp_dd = (db - da) / s;
            const double dp_ds = -(b * db - a * da) / s;
            const double coef = -kLog2E / p * node.grad.at(bi, ci, hi, wi);
            if (node.parents[0]->requires_grad)
              node.parents[0]->g().at(bi, ci, hi, wi) += static_cast<T>(coef * dp_dd);
            if (node.parents[1]->requires_grad)
              node.parents[1]->g().at(0, ci, 0, 0) += static_cast<T>(-coef * dp_dd);
            if (node.parents[2]->requires_grad)
              node.parents[2]->g().at(0, ci, 0, 0) += static_cast<T>(coef * dp_ds);
          }
      }
  });
}

}  // namespace ag
}  // namespace dcae

#pragma once
#include <functional>
#include <string>
#include <vector>

#include "dcae/autograd.hpp"

// Finite-difference verification of the tape's analytic gradients. The
// fragment is evaluated in double precision; central differences are the
// oracle, never the mechanism.

namespace dcae {

struct NamedTensor {
  std::string name;
  TensorD value;
};

using Fragment = std::function<ag::Var<double>(const std::vector<ag::Var<double>>&)>;

// Returns the worst relative error over every element of every input, where
// rel = |a - n| / max(1e-8, |a| + |n|). Throws IntegrityError naming the
// offending tensor if an analytic gradient is non-finite.
//
// Discrepancies below the roundoff floor of the central difference itself
// (eps * |loss| / 2h, with margin) are not measurable and do not count; a
// genuinely wrong gradient exceeds that floor by orders of magnitude.
inline double grad_check(std::vector<NamedTensor> inputs, const Fragment& fragment,
                         double step = 1e-4) {
  std::vector<ag::Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (auto& in : inputs) leaves.push_back(ag::leaf(in.value, true));
  auto loss = fragment(leaves);
  if (loss->value.size() != 1) throw DimensionError("grad_check: fragment must return a scalar");
  ag::backward(loss);

  std::vector<TensorD> analytic;
  for (size_t i = 0; i < leaves.size(); ++i) {
    TensorD g = leaves[i]->grad.size() ? leaves[i]->grad
                                       : TensorD::zeros(inputs[i].value.b, inputs[i].value.c,
                                                        inputs[i].value.h, inputs[i].value.w);
    if (!g.all_finite())
      throw IntegrityError("grad_check: non-finite gradient for " + inputs[i].name);
    analytic.push_back(std::move(g));
  }

  auto eval = [&](const std::vector<NamedTensor>& pt) {
    std::vector<ag::Var<double>> ls;
    ls.reserve(pt.size());
    for (auto& in : pt) ls.push_back(ag::leaf(in.value, false));
    return fragment(ls)->value.data[0];
  };

  const double fd_floor = 64.0 * 2.220446049250313e-16 *
                          std::max(1.0, std::abs(loss->value.data[0])) / (2.0 * step);
  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (size_t j = 0; j < inputs[i].value.size(); ++j) {
      const double orig = inputs[i].value.data[j];
      inputs[i].value.data[j] = orig + step;
      const double up = eval(inputs);
      inputs[i].value.data[j] = orig - step;
      const double dn = eval(inputs);
      inputs[i].value.data[j] = orig;
      const double numeric = (up - dn) / (2.0 * step);
      const double a = analytic[i].data[j];
      if (std::abs(a - numeric) <= fd_floor) continue;
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

}  // namespace dcae

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dcae/autograd.hpp"
#include "dcae/entropy.hpp"
#include "dcae/gradcheck.hpp"
#include "dcae/kernels.hpp"
#include "dcae/tensor.hpp"

using namespace dcae;

namespace {

// Independent convolution oracle: materializes the zero-padded input, then
// takes plain dot products. Deliberately not sharing code with the kernel.
template <typename T>
TensorT<T> conv_oracle(const TensorT<T>& x, const TensorT<T>& w,
                       const TensorT<std::type_identity_t<T>>* bias, int stride, int pad) {
  TensorT<T> padded(x.b, x.c, x.h + 2 * pad, x.w + 2 * pad);
  for (int b = 0; b < x.b; ++b)
    for (int c = 0; c < x.c; ++c)
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j) padded.at(b, c, i + pad, j + pad) = x.at(b, c, i, j);
  const int k = w.h;
  const int oh = (x.h + 2 * pad - k) / stride + 1;
  const int ow = (x.w + 2 * pad - k) / stride + 1;
  TensorT<T> out(x.b, w.b, oh, ow);
  for (int b = 0; b < x.b; ++b)
    for (int co = 0; co < w.b; ++co)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = bias ? bias->data[co] : 0.0;
          for (int c = 0; c < x.c; ++c)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v)
                acc += double(padded.at(b, c, i * stride + u, j * stride + v)) *
                       double(w.at(co, c, u, v));
          out.at(b, co, i, j) = T(acc);
        }
  return out;
}

Tensor random_tensor(int b, int c, int h, int w, uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(b, c, h, w);
  Rng rng(seed);
  fill_uniform(t, rng, lo, hi);
  return t;
}

TensorD random_tensord(int b, int c, int h, int w, uint64_t seed, double lo = -1.0,
                       double hi = 1.0) {
  TensorD t(b, c, h, w);
  Rng rng(seed);
  fill_uniform(t, rng, lo, hi);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) acc += double(a.data[i]) * b.data[i];
  return acc;
}

}  // namespace

TEST_CASE("conv2d: all-ones 2x2 input with 3x3 ones kernel, pad 1") {
  Tensor x = Tensor::full(1, 1, 2, 2, 1.0f);
  Tensor w = Tensor::full(1, 1, 3, 3, 1.0f);
  Tensor b(1, 1, 1, 1);
  Tensor out = conv2d(x, w, &b, 1, 1);
  REQUIRE(out.h == 2);
  REQUIRE(out.w == 2);
  for (float v : out.data) CHECK(v == doctest::Approx(4.0f));
}

TEST_CASE("conv2d: 1x1 identity kernel is the identity") {
  Tensor x = random_tensor(2, 3, 5, 4, 11);
  Tensor w(3, 3, 1, 1);
  for (int i = 0; i < 3; ++i) w.at(i, i, 0, 0) = 1.0f;
  Tensor out = conv2d(x, w, nullptr, 1, 0);
  for (size_t i = 0; i < x.size(); ++i) CHECK(out.data[i] == x.data[i]);
}

TEST_CASE("conv2d: random case matches the padded-dot-product oracle") {
  Tensor x = random_tensor(1, 3, 8, 8, 42);
  Tensor w = random_tensor(4, 3, 3, 3, 43);
  Tensor b = random_tensor(1, 4, 1, 1, 44);
  b.b = 4, b.c = 1;  // bias viewed as 4 entries
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      Tensor got = conv2d(x, w, &b, stride, pad);
      Tensor want = conv_oracle(x, w, &b, stride, pad);
      REQUIRE(got.size() == want.size());
      for (size_t i = 0; i < got.size(); ++i)
        CHECK(std::abs(got.data[i] - want.data[i]) < 1e-5);
    }
}

TEST_CASE("conv2d: shape mismatch raises a dimension error naming both shapes") {
  Tensor x(1, 2, 4, 4);
  Tensor w(3, 5, 3, 3);
  CHECK_THROWS_AS(conv2d(x, w, nullptr, 1, 1), DimensionError);
  try {
    conv2d(x, w, nullptr, 1, 1);
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("1x2x4x4") != std::string::npos);
    CHECK(msg.find("3x5x3x3") != std::string::npos);
  }
}

TEST_CASE("conv2d_transpose: single pixel stamps the kernel once") {
  Tensor x = Tensor::full(1, 1, 1, 1, 1.0f);
  Tensor w = Tensor::full(1, 1, 2, 2, 1.0f);
  Tensor out = conv2d_transpose(x, w, nullptr, 2, 0);
  REQUIRE(out.h == 2);
  REQUIRE(out.w == 2);
  for (float v : out.data) CHECK(v == 1.0f);
}

TEST_CASE("conv2d_transpose: zero input gives bias broadcast") {
  Tensor x(1, 2, 3, 3);
  Tensor w = random_tensor(2, 3, 4, 4, 7);
  Tensor bias(3, 1, 1, 1);
  bias.data = {0.5f, -1.0f, 2.0f};
  Tensor out = conv2d_transpose(x, w, &bias, 2, 1);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < out.h; ++i)
      for (int j = 0; j < out.w; ++j) CHECK(out.at(0, c, i, j) == bias.data[c]);
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    Tensor a = random_tensor(1, 3, 9, 7, seed * 10);
    Tensor w = random_tensor(4, 3, 3, 3, seed * 10 + 1);
    for (int stride : {1, 2}) {
      Tensor fwd = conv2d(a, w, nullptr, stride, 1);
      Tensor b = random_tensor(fwd.b, fwd.c, fwd.h, fwd.w, seed * 10 + 2);
      Tensor back = conv2d_transpose(b, w, nullptr, stride, 1);
      // The transpose can be one pixel short of the original when strided
      // outputs do not tile exactly; sizes agree for these shapes.
      REQUIRE(back.h == a.h);
      REQUIRE(back.w == a.w);
      const double lhs = dot(fwd, b);
      const double rhs = dot(a, back);
      CHECK(std::abs(lhs - rhs) <= 1e-4 * std::max(1.0, std::abs(lhs)));
    }
  }
}

TEST_CASE("dwconv3x3: centre-one kernel preserves a constant image") {
  Tensor x = Tensor::full(1, 2, 4, 4, 3.25f);
  Tensor w(2, 1, 3, 3);
  w.at(0, 0, 1, 1) = 1.0f;
  w.at(1, 0, 1, 1) = 1.0f;
  Tensor out = dwconv3x3(x, w, nullptr);
  for (float v : out.data) CHECK(v == doctest::Approx(3.25f));
}

TEST_CASE("dwconv3x3: channels are independent") {
  Tensor x = random_tensor(1, 2, 5, 5, 3);
  for (int i = 0; i < 5 * 5; ++i) x.data[1 * 25 + i] = 0.0f;  // zero channel 1
  Tensor w = random_tensor(2, 1, 3, 3, 4);
  Tensor bias(2, 1, 1, 1);
  bias.data = {0.0f, 7.5f};
  Tensor out = dwconv3x3(x, w, &bias);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK(out.at(0, 1, i, j) == 7.5f);
}

TEST_CASE("dwconv3x3: random case matches per-channel oracle") {
  Tensor x = random_tensor(2, 3, 6, 5, 8);
  Tensor w = random_tensor(3, 1, 3, 3, 9);
  Tensor got = dwconv3x3(x, w, nullptr);
  // oracle: run each channel through the dense conv oracle separately
  for (int c = 0; c < 3; ++c) {
    Tensor xc(2, 1, 6, 5), wc(1, 1, 3, 3);
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 5; ++j) xc.at(b, 0, i, j) = x.at(b, c, i, j);
    for (int u = 0; u < 3; ++u)
      for (int v = 0; v < 3; ++v) wc.at(0, 0, u, v) = w.at(c, 0, u, v);
    Tensor want = conv_oracle(xc, wc, nullptr, 1, 1);
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 5; ++j)
          CHECK(std::abs(got.at(b, c, i, j) - want.at(b, 0, i, j)) < 1e-5);
  }
}

TEST_CASE("linear: identity weight and hand-computed row") {
  Tensor x(1, 2, 1, 1);
  x.data = {1.0f, 2.0f};
  Tensor w(2, 2, 1, 1);
  w.at(0, 0, 0, 0) = 1.0f;
  w.at(1, 1, 0, 0) = 1.0f;
  Tensor out = linear(x, w, nullptr);
  CHECK(out.data[0] == 1.0f);
  CHECK(out.data[1] == 2.0f);

  Tensor bias(2, 1, 1, 1);
  bias.data = {3.0f, -3.0f};
  Tensor out2 = linear(x, w, &bias);
  CHECK(out2.data[0] == 4.0f);
  CHECK(out2.data[1] == -1.0f);
}

TEST_CASE("linear: random case matches matrix multiply oracle") {
  Tensor x = random_tensor(2, 5, 3, 2, 21);
  Tensor w = random_tensor(5, 4, 1, 1, 22);
  Tensor out = linear(x, w, nullptr);
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j)
        for (int co = 0; co < 4; ++co) {
          double acc = 0;
          for (int ci = 0; ci < 5; ++ci)
            acc += double(x.at(b, ci, i, j)) * double(w.at(ci, co, 0, 0));
          CHECK(std::abs(out.at(b, co, i, j) - acc) < 1e-5);
        }
}

TEST_CASE("softmax: symmetry, stability and row sums") {
  Tensor x(1, 2, 1, 1);
  Tensor s = softmax_channels(x);
  CHECK(s.data[0] == doctest::Approx(0.5));
  CHECK(s.data[1] == doctest::Approx(0.5));

  x.data = {1000.0f, 0.0f};
  s = softmax_channels(x);
  CHECK(s.all_finite());
  CHECK(std::abs(s.data[0] - 1.0) < 1e-6);
  CHECK(std::abs(s.data[1] - 0.0) < 1e-6);

  Tensor r = random_tensor(3, 7, 2, 2, 33, -4.0, 4.0);
  Tensor sr = softmax_channels(r);
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double sum = 0;
        for (int c = 0; c < 7; ++c) {
          CHECK(sr.at(b, c, i, j) >= 0.0f);
          sum += sr.at(b, c, i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
      }
}

TEST_CASE("softmax: invariant to adding a constant to a row") {
  Tensor r = random_tensor(1, 5, 1, 1, 44, -2.0, 2.0);
  Tensor shifted = r;
  for (auto& v : shifted.data) v += 17.5f;
  Tensor a = softmax_channels(r);
  Tensor b = softmax_channels(shifted);
  for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-6);
}

TEST_CASE("softmax: random row matches wide-precision oracle") {
  Tensor r = random_tensor(1, 9, 1, 1, 55, -3.0, 3.0);
  Tensor s = softmax_channels(r);
  double denom = 0;
  for (int c = 0; c < 9; ++c) denom += std::exp(double(r.data[c]));
  for (int c = 0; c < 9; ++c)
    CHECK(std::abs(double(s.data[c]) - std::exp(double(r.data[c])) / denom) < 1e-6);
}

TEST_CASE("kernels are deterministic across repeated invocations") {
  Tensor x = random_tensor(1, 4, 8, 8, 77);
  Tensor w = random_tensor(6, 4, 3, 3, 78);
  Tensor a = conv2d(x, w, nullptr, 2, 1);
  Tensor b = conv2d(x, w, nullptr, 2, 1);
  CHECK(a.data == b.data);
}

// ---- gradient checks -------------------------------------------------------

TEST_CASE("grad check: linear layer with sum loss reaches 1e-6") {
  std::vector<NamedTensor> in = {
      {"x", random_tensord(1, 3, 2, 2, 101)},
      {"w", random_tensord(3, 4, 1, 1, 102)},
      {"b", random_tensord(4, 1, 1, 1, 103)},
  };
  double err = grad_check(in, [](const std::vector<ag::Var<double>>& v) {
    return ag::sum_all(ag::linear_op(v[0], v[1], v[2]));
  });
  CHECK(err <= 1e-6);
}

TEST_CASE("grad check: constant fragment has exactly zero input gradient") {
  std::vector<NamedTensor> in = {{"x", random_tensord(1, 2, 2, 2, 104)}};
  auto x = ag::leaf(in[0].value, true);
  auto c = ag::constant(TensorD::full(1, 1, 1, 1, 3.0));
  auto loss = ag::scale(c, 2.0);
  // loss does not depend on x at all
  auto sum = ag::add(loss, ag::scale(ag::sum_all(ag::detach(x)), 1.0));
  ag::backward(sum);
  CHECK(x->grad.size() == 0);  // never touched by the sweep
}

TEST_CASE("grad check: conv2d") {
  std::vector<NamedTensor> in = {
      {"x", random_tensord(1, 2, 4, 4, 105)},
      {"w", random_tensord(3, 2, 3, 3, 106)},
      {"b", random_tensord(3, 1, 1, 1, 107)},
  };
  double err = grad_check(in, [](const std::vector<ag::Var<double>>& v) {
    // squared sum makes the loss nonlinear in the output
    auto y = ag::conv2d_op(v[0], v[1], v[2], 2, 1);
    return ag::sum_all(ag::mul(y, y));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("grad check: conv2d_transpose") {
  std::vector<NamedTensor> in = {
      {"x", random_tensord(1, 3, 3, 3, 108)},
      {"w", random_tensord(3, 2, 4, 4, 109)},
      {"b", random_tensord(2, 1, 1, 1, 110)},
  };
  double err = grad_check(in, [](const std::vector<ag::Var<double>>& v) {
    auto y = ag::conv2d_transpose_op(v[0], v[1], v[2], 2, 1);
    return ag::sum_all(ag::mul(y, y));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("grad check: dwconv3x3") {
  std::vector<NamedTensor> in = {
      {"x", random_tensord(1, 3, 4, 4, 111)},
      {"w", random_tensord(3, 1, 3, 3, 112)},
      {"b", random_tensord(3, 1, 1, 1, 113)},
  };
  double err = grad_check(in, [](const std::vector<ag::Var<double>>& v) {
    auto y = ag::dwconv3x3_op(v[0], v[1], v[2]);
    return ag::sum_all(ag::mul(y, y));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("grad check: softmax, gelu, sigmoid, tanh, softplus chain") {
  std::vector<NamedTensor> in = {{"x", random_tensord(2, 5, 1, 1, 114, -2.0, 2.0)}};
  double err = grad_check(in, [](const std::vector<ag::Var<double>>& v) {
    auto s = ag::softmax_channels_op(ag::gelu(v[0]));
    auto t = ag::tanh_(ag::sigmoid(ag::softplus(s)));
    return ag::sum_all(ag::mul(t, t));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("grad check: matmul, matmul_nt, div_scalar_var, pooling ops") {
  std::vector<NamedTensor> in = {
      {"a", random_tensord(3, 4, 1, 1, 115)},
      {"b", random_tensord(5, 4, 1, 1, 116)},
      {"t", {[] {
         TensorD t(1, 1, 1, 1);
         t.data[0] = 1.7;
         return t;
       }()}},
      {"x", random_tensord(1, 3, 2, 3, 117)},
  };
  double err = grad_check(in, [](const std::vector<ag::Var<double>>& v) {
    auto logits = ag::div_scalar_var(ag::matmul_nt(v[0], v[1]), v[2]);
    auto att = ag::softmax_channels_op(logits);
    auto out = ag::matmul(att, v[1]);
    auto pooled = ag::concat_c<double>({ag::channel_mean(v[3]), ag::channel_max(v[3])});
    auto rows = ag::to_rows(pooled);
    return ag::add(ag::sum_all(ag::mul(out, out)), ag::sum_all(ag::mul(rows, rows)));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("grad check: gaussian and logistic rate terms") {
  std::vector<NamedTensor> in = {
      {"val", random_tensord(1, 2, 2, 2, 118, -1.5, 1.5)},
      {"mean", random_tensord(1, 2, 2, 2, 119, -0.5, 0.5)},
      {"sigma_raw", random_tensord(1, 2, 2, 2, 120, -0.5, 1.0)},
      {"loc", random_tensord(1, 2, 1, 1, 121, -0.3, 0.3)},
      {"scale_raw", random_tensord(1, 2, 1, 1, 122, 0.2, 1.0)},
  };
  double err = grad_check(in, [](const std::vector<ag::Var<double>>& v) {
    auto sigma = ag::clamp_min(ag::softplus(v[2]), kScaleFloor);
    auto bits_g = ag::gaussian_bits(v[0], v[1], sigma);
    auto scale = ag::softplus(v[4]);
    auto bits_l = ag::logistic_bits(v[0], v[3], scale);
    return ag::add(ag::sum_all(bits_g), ag::sum_all(bits_l));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("grad check: non-finite gradient raises integrity error with name") {
  std::vector<NamedTensor> in = {{"bad_param", TensorD::full(1, 1, 1, 1, 0.0)}};
  auto frag = [](const std::vector<ag::Var<double>>& v) {
    // 1/x at x=0 -> inf in forward grad
    auto one = ag::constant(TensorD::full(1, 1, 1, 1, 1.0));
    return ag::sum_all(ag::div_scalar_var(one, v[0]));
  };
  CHECK_THROWS_AS(grad_check(in, frag), Error);
}

// ---- pmf scalar oracles ----------------------------------------------------

TEST_CASE("discretized gaussian pmf values") {
  CHECK(discretized_gaussian_pmf(0, 1.0) == doctest::Approx(0.382925).epsilon(1e-5));
  // exact symmetry
  for (int k = 1; k < 6; ++k)
    CHECK(discretized_gaussian_pmf(k, 0.7) == discretized_gaussian_pmf(-k, 0.7));
  // monotone in sigma at the centre
  CHECK(discretized_gaussian_pmf(0, 100.0) < discretized_gaussian_pmf(0, 1.0));
  CHECK_THROWS_AS(discretized_gaussian_pmf(0, 0.05), IntegrityError);
}

TEST_CASE("logistic pmf values and mass") {
  CHECK(logistic_pmf(0, 0.0, 1.0) == doctest::Approx(0.244919).epsilon(1e-5));
  // shift equivariance
  CHECK(logistic_pmf(3, 3.0, 0.8) == doctest::Approx(logistic_pmf(0, 0.0, 0.8)));
  // mass accumulates to 1
  double total = 0;
  const double s = 1.3, l = 0.7;
  const int K = int(20 * s + std::abs(l)) + 1;
  for (int k = -K; k <= K; ++k) total += logistic_pmf(k, l, s);
  CHECK(total >= 0.999);
  // strictly positive far out
  CHECK(logistic_pmf(30, 0.0, 1.0) > 0.0);
  CHECK_THROWS_AS(logistic_pmf(0, 0.0, -1.0), IntegrityError);
}

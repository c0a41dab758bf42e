#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dcae/gradcheck.hpp"
#include "dcae/model.hpp"

using namespace dcae;

namespace {

Tensor random_tensor(int b, int c, int h, int w, uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(b, c, h, w);
  Rng rng(seed);
  fill_uniform(t, rng, lo, hi);
  return t;
}

// grad_check plumbing for model fragments: inputs are all parameters plus one
// data tensor appended last.
std::vector<NamedTensor> model_inputs(const DcaeModel<double>& m, const TensorD& data) {
  std::vector<NamedTensor> in;
  for (const auto& e : m.params.entries) in.push_back({e.name, e.value});
  in.push_back({"input", data});
  return in;
}

}  // namespace

TEST_CASE("profiles validate and expose the documented dictionary shape") {
  ModelConfig paper = make_profile("paper");
  CHECK(paper.dict_entries == 128);
  CHECK(paper.dict_channels == 640);
  CHECK(paper.y_channels == 320);
  CHECK(paper.z_channels == 192);
  CHECK(paper.head_dim == 32);
  CHECK(paper.slice_count == 5);
  ModelConfig tiny = make_profile("tiny");
  CHECK(tiny.y_channels % tiny.slice_count == 0);
  CHECK_THROWS_AS(make_profile("nope"), ConfigError);

  ModelConfig bad = tiny;
  bad.slice_count = 5;  // 32 % 5 != 0
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny;
  bad.dict_entries = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("parameter names are unique and registration is deterministic") {
  DcaeModel<float> a(make_profile("tiny"), 7);
  DcaeModel<float> b(make_profile("tiny"), 7);
  REQUIRE(a.params.entries.size() == b.params.entries.size());
  for (size_t i = 0; i < a.params.entries.size(); ++i) {
    CHECK(a.params.entries[i].name == b.params.entries[i].name);
    CHECK(a.params.entries[i].value.data == b.params.entries[i].value.data);
  }
}

TEST_CASE("analyze/synthesize shapes follow the profile contract") {
  ModelConfig cfg = make_profile("tiny");
  DcaeModel<float> m(cfg, 3);
  m.begin_pass(false);
  Tensor x = random_tensor(1, 3, 64, 64, 5, 0.0, 1.0);
  auto y = m.analyze(ag::constant(x));
  CHECK(y->value.c == 32);
  CHECK(y->value.h == 4);
  CHECK(y->value.w == 4);
  auto z = m.hyper_analyze(y);
  CHECK(z->value.c == 16);
  CHECK(z->value.h == 1);
  CHECK(z->value.w == 1);
  auto f_z = m.hyper_synthesize(z);
  CHECK(f_z->value.c == 64);
  CHECK(f_z->value.h == 4);
  CHECK(f_z->value.w == 4);
  auto xh = m.synthesize(y);
  CHECK(xh->value.c == 3);
  CHECK(xh->value.h == 64);
  CHECK(xh->value.w == 64);

  CHECK_THROWS_AS(m.analyze(ag::constant(random_tensor(1, 3, 60, 64, 6))), DimensionError);
}

TEST_CASE("zero image with zero biases yields a zero latent") {
  DcaeModel<float> m(make_profile("micro"), 1);
  // biases start at zero; zero out the conv weights' effect by zero input
  m.begin_pass(false);
  Tensor x(1, 3, 8, 8);
  auto y = m.analyze(ag::constant(x));
  // gelu(0) = 0 and conv of zeros is bias = 0
  for (float v : y->value.data) CHECK(v == 0.0f);
}

TEST_CASE("analyze is bit-identical across repeated runs") {
  DcaeModel<float> m(make_profile("tiny"), 11);
  Tensor x = random_tensor(1, 3, 64, 64, 12, 0.0, 1.0);
  m.begin_pass(false);
  auto y1 = m.analyze(ag::constant(x));
  m.begin_pass(false);
  auto y2 = m.analyze(ag::constant(x));
  CHECK(y1->value.data == y2->value.data);
}

TEST_CASE("msfa: m=0 equals a plain linear projection") {
  ModelConfig cfg = make_profile("micro");
  cfg.msfa_layers = 0;
  DcaeModel<float> m(cfg, 21);
  m.begin_pass(false);
  Tensor x = random_tensor(1, 2 * cfg.y_channels, 3, 3, 22);
  auto out = m.slices[0].msfa(m.params, ag::constant(x));
  auto direct =
      ag::linear_op(ag::constant(x), m.params.var(m.slices[0].msfa.merge.w), ag::Var<float>());
  CHECK(out->value.data == direct->value.data);
}

TEST_CASE("msfa: spatial attention map lies in (0,1) and constant input gives constant map") {
  ModelConfig cfg = make_profile("micro");
  cfg.msfa_layers = 2;
  DcaeModel<float> m(cfg, 23);
  m.begin_pass(false);
  const int c_ctx = 2 * cfg.y_channels;
  SpatialAttention<float>& sa = m.slices[0].msfa.sa;
  Tensor r = random_tensor(1, cfg.c_ms, 5, 5, 24);
  auto map = sa.map(m.params, ag::constant(r));
  CHECK(map->value.c == 1);
  for (float v : map->value.data) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  // constant input: every spatial position sees the same pooled stats away
  // from borders; interior map values must match
  Tensor c = Tensor::full(1, cfg.c_ms, 9, 9, 0.37f);
  auto cmap = sa.map(m.params, ag::constant(c));
  const float centre = cmap->value.at(0, 0, 4, 4);
  CHECK(cmap->value.at(0, 0, 3, 4) == doctest::Approx(centre));
  CHECK(cmap->value.at(0, 0, 4, 3) == doctest::Approx(centre));

  // full msfa output matches composing the pieces by hand
  Tensor x = random_tensor(1, c_ctx, 4, 4, 25);
  auto got = m.slices[0].msfa(m.params, ag::constant(x));
  {
    auto cur = ag::constant(x);
    std::vector<ag::Var<float>> feats = {cur};
    for (const auto& e : m.slices[0].msfa.econvs) {
      cur = e(m.params, cur);
      feats.push_back(cur);
    }
    auto merged = m.slices[0].msfa.merge(m.params, ag::concat_c(feats));
    auto want = ag::mul_map(merged, sa.map(m.params, merged));
    REQUIRE(got->value.size() == want->value.size());
    for (size_t i = 0; i < got->value.size(); ++i)
      CHECK(std::abs(got->value.data[i] - want->value.data[i]) < 1e-5);
  }
}

TEST_CASE("dca: attention rows sum to one; outputs stay in the dictionary envelope") {
  ModelConfig cfg = make_profile("micro");
  cfg.dict_entries = 6;
  DcaeModel<float> m(cfg, 31);
  m.begin_pass(false);
  Tensor x_ms = random_tensor(1, cfg.c_ms, 3, 3, 32);
  ag::Var<float> pre_ffn;
  TensorT<float> rows;
  auto out = m.dict_attention(0, ag::constant(x_ms), &pre_ffn, &rows);
  CHECK(out->value.c == cfg.dict_channels);
  CHECK(out->value.h == 3);

  const int positions = rows.b;
  REQUIRE(positions == 9);
  for (int p = 0; p < positions; ++p) {
    double sum = 0;
    for (int n = 0; n < cfg.dict_entries; ++n) {
      CHECK(rows.at(p, n, 0, 0) >= 0.0f);
      sum += rows.at(p, n, 0, 0);
    }
    CHECK(std::abs(sum - 1.0) < 1e-5);
  }

  // convexity: each pre-FFN coordinate within the dictionary column min/max
  const auto& dict = m.params.entries[size_t(m.dict)].value;
  for (int p = 0; p < positions; ++p)
    for (int c = 0; c < cfg.dict_channels; ++c) {
      float lo = dict.at(0, c, 0, 0), hi = lo;
      for (int n = 1; n < cfg.dict_entries; ++n) {
        lo = std::min(lo, dict.at(n, c, 0, 0));
        hi = std::max(hi, dict.at(n, c, 0, 0));
      }
      const float v = pre_ffn->value.at(p, c, 0, 0);
      CHECK(v >= lo - 1e-5f);
      CHECK(v <= hi + 1e-5f);
    }
}

TEST_CASE("dca: a single dictionary entry receives weight exactly one") {
  ModelConfig cfg = make_profile("micro");
  cfg.dict_entries = 1;
  DcaeModel<float> m(cfg, 41);
  m.begin_pass(false);
  Tensor x_ms = random_tensor(1, cfg.c_ms, 2, 2, 42);
  ag::Var<float> pre_ffn;
  TensorT<float> rows;
  m.dict_attention(0, ag::constant(x_ms), &pre_ffn, &rows);
  for (int p = 0; p < rows.b; ++p) CHECK(rows.at(p, 0, 0, 0) == 1.0f);
  const auto& dict = m.params.entries[size_t(m.dict)].value;
  for (int p = 0; p < pre_ffn->value.b; ++p)
    for (int c = 0; c < cfg.dict_channels; ++c)
      CHECK(pre_ffn->value.at(p, c, 0, 0) == doctest::Approx(dict.at(0, c, 0, 0)));
}

TEST_CASE("dca: equal logits average the value rows") {
  ModelConfig cfg = make_profile("micro");
  cfg.dict_entries = 5;
  DcaeModel<float> m(cfg, 43);
  // zero query projection -> all logits equal -> uniform attention
  auto& qw = m.params.entries[size_t(m.params.find("slice0.dca.q.w"))].value;
  std::fill(qw.data.begin(), qw.data.end(), 0.0f);
  m.begin_pass(false);
  Tensor x_ms = random_tensor(1, cfg.c_ms, 2, 2, 44);
  ag::Var<float> pre_ffn;
  m.dict_attention(0, ag::constant(x_ms), &pre_ffn, nullptr);
  const auto& dict = m.params.entries[size_t(m.dict)].value;
  for (int c = 0; c < cfg.dict_channels; ++c) {
    double mean = 0;
    for (int n = 0; n < cfg.dict_entries; ++n) mean += dict.at(n, c, 0, 0);
    mean /= cfg.dict_entries;
    for (int p = 0; p < pre_ffn->value.b; ++p)
      CHECK(pre_ffn->value.at(p, c, 0, 0) == doctest::Approx(mean).epsilon(1e-5));
  }
}

TEST_CASE("entropy head: zero weights give mu 0 and sigma softplus(0)") {
  ModelConfig cfg = make_profile("micro");
  DcaeModel<float> m(cfg, 51);
  for (auto& e : m.params.entries)
    if (e.name.rfind("slice0.fe", 0) == 0) std::fill(e.value.data.begin(), e.value.data.end(), 0.0f);
  m.begin_pass(false);
  Tensor fz = random_tensor(1, 2 * cfg.y_channels, 2, 2, 52);
  auto cond = m.slice_condition(0, ag::constant(fz), {});
  for (float v : cond.mean->value.data) CHECK(v == 0.0f);
  for (float v : cond.scale->value.data)
    CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("entropy head: sigma never below the floor") {
  ModelConfig cfg = make_profile("micro");
  DcaeModel<float> m(cfg, 53);
  // push the raw scale head bias very negative
  auto& bias = m.params.entries[size_t(m.params.find("slice0.fe.2.b"))].value;
  std::fill(bias.data.begin(), bias.data.end(), -100.0f);
  m.begin_pass(false);
  Tensor fz = random_tensor(1, 2 * cfg.y_channels, 2, 2, 54);
  auto cond = m.slice_condition(0, ag::constant(fz), {});
  for (float v : cond.scale->value.data) CHECK(v >= 0.11f);
}

TEST_CASE("lrp: zero head keeps yhat; correction bounded by 0.5") {
  ModelConfig cfg = make_profile("micro");
  DcaeModel<float> m(cfg, 61);
  for (auto& e : m.params.entries)
    if (e.name.rfind("slice0.lrp", 0) == 0) std::fill(e.value.data.begin(), e.value.data.end(), 0.0f);
  m.begin_pass(false);
  const int sc = cfg.slice_channels();
  Tensor fz = random_tensor(1, 2 * cfg.y_channels, 2, 2, 62);
  Tensor yhat = random_tensor(1, sc, 2, 2, 63);
  auto cond = m.slice_condition(0, ag::constant(fz), {});
  auto ybar = m.slice_lrp(0, ag::constant(fz), {}, cond.dict_feat, ag::constant(yhat));
  CHECK(ybar->value.data == yhat.data);

  DcaeModel<float> m2(cfg, 64);
  m2.begin_pass(false);
  auto cond2 = m2.slice_condition(0, ag::constant(fz), {});
  auto ybar2 = m2.slice_lrp(0, ag::constant(fz), {}, cond2.dict_feat, ag::constant(yhat));
  for (size_t i = 0; i < yhat.size(); ++i)
    CHECK(std::abs(ybar2->value.data[i] - yhat.data[i]) < 0.5f);
}

TEST_CASE("grad check: msfa block") {
  ModelConfig cfg = make_profile("micro");
  cfg.msfa_layers = 2;
  DcaeModel<double> m(cfg, 71);
  TensorD x(1, 2 * cfg.y_channels, 2, 2);
  Rng rng(72);
  fill_uniform(x, rng, -1.0, 1.0);
  auto inputs = model_inputs(m, x);
  double err = grad_check(inputs, [&](const std::vector<ag::Var<double>>& v) {
    std::vector<ag::Var<double>> leaves(v.begin(), v.end() - 1);
    m.params.bind_leaves(leaves);
    auto out = m.slices[0].msfa(m.params, v.back());
    return ag::sum_all(ag::mul(out, out));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("grad check: full dca block including temperature") {
  ModelConfig cfg = make_profile("micro");
  DcaeModel<double> m(cfg, 73);
  TensorD x(1, cfg.c_ms, 2, 2);
  Rng rng(74);
  fill_uniform(x, rng, -1.0, 1.0);
  auto inputs = model_inputs(m, x);
  double err = grad_check(inputs, [&](const std::vector<ag::Var<double>>& v) {
    std::vector<ag::Var<double>> leaves(v.begin(), v.end() - 1);
    m.params.bind_leaves(leaves);
    auto out = m.dict_attention(0, v.back(), nullptr, nullptr);
    return ag::sum_all(ag::mul(out, out));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("grad check: entropy parameter head and lrp head") {
  ModelConfig cfg = make_profile("micro");
  DcaeModel<double> m(cfg, 75);
  const int sc = cfg.slice_channels();
  TensorD fz(1, 2 * cfg.y_channels, 2, 2);
  Rng rng(76);
  fill_uniform(fz, rng, -1.0, 1.0);
  auto inputs = model_inputs(m, fz);
  double err = grad_check(inputs, [&](const std::vector<ag::Var<double>>& v) {
    std::vector<ag::Var<double>> leaves(v.begin(), v.end() - 1);
    m.params.bind_leaves(leaves);
    auto cond = m.slice_condition(0, v.back(), {});
    auto yhat = ag::scale(ag::slice_c(v.back(), 0, sc), 0.3);
    auto ybar = m.slice_lrp(0, v.back(), {}, cond.dict_feat, yhat);
    auto s = ag::add(ag::sum_all(ag::mul(cond.mean, cond.mean)),
                     ag::sum_all(ag::mul(cond.scale, cond.scale)));
    return ag::add(s, ag::sum_all(ag::mul(ybar, ybar)));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("dictionary envelope holds for adversarial query scales") {
  ModelConfig cfg = make_profile("micro");
  cfg.dict_entries = 3;
  DcaeModel<float> m(cfg, 81);
  auto& qw = m.params.entries[size_t(m.params.find("slice0.dca.q.w"))].value;
  for (auto& v : qw.data) v *= 50.0f;  // extreme logits saturate the softmax
  m.begin_pass(false);
  Tensor x_ms = random_tensor(1, cfg.c_ms, 2, 2, 82);
  ag::Var<float> pre_ffn;
  m.dict_attention(0, ag::constant(x_ms), &pre_ffn, nullptr);
  const auto& dict = m.params.entries[size_t(m.dict)].value;
  for (int p = 0; p < pre_ffn->value.b; ++p)
    for (int c = 0; c < cfg.dict_channels; ++c) {
      float lo = dict.at(0, c, 0, 0), hi = lo;
      for (int n = 1; n < cfg.dict_entries; ++n) {
        lo = std::min(lo, dict.at(n, c, 0, 0));
        hi = std::max(hi, dict.at(n, c, 0, 0));
      }
      CHECK(pre_ffn->value.at(p, c, 0, 0) >= lo - 1e-5f);
      CHECK(pre_ffn->value.at(p, c, 0, 0) <= hi + 1e-5f);
    }
}

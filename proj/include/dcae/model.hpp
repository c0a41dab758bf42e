#pragma once
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dcae/entropy.hpp"
#include "dcae/modules.hpp"

namespace dcae {

// Architecture description. Everything needed to rebuild a model skeleton is
// in here and serialized into the model archive.
struct ModelConfig {
  std::string profile_name = "custom";
  uint8_t profile_id = 0;
  int y_channels = 32;
  int z_channels = 16;
  std::vector<int> stage_channels = {16, 24, 32};
  int downsample_factor_y = 16;
  int downsample_factor_z = 4;
  int slice_count = 4;
  int dict_entries = 32;    // N
  int dict_channels = 64;   // C_d
  int msfa_layers = 3;      // m; 0 keeps only the linear projection
  int c_ms = 64;
  int c_qk = 64;
  int head_dim = 32;
  int ffn_expansion = 2;
  int fe_hidden = 48;
  int hyper_hidden = 24;
  bool dca_enabled = true;
  uint8_t lambda_index = 3;
  float lambda = 0.013f;

  int s_total() const { return downsample_factor_y * downsample_factor_z; }
  int slice_channels() const { return y_channels / slice_count; }
  int heads() const { return c_qk / head_dim; }
  int ga_stages() const {
    int f = downsample_factor_y, n = 0;
    while (f > 1) f /= 2, ++n;
    return n;
  }
  int hyper_stages() const {
    int f = downsample_factor_z, n = 0;
    while (f > 1) f /= 2, ++n;
    return n;
  }

  void validate() const {
    auto pow2 = [](int v) { return v > 0 && (v & (v - 1)) == 0; };
    if (!pow2(downsample_factor_y) || !pow2(downsample_factor_z))
      throw ConfigError("downsample factors must be powers of two");
    if (slice_count < 1 || slice_count > 10)
      throw ConfigError("slice count must be in [1, 10]");
    if (y_channels % slice_count != 0)
      throw ConfigError("y_channels " + std::to_string(y_channels) +
                        " not divisible by slice count " + std::to_string(slice_count));
    if (static_cast<int>(stage_channels.size()) != ga_stages() - 1)
      throw ConfigError("stage_channels must list every intermediate stage width");
    if (dca_enabled) {
      if (dict_entries <= 0) throw ConfigError("dictionary must have at least one entry");
      if (c_qk % head_dim != 0) throw ConfigError("c_qk must be divisible by the head dim");
      if (dict_channels % heads() != 0)
        throw ConfigError("dict_channels must be divisible by the head count");
      if (msfa_layers < 0) throw ConfigError("msfa_layers must be >= 0");
    }
  }
};

inline ModelConfig make_profile(const std::string& name) {
  ModelConfig c;
  c.profile_name = name;
  if (name == "tiny") {
    c.profile_id = 1;
    // defaults above are the tiny profile
  } else if (name == "paper") {
    c.profile_id = 2;
    c.y_channels = 320;
    c.z_channels = 192;
    c.stage_channels = {96, 144, 256};
    c.downsample_factor_y = 16;
    c.downsample_factor_z = 4;
    c.slice_count = 5;
    c.dict_entries = 128;
    c.dict_channels = 640;
    c.msfa_layers = 3;
    c.c_ms = 640;
    c.c_qk = 640;
    c.fe_hidden = 320;
    c.hyper_hidden = 224;
  } else if (name == "micro") {
    c.profile_id = 3;
    c.y_channels = 8;
    c.z_channels = 4;
    c.stage_channels = {6};
    c.downsample_factor_y = 4;
    c.downsample_factor_z = 2;
    c.slice_count = 2;
    c.dict_entries = 4;
    c.dict_channels = 8;
    c.msfa_layers = 1;
    c.c_ms = 8;
    c.c_qk = 32;
    c.fe_hidden = 8;
    c.hyper_hidden = 6;
  } else if (name == "abl") {
    c.profile_id = 4;
    c.y_channels = 16;
    c.z_channels = 8;
    c.stage_channels = {8, 12};
    c.downsample_factor_y = 8;
    c.downsample_factor_z = 2;
    c.slice_count = 2;
    c.dict_entries = 16;
    c.dict_channels = 32;
    c.msfa_layers = 3;
    c.c_ms = 32;
    c.c_qk = 32;
    c.fe_hidden = 24;
    c.hyper_hidden = 12;
  } else {
    throw ConfigError("unknown profile: " + name);
  }
  c.validate();
  return c;
}

inline const char* profile_name_from_id(uint8_t id) {
  switch (id) {
    case 1: return "tiny";
    case 2: return "paper";
    case 3: return "micro";
    case 4: return "abl";
    default: return "custom";
  }
}

// Conditioning outputs for one slice.
template <typename T>
struct SliceCond {
  ag::Var<T> mean;
  ag::Var<T> scale;
  ag::Var<T> dict_feat;       // null when DCA is disabled
  TensorT<T> attention_rows;  // head-mean attention (positions x N); empty if disabled
};

template <typename T>
struct SliceNet {
  MsfaBlock<T> msfa;
  LinearLayer<T> q_proj, k_proj;
  int temperature = -1;  // (1, heads, 1, 1)
  LinearLayer<T> ffn1, ffn2;
  MlpHead<T> fe, lrp;
};

// The compression model: analysis/synthesis stacks, hyper stacks, the shared
// dictionary and the per-slice conditioning networks.
template <typename T>
struct DcaeModel {
  ModelConfig cfg;
  ParamStore<T> params;

  std::vector<ConvLayer<T>> ga, gs, ha, hs;
  int dict = -1;                  // (N, C_d, 1, 1)
  int prior_loc = -1;             // (1, z, 1, 1)
  int prior_scale_raw = -1;       // (1, z, 1, 1)
  std::vector<SliceNet<T>> slices;

  DcaeModel() = default;
  DcaeModel(const ModelConfig& config, uint64_t seed) { build(config, seed); }

  void build(const ModelConfig& config, uint64_t seed) {
    cfg = config;
    cfg.validate();
    params = ParamStore<T>();
    Rng rng(seed);

    const int n_ga = cfg.ga_stages();
    std::vector<int> widths = {3};
    for (int v : cfg.stage_channels) widths.push_back(v);
    widths.push_back(cfg.y_channels);
    ga.resize(n_ga);
    for (int i = 0; i < n_ga; ++i)
      ga[i].init(params, "ga." + std::to_string(i), widths[i], widths[i + 1], 5, 2, 2, false,
                 rng);
    gs.resize(n_ga);
    for (int i = 0; i < n_ga; ++i)
      gs[i].init(params, "gs." + std::to_string(i), widths[n_ga - i], widths[n_ga - i - 1], 4, 2,
                 1, true, rng);

    const int n_h = cfg.hyper_stages();
    std::vector<int> hw = {cfg.y_channels};
    for (int i = 0; i < n_h - 1; ++i) hw.push_back(cfg.hyper_hidden);
    hw.push_back(cfg.z_channels);
    ha.resize(n_h);
    for (int i = 0; i < n_h; ++i)
      ha[i].init(params, "ha." + std::to_string(i), hw[i], hw[i + 1], 3, 2, 1, false, rng);
    std::vector<int> sw = {cfg.z_channels};
    for (int i = 0; i < n_h - 1; ++i) sw.push_back(cfg.hyper_hidden);
    sw.push_back(2 * cfg.y_channels);
    hs.resize(n_h);
    for (int i = 0; i < n_h; ++i)
      hs[i].init(params, "hs." + std::to_string(i), sw[i], sw[i + 1], 4, 2, 1, true, rng);

    {
      TensorT<T> d(cfg.dict_entries, cfg.dict_channels, 1, 1);
      fill_uniform(d, rng, -0.5, 0.5);
      dict = params.add("dict.entries", std::move(d));
    }
    prior_loc = params.add("prior.loc", TensorT<T>::zeros(1, cfg.z_channels, 1, 1));
    {
      // softplus(0.5413...) == 1
      TensorT<T> s = TensorT<T>::full(1, cfg.z_channels, 1, 1, T(0.5413248546129181));
      prior_scale_raw = params.add("prior.scale_raw", std::move(s));
    }

    const int sc = cfg.slice_channels();
    slices.resize(cfg.slice_count);
    for (int i = 0; i < cfg.slice_count; ++i) {
      auto& sl = slices[i];
      const std::string base = "slice" + std::to_string(i);
      const int c_ctx = 2 * cfg.y_channels + i * sc;
      int c_cond = c_ctx;
      if (cfg.dca_enabled) {
        sl.msfa.init(params, base + ".msfa", c_ctx, cfg.c_ms, cfg.msfa_layers, rng);
        sl.q_proj.init(params, base + ".dca.q", cfg.c_ms, cfg.c_qk, false, rng);
        sl.k_proj.init(params, base + ".dca.k", cfg.dict_channels, cfg.c_qk, false, rng);
        sl.temperature = params.add(
            base + ".dca.temp",
            TensorT<T>::full(1, cfg.heads(), 1, 1, T(std::sqrt(double(cfg.head_dim)))));
        const int cd = cfg.dict_channels;
        sl.ffn1.init(params, base + ".dca.ffn1", cd, cfg.ffn_expansion * cd, true, rng);
        sl.ffn2.init(params, base + ".dca.ffn2", cfg.ffn_expansion * cd, cd, true, rng);
        c_cond += cd;
      }
      sl.fe.init(params, base + ".fe", c_cond, cfg.fe_hidden, 2 * sc, rng);
      sl.lrp.init(params, base + ".lrp", c_cond + sc, cfg.fe_hidden, sc, rng);
    }
  }

  void begin_pass(bool requires_grad) const { params.begin_pass(requires_grad); }

  // y = analysis(x); x must be padded to multiples of the total downsample.
  ag::Var<T> analyze(const ag::Var<T>& x) const {
    if (x->value.c != 3)
      throw DimensionError("analyze: expected 3 input channels, got " + x->value.shape_str());
    if (x->value.h % cfg.s_total() != 0 || x->value.w % cfg.s_total() != 0)
      throw DimensionError("analyze: input " + x->value.shape_str() +
                           " not padded to multiples of " + std::to_string(cfg.s_total()));
    auto cur = x;
    for (size_t i = 0; i < ga.size(); ++i) {
      cur = ga[i](params, cur);
      if (i + 1 < ga.size()) cur = ag::gelu(cur);
    }
    return cur;
  }

  // Synthesis core; the codec clamps to [0,1] on top of this.
  ag::Var<T> synthesize(const ag::Var<T>& ybar) const {
    if (ybar->value.c != cfg.y_channels)
      throw DimensionError("synthesize: latent has " + ybar->value.shape_str() + ", expected " +
                           std::to_string(cfg.y_channels) + " channels");
    auto cur = ybar;
    for (size_t i = 0; i < gs.size(); ++i) {
      cur = gs[i](params, cur);
      if (i + 1 < gs.size()) cur = ag::gelu(cur);
    }
    return cur;
  }

  ag::Var<T> hyper_analyze(const ag::Var<T>& y) const {
    auto cur = y;
    for (size_t i = 0; i < ha.size(); ++i) {
      cur = ha[i](params, cur);
      if (i + 1 < ha.size()) cur = ag::gelu(cur);
    }
    return cur;
  }

  ag::Var<T> hyper_synthesize(const ag::Var<T>& zhat) const {
    auto cur = zhat;
    for (size_t i = 0; i < hs.size(); ++i) {
      cur = hs[i](params, cur);
      if (i + 1 < hs.size()) cur = ag::gelu(cur);
    }
    return cur;
  }

  // Multi-head cross attention against the dictionary. Returns the feature
  // (post-FFN) and exposes the pre-FFN aggregate and head-mean attention.
  ag::Var<T> dict_attention(int slice_idx, const ag::Var<T>& x_ms, ag::Var<T>* pre_ffn_out,
                            TensorT<T>* attention_rows) const {
    const auto& sl = slices[slice_idx];
    if (cfg.dict_entries <= 0) throw ConfigError("dict_attention: empty dictionary");
    const auto& temp = params.var(sl.temperature);
    for (T t : temp->value.data)
      if (!(t > T(0))) throw IntegrityError("dict_attention: non-positive temperature");
    auto rows = ag::to_rows(x_ms);                    // (P, C_ms)
    auto q = sl.q_proj(params, rows);                 // (P, C_qk)
    auto d = params.var(dict);                        // (N, C_d)
    auto k = sl.k_proj(params, d);                    // (N, C_qk)
    const int heads = cfg.heads();
    const int hd = cfg.head_dim;
    const int vd = cfg.dict_channels / heads;
    std::vector<ag::Var<T>> head_outs;
    TensorT<T> att_mean;
    for (int h = 0; h < heads; ++h) {
      auto qh = ag::slice_c(q, h * hd, hd);
      auto kh = ag::slice_c(k, h * hd, hd);
      auto logits = ag::div_scalar_var(ag::matmul_nt(qh, kh), ag::slice_c(temp, h, 1));
      auto att = ag::softmax_channels_op(logits);     // (P, N)
      if (attention_rows) {
        if (att_mean.size() == 0)
          att_mean = TensorT<T>::zeros(att->value.b, att->value.c, 1, 1);
        for (size_t i = 0; i < att_mean.size(); ++i)
          att_mean.data[i] += att->value.data[i] / T(heads);
      }
      auto vh = ag::slice_c(d, h * vd, vd);
      head_outs.push_back(ag::matmul(att, vh));       // (P, vd)
    }
    auto agg = ag::concat_c(head_outs);               // (P, C_d)
    if (pre_ffn_out) *pre_ffn_out = agg;
    if (attention_rows) *attention_rows = std::move(att_mean);
    auto ffn = sl.ffn2(params, ag::gelu(sl.ffn1(params, agg)));
    auto out = ag::add(agg, ffn);
    return ag::from_rows(out, x_ms->value.b, x_ms->value.h, x_ms->value.w);
  }

  // mu_i, sigma_i (and the dictionary feature) for slice i given the hyper
  // feature and previously reconstructed slices. Identical on the encoder
  // and decoder side by construction.
  SliceCond<T> slice_condition(int i, const ag::Var<T>& f_z,
                               const std::vector<ag::Var<T>>& ybar_prev,
                               bool want_attention = false) const {
    std::vector<ag::Var<T>> ctx = {f_z};
    for (int j = 0; j < i; ++j) ctx.push_back(ybar_prev[j]);
    auto x_i = ctx.size() == 1 ? ctx[0] : ag::concat_c(ctx);
    SliceCond<T> cond;
    std::vector<ag::Var<T>> fe_in = ctx;
    if (cfg.dca_enabled) {
      auto x_ms = slices[i].msfa(params, x_i);
      cond.dict_feat = dict_attention(i, x_ms, nullptr, want_attention ? &cond.attention_rows : nullptr);
      fe_in.push_back(cond.dict_feat);
    }
    auto stats = slices[i].fe(params, fe_in.size() == 1 ? fe_in[0] : ag::concat_c(fe_in));
    const int sc = cfg.slice_channels();
    cond.mean = ag::slice_c(stats, 0, sc);
    cond.scale = ag::clamp_min(ag::softplus(ag::slice_c(stats, sc, sc)), kScaleFloor);
    return cond;
  }

  // Bounded quantization-error correction: ybar = yhat + 0.5*tanh(head).
  ag::Var<T> slice_lrp(int i, const ag::Var<T>& f_z, const std::vector<ag::Var<T>>& ybar_prev,
                       const ag::Var<T>& dict_feat, const ag::Var<T>& yhat_i) const {
    std::vector<ag::Var<T>> ctx = {f_z};
    for (int j = 0; j < i; ++j) ctx.push_back(ybar_prev[j]);
    if (dict_feat) ctx.push_back(dict_feat);
    ctx.push_back(yhat_i);
    auto r = slices[i].lrp(params, ag::concat_c(ctx));
    return ag::add(yhat_i, ag::scale(ag::tanh_(r), 0.5));
  }

  ag::Var<T> prior_location() const { return params.var(prior_loc); }
  ag::Var<T> prior_scale() const {
    return ag::softplus(params.var(prior_scale_raw));
  }

  template <typename U>
  DcaeModel<U> cast() const {
    DcaeModel<U> out;
    out.build(cfg, 0);
    for (size_t i = 0; i < params.entries.size(); ++i) {
      out.params.entries[i].value = params.entries[i].value.template cast<U>();
    }
    return out;
  }
};

}  // namespace dcae

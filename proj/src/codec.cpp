#include "dcae/codec.hpp"

#include <cmath>

namespace dcae {

QuantizedLatent quantize_latent(const Tensor& y, const Tensor& mean) {
  require_same_shape(y, mean, "quantize_latent");
  QuantizedLatent q;
  q.symbols = Tensor(y.b, y.c, y.h, y.w);
  q.hat = Tensor(y.b, y.c, y.h, y.w);
  for (size_t i = 0; i < y.size(); ++i) {
    const float k = round_half_away(y.data[i] - mean.data[i]);
    q.symbols.data[i] = k;
    q.hat.data[i] = k + mean.data[i];
  }
  return q;
}

Tensor quantize_round(const Tensor& z) {
  Tensor out = z;
  for (auto& v : out.data) v = round_half_away(v);
  return out;
}

Tensor image_to_tensor(const PixmapImage& image) {
  Tensor t(1, 3, image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = float(image.at(x, y, c)) / 255.0f;
  return t;
}

PixmapImage tensor_to_image(const Tensor& t, int width, int height) {
  if (t.b != 1 || t.c != 3 || t.h < height || t.w < width)
    throw DimensionError("tensor_to_image: tensor " + t.shape_str() + " too small for " +
                         std::to_string(width) + "x" + std::to_string(height));
  PixmapImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(size_t(width) * height * 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = t.at(0, c, y, x);
        v = std::min(1.0f, std::max(0.0f, v));
        img.at(x, y, c) = uint8_t(round_half_away(v * 255.0f));
      }
  return img;
}

Tensor pad_replicate(const Tensor& t, int multiple) {
  if (t.h < 1 || t.w < 1) throw DimensionError("pad_replicate: empty image");
  const int ph = (t.h + multiple - 1) / multiple * multiple;
  const int pw = (t.w + multiple - 1) / multiple * multiple;
  if (ph == t.h && pw == t.w) return t;
  Tensor out(t.b, t.c, ph, pw);
  for (int b = 0; b < t.b; ++b)
    for (int c = 0; c < t.c; ++c)
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x)
          out.at(b, c, y, x) = t.at(b, c, std::min(y, t.h - 1), std::min(x, t.w - 1));
  return out;
}

Tensor crop_to(const Tensor& t, int width, int height) {
  if (width < 1 || height < 1 || width > t.w || height > t.h)
    throw DimensionError("crop_to: bad crop window");
  Tensor out(t.b, t.c, height, width);
  for (int b = 0; b < t.b; ++b)
    for (int c = 0; c < t.c; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) out.at(b, c, y, x) = t.at(b, c, y, x);
  return out;
}

SlicePassResult run_slices(const DcaeModel<float>& model, const ag::Var<float>& f_z,
                           const SliceSymbolFn& symbols_for) {
  const ModelConfig& cfg = model.cfg;
  SlicePassResult res;
  std::vector<ag::Var<float>> ybar_prev;
  std::vector<Tensor> yhat_slices;
  for (int i = 0; i < cfg.slice_count; ++i) {
    SliceCond<float> cond = model.slice_condition(i, f_z, ybar_prev);
    if (!cond.mean->value.all_finite() || !cond.scale->value.all_finite())
      throw IntegrityError("run_slices: non-finite distribution parameters in slice " +
                           std::to_string(i));
    res.means.push_back(cond.mean->value);
    res.scales.push_back(cond.scale->value);
    Tensor symbols = symbols_for(i, cond.mean->value, cond.scale->value);
    require_same_shape(symbols, cond.mean->value, "run_slices symbols");
    Tensor yhat = symbols;
    for (size_t j = 0; j < yhat.size(); ++j) yhat.data[j] += cond.mean->value.data[j];
    yhat_slices.push_back(yhat);
    auto yhat_var = ag::constant(yhat);
    auto ybar = model.slice_lrp(i, f_z, ybar_prev, cond.dict_feat, yhat_var);
    ybar_prev.push_back(ybar);
  }
  const Tensor& first = yhat_slices[0];
  const int sc = cfg.slice_channels();
  res.y_hat = Tensor(first.b, cfg.y_channels, first.h, first.w);
  res.y_bar = Tensor(first.b, cfg.y_channels, first.h, first.w);
  for (int i = 0; i < cfg.slice_count; ++i)
    for (int b = 0; b < first.b; ++b)
      for (int c = 0; c < sc; ++c)
        for (int y = 0; y < first.h; ++y)
          for (int x = 0; x < first.w; ++x) {
            res.y_hat.at(b, i * sc + c, y, x) = yhat_slices[i].at(b, c, y, x);
            res.y_bar.at(b, i * sc + c, y, x) = ybar_prev[i]->value.at(b, c, y, x);
          }
  return res;
}

std::vector<QuantizedCdf> hyper_cdf_tables(const DcaeModel<float>& model) {
  std::vector<QuantizedCdf> tables;
  tables.reserve(model.cfg.z_channels);
  const auto& loc = model.params.entries[size_t(model.prior_loc)].value;
  const auto& raw = model.params.entries[size_t(model.prior_scale_raw)].value;
  for (int c = 0; c < model.cfg.z_channels; ++c) {
    const double scale = softplus_scalar(double(raw.at(0, c, 0, 0)));
    if (!(scale > 0)) throw IntegrityError("hyper prior scale must be positive");
    tables.push_back(build_logistic_cdf(double(loc.at(0, c, 0, 0)), scale));
  }
  return tables;
}

namespace {

// Fixed (c, h, w) scan order for every coded tensor.
template <typename Fn>
void scan(const Tensor& t, Fn&& fn) {
  for (int c = 0; c < t.c; ++c)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x) fn(c, y, x);
}

StreamStats stats_of(const RansEncoder& enc, size_t bytes) {
  StreamStats s;
  s.symbols = enc.symbol_count();
  s.table_bits = enc.table_bits();
  s.model_bits = enc.model_bits();
  s.bytes = bytes;
  return s;
}

}  // namespace

EncodeResult encode_image(const DcaeModel<float>& model, const PixmapImage& image) {
  const ModelConfig& cfg = model.cfg;
  model.begin_pass(false);

  Tensor x = pad_replicate(image_to_tensor(image), cfg.s_total());
  auto y = model.analyze(ag::constant(x));
  if (!y->value.all_finite()) throw IntegrityError("encode: non-finite latent");
  auto z = model.hyper_analyze(y);
  Tensor z_hat = quantize_round(z->value);

  EncodeResult res;
  res.z_hat = z_hat;

  // hyper-latent stream
  auto tables = hyper_cdf_tables(model);
  RansEncoder z_enc;
  scan(z_hat, [&](int c, int yy, int xx) {
    z_enc.put(tables[size_t(c)], int32_t(z_hat.at(0, c, yy, xx)));
  });
  std::vector<uint8_t> z_stream = z_enc.finish();
  res.stats.push_back(stats_of(z_enc, z_stream.size()));

  auto f_z = model.hyper_synthesize(ag::constant(z_hat));

  // slice streams, sequential by construction
  const auto& st = ScaleTable::instance();
  std::vector<RansEncoder> slice_encs(cfg.slice_count);
  const int sc = cfg.slice_channels();
  SlicePassResult pass = run_slices(model, f_z, [&](int i, const Tensor& mean, const Tensor& scale) {
    Tensor y_slice(mean.b, mean.c, mean.h, mean.w);
    for (int c = 0; c < sc; ++c)
      for (int yy = 0; yy < mean.h; ++yy)
        for (int xx = 0; xx < mean.w; ++xx)
          y_slice.at(0, c, yy, xx) = y->value.at(0, i * sc + c, yy, xx);
    QuantizedLatent q = quantize_latent(y_slice, mean);
    scan(q.symbols, [&](int c, int yy, int xx) {
      const int idx = st.index_for(double(scale.at(0, c, yy, xx)));
      slice_encs[size_t(i)].put(st.cdf(idx), int32_t(q.symbols.at(0, c, yy, xx)));
    });
    return q.symbols;
  });
  res.y_hat = pass.y_hat;
  res.means = std::move(pass.means);
  res.scales = std::move(pass.scales);

  DcaeHeader header;
  header.version = 1;
  header.profile_id = cfg.profile_id;
  header.lambda_index = cfg.lambda_index;
  header.width = uint32_t(image.width);
  header.height = uint32_t(image.height);
  header.slice_count = uint8_t(cfg.slice_count);
  header.z_stream_len = uint32_t(z_stream.size());
  res.container.z_stream = std::move(z_stream);
  for (int i = 0; i < cfg.slice_count; ++i) {
    auto s = slice_encs[size_t(i)].finish();
    res.stats.push_back(stats_of(slice_encs[size_t(i)], s.size()));
    header.slice_stream_lens.push_back(uint32_t(s.size()));
    res.container.slice_streams.push_back(std::move(s));
  }
  res.container.header = header;
  return res;
}

DecodeResult decode_image(const DcaeModel<float>& model, const ContainerParts& parts) {
  const ModelConfig& cfg = model.cfg;
  const DcaeHeader& h = parts.header;
  if (h.profile_id != cfg.profile_id)
    throw FormatError("decode: container profile does not match the model archive");
  if (h.slice_count != cfg.slice_count)
    throw FormatError("decode: slice count does not match the model");

  model.begin_pass(false);

  const int s_total = cfg.s_total();
  const int pw = int((h.width + s_total - 1) / s_total) * s_total;
  const int ph = int((h.height + s_total - 1) / s_total) * s_total;
  const int zh = ph / s_total, zw = pw / s_total;
  const int yh = ph / cfg.downsample_factor_y, yw = pw / cfg.downsample_factor_y;

  auto tables = hyper_cdf_tables(model);
  Tensor z_hat(1, cfg.z_channels, zh, zw);
  RansDecoder z_dec(parts.z_stream);
  scan(z_hat, [&](int c, int yy, int xx) {
    z_hat.at(0, c, yy, xx) = float(z_dec.get(tables[size_t(c)]));
  });
  z_dec.finish();

  auto f_z = model.hyper_synthesize(ag::constant(z_hat));

  const auto& st = ScaleTable::instance();
  std::vector<RansDecoder> slice_decs;
  slice_decs.reserve(size_t(cfg.slice_count));
  for (int i = 0; i < cfg.slice_count; ++i) slice_decs.emplace_back(parts.slice_streams[size_t(i)]);

  const int sc = cfg.slice_channels();
  SlicePassResult pass =
      run_slices(model, f_z, [&](int i, const Tensor& mean, const Tensor& scale) {
        (void)mean;
        Tensor symbols(1, sc, yh, yw);
        scan(symbols, [&](int c, int yy, int xx) {
          const int idx = st.index_for(double(scale.at(0, c, yy, xx)));
          symbols.at(0, c, yy, xx) = float(slice_decs[size_t(i)].get(st.cdf(idx)));
        });
        slice_decs[size_t(i)].finish();
        return symbols;
      });

  auto x_hat = model.synthesize(ag::constant(pass.y_bar));
  DecodeResult res;
  res.image = tensor_to_image(x_hat->value, int(h.width), int(h.height));
  res.y_hat = pass.y_hat;
  res.z_hat = z_hat;
  res.means = std::move(pass.means);
  res.scales = std::move(pass.scales);
  return res;
}

AttentionMap export_attention_map(const DcaeModel<float>& model, const PixmapImage& image,
                                  int slice, int entry) {
  const ModelConfig& cfg = model.cfg;
  if (!cfg.dca_enabled) throw ConfigError("attention export requires the DCA path");
  if (slice < 0 || slice >= cfg.slice_count)
    throw UsageError("attention export: slice index out of range");
  if (entry < 0 || entry >= cfg.dict_entries)
    throw UsageError("attention export: dictionary entry out of range");

  model.begin_pass(false);
  Tensor x = pad_replicate(image_to_tensor(image), cfg.s_total());
  auto y = model.analyze(ag::constant(x));
  Tensor z_hat = quantize_round(model.hyper_analyze(y)->value);
  auto f_z = model.hyper_synthesize(ag::constant(z_hat));

  // run the schedule up to the requested slice, quantizing from y directly
  std::vector<ag::Var<float>> ybar_prev;
  const int sc = cfg.slice_channels();
  TensorT<float> rows;
  for (int i = 0; i <= slice; ++i) {
    SliceCond<float> cond = model.slice_condition(i, f_z, ybar_prev, i == slice);
    if (i == slice) {
      rows = cond.attention_rows;
      break;
    }
    Tensor y_slice(1, sc, y->value.h, y->value.w);
    for (int c = 0; c < sc; ++c)
      for (int yy = 0; yy < y->value.h; ++yy)
        for (int xx = 0; xx < y->value.w; ++xx)
          y_slice.at(0, c, yy, xx) = y->value.at(0, i * sc + c, yy, xx);
    QuantizedLatent q = quantize_latent(y_slice, cond.mean->value);
    auto ybar = model.slice_lrp(i, f_z, ybar_prev, cond.dict_feat, ag::constant(q.hat));
    ybar_prev.push_back(ybar);
  }

  AttentionMap map;
  map.height = y->value.h;
  map.width = y->value.w;
  const int positions = map.width * map.height;
  map.raw.resize(size_t(positions));
  map.row_sums.assign(size_t(positions), 0.0f);
  for (int p = 0; p < positions; ++p) {
    map.raw[size_t(p)] = rows.at(p, entry, 0, 0);
    for (int n = 0; n < cfg.dict_entries; ++n) map.row_sums[size_t(p)] += rows.at(p, n, 0, 0);
  }
  float lo = map.raw[0], hi = map.raw[0];
  for (float v : map.raw) lo = std::min(lo, v), hi = std::max(hi, v);
  map.gray.resize(map.raw.size());
  if (hi - lo < 1e-12f) {
    // constant map rule: mid-gray
    std::fill(map.gray.begin(), map.gray.end(), uint8_t(128));
  } else {
    for (size_t i = 0; i < map.raw.size(); ++i)
      map.gray[i] = uint8_t(round_half_away((map.raw[i] - lo) / (hi - lo) * 255.0f));
  }
  return map;
}

}  // namespace dcae

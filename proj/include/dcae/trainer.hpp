#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "dcae/codec.hpp"
#include "dcae/image_io.hpp"
#include "dcae/model.hpp"

namespace dcae {

// Training surrogate for quantization:
//   Noisy - additive uniform noise everywhere (fully smooth; used by the
//           gradient-check harness),
//   Ste   - noise for the rate terms, straight-through rounding for the
//           reconstruction path (the training default).
enum class QuantMode { Noisy, Ste };

struct RdLossBreakdown {
  double rate_y = 0;  // bits per image
  double rate_z = 0;
  double mse = 0;  // on [0,1] pixels
  double lambda = 0;
  double total = 0;  // rate_y + rate_z + lambda * n_pixels * 255^2 * mse
};

// t + U(-0.5, 0.5) i.i.d., deterministic per rng state.
template <typename T>
TensorT<T> noisy_quantize(const TensorT<T>& t, Rng& rng) {
  TensorT<T> out = t;
  for (auto& v : out.data) v += static_cast<T>(rng.uniform() - 0.5);
  return out;
}

template <typename T>
struct RdLossResult {
  ag::Var<T> total;
  RdLossBreakdown values;
};

// Builds the differentiable rate-distortion objective for one batch. The
// caller owns the pass (begin_pass before, backward/collect after). Noise is
// drawn from `rng`, so a fixed rng state fixes the loss surface.
template <typename T>
RdLossResult<T> rd_loss_graph(const DcaeModel<T>& model, const TensorT<T>& batch, double lambda,
                              QuantMode mode, Rng& rng) {
  const ModelConfig& cfg = model.cfg;
  auto x = ag::constant(batch);
  auto y = model.analyze(x);
  auto z = model.hyper_analyze(y);

  TensorT<T> z_noise = TensorT<T>::zeros(z->value.b, z->value.c, z->value.h, z->value.w);
  for (auto& v : z_noise.data) v = static_cast<T>(rng.uniform() - 0.5);
  auto z_tilde = ag::add_const(z, z_noise);
  auto rate_z_total =
      ag::sum_all(ag::logistic_bits(z_tilde, model.prior_location(), model.prior_scale()));

  auto f_z = model.hyper_synthesize(mode == QuantMode::Ste ? ag::round_ste(z) : z_tilde);

  TensorT<T> y_noise = TensorT<T>::zeros(y->value.b, y->value.c, y->value.h, y->value.w);
  for (auto& v : y_noise.data) v = static_cast<T>(rng.uniform() - 0.5);

  const int sc = cfg.slice_channels();
  std::vector<ag::Var<T>> ybar_prev;
  ag::Var<T> rate_y_total;
  for (int i = 0; i < cfg.slice_count; ++i) {
    SliceCond<T> cond = model.slice_condition(i, f_z, ybar_prev);
    auto y_i = ag::slice_c(y, i * sc, sc);
    TensorT<T> noise_i(y->value.b, sc, y->value.h, y->value.w);
    for (int b = 0; b < noise_i.b; ++b)
      for (int c = 0; c < sc; ++c)
        for (int hh = 0; hh < noise_i.h; ++hh)
          for (int ww = 0; ww < noise_i.w; ++ww)
            noise_i.at(b, c, hh, ww) = y_noise.at(b, i * sc + c, hh, ww);
    auto y_tilde = ag::add_const(y_i, noise_i);
    auto bits = ag::sum_all(ag::gaussian_bits(y_tilde, cond.mean, cond.scale));
    rate_y_total = rate_y_total ? ag::add(rate_y_total, bits) : bits;

    ag::Var<T> y_hat;
    if (mode == QuantMode::Ste) {
      // mean + round(y - mean), gradient passes to y only
      auto delta = ag::sub(y_i, ag::detach(cond.mean));
      y_hat = ag::add(ag::round_ste(delta), ag::detach(cond.mean));
    } else {
      y_hat = y_tilde;
    }
    ybar_prev.push_back(model.slice_lrp(i, f_z, ybar_prev, cond.dict_feat, y_hat));
  }

  auto y_bar = ybar_prev.size() == 1 ? ybar_prev[0] : ag::concat_c(ybar_prev);
  auto x_hat = model.synthesize(y_bar);  // unclamped for training
  auto distortion = ag::mse(x_hat, x);

  const double batch_inv = 1.0 / batch.b;
  const double n_pixels = double(batch.h) * batch.w;
  auto rate_y_mean = ag::scale(rate_y_total, batch_inv);
  auto rate_z_mean = ag::scale(rate_z_total, batch_inv);
  auto dist_term = ag::scale(distortion, lambda * n_pixels * 255.0 * 255.0);
  auto total = ag::add(ag::add(rate_y_mean, rate_z_mean), dist_term);

  RdLossResult<T> res;
  res.total = total;
  res.values.rate_y = double(rate_y_mean->value.data[0]);
  res.values.rate_z = double(rate_z_mean->value.data[0]);
  res.values.mse = double(distortion->value.data[0]);
  res.values.lambda = lambda;
  res.values.total = double(total->value.data[0]);
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v)) throw IntegrityError(std::string("rd_loss: non-finite ") + name);
  };
  check(res.values.rate_y, "rate_y");
  check(res.values.rate_z, "rate_z");
  check(res.values.mse, "distortion");
  check(res.values.total, "total");
  return res;
}

// ---- optimization -----------------------------------------------------------

struct TrainingConfig {
  double lambda = 0.013;
  double lr = 1e-4;
  double lr_late = 1e-5;   // after lr_switch of the step budget
  double lr_switch = 0.8;
  int batch = 2;
  int steps = 200;
  uint64_t seed = 1;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double clip_norm = 1.0;
};

struct AdamState {
  int64_t t = 0;
  std::vector<Tensor> m, v;

  void init_for(const DcaeModel<float>& model);
};

// First-order adaptive-moment update, applied in place. `t` is the 1-based
// step count for bias correction.
void adam_apply(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v, int64_t t, double lr,
                double beta1, double beta2, double eps);

// One forward/backward/update on a batch. Throws IntegrityError naming the
// parameter on non-finite gradients.
RdLossBreakdown train_step(DcaeModel<float>& model, AdamState& opt, const Tensor& batch,
                           const TrainingConfig& cfg, int step_index, Rng& noise_rng);

struct TrainLogEntry {
  int step;
  RdLossBreakdown loss;
};

// Full toy training run on a synthetic corpus; deterministic per config.
std::vector<TrainLogEntry> train_model(DcaeModel<float>& model, const TrainingConfig& cfg,
                                       const std::vector<PixmapImage>& corpus,
                                       std::vector<TrainLogEntry>* log = nullptr);

// ---- synthetic data -----------------------------------------------------------

enum class DatasetKind { PeriodicTexture, Noise, Gradient };

DatasetKind dataset_kind_from_name(const std::string& name);

// Deterministic corpus; PeriodicTexture tiles a random 8x8 motif with a
// random per-image phase.
std::vector<PixmapImage> synth_dataset(DatasetKind kind, int count, int width, int height,
                                       uint64_t seed);

// Mean ideal coded rate (bits under the quantized tables) of `model` over a
// corpus; the ablation yardstick.
double mean_ideal_rate(const DcaeModel<float>& model, const std::vector<PixmapImage>& corpus);

// ---- metrics ------------------------------------------------------------------

double psnr(const PixmapImage& a, const PixmapImage& b);  // capped at 99 dB
double bpp(size_t container_bytes, int width, int height);

struct RdCurve {
  std::vector<std::pair<double, double>> points;  // (bpp, psnr), ascending bpp
};

RdCurve read_rd_curve_csv(const std::string& text);

// Bjontegaard delta-rate: cubic fit of ln(rate) against PSNR per curve,
// integrated over the shared PSNR interval; positive means `test` spends
// more rate than `anchor`.
double bd_rate(const RdCurve& anchor, const RdCurve& test);

}  // namespace dcae

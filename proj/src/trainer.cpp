#include "dcae/trainer.hpp"

#include <cmath>

namespace dcae {

void AdamState::init_for(const DcaeModel<float>& model) {
  t = 0;
  m.clear();
  v.clear();
  for (const auto& e : model.params.entries) {
    m.push_back(Tensor::zeros(e.value.b, e.value.c, e.value.h, e.value.w));
    v.push_back(Tensor::zeros(e.value.b, e.value.c, e.value.h, e.value.w));
  }
}

RdLossBreakdown train_step(DcaeModel<float>& model, AdamState& opt, const Tensor& batch,
                           const TrainingConfig& cfg, int step_index, Rng& noise_rng) {
  if (opt.m.size() != model.params.entries.size()) opt.init_for(model);
  model.params.zero_grad();
  model.begin_pass(true);
  RdLossResult<float> loss = rd_loss_graph(model, batch, cfg.lambda, QuantMode::Ste, noise_rng);
  ag::backward(loss.total);
  model.params.collect_grads();

  double norm_sq = 0;
  for (const auto& e : model.params.entries) {
    for (float g : e.grad.data) {
      if (!std::isfinite(g))
        throw IntegrityError("train_step: non-finite gradient for " + e.name);
      norm_sq += double(g) * g;
    }
  }
  const double norm = std::sqrt(norm_sq);
  const double clip = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;

  const double lr =
      step_index < int(cfg.lr_switch * cfg.steps) ? cfg.lr : cfg.lr_late;
  ++opt.t;
  for (size_t p = 0; p < model.params.entries.size(); ++p) {
    auto& e = model.params.entries[p];
    if (clip != 1.0)
      for (auto& g : e.grad.data) g = float(double(g) * clip);
    adam_apply(e.value, e.grad, opt.m[p], opt.v[p], opt.t, lr, cfg.beta1, cfg.beta2, cfg.eps);
  }
  return loss.values;
}

void adam_apply(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v, int64_t t, double lr,
                double beta1, double beta2, double eps) {
  const double bc1 = 1.0 - std::pow(beta1, double(t));
  const double bc2 = 1.0 - std::pow(beta2, double(t));
  for (size_t i = 0; i < value.size(); ++i) {
    const double g = double(grad.data[i]);
    const double mi = beta1 * m.data[i] + (1.0 - beta1) * g;
    const double vi = beta2 * v.data[i] + (1.0 - beta2) * g * g;
    m.data[i] = float(mi);
    v.data[i] = float(vi);
    value.data[i] -= float(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
  }
}

std::vector<TrainLogEntry> train_model(DcaeModel<float>& model, const TrainingConfig& cfg,
                                       const std::vector<PixmapImage>& corpus,
                                       std::vector<TrainLogEntry>* log) {
  if (corpus.empty()) throw UsageError("train_model: empty corpus");
  std::vector<Tensor> images;
  images.reserve(corpus.size());
  for (const auto& img : corpus)
    images.push_back(pad_replicate(image_to_tensor(img), model.cfg.s_total()));

  AdamState opt;
  opt.init_for(model);
  Rng rng(cfg.seed);
  Rng noise_rng = rng.fork();
  std::vector<TrainLogEntry> history;
  for (int step = 0; step < cfg.steps; ++step) {
    const Tensor& first = images[0];
    Tensor batch(cfg.batch, 3, first.h, first.w);
    for (int b = 0; b < cfg.batch; ++b) {
      const Tensor& src = images[rng.below(images.size())];
      if (!src.same_shape(first))
        throw DimensionError("train_model: corpus images must share dimensions");
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < first.h; ++y)
          for (int x = 0; x < first.w; ++x) batch.at(b, c, y, x) = src.at(0, c, y, x);
    }
    RdLossBreakdown loss = train_step(model, opt, batch, cfg, step, noise_rng);
    if (log && (step % 10 == 0 || step + 1 == cfg.steps)) log->push_back({step, loss});
    if (step == 0 || step + 1 == cfg.steps) history.push_back({step, loss});
  }
  return history;
}

DatasetKind dataset_kind_from_name(const std::string& name) {
  if (name == "periodic-texture" || name == "periodic") return DatasetKind::PeriodicTexture;
  if (name == "noise") return DatasetKind::Noise;
  if (name == "gradient") return DatasetKind::Gradient;
  throw UsageError("unknown dataset kind: " + name);
}

std::vector<PixmapImage> synth_dataset(DatasetKind kind, int count, int width, int height,
                                       uint64_t seed) {
  Rng rng(seed);
  std::vector<PixmapImage> out;
  out.reserve(size_t(count));
  for (int n = 0; n < count; ++n) {
    PixmapImage img;
    img.width = width;
    img.height = height;
    img.pixels.resize(size_t(width) * height * 3);
    switch (kind) {
      case DatasetKind::PeriodicTexture: {
        const int motif = 8;
        uint8_t tile[8 * 8 * 3];
        for (auto& v : tile) v = uint8_t(rng.below(256));
        const int dx = int(rng.below(motif)), dy = int(rng.below(motif));
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c)
              img.at(x, y, c) = tile[(((y + dy) % motif) * motif + (x + dx) % motif) * 3 + c];
        break;
      }
      case DatasetKind::Noise:
        for (auto& v : img.pixels) v = uint8_t(rng.below(256));
        break;
      case DatasetKind::Gradient: {
        const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
        const double c0 = rng.uniform(0.0, 255.0);
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x) {
            double v = c0 + a * x + b * y;
            v = std::min(255.0, std::max(0.0, v));
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = uint8_t(v);
          }
        break;
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

double mean_ideal_rate(const DcaeModel<float>& model, const std::vector<PixmapImage>& corpus) {
  if (corpus.empty()) throw UsageError("mean_ideal_rate: empty corpus");
  double total = 0;
  for (const auto& img : corpus) {
    EncodeResult enc = encode_image(model, img);
    for (const auto& s : enc.stats) total += s.table_bits;
  }
  return total / double(corpus.size());
}

}  // namespace dcae

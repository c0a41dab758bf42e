#pragma once
#include <functional>
#include <vector>

#include "dcae/container.hpp"
#include "dcae/image_io.hpp"
#include "dcae/model.hpp"
#include "dcae/rans.hpp"

namespace dcae {

// ---- quantization operators -------------------------------------------------

struct QuantizedLatent {
  Tensor hat;      // k + mean, full precision mean
  Tensor symbols;  // integer-valued floats, round(y - mean) half away from zero
};

// hat = mean + round(y - mean); the integer symbols are what gets coded.
QuantizedLatent quantize_latent(const Tensor& y, const Tensor& mean);

// Offset-free rounding for the hyper-latent.
Tensor quantize_round(const Tensor& z);

// ---- image <-> tensor -------------------------------------------------------

// (1, 3, H, W) in [0,1], v = byte / 255.
Tensor image_to_tensor(const PixmapImage& image);

// Clamps to [0,1], crops to (width, height), maps to bytes with the
// half-away-from-zero rule.
PixmapImage tensor_to_image(const Tensor& t, int width, int height);

// Replicate padding on the right/bottom up to the next multiple.
Tensor pad_replicate(const Tensor& t, int multiple);
Tensor crop_to(const Tensor& t, int width, int height);

// ---- coding pipeline --------------------------------------------------------

struct StreamStats {
  size_t symbols = 0;
  double table_bits = 0;  // ideal bits under the quantized tables
  double model_bits = 0;  // ideal bits under the tables' source pmfs
  size_t bytes = 0;
};

struct SlicePassResult {
  Tensor y_hat;  // quantized latent, slice order
  Tensor y_bar;  // after the bounded residual correction
  std::vector<Tensor> means, scales;
};

// Drives the autoregressive slice schedule. The callback supplies the integer
// symbols for one slice given its conditioned (mean, scale); encode derives
// them from y, decode pulls them from the stream. A model pass must be
// active. Shared by both directions so mu/sigma match bit for bit.
using SliceSymbolFn = std::function<Tensor(int slice, const Tensor& mean, const Tensor& scale)>;
SlicePassResult run_slices(const DcaeModel<float>& model, const ag::Var<float>& f_z,
                           const SliceSymbolFn& symbols_for);

struct EncodeResult {
  ContainerParts container;
  std::vector<StreamStats> stats;  // z stream first, then one per slice
  Tensor y_hat;
  Tensor z_hat;
  std::vector<Tensor> means, scales;
};

EncodeResult encode_image(const DcaeModel<float>& model, const PixmapImage& image);

struct DecodeResult {
  PixmapImage image;
  Tensor y_hat;
  Tensor z_hat;
  std::vector<Tensor> means, scales;
};

DecodeResult decode_image(const DcaeModel<float>& model, const ContainerParts& parts);

// ---- attention map export ---------------------------------------------------

struct AttentionMap {
  int width = 0, height = 0;          // latent resolution
  std::vector<float> raw;             // attention of `entry` per position
  std::vector<uint8_t> gray;          // min-max normalized; constant maps to 128
  std::vector<float> row_sums;        // per-position sum over all entries
};

AttentionMap export_attention_map(const DcaeModel<float>& model, const PixmapImage& image,
                                  int slice, int entry);

// Per-channel logistic tables for the hyper-latent of `model`.
std::vector<QuantizedCdf> hyper_cdf_tables(const DcaeModel<float>& model);

}  // namespace dcae

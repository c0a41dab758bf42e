#pragma once
#include <cstdint>
#include <vector>

#include "dcae/errors.hpp"

// Bit-exact integer entropy coder: rANS with 32-bit state, 16-bit
// renormalization and 16-bit probability tables. Symbols outside a table's
// support go through an escape bucket followed by order-0 Exp-Golomb bits,
// coded as uniform half/half symbols in the same stream (MSB first).
//
// Stream layout: payload bytes (16-bit words, little-endian, in forward
// decode order), then the 4-byte little-endian final encoder state. After
// decoding the agreed symbol count the state must return to the initial
// constant and the payload must be fully consumed; anything else raises
// CorruptStreamError.

namespace dcae {

constexpr int kCdfPrecisionBits = 16;
constexpr uint32_t kCdfTotal = 1u << kCdfPrecisionBits;
constexpr uint32_t kRansLowerBound = 1u << 16;

// Integer CDF over the support [-radius, +radius] plus two escape buckets
// (bucket 0 = below, bucket count-1 = above). Every bucket has mass >= 1 and
// the masses total exactly 2^16. `pmf` keeps the real-valued probabilities
// the table was quantized from, for rate accounting.
struct QuantizedCdf {
  int radius = 0;
  std::vector<uint32_t> cum;  // monotone, cum.front()=0, cum.back()=2^16
  std::vector<double> pmf;    // per-bucket source probabilities

  int bucket_count() const { return static_cast<int>(cum.size()) - 1; }
  uint32_t freq(int bucket) const { return cum[bucket + 1] - cum[bucket]; }
  uint32_t start(int bucket) const { return cum[bucket]; }

  int bucket_of(int32_t symbol) const {
    if (symbol < -radius) return 0;
    if (symbol > radius) return bucket_count() - 1;
    return symbol + radius + 1;
  }
  int32_t symbol_of(int bucket) const { return bucket - radius - 1; }
  bool is_escape(int bucket) const { return bucket == 0 || bucket == bucket_count() - 1; }
};

// Largest-remainder quantization to 16-bit integer masses, every bucket >= 1.
QuantizedCdf quantize_pmf(const std::vector<double>& pmf);

// Smallest r whose upper tail mass P(k >= r) drops below 2^-16.
int gaussian_support_radius(double sigma);
QuantizedCdf build_gaussian_cdf(double sigma);
QuantizedCdf build_logistic_cdf(double loc, double scale);

// 64 log-spaced sigma values in [0.11, 256] with precomputed tables. Lookup
// maps a model sigma to the smallest table sigma' >= sigma (conservative).
class ScaleTable {
 public:
  static constexpr int kCount = 64;
  static const ScaleTable& instance();

  int index_for(double sigma) const;
  double sigma_at(int idx) const { return sigmas_[idx]; }
  const QuantizedCdf& cdf(int idx) const { return cdfs_[idx]; }

 private:
  ScaleTable();
  std::vector<double> sigmas_;
  std::vector<QuantizedCdf> cdfs_;
};

class RansEncoder {
 public:
  // Queues one symbol; escapes are expanded here. Tables must stay alive
  // until finish().
  void put(const QuantizedCdf& cdf, int32_t symbol);
  // Bucket-level access for callers that manage their own alphabets.
  void put_bucket(const QuantizedCdf& cdf, int bucket);
  std::vector<uint8_t> finish();

  double table_bits() const { return table_bits_; }   // sum of -log2(quantized q)
  double model_bits() const { return model_bits_; }   // sum of -log2(source pmf)
  size_t symbol_count() const { return pending_.size(); }

 private:
  struct Pending {
    const QuantizedCdf* cdf;  // null marks a raw bypass bit
    uint16_t bucket_or_bit;
  };
  void put_bit(int bit);
  std::vector<Pending> pending_;
  double table_bits_ = 0;
  double model_bits_ = 0;
};

class RansDecoder {
 public:
  explicit RansDecoder(const std::vector<uint8_t>& stream);
  int32_t get(const QuantizedCdf& cdf);
  int get_bucket(const QuantizedCdf& cdf);
  // Verifies full consumption and the final-state constant.
  void finish() const;

 private:
  int get_bit();
  uint16_t next_word();
  const std::vector<uint8_t>& stream_;
  size_t payload_bytes_ = 0;
  size_t pos_ = 0;
  uint32_t state_ = 0;
};

}  // namespace dcae

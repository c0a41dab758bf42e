#include "dcae/rans.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcae/entropy.hpp"

namespace dcae {

namespace {

// Uniform half/half table for bypass bits.
const QuantizedCdf& bit_cdf() {
  static const QuantizedCdf cdf = [] {
    QuantizedCdf c;
    c.radius = 0;
    c.cum = {0, kCdfTotal / 2, kCdfTotal};
    c.pmf = {0.5, 0.5};
    return c;
  }();
  return cdf;
}

}  // namespace

QuantizedCdf quantize_pmf(const std::vector<double>& pmf) {
  const size_t n = pmf.size();
  if (n == 0) throw IntegrityError("quantize_pmf: empty support");
  double sum = 0;
  for (double p : pmf) {
    if (p < 0) throw IntegrityError("quantize_pmf: negative probability");
    sum += p;
  }
  if (sum > 1.0 + 1e-6) throw IntegrityError("quantize_pmf: pmf sums beyond 1");
  if (!(sum > 0)) throw IntegrityError("quantize_pmf: zero total mass");
  if (n > kCdfTotal) throw IntegrityError("quantize_pmf: support too large for 16-bit table");

  // floor with a minimum of 1 so every bucket stays codable, then settle the
  // residual by remainder order (largest gain first, smallest loss first)
  std::vector<uint32_t> mass(n);
  std::vector<double> rem(n);
  int64_t total = 0;
  for (size_t i = 0; i < n; ++i) {
    const double ideal = pmf[i] / sum * kCdfTotal;
    mass[i] = std::max<uint32_t>(1, static_cast<uint32_t>(ideal));
    rem[i] = ideal - std::floor(ideal);
    total += mass[i];
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  int64_t residual = static_cast<int64_t>(kCdfTotal) - total;
  if (residual > 0) {
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (rem[a] != rem[b]) return rem[a] > rem[b];
      return a < b;
    });
    for (size_t i = 0; residual > 0; i = (i + 1) % n)
      if (mass[order[i]] > 0) ++mass[order[i]], --residual;
  } else if (residual < 0) {
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (rem[a] != rem[b]) return rem[a] < rem[b];
      return a < b;
    });
    size_t guard = 0;
    for (size_t i = 0; residual < 0; i = (i + 1) % n) {
      if (mass[order[i]] > 1) {
        --mass[order[i]];
        ++residual;
        guard = 0;
      } else if (++guard > n) {
        throw IntegrityError("quantize_pmf: cannot fit support in table");
      }
    }
  }
  QuantizedCdf out;
  out.pmf = pmf;
  for (double& p : out.pmf) p /= sum;
  out.cum.resize(n + 1);
  out.cum[0] = 0;
  for (size_t i = 0; i < n; ++i) out.cum[i + 1] = out.cum[i] + mass[i];
  return out;
}

int gaussian_support_radius(double sigma) {
  int r = 1;
  while (discretized_gaussian_upper_tail(r, sigma) >= std::pow(2.0, -16.0)) {
    ++r;
    if (r > (1 << 20)) throw IntegrityError("gaussian_support_radius: runaway radius");
  }
  return r;
}

QuantizedCdf build_gaussian_cdf(double sigma) {
  const int r = gaussian_support_radius(sigma);
  std::vector<double> pmf(2 * r + 3);
  pmf[0] = discretized_gaussian_upper_tail(r + 1, sigma);  // symmetric lower tail
  for (int k = -r; k <= r; ++k) pmf[k + r + 1] = discretized_gaussian_pmf(k, sigma);
  pmf[2 * r + 2] = discretized_gaussian_upper_tail(r + 1, sigma);
  QuantizedCdf out = quantize_pmf(pmf);
  out.radius = r;
  return out;
}

QuantizedCdf build_logistic_cdf(double loc, double scale) {
  if (!(scale > 0)) throw IntegrityError("build_logistic_cdf: non-positive scale");
  int r = 1;
  const double thresh = std::pow(2.0, -16.0);
  while (logistic_upper_tail(r, loc, scale) >= thresh ||
         logistic_upper_tail(r, -loc, scale) >= thresh) {
    ++r;
    if (r > (1 << 20)) throw IntegrityError("build_logistic_cdf: runaway radius");
  }
  std::vector<double> pmf(2 * r + 3);
  pmf[0] = logistic_upper_tail(r + 1, -loc, scale);  // P(k <= -r-1) by symmetry
  for (int k = -r; k <= r; ++k) pmf[k + r + 1] = logistic_pmf(k, loc, scale);
  pmf[2 * r + 2] = logistic_upper_tail(r + 1, loc, scale);
  QuantizedCdf out = quantize_pmf(pmf);
  out.radius = r;
  return out;
}

const ScaleTable& ScaleTable::instance() {
  static const ScaleTable table;
  return table;
}

ScaleTable::ScaleTable() {
  sigmas_.resize(kCount);
  const double lo = std::log(kScaleFloor), hi = std::log(256.0);
  for (int i = 0; i < kCount; ++i) sigmas_[i] = std::exp(lo + (hi - lo) * i / (kCount - 1));
  sigmas_.front() = kScaleFloor;
  sigmas_.back() = 256.0;
  cdfs_.reserve(kCount);
  for (double s : sigmas_) cdfs_.push_back(build_gaussian_cdf(s));
}

int ScaleTable::index_for(double sigma) const {
  // smallest sigma' >= sigma; oversized sigmas use the last table
  auto it = std::lower_bound(sigmas_.begin(), sigmas_.end(), sigma);
  if (it == sigmas_.end()) return kCount - 1;
  return static_cast<int>(it - sigmas_.begin());
}

void RansEncoder::put_bit(int bit) {
  pending_.push_back({nullptr, static_cast<uint16_t>(bit)});
  table_bits_ += 1.0;
  model_bits_ += 1.0;
}

void RansEncoder::put_bucket(const QuantizedCdf& cdf, int bucket) {
  pending_.push_back({&cdf, static_cast<uint16_t>(bucket)});
  table_bits_ += -std::log2(static_cast<double>(cdf.freq(bucket)) / kCdfTotal);
  model_bits_ += -std::log2(std::max(cdf.pmf[bucket], kPmfFloor));
}

void RansEncoder::put(const QuantizedCdf& cdf, int32_t symbol) {
  const int bucket = cdf.bucket_of(symbol);
  put_bucket(cdf, bucket);
  if (cdf.is_escape(bucket)) {
    const uint32_t overshoot =
        bucket == 0 ? static_cast<uint32_t>(-(int64_t)symbol - cdf.radius - 1)
                    : static_cast<uint32_t>((int64_t)symbol - cdf.radius - 1);
    // order-0 Exp-Golomb of the overshoot, MSB first
    const uint32_t v = overshoot + 1;
    int len = 0;
    while ((v >> (len + 1)) != 0) ++len;
    for (int i = 0; i < len; ++i) put_bit(0);
    for (int i = len; i >= 0; --i) put_bit((v >> i) & 1);
  }
}

std::vector<uint8_t> RansEncoder::finish() {
  uint32_t state = kRansLowerBound;
  std::vector<uint16_t> words;
  // rANS pushes in reverse feed order; the word list is flipped afterwards so
  // the decoder reads forward.
  for (auto it = pending_.rbegin(); it != pending_.rend(); ++it) {
    const QuantizedCdf& cdf = it->cdf ? *it->cdf : bit_cdf();
    const int bucket = it->bucket_or_bit;
    const uint32_t f = cdf.freq(bucket);
    const uint32_t st = cdf.start(bucket);
    const uint32_t x_max = f << 16;
    while (state >= x_max) {
      words.push_back(static_cast<uint16_t>(state & 0xffff));
      state >>= 16;
    }
    state = ((state / f) << kCdfPrecisionBits) + (state % f) + st;
  }
  std::reverse(words.begin(), words.end());
  std::vector<uint8_t> out;
  out.reserve(words.size() * 2 + 4);
  for (uint16_t w : words) {
    out.push_back(static_cast<uint8_t>(w & 0xff));
    out.push_back(static_cast<uint8_t>(w >> 8));
  }
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((state >> (8 * i)) & 0xff));
  return out;
}

RansDecoder::RansDecoder(const std::vector<uint8_t>& stream) : stream_(stream) {
  if (stream.size() < 4 || (stream.size() - 4) % 2 != 0)
    throw CorruptStreamError("rans: truncated stream");
  payload_bytes_ = stream.size() - 4;
  state_ = 0;
  for (int i = 3; i >= 0; --i) state_ = (state_ << 8) | stream_[payload_bytes_ + i];
}

uint16_t RansDecoder::next_word() {
  if (pos_ + 2 > payload_bytes_) throw CorruptStreamError("rans: stream exhausted");
  const uint16_t w = static_cast<uint16_t>(stream_[pos_] | (stream_[pos_ + 1] << 8));
  pos_ += 2;
  return w;
}

int RansDecoder::get_bucket(const QuantizedCdf& cdf) {
  const uint32_t low = state_ & (kCdfTotal - 1);
  // first bucket whose cumulative end exceeds `low`
  const auto it = std::upper_bound(cdf.cum.begin(), cdf.cum.end(), low);
  const int bucket = static_cast<int>(it - cdf.cum.begin()) - 1;
  const uint32_t f = cdf.freq(bucket);
  state_ = f * (state_ >> kCdfPrecisionBits) + low - cdf.start(bucket);
  while (state_ < kRansLowerBound) state_ = (state_ << 16) | next_word();
  return bucket;
}

int RansDecoder::get_bit() { return get_bucket(bit_cdf()); }

int32_t RansDecoder::get(const QuantizedCdf& cdf) {
  const int bucket = get_bucket(cdf);
  if (!cdf.is_escape(bucket)) return cdf.symbol_of(bucket);
  int zeros = 0;
  while (get_bit() == 0) {
    if (++zeros > 64) throw CorruptStreamError("rans: malformed escape code");
  }
  uint64_t v = 1;
  for (int i = 0; i < zeros; ++i) v = (v << 1) | static_cast<uint64_t>(get_bit());
  const int64_t overshoot = static_cast<int64_t>(v) - 1;
  const int64_t sym = bucket == 0 ? -(int64_t)cdf.radius - 1 - overshoot
                                  : (int64_t)cdf.radius + 1 + overshoot;
  return static_cast<int32_t>(sym);
}

void RansDecoder::finish() const {
  if (state_ != kRansLowerBound)
    throw CorruptStreamError("rans: state check failed after decode");
  if (pos_ != payload_bytes_) throw CorruptStreamError("rans: trailing payload after decode");
}

}  // namespace dcae

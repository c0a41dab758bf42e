#include <array>
#include <cmath>
#include <sstream>

#include "dcae/trainer.hpp"

namespace dcae {

double psnr(const PixmapImage& a, const PixmapImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw DimensionError("psnr: image dimensions differ");
  double se = 0;
  for (size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = double(a.pixels[i]) - double(b.pixels[i]);
    se += d * d;
  }
  const double mse = se / double(a.pixels.size());
  if (mse == 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double bpp(size_t container_bytes, int width, int height) {
  if (width < 1 || height < 1) throw DimensionError("bpp: non-positive dimensions");
  return 8.0 * double(container_bytes) / (double(width) * double(height));
}

RdCurve read_rd_curve_csv(const std::string& text) {
  RdCurve curve;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (auto& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream ls(line);
    double r, p;
    if (ls >> r >> p) curve.points.emplace_back(r, p);
    // non-numeric lines (headers) are skipped
  }
  return curve;
}

namespace {

struct CubicFit {
  double centre = 0, spread = 1;
  std::array<double, 4> coef{};  // in t = (psnr - centre) / spread

  double eval(double psnr) const {
    const double t = (psnr - centre) / spread;
    return coef[0] + t * (coef[1] + t * (coef[2] + t * coef[3]));
  }

  // antiderivative of eval with respect to psnr
  double integral(double lo, double hi) const {
    auto anti = [&](double p) {
      const double t = (p - centre) / spread;
      return spread *
             (coef[0] * t + coef[1] * t * t / 2 + coef[2] * t * t * t / 3 +
              coef[3] * t * t * t * t / 4);
    };
    return anti(hi) - anti(lo);
  }
};

void validate_curve(const RdCurve& c, const char* who) {
  if (c.points.size() < 4)
    throw FormatError(std::string(who) + ": need at least 4 rate-distortion points");
  for (size_t i = 1; i < c.points.size(); ++i) {
    if (!(c.points[i].first > c.points[i - 1].first))
      throw FormatError(std::string(who) + ": bpp must be strictly increasing");
    if (!(c.points[i].second > c.points[i - 1].second))
      throw FormatError(std::string(who) + ": curve is not monotone in PSNR");
  }
  for (auto& [r, p] : c.points)
    if (!(r > 0) || !std::isfinite(p))
      throw FormatError(std::string(who) + ": invalid rate-distortion point");
}

CubicFit fit_log_rate(const RdCurve& curve) {
  const size_t n = curve.points.size();
  CubicFit fit;
  double lo = curve.points.front().second, hi = curve.points.back().second;
  fit.centre = (lo + hi) / 2;
  fit.spread = (hi - lo) / 2;
  if (!(fit.spread > 0)) throw FormatError("bd_rate: degenerate PSNR span");

  // normal equations for the cubic least-squares fit
  std::array<double, 7> xp{};
  std::array<double, 4> xy{};
  for (size_t i = 0; i < n; ++i) {
    const double t = (curve.points[i].second - fit.centre) / fit.spread;
    const double y = std::log(curve.points[i].first);
    double tp = 1;
    for (int d = 0; d < 7; ++d) {
      xp[d] += tp;
      if (d < 4) xy[d] += tp * y;
      tp *= t;
    }
  }
  double a[4][5];
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) a[r][c] = xp[size_t(r + c)];
    a[r][4] = xy[size_t(r)];
  }
  // Gaussian elimination with partial pivoting
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-12) throw FormatError("bd_rate: singular fit");
    if (pivot != col)
      for (int c = 0; c < 5; ++c) std::swap(a[pivot][c], a[col][c]);
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 5; ++c) a[r][c] -= f * a[col][c];
    }
  }
  for (int r = 0; r < 4; ++r) fit.coef[size_t(r)] = a[r][4] / a[r][r];
  return fit;
}

}  // namespace

double bd_rate(const RdCurve& anchor, const RdCurve& test) {
  validate_curve(anchor, "bd_rate anchor");
  validate_curve(test, "bd_rate test");
  const double lo = std::max(anchor.points.front().second, test.points.front().second);
  const double hi = std::min(anchor.points.back().second, test.points.back().second);
  if (!(hi > lo)) throw FormatError("bd_rate: curves share no PSNR interval");
  CubicFit fa = fit_log_rate(anchor);
  CubicFit ft = fit_log_rate(test);
  const double mean_diff = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
  return 100.0 * (std::exp(mean_diff) - 1.0);
}

}  // namespace dcae

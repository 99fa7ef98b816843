// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "evdi/common.hpp"
#include "evdi/event_model.hpp"

namespace evdi {

/// Whether pixel values are proportional to scene radiance or display encoded.
enum class Domain { Linear, Gamma };

inline std::string_view to_string(Domain d) { return d == Domain::Linear ? "linear" : "gamma"; }

/// Interleaved row-major raster with 1 or 3 channels.
class ImageBuffer {
public:
  ImageBuffer() = default;

  ImageBuffer(int width, int height, int channels, Domain domain = Domain::Linear,
              double fill = 0.0)
      : width_(width), height_(height), channels_(channels), domain_(domain) {
    check_shape();
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  ImageBuffer(int width, int height, int channels, std::vector<double> data,
              Domain domain = Domain::Linear)
      : width_(width), height_(height), channels_(channels), domain_(domain),
        data_(std::move(data)) {
    check_shape();
    if (data_.size() != static_cast<std::size_t>(width) * height * channels) {
      throw ArgumentError(detail::concat("image data length ", data_.size(), " does not match ",
                                         width, "x", height, "x", channels));
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  Domain domain() const { return domain_; }
  void set_domain(Domain d) { domain_ = d; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }
  double& operator()(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  double operator()(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  bool same_shape(const ImageBuffer& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  /// Throws ArgumentError on NaN or infinite values.
  void validate() const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw ArgumentError(detail::concat("non-finite image value at element ", i));
      }
    }
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

private:
  void check_shape() const {
    if (width_ < 0 || height_ < 0 || (channels_ != 1 && channels_ != 3)) {
      throw ArgumentError(detail::concat("invalid image shape ", width_, "x", height_, "x",
                                         channels_, " (channels must be 1 or 3)"));
    }
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  Domain domain_ = Domain::Linear;
  std::vector<double> data_;
};

/// Display transfer function: either sRGB or a pure power law.
struct GammaCurve {
  enum class Mode { Srgb, Power };
  Mode mode = Mode::Power;
  double gamma = 2.2;

  static GammaCurve power(double g) {
    if (!(std::isfinite(g) && g > 0.0)) {
      throw ArgumentError(detail::concat("gamma must be positive, got ", g));
    }
    return {Mode::Power, g};
  }
  static GammaCurve srgb() { return {Mode::Srgb, 2.4}; }

  /// Encoded value -> linear.
  double decode(double v) const {
    if (mode == Mode::Power) return std::pow(v, gamma);
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
  }
  /// Linear value -> encoded.
  double encode(double v) const {
    if (mode == Mode::Power) return std::pow(v, 1.0 / gamma);
    return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
  }

  friend bool operator==(const GammaCurve&, const GammaCurve&) = default;
};

namespace detail {

template <typename F>
ImageBuffer map_values(const ImageBuffer& img, Domain out_domain, F&& f) {
  ImageBuffer out(img.width(), img.height(), img.channels(), out_domain);
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!(src[i] >= 0.0)) {
      throw ArgumentError(detail::concat("negative or NaN intensity ", src[i], " at element ", i));
    }
    dst[i] = f(src[i]);
  }
  return out;
}

}  // namespace detail

inline ImageBuffer to_linear(const ImageBuffer& img, const GammaCurve& curve) {
  if (img.domain() != Domain::Gamma) throw ArgumentError("to_linear expects a gamma-domain image");
  return detail::map_values(img, Domain::Linear, [&](double v) { return curve.decode(v); });
}

inline ImageBuffer to_gamma(const ImageBuffer& img, const GammaCurve& curve) {
  if (img.domain() != Domain::Linear) throw ArgumentError("to_gamma expects a linear image");
  return detail::map_values(img, Domain::Gamma, [&](double v) { return curve.encode(v); });
}

/// ITU-R BT.601 luma weights (R, G, B).
inline constexpr std::array<double, 3> kBt601Weights{0.299, 0.587, 0.114};

inline ImageBuffer luma_bt601(const ImageBuffer& rgb) {
  if (rgb.channels() != 3) {
    throw ArgumentError(detail::concat("luma needs 3 channels, got ", rgb.channels()));
  }
  ImageBuffer out(rgb.width(), rgb.height(), 1, rgb.domain());
  auto src = rgb.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = kBt601Weights[0] * src[3 * i] + kBt601Weights[1] * src[3 * i + 1] +
             kBt601Weights[2] * src[3 * i + 2];
  }
  return out;
}

/// Keeps, at each pixel, only the channel its color filter passes.
inline ImageBuffer mosaic(const ImageBuffer& rgb, BayerPattern pattern) {
  if (rgb.channels() != 3) {
    throw ArgumentError(detail::concat("mosaic needs 3 channels, got ", rgb.channels()));
  }
  ImageBuffer out(rgb.width(), rgb.height(), 1, rgb.domain());
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      out(x, y) = rgb(x, y, static_cast<int>(channel_of(pattern, x, y)));
    }
  }
  return out;
}

/// Bilinear demosaic: each missing channel is the mean of same-channel
/// samples in the 3x3 neighborhood, with border coordinates replicated.
inline ImageBuffer demosaic_bilinear(const ImageBuffer& raw, BayerPattern pattern) {
  if (raw.channels() != 1) {
    throw ArgumentError(detail::concat("demosaic needs a 1-channel mosaic, got ", raw.channels()));
  }
  if (raw.width() < 2 || raw.height() < 2) {
    throw ArgumentError(detail::concat("demosaic needs at least 2x2 pixels, got ", raw.width(),
                                       "x", raw.height()));
  }
  const int w = raw.width();
  const int h = raw.height();
  ImageBuffer out(w, h, 3, raw.domain());
  parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < w; ++x) {
      std::array<double, 3> sum{};
      std::array<int, 3> count{};
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::clamp(x + dx, 0, w - 1);
          const auto c = static_cast<std::size_t>(channel_of(pattern, xx, yy));
          sum[c] += raw(xx, yy);
          ++count[c];
        }
      }
      const auto own = static_cast<int>(channel_of(pattern, x, y));
      for (int c = 0; c < 3; ++c) {
        out(x, y, c) = (c == own) ? raw(x, y) : sum[c] / count[c];
      }
    }
  });
  return out;
}

inline constexpr double kPsnrCap = 99.0;

/// Peak signal-to-noise ratio with peak 1.0; identical images give kPsnrCap.
inline double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b)) {
    throw ArgumentError(detail::concat("psnr shape mismatch: ", a.width(), "x", a.height(), "x",
                                       a.channels(), " vs ", b.width(), "x", b.height(), "x",
                                       b.channels()));
  }
  auto da = a.data();
  auto db = b.data();
  if (da.empty()) throw ArgumentError("psnr of empty images");
  double sse = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = da[i] - db[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(da.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(size);
  const double center = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - center;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

// Separable 'valid' correlation of a single-channel w x h plane.
inline std::vector<double> filter_valid(std::span<const double> plane, int w, int h,
                                        const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int ow = w - k + 1;
  const int oh = h - k + 1;
  std::vector<double> horiz(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += taps[i] * plane[static_cast<std::size_t>(y) * w + x + i];
      horiz[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += taps[i] * horiz[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

}  // namespace detail

/// Mean structural similarity over all fully-contained Gaussian windows.
/// Color inputs are compared on their BT.601 luma.
inline double ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& params = {}) {
  if (!a.same_shape(b)) throw ArgumentError("ssim shape mismatch");
  if (a.width() < params.window || a.height() < params.window) {
    throw ArgumentError(detail::concat("ssim needs images of at least ", params.window, "x",
                                       params.window, ", got ", a.width(), "x", a.height()));
  }
  const ImageBuffer la = a.channels() == 3 ? luma_bt601(a) : a;
  const ImageBuffer lb = b.channels() == 3 ? luma_bt601(b) : b;
  const int w = a.width();
  const int h = a.height();
  const auto taps = detail::gaussian_taps(params.window, params.sigma);

  auto x = la.data();
  auto y = lb.data();
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mu_x = detail::filter_valid(x, w, h, taps);
  const auto mu_y = detail::filter_valid(y, w, h, taps);
  const auto e_xx = detail::filter_valid(xx, w, h, taps);
  const auto e_yy = detail::filter_valid(yy, w, h, taps);
  const auto e_xy = detail::filter_valid(xy, w, h, taps);

  const double c1 = std::pow(params.k1 * params.dynamic_range, 2);
  const double c2 = std::pow(params.k2 * params.dynamic_range, 2);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_x.size(); ++i) {
    const double mx = mu_x[i];
    const double my = mu_y[i];
    const double vx = e_xx[i] - mx * mx;
    const double vy = e_yy[i] - my * my;
    const double cxy = e_xy[i] - mx * my;
    total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mu_x.size());
}

}  // namespace evdi

// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "evdi/common.hpp"
#include "evdi/event_model.hpp"
#include "evdi/imaging.hpp"

namespace evdi {

/// How events map onto image channels.
///
/// Monochrome events (no pattern) drive every channel of a pixel. Bayer events
/// drive only the channel the pixel's color filter passes; on a 1-channel
/// mosaic that is simply the pixel itself.
struct EventLayout {
  std::optional<BayerPattern> bayer;

  static EventLayout mono() { return {}; }
  static EventLayout color(BayerPattern p) { return {p}; }
  bool is_bayer() const { return bayer.has_value(); }
};

/// One real value per pixel.
struct PixelMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  PixelMap() = default;
  PixelMap(int w, int h, double fill) : width(w), height(h), values(std::size_t(w) * h, fill) {}

  double& operator()(int x, int y) { return values[std::size_t(y) * width + x]; }
  double operator()(int x, int y) const { return values[std::size_t(y) * width + x]; }
};

/// Signed log-intensity change per pixel over a window: sum of p * theta_p.
struct AccumulatorImage : PixelMap {
  using PixelMap::PixelMap;
};

/// Per-pixel exposure integral (1/tau) * integral of exp(theta * E(h)) dh,
/// with E referenced to mid-exposure.
struct EdiKernelImage : PixelMap {
  using PixelMap::PixelMap;
};

namespace detail {

inline std::span<const Event>::iterator first_at_or_after(std::span<const Event> ev, double t) {
  return std::lower_bound(ev.begin(), ev.end(), t,
                          [](const Event& e, double v) { return static_cast<double>(e.t) < v; });
}

template <typename F>
void for_each_row(int height, F&& f) {
  parallel_for(0, static_cast<std::size_t>(height), [&](std::size_t y) { f(static_cast<int>(y)); });
}

inline void check_stream_matches(const ImageBuffer& img, const EventStream& stream) {
  if (img.width() != stream.width() || img.height() != stream.height()) {
    throw ArgumentError(detail::concat("image ", img.width(), "x", img.height(),
                                       " does not match event stream ", stream.width(), "x",
                                       stream.height()));
  }
}

// Applies a per-pixel factor according to the channel policy.
template <typename F>
ImageBuffer scale_pixels(const ImageBuffer& img, const EventLayout& layout, F&& factor_of) {
  ImageBuffer out = img;
  const int channels = img.channels();
  for_each_row(img.height(), [&](int y) {
    for (int x = 0; x < img.width(); ++x) {
      const double f = factor_of(x, y);
      if (channels == 1 || !layout.is_bayer()) {
        for (int c = 0; c < channels; ++c) out(x, y, c) = img(x, y, c) * f;
      } else {
        const int c = static_cast<int>(channel_of(*layout.bayer, x, y));
        out(x, y, c) = img(x, y, c) * f;
      }
    }
  });
  return out;
}

}  // namespace detail

/// Sum of p * theta_p per pixel over events with t0 <= t < t1.
inline AccumulatorImage accumulate(const EventStream& stream, Timestamp t0, Timestamp t1,
                                   const ThresholdConfig& thr) {
  if (t0 > t1) {
    throw ArgumentError(detail::concat("accumulate bounds reversed: t0=", t0, " > t1=", t1));
  }
  AccumulatorImage acc(stream.width(), stream.height(), 0.0);
  detail::for_each_row(stream.height(), [&](int y) {
    for (int x = 0; x < stream.width(); ++x) {
      auto ev = stream.pixel_events(x, y);
      auto it = detail::first_at_or_after(ev, static_cast<double>(t0));
      double sum = 0.0;
      for (; it != ev.end() && it->t < t1; ++it) sum += thr.step(it->p);
      acc(x, y) = sum;
    }
  });
  return acc;
}

/// Propagates a linear image from time t to t_target through the events
/// in between: I(t_target) = I(t) * exp(theta * E). A backward warp uses the
/// negated accumulation of [t_target, t), so warping there and back is the
/// identity up to rounding.
inline ImageBuffer warp_intensity(const ImageBuffer& img, const EventStream& stream, Timestamp t,
                                  Timestamp t_target, const ThresholdConfig& thr,
                                  const EventLayout& layout = {}) {
  if (img.domain() != Domain::Linear) {
    throw ArgumentError("warp_intensity expects a linear-domain image");
  }
  detail::check_stream_matches(img, stream);
  const bool forward = t_target >= t;
  const AccumulatorImage acc =
      forward ? accumulate(stream, t, t_target, thr) : accumulate(stream, t_target, t, thr);
  const double sign = forward ? 1.0 : -1.0;
  return detail::scale_pixels(img, layout,
                              [&](int x, int y) { return std::exp(sign * acc(x, y)); });
}

/// Exact double-integral kernel over [t_mid - tau/2, t_mid + tau/2).
///
/// Per pixel the window events split time into intervals on which the
/// mid-referenced accumulation is constant, so the integral is a finite sum
/// of length * exp(level). A pixel without events in the window yields 1.
inline EdiKernelImage edi_kernel(const EventStream& stream, Timestamp t_mid, Timestamp tau,
                                 const ThresholdConfig& thr) {
  if (tau == 0) throw ArgumentError("exposure tau must be positive");
  const double tau_d = static_cast<double>(tau);
  const double mid = static_cast<double>(t_mid);
  const double lo = mid - tau_d / 2.0;
  const double hi = mid + tau_d / 2.0;
  EdiKernelImage kernel(stream.width(), stream.height(), 1.0);
  detail::for_each_row(stream.height(), [&](int y) {
    for (int x = 0; x < stream.width(); ++x) {
      auto ev = stream.pixel_events(x, y);
      auto first = detail::first_at_or_after(ev, lo);
      auto last = detail::first_at_or_after(ev, hi);
      if (first == last) continue;
      // Level on [lo, first event): undo everything between lo and t_mid.
      double level = 0.0;
      for (auto it = first; it != last && static_cast<double>(it->t) < mid; ++it) {
        level -= thr.step(it->p);
      }
      double prev = lo;
      double sum = 0.0;
      for (auto it = first; it != last; ++it) {
        const double te = static_cast<double>(it->t);
        sum += (te - prev) * std::exp(level);
        level += thr.step(it->p);
        prev = te;
      }
      sum += (hi - prev) * std::exp(level);
      kernel(x, y) = sum / tau_d;
    }
  });
  return kernel;
}

/// Latent sharp image at mid-exposure: blur divided by the EDI kernel.
inline ImageBuffer edi_deblur(const ImageBuffer& blur, const EventStream& stream, Timestamp t_mid,
                              Timestamp tau, const ThresholdConfig& thr,
                              const EventLayout& layout = {}) {
  if (blur.domain() != Domain::Linear) {
    throw ArgumentError("edi_deblur expects a linear-domain blurry image");
  }
  detail::check_stream_matches(blur, stream);
  const EdiKernelImage kernel = edi_kernel(stream, t_mid, tau, thr);
  return detail::scale_pixels(blur, layout, [&](int x, int y) {
    const double k = kernel(x, y);
    if (!(k > 0.0)) {
      throw InternalError(detail::concat("non-positive EDI kernel ", k, " at (", x, ", ", y, ")"));
    }
    return 1.0 / k;
  });
}

/// Latent frames at the query times, propagated from the mid-exposure
/// latent. Every query must lie inside the stream's coverage span.
inline std::vector<ImageBuffer> reconstruct_video(const ImageBuffer& blur,
                                                  const EventStream& stream, Timestamp t_mid,
                                                  Timestamp tau, const ThresholdConfig& thr,
                                                  std::span<const Timestamp> query_ts,
                                                  const EventLayout& layout = {}) {
  const TimeSpan& cov = stream.coverage();
  for (Timestamp q : query_ts) {
    if (!cov.contains(static_cast<double>(q))) {
      throw ArgumentError(detail::concat("query timestamp ", q, " outside event span [",
                                         cov.begin, ", ", cov.end, "]"));
    }
  }
  if (!cov.contains(static_cast<double>(t_mid))) {
    throw ArgumentError(detail::concat("mid-exposure ", t_mid, " outside event span [", cov.begin,
                                       ", ", cov.end, "]"));
  }
  const ImageBuffer latent = edi_deblur(blur, stream, t_mid, tau, thr, layout);
  std::vector<ImageBuffer> frames;
  frames.reserve(query_ts.size());
  for (Timestamp q : query_ts) {
    frames.push_back(q == t_mid ? latent : warp_intensity(latent, stream, t_mid, q, thr, layout));
  }
  return frames;
}

}  // namespace evdi

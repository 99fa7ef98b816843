// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "evdi/common.hpp"
#include "evdi/dataio.hpp"
#include "evdi/event_model.hpp"
#include "evdi/geometry.hpp"
#include "evdi/imaging.hpp"

namespace evdi {

struct Frame {
  Timestamp t = 0;
  ImageBuffer image;  // linear
  std::optional<Pose> pose;
};

/// Linear-domain frames of one shape, sorted by strictly increasing time.
///
/// Each frame holds until the next one; the last frame holds for the final
/// inter-frame gap, so `span()` ends one spacing past the last timestamp.
class FrameSequence {
public:
  FrameSequence() = default;

  explicit FrameSequence(std::vector<Frame> frames) : frames_(std::move(frames)) {
    std::stable_sort(frames_.begin(), frames_.end(),
                     [](const Frame& a, const Frame& b) { return a.t < b.t; });
    for (std::size_t i = 0; i < frames_.size(); ++i) {
      const Frame& f = frames_[i];
      if (f.image.domain() != Domain::Linear) {
        throw ArgumentError(detail::concat("frame ", i, " is not in the linear domain"));
      }
      if (i > 0) {
        if (!f.image.same_shape(frames_[0].image)) {
          throw ArgumentError(detail::concat("frame ", i, " shape differs from frame 0"));
        }
        if (f.t == frames_[i - 1].t) {
          throw ArgumentError(detail::concat("duplicate frame timestamp ", f.t));
        }
      }
    }
  }

  const std::vector<Frame>& frames() const { return frames_; }
  std::size_t size() const { return frames_.size(); }
  int width() const { return frames_.empty() ? 0 : frames_[0].image.width(); }
  int height() const { return frames_.empty() ? 0 : frames_[0].image.height(); }
  int channels() const { return frames_.empty() ? 0 : frames_[0].image.channels(); }

  TimeSpan span() const {
    if (frames_.empty()) return {};
    if (frames_.size() == 1) return {frames_[0].t, frames_[0].t};
    const Timestamp last_gap = frames_.back().t - frames_[frames_.size() - 2].t;
    return {frames_.front().t, frames_.back().t + last_gap};
  }

  bool has_poses() const {
    return !frames_.empty() &&
           std::all_of(frames_.begin(), frames_.end(), [](const Frame& f) { return f.pose.has_value(); });
  }

private:
  std::vector<Frame> frames_;
};

enum class EventMode { Luma, Bayer };

struct SimulatorConfig {
  ThresholdConfig thresholds = ThresholdConfig::symmetric(0.2);
  Timestamp refractory_us = 0;
  double log_floor = 1e-3;
  EventMode mode = EventMode::Luma;
  BayerPattern pattern = BayerPattern::RGGB;
  /// Optional sensor response applied to intensity before the log. Models
  /// an event pixel that deviates from the ideal logarithmic response.
  std::function<double(double)> response;

  void validate() const {
    if (!(log_floor > 0.0 && log_floor <= 0.1)) {
      throw ArgumentError(detail::concat("log floor must lie in (0, 0.1], got ", log_floor));
    }
  }
};

/// Crossings within this many log units of a level count as reached, so
/// that a ramp ending exactly on a level fires there.
inline constexpr double kCrossingTolerance = 1e-9;

namespace detail {

// Per-frame event-pixel log signal, one plane per frame.
inline std::vector<std::vector<double>> log_signal(const FrameSequence& seq,
                                                   const SimulatorConfig& cfg) {
  std::vector<std::vector<double>> planes;
  planes.reserve(seq.size());
  for (const Frame& f : seq.frames()) {
    ImageBuffer plane = f.image;
    if (plane.channels() == 3) {
      plane = cfg.mode == EventMode::Luma ? luma_bt601(plane) : mosaic(plane, cfg.pattern);
    }
    std::vector<double> values(plane.data().begin(), plane.data().end());
    for (double& v : values) {
      const double r = cfg.response ? cfg.response(v) : v;
      v = std::log(std::max(r, cfg.log_floor));
    }
    planes.push_back(std::move(values));
  }
  return planes;
}

// Integer timestamp of a crossing at fraction `frac` of [t0, t1]. Events of
// an interval land in (t0, t1].
inline Timestamp crossing_time(Timestamp t0, Timestamp t1, double frac) {
  const double dt = static_cast<double>(t1 - t0);
  double offset = std::ceil(frac * dt - 1e-6);
  offset = std::clamp(offset, 1.0, dt);
  return t0 + static_cast<Timestamp>(offset);
}

}  // namespace detail

/// Generates events by thresholding the log signal of each pixel.
///
/// The log signal is interpolated linearly between frames. Each pixel keeps
/// a reference level starting at the first frame; every full threshold
/// crossing emits one event at the interpolated crossing time and moves the
/// reference by exactly one threshold. Crossings inside the refractory gap
/// are dropped but still move the reference.
inline EventStream events_from_frames(const FrameSequence& seq, const SimulatorConfig& cfg) {
  cfg.validate();
  if (seq.size() < 2) {
    throw ArgumentError(detail::concat("event simulation needs at least 2 frames, got ", seq.size()));
  }
  const int w = seq.width();
  const int h = seq.height();
  const auto planes = detail::log_signal(seq, cfg);
  const auto& frames = seq.frames();
  const double up = cfg.thresholds.pos();
  const double down = cfg.thresholds.neg();

  std::vector<std::vector<Event>> rows(h);
  parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    auto& out = rows[row];
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      double ref = planes[0][idx];
      std::optional<Timestamp> last_emit;
      auto emit = [&](Timestamp t, int p) {
        if (cfg.refractory_us > 0 && last_emit && t < *last_emit + cfg.refractory_us) return;
        out.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                       static_cast<std::int8_t>(p)});
        last_emit = t;
      };
      for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
        const double a = planes[k][idx];
        const double b = planes[k + 1][idx];
        const Timestamp t0 = frames[k].t;
        const Timestamp t1 = frames[k + 1].t;
        if (b > a) {
          while (b >= ref + up - kCrossingTolerance) {
            const double level = ref + up;
            emit(detail::crossing_time(t0, t1, std::clamp((level - a) / (b - a), 0.0, 1.0)), 1);
            ref = level;
          }
        } else if (b < a) {
          while (b <= ref - down + kCrossingTolerance) {
            const double level = ref - down;
            emit(detail::crossing_time(t0, t1, std::clamp((a - level) / (a - b), 0.0, 1.0)), -1);
            ref = level;
          }
        }
      }
    }
  });

  std::vector<Event> all;
  std::size_t total = 0;
  for (const auto& r : rows) total += r.size();
  all.reserve(total);
  for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  return build_stream(std::move(all), w, h, seq.span());
}

/// Unweighted mean of the frames with t_mid - tau/2 <= t < t_mid + tau/2.
inline ImageBuffer synthesize_blur(const FrameSequence& seq, Timestamp t_mid, Timestamp tau) {
  const double lo = static_cast<double>(t_mid) - static_cast<double>(tau) / 2.0;
  const double hi = static_cast<double>(t_mid) + static_cast<double>(tau) / 2.0;
  const TimeSpan span = seq.span();
  if (seq.size() == 0 || !span.covers(lo, hi)) {
    throw ArgumentError(detail::concat("exposure window [", lo, ", ", hi,
                                       ") not covered by frame sequence span [", span.begin, ", ",
                                       span.end, "]"));
  }
  ImageBuffer sum(seq.width(), seq.height(), seq.channels(), Domain::Linear, 0.0);
  std::size_t count = 0;
  for (const Frame& f : seq.frames()) {
    const double t = static_cast<double>(f.t);
    if (t < lo || t >= hi) continue;
    auto src = f.image.data();
    auto dst = sum.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    ++count;
  }
  if (count == 0) {
    throw ArgumentError(detail::concat("no frames inside exposure window [", lo, ", ", hi, ")"));
  }
  for (double& v : sum.data()) v /= static_cast<double>(count);
  return sum;
}

/// Mid-exposure timestamps of every full exposure window that fits in the
/// sequence span, one every `period` microseconds.
inline std::vector<Timestamp> view_times(const TimeSpan& span, Timestamp tau, Timestamp period) {
  if (tau == 0 || period == 0) throw ArgumentError("exposure and view period must be positive");
  std::vector<Timestamp> mids;
  const Timestamp half_up = (tau + 1) / 2;
  for (Timestamp start = span.begin;; start += period) {
    const Timestamp mid = start + half_up;
    if (static_cast<double>(mid) + static_cast<double>(tau) / 2.0 > static_cast<double>(span.end)) break;
    mids.push_back(mid);
  }
  return mids;
}

struct RenderOptions {
  GammaCurve gamma = GammaCurve::power(2.2);
  int png_bit_depth = 16;
};

/// Writes a blurry-view dataset: gamma-encoded blur frames, mid-exposure
/// sharp frames, the event stream, the frame poses when present, and
/// manifest.json. Output depends only on the inputs.
inline DatasetManifest render_dataset(const FrameSequence& seq, Timestamp tau, Timestamp period,
                                      const SimulatorConfig& cfg, const fs::path& out_dir,
                                      const RenderOptions& opts = {}) {
  const auto mids = view_times(seq.span(), tau, period);
  if (mids.empty()) {
    throw ArgumentError(detail::concat("sequence span [", seq.span().begin, ", ", seq.span().end,
                                       "] is shorter than one exposure of ", tau, " us"));
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw FormatError(detail::concat("cannot create '", out_dir.string(), "': ", ec.message()));

  const EventStream events = events_from_frames(seq, cfg);
  DatasetManifest m;
  m.base_dir = out_dir;
  m.events = "events.evt1";
  m.width = seq.width();
  m.height = seq.height();
  m.events_span = events.coverage();
  m.exposure_us = tau;
  m.theta = cfg.thresholds.pos();
  if (cfg.thresholds.neg() != cfg.thresholds.pos()) m.theta_neg = cfg.thresholds.neg();
  if (cfg.mode == EventMode::Bayer) m.bayer = cfg.pattern;
  m.gamma = opts.gamma;
  write_events(out_dir / m.events, events);

  auto encode = [&](const ImageBuffer& linear) {
    ImageBuffer clamped = linear;
    for (double& v : clamped.data()) v = std::clamp(v, 0.0, 1.0);
    return to_gamma(clamped, opts.gamma);
  };
  for (std::size_t k = 0; k < mids.size(); ++k) {
    ImageBuffer blur = synthesize_blur(seq, mids[k], tau);
    if (cfg.mode == EventMode::Bayer && blur.channels() == 3) blur = mosaic(blur, cfg.pattern);
    const auto& frames = seq.frames();
    const auto nearest = std::min_element(frames.begin(), frames.end(), [&](const Frame& a, const Frame& b) {
      auto dist = [&](const Frame& f) { return f.t > mids[k] ? f.t - mids[k] : mids[k] - f.t; };
      return dist(a) < dist(b);
    });
    ManifestView view;
    view.t_mid_us = mids[k];
    view.blur = detail::numbered_name("blur_", k, ".png");
    view.sharp = detail::numbered_name("sharp_", k, ".png");
    write_png(out_dir / view.blur, encode(blur), opts.png_bit_depth);
    write_png(out_dir / *view.sharp, encode(nearest->image), opts.png_bit_depth);
    m.views.push_back(std::move(view));
  }
  if (seq.has_poses()) {
    std::vector<Pose> poses;
    for (const Frame& f : seq.frames()) {
      Pose p = *f.pose;
      p.t = f.t;
      poses.push_back(p);
    }
    m.poses = "poses.csv";
    write_poses(out_dir / *m.poses, PoseTrack(std::move(poses)));
  }
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

}  // namespace evdi

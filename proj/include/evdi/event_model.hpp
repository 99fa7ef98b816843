// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evdi/common.hpp"

namespace evdi {

/// A single brightness-change report. Polarity is +1 or -1.
struct Event {
  Timestamp t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Closed time interval [begin, end] in microseconds.
struct TimeSpan {
  Timestamp begin = 0;
  Timestamp end = 0;

  bool contains(double t) const {
    return t >= static_cast<double>(begin) && t <= static_cast<double>(end);
  }
  bool covers(double lo, double hi) const { return contains(lo) && contains(hi); }

  friend bool operator==(const TimeSpan&, const TimeSpan&) = default;
};

/// Per-polarity contrast thresholds in log-intensity units.
class ThresholdConfig {
public:
  ThresholdConfig(double theta_pos, double theta_neg) : pos_(theta_pos), neg_(theta_neg) {
    if (!(std::isfinite(pos_) && pos_ > 0.0) || !(std::isfinite(neg_) && neg_ > 0.0)) {
      throw ArgumentError(detail::concat("thresholds must be positive and finite, got (",
                                         pos_, ", ", neg_, ")"));
    }
  }

  static ThresholdConfig symmetric(double theta) { return {theta, theta}; }

  double pos() const { return pos_; }
  double neg() const { return neg_; }

  /// Signed log-intensity step carried by one event of polarity p.
  double step(int p) const { return p > 0 ? pos_ : -neg_; }

  friend bool operator==(const ThresholdConfig&, const ThresholdConfig&) = default;

private:
  double pos_;
  double neg_;
};

enum class BayerPattern { RGGB, GRBG, GBRG, BGGR };
enum class Channel { R = 0, G = 1, B = 2 };

/// Color filter of pixel (x, y). Depends only on coordinate parity.
constexpr Channel channel_of(BayerPattern pattern, std::size_t x, std::size_t y) {
  // Tile layout indexed by (y % 2) * 2 + (x % 2).
  constexpr std::array<std::array<Channel, 4>, 4> kTiles{{
      {Channel::R, Channel::G, Channel::G, Channel::B},  // RGGB
      {Channel::G, Channel::R, Channel::B, Channel::G},  // GRBG
      {Channel::G, Channel::B, Channel::R, Channel::G},  // GBRG
      {Channel::B, Channel::G, Channel::G, Channel::R},  // BGGR
  }};
  return kTiles[static_cast<std::size_t>(pattern)][(y % 2) * 2 + (x % 2)];
}

inline std::string_view to_string(BayerPattern pattern) {
  switch (pattern) {
    case BayerPattern::RGGB: return "RGGB";
    case BayerPattern::GRBG: return "GRBG";
    case BayerPattern::GBRG: return "GBRG";
    case BayerPattern::BGGR: return "BGGR";
  }
  return "RGGB";
}

inline BayerPattern parse_bayer_pattern(std::string_view name) {
  for (auto p : {BayerPattern::RGGB, BayerPattern::GRBG, BayerPattern::GBRG, BayerPattern::BGGR}) {
    if (to_string(p) == name) return p;
  }
  throw ArgumentError(detail::concat("unknown Bayer pattern '", name, "'"));
}

/// Time-sorted events on a pixel grid with a pixel-major index.
///
/// Events are ordered by (t, y, x); same-pixel events sharing a timestamp
/// keep their input order. The coverage span records the interval over
/// which the stream is known to be complete, which may extend beyond the
/// first and last event (a static scene covers its span with no events).
class EventStream {
public:
  EventStream() = default;

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }
  std::span<const Event> events() const { return events_; }
  const TimeSpan& coverage() const { return coverage_; }

  /// Events of pixel (x, y) in time order.
  std::span<const Event> pixel_events(int x, int y) const {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) {
      throw ArgumentError(detail::concat("pixel (", x, ", ", y, ") outside ", width_, "x",
                                         height_, " stream"));
    }
    const std::size_t idx = static_cast<std::size_t>(y) * width_ + x;
    return std::span<const Event>(by_pixel_).subspan(offsets_[idx],
                                                     offsets_[idx + 1] - offsets_[idx]);
  }

  /// Index range [first, last) of events with t0 <= t < t1.
  std::pair<std::size_t, std::size_t> range(Timestamp t0, Timestamp t1) const {
    auto by_time = [](const Event& e, Timestamp t) { return e.t < t; };
    auto lo = std::lower_bound(events_.begin(), events_.end(), t0, by_time);
    auto hi = std::lower_bound(lo, events_.end(), t1, by_time);
    return {static_cast<std::size_t>(lo - events_.begin()),
            static_cast<std::size_t>(hi - events_.begin())};
  }

  /// Events with t0 <= t < t1. Coverage becomes [t0, t1] clipped to ours.
  EventStream slice(Timestamp t0, Timestamp t1) const {
    if (t0 > t1) {
      throw ArgumentError(detail::concat("slice bounds reversed: t0=", t0, " > t1=", t1));
    }
    const auto [lo, hi] = range(t0, t1);
    std::vector<Event> sub(events_.begin() + lo, events_.begin() + hi);
    TimeSpan cov{std::max(t0, coverage_.begin), std::min(t1, coverage_.end)};
    if (cov.end < cov.begin) cov = {t0, t0};
    return EventStream(width_, height_, std::move(sub), cov);
  }

  /// Same events, new coverage. The span must contain every event.
  EventStream with_coverage(TimeSpan span) const {
    check_coverage(span);
    EventStream copy = *this;
    copy.coverage_ = span;
    return copy;
  }

  friend bool operator==(const EventStream& a, const EventStream& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.events_ == b.events_;
  }

private:
  friend EventStream build_stream(std::vector<Event>, int, int, std::optional<TimeSpan>);

  EventStream(int width, int height, std::vector<Event> sorted, TimeSpan coverage)
      : width_(width), height_(height), events_(std::move(sorted)), coverage_(coverage) {
    index_pixels();
  }

  void check_coverage(const TimeSpan& span) const {
    if (span.end < span.begin) {
      throw ArgumentError(detail::concat("coverage end ", span.end, " precedes begin ", span.begin));
    }
    if (!events_.empty() && (events_.front().t < span.begin || events_.back().t > span.end)) {
      throw ArgumentError(detail::concat("coverage [", span.begin, ", ", span.end,
                                         "] does not contain events spanning [",
                                         events_.front().t, ", ", events_.back().t, "]"));
    }
  }

  void index_pixels() {
    const std::size_t pixels = static_cast<std::size_t>(width_) * height_;
    offsets_.assign(pixels + 1, 0);
    for (const Event& e : events_) ++offsets_[static_cast<std::size_t>(e.y) * width_ + e.x + 1];
    for (std::size_t i = 0; i < pixels; ++i) offsets_[i + 1] += offsets_[i];
    by_pixel_.resize(events_.size());
    std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (const Event& e : events_) {
      by_pixel_[cursor[static_cast<std::size_t>(e.y) * width_ + e.x]++] = e;
    }
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<Event> events_;
  TimeSpan coverage_{};
  std::vector<std::size_t> offsets_{0};
  std::vector<Event> by_pixel_;
};

/// Validates and sorts raw events into a stream.
///
/// Throws ArgumentError listing the input indices of events that are out of
/// bounds or carry a polarity other than +1/-1. Without an explicit coverage
/// the stream covers [first event, last event].
inline EventStream build_stream(std::vector<Event> raw, int width, int height,
                                std::optional<TimeSpan> coverage = std::nullopt) {
  if (width < 0 || height < 0 || width > 65535 || height > 65535) {
    throw ArgumentError(detail::concat("invalid stream size ", width, "x", height));
  }
  std::vector<std::size_t> out_of_bounds;
  std::vector<std::size_t> bad_polarity;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const Event& e = raw[i];
    if (e.x >= width || e.y >= height) out_of_bounds.push_back(i);
    if (e.p != 1 && e.p != -1) bad_polarity.push_back(i);
  }
  if (!out_of_bounds.empty() || !bad_polarity.empty()) {
    auto list = [](const std::vector<std::size_t>& idx) {
      std::string s;
      const std::size_t shown = std::min<std::size_t>(idx.size(), 20);
      for (std::size_t i = 0; i < shown; ++i) s += (i ? ", " : "") + std::to_string(idx[i]);
      if (idx.size() > shown) s += detail::concat(", ... (", idx.size(), " total)");
      return s;
    };
    std::string msg = "invalid events:";
    if (!out_of_bounds.empty()) {
      msg += detail::concat(" out of bounds for ", width, "x", height, " at index ",
                            list(out_of_bounds), ";");
    }
    if (!bad_polarity.empty()) msg += " polarity not +1/-1 at index " + list(bad_polarity) + ";";
    throw ArgumentError(msg);
  }

  std::stable_sort(raw.begin(), raw.end(), [](const Event& a, const Event& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });

  TimeSpan span{};
  if (!raw.empty()) span = {raw.front().t, raw.back().t};
  EventStream stream(width, height, std::move(raw), span);
  if (coverage) return stream.with_coverage(*coverage);
  return stream;
}

}  // namespace evdi

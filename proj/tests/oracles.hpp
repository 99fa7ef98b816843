// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

// Brute-force reference computations used as test oracles.

#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "evdi/event_model.hpp"
#include "evdi/imaging.hpp"
#include "evdi/integrator.hpp"
#include "evdi/simulator.hpp"

namespace evdi::testing {

inline EventStream random_stream(int w, int h, std::size_t n, Timestamp t0, Timestamp t1, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Timestamp> t(t0, t1 - 1);
  std::uniform_int_distribution<int> x(0, w - 1), y(0, h - 1), p(0, 1);
  std::vector<Event> raw(n);
  for (Event& e : raw) {
    e.t = t(rng);
    e.x = static_cast<std::uint16_t>(x(rng));
    e.y = static_cast<std::uint16_t>(y(rng));
    e.p = static_cast<std::int8_t>(p(rng) ? 1 : -1);
  }
  return build_stream(std::move(raw), w, h);
}

// Log level at time h relative to t_mid, by direct summation.
inline double level_at(std::span<const Event> ev, double h, double mid, const ThresholdConfig& thr) {
  double sum = 0.0;
  for (const Event& e : ev) {
    const double t = static_cast<double>(e.t);
    if (h >= mid && t >= mid && t <= h) sum += thr.step(e.p);
    if (h < mid && t > h && t < mid) sum -= thr.step(e.p);
  }
  return sum;
}

// Midpoint rule over the exposure with n samples.
inline double kernel_quadrature(std::span<const Event> ev, Timestamp t_mid, Timestamp tau,
                                const ThresholdConfig& thr, int n) {
  const double mid = static_cast<double>(t_mid);
  const double lo = mid - static_cast<double>(tau) / 2.0;
  const double dt = static_cast<double>(tau) / n;
  std::vector<Event> inside;
  for (const Event& e : ev) {
    if (static_cast<double>(e.t) >= lo && static_cast<double>(e.t) < lo + static_cast<double>(tau)) inside.push_back(e);
  }
  double sum = 0.0;
  std::size_t next = 0;
  double level = 0.0;
  for (const Event& e : inside) {
    if (static_cast<double>(e.t) < mid) level -= thr.step(e.p);
  }
  double value = std::exp(level);
  for (int i = 0; i < n; ++i) {
    const double h = lo + (i + 0.5) * dt;
    bool moved = false;
    while (next < inside.size() && static_cast<double>(inside[next].t) <= h) {
      level += thr.step(inside[next++].p);
      moved = true;
    }
    if (moved) value = std::exp(level);
    sum += value;
  }
  return sum / n;
}

// Exposure average of the latent video of `latent`, evaluated exactly per
// pixel piece by piece with every level summed from scratch.
inline ImageBuffer exposure_average(const ImageBuffer& latent, const EventStream& s, Timestamp t_mid, Timestamp tau,
                                    const ThresholdConfig& thr, const EventLayout& layout = {}) {
  const double mid = static_cast<double>(t_mid);
  const double lo = mid - static_cast<double>(tau) / 2.0;
  const double hi = mid + static_cast<double>(tau) / 2.0;
  ImageBuffer out = latent;
  for (int y = 0; y < latent.height(); ++y) {
    for (int x = 0; x < latent.width(); ++x) {
      std::vector<double> cuts{lo};
      for (const Event& e : s.pixel_events(x, y)) {
        const double t = static_cast<double>(e.t);
        if (t >= lo && t < hi) cuts.push_back(t);
      }
      cuts.push_back(hi);
      double factor = 0.0;
      for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        factor += (cuts[k + 1] - cuts[k]) * std::exp(level_at(s.pixel_events(x, y), cuts[k], mid, thr));
      }
      factor /= static_cast<double>(tau);
      for (int c = 0; c < latent.channels(); ++c) {
        const bool driven = latent.channels() == 1 || !layout.is_bayer() ||
                            static_cast<int>(channel_of(*layout.bayer, x, y)) == c;
        if (driven) out(x, y, c) = latent(x, y, c) * factor;
      }
    }
  }
  return out;
}

// Independent reference: resample the interpolated log signal `factor` times
// per frame interval and fire whenever a sample clears the next level.
inline std::vector<std::vector<Event>> dense_oracle(const FrameSequence& seq, double theta, int factor) {
  const int w = seq.width(), h = seq.height();
  std::vector<std::vector<Event>> out(static_cast<std::size_t>(w) * h);
  const auto& fr = seq.frames();
  for (int i = 0; i < w * h; ++i) {
    double ref = std::log(std::max(fr[0].image.data()[i], 1e-3));
    for (std::size_t k = 0; k + 1 < fr.size(); ++k) {
      const double a = std::log(std::max(fr[k].image.data()[i], 1e-3));
      const double b = std::log(std::max(fr[k + 1].image.data()[i], 1e-3));
      for (int j = 1; j <= factor; ++j) {
        const double s = static_cast<double>(j) / factor;
        const double v = a + (b - a) * s;
        const Timestamp t = fr[k].t + static_cast<Timestamp>(std::llround(s * static_cast<double>(fr[k + 1].t - fr[k].t)));
        while (v >= ref + theta) {
          ref += theta;
          out[i].push_back({t, static_cast<std::uint16_t>(i % w), static_cast<std::uint16_t>(i / w), 1});
        }
        while (v <= ref - theta) {
          ref -= theta;
          out[i].push_back({t, static_cast<std::uint16_t>(i % w), static_cast<std::uint16_t>(i / w), -1});
        }
      }
    }
  }
  return out;
}

}  // namespace evdi::testing

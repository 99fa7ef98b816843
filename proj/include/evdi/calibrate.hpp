// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "evdi/common.hpp"
#include "evdi/dataio.hpp"
#include "evdi/event_model.hpp"
#include "evdi/imaging.hpp"
#include "evdi/integrator.hpp"

namespace evdi {

/// Hand-picked thresholds used for reference in reports.
inline constexpr double kReferenceThetaRealCamera = 0.25;
inline constexpr double kReferenceThetaSynthetic = 0.2;

struct CalibrationView {
  Timestamp t_mid = 0;
  ImageBuffer blur;  // linear
};

/// Consecutive blurry views sharing one event stream.
struct CalibrationDataset {
  EventStream events;
  std::vector<CalibrationView> views;
  Timestamp exposure_us = 0;
  EventLayout layout;
  double log_floor = 1e-3;
};

inline CalibrationDataset load_calibration_dataset(const DatasetManifest& m) {
  CalibrationDataset d;
  d.events = load_events(m);
  d.exposure_us = m.exposure_us;
  d.layout.bayer = m.bayer;
  for (std::size_t i = 0; i < m.views.size(); ++i) {
    LoadedView v = load_view(m, i);
    d.views.push_back({v.t_mid, std::move(v.blur)});
  }
  return d;
}

namespace detail {

inline void check_calibration_pairs(const CalibrationDataset& d) {
  if (d.views.size() < 2) {
    throw ArgumentError(detail::concat("calibration needs at least 2 consecutive views, got ",
                                       d.views.size()));
  }
  const double half = static_cast<double>(d.exposure_us) / 2.0;
  for (std::size_t i = 0; i + 1 < d.views.size(); ++i) {
    const double lo = static_cast<double>(d.views[i].t_mid) - half;
    const double hi = static_cast<double>(d.views[i + 1].t_mid) + half;
    if (!d.events.coverage().covers(lo, hi)) {
      throw ArgumentError(detail::concat("missing events for the gap between view ", i, " and view ",
                                         i + 1, ": [", lo, ", ", hi, "] not inside event span [",
                                         d.events.coverage().begin, ", ", d.events.coverage().end, "]"));
    }
  }
}

}  // namespace detail

/// Cross-view consistency of the double-integral latents for a threshold.
///
/// Each view is deblurred with the candidate threshold, propagated to the
/// next view's mid-exposure through the events in between, and compared
/// there with that view's own latent. The loss is the mean squared log
/// difference (intensities floored at log_floor), averaged over pairs in
/// pair order.
inline double consistency_loss(const ThresholdConfig& thr, const CalibrationDataset& d) {
  detail::check_calibration_pairs(d);
  std::vector<ImageBuffer> latents;
  latents.reserve(d.views.size());
  for (const auto& v : d.views) {
    latents.push_back(edi_deblur(v.blur, d.events, v.t_mid, d.exposure_us, thr, d.layout));
  }
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < d.views.size(); ++i) {
    const ImageBuffer predicted =
        warp_intensity(latents[i], d.events, d.views[i].t_mid, d.views[i + 1].t_mid, thr, d.layout);
    auto p = predicted.data();
    auto q = latents[i + 1].data();
    double sum = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double diff = std::log(std::max(p[k], d.log_floor)) - std::log(std::max(q[k], d.log_floor));
      sum += diff * diff;
    }
    total += sum / static_cast<double>(p.size());
  }
  return total / static_cast<double>(d.views.size() - 1);
}

inline double consistency_loss(double theta, const CalibrationDataset& d) {
  return consistency_loss(ThresholdConfig::symmetric(theta), d);
}

// ---------------------------------------------------------------------------
// Golden-section search
// ---------------------------------------------------------------------------

inline constexpr double kInvGoldenRatio = 0.6180339887498948482;

struct GoldenSectionResult {
  double x = 0.0;
  double fx = 0.0;
  std::vector<std::pair<double, double>> brackets;     // [a, b] before each step
  std::vector<std::pair<double, double>> evaluations;  // (x, f(x)) in call order
};

/// Minimizes a unimodal f on [a, b] until b - a <= rel_width * (a + b) / 2.
inline GoldenSectionResult golden_section_minimize(const std::function<double(double)>& f, double a,
                                                   double b, double rel_width) {
  if (!(a < b)) throw ArgumentError(detail::concat("golden section bracket [", a, ", ", b, "] is empty"));
  GoldenSectionResult res;
  auto eval = [&](double x) {
    const double v = f(x);
    res.evaluations.emplace_back(x, v);
    return v;
  };
  double c = b - kInvGoldenRatio * (b - a);
  double d = a + kInvGoldenRatio * (b - a);
  double fc = eval(c);
  double fd = eval(d);
  while (b - a > rel_width * std::abs(a + b) / 2.0) {
    res.brackets.emplace_back(a, b);
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvGoldenRatio * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvGoldenRatio * (b - a);
      fd = eval(d);
    }
  }
  res.brackets.emplace_back(a, b);
  if (fc < fd) {
    res.x = c;
    res.fx = fc;
  } else {
    res.x = d;
    res.fx = fd;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Response curve
// ---------------------------------------------------------------------------

/// Monotone piecewise-linear map on [floor, 1] with uniformly spaced knots.
/// The end ordinates are pinned to the abscissae (curve(floor) = floor,
/// curve(1) = 1). Inputs outside the domain are clamped.
class PiecewiseLinearCurve {
public:
  PiecewiseLinearCurve() : PiecewiseLinearCurve(1e-3, 8) {}

  PiecewiseLinearCurve(double floor, int knots) {
    if (knots < 2) throw ArgumentError(detail::concat("curve needs at least 2 knots, got ", knots));
    if (!(floor > 0.0 && floor < 1.0)) throw ArgumentError("curve floor must lie in (0, 1)");
    xs_.resize(knots);
    for (int k = 0; k < knots; ++k) xs_[k] = floor + (1.0 - floor) * k / (knots - 1);
    xs_.back() = 1.0;
    ys_ = xs_;
  }

  PiecewiseLinearCurve(std::vector<double> xs, std::vector<double> ys)
      : xs_(std::move(xs)), ys_(std::move(ys)) {
    if (xs_.size() < 2 || xs_.size() != ys_.size()) throw ArgumentError("curve knot arrays mismatch");
    for (std::size_t k = 1; k < xs_.size(); ++k) {
      if (!(xs_[k] > xs_[k - 1])) throw ArgumentError("curve abscissae must increase");
    }
    if (!strictly_increasing()) throw ArgumentError("curve ordinates must strictly increase");
  }

  const std::vector<double>& xs() const { return xs_; }
  const std::vector<double>& ys() const { return ys_; }
  std::size_t knots() const { return xs_.size(); }

  /// Segment index and interpolation weight of v (clamped to the domain).
  std::pair<std::size_t, double> locate(double v) const {
    v = std::clamp(v, xs_.front(), xs_.back());
    const double spacing = (xs_.back() - xs_.front()) / static_cast<double>(xs_.size() - 1);
    auto seg = static_cast<std::size_t>((v - xs_.front()) / spacing);
    seg = std::min(seg, xs_.size() - 2);
    // Uniform spacing is the default layout; fall back to search otherwise.
    if (v < xs_[seg] || v > xs_[seg + 1]) {
      seg = static_cast<std::size_t>(std::upper_bound(xs_.begin(), xs_.end(), v) - xs_.begin());
      seg = std::clamp<std::size_t>(seg, 1, xs_.size() - 1) - 1;
    }
    return {seg, (v - xs_[seg]) / (xs_[seg + 1] - xs_[seg])};
  }

  double operator()(double v) const {
    const auto [seg, w] = locate(v);
    return (1.0 - w) * ys_[seg] + w * ys_[seg + 1];
  }

  /// Curve extended past its domain: proportional below the first knot and
  /// with the last segment's slope above the final one.
  double extended(double v) const {
    if (v <= xs_.front()) return v * ys_.front() / xs_.front();
    if (v >= xs_.back()) return ys_.back() + last_slope() * (v - xs_.back());
    return (*this)(v);
  }

  /// Inverse of extended().
  double inverse_extended(double y) const {
    if (y <= ys_.front()) return y * xs_.front() / ys_.front();
    if (y >= ys_.back()) return xs_.back() + (y - ys_.back()) / last_slope();
    auto seg = static_cast<std::size_t>(std::upper_bound(ys_.begin(), ys_.end(), y) - ys_.begin());
    seg = std::clamp<std::size_t>(seg, 1, ys_.size() - 1) - 1;
    const double w = (y - ys_[seg]) / (ys_[seg + 1] - ys_[seg]);
    return xs_[seg] + w * (xs_[seg + 1] - xs_[seg]);
  }

  bool strictly_increasing() const {
    for (std::size_t k = 1; k < ys_.size(); ++k) {
      if (!(ys_[k] > ys_[k - 1])) return false;
    }
    return true;
  }

  /// Largest |curve(v) - ref(v)| over a dense grid of [lo, hi].
  double sup_distance(const std::function<double(double)>& ref, double lo, double hi,
                      int samples = 2001) const {
    double worst = 0.0;
    for (int i = 0; i < samples; ++i) {
      const double v = lo + (hi - lo) * i / (samples - 1);
      worst = std::max(worst, std::abs((*this)(v) - ref(v)));
    }
    return worst;
  }

  std::vector<double>& mutable_ys() { return ys_; }

  friend bool operator==(const PiecewiseLinearCurve&, const PiecewiseLinearCurve&) = default;

private:
  double last_slope() const {
    const std::size_t n = xs_.size();
    return (ys_[n - 1] - ys_[n - 2]) / (xs_[n - 1] - xs_[n - 2]);
  }

  std::vector<double> xs_;
  std::vector<double> ys_;
};

/// Event-pixel response, one monotone curve per polarity.
struct ResponseCurve {
  PiecewiseLinearCurve positive;
  PiecewiseLinearCurve negative;

  static ResponseCurve identity(double floor = 1e-3, int knots = 8) {
    return {PiecewiseLinearCurve(floor, knots), PiecewiseLinearCurve(floor, knots)};
  }
  const PiecewiseLinearCurve& for_polarity(int p) const { return p > 0 ? positive : negative; }

  /// Polarity-averaged curve.
  PiecewiseLinearCurve mean() const {
    std::vector<double> ys(positive.knots());
    for (std::size_t k = 0; k < ys.size(); ++k) ys[k] = 0.5 * (positive.ys()[k] + negative.ys()[k]);
    return {positive.xs(), std::move(ys)};
  }
};

/// Mid-exposure latent for an event pixel with response c.
///
/// Events track log c(I), so I(h) = c^-1(c(I_mid) * exp(theta * E(h))) and
/// the blur is the exposure mean of I(h). Solved per pixel for I_mid by
/// bisection on log c(I_mid). With the identity curve this is edi_deblur.
inline ImageBuffer edi_deblur_with_response(const ImageBuffer& blur, const EventStream& stream, Timestamp t_mid,
                                            Timestamp tau, const ThresholdConfig& thr, const EventLayout& layout,
                                            const PiecewiseLinearCurve& curve) {
  if (blur.domain() != Domain::Linear) {
    throw ArgumentError("edi_deblur_with_response expects a linear-domain blurry image");
  }
  detail::check_stream_matches(blur, stream);
  if (tau == 0) throw ArgumentError("exposure tau must be positive");
  const double tau_d = static_cast<double>(tau);
  const double mid = static_cast<double>(t_mid);
  const double lo = mid - tau_d / 2.0;
  const double hi = mid + tau_d / 2.0;
  ImageBuffer out = blur;
  const int channels = blur.channels();
  detail::for_each_row(blur.height(), [&](int y) {
    std::vector<std::pair<double, double>> pieces;  // (length / tau, exp(level))
    for (int x = 0; x < blur.width(); ++x) {
      auto ev = stream.pixel_events(x, y);
      auto first = detail::first_at_or_after(ev, lo);
      auto last = detail::first_at_or_after(ev, hi);
      if (first == last) continue;
      double level = 0.0;
      for (auto it = first; it != last && static_cast<double>(it->t) < mid; ++it) level -= thr.step(it->p);
      pieces.clear();
      double prev = lo;
      for (auto it = first; it != last; ++it) {
        const double te = static_cast<double>(it->t);
        pieces.emplace_back((te - prev) / tau_d, std::exp(level));
        level += thr.step(it->p);
        prev = te;
      }
      pieces.emplace_back((hi - prev) / tau_d, std::exp(level));
      auto mean_intensity = [&](double c_mid) {
        double sum = 0.0;
        for (const auto& [len, gain] : pieces) sum += len * curve.inverse_extended(c_mid * gain);
        return sum;
      };
      auto solve = [&](double b) {
        if (!(b > 0.0)) return 0.0;
        double a = curve.extended(b);
        double c = a;
        // Grow a bracket [a, c] around the root, then bisect in log space.
        while (mean_intensity(a) > b) a /= 2.0;
        while (mean_intensity(c) < b) c *= 2.0;
        for (int it = 0; it < 200 && c - a > 1e-15 * c; ++it) {
          const double m = std::sqrt(a * c);
          (mean_intensity(m) < b ? a : c) = m;
        }
        return curve.inverse_extended(std::sqrt(a * c));
      };
      if (channels == 1 || !layout.is_bayer()) {
        for (int ch = 0; ch < channels; ++ch) out(x, y, ch) = solve(blur(x, y, ch));
      } else {
        const int ch = static_cast<int>(channel_of(*layout.bayer, x, y));
        out(x, y, ch) = solve(blur(x, y, ch));
      }
    }
  });
  return out;
}

namespace detail {

/// Weighted least-squares isotonic (nondecreasing) fit, pool adjacent violators.
inline std::vector<double> isotonic_regression(const std::vector<double>& values,
                                               const std::vector<double>& weights) {
  struct Block {
    double mean;
    double weight;
    std::size_t count;
  };
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < values.size(); ++i) {
    blocks.push_back({values[i], weights[i], 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean > blocks.back().mean) {
      Block top = blocks.back();
      blocks.pop_back();
      Block& prev = blocks.back();
      const double w = prev.weight + top.weight;
      prev.mean = (prev.mean * prev.weight + top.mean * top.weight) / w;
      prev.weight = w;
      prev.count += top.count;
    }
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (const Block& b : blocks) out.insert(out.end(), b.count, b.mean);
  return out;
}

// Projects ordinates onto strictly increasing sequences with pinned ends.
inline void project_monotone(std::vector<double>& ys, double pinned_lo, double pinned_hi) {
  constexpr double kPinWeight = 1e12;
  std::vector<double> w(ys.size(), 1.0);
  ys.front() = pinned_lo;
  ys.back() = pinned_hi;
  w.front() = kPinWeight;
  w.back() = kPinWeight;
  ys = isotonic_regression(ys, w);
  ys.front() = pinned_lo;
  ys.back() = pinned_hi;
  const std::size_t n = ys.size();
  const double gap = (pinned_hi - pinned_lo) * 1e-6;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double max_here = pinned_hi - gap * static_cast<double>(n - 1 - k);
    ys[k] = std::clamp(ys[k], ys[k - 1] + gap, max_here);
  }
}

struct ResponseSample {
  double a = 0.0;       // intensity at the earlier view
  double b = 0.0;       // intensity at the later view
  double delta = 0.0;   // signed log change reported by events
  double weight = 1.0;
};

}  // namespace detail

struct ResponseFitOptions {
  int knots = 8;
  int max_sweeps = 200;
  double tolerance = 1e-8;
  std::size_t max_samples = 50000;
  std::uint64_t seed = 0;
  std::array<double, 3> channel_weights{0.4, 0.2, 0.4};  // R, G, B sites in Bayer mode
  int rounds = 30;                 // latent re-estimation rounds
  double round_tolerance = 1e-4;   // largest knot change that ends the rounds
};

struct ResponseFitReport {
  ResponseCurve curve;
  double objective_initial = 0.0;
  double objective_final = 0.0;
  int sweeps = 0;  // summed over rounds
  int rounds = 0;
  std::size_t samples_pos = 0;
  std::size_t samples_neg = 0;
};

namespace detail {

inline double response_objective(const PiecewiseLinearCurve& c, const std::vector<ResponseSample>& s) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& r : s) {
    const double e = std::log(c(r.b)) - std::log(c(r.a)) - r.delta;
    num += r.weight * e * e;
    den += r.weight;
  }
  return den > 0.0 ? num / den : 0.0;
}

inline int fit_curve(PiecewiseLinearCurve& curve, const std::vector<ResponseSample>& samples,
                     const ResponseFitOptions& opts, double& obj_initial, double& obj_final) {
  auto& ys = curve.mutable_ys();
  const std::size_t n = ys.size();
  const double lo = ys.front();
  const double hi = ys.back();
  double obj = response_objective(curve, samples);
  obj_initial = obj;
  int sweep = 0;
  for (; sweep < opts.max_sweeps; ++sweep) {
    const double before = obj;
    for (std::size_t k = 1; k + 1 < n; ++k) {
      // Gauss-Newton step on ordinate k with backtracking.
      double grad = 0.0;
      double hess = 0.0;
      for (const auto& r : samples) {
        const auto [sa, wa] = curve.locate(r.a);
        const auto [sb, wb] = curve.locate(r.b);
        const double ca = curve(r.a);
        const double cb = curve(r.b);
        auto basis = [k](std::size_t seg, double w) {
          if (seg == k) return 1.0 - w;
          if (seg + 1 == k) return w;
          return 0.0;
        };
        const double g = basis(sb, wb) / cb - basis(sa, wa) / ca;
        if (g == 0.0) continue;
        const double e = std::log(cb) - std::log(ca) - r.delta;
        grad += r.weight * e * g;
        hess += r.weight * g * g;
      }
      if (hess <= 0.0) continue;
      const double original = ys[k];
      double step = -grad / hess;
      bool accepted = false;
      for (int halving = 0; halving < 20; ++halving) {
        ys[k] = std::clamp(original + step, ys[k - 1] + (hi - lo) * 1e-6, ys[k + 1] - (hi - lo) * 1e-6);
        const double trial = response_objective(curve, samples);
        if (trial <= obj) {
          obj = trial;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) ys[k] = original;
    }
    project_monotone(ys, lo, hi);
    obj = response_objective(curve, samples);
    if (!curve.strictly_increasing()) {
      throw InternalError("response curve lost monotonicity after projection");
    }
    if (before - obj < opts.tolerance) {
      ++sweep;
      break;
    }
  }
  obj_final = obj;
  return sweep;
}

}  // namespace detail

struct ResponseSamples {
  std::vector<detail::ResponseSample> positive;
  std::vector<detail::ResponseSample> negative;
};

/// Residual samples for fit_response: one per (pixel, consecutive view pair)
/// with a nonzero event sum, thinned to at most max_samples by a seeded
/// fixed stride and split by the sign of the event sum.
inline ResponseSamples collect_response_samples(const CalibrationDataset& d, const ThresholdConfig& thr,
                                                const ResponseFitOptions& opts = {},
                                                const std::optional<PiecewiseLinearCurve>& curve = std::nullopt) {
  detail::check_calibration_pairs(d);
  const double floor = d.log_floor;
  std::vector<ImageBuffer> intensities;
  for (const auto& v : d.views) {
    ImageBuffer latent =
        curve ? edi_deblur_with_response(v.blur, d.events, v.t_mid, d.exposure_us, thr, d.layout, *curve)
              : edi_deblur(v.blur, d.events, v.t_mid, d.exposure_us, thr, d.layout);
    if (latent.channels() == 3) latent = luma_bt601(latent);
    intensities.push_back(std::move(latent));
  }
  const int w = d.events.width();
  const int h = d.events.height();

  std::vector<detail::ResponseSample> candidates;
  for (std::size_t i = 0; i + 1 < d.views.size(); ++i) {
    const AccumulatorImage acc = accumulate(d.events, d.views[i].t_mid, d.views[i + 1].t_mid, thr);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (acc(x, y) == 0.0) continue;
        double weight = 1.0;
        if (d.layout.is_bayer()) {
          weight = opts.channel_weights[static_cast<std::size_t>(channel_of(*d.layout.bayer, x, y))];
        }
        candidates.push_back({std::clamp(intensities[i](x, y), floor, 1.0),
                              std::clamp(intensities[i + 1](x, y), floor, 1.0), acc(x, y), weight});
      }
    }
  }

  ResponseSamples out;
  const std::size_t stride =
      candidates.size() > opts.max_samples ? (candidates.size() + opts.max_samples - 1) / opts.max_samples : 1;
  std::mt19937_64 rng(opts.seed);
  const std::size_t offset = stride > 1 ? rng() % stride : 0;
  for (std::size_t i = offset; i < candidates.size(); i += stride) {
    (candidates[i].delta > 0.0 ? out.positive : out.negative).push_back(candidates[i]);
  }
  return out;
}

/// Fits the per-polarity event-pixel response with a fixed threshold.
///
/// Each sample contributes the residual log c(I_next) - log c(I_prev) -
/// theta * E, where I are the double-integral latents at the two
/// mid-exposures (luma for color frames with monochrome events). Knot
/// ordinates are updated by coordinate-wise Gauss-Newton steps, followed by
/// an isotonic projection each sweep.
inline ResponseFitReport fit_response(const CalibrationDataset& d, const ThresholdConfig& thr,
                                      const ResponseFitOptions& opts = {}) {
  const double floor = d.log_floor;
  const std::size_t needed = static_cast<std::size_t>(10 * opts.knots);
  ResponseFitReport report;
  report.curve = ResponseCurve::identity(floor, opts.knots);
  std::optional<PiecewiseLinearCurve> latent_curve;
  for (int round = 0; round < std::max(1, opts.rounds); ++round) {
    const ResponseSamples samples = collect_response_samples(d, thr, opts, latent_curve);
    const auto& pos = samples.positive;
    const auto& neg = samples.negative;
    if (pos.size() < needed || neg.size() < needed) {
      throw ArgumentError(detail::concat("insufficient response samples: ", pos.size(), " positive and ",
                                         neg.size(), " negative, need at least ", needed, " each"));
    }
    double i_pos = 0, f_pos = 0, i_neg = 0, f_neg = 0;
    const int sp = detail::fit_curve(report.curve.positive, pos, opts, i_pos, f_pos);
    const int sn = detail::fit_curve(report.curve.negative, neg, opts, i_neg, f_neg);
    const double wp = static_cast<double>(pos.size());
    const double wn = static_cast<double>(neg.size());
    if (round == 0) report.objective_initial = (i_pos * wp + i_neg * wn) / (wp + wn);
    report.objective_final = (f_pos * wp + f_neg * wn) / (wp + wn);
    report.sweeps += std::max(sp, sn);
    report.samples_pos = pos.size();
    report.samples_neg = neg.size();
    report.rounds = round + 1;

    // Re-estimate the latents under the fitted response and refit until the
    // curve stops moving.
    PiecewiseLinearCurve next = report.curve.mean();
    const PiecewiseLinearCurve& prev = latent_curve ? *latent_curve : PiecewiseLinearCurve(floor, opts.knots);
    double change = 0.0;
    for (std::size_t k = 0; k < next.knots(); ++k) change = std::max(change, std::abs(next.ys()[k] - prev.ys()[k]));
    spdlog::debug("response round {}: objective {:.6g}, largest knot change {:.3g}", round + 1,
                  report.objective_final, change);
    latent_curve = std::move(next);
    if (change < opts.round_tolerance) break;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Threshold fit
// ---------------------------------------------------------------------------

struct ThresholdFitOptions {
  double lo = 0.05;
  double hi = 1.0;
  int coarse_points = 8;
  double rel_width = 1e-3;
  bool asymmetric = false;
};

struct CalibrationReport {
  double theta_hat = 0.0;
  std::optional<double> theta_neg_hat;  // only for asymmetric fits
  std::vector<std::pair<double, double>> trace;  // (theta, loss)
  double loss_at_hat = 0.0;
  double loss_min = 0.0;
  double loss_max = 0.0;
  std::size_t pairs = 0;
  bool identifiable = true;
  std::optional<ResponseFitReport> response;

  ThresholdConfig thresholds() const { return {theta_hat, theta_neg_hat.value_or(theta_hat)}; }
};

/// Chooses the threshold minimizing consistency_loss: an evenly spaced
/// coarse grid picks the sub-bracket around its best point, then
/// golden-section search refines it.
inline CalibrationReport fit_threshold(const CalibrationDataset& d, const ThresholdFitOptions& opts = {}) {
  if (!(opts.lo > 0.0) || !(opts.lo < opts.hi)) {
    throw ArgumentError(detail::concat("invalid threshold bracket [", opts.lo, ", ", opts.hi, "]"));
  }
  if (opts.coarse_points < 3) throw ArgumentError("coarse grid needs at least 3 points");
  detail::check_calibration_pairs(d);

  CalibrationReport report;
  report.pairs = d.views.size() - 1;
  auto loss = [&](double theta) {
    const double v = consistency_loss(theta, d);
    report.trace.emplace_back(theta, v);
    return v;
  };

  const int n = opts.coarse_points;
  std::vector<double> grid(n);
  std::size_t best = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    grid[i] = opts.lo + (opts.hi - opts.lo) * i / (n - 1);
    const double v = loss(grid[i]);
    if (v < best_loss) {
      best_loss = v;
      best = static_cast<std::size_t>(i);
    }
  }
  const double a = grid[best == 0 ? 0 : best - 1];
  const double b = grid[std::min<std::size_t>(best + 1, n - 1)];
  golden_section_minimize(loss, a, b, opts.rel_width);

  auto best_of = [](const std::vector<std::pair<double, double>>& t, std::size_t from) {
    std::size_t k = from;
    for (std::size_t i = from; i < t.size(); ++i) {
      if (t[i].second < t[k].second) k = i;
    }
    return t[k];
  };
  const auto [theta, value] = best_of(report.trace, 0);
  report.theta_hat = theta;
  report.loss_at_hat = value;

  if (opts.asymmetric) {
    // One coordinate pass: negative threshold with the positive one held.
    const std::size_t start = report.trace.size();
    auto loss_neg = [&](double neg) {
      const double v = consistency_loss(ThresholdConfig(report.theta_hat, neg), d);
      report.trace.emplace_back(neg, v);
      return v;
    };
    const double nlo = std::max(opts.lo, report.theta_hat / 2.0);
    const double nhi = std::min(opts.hi, report.theta_hat * 2.0);
    golden_section_minimize(loss_neg, nlo, nhi, opts.rel_width);
    const auto [neg, neg_value] = best_of(report.trace, start);
    if (neg_value < report.loss_at_hat) {
      report.theta_neg_hat = neg;
      report.loss_at_hat = neg_value;
    } else {
      report.theta_neg_hat = report.theta_hat;
    }
  }

  report.loss_min = report.loss_max = report.trace.front().second;
  for (const auto& [t, v] : report.trace) {
    report.loss_min = std::min(report.loss_min, v);
    report.loss_max = std::max(report.loss_max, v);
  }
  report.identifiable = (report.loss_max - report.loss_min) > 1e-12 * std::max(1.0, report.loss_max);
  if (!report.identifiable) spdlog::warn("loss flat, theta unidentifiable");
  return report;
}

inline Json calibration_report_to_json(const CalibrationReport& r) {
  Json j = Json::object();
  j["theta_hat"] = r.theta_hat;
  if (r.theta_neg_hat) j["theta_neg_hat"] = *r.theta_neg_hat;
  j["identifiable"] = r.identifiable;
  if (!r.identifiable) j["warning"] = "loss flat, theta unidentifiable";
  j["reference_theta_real_camera"] = kReferenceThetaRealCamera;
  j["reference_theta_synthetic"] = kReferenceThetaSynthetic;
  j["residuals"] = {{"pairs", r.pairs},
                    {"loss_at_theta_hat", r.loss_at_hat},
                    {"loss_min", r.loss_min},
                    {"loss_max", r.loss_max}};
  Json trace = Json::array();
  for (const auto& [t, v] : r.trace) trace.push_back(Json::array({t, v}));
  j["trace"] = std::move(trace);
  if (r.response) {
    const auto& rc = *r.response;
    j["response_model"] =
        "monotone piecewise-linear curve per polarity, fitted by constrained least squares; "
        "stands in for a learned event-camera response network";
    auto curve_json = [](const PiecewiseLinearCurve& c) {
      return Json{{"x", c.xs()}, {"y", c.ys()}};
    };
    j["response"] = {{"positive", curve_json(rc.curve.positive)},
                     {"negative", curve_json(rc.curve.negative)},
                     {"objective_initial", rc.objective_initial},
                     {"objective_final", rc.objective_final},
                     {"sweeps", rc.sweeps},
                     {"samples_positive", rc.samples_pos},
                     {"samples_negative", rc.samples_neg}};
  }
  return j;
}

}  // namespace evdi

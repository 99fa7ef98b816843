// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "evdi/common.hpp"

namespace evdi {

using Vec3 = std::array<double, 3>;

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion from_axis_angle(const Vec3& axis, double angle) {
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    if (n == 0.0) return {};
    const double s = std::sin(angle / 2.0) / n;
    return {std::cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s};
  }

  double dot(const Quaternion& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Quaternion normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
  }
  Quaternion operator-() const { return {-w, -x, -y, -z}; }

  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

/// Rotation angle in radians between two unit quaternions, sign-insensitive.
inline double angular_distance(const Quaternion& a, const Quaternion& b) {
  const double d = std::min(1.0, std::abs(a.dot(b)));
  return 2.0 * std::acos(d);
}

/// Constant-angular-velocity interpolation along the shorter arc.
inline Quaternion slerp(const Quaternion& q0, const Quaternion& q1, double s) {
  if (!(s >= 0.0 && s <= 1.0)) {
    throw ArgumentError(detail::concat("slerp parameter ", s, " outside [0, 1]"));
  }
  Quaternion b = q1;
  double cos_theta = q0.dot(q1);
  if (cos_theta < 0.0) {
    b = -q1;
    cos_theta = -cos_theta;
  }
  cos_theta = std::min(cos_theta, 1.0);
  const double theta = std::acos(cos_theta);
  double wa;
  double wb;
  if (theta < 1e-6) {
    // Nearly identical rotations: normalized lerp avoids 0/0.
    wa = 1.0 - s;
    wb = s;
  } else {
    const double sin_theta = std::sin(theta);
    wa = std::sin((1.0 - s) * theta) / sin_theta;
    wb = std::sin(s * theta) / sin_theta;
  }
  return Quaternion{wa * q0.w + wb * b.w, wa * q0.x + wb * b.x, wa * q0.y + wb * b.y,
                    wa * q0.z + wb * b.z}
      .normalized();
}

struct Pose {
  Timestamp t = 0;
  Vec3 translation{0.0, 0.0, 0.0};
  Quaternion rotation{};

  friend bool operator==(const Pose&, const Pose&) = default;
};

/// Time-sorted SE(3) samples.
class PoseTrack {
public:
  PoseTrack() = default;

  explicit PoseTrack(std::vector<Pose> poses) : poses_(std::move(poses)) {
    for (std::size_t i = 1; i < poses_.size(); ++i) {
      if (poses_[i].t <= poses_[i - 1].t) {
        throw ArgumentError(detail::concat("pose timestamps must strictly increase: pose ", i,
                                           " at ", poses_[i].t, " follows ", poses_[i - 1].t));
      }
    }
    for (std::size_t i = 0; i < poses_.size(); ++i) {
      if (std::abs(poses_[i].rotation.norm() - 1.0) > 1e-9) {
        throw ArgumentError(detail::concat("pose ", i, " rotation is not unit norm"));
      }
    }
  }

  const std::vector<Pose>& poses() const { return poses_; }
  std::size_t size() const { return poses_.size(); }
  bool empty() const { return poses_.empty(); }
  Timestamp begin_time() const { return poses_.front().t; }
  Timestamp end_time() const { return poses_.back().t; }

  friend bool operator==(const PoseTrack&, const PoseTrack&) = default;

private:
  std::vector<Pose> poses_;
};

/// Pose at time t: slerp for rotation, lerp for translation. No extrapolation.
inline Pose interpolate_pose(const PoseTrack& track, double t) {
  if (track.size() < 2) {
    throw ArgumentError(detail::concat("interpolation needs at least 2 poses, track has ",
                                       track.size()));
  }
  if (!(t >= static_cast<double>(track.begin_time()) && t <= static_cast<double>(track.end_time()))) {
    throw RangeError(detail::concat("time ", t, " outside pose track span [", track.begin_time(),
                                    ", ", track.end_time(), "]"));
  }
  const auto& poses = track.poses();
  auto hi = std::lower_bound(poses.begin(), poses.end(), t,
                             [](const Pose& p, double v) { return static_cast<double>(p.t) < v; });
  if (static_cast<double>(hi->t) == t) return *hi;
  const Pose& b = *hi;
  const Pose& a = *(hi - 1);
  const double s = (t - static_cast<double>(a.t)) / static_cast<double>(b.t - a.t);
  Pose out;
  out.t = static_cast<Timestamp>(std::llround(t));
  for (int i = 0; i < 3; ++i) {
    out.translation[i] = a.translation[i] + s * (b.translation[i] - a.translation[i]);
  }
  out.rotation = slerp(a.rotation, b.rotation, s);
  return out;
}

/// M poses at uniformly spaced times spanning the closed exposure interval,
/// endpoints included. For odd M the middle pose sits at t_mid.
inline std::vector<Pose> sample_exposure_poses(const PoseTrack& track, Timestamp t_mid,
                                               Timestamp tau, int m) {
  if (m < 2) throw ArgumentError(detail::concat("need at least 2 exposure poses, got ", m));
  const double lo = static_cast<double>(t_mid) - static_cast<double>(tau) / 2.0;
  const double hi = static_cast<double>(t_mid) + static_cast<double>(tau) / 2.0;
  if (track.size() < 2 || lo < static_cast<double>(track.begin_time()) ||
      hi > static_cast<double>(track.end_time())) {
    throw ArgumentError(detail::concat("exposure [", lo, ", ", hi, "] not inside pose track span"));
  }
  std::vector<Pose> out;
  out.reserve(m);
  for (int k = 0; k < m; ++k) {
    const double t = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(m - 1);
    out.push_back(interpolate_pose(track, t));
  }
  return out;
}

}  // namespace evdi
